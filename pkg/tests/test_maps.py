import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetlab.maps import (
    TWO_PI,
    Absorbed,
    CylinderPoint,
    DiskPoint,
    DomainEscape,
    NeverExits,
    NormalFormParams,
    circle_distance,
    eta,
    global_map_21,
    iterate_return_map,
    lambda_sequence,
    local_map_1,
    local_map_2,
    return_map,
    return_map_closed_form,
    return_map_xy,
    singular_limit_defect,
    singular_limit_report,
    standard_grid,
    wrap,
    write_orbit_csv,
)
from hetlab.model import ModelParams, derived_constants, spectral_from_model

S1 = spectral_from_model(ModelParams(omega=1.0))
S10 = spectral_from_model(ModelParams(omega=10.0))


def test_wrap_range():
    xs = np.array([-1e-300, -TWO_PI, 0.0, TWO_PI, 7.0, -7.0])
    w = wrap(xs)
    assert np.all((w >= 0) & (w < TWO_PI))
    assert wrap(-1e-300) == 0.0


def test_local_map_1_examples():
    q = local_map_1(S1, CylinderPoint(0.0, 1.0, "In(P1)"))
    assert (q.r, q.phi) == (1.0, 0.0)
    y = math.exp(-S1.E1 / S1.omega1)
    q = local_map_1(S1, CylinderPoint(0.0, y, "In(P1)"))
    assert q.r == pytest.approx(math.exp(-(S1.C1 / S1.E1) * S1.E1 / S1.omega1), rel=1e-14)
    assert q.phi == pytest.approx(1.0, abs=1e-14)


def test_local_map_1_winding_rate():
    ys = np.exp(-np.linspace(1, 30, 30))
    phis = [local_map_1(S1, CylinderPoint(0.0, y, "In(P1)")).phi for y in ys]
    lifted = np.unwrap(phis)
    rate = np.diff(lifted) / np.diff(np.log(ys))
    np.testing.assert_allclose(np.abs(rate), S1.omega1 / S1.E1, rtol=1e-9)
    with pytest.raises(NeverExits):
        local_map_1(S1, CylinderPoint(0.0, 0.0, "In(P1)"))


def test_local_map_2_examples():
    q = local_map_2(S1, DiskPoint(1.0, 0.0, "In(P2)"))
    assert (q.x, q.y) == (0.0, 1.0)
    r = math.exp(-S1.E2 / S1.omega2)
    q = local_map_2(S1, DiskPoint(r, 0.0, "In(P2)"))
    assert q.x == pytest.approx(1.0, abs=1e-14)
    assert q.y == pytest.approx(math.exp(-(S1.C2 / S1.E2) * S1.E2 / S1.omega2), rel=1e-14)


def test_eta_examples():
    q = eta(S1, CylinderPoint(0.0, 1.0, "In(P1)"))
    assert (q.x, q.y) == (0.0, 1.0)
    c = derived_constants(S1)
    q = eta(S1, CylinderPoint(0.0, 0.5, "In(P1)"))
    assert q.x == pytest.approx(wrap(2.46914 * math.log(2)), abs=1e-4)
    assert q.y == pytest.approx(0.5**c.delta, rel=1e-14)
    assert isinstance(eta(S1, CylinderPoint(1.0, 0.0)), Absorbed)


def test_eta_is_composition(rng):
    for _ in range(1000):
        x = rng.uniform(0, TWO_PI)
        y = rng.uniform(-1, 1)
        p = CylinderPoint(x, y, "In(P1)")
        direct = eta(S10, p)
        q = local_map_2(S10, local_map_1(S10, p))
        assert circle_distance(direct.x, q.x) <= 1e-12
        assert abs(direct.y - q.y) <= 1e-12
        assert math.copysign(1, direct.y) == math.copysign(1, y)


def test_global_map_examples():
    xi = 0.3
    nf = NormalFormParams(S1, xi=xi, lam=0.0)
    q = global_map_21(nf, CylinderPoint(1.0, 0.2))
    assert q.x == pytest.approx(1.3) and q.y == 0.2
    nf = NormalFormParams(S1, xi=0.0, lam=0.1)
    q = global_map_21(nf, CylinderPoint(math.pi / 2, 0.0))
    assert (q.x, q.y) == (math.pi / 2, 0.1)
    q = global_map_21(NormalFormParams(S1, xi=xi, lam=0.7), CylinderPoint(0.0, 0.0))
    assert (q.x, q.y) == (xi, 0.0)
    with pytest.raises(DomainEscape):
        global_map_21(NormalFormParams(S1, lam=0.5), CylinderPoint(math.pi / 2, 0.9))


def test_return_map_lambda_zero():
    nf = NormalFormParams(S1, xi=0.2, lam=0.0)
    c = derived_constants(S1)
    q = return_map(nf, CylinderPoint(1.0, 0.3))
    assert circle_distance(q.x, 1.0 + 0.2 - c.K_omega * math.log(0.3)) <= 1e-14
    assert q.y == pytest.approx(0.3**c.delta, rel=1e-14)
    assert isinstance(return_map(nf, CylinderPoint(1.0, 0.0)), Absorbed)
    assert isinstance(return_map(NormalFormParams(S1, lam=0.1), CylinderPoint(0.0, 0.0)), Absorbed)


def test_closed_form_matches_composition(rng):
    nf = NormalFormParams(S10, xi=0.4, lam=0.1, phi1=lambda x, y: np.cos(x) * y)
    x = rng.uniform(0, TWO_PI, 10_000)
    y = rng.uniform(-0.85, 0.85, 10_000)
    g1, g2 = return_map_closed_form(nf, x, y)
    c1, c2 = return_map_xy(nf, x, y)
    assert np.max(circle_distance(g1, c1)) <= 1e-12
    assert np.max(np.abs(g2 - c2)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, TWO_PI, exclude_max=True), y=st.floats(-0.85, 0.85))
def test_scalar_and_vector_return_maps_agree(x, y):
    nf = NormalFormParams(S10, xi=0.1, lam=0.1)
    out = return_map(nf, CylinderPoint(x, y))
    g1, g2 = return_map_xy(nf, np.array([x]), np.array([y]))
    if isinstance(out, Absorbed):
        assert np.isnan(g1[0])
    else:
        assert circle_distance(out.x, g1[0]) <= 1e-12 and abs(out.y - g2[0]) <= 1e-15


def test_second_component_contracts(rng):
    lam = 0.1
    nf = NormalFormParams(S10, lam=lam)
    c = derived_constants(S10)
    x = rng.uniform(0, TWO_PI, 1000)
    y = rng.uniform(-0.85, 0.85, 1000)
    _, g2 = return_map_xy(nf, x, y)
    ok = ~np.isnan(g2)
    assert np.all(np.abs(g2[ok]) <= (np.abs(y[ok]) + lam) ** c.delta + 1e-15)


def test_winding_of_eta():
    c = derived_constants(S1)
    for y0 in (1e-2, 1e-5, 1e-9):
        # lifted angle advance for y running from 1 down to y0
        ys = np.geomspace(1.0, y0, 20_000)
        lifted = -c.K_omega * np.log(ys)
        turns = (lifted[-1] - lifted[0]) / TWO_PI
        assert turns >= math.ceil(c.K_omega * abs(math.log(y0)) / TWO_PI) - 1
        xs = np.array([eta(S1, CylinderPoint(0.0, y, "In(P1)")).x for y in ys[::50]])
        assert np.count_nonzero(np.diff(xs) < -math.pi) >= math.floor(turns) - 1


def test_lambda_sequence():
    K = derived_constants(S10).K_omega
    for a in (0.0, 1.0, math.pi, 5.0):
        for n in range(1, 20):
            lam = lambda_sequence(K, n, a)
            assert circle_distance(wrap(-K * math.log(lam)), a) <= 1e-10
            assert lambda_sequence(K, n + 1, a) < lam
    assert lambda_sequence(TWO_PI, 1, 0.0) == pytest.approx(math.exp(-1))
    with pytest.warns(UserWarning):
        lambda_sequence(K, 1, 0.0, lambda0=1e-6)


def test_iterate_and_csv(tmp_path):
    nf = NormalFormParams(S10, lam=0.05)
    rows = iterate_return_map(nf, 1.0, 0.05, 20)
    assert rows[0][0] == 0 and len(rows) == 21
    write_orbit_csv(rows, tmp_path / "o.csv")
    with open(tmp_path / "o.csv") as fh:
        back = list(csv.reader(fh))
    assert back[0] == ["n", "x", "y", "absorbed"]
    assert float(back[5][1]) == rows[4][1]
    # absorbed orbit stops
    rows = iterate_return_map(NormalFormParams(S10, lam=0.0), 1.0, 0.0, 5)
    assert rows[-1][3] and len(rows) == 2


def test_validate_morse():
    NormalFormParams(S10).validate()
    with pytest.raises(ValueError):
        NormalFormParams(S10, phi2=lambda x, y: np.zeros_like(np.asarray(x, float))).validate()
    with pytest.raises(ValueError):
        NormalFormParams(S10, phi2=lambda x, y: np.sin(x) ** 3).validate()


def test_singular_limit_defect_decreases():
    nf = NormalFormParams(S10)
    K = nf.K_omega
    for a in (0.0, math.pi / 2, math.pi):
        d = [singular_limit_defect(nf, K, a, n)["defect"] for n in range(3, 13)]
        assert all(b < a_ for a_, b in zip(d, d[1:]))


def test_singular_limit_second_component_bound():
    nf = NormalFormParams(S10)
    X, Yb = standard_grid(nf)
    umax = np.max(np.abs(Yb + np.sin(X)))
    for lam in (1e-2, 1e-6, 1e-12):
        e = singular_limit_defect(nf, nf.K_omega, 0.0, 1, lam=lam)
        assert e["defect2"] <= lam ** (nf.delta - 1) * umax**nf.delta * (1 + 1e-12)
    # at lam = 1e-12 the second component is lam^(delta-1) * 2^delta, about 3.4e-6
    assert e["defect2"] == pytest.approx(1e-12 ** (nf.delta - 1) * umax**nf.delta, rel=1e-9)


def test_singular_limit_report(tmp_path):
    import json

    nf = NormalFormParams(S10)
    rep = singular_limit_report(nf, nf.K_omega, 0.5, range(3, 6))
    rep.write_json(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert set(d) == {"K_omega", "a", "entries"}
    assert [e["n"] for e in d["entries"]] == [3, 4, 5]
    assert {"lambda", "defect1", "defect2"} <= set(d["entries"][0])
