import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetlab.circlemap import (
    SINE,
    CircleMapParams,
    OrbitTruncated,
    Phi2Profile,
    SingularityError,
    critical_orbit_stats,
    cover_intervals,
    delta_membership,
    derivative_sandwich,
    expansion_check,
    geometric_sum,
    growth_ledger,
    h,
    h_derivatives,
    h_lift,
    interval_image_length,
    iterate_interval_with_deletion,
    map_lyapunov,
    member_phases,
    membership_array,
    sets_C_S,
    sweep_delta,
    true_critical_points,
)
from hetlab.maps import TWO_PI, circle_distance, wrap


def P(K, a=0.0, xi=0.0, **kw):
    return CircleMapParams(K, a, xi, **kw)


def test_h_examples():
    for a in (0.0, 1.0, 6.0):
        assert h(P(7.0, a), math.pi / 2) == pytest.approx(wrap(math.pi / 2 + a), abs=1e-15)
    assert h(P(10.0), math.pi / 6) == pytest.approx(wrap(math.pi / 6 + 10 * math.log(2)), abs=1e-13)
    with pytest.raises(SingularityError):
        h(P(10.0), 0.0)
    with pytest.raises(SingularityError):
        h(P(10.0), math.pi)
    assert h_lift(P(10.0), math.pi / 6) == pytest.approx(math.pi / 6 + 10 * math.log(2), abs=1e-13)


def test_derivative_examples():
    assert h_derivatives(P(10.0), math.pi / 2)[0] == pytest.approx(1.0, abs=1e-14)
    assert h_derivatives(P(10.0), math.pi / 4)[0] == pytest.approx(-9.0, abs=1e-13)


@pytest.mark.parametrize("K", [10.0, 1e3])
def test_derivatives_match_finite_differences(K, rng):
    p = P(K, 0.3)
    xs = rng.uniform(0, TWO_PI, 1000)
    xs = xs[np.minimum(np.abs(np.sin(xs)), 1.0) > 1e-2]
    step = 1e-7
    for x in xs:
        d1, d2 = h_derivatives(p, x)
        fd1 = (h_lift(p, x + step) - h_lift(p, x - step)) / (2 * step)
        assert fd1 == pytest.approx(d1, rel=1e-6, abs=1e-6)
        fd2 = (h_derivatives(p, x + step)[0] - h_derivatives(p, x - step)[0]) / (2 * step)
        assert fd2 == pytest.approx(d2, rel=1e-5, abs=1e-5)


def test_sets_default_and_scaled():
    C, S = sets_C_S(P(10.0))
    assert C == pytest.approx((math.pi / 2, 3 * math.pi / 2)) and S == pytest.approx((0.0, math.pi))
    numeric = Phi2Profile(f=lambda x: 2 * np.sin(x), df=lambda x: 2 * np.cos(x), d2f=lambda x: -2 * np.sin(x))
    C2, S2 = sets_C_S(numeric)
    assert np.allclose(C2, C, atol=1e-12) and np.allclose(S2, S, atol=1e-12)
    assert sets_C_S(SINE.scaled(2.0)) == (C, S)


def test_sets_sin2x_and_degenerate():
    prof = Phi2Profile(f=lambda x: np.sin(2 * x), df=lambda x: 2 * np.cos(2 * x), d2f=lambda x: -4 * np.sin(2 * x))
    C, S = sets_C_S(prof)
    assert len(C) == 4 and len(S) == 4
    np.testing.assert_allclose(S, [0, math.pi / 2, math.pi, 3 * math.pi / 2], atol=1e-12)
    bad = Phi2Profile(f=lambda x: np.sin(x) ** 3, df=lambda x: 3 * np.sin(x) ** 2 * np.cos(x), d2f=lambda x: 0 * x)
    with pytest.raises(ValueError):
        sets_C_S(bad)


def test_true_critical_points():
    r = true_critical_points(P(10.0))
    # K cos x = sin x  <=>  tan x = K
    assert r[0] == pytest.approx(math.atan(10.0), abs=1e-12)
    assert r[1] == pytest.approx(math.pi + math.atan(10.0), abs=1e-12)
    for K in (1e2, 1e3, 1e4):
        r = true_critical_points(P(K))
        assert circle_distance(r[0], math.pi / 2) <= 2 / K and circle_distance(r[1], 3 * math.pi / 2) <= 2 / K
        for x in r:
            assert abs(h_derivatives(P(K), x)[0]) <= 1e-8
    with pytest.raises(ValueError):
        true_critical_points(P(0.1))


def test_sandwich():
    res = derivative_sandwich(P(100.0))
    assert res.window_radius == pytest.approx(0.1)
    assert 1.0 <= res.K0 <= 10.0
    # |h'| dist(x, S) stays of order K as x -> 0+
    xs = np.geomspace(1e-2, 1e-10, 9)
    vals = np.array([abs(h_derivatives(P(100.0), x)[0]) * x for x in xs])
    assert np.all(vals > 100.0 / res.K0) and np.all(vals < 100.0 * res.K0)
    assert abs(h_derivatives(P(100.0), math.pi / 2)[0]) == pytest.approx(1.0, abs=1e-13)


def test_monotone_branches():
    p = P(50.0, 0.7)
    tc = sorted(true_critical_points(p))
    edges = sorted([0.0, math.pi, *tc, TWO_PI])
    for lo, hi in zip(edges, edges[1:]):
        xs = np.linspace(lo, hi, 1002)[1:-1]
        signs = np.sign([h_derivatives(p, x)[0] for x in xs])
        assert np.all(signs == signs[0])


def test_critical_orbit_stats():
    p = P(200.0, 1.234)
    st = critical_orbit_stats(p, math.pi / 2, 10, K0=2.0)
    c0 = st.c_n[0]
    assert c0 == pytest.approx(h(p, math.pi / 2))
    assert st.Jn[1] == pytest.approx(abs(h_derivatives(p, c0)[0]), rel=1e-14)
    assert st.xi_small == pytest.approx(200.0 ** (-1 / 6))
    assert st.log_D[0] == math.inf
    assert not st.truncated


def test_log_space_matches_direct_product():
    p = P(50.0, 0.9)
    st = critical_orbit_stats(p, math.pi / 2, 15, K0=2.0)
    direct = 1.0
    for n in range(1, 16):
        direct *= abs(h_derivatives(p, st.c_n[n - 1])[0])
        assert math.exp(st.logJ[n]) == pytest.approx(direct, rel=1e-9)


def test_D_decreasing_for_member_phase():
    N, phases = member_phases(200.0, 10_000, min_count=1, N_max=10)
    assert N >= 1
    st = critical_orbit_stats(P(200.0, float(phases[0])), math.pi / 2, N, K0=2.0)
    D = st.log_D[1:]
    assert np.all(np.isfinite(D)) and np.all(np.diff(D) < 0)


def test_membership_basics():
    p = P(1e4, 0.3)
    assert delta_membership(p, 0) is True
    a = np.linspace(0, TWO_PI, 2000, endpoint=False)
    for N in range(1, 8):
        deeper = membership_array(p, a, N + 1)
        assert np.all(membership_array(p, a, N)[deeper])


def test_membership_singular_image():
    # h_a(pi/2) = pi/2 + a, so a = pi/2 sends the critical point onto S
    p = P(100.0, math.pi / 2)
    with pytest.raises(SingularityError):
        h(p, h(p, math.pi / 2))
    assert delta_membership(p, 1) is False
    assert not membership_array(p, np.array([math.pi / 2]), 3)[0]


def test_sweep_nonincreasing_in_N():
    prev = math.inf
    for N in (1, 2, 4, 8):
        m = sweep_delta(1e3, N, 2000).measure_estimate
        assert m <= prev
        prev = m


def test_sweep_threads_identical():
    r1 = sweep_delta(1e3, 3, 5000, threads=1)
    r4 = sweep_delta(1e3, 3, 5000, threads=4)
    assert np.array_equal(r1.members, r4.members)


def test_sweep_grid_refinement():
    a = sweep_delta(1e4, 3, 1000).measure_estimate
    b = sweep_delta(1e4, 3, 10_000).measure_estimate
    assert abs(a - b) <= 10 * TWO_PI / 1000


def test_sweep_export(tmp_path):
    import json

    r = sweep_delta(1e3, 2, 1000)
    r.write(tmp_path / "s.csv", tmp_path / "s.json")
    d = json.loads((tmp_path / "s.json").read_text())
    assert set(d) >= {"K_omega", "N", "measure_estimate", "bound"}
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "a,member"


def test_expansion_and_map_lyapunov():
    N, phases = member_phases(1e4)
    p = P(1e4, float(phases[0]))
    tab = expansion_check(p, 30)
    assert tab.rows[0]["n"] == 1
    x0 = h(p, math.pi / 2)
    assert tab.rows[0]["log_derivative"] == pytest.approx(math.log(abs(h_derivatives(p, x0)[0])))
    assert map_lyapunov(p, x0, 30) == tab.final_log_average(math.pi / 2)
    assert map_lyapunov(p, x0, 30) >= math.log(1e4) / 1000


def test_map_lyapunov_rotation_limit():
    assert abs(map_lyapunov(P(1e-9, 0.5), 1.0, 200)) < 1e-6


def test_map_lyapunov_truncation():
    with pytest.raises(OrbitTruncated):
        map_lyapunov(P(10.0), math.pi, 5)


def test_cover_intervals():
    p = P(10.0)
    cv = cover_intervals(p, math.pi, 4)
    assert np.all(cv.residuals <= 1e-10)
    assert np.all(np.diff(cv.c_seq) > 0) and np.all(cv.c_seq < math.pi)
    assert np.all(np.diff(cv.d_seq) < 0) and np.all(cv.d_seq > math.pi)
    lc, ld = cv.branch_image_lengths(p)
    np.testing.assert_allclose(lc, TWO_PI, atol=1e-10)
    np.testing.assert_allclose(ld, TWO_PI, atol=1e-10)
    # c_1 solves x - 10 ln sin x = 2 pi
    x = cv.c_seq[0]
    assert abs(x - 10 * math.log(math.sin(x)) - TWO_PI) <= 1e-10


def test_cover_intervals_errors():
    with pytest.raises(ValueError, match="least admissible n is"):
        cover_intervals(P(10.0, a=TWO_PI * 3), math.pi, 3)
    with pytest.raises(ValueError):
        cover_intervals(P(10.0), 1.0, 3)


def test_deletion_immediate_cover():
    rec = iterate_interval_with_deletion(P(1e4), (1.0, 2.2))
    assert rec.N2 == 0 and rec.covered_component[0] == "C"


def test_deletion_reaches_cover():
    N, phases = member_phases(1e4)
    rec = iterate_interval_with_deletion(P(1e4, float(phases[0])), (1.0, 1.001))
    assert rec.N2 is not None and rec.N2 <= 50
    assert all(s <= 2 for s in rec.deleted_segments)
    assert all(m <= 4 * rec.xi_del + 1e-15 for m in rec.deleted_measure)


def test_deletion_all_removed():
    with pytest.raises(ValueError):
        iterate_interval_with_deletion(P(10.0), (1.5, 1.6), xi_del=0.2)


def test_geometric_sum():
    for a in (1.5, 10.0, 1e4 ** (5 / 6)):
        d, c, b = geometric_sum(a, 20)
        assert d == pytest.approx(c, rel=1e-12) and c <= b


def test_growth_ledger():
    N, phases = member_phases(1e4)
    p = P(1e4, float(phases[0]))
    g = growth_ledger(p, 20)
    assert g.covers_circle
    assert g.tec_all_hold
    assert np.isfinite(g.log_JD)


def test_interval_image_length_small_offsets():
    # for a tiny interval the image length is |h'| times the width
    p = P(100.0, 0.2)
    x = 1.0
    L = interval_image_length(p, x, 0.0, 1e-30, 1)
    assert L == pytest.approx(abs(h_derivatives(p, x)[0]) * 1e-30, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.01, math.pi - 0.01), e=st.floats(-1e-3, 1e-3))
def test_offset_step_is_lifted_difference(x, e):
    p = P(30.0, 0.4)
    direct = h_lift(p, x + e) - h_lift(p, x)
    via = interval_image_length(p, x, 0.0, e, 1)
    assert via == pytest.approx(abs(direct), rel=1e-6, abs=1e-9)
