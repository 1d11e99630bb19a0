import math

import numpy as np
import pytest

from hetlab.integrate import (
    FrameDegeneracyError,
    IntegratorConfig,
    SectionSpec,
    Trajectory,
    ball_exit,
    detect_crossings,
    find_events,
    flow_lyapunov,
    integrate,
    integrate_variational,
)
from hetlab.model import P1, ModelParams, eval_jacobian
from conftest import random_unit

BASE = ModelParams(omega=1.0, alpha=1.0, beta=-0.1, lam=0.1)
IC = np.array([0.01, 0.01, 0.01, 1.0]) / np.linalg.norm([0.01, 0.01, 0.01, 1.0])


def test_equilibrium_is_constant():
    tr = integrate(BASE, P1, (0.0, 50.0))
    assert np.all(tr.x == P1)


def test_invariant_circle():
    th = 0.7
    tr = integrate(BASE.replace(lam=0.9), [0, 0, math.sin(th), math.cos(th)], (0.0, 50.0))
    assert np.max(np.abs(tr.x[:, :2])) <= 1e-9


def test_norm_preserved():
    tr = integrate(BASE, IC, (0.0, 100.0))
    assert np.max(np.abs(np.linalg.norm(tr.x, axis=1) - 1.0)) <= 1e-9


def test_drift_before_projection(rng):
    for x0 in random_unit(rng, 20):
        tr = integrate(BASE, x0, (0.0, 500.0))
        assert tr.max_drift <= 1e-6


def test_z2_barrier_at_lambda_zero(rng):
    p0 = BASE.replace(lam=0.0, omega=10.0)
    for x0 in random_unit(rng, 10):
        tr = integrate(p0, x0, (0.0, 500.0))
        assert np.all(np.sign(tr.x[:, 2]) == np.sign(x0[2]))


def test_forward_backward():
    x0 = IC
    fw = integrate(BASE, x0, (0.0, 1.0), IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13))
    bw = integrate(BASE, fw.final, (1.0, 0.0), IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13))
    assert np.max(np.abs(bw.final - x0)) <= 1e-6
    assert bw.t[-1] == 0.0


def test_hermite_dense_output():
    tr = integrate(BASE, IC, (0.0, 10.0))
    fine = integrate(BASE, IC, (0.0, 3.3), IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14))
    np.testing.assert_allclose(tr.interpolate(3.3), fine.final, atol=1e-6)


def test_variational_eigenvector_growth():
    p = BASE
    mu = p.alpha + p.beta  # unstable eigenvalue at P1, eigenvector e3
    vt = integrate_variational(p, P1, np.array([0, 0, 1.0, 0]), (0.0, 10.0))
    growth = vt.log_growth[-1, 0]
    assert math.exp(growth) == pytest.approx(math.exp(mu * 10.0), rel=1e-3)


def test_variational_zero_time_keeps_frame():
    F = np.eye(4)
    vt = integrate_variational(BASE, IC, F, (2.0, 2.0))
    np.testing.assert_array_equal(vt.final_frame, F)


def test_liouville():
    dt = 0.05
    vt = integrate_variational(BASE, IC, np.eye(4), (0.0, dt), IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14))
    logdet = float(np.sum(vt.log_growth[-1]))
    # trace averaged over the short step with Simpson's rule
    xs = integrate(BASE, IC, (0.0, dt), IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14))
    tm = [np.trace(eval_jacobian(BASE, xs.interpolate(t))) for t in (0.0, dt / 2, dt)]
    expected = dt * (tm[0] + 4 * tm[1] + tm[2]) / 6
    assert logdet == pytest.approx(expected, rel=1e-4)


def test_degenerate_frame_rejected():
    with pytest.raises(FrameDegeneracyError):
        integrate_variational(BASE, IC, np.array([[1, 1], [0, 0], [0, 0], [0, 0]], float), (0.0, 1.0))


def _linear_trajectory(n=2000):
    # x' = A x with A = diag(1, -1, 0.5, 0): x1 = e^t crosses x1 = 2 at ln 2
    lam = np.array([1.0, -1.0, 0.5, 0.0])
    t = np.linspace(0.0, 2.0, n)
    x = np.exp(np.outer(t, lam))
    return Trajectory(t=t, x=x, dx=x * lam)


def test_linear_crossing_matches_closed_form():
    sec = SectionSpec(kind="hyperplane", normal=(1.0, 0, 0, 0), offset=2.0, direction="increasing")
    ev = find_events(_linear_trajectory(), [sec])
    assert len(ev) == 1
    assert ev[0].t == pytest.approx(math.log(2.0), abs=1e-8)


def test_no_crossing_gives_empty():
    sec = SectionSpec(kind="hyperplane", normal=(1.0, 0, 0, 0), offset=100.0)
    assert find_events(_linear_trajectory(), [sec]) == []


def test_boundary_start_reported_once():
    sec = SectionSpec(kind="hyperplane", normal=(1.0, 0, 0, 0), offset=1.0, direction="both")
    ev = find_events(_linear_trajectory(), [sec])
    assert len(ev) == 1 and ev[0].t == 0.0 and ev[0].direction == "increasing"


def test_events_ordered_and_on_section():
    secs = [
        SectionSpec(kind="sphere", center=tuple(P1), radius=0.3, direction="both", section_id="W1"),
        SectionSpec(kind="sphere", center=tuple(-P1), radius=0.3, direction="both", section_id="W2"),
    ]
    p = BASE.replace(omega=10.0)
    ev = detect_crossings(p, IC, (0.0, 300.0), secs)
    assert len(ev) >= 4
    ts = [e.t for e in ev]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    for e in ev:
        sec = secs[0] if e.section_id == "W1" else secs[1]
        assert abs(float(sec.value(e.x))) <= 1e-9


def test_ball_exit_direction():
    ev = detect_crossings(BASE.replace(omega=10.0), IC, (0.0, 100.0), [ball_exit(P1, 0.3, "P1")])
    assert ev and all(e.direction == "increasing" for e in ev)


def test_lyapunov_at_equilibrium():
    res = flow_lyapunov(BASE, P1, 200.0, k=1, transient=10.0)
    mu = max(np.linalg.eigvals(eval_jacobian(BASE, P1)).real)
    assert res.exponents[0] == pytest.approx(mu, rel=1e-2)


def test_lyapunov_sum_matches_trace_average():
    T, tr0 = 600.0, 100.0
    res = flow_lyapunov(BASE, IC, T, k=4, transient=tr0)
    tr = integrate(BASE, IC, (0.0, T))
    keep = tr.t >= tr0
    tt = tr.t[keep]
    traces = np.array([np.trace(eval_jacobian(BASE, x)) for x in tr.x[keep]])
    avg = np.trapezoid(traces, tt) / (tt[-1] - tt[0])
    assert float(np.sum(res.exponents)) == pytest.approx(avg, rel=5e-2)


def test_lyapunov_json_roundtrip(tmp_path):
    import json

    res = flow_lyapunov(BASE, IC, 150.0, k=2, transient=50.0)
    res.write_json(tmp_path / "l.json")
    d = json.loads((tmp_path / "l.json").read_text())
    assert set(d) >= {"exponents", "T", "step", "trace"}
    assert d["exponents"] == [float(v) for v in res.exponents]
