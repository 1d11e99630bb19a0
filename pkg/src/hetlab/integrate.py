"""Time integration of the example flow, its variational equations and events.

The workhorse is a compiled Dormand-Prince 5(4) pair with error control.  After
every accepted step the state may be projected back onto the unit sphere; the
pre-projection drift is recorded.  Accepted steps keep ``(t, x, x')`` so a cubic
Hermite interpolant is available for event refinement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from hetlab._jit import njit
from hetlab.model import ModelParams, as_state
from hetlab.model import field as _field
from hetlab.model import jacobian as _jacobian

__all__ = [
    "IntegrationError",
    "StepSizeUnderflow",
    "NonFiniteState",
    "FrameDegeneracyError",
    "EventRefinementError",
    "IntegratorConfig",
    "Trajectory",
    "SectionSpec",
    "SectionEvent",
    "VariationalTrajectory",
    "LyapunovResult",
    "solve",
    "integrate",
    "integrate_variational",
    "detect_crossings",
    "find_events",
    "flow_lyapunov",
    "ball_exit",
    "geodesic_distance",
    "DEFAULT_FRAME_SEED",
]

EVENT_TOL = 1e-9
MAX_BISECTIONS = 128
DEFAULT_FRAME_SEED = 20230203

_OK, _UNDERFLOW, _NONFINITE, _MAXSTEPS = 0, 1, 2, 3


class IntegrationError(RuntimeError):
    """Base class for failures of the time stepper."""


class StepSizeUnderflow(IntegrationError):
    def __init__(self, t: float, x: np.ndarray):
        super().__init__(f"step size underflow at t={t:.17g}, x={np.array2string(x[:4])}")
        self.t = t
        self.x = x


class NonFiniteState(IntegrationError):
    def __init__(self, t: float, x: np.ndarray):
        super().__init__(f"non-finite state at t={t:.17g}")
        self.t = t
        self.x = x


class FrameDegeneracyError(IntegrationError):
    pass


class EventRefinementError(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and step controls.

    ``fixed_step`` is the renormalisation interval of the tangent frame in
    Lyapunov runs.  Defaults are tighter than the 1e-3/1e-6 used for the
    published figures so that invariants can be asserted.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = 0.25
    fixed_step: float = 0.5
    renormalize_to_sphere: bool = True
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be > 0")
        if not (self.max_step > 0 and self.fixed_step > 0):
            raise ValueError("max_step and fixed_step must be > 0")


# ---------------------------------------------------------------------------
# compiled kernels

@njit(cache=True, nogil=True)
def variational_field(y, p):
    """Flow plus ``k`` tangent vectors stacked after the state: ``v' = Dg(x) v``."""
    x = y[:4]
    out = np.empty_like(y)
    out[:4] = _field(x, p)
    J = _jacobian(x, p)
    k = (y.shape[0] - 4) // 4
    for j in range(k):
        v = y[4 + 4 * j : 8 + 4 * j]
        for r in range(4):
            out[4 + 4 * j + r] = J[r, 0] * v[0] + J[r, 1] * v[1] + J[r, 2] * v[2] + J[r, 3] * v[3]
    return out


@njit(cache=True, nogil=True)
def _rhs(kind, y, p):
    # integer dispatch keeps the kernels cacheable across processes
    if kind == 0:
        return _field(y, p)
    return variational_field(y, p)


RHS_FIELD, RHS_VARIATIONAL = 0, 1


@njit(cache=True, nogil=True)
def _err_norm(err, y, ynew, rtol, atol):
    acc = 0.0
    n = y.shape[0]
    for i in range(n):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        e = err[i] / sc
        acc += e * e
    return math.sqrt(acc / n)


@njit(cache=True, nogil=True)
def _initial_step(kind, p, y0, f0, direction, rtol, atol, max_step):
    n = y0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, max_step)
    y1 = y0 + direction * h0 * f0
    f1 = _rhs(kind, y1, p)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max_step)


@njit(cache=True, nogil=True)
def _dopri(kind, p, y0, t0, t1, rtol, atol, max_step, h_init, nrenorm, store, max_steps):
    """Integrate ``y' = rhs(y, p)`` (``rhs`` selected by ``kind``) from ``t0`` to ``t1`` (either direction).

    Returns ``(ts, ys, fs, count, status, h_last, max_drift)``; with ``store``
    false only the two endpoints are kept.
    """
    n = y0.shape[0]
    direction = 1.0 if t1 >= t0 else -1.0
    cap = 1024 if store else 2
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    fs = np.empty((cap, n))

    y = y0.copy()
    t = t0
    f = _rhs(kind, y, p)
    ts[0] = t
    ys[0] = y
    fs[0] = f
    count = 1
    drift = 0.0
    if t1 == t0:
        return ts[:1], ys[:1], fs[:1], 1, 0, h_init, drift

    for i in range(n):
        if not np.isfinite(y[i]):
            return ts[:1], ys[:1], fs[:1], 1, 2, h_init, drift

    h = h_init
    if h <= 0.0:
        h = _initial_step(kind, p, y, f, direction, rtol, atol, max_step)
    h = min(h, max_step)

    steps = 0
    status = 0
    while True:
        remaining = (t1 - t) * direction
        if remaining <= 0.0:
            break
        h_min = 16.0 * 2.220446049250313e-16 * max(abs(t), 1.0)
        last = False
        if h >= remaining:
            h = remaining
            last = True
        if h < h_min and not last:
            status = 1
            break
        if steps >= max_steps:
            status = 3
            break
        steps += 1
        hs = h * direction
        k1 = f
        k2 = _rhs(kind, y + hs * (0.2 * k1), p)
        k3 = _rhs(kind, y + hs * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2), p)
        k4 = _rhs(kind, y + hs * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3), p)
        k5 = _rhs(kind, 
            y
            + hs
            * (
                19372.0 / 6561.0 * k1
                - 25360.0 / 2187.0 * k2
                + 64448.0 / 6561.0 * k3
                - 212.0 / 729.0 * k4
            ),
            p,
        )
        k6 = _rhs(kind, 
            y
            + hs
            * (
                9017.0 / 3168.0 * k1
                - 355.0 / 33.0 * k2
                + 46732.0 / 5247.0 * k3
                + 49.0 / 176.0 * k4
                - 5103.0 / 18656.0 * k5
            ),
            p,
        )
        ynew = y + hs * (
            35.0 / 384.0 * k1
            + 500.0 / 1113.0 * k3
            + 125.0 / 192.0 * k4
            - 2187.0 / 6784.0 * k5
            + 11.0 / 84.0 * k6
        )
        k7 = _rhs(kind, ynew, p)
        err = hs * (
            71.0 / 57600.0 * k1
            - 71.0 / 16695.0 * k3
            + 71.0 / 1920.0 * k4
            - 17253.0 / 339200.0 * k5
            + 22.0 / 525.0 * k6
            - 1.0 / 40.0 * k7
        )
        en = _err_norm(err, y, ynew, rtol, atol)
        if not np.isfinite(en):
            h *= 0.25
            if h < h_min:
                status = 2
                break
            continue
        if en <= 1.0:
            t = t1 if last else t + hs
            if nrenorm > 0:
                nrm = 0.0
                for i in range(nrenorm):
                    nrm += ynew[i] * ynew[i]
                nrm = math.sqrt(nrm)
                dev = abs(nrm - 1.0)
                if dev > drift:
                    drift = dev
                for i in range(nrenorm):
                    ynew[i] /= nrm
                f = _rhs(kind, ynew, p)
            else:
                f = k7
            y = ynew
            if store:
                if count == cap:
                    cap *= 2
                    ts2 = np.empty(cap)
                    ys2 = np.empty((cap, n))
                    fs2 = np.empty((cap, n))
                    ts2[:count] = ts[:count]
                    ys2[:count] = ys[:count]
                    fs2[:count] = fs[:count]
                    ts, ys, fs = ts2, ys2, fs2
                ts[count] = t
                ys[count] = y
                fs[count] = f
                count += 1
            fac = 5.0 if en == 0.0 else min(5.0, 0.9 * en ** -0.2)
            h = min(h * fac, max_step)
        else:
            h = h * max(0.2, 0.9 * en ** -0.2)

    if not store:
        ts[1] = t
        ys[1] = y
        fs[1] = f
        count = 2
    return ts[:count], ys[:count], fs[:count], count, status, h, drift


@njit(cache=True, nogil=True)
def _lyapunov_kernel(kind, p, y0, k, t0, t_end, dt, transient, rtol, atol, max_step, nrenorm, max_steps):
    """Wolf-style exponents: integrate ``dt``, Gram-Schmidt, accumulate ``log R_jj``."""
    nseg = int(round((t_end - t0) / dt))
    sums = np.zeros(k)
    trace = np.empty((nseg, k + 1))
    y = y0.copy()
    t = t0
    h = 0.0
    drift = 0.0
    status = 0
    used = 0
    for s in range(nseg):
        t_next = t0 + (s + 1) * dt
        ts, ys, fs, cnt, status, h, d = _dopri(
            kind, p, y, t, t_next, rtol, atol, max_step, h, nrenorm, False, max_steps
        )
        if status != 0:
            break
        if d > drift:
            drift = d
        y = ys[cnt - 1].copy()
        t = t_next
        # modified Gram-Schmidt on the k tangent vectors
        for j in range(k):
            vj = y[4 + 4 * j : 8 + 4 * j]
            for i in range(j):
                vi = y[4 + 4 * i : 8 + 4 * i]
                dot = vi[0] * vj[0] + vi[1] * vj[1] + vi[2] * vj[2] + vi[3] * vj[3]
                for r in range(4):
                    vj[r] -= dot * vi[r]
            nrm = math.sqrt(vj[0] ** 2 + vj[1] ** 2 + vj[2] ** 2 + vj[3] ** 2)
            for r in range(4):
                vj[r] /= nrm
            if t > t0 + transient + 1e-12:
                sums[j] += math.log(nrm)
        trace[s, 0] = t
        span = t - t0 - transient
        for j in range(k):
            trace[s, j + 1] = sums[j] / span if span > 1e-12 else 0.0
        used = s + 1
    return sums, trace[:used], y, t, status, drift


# ---------------------------------------------------------------------------
# results

@dataclass(frozen=True)
class Trajectory:
    """Accepted steps of an integration: times, states and velocities."""

    t: np.ndarray
    x: np.ndarray
    dx: np.ndarray = field(repr=False)
    max_drift: float = 0.0

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]

    def interpolate(self, t: float) -> np.ndarray:
        """Cubic Hermite dense output at time ``t``."""
        i = int(np.searchsorted(self.t, t, side="right")) - 1
        i = min(max(i, 0), len(self.t) - 2)
        return _hermite(self.t[i], self.x[i], self.dx[i], self.t[i + 1], self.x[i + 1], self.dx[i + 1], t)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.t, self.x[:, :4]])
        np.savetxt(path, data, delimiter=",", header="t,x1,x2,x3,x4", comments="", fmt="%.17g")


@dataclass(frozen=True)
class SectionSpec:
    """A surface ``g(x) = 0`` crossed by the flow.

    ``kind="sphere"``: ``g`` is the geodesic distance from ``center`` minus
    ``radius`` (so ``direction="increasing"`` is an exit from the ball).
    ``kind="hyperplane"``: ``g = <normal, x> - offset``.
    """

    kind: Literal["sphere", "hyperplane"]
    center: tuple[float, ...] | None = None
    radius: float = 0.3
    normal: tuple[float, ...] | None = None
    offset: float = 0.0
    direction: Literal["increasing", "decreasing", "both"] = "both"
    section_id: str = ""

    def __post_init__(self):
        if self.kind == "sphere":
            if self.center is None:
                raise ValueError("sphere section needs a center")
            if not self.radius > 0:
                raise ValueError("sphere section radius must be > 0")
        elif self.kind == "hyperplane":
            if self.normal is None:
                raise ValueError("hyperplane section needs a normal")
        else:
            raise ValueError(f"unknown section kind {self.kind!r}")
        if self.direction not in ("increasing", "decreasing", "both"):
            raise ValueError(f"bad direction {self.direction!r}")

    def value(self, x: np.ndarray) -> np.ndarray:
        """Section function for a single state or an ``(m, n)`` stack."""
        x = np.asarray(x, dtype=float)
        if self.kind == "hyperplane":
            nrm = np.asarray(self.normal, dtype=float)
            return x[..., : nrm.shape[0]] @ nrm - self.offset
        c = np.asarray(self.center, dtype=float)
        return geodesic_distance(x[..., :4], c) - self.radius

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "hyperplane":
            g = np.zeros_like(x)
            nrm = np.asarray(self.normal, dtype=float)
            g[: nrm.shape[0]] = nrm
            return g
        # d/dx arccos(<u, c>) with u = x/|x|
        c = np.asarray(self.center, dtype=float)
        r = np.linalg.norm(x[:4])
        u = x[:4] / r
        cu = float(np.clip(u @ c, -1.0, 1.0))
        s = math.sqrt(max(1.0 - cu * cu, 1e-300))
        du = -(c - cu * u) / (r * s)
        g = np.zeros_like(x)
        g[:4] = du
        return g


@dataclass(frozen=True)
class SectionEvent:
    t: float
    x: np.ndarray
    section_id: str
    direction: Literal["increasing", "decreasing"]


@dataclass(frozen=True)
class VariationalTrajectory:
    """State and orthonormalised tangent frame sampled every ``fixed_step``.

    ``log_growth[i, j]`` is the accumulated log stretching of frame vector
    ``j`` up to ``t[i]`` (for ``k = 1`` it is ``log |v(t)|`` exactly).
    """

    t: np.ndarray
    x: np.ndarray
    frames: np.ndarray = field(repr=False)
    log_growth: np.ndarray

    @property
    def final_frame(self) -> np.ndarray:
        return self.frames[-1]


@dataclass(frozen=True)
class LyapunovResult:
    exponents: np.ndarray
    T: float
    step: float
    convergence_trace: np.ndarray = field(repr=False)
    transient: float = 0.0
    max_drift: float = 0.0

    def to_json(self) -> dict:
        return {
            "exponents": [float(v) for v in self.exponents],
            "T": float(self.T),
            "step": float(self.step),
            "transient": float(self.transient),
            "trace": self.convergence_trace.tolist(),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)


# ---------------------------------------------------------------------------
# drivers

def _raise_for_status(status: int, t: float, y: np.ndarray) -> None:
    if status == _OK:
        return
    if status == _UNDERFLOW:
        raise StepSizeUnderflow(t, y)
    if status == _NONFINITE:
        raise NonFiniteState(t, y)
    raise IntegrationError(f"maximum number of steps exceeded at t={t:.17g}")


def _rhs_kind(rhs) -> int:
    if rhs is _field or rhs == RHS_FIELD:
        return RHS_FIELD
    if rhs is variational_field or rhs == RHS_VARIATIONAL:
        return RHS_VARIATIONAL
    raise ValueError("rhs must be model.field or integrate.variational_field")


def solve(
    rhs,
    y0,
    t_span: tuple[float, float],
    p=None,
    cfg: IntegratorConfig | None = None,
    renormalize: int = 0,
) -> Trajectory:
    """Integrate ``y' = rhs(y, p)`` for one of the compiled right-hand sides.

    ``rhs`` is :func:`hetlab.model.field` or :func:`variational_field` (the
    kernels dispatch on it internally so their compiled code can be cached).

    ``renormalize`` is the number of leading components projected back onto
    the unit sphere after each accepted step (0 disables projection).
    """
    cfg = cfg or IntegratorConfig()
    y0 = np.ascontiguousarray(y0, dtype=float)
    p = np.zeros(1) if p is None else np.ascontiguousarray(p, dtype=float)
    t0, t1 = float(t_span[0]), float(t_span[1])
    ts, ys, fs, count, status, _, drift = _dopri(
        _rhs_kind(rhs), p, y0, t0, t1, cfg.rel_tol, cfg.abs_tol, cfg.max_step, 0.0,
        renormalize, True, cfg.max_steps,
    )
    _raise_for_status(status, ts[count - 1], ys[count - 1])
    return Trajectory(t=ts, x=ys, dx=fs, max_drift=drift)


def integrate(
    params: ModelParams,
    x0,
    t_span: tuple[float, float],
    cfg: IntegratorConfig | None = None,
) -> Trajectory:
    """Integrate the example flow from ``x0`` over ``t_span``.

    Starting points on the sphere stay there to ``1e-9`` when
    ``cfg.renormalize_to_sphere`` is set.  A ``t_span`` with ``t1 < t0``
    integrates backwards in time.
    """
    cfg = cfg or IntegratorConfig()
    x0 = as_state(x0)
    if t_span[1] == t_span[0]:
        raise ValueError("t_span must have t1 != t0")
    nr = 4 if (cfg.renormalize_to_sphere and abs(np.linalg.norm(x0) - 1.0) <= 1e-6) else 0
    if nr:
        x0 = x0 / np.linalg.norm(x0)
    return solve(_field, x0, t_span, params.as_array(), cfg, renormalize=nr)


def _frame_matrix(frame0, k_default: int | None = None) -> np.ndarray:
    V = np.asarray(frame0, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != 4 or not 1 <= V.shape[1] <= 4:
        raise ValueError(f"frame must be 4 x k with 1 <= k <= 4, got {V.shape}")
    s = np.linalg.svd(V, compute_uv=False)
    if s[-1] == 0.0 or s[0] / s[-1] > 1e12:
        raise FrameDegeneracyError("initial tangent frame is (numerically) degenerate")
    return V


def integrate_variational(
    params: ModelParams,
    x0,
    frame0,
    t_span: tuple[float, float],
    cfg: IntegratorConfig | None = None,
) -> VariationalTrajectory:
    """Flow plus tangent frame, re-orthonormalised every ``cfg.fixed_step``.

    The frame columns are propagated by ``v' = Dg(x) v``; at each
    renormalisation the QR factor's diagonal logs are accumulated.
    """
    cfg = cfg or IntegratorConfig()
    x0 = as_state(x0)
    V = _frame_matrix(frame0)
    k = V.shape[1]
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 < t0:
        raise ValueError("t_span must satisfy t1 >= t0")
    nr = 4 if (cfg.renormalize_to_sphere and abs(np.linalg.norm(x0) - 1.0) <= 1e-6) else 0
    p = params.as_array()
    y = np.concatenate([x0, V.T.ravel()])
    times = [t0]
    xs = [x0.copy()]
    frames = [V.copy()]
    logs = [np.zeros(k)]
    acc = np.zeros(k)
    t = t0
    h = 0.0
    while t1 - t > 1e-12 * max(1.0, abs(t1)):
        t_next = min(t + cfg.fixed_step, t1)
        ts, ys, _, cnt, status, h, _ = _dopri(
            RHS_VARIATIONAL, p, y, t, t_next, cfg.rel_tol, cfg.abs_tol,
            cfg.max_step, h, nr, False, cfg.max_steps,
        )
        _raise_for_status(status, ts[cnt - 1], ys[cnt - 1])
        y = ys[cnt - 1].copy()
        t = t_next
        W = y[4:].reshape(k, 4).T
        Q, R = np.linalg.qr(W)
        d = np.diag(R)
        sgn = np.where(d < 0, -1.0, 1.0)
        Q = Q * sgn
        d = np.abs(d)
        if d.min() <= 1e-12 * d.max():
            raise FrameDegeneracyError(f"tangent frame collapsed near t={t:.17g}")
        acc = acc + np.log(d)
        y[4:] = Q.T.ravel()
        times.append(t)
        xs.append(y[:4].copy())
        frames.append(Q.copy())
        logs.append(acc.copy())
    return VariationalTrajectory(
        t=np.array(times), x=np.array(xs), frames=np.array(frames), log_growth=np.array(logs)
    )


def default_frame(k: int, seed: int = DEFAULT_FRAME_SEED) -> np.ndarray:
    """Deterministic generic orthonormal 4 x k frame (avoids invariant subspaces)."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    return Q[:, :k]


def flow_lyapunov(
    params: ModelParams,
    x0,
    T: float,
    k: int = 1,
    cfg: IntegratorConfig | None = None,
    transient: float = 100.0,
    frame0=None,
) -> LyapunovResult:
    """Top-``k`` Lyapunov exponents of the flow along the orbit of ``x0``.

    Variational equations are integrated with Gram-Schmidt renormalisation
    every ``cfg.fixed_step``; growth during ``[0, transient]`` is discarded.
    """
    cfg = cfg or IntegratorConfig()
    if not 1 <= k <= 4:
        raise ValueError("k must be in 1..4")
    if not T > transient:
        raise ValueError("T must exceed the transient")
    x0 = as_state(x0)
    nr = 4 if (cfg.renormalize_to_sphere and abs(np.linalg.norm(x0) - 1.0) <= 1e-6) else 0
    if nr:
        x0 = x0 / np.linalg.norm(x0)
    V = default_frame(k) if frame0 is None else _frame_matrix(frame0)
    if V.shape[1] != k:
        raise ValueError("frame0 must have k columns")
    y0 = np.concatenate([x0, V.T.ravel()])
    sums, trace, y, t, status, drift = _lyapunov_kernel(
        RHS_VARIATIONAL, params.as_array(), y0, k, 0.0, float(T), cfg.fixed_step,
        float(transient), cfg.rel_tol, cfg.abs_tol, cfg.max_step, nr, cfg.max_steps,
    )
    _raise_for_status(status, t, y)
    span = t - transient
    exps = np.sort(sums / span)[::-1]
    return LyapunovResult(
        exponents=exps, T=float(T), step=cfg.fixed_step,
        convergence_trace=trace, transient=float(transient), max_drift=drift,
    )


# ---------------------------------------------------------------------------
# events

def geodesic_distance(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Great-circle distance on the unit sphere after normalising ``x``."""
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x, axis=-1)
    cos = np.clip((x @ c) / nrm, -1.0, 1.0)
    return np.arccos(cos)


def ball_exit(center, radius: float, section_id: str = "") -> SectionSpec:
    return SectionSpec(
        kind="sphere", center=tuple(float(v) for v in center), radius=radius,
        direction="increasing", section_id=section_id,
    )


def _hermite(t0, y0, f0, t1, y1, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    s2 = s * s
    s3 = s2 * s
    return (
        (2 * s3 - 3 * s2 + 1) * y0
        + (s3 - 2 * s2 + s) * h * f0
        + (-2 * s3 + 3 * s2) * y1
        + (s3 - s2) * h * f1
    )


def _refine(traj: Trajectory, i: int, sec: SectionSpec, rising: bool) -> tuple[float, np.ndarray]:
    ta, tb = traj.t[i], traj.t[i + 1]
    args = (traj.t[i], traj.x[i], traj.dx[i], traj.t[i + 1], traj.x[i + 1], traj.dx[i + 1])
    lo, hi = ta, tb  # g(lo) on the "before" side
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        xm = _hermite(*args, mid)
        gm = float(sec.value(xm))
        if abs(gm) <= EVENT_TOL:
            return mid, xm
        if (gm < 0) == rising:
            lo = mid
        else:
            hi = mid
        if hi == lo:
            break
    raise EventRefinementError(
        f"event on section {sec.section_id!r} not refined in [{ta:.17g}, {tb:.17g}]"
    )


def _event_state(sec: SectionSpec, x: np.ndarray) -> np.ndarray:
    if sec.kind == "sphere":
        x = x.copy()
        x[:4] = x[:4] / np.linalg.norm(x[:4])
    return x


def find_events(
    traj: Trajectory,
    sections: Sequence[SectionSpec],
    include_start: bool = True,
) -> list[SectionEvent]:
    """Sign changes of each section function across accepted steps.

    A start point lying on a section (``|g| <= 1e-9``) yields one event at
    ``t0`` whose direction is the sign of ``dg/dt`` there.
    """
    if not sections:
        raise ValueError("at least one section is required")
    events: list[SectionEvent] = []
    for sec in sections:
        g = np.asarray(sec.value(traj.x), dtype=float)
        if g.shape[0] < 1:
            continue
        if include_start and abs(g[0]) <= EVENT_TOL:
            rate = float(sec.gradient(traj.x[0]) @ traj.dx[0])
            d = "increasing" if rate > 0 else "decreasing"
            if rate != 0.0 and sec.direction in ("both", d):
                events.append(SectionEvent(float(traj.t[0]), _event_state(sec, traj.x[0]), sec.section_id, d))
            # treat the start as already on the side it is moving into
            g = g.copy()
            g[0] = math.copysign(EVENT_TOL * 0.5, rate) if rate != 0.0 else g[0]
        g0, g1 = g[:-1], g[1:]
        if sec.direction in ("increasing", "both"):
            for i in np.flatnonzero((g0 < 0) & (g1 >= 0)):
                t, x = _refine_or_endpoint(traj, int(i), sec, True, g)
                events.append(SectionEvent(t, _event_state(sec, x), sec.section_id, "increasing"))
        if sec.direction in ("decreasing", "both"):
            for i in np.flatnonzero((g0 > 0) & (g1 <= 0)):
                t, x = _refine_or_endpoint(traj, int(i), sec, False, g)
                events.append(SectionEvent(t, _event_state(sec, x), sec.section_id, "decreasing"))
    events.sort(key=lambda e: e.t)
    return events


def _refine_or_endpoint(traj, i, sec, rising, g):
    if abs(g[i + 1]) <= EVENT_TOL:
        return float(traj.t[i + 1]), traj.x[i + 1].copy()
    if abs(g[i]) <= EVENT_TOL:
        return float(traj.t[i]), traj.x[i].copy()
    t, x = _refine(traj, i, sec, rising)
    return float(t), x


def detect_crossings(
    params: ModelParams,
    x0,
    t_span: tuple[float, float],
    sections: Sequence[SectionSpec],
    cfg: IntegratorConfig | None = None,
) -> list[SectionEvent]:
    """Integrate and return refined section crossings sorted by time."""
    if not sections:
        raise ValueError("at least one section is required")
    traj = integrate(params, x0, t_span, cfg)
    return find_events(traj, sections)
