"""The singular circle map ``h_a(x) = x + xi + a - K ln|phi2(x)|``.

This is the rescaled limit of the return map along phase-locked sequences of
``lam``.  The module evaluates the map and its derivatives, locates critical
and singular sets, tracks the critical orbit in log-space, estimates the
parameter set ``Delta_N`` on a grid, and runs the interval-growth procedures
(covering sequences near a singularity, iteration with deletion of the
critical/singular neighbourhoods).

Products of derivatives along orbits span hundreds of orders of magnitude at
the twisting numbers of interest, so they are carried as sums of logs.
Intervals around a critical point whose width is far below machine epsilon are
iterated as offsets from the critical orbit with a cancellation-free
difference formula.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from hetlab.maps import TWO_PI, circle_distance, wrap

__all__ = [
    "SINGULAR_TOL",
    "SingularityError",
    "OrbitTruncated",
    "Phi2Profile",
    "SINE",
    "CircleMapParams",
    "h",
    "h_lift",
    "h_array",
    "h_derivatives",
    "sets_C_S",
    "true_critical_points",
    "SandwichResult",
    "derivative_sandwich",
    "CriticalOrbitStats",
    "critical_orbit_stats",
    "xi_small",
    "xi_of_n",
    "delta_membership",
    "membership_array",
    "ParamSweepResult",
    "sweep_delta",
    "ExpansionTable",
    "expansion_check",
    "map_lyapunov",
    "CoverIntervals",
    "cover_intervals",
    "DeletionRecord",
    "iterate_interval_with_deletion",
    "GrowthLedger",
    "growth_ledger",
    "geometric_sum",
    "interval_image_length",
    "member_phases",
]

SINGULAR_TOL = 1e-14
ROOT_TOL = 1e-12


class SingularityError(ArithmeticError):
    """Evaluation at (or within ``SINGULAR_TOL`` of) a zero of ``phi2``."""


class OrbitTruncated(SingularityError):
    """An orbit reached the singular set before the requested length."""

    def __init__(self, n: int, x: float):
        super().__init__(f"orbit hit the singular set at step {n} (x={x:.17g})")
        self.n = n
        self.x = x


def _sine_diff(x, e):
    # sin(x + e) - sin(x) without cancellation for tiny e
    return 2.0 * np.cos(x + 0.5 * e) * np.sin(0.5 * e)


@dataclass(frozen=True)
class Phi2Profile:
    """A Morse function on the circle with its first two derivatives.

    ``diff(x, e)`` should return ``f(x + e) - f(x)`` accurately for tiny
    ``e``; when omitted the naive difference is used.  ``C`` and ``S`` may be
    supplied in closed form, otherwise they are found numerically.
    """

    f: Callable
    df: Callable
    d2f: Callable
    diff: Callable | None = None
    C: tuple[float, ...] | None = None
    S: tuple[float, ...] | None = None
    name: str = "custom"

    def difference(self, x, e):
        if self.diff is not None:
            return self.diff(x, e)
        return self.f(np.asarray(x) + e) - self.f(x)

    def scaled(self, k: float) -> "Phi2Profile":
        """``k * f``; critical and zero sets are unchanged."""
        if k == 0:
            raise ValueError("scale factor must be nonzero")
        f, df, d2f, diff = self.f, self.df, self.d2f, self.diff
        return Phi2Profile(
            f=lambda x: k * f(x),
            df=lambda x: k * df(x),
            d2f=lambda x: k * d2f(x),
            diff=None if diff is None else (lambda x, e: k * diff(x, e)),
            C=self.C,
            S=self.S,
            name=f"{k:g}*{self.name}",
        )


SINE = Phi2Profile(
    f=np.sin,
    df=np.cos,
    d2f=lambda x: -np.sin(x),
    diff=_sine_diff,
    C=(0.5 * math.pi, 1.5 * math.pi),
    S=(0.0, math.pi),
    name="sin",
)


@dataclass(frozen=True)
class CircleMapParams:
    K_omega: float
    a: float = 0.0
    xi: float = 0.0
    profile: Phi2Profile = field(default=SINE, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.K_omega) and self.K_omega > 0):
            raise ValueError(f"K_omega must be finite and > 0, got {self.K_omega}")
        if not (math.isfinite(self.a) and math.isfinite(self.xi)):
            raise ValueError("a and xi must be finite")

    def with_a(self, a: float) -> "CircleMapParams":
        return CircleMapParams(self.K_omega, a, self.xi, self.profile)


def xi_small(K_omega: float) -> float:
    """Radius ``K**(-1/6)`` of the neighbourhoods excluded from ``Delta_n``."""
    return K_omega ** (-1.0 / 6.0)


def xi_of_n(K_omega: float, n) -> np.ndarray | float:
    return K_omega ** (-np.asarray(n, dtype=float) / 1e6)


# ---------------------------------------------------------------------------
# evaluation

def _check_regular(p: CircleMapParams, x: float) -> float:
    f = float(p.profile.f(x))
    if abs(f) <= SINGULAR_TOL:
        raise SingularityError(f"x={x:.17g} lies on the singular set (phi2={f:.3g})")
    return f


def h_lift(p: CircleMapParams, x: float) -> float:
    """Unreduced value ``x + xi + a - K ln|phi2(x)|`` (for winding counts)."""
    f = _check_regular(p, x)
    return x + p.xi + p.a - p.K_omega * math.log(abs(f))


def h(p: CircleMapParams, x: float) -> float:
    """``h_a(x)`` reduced to ``[0, 2 pi)``."""
    return wrap(h_lift(p, x))


def h_array(p: CircleMapParams, x, a=None) -> np.ndarray:
    """Vectorised reduced map; ``nan`` where ``x`` is singular.

    ``a`` may be an array broadcasting against ``x`` (used by the sweeps).
    """
    x = np.asarray(x, dtype=float)
    a = p.a if a is None else np.asarray(a, dtype=float)
    f = np.abs(p.profile.f(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = wrap(x + p.xi + a - p.K_omega * np.log(f))
    return np.where(f <= SINGULAR_TOL, np.nan, out)


def h_derivatives(p: CircleMapParams, x: float) -> tuple[float, float]:
    """``h' = 1 - K f'/f`` and ``h'' = -K (f'' f - f'^2) / f^2``."""
    f = _check_regular(p, x)
    df = float(p.profile.df(x))
    d2f = float(p.profile.d2f(x))
    return 1.0 - p.K_omega * df / f, -p.K_omega * (d2f * f - df * df) / (f * f)


def _hprime_array(p: CircleMapParams, x) -> np.ndarray:
    return 1.0 - p.K_omega * p.profile.df(x) / p.profile.f(x)


# ---------------------------------------------------------------------------
# critical and singular sets

def _roots(fun, grid: int = 4096) -> list[float]:
    xs = np.arange(grid + 1) * TWO_PI / grid
    v = np.asarray(fun(xs), dtype=float)
    roots = []
    for i in range(grid):
        if v[i] == 0.0:
            roots.append(float(xs[i]))
        elif v[i] * v[i + 1] < 0:
            roots.append(brentq(fun, xs[i], xs[i + 1], xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps))
    return sorted({round(wrap(r), 12) for r in roots})


def sets_C_S(p: CircleMapParams | Phi2Profile) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Critical set ``C`` (zeros of ``phi2'``) and singular set ``S`` (zeros of ``phi2``).

    Raises ``ValueError`` if the two sets meet (a degenerate zero).
    """
    prof = p.profile if isinstance(p, CircleMapParams) else p
    if prof.C is not None and prof.S is not None:
        return tuple(prof.C), tuple(prof.S)
    S = _roots(prof.f)
    C = _roots(prof.df)
    for s in S:
        if abs(float(prof.df(s))) < 1e-8:
            raise ValueError(f"phi2 has a degenerate zero at {s:.12g} (violates the Morse hypothesis)")
    if not S or not C:
        raise ValueError("phi2 must have zeros and critical points")
    return tuple(C), tuple(S)


def _dist_to(x, pts) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.min(np.stack([circle_distance(x, q) for q in pts]), axis=0)


def true_critical_points(p: CircleMapParams) -> tuple[float, ...]:
    """Zeros of ``h'``, i.e. solutions of ``K phi2' = phi2``, one near each point of ``C``.

    Each root is bracketed in a window of half-width ``dist(c, S)/2`` around
    ``c`` and polished to ``1e-12``.  A window without a sign change raises
    ``ValueError`` (``K`` too small for the critical point to persist).
    """
    C, S = sets_C_S(p)
    prof = p.profile

    def g(x):
        return float(prof.f(x)) - p.K_omega * float(prof.df(x))

    out = []
    for c in C:
        w = 0.5 * float(_dist_to(c, S))
        lo, hi = c - w, c + w
        if g(lo) * g(hi) > 0:
            raise ValueError(f"no zero of h' bracketed near c={c:.6g} for K_omega={p.K_omega:g}")
        out.append(wrap(brentq(g, lo, hi, xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps)))
    return tuple(out)


@dataclass(frozen=True)
class SandwichResult:
    K0: float
    window_radius: float
    samples_used: int
    lower_ratio: float
    upper_ratio: float


def derivative_sandwich(p: CircleMapParams, sample_count: int = 20000, window: float | None = None) -> SandwichResult:
    """Smallest ``K0 >= 1`` with ``(K/K0) q <= |h'| <= K K0 q``, ``q = dist(x,C)/dist(x,S)``.

    Points within ``window`` (default ``10/K``) of a true critical point, and
    the singular points themselves, are excluded.
    """
    C, S = sets_C_S(p)
    r = 10.0 / p.K_omega if window is None else window
    xs = (np.arange(sample_count) + 0.5) * TWO_PI / sample_count
    keep = np.abs(p.profile.f(xs)) > SINGULAR_TOL
    try:
        tc = true_critical_points(p)
        keep &= _dist_to(xs, tc) > r
    except ValueError:
        pass
    keep &= _dist_to(xs, C) > 0
    xs = xs[keep]
    ratio = np.abs(_hprime_array(p, xs)) * _dist_to(xs, S) / (p.K_omega * _dist_to(xs, C))
    lo, hi = float(ratio.min()), float(ratio.max())
    return SandwichResult(
        K0=max(1.0, hi, 1.0 / lo), window_radius=r, samples_used=int(xs.size), lower_ratio=lo, upper_ratio=hi
    )


# ---------------------------------------------------------------------------
# critical orbit

def _orbit(p: CircleMapParams, x0: float, n: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """``x0, h(x0), ...`` (n+1 points) with ``ln|h'|`` at the first n; truncated on S-hits."""
    xs = [wrap(x0)]
    logs = []
    for _ in range(n):
        x = xs[-1]
        try:
            d1, _ = h_derivatives(p, x)
            xn = h(p, x)
        except SingularityError:
            return np.array(xs), np.array(logs), True
        logs.append(math.log(abs(d1)))
        xs.append(xn)
    return np.array(xs), np.array(logs), False


@dataclass(frozen=True)
class CriticalOrbitStats:
    """Ledger along the orbit ``c_n = h^(n+1)(c)`` of a point ``c`` of ``C``.

    Index ``n`` runs over ``0..N``.  ``logJ[n] = ln J^n(c_0)``; ``d_n`` and
    ``D_n`` are also kept as logs (``D_0`` is ``+inf``).  ``In_offsets[n]``
    holds the endpoints of ``I_n(c)`` as offsets from ``c`` (they are far
    below the spacing of doubles near ``c``), ``nan`` for ``n < 2``.
    """

    c: float
    c_n: np.ndarray
    logJ: np.ndarray
    log_d: np.ndarray
    log_D: np.ndarray
    In_offsets: np.ndarray
    xi_small: float
    xi_of_n: np.ndarray
    K0: float
    truncated: bool

    @property
    def Jn(self) -> np.ndarray:
        return np.exp(self.logJ)

    @property
    def dn(self) -> np.ndarray:
        return np.exp(self.log_d)

    @property
    def Dn(self) -> np.ndarray:
        return np.exp(self.log_D)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "c_n", "logJ", "d_n", "D_n"])
            for n in range(self.c_n.size):
                w.writerow([n] + [f"{v:.17g}" for v in (self.c_n[n], self.logJ[n], self.dn[n], self.Dn[n])])


def critical_orbit_stats(p: CircleMapParams, c: float, N: int, K0: float | None = None) -> CriticalOrbitStats:
    C, S = sets_C_S(p)
    if K0 is None:
        K0 = derivative_sandwich(p).K0
    c0 = h(p, c)
    orb, logs, trunc = _orbit(p, c0, N)
    m = orb.size
    logJ = np.concatenate([[0.0], np.cumsum(logs)])[:m]
    with np.errstate(divide="ignore"):
        log_d = np.log(_dist_to(orb, C)) + np.log(_dist_to(orb, S)) - logJ
    # D_n = K^(-1/2) / sum_{i<n} 1/d_i
    acc = np.logaddexp.accumulate(-log_d)
    log_D = np.concatenate([[np.inf], -0.5 * math.log(p.K_omega) - acc[:-1]])
    In = np.full((m, 2), np.nan)
    scale = math.log(K0 * p.K_omega)
    for n in range(2, m):
        In[n, 0] = math.exp(0.5 * (log_D[n] - scale))
        In[n, 1] = math.exp(0.5 * (log_D[n - 1] - scale))
    return CriticalOrbitStats(
        c=float(c),
        c_n=orb,
        logJ=logJ,
        log_d=log_d,
        log_D=log_D,
        In_offsets=In,
        xi_small=xi_small(p.K_omega),
        xi_of_n=xi_of_n(p.K_omega, np.arange(m)),
        K0=K0,
        truncated=trunc,
    )


# ---------------------------------------------------------------------------
# the parameter set Delta_N

def membership_array(p: CircleMapParams, a, N: int, xi: float | None = None) -> np.ndarray:
    """Vectorised membership of the phases ``a`` in ``Delta_N``.

    ``a`` belongs when, for every ``c`` in ``C`` and ``i = 1..N``, the point
    ``h_a^(i+1)(c)`` stays farther than ``xi`` from ``C`` and ``S``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if N <= 0:
        return np.ones(a.shape, dtype=bool)
    C, S = sets_C_S(p)
    r = xi_small(p.K_omega) if xi is None else xi
    marks = tuple(C) + tuple(S)
    ok = np.ones(a.shape, dtype=bool)
    for c in C:
        x = np.full(a.shape, c)
        for step in range(1, N + 2):
            x = h_array(p, x, a)
            if step >= 2:
                with np.errstate(invalid="ignore"):
                    ok &= _dist_to(x, marks) > r
            ok &= np.isfinite(x)
            # a nan stays nan, so failed entries cannot come back
    return ok


def delta_membership(p: CircleMapParams, N: int, xi: float | None = None) -> bool:
    return bool(membership_array(p, [p.a], N, xi)[0])


@dataclass(frozen=True)
class ParamSweepResult:
    K_omega: float
    N: int
    grid_size: int
    a: np.ndarray = field(repr=False)
    members: np.ndarray = field(repr=False)
    measure_estimate: float
    bound: float

    def member_phases(self) -> np.ndarray:
        return self.a[self.members]

    def to_json(self) -> dict:
        return {
            "K_omega": self.K_omega,
            "N": self.N,
            "grid_size": self.grid_size,
            "measure_estimate": self.measure_estimate,
            "bound": self.bound,
        }

    def write(self, csv_path, json_path) -> None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["a", "member"])
            for a, m in zip(self.a, self.members):
                w.writerow([f"{a:.17g}", int(m)])
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)


def sweep_delta(
    K_omega: float,
    N: int,
    grid_size: int = 10_000,
    threads: int = 1,
    xi: float = 0.0,
    profile: Phi2Profile = SINE,
    chunk: int = 1024,
) -> ParamSweepResult:
    """Estimate ``Leb(Delta_N)`` on the uniform phase grid ``a_j = 2 pi j / grid_size``.

    Chunks of the grid are distributed over ``threads`` workers; the bitmap is
    keyed by grid index, so the result does not depend on the worker count.
    """
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    p = CircleMapParams(K_omega, 0.0, xi, profile)
    a = np.arange(grid_size) * TWO_PI / grid_size
    members = np.zeros(grid_size, dtype=bool)
    starts = range(0, grid_size, chunk)

    def work(s):
        return s, membership_array(p, a[s : s + chunk], N)

    if threads <= 1:
        results = map(work, starts)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        results = pool.map(work, starts)
    for s, m in results:
        members[s : s + m.size] = m
    if threads > 1:
        pool.shutdown()
    return ParamSweepResult(
        K_omega=K_omega,
        N=N,
        grid_size=grid_size,
        a=a,
        members=members,
        measure_estimate=TWO_PI * int(members.sum()) / grid_size,
        bound=TWO_PI - K_omega ** (-1.0 / 9.0),
    )


# ---------------------------------------------------------------------------
# expansion along the critical orbit

def _log_derivative_sum(p: CircleMapParams, x0: float, n: int) -> np.ndarray:
    _, logs, trunc = _orbit(p, x0, n)
    if trunc:
        raise OrbitTruncated(logs.size, float("nan"))
    return np.cumsum(logs)


def map_lyapunov(p: CircleMapParams, x0: float, n: int) -> float:
    """``(1/n) sum_{i<n} ln|h'(h^i(x0))|``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(_log_derivative_sum(p, x0, n)[-1] / n)


@dataclass(frozen=True)
class ExpansionTable:
    K_omega: float
    a: float
    rows: list[dict]
    all_hold: bool
    log_averages: dict

    def final_log_average(self, c: float) -> float:
        return self.log_averages[c]


def expansion_check(p: CircleMapParams, n_max: int) -> ExpansionTable:
    """Compare ``ln|(h^n)'(h(c))|`` with ``(n/1000) ln K`` for ``n = 1..n_max``."""
    C, _ = sets_C_S(p)
    rows, avgs, ok = [], {}, True
    lk = math.log(p.K_omega)
    for c in C:
        x0 = h(p, c)
        cum = _log_derivative_sum(p, x0, n_max)
        for n in range(1, n_max + 1):
            hold = bool(cum[n - 1] >= n * lk / 1000.0)
            ok &= hold
            rows.append({"c": c, "n": n, "log_derivative": float(cum[n - 1]), "log_bound": n * lk / 1000.0, "holds": hold})
        avgs[c] = float(cum[-1] / n_max)
    return ExpansionTable(K_omega=p.K_omega, a=p.a, rows=rows, all_hold=ok, log_averages=avgs)


# ---------------------------------------------------------------------------
# covering sequences near a singularity

@dataclass(frozen=True)
class CoverIntervals:
    s: float
    n: np.ndarray
    c_seq: np.ndarray
    d_seq: np.ndarray
    residuals: np.ndarray

    def branch_image_lengths(self, p: CircleMapParams) -> tuple[np.ndarray, np.ndarray]:
        """Lifted image lengths of ``(c_n, c_n+1]`` and ``[d_n+1, d_n)``."""
        hc = np.array([h_lift(p, x) for x in self.c_seq])
        hd = np.array([h_lift(p, x) for x in self.d_seq])
        return np.diff(hc), np.diff(hd)


def _lifted_neighbours(points, s: float) -> tuple[float, float]:
    cand = np.concatenate([np.asarray(points) + TWO_PI * m for m in (-2, -1, 0, 1, 2)])
    return float(cand[cand < s].max()), float(cand[cand > s].min())


def cover_intervals(p: CircleMapParams, s: float, count: int, n_start: int = 1) -> CoverIntervals:
    """Solve lifted ``h(c_n) = h(d_n) = 2 n pi`` with ``c_n < s < d_n``.

    ``c_n`` lies on the increasing branch between the true critical point
    left of ``s`` and ``s``; ``d_n`` on the decreasing branch right of ``s``.
    Raises ``ValueError`` naming the least admissible ``n`` when ``2 n pi`` is
    below a branch minimum.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    _, S = sets_C_S(p)
    if float(_dist_to(s, S)) > 1e-9:
        raise ValueError(f"s={s} is not a point of the singular set")
    left, right = _lifted_neighbours(true_critical_points(p), s)
    floor = max(h_lift(p, left), h_lift(p, right))
    n_min = max(1, math.floor(floor / TWO_PI) + 1)
    if n_start < n_min:
        raise ValueError(f"2*n*pi is below the branch minimum for n={n_start}; least admissible n is {n_min}")

    def edge(side: int, target: float) -> float:
        # walk towards s until the lifted map exceeds the target
        for k in range(1, 17):
            x = s + side * 10.0 ** (-k)
            if abs(float(p.profile.f(x))) > SINGULAR_TOL and h_lift(p, x) > target:
                return x
        raise ValueError(f"could not bracket h = {target:.6g} next to s={s}")

    ns = np.arange(n_start, n_start + count)
    cs, ds, res = [], [], []
    for n in ns:
        target = TWO_PI * n
        f = lambda x: h_lift(p, x) - target  # noqa: E731
        c = brentq(f, left, edge(-1, target), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        d = brentq(f, edge(+1, target), right, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        cs.append(c)
        ds.append(d)
        res.append(max(abs(f(c)), abs(f(d))))
    return CoverIntervals(s=s, n=ns, c_seq=np.array(cs), d_seq=np.array(ds), residuals=np.array(res))


# ---------------------------------------------------------------------------
# interval iteration with deletion

@dataclass(frozen=True)
class DeletionRecord:
    """Outcome of iterating an interval while deleting ``C_xi`` and ``S_xi``.

    ``N2`` is the first step at which a surviving piece contains a whole
    component (``None`` if ``max_iter`` was reached).
    """

    N2: int | None
    covered_component: tuple[str, float] | None
    deleted_measure: list[float]
    deleted_segments: list[int]
    surviving_measure: list[float]
    piece_counts: list[int]
    xi_del: float

    @property
    def total_deleted(self) -> float:
        return float(sum(self.deleted_measure))


def _components(p: CircleMapParams, r: float) -> list[tuple[str, float, float, float]]:
    C, S = sets_C_S(p)
    return [("C", c, c - r, c + r) for c in C] + [("S", s, s - r, s + r) for s in S]


def _shifts(lo: float, hi: float, u: float, v: float):
    # integer m with [lo, hi] + 2 pi m meeting [u, v]
    return range(math.floor((u - hi) / TWO_PI), math.ceil((v - lo) / TWO_PI) + 1)


def _map_piece(p: CircleMapParams, u: float, v: float, splits) -> list[tuple[float, float]]:
    # split at lifted critical points of h, then each branch maps monotonically
    cuts = sorted(t + TWO_PI * m for t in splits for m in _shifts(t, t, u, v) if u < t + TWO_PI * m < v)
    pts = [u, *cuts, v]
    out = []
    for x0, x1 in zip(pts[:-1], pts[1:]):
        y0, y1 = h_lift(p, x0), h_lift(p, x1)
        out.append((min(y0, y1), max(y0, y1)))
    return out


def iterate_interval_with_deletion(
    p: CircleMapParams,
    interval: tuple[float, float],
    xi_del: float | None = None,
    max_iter: int = 50,
    max_pieces: int = 100_000,
) -> DeletionRecord:
    """Iterate ``interval`` under ``h``, deleting the parts inside ``C_xi`` or ``S_xi``.

    Stops at the first step where a piece contains a full component of
    ``C_xi`` or ``S_xi``.  Raises ``ValueError`` if every piece is deleted.
    """
    u0, v0 = map(float, interval)
    if not v0 > u0:
        raise ValueError("interval must have positive length")
    r = xi_small(p.K_omega) if xi_del is None else xi_del
    comps = _components(p, r)
    _, S = sets_C_S(p)
    for s in S:
        if any(u0 < s + TWO_PI * m < v0 for m in _shifts(s, s, u0, v0)):
            raise ValueError("interval meets the singular set")
    try:
        splits = true_critical_points(p)
    except ValueError:
        splits = ()
    pieces = [(u0, v0)]
    dm, ds, sm, pc = [], [], [], []
    for step in range(max_iter + 1):
        sm.append(float(sum(v - u for u, v in pieces)))
        pc.append(len(pieces))
        for u, v in pieces:
            for kind, z, lo, hi in comps:
                for m in _shifts(lo, hi, u, v):
                    if u <= lo + TWO_PI * m and hi + TWO_PI * m <= v:
                        return DeletionRecord(step, (kind, z), dm, ds, sm, pc, r)
        if step == max_iter:
            break
        kept, removed, nseg = [], 0.0, 0
        for u, v in pieces:
            segs = [(u, v)]
            for _, _, lo, hi in comps:
                nxt = []
                for a, b in segs:
                    cur = [(a, b)]
                    for m in _shifts(lo, hi, a, b):
                        L, H = lo + TWO_PI * m, hi + TWO_PI * m
                        tmp = []
                        for x, y in cur:
                            if H <= x or L >= y:
                                tmp.append((x, y))
                                continue
                            removed += min(y, H) - max(x, L)
                            nseg += 1
                            if x < L:
                                tmp.append((x, L))
                            if H < y:
                                tmp.append((H, y))
                        cur = tmp
                    nxt.extend(cur)
                segs = nxt
            kept.extend(segs)
        dm.append(removed)
        ds.append(nseg)
        if not kept:
            raise ValueError(f"all pieces deleted at step {step}: xi={r:.3g} too large for K_omega={p.K_omega:g}")
        pieces = []
        for u, v in kept:
            for y0, y1 in _map_piece(p, u, v, splits):
                shift = TWO_PI * math.floor(y0 / TWO_PI)
                pieces.append((y0 - shift, y1 - shift))
        if len(pieces) > max_pieces:
            raise ValueError("piece count exceeded max_pieces")
    return DeletionRecord(None, None, dm, ds, sm, pc, r)


# ---------------------------------------------------------------------------
# growth ledger

def geometric_sum(a: float, N: int) -> tuple[float, float, float]:
    """``sum_{i=1..N} a**-i``, its closed form ``(a^N - 1)/(a^N (a - 1))`` and the bound ``1/(a-1)``."""
    if not a > 1:
        raise ValueError("a must be > 1")
    direct = math.fsum(a ** (-i) for i in range(1, N + 1))
    closed = (1.0 - a ** (-N)) / (a - 1.0)
    return direct, closed, 1.0 / (a - 1.0)


def _offset_step(p: CircleMapParams, b: float, e: float) -> float:
    """``h_lift(b + e) - h_lift(b)`` without cancellation; ``inf`` across a zero of phi2."""
    fb = float(p.profile.f(b))
    ratio = float(p.profile.difference(b, e)) / fb
    if ratio <= -1.0:
        return math.inf
    return e - p.K_omega * math.log1p(ratio)


def interval_image_length(p: CircleMapParams, base: float, e_lo: float, e_hi: float, steps: int) -> float:
    """Lifted length of ``h^steps([base + e_lo, base + e_hi])``.

    Endpoints are carried as offsets from the orbit of ``base``.  Once an
    image straddles a zero of ``phi2`` its next image is unbounded and the
    length is reported as ``inf``.  Folds at critical points are not
    unfolded, so the value is a lower bound in that case.
    """
    _, S = sets_C_S(p)
    b = float(base)
    for _ in range(steps):
        lo, hi = b + min(e_lo, e_hi), b + max(e_lo, e_hi)
        if hi - lo >= TWO_PI or any(lo < s + TWO_PI * m < hi for s in S for m in _shifts(s, s, lo, hi)):
            return math.inf
        e_lo, e_hi = _offset_step(p, b, e_lo), _offset_step(p, b, e_hi)
        if not (math.isfinite(e_lo) and math.isfinite(e_hi)):
            return math.inf
        b = h_lift(p, b)
        shift = TWO_PI * math.floor(b / TWO_PI)
        b -= shift
    return abs(e_hi - e_lo)


@dataclass(frozen=True)
class GrowthLedger:
    K_omega: float
    a: float
    N3: int
    c: float
    K0: float
    inverse_d_sum: float
    k2_estimate: float
    log_JD: float
    k3_estimate: float
    tec_rows: list[dict]
    tec_all_hold: bool
    image_length: float
    covers_circle: bool


def growth_ledger(p: CircleMapParams, N3: int, c: float | None = None, K0: float | None = None) -> GrowthLedger:
    """Quantities controlling the growth of ``I_N3(c)``.

    * ``sum_{i<N3} J^i / (dist(c_i, C) dist(c_i, S))`` and its product with
      ``K^(5/6) - 1``;
    * ``J^N3 D_N3`` and its ratio to ``K^(1/3)``;
    * the per-row chain ``J^N >= J^i (K^(5/6)/K0)^(N-i)``;
    * the lifted image length of ``I_N3(c)`` after ``N3 + 1`` iterates.
    """
    if N3 < 2:
        raise ValueError("N3 must be >= 2")
    C, _ = sets_C_S(p)
    c = C[0] if c is None else c
    if K0 is None:
        K0 = derivative_sandwich(p).K0
    st = critical_orbit_stats(p, c, N3, K0)
    if st.truncated:
        raise OrbitTruncated(st.c_n.size - 1, float(st.c_n[-1]))
    K = p.K_omega
    inv_sum = float(np.exp(np.logaddexp.reduce(-st.log_d[:N3])))
    log_JD = float(st.logJ[N3] + st.log_D[N3])
    rate = (5.0 / 6.0) * math.log(K) - math.log(K0)
    rows = []
    for i in range(1, N3 + 1):
        rhs = st.logJ[i] + (N3 - i) * rate
        rows.append({"i": i, "logJ_N": float(st.logJ[N3]), "log_rhs": float(rhs), "holds": bool(st.logJ[N3] >= rhs)})
    e_lo, e_hi = st.In_offsets[N3]
    length = interval_image_length(p, c, e_lo, e_hi, N3 + 1)
    return GrowthLedger(
        K_omega=K,
        a=p.a,
        N3=N3,
        c=c,
        K0=K0,
        inverse_d_sum=inv_sum,
        k2_estimate=inv_sum * (K ** (5.0 / 6.0) - 1.0),
        log_JD=log_JD,
        k3_estimate=math.exp(log_JD - math.log(K) / 3.0),
        tec_rows=rows,
        tec_all_hold=all(r["holds"] for r in rows),
        image_length=length,
        covers_circle=bool(length >= TWO_PI),
    )


def member_phases(K_omega: float, grid_size: int = 10_000, min_count: int = 10, N_max: int = 20, **kw) -> tuple[int, np.ndarray]:
    """Phases of the deepest ``Delta_N`` (``N <= N_max``) with at least ``min_count`` grid members.

    ``Delta_N`` shrinks geometrically in ``N`` at moderate ``K``, so a fixed
    deep ``N`` may leave nothing to sample.
    """
    best = (0, np.arange(grid_size) * TWO_PI / grid_size)
    for N in range(1, N_max + 1):
        r = sweep_delta(K_omega, N, grid_size, **kw)
        if r.members.sum() < min_count:
            break
        best = (N, r.member_phases())
    return best
