"""Normal-form return map near the Bykov network.

Truncated local maps near the two saddle-foci, the global transition from
Out(P2) to In(P1), their composition into the first-return map on Out(P2),
and the rescaled singular limit as ``lam -> 0`` along phase-locked sequences.

Angles are always reduced to ``[0, 2 pi)`` with :func:`wrap`; the lower half of
each cylinder (``y < 0``) is handled by mapping ``|y|`` and carrying the sign.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from hetlab.model import SpectralData, derived_constants

__all__ = [
    "TWO_PI",
    "wrap",
    "circle_distance",
    "signed_power",
    "NeverExits",
    "DomainEscape",
    "CylinderPoint",
    "DiskPoint",
    "NormalFormParams",
    "ReturnOutcome",
    "write_orbit_csv",
    "singular_limit_report",
    "Absorbed",
    "local_map_1",
    "local_map_2",
    "eta",
    "eta_xy",
    "global_map_21",
    "global_map_21_xy",
    "return_map",
    "return_map_xy",
    "return_map_closed_form",
    "iterate_return_map",
    "lambda_sequence",
    "standard_grid",
    "singular_limit_defect",
    "DefectReport",
    "zero_phi1",
    "sine_phi2",
]

TWO_PI = 2.0 * math.pi


def wrap(x):
    """Reduce angles to ``[0, 2 pi)``."""
    r = np.mod(x, TWO_PI)
    # np.mod can return exactly 2 pi for tiny negative inputs
    r = np.where(r >= TWO_PI, 0.0, r)
    return float(r) if np.ndim(r) == 0 else r


def circle_distance(a, b):
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b) + math.pi, TWO_PI) - math.pi)
    return float(d) if np.ndim(d) == 0 else d


def signed_power(u, p: float):
    """``sign(u) |u|**p``: the lower cylinder half keeps its sign."""
    u = np.asarray(u, dtype=float)
    out = np.sign(u) * np.abs(u) ** p
    return float(out) if out.ndim == 0 else out


class NeverExits(ValueError):
    """A point on a local stable manifold: the orbit never leaves the neighbourhood."""


class DomainEscape(ValueError):
    """The global map pushed a point off the unit-height cylinder (lam too large)."""


@dataclass(frozen=True)
class CylinderPoint:
    x: float
    y: float
    section: Literal["In(P1)", "Out(P2)"] = "Out(P2)"

    def __post_init__(self):
        object.__setattr__(self, "x", wrap(float(self.x)))
        if not abs(self.y) <= 1.0:
            raise ValueError(f"cylinder height must satisfy |y| <= 1, got {self.y}")

    @property
    def branch(self) -> int:
        return 1 if self.y >= 0 else -1


@dataclass(frozen=True)
class DiskPoint:
    r: float
    phi: float
    section: Literal["Out(P1)", "In(P2)"] = "Out(P1)"
    branch: int = 1

    def __post_init__(self):
        object.__setattr__(self, "phi", wrap(float(self.phi)))
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"disk radius must lie in [0, 1], got {self.r}")
        if self.branch not in (1, -1):
            raise ValueError("branch must be +1 or -1")


def zero_phi1(x, y):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)


def sine_phi2(x, y):
    return np.sin(x) + np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class NormalFormParams:
    """Data of the normal-form return map.

    ``phi1`` and ``phi2`` are vectorised callables ``(x, y) -> array``.  The
    defaults are ``phi1 = 0`` and ``phi2 = sin x``.
    """

    spectral: SpectralData
    xi: float = 0.0
    lam: float = 0.0
    phi1: Callable = field(default=zero_phi1, compare=False)
    phi2: Callable = field(default=sine_phi2, compare=False)

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    @property
    def constants(self):
        return derived_constants(self.spectral)

    @property
    def K_omega(self) -> float:
        return self.constants.K_omega

    @property
    def delta(self) -> float:
        return self.constants.delta

    def with_lam(self, lam: float) -> "NormalFormParams":
        return NormalFormParams(self.spectral, self.xi, lam, self.phi1, self.phi2)

    def validate(self, grid: int = 4096) -> None:
        """Check that ``phi2(., 0)`` is Morse with finitely many nondegenerate
        critical points and a null zero set, on a uniform grid."""
        xs = np.arange(grid) * TWO_PI / grid
        h = TWO_PI / grid
        f = np.asarray(self.phi2(xs, np.zeros_like(xs)), dtype=float)
        if np.count_nonzero(np.abs(f) < 1e-12) > 0.01 * grid:
            raise ValueError("phi2(., 0) vanishes on a set of positive measure")
        fp = (np.roll(f, -1) - np.roll(f, 1)) / (2 * h)
        fpp = (np.roll(f, -1) - 2 * f + np.roll(f, 1)) / h**2
        crit = np.flatnonzero(np.sign(fp) != np.sign(np.roll(fp, -1)))
        if crit.size < 2:
            raise ValueError("phi2(., 0) needs at least two critical points")
        scale = max(np.max(np.abs(fpp)), 1e-300)
        if np.any(np.abs(fpp[crit]) < 1e-6 * scale):
            raise ValueError("phi2(., 0) has a degenerate critical point")
        # a zero where phi2' also vanishes is degenerate
        zeros = np.flatnonzero((f == 0.0) | (np.sign(f) != np.sign(np.roll(f, -1))))
        if np.any(np.abs(fp[zeros]) < 1e-3 * np.max(np.abs(fp))):
            raise ValueError("phi2(., 0) has a degenerate zero")


@dataclass(frozen=True)
class Absorbed:
    """The orbit lands on the stable manifold of P1 and never returns."""


ReturnOutcome = CylinderPoint | Absorbed


# ---------------------------------------------------------------------------
# local and global maps

def local_map_1(s: SpectralData, p: CylinderPoint) -> DiskPoint:
    """In(P1) -> Out(P1): ``(r, phi) = (|y|**delta1, x - (w1/E1) ln |y|)``."""
    if p.y == 0.0:
        raise NeverExits("y = 0 lies on the local stable manifold of P1")
    ay = abs(p.y)
    return DiskPoint(
        r=ay ** (s.C1 / s.E1),
        phi=p.x - (s.omega1 / s.E1) * math.log(ay),
        section="Out(P1)",
        branch=p.branch,
    )


def local_map_2(s: SpectralData, p: DiskPoint) -> CylinderPoint:
    """In(P2) -> Out(P2): ``(x, y) = (phi - (w2/E2) ln r, +-r**delta2)``."""
    if p.r == 0.0:
        raise NeverExits("r = 0 lies on the stable manifold of P2")
    return CylinderPoint(
        x=p.phi - (s.omega2 / s.E2) * math.log(p.r),
        y=p.branch * p.r ** (s.C2 / s.E2),
        section="Out(P2)",
    )


def eta_xy(s: SpectralData, x, y):
    """Vectorised passage In(P1) -> Out(P2); ``y`` must be nonzero."""
    c = derived_constants(s)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return wrap(np.asarray(x) - c.K_omega * np.log(np.abs(y))), signed_power(y, c.delta)


def eta(s: SpectralData, p: CylinderPoint) -> CylinderPoint | Absorbed:
    """Passage ``(x - K ln|y|, sign(y)|y|**delta)``; ``y = 0`` is absorbed."""
    if p.y == 0.0:
        return Absorbed()
    x, y = eta_xy(s, p.x, p.y)
    return CylinderPoint(float(x), float(y), section="Out(P2)")


def global_map_21_xy(nf: NormalFormParams, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xn = wrap(nf.xi + x + nf.lam * np.asarray(nf.phi1(x, y)))
    yn = y + nf.lam * np.asarray(nf.phi2(x, y))
    return xn, yn


def global_map_21(nf: NormalFormParams, p: CylinderPoint) -> CylinderPoint:
    """Out(P2) -> In(P1): ``(xi + x + lam phi1, y + lam phi2)``.

    Raises :class:`DomainEscape` when the new height leaves ``[-1, 1]``.
    """
    xn, yn = global_map_21_xy(nf, p.x, p.y)
    if abs(float(yn)) > 1.0:
        raise DomainEscape(f"height {float(yn):.6g} left the cylinder; lam={nf.lam} too large")
    return CylinderPoint(float(xn), float(yn), section="In(P1)")


def return_map(nf: NormalFormParams, p: CylinderPoint) -> CylinderPoint | Absorbed:
    """First return to Out(P2), computed as ``eta`` after the global map."""
    q = global_map_21(nf, p)
    return eta(nf.spectral, q)


def return_map_closed_form(nf: NormalFormParams, x, y):
    """Direct formula ``[x + xi + lam phi1 - K ln|u|, u**delta]``, ``u = y + lam phi2``.

    Vectorised; absorbed points come back as ``nan``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = nf.constants
    u = y + nf.lam * np.asarray(nf.phi2(x, y))
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = x + nf.xi + nf.lam * np.asarray(nf.phi1(x, y)) - c.K_omega * np.log(np.abs(u))
        g1 = np.where(u == 0.0, np.nan, wrap(np.where(u == 0.0, 0.0, g1)))
        g2 = np.where(u == 0.0, np.nan, signed_power(u, c.delta))
    return g1, g2


def return_map_xy(nf: NormalFormParams, x, y):
    """Vectorised composition; absorbed entries are ``nan``.

    Points whose image height leaves the cylinder raise :class:`DomainEscape`.
    """
    xn, yn = global_map_21_xy(nf, x, y)
    yn = np.asarray(yn)
    if np.any(np.abs(yn) > 1.0):
        raise DomainEscape(f"lam={nf.lam} pushes points off the cylinder")
    absorbed = yn == 0.0
    safe = np.where(absorbed, 1.0, yn)
    gx, gy = eta_xy(nf.spectral, xn, safe)
    return np.where(absorbed, np.nan, gx), np.where(absorbed, np.nan, gy)


def iterate_return_map(nf: NormalFormParams, x0: float, y0: float, n: int) -> list[tuple[int, float, float, bool]]:
    """Orbit rows ``(n, x, y, absorbed)``; stops after the first absorption."""
    rows = [(0, wrap(x0), float(y0), False)]
    p = CylinderPoint(x0, y0)
    for i in range(1, n + 1):
        out = return_map(nf, p)
        if isinstance(out, Absorbed):
            rows.append((i, float("nan"), float("nan"), True))
            break
        p = out
        rows.append((i, p.x, p.y, False))
    return rows


def write_orbit_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "x", "y", "absorbed"])
        for n, x, y, ab in rows:
            w.writerow([n, f"{x:.17g}", f"{y:.17g}", int(ab)])


# ---------------------------------------------------------------------------
# singular limit

def lambda_sequence(K_omega: float, n: int, a: float = 0.0, lambda0: float | None = None) -> float:
    """``lam_(a, n) = exp(-(2 pi n + a) / K)`` so that ``-K ln lam = a (mod 2 pi)``.

    With ``lambda0`` given, a warning flags values outside ``(0, lambda0)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not K_omega > 0:
        raise ValueError("K_omega must be > 0")
    lam = math.exp(-(TWO_PI * n + a) / K_omega)
    if lambda0 is not None and not 0.0 < lam < lambda0:
        warnings.warn(f"lambda_(a={a}, n={n}) = {lam:.3g} is not below lambda0={lambda0}", stacklevel=2)
    return lam


def standard_grid(nf: NormalFormParams, nx: int = 128, ny: int = 41, margin: float = 1e-3):
    """``(x, ybar)`` grid on ``[0, 2pi) x [-1, 1]`` kept ``margin`` away from
    the singular set ``ybar + phi2(x, ybar) = 0``."""
    xs = np.arange(nx) * TWO_PI / nx
    ys = np.linspace(-1.0, 1.0, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    X, Y = X.ravel(), Y.ravel()
    keep = np.abs(Y + np.asarray(nf.phi2(X, Y))) >= margin
    return X[keep], Y[keep]


@dataclass(frozen=True)
class DefectReport:
    K_omega: float
    a: float
    entries: list[dict]

    def to_json(self) -> dict:
        return {"K_omega": self.K_omega, "a": self.a, "entries": self.entries}

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)


def singular_limit_defect(
    nf: NormalFormParams,
    K_omega: float,
    a: float,
    n: int,
    grid=None,
    lam: float | None = None,
) -> dict:
    """Sup-norm distance between the rescaled return map and ``(h_a, 0)``.

    The return map is evaluated at ``lam = lam_(a, n)`` (or the explicit
    ``lam``) on points ``(x, lam * ybar)``; its height is divided by ``lam``
    to express it in the rescaled coordinate.  ``K_omega`` overrides the
    twisting number implied by ``nf.spectral``.
    """
    if lam is None:
        lam = lambda_sequence(K_omega, n, a)
    X, Yb = standard_grid(nf) if grid is None else (np.asarray(grid[0]), np.asarray(grid[1]))
    delta = nf.delta
    phi1 = np.asarray(nf.phi1(X, lam * Yb))
    u_full = Yb + np.asarray(nf.phi2(X, lam * Yb))
    # the return map, written out with K_omega and evaluated at (x, lam*ybar)
    g1 = wrap(X + nf.xi + lam * phi1 - K_omega * np.log(np.abs(lam * u_full)))
    g2 = signed_power(lam * u_full, delta) / lam
    u_lim = Yb + np.asarray(nf.phi2(X, Yb))
    h = wrap(X + a - K_omega * np.log(np.abs(u_lim)) + nf.xi)
    d1 = float(np.max(circle_distance(g1, h)))
    d2 = float(np.max(np.abs(g2)))
    bound2 = lam ** (delta - 1.0) * float(np.max(np.abs(u_full))) ** delta
    return {"n": n, "lambda": lam, "defect": max(d1, d2), "defect1": d1, "defect2": d2, "bound2": bound2}


def singular_limit_report(nf: NormalFormParams, K_omega: float, a: float, ns, grid=None) -> DefectReport:
    entries = [singular_limit_defect(nf, K_omega, a, n, grid) for n in ns]
    return DefectReport(K_omega=K_omega, a=a, entries=entries)
