"""The SO(2)-symmetry-breaking vector field family on the unit sphere of R^4.

The field is

    x1' = x1(1-r^2) - w x2 - a1 x1 x4 + a2 x1 x4^2
    x2' = x2(1-r^2) + w x1 - a1 x2 x4 + a2 x2 x4^2
    x3' = x3(1-r^2) + a1 x3 x4 + a2 x3 x4^2 + lam x1 x2 x4
    x4' = x4(1-r^2) - a1 (x3^2 - x1^2 - x2^2) - a2 x4 (x1^2 + x2^2 + x3^2)
          - lam x1 x2 x3

with ``a1 = alpha`` and ``a2 = beta``.  The sphere is invariant, P1 = (0,0,0,1)
and P2 = (0,0,0,-1) are saddle-foci, and ``lam`` breaks the reflection
symmetry x3 -> -x3 while keeping (x1, x2) -> (-x1, -x2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from hetlab._jit import njit

__all__ = [
    "SPHERE_TOL",
    "EQUILIBRIUM_TOL",
    "ModelParams",
    "SpectralData",
    "DerivedConstants",
    "Equilibrium",
    "as_state",
    "on_sphere",
    "eval_field",
    "tangency_defect",
    "eval_jacobian",
    "derived_constants",
    "spectral_from_model",
    "equilibria",
    "P1",
    "P2",
]

SPHERE_TOL = 1e-9
EQUILIBRIUM_TOL = 1e-10

P1 = np.array([0.0, 0.0, 0.0, 1.0])
P2 = np.array([0.0, 0.0, 0.0, -1.0])


@dataclass(frozen=True)
class ModelParams:
    """Parameters ``(omega, alpha, beta, lam)`` of the example field.

    Raises ``ValueError`` unless ``omega > 0``, ``beta < 0 < alpha``,
    ``beta**2 < 8 alpha**2``, ``|beta| < |alpha|`` and ``0 <= lam <= 1``.
    """

    omega: float = 1.0
    alpha: float = 1.0
    beta: float = -0.1
    lam: float = 0.1

    def __post_init__(self):
        for name in ("omega", "alpha", "beta", "lam"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        if not self.omega > 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if not self.beta < 0 < self.alpha:
            raise ValueError(
                f"need beta < 0 < alpha, got alpha={self.alpha}, beta={self.beta}"
            )
        if not self.beta**2 < 8 * self.alpha**2:
            raise ValueError("need beta^2 < 8 alpha^2")
        if not abs(self.beta) < abs(self.alpha):
            raise ValueError(
                f"need |beta| < |alpha|, got alpha={self.alpha}, beta={self.beta}"
            )
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")

    @property
    def alpha1(self) -> float:
        return self.alpha

    @property
    def alpha2(self) -> float:
        return self.beta

    def as_array(self) -> np.ndarray:
        """Packed ``[omega, alpha, beta, lam]`` for the compiled kernels."""
        return np.array([self.omega, self.alpha, self.beta, self.lam], dtype=float)

    def replace(self, **changes) -> "ModelParams":
        kw = dict(omega=self.omega, alpha=self.alpha, beta=self.beta, lam=self.lam)
        kw.update(changes)
        return ModelParams(**kw)


@dataclass(frozen=True)
class SpectralData:
    """Eigenvalue data: ``E1, -C1 +- i w1`` at P1 and ``-C2, E2 +- i w2`` at P2."""

    C1: float
    E1: float
    omega1: float
    C2: float
    E2: float
    omega2: float

    def __post_init__(self):
        if not (self.E1 > 0 and self.E2 > 0):
            raise ValueError(f"expanding rates must be > 0, got E1={self.E1}, E2={self.E2}")
        if not (self.C1 > self.E1 and self.C2 > self.E2):
            raise ValueError(
                f"need C_i > E_i, got C1={self.C1}, E1={self.E1}, C2={self.C2}, E2={self.E2}"
            )
        if not (self.omega1 > 0 and self.omega2 > 0):
            raise ValueError("rotation rates must be > 0")


@dataclass(frozen=True)
class DerivedConstants:
    delta1: float
    delta2: float
    delta: float
    K_omega: float


@dataclass(frozen=True)
class Equilibrium:
    location: np.ndarray
    eigenvalues: np.ndarray = field(repr=False)
    stable_dim: int
    unstable_dim: int


def as_state(x) -> np.ndarray:
    """Validate and convert ``x`` to a float array of shape (4,)."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (4,):
        raise ValueError(f"state must have shape (4,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state has non-finite components")
    return arr


def on_sphere(x, tol: float = SPHERE_TOL) -> bool:
    return abs(float(np.linalg.norm(x)) - 1.0) <= tol


@njit(cache=True, nogil=True)
def field(x, p):
    """Compiled right-hand side; ``p = [omega, alpha, beta, lam]``."""
    w = p[0]
    a1 = p[1]
    a2 = p[2]
    lam = p[3]
    x1 = x[0]
    x2 = x[1]
    x3 = x[2]
    x4 = x[3]
    s = 1.0 - (x1 * x1 + x2 * x2 + x3 * x3 + x4 * x4)
    out = np.empty(4)
    out[0] = x1 * s - w * x2 - a1 * x1 * x4 + a2 * x1 * x4 * x4
    out[1] = x2 * s + w * x1 - a1 * x2 * x4 + a2 * x2 * x4 * x4
    out[2] = x3 * s + a1 * x3 * x4 + a2 * x3 * x4 * x4 + lam * x1 * x2 * x4
    out[3] = (
        x4 * s
        - a1 * (x3 * x3 - x1 * x1 - x2 * x2)
        - a2 * x4 * (x1 * x1 + x2 * x2 + x3 * x3)
        - lam * x1 * x2 * x3
    )
    return out


@njit(cache=True, nogil=True)
def jacobian(x, p):
    """Compiled analytic Jacobian of :func:`field`."""
    w = p[0]
    a1 = p[1]
    a2 = p[2]
    lam = p[3]
    x1 = x[0]
    x2 = x[1]
    x3 = x[2]
    x4 = x[3]
    s = 1.0 - (x1 * x1 + x2 * x2 + x3 * x3 + x4 * x4)
    J = np.empty((4, 4))
    # d/dx_j of x_i * s is delta_ij * s - 2 x_i x_j
    J[0, 0] = s - 2 * x1 * x1 - a1 * x4 + a2 * x4 * x4
    J[0, 1] = -2 * x1 * x2 - w
    J[0, 2] = -2 * x1 * x3
    J[0, 3] = -2 * x1 * x4 - a1 * x1 + 2 * a2 * x1 * x4

    J[1, 0] = -2 * x2 * x1 + w
    J[1, 1] = s - 2 * x2 * x2 - a1 * x4 + a2 * x4 * x4
    J[1, 2] = -2 * x2 * x3
    J[1, 3] = -2 * x2 * x4 - a1 * x2 + 2 * a2 * x2 * x4

    J[2, 0] = -2 * x3 * x1 + lam * x2 * x4
    J[2, 1] = -2 * x3 * x2 + lam * x1 * x4
    J[2, 2] = s - 2 * x3 * x3 + a1 * x4 + a2 * x4 * x4
    J[2, 3] = -2 * x3 * x4 + a1 * x3 + 2 * a2 * x3 * x4 + lam * x1 * x2

    J[3, 0] = -2 * x4 * x1 + 2 * a1 * x1 - 2 * a2 * x4 * x1 - lam * x2 * x3
    J[3, 1] = -2 * x4 * x2 + 2 * a1 * x2 - 2 * a2 * x4 * x2 - lam * x1 * x3
    J[3, 2] = -2 * x4 * x3 - 2 * a1 * x3 - 2 * a2 * x4 * x3 - lam * x1 * x2
    J[3, 3] = s - 2 * x4 * x4 - a2 * (x1 * x1 + x2 * x2 + x3 * x3)
    return J


def eval_field(params: ModelParams, x) -> np.ndarray:
    """Velocity of the flow at ``x``."""
    return field(as_state(x), params.as_array())


def tangency_defect(params: ModelParams, x) -> float:
    """Inner product ``<g(x), x>``; identically ``r^2 (1 - r^2)``, so 0 on the sphere."""
    x = as_state(x)
    return float(np.dot(field(x, params.as_array()), x))


def eval_jacobian(params: ModelParams, x) -> np.ndarray:
    return jacobian(as_state(x), params.as_array())


def spectral_from_model(params: ModelParams) -> SpectralData:
    """``C1 = C2 = alpha - beta``, ``E1 = E2 = alpha + beta``, ``w1 = w2 = omega``."""
    C = params.alpha - params.beta
    E = params.alpha + params.beta
    if E <= 0:
        raise ValueError(f"alpha + beta must be > 0, got {E}")
    return SpectralData(C1=C, E1=E, omega1=params.omega, C2=C, E2=E, omega2=params.omega)


def derived_constants(s: SpectralData) -> DerivedConstants:
    """Saddle values and twisting number.

    ``delta_i = C_i / E_i``, ``delta = delta1 * delta2`` and
    ``K_omega = (E2 w1 + C1 w2) / (E1 E2)``.
    """
    if s.E1 <= 0 or s.E2 <= 0:
        raise ValueError("expanding rates must be positive")
    d1 = s.C1 / s.E1
    d2 = s.C2 / s.E2
    K = (s.E2 * s.omega1 + s.C1 * s.omega2) / (s.E1 * s.E2)
    return DerivedConstants(delta1=d1, delta2=d2, delta=d1 * d2, K_omega=K)


def equilibria(params: ModelParams) -> tuple[Equilibrium, Equilibrium]:
    """The saddle-foci P1 and P2 with their full (4-dimensional) spectra."""
    out = []
    for loc in (P1, P2):
        if np.linalg.norm(eval_field(params, loc)) > EQUILIBRIUM_TOL:
            raise ArithmeticError(f"{loc} is not an equilibrium")
        ev = np.linalg.eigvals(eval_jacobian(params, loc))
        ev = ev[np.argsort(-ev.real, kind="stable")]
        out.append(
            Equilibrium(
                location=loc.copy(),
                eigenvalues=ev,
                stable_dim=int(np.sum(ev.real < 0)),
                unstable_dim=int(np.sum(ev.real > 0)),
            )
        )
    return out[0], out[1]
