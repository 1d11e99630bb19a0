"""Symbolic coding of trajectories through the network and switching censuses.

A trajectory is coded by its exits from geodesic balls ``W1``, ``W2`` around
the saddle-foci.  Leaving ``W1`` it follows one of the two one-dimensional
connections, recorded as the sign of ``x3``; leaving ``W2`` it follows some
connection inside the two-sphere, recorded as an angular sector of
``atan2(x2, x1)``.  A census samples initial conditions uniformly in a small
geodesic ball and tabulates the words formed by the first ``k`` sign symbols.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.stats import binomtest

from hetlab.integrate import (
    IntegrationError,
    IntegratorConfig,
    ball_exit,
    find_events,
    solve,
)
from hetlab.maps import TWO_PI, DomainEscape, NormalFormParams
from hetlab.model import P1, P2, ModelParams, as_state, field as _field, on_sphere

__all__ = [
    "CodingConfig",
    "ItinerarySymbol",
    "Itinerary",
    "NoNetworkVisit",
    "code_trajectory",
    "sample_geodesic_ball",
    "wilson_interval",
    "CensusResult",
    "census",
    "follow_fraction",
    "AnnulusCoverage",
    "annulus_coverage",
]


class NoNetworkVisit(RuntimeError):
    """The trajectory did not leave either neighbourhood within ``max_time``."""


@dataclass(frozen=True)
class CodingConfig:
    ball_radius: float = 0.3
    sector_count: int = 8
    max_symbols: int = 200
    max_time: float = 1e4
    chunk: float = 25.0

    def __post_init__(self):
        if not 0.0 < self.ball_radius < 0.5:
            raise ValueError(f"ball_radius must lie in (0, 0.5), got {self.ball_radius}")
        if self.sector_count < 2:
            raise ValueError("sector_count must be >= 2")
        if self.max_symbols < 1:
            raise ValueError("max_symbols must be >= 1")
        if not (self.max_time > 0 and self.chunk > 0):
            raise ValueError("max_time and chunk must be > 0")


@dataclass(frozen=True)
class ItinerarySymbol:
    kind: Literal["P1exit", "P2exit"]
    value: str | int
    t: float


@dataclass(frozen=True)
class Itinerary:
    symbols: tuple[ItinerarySymbol, ...]
    terminated_reason: Literal["max_symbols", "max_time", "left_absorbing_domain"]

    def signs(self) -> str:
        return "".join(s.value for s in self.symbols if s.kind == "P1exit")

    def alternates(self) -> bool:
        kinds = [s.kind for s in self.symbols]
        return all(a != b for a, b in zip(kinds, kinds[1:]))

    def rows(self) -> list[tuple[int, float, str, str]]:
        return [(i, s.t, s.kind, str(s.value)) for i, s in enumerate(self.symbols)]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("idx,t,type,value\n")
            for i, t, kind, v in self.rows():
                fh.write(f"{i},{t:.17g},{kind},{v}\n")


def code_trajectory(
    params: ModelParams,
    x0,
    cfg: CodingConfig | None = None,
    p1_symbols: int | None = None,
    icfg: IntegratorConfig | None = None,
) -> Itinerary:
    """Integrate from ``x0`` and record ball exits in time order.

    Stops after ``cfg.max_symbols`` symbols, after ``p1_symbols`` sign
    symbols when given, or at ``cfg.max_time``.
    """
    cfg = cfg or CodingConfig()
    x = as_state(x0)
    if not on_sphere(x, 1e-6):
        raise ValueError("initial condition must lie on the unit sphere")
    x = x / np.linalg.norm(x)
    secs = [ball_exit(P1, cfg.ball_radius, "P1"), ball_exit(P2, cfg.ball_radius, "P2")]
    pa = params.as_array()
    syms: list[ItinerarySymbol] = []
    n_signs = 0
    t = 0.0
    first = True
    while t < cfg.max_time:
        t1 = min(t + cfg.chunk, cfg.max_time)
        try:
            tr = solve(_field, x, (t, t1), pa, icfg, renormalize=4)
        except IntegrationError:
            return Itinerary(tuple(syms), "left_absorbing_domain")
        for ev in find_events(tr, secs, include_start=first):
            if ev.section_id == "P1":
                sym = ItinerarySymbol("P1exit", "+" if math.copysign(1.0, ev.x[2]) > 0 else "-", ev.t)
                n_signs += 1
            else:
                theta = math.atan2(ev.x[1], ev.x[0]) % TWO_PI
                sector = min(int(theta * cfg.sector_count / TWO_PI), cfg.sector_count - 1)
                sym = ItinerarySymbol("P2exit", sector, ev.t)
            syms.append(sym)
            if len(syms) >= cfg.max_symbols or (p1_symbols is not None and n_signs >= p1_symbols):
                return Itinerary(tuple(syms), "max_symbols")
        first = False
        x = tr.x[-1]
        t = t1
    if not syms:
        raise NoNetworkVisit(f"no exit from either neighbourhood before t={cfg.max_time:g}")
    return Itinerary(tuple(syms), "max_time")


# ---------------------------------------------------------------------------
# sampling and statistics

def sample_geodesic_ball(center, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform point of the geodesic ball of ``radius`` around ``center`` on S^3.

    A tangent vector is drawn uniformly in the tangent 3-ball and accepted
    with probability ``(sin r / r)**2``, which corrects the exponential map's
    volume distortion.
    """
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    basis = null_space(c[None, :])
    while True:
        u = rng.uniform(-radius, radius, size=3)
        r = float(np.linalg.norm(u))
        if r > radius:
            continue
        if r == 0.0:
            return c.copy()
        if rng.random() <= (math.sin(r) / r) ** 2:
            v = basis @ (u / r)
            return math.cos(r) * c + math.sin(r) * v


def wilson_interval(count: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    ci = binomtest(count, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


@dataclass(frozen=True)
class CensusResult:
    params: dict
    k: int
    n: int
    counts: dict[str, int]
    coded: int
    unterminated: int
    alternation_violations: int
    wilson: dict[str, tuple[float, float]] = field(repr=False)

    @property
    def fractions(self) -> dict[str, float]:
        return {w: (c / self.n if self.n else 0.0) for w, c in self.counts.items()}

    @property
    def observed(self) -> list[str]:
        return [w for w, c in self.counts.items() if c > 0]

    @property
    def unobserved(self) -> list[str]:
        return [w for w, c in self.counts.items() if c == 0]

    def to_json(self) -> dict:
        fr = self.fractions
        return {
            "params": self.params,
            "k": self.k,
            "n": self.n,
            "coded": self.coded,
            "unterminated": self.unterminated,
            "alternation_violations": self.alternation_violations,
            "words": [
                {
                    "word": w,
                    "count": c,
                    "fraction": fr[w],
                    "wilson_low": self.wilson[w][0],
                    "wilson_high": self.wilson[w][1],
                }
                for w, c in self.counts.items()
            ],
            "unobserved": self.unobserved,
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)


def census(
    params: ModelParams,
    ball_center,
    ball_radius_ic: float,
    n_samples: int,
    k: int,
    cfg: CodingConfig | None = None,
    seed: int = 0,
    threads: int = 1,
) -> CensusResult:
    """Tabulate sign-words of length ``k`` over a uniform sample of a geodesic ball.

    Sample ``i`` draws from its own stream seeded by ``(seed, i)``, so counts
    are identical for any worker count.  Samples that do not produce ``k``
    sign symbols are reported as unterminated and excluded from the words.
    """
    if n_samples < 0 or k < 1:
        raise ValueError("need n_samples >= 0 and k >= 1")
    cfg = cfg or CodingConfig()
    center = np.asarray(ball_center, dtype=float)

    def work(i: int) -> tuple[str | None, bool]:
        x0 = sample_geodesic_ball(center, ball_radius_ic, _sample_rng(seed, i))
        try:
            it = code_trajectory(params, x0, cfg, p1_symbols=k)
        except NoNetworkVisit:
            return None, True
        w = it.signs()
        return (w if len(w) >= k else None), it.alternates()

    if threads <= 1:
        results = list(map(work, range(n_samples)))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n_samples)))

    words = ["".join(s) for s in itertools.product("+-", repeat=k)]
    tally = Counter(w[:k] for w, _ in results if w is not None)
    counts = {w: int(tally.get(w, 0)) for w in words}
    coded = sum(counts.values())
    return CensusResult(
        params={
            "omega": params.omega,
            "alpha": params.alpha,
            "beta": params.beta,
            "lam": params.lam,
            "ball_center": [float(v) for v in center],
            "ball_radius_ic": ball_radius_ic,
            "seed": seed,
            "coding": {"ball_radius": cfg.ball_radius, "sector_count": cfg.sector_count, "max_time": cfg.max_time},
        },
        k=k,
        n=n_samples,
        counts=counts,
        coded=coded,
        unterminated=n_samples - coded,
        alternation_violations=sum(1 for _, alt in results if not alt),
        wilson={w: wilson_interval(c, n_samples) for w, c in counts.items()},
    )


def follow_fraction(result: CensusResult, path: str) -> tuple[float, tuple[float, float]]:
    """Fraction of coded samples whose sign word starts with ``path``, with its Wilson interval."""
    if len(path) > result.k:
        raise ValueError(f"path longer than the census word length {result.k}")
    if set(path) - {"+", "-"}:
        raise ValueError("path must be a string over '+' and '-'")
    hits = sum(c for w, c in result.counts.items() if w.startswith(path))
    if result.coded == 0:
        return 0.0, (0.0, 1.0)
    return hits / result.coded, wilson_interval(hits, result.coded)


# ---------------------------------------------------------------------------
# annulus coverage of the return map

@dataclass(frozen=True)
class AnnulusCoverage:
    histogram: np.ndarray
    coverage: float
    surviving_orbits: int
    absorbed_orbits: int
    escaped_orbits: int
    points: int


def _coverage_chunk(nf: NormalFormParams, x, y, n_iter: int, bins: int):
    hist = np.zeros(bins, dtype=np.int64)
    c = nf.constants
    alive = np.ones(x.shape, dtype=bool)
    absorbed = np.zeros(x.shape, dtype=bool)
    escaped = np.zeros(x.shape, dtype=bool)
    for _ in range(n_iter):
        u = y + nf.lam * np.asarray(nf.phi2(x, y))
        hit = alive & (u == 0.0)
        out = alive & (np.abs(u) > 1.0)
        absorbed |= hit
        escaped |= out
        alive &= ~(hit | out)
        us = np.where(alive, u, 1.0)
        x = np.mod(x + nf.xi + nf.lam * np.asarray(nf.phi1(x, y)) - c.K_omega * np.log(np.abs(us)), TWO_PI)
        y = np.sign(us) * np.abs(us) ** c.delta
        # underflow to y = 0 means the orbit has reached the stable manifold
        gone = alive & (y == 0.0)
        absorbed |= gone
        alive &= ~gone
        idx = np.minimum((x[alive] * bins / TWO_PI).astype(np.int64), bins - 1)
        hist += np.bincount(idx, minlength=bins)
    return hist, int(alive.sum()), int(absorbed.sum()), int(escaped.sum())


def annulus_coverage(
    nf: NormalFormParams,
    seeds_x,
    seeds_y,
    n_iter: int,
    bin_count: int = 360,
    threads: int = 1,
    chunk: int = 256,
) -> AnnulusCoverage:
    """Histogram of the angular coordinate along return-map orbits.

    Orbits are dropped once absorbed (``y + lam phi2 = 0``) or pushed off the
    cylinder; points visited before that still count.
    """
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    xs = np.asarray(seeds_x, dtype=float)
    ys = np.asarray(seeds_y, dtype=float)
    if xs.shape != ys.shape:
        raise ValueError("seed arrays must have the same shape")
    starts = range(0, xs.size, chunk)

    def work(s):
        return _coverage_chunk(nf, xs[s : s + chunk], ys[s : s + chunk], n_iter, bin_count)

    if threads <= 1:
        parts = list(map(work, starts))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    hist = np.sum([p[0] for p in parts], axis=0) if parts else np.zeros(bin_count, dtype=np.int64)
    points = int(hist.sum())
    if points == 0:
        raise DomainEscape("every orbit was absorbed or escaped before its first return")
    return AnnulusCoverage(
        histogram=hist,
        coverage=float(np.count_nonzero(hist)) / bin_count,
        surviving_orbits=sum(p[1] for p in parts),
        absorbed_orbits=sum(p[2] for p in parts),
        escaped_orbits=sum(p[3] for p in parts),
        points=points,
    )
