"""Command-line interface: ``hetlab <command> [options]``.

Every command accepts ``--config FILE`` (JSON with the same keys as the long
flags, underscores for dashes); explicit flags override the file.  Each run
writes its outputs plus ``manifest.json`` into ``--out``.  ``hetlab rerun
manifest.json`` repeats a run from its manifest alone.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "0+unknown"


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


MODEL_OPTS = {
    "omega": (float, 1.0, "rotation rate omega > 0"),
    "alpha": (float, 1.0, "alpha > 0"),
    "beta": (float, -0.1, "beta < 0 with |beta| < alpha"),
    "lambda": (float, 0.1, "symmetry-breaking parameter in [0, 1]"),
}
TOL_OPTS = {
    "rtol": (float, 1e-8, "relative tolerance"),
    "atol": (float, 1e-10, "absolute tolerance"),
    "max_step": (float, 0.25, "largest allowed time step"),
}

COMMANDS: dict[str, dict] = {
    "model-info": {**MODEL_OPTS},
    "simulate": {
        **MODEL_OPTS,
        **TOL_OPTS,
        "ic": (_floats, [0.01, 0.01, 0.01, 1.0], "initial condition x1,x2,x3,x4 (normalised)"),
        "t": (float, 1000.0, "final time"),
        "t0": (float, 0.0, "initial time"),
        "format": (str, "csv", "csv or json"),
    },
    "lyapunov": {
        **MODEL_OPTS,
        **TOL_OPTS,
        "ic": (_floats, [0.01, 0.01, 0.01, 1.0], "initial condition (normalised)"),
        "T": (float, 1e4, "total integration time (transient included)"),
        "k": (int, 1, "number of exponents"),
        "transient": (float, 100.0, "discarded initial time"),
        "step": (float, 0.5, "renormalisation interval"),
    },
    "return-map": {
        **MODEL_OPTS,
        "xi": (float, 0.0, "phase shift of the global map"),
        "x0": (float, 1.0, "initial angle"),
        "y0": (float, 0.05, "initial height"),
        "n": (int, 100, "number of returns"),
        "format": (str, "csv", "csv or json"),
    },
    "circle": {
        "mode": (str, "orbit", "orbit, sweep, cover or deletion"),
        "komega": (float, 100.0, "twisting number K_omega"),
        "a": (float, 0.0, "phase a"),
        "xi": (float, 0.0, "phase shift"),
        "N": (int, 20, "orbit length / depth of Delta_N"),
        "grid": (int, 10_000, "phase grid size (sweep)"),
        "c_index": (int, 0, "which critical point (orbit)"),
        "s": (float, math.pi, "singular point (cover)"),
        "count": (int, 4, "number of covering preimages (cover)"),
        "interval": (_floats, [1.0, 1.001], "seed interval lo,hi (deletion)"),
        "xi_del": (float, -1.0, "deletion radius; negative means K^(-1/6)"),
        "max_iter": (int, 50, "maximum deletion steps"),
    },
    "census": {
        **MODEL_OPTS,
        "center": (_floats, [0.01, 0.01, 0.01, 1.0], "ball centre (normalised)"),
        "radius_ic": (float, 0.05, "geodesic radius of the initial-condition ball"),
        "n": (int, 1000, "number of samples"),
        "k": (int, 5, "word length"),
        "ball_radius": (float, 0.3, "radius of the neighbourhoods of the saddles"),
        "sectors": (int, 8, "angular sectors on leaving P2"),
        "max_time": (float, 1e4, "time limit per sample"),
    },
    "singular-limit": {
        **MODEL_OPTS,
        "komega": (float, -1.0, "twisting number; negative means the model value"),
        "a": (float, 0.0, "phase a"),
        "xi": (float, 0.0, "phase shift"),
        "n_min": (int, 3, "first sequence index"),
        "n_max": (int, 12, "last sequence index"),
    },
    "annulus": {
        **MODEL_OPTS,
        "a": (float, -1.0, "phase a; negative picks a member of Delta_N"),
        "seq_n": (int, 10, "index n of lambda_(a, n)"),
        "xi": (float, 0.0, "phase shift"),
        "seeds": (int, 1000, "number of seeds"),
        "iters": (int, 1000, "iterates per seed"),
        "bins": (int, 360, "angular bins"),
    },
}
COMMON = {
    "seed": (int, 0, "64-bit seed"),
    "out": (str, "hetlab_out", "output directory"),
    "threads": (int, None, "worker threads (default: $HETLAB_THREADS or 1)"),
}


@dataclass
class RunConfig:
    command: str
    params: dict
    seed: int = 0
    output_dir: str = "hetlab_out"
    threads: int = 1
    format: str = "csv"
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        return cls(**d)


class ConfigError(ValueError):
    pass


def _default_threads() -> int:
    env = os.environ.get("HETLAB_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"HETLAB_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("HETLAB_THREADS must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetlab", description="Bykov-network experiments.")
    ap.add_argument("--version", action="version", version=f"hetlab {_tool_version()}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name)
        if name == "circle":
            sp.add_argument("mode", nargs="?", choices=["orbit", "sweep", "cover", "deletion"], default=None)
        sp.add_argument("--config", default=None, help="JSON file with option values")
        for key, (typ, default, hlp) in {**opts, **COMMON}.items():
            if key == "mode":
                continue
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, type=typ, default=argparse.SUPPRESS, help=f"{hlp} (default {default})")
    rr = sub.add_parser("rerun", help="repeat a run from its manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", default=None)
    return ap


def resolve(command: str, given: dict, file_values: dict | None = None) -> RunConfig:
    """Merge built-in defaults, a config file and explicit flags into a RunConfig."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    opts = {**COMMANDS[command], **COMMON}
    values = {k: d for k, (_, d, _) in opts.items()}
    for src in (file_values or {}), given:
        for k, v in src.items():
            if k not in opts:
                raise ConfigError(f"unknown option {k!r} for {command}")
            typ = opts[k][0]
            try:
                values[k] = None if v is None else typ(v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
    threads = values.pop("threads")
    threads = _default_threads() if threads is None else threads
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    seed = values.pop("seed")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    out = values.pop("out")
    fmt = values.pop("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("--format must be csv or json")
    cfg = RunConfig(command=command, params=values, seed=seed, output_dir=out, threads=threads, format=fmt)
    _validate(cfg)
    return cfg


def _model(p: dict):
    from hetlab.model import ModelParams

    return ModelParams(omega=p["omega"], alpha=p["alpha"], beta=p["beta"], lam=p["lambda"])


def _validate(cfg: RunConfig) -> None:
    p = cfg.params
    try:
        if "omega" in p:
            _model(p)
        for key in ("ic", "center"):
            if key in p and len(p[key]) != 4:
                raise ConfigError(f"--{key} needs 4 comma-separated numbers")
        if cfg.command == "circle":
            if p["mode"] not in ("orbit", "sweep", "cover", "deletion"):
                raise ConfigError("circle mode must be orbit, sweep, cover or deletion")
            if not p["komega"] > 0:
                raise ConfigError("--komega must be > 0")
            if len(p["interval"]) != 2:
                raise ConfigError("--interval needs lo,hi")
            if p["mode"] == "cover" and min(abs(math.remainder(p["s"], math.pi)), 1.0) > 1e-9:
                raise ConfigError("--s must be a zero of sin (0 or pi)")
        if cfg.command == "census" and (p["n"] < 0 or p["k"] < 1):
            raise ConfigError("need --n >= 0 and --k >= 1")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands

def _integrator(p: dict):
    from hetlab.integrate import IntegratorConfig

    return IntegratorConfig(rel_tol=p["rtol"], abs_tol=p["atol"], max_step=p["max_step"])


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0:
        raise ConfigError("vector must be nonzero")
    return v / n


def _write_rows(path: Path, header: list[str], rows, fmt: str) -> Path:
    if fmt == "json":
        path = path.with_suffix(".json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"columns": header, "rows": [list(r) for r in rows]}, fh)
    else:
        path = path.with_suffix(".csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else f"{v:.17g}") for v in r) + "\n")
    return path


def _dump(path: Path, obj) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
    return path


def cmd_model_info(cfg: RunConfig, out: Path) -> list[Path]:
    from hetlab.model import derived_constants, equilibria, spectral_from_model

    mp = _model(cfg.params)
    s = spectral_from_model(mp)
    dc = derived_constants(s)
    eqs = equilibria(mp)
    report = {
        "params": asdict(mp),
        "spectral": asdict(s),
        "delta1": dc.delta1,
        "delta2": dc.delta2,
        "delta": dc.delta,
        "K_omega": dc.K_omega,
        "equilibria": [
            {
                "location": e.location.tolist(),
                "eigenvalues": [[float(z.real), float(z.imag)] for z in e.eigenvalues],
                "stable_dim": e.stable_dim,
                "unstable_dim": e.unstable_dim,
            }
            for e in eqs
        ],
    }
    print(json.dumps({"K_omega": dc.K_omega, "delta": dc.delta}))
    return [_dump(out / "model_info.json", report)]


def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    from hetlab.integrate import integrate

    p = cfg.params
    tr = integrate(_model(p), _unit(p["ic"]), (p["t0"], p["t"]), _integrator(p))
    rows = np.column_stack([tr.t, tr.x]).tolist()
    return [_write_rows(out / "trajectory", ["t", "x1", "x2", "x3", "x4"], rows, cfg.format)]


def cmd_lyapunov(cfg: RunConfig, out: Path) -> list[Path]:
    from dataclasses import replace

    from hetlab.integrate import flow_lyapunov

    p = cfg.params
    icfg = replace(_integrator(p), fixed_step=p["step"])
    res = flow_lyapunov(_model(p), _unit(p["ic"]), p["T"], k=p["k"], cfg=icfg, transient=p["transient"])
    print(json.dumps({"exponents": [float(v) for v in res.exponents]}))
    path = out / "lyapunov.json"
    res.write_json(path)
    return [path]


def _normal_form(p: dict, lam: float | None = None):
    from hetlab.maps import NormalFormParams
    from hetlab.model import spectral_from_model

    return NormalFormParams(spectral_from_model(_model(p)), xi=p["xi"], lam=p["lambda"] if lam is None else lam)


def cmd_return_map(cfg: RunConfig, out: Path) -> list[Path]:
    from hetlab.maps import iterate_return_map

    p = cfg.params
    rows = iterate_return_map(_normal_form(p), p["x0"], p["y0"], p["n"])
    rows = [(n, x, y, int(ab)) for n, x, y, ab in rows]
    return [_write_rows(out / "return_map", ["n", "x", "y", "absorbed"], rows, cfg.format)]


def cmd_circle(cfg: RunConfig, out: Path) -> list[Path]:
    from hetlab import circlemap as cm

    p = cfg.params
    cp = cm.CircleMapParams(p["komega"], p["a"], p["xi"])
    mode = p["mode"]
    if mode == "sweep":
        r = cm.sweep_delta(p["komega"], p["N"], p["grid"], threads=cfg.threads, xi=p["xi"])
        r.write(out / "sweep.csv", out / "sweep.json")
        print(json.dumps(r.to_json()))
        return [out / "sweep.csv", out / "sweep.json"]
    if mode == "orbit":
        C, _ = cm.sets_C_S(cp)
        st = cm.critical_orbit_stats(cp, C[p["c_index"] % len(C)], p["N"])
        st.write_csv(out / "orbit_ledger.csv")
        return [out / "orbit_ledger.csv"]
    if mode == "cover":
        cv = cm.cover_intervals(cp, p["s"], p["count"])
        return [
            _dump(
                out / "cover.json",
                {"s": cv.s, "n": cv.n.tolist(), "c_seq": cv.c_seq.tolist(), "d_seq": cv.d_seq.tolist(), "residuals": cv.residuals.tolist()},
            )
        ]
    xi_del = None if p["xi_del"] < 0 else p["xi_del"]
    rec = cm.iterate_interval_with_deletion(cp, tuple(p["interval"]), xi_del, p["max_iter"])
    return [_dump(out / "deletion.json", asdict(rec))]


def cmd_census(cfg: RunConfig, out: Path) -> list[Path]:
    from hetlab.switching import CodingConfig, census

    p = cfg.params
    cc = CodingConfig(ball_radius=p["ball_radius"], sector_count=p["sectors"], max_time=p["max_time"])
    res = census(_model(p), _unit(p["center"]), p["radius_ic"], p["n"], p["k"], cc, seed=cfg.seed, threads=cfg.threads)
    print(json.dumps({"observed": len(res.observed), "unobserved": len(res.unobserved)}))
    path = out / "census.json"
    res.write_json(path)
    return [path]


def cmd_singular_limit(cfg: RunConfig, out: Path) -> list[Path]:
    from hetlab.maps import singular_limit_report

    p = cfg.params
    nf = _normal_form(p, lam=0.0)
    K = nf.K_omega if p["komega"] < 0 else p["komega"]
    rep = singular_limit_report(nf, K, p["a"], range(p["n_min"], p["n_max"] + 1))
    entries = [{k: e[k] for k in ("n", "lambda", "defect1", "defect2")} for e in rep.entries]
    return [_dump(out / "singular_limit.json", {"K_omega": K, "a": p["a"], "entries": entries})]


def annulus_seeds(seed: int, count: int, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Seeds in a small box around ``(1, lam/2)``, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    x = 1.0 + 0.05 * rng.uniform(-1.0, 1.0, count)
    y = lam * (0.5 + 0.05 * rng.uniform(-1.0, 1.0, count))
    return x, y


def cmd_annulus(cfg: RunConfig, out: Path) -> list[Path]:
    from hetlab.circlemap import member_phases
    from hetlab.maps import lambda_sequence
    from hetlab.switching import annulus_coverage

    p = cfg.params
    nf0 = _normal_form(p, lam=0.0)
    K = nf0.K_omega
    a, N = p["a"], None
    if a < 0:
        N, phases = member_phases(K, threads=cfg.threads)
        a = float(phases[0])
    lam = lambda_sequence(K, p["seq_n"], a)
    x, y = annulus_seeds(cfg.seed, p["seeds"], lam)
    res = annulus_coverage(nf0.with_lam(lam), x, y, p["iters"], p["bins"], threads=cfg.threads)
    report = {
        "K_omega": K,
        "a": a,
        "delta_depth": N,
        "lambda": lam,
        "coverage": res.coverage,
        "points": res.points,
        "surviving_orbits": res.surviving_orbits,
        "absorbed_orbits": res.absorbed_orbits,
        "escaped_orbits": res.escaped_orbits,
        "histogram": res.histogram.tolist(),
    }
    print(json.dumps({"coverage": res.coverage}))
    return [_dump(out / "annulus.json", report)]


HANDLERS = {
    "model-info": cmd_model_info,
    "simulate": cmd_simulate,
    "lyapunov": cmd_lyapunov,
    "return-map": cmd_return_map,
    "circle": cmd_circle,
    "census": cmd_census,
    "singular-limit": cmd_singular_limit,
    "annulus": cmd_annulus,
}


def execute(cfg: RunConfig) -> Path:
    """Run ``cfg`` and write its outputs and manifest; returns the manifest path."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    files = HANDLERS[cfg.command](cfg, out)
    manifest = {
        "tool": "hetlab",
        "version": _tool_version(),
        "config": cfg.to_json(),
        "started_utc": started.isoformat(),
        "wall_clock_seconds": time.perf_counter() - t0,
        "outputs": [Path(f).name for f in files],
    }
    return _dump(out / "manifest.json", manifest)


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def config_from_manifest(path, out: str | None = None) -> RunConfig:
    data = _load_json(path)
    try:
        cfg = RunConfig.from_json(data["config"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a hetlab manifest ({exc})") from None
    if out is not None:
        cfg.output_dir = out
    _validate(cfg)
    return cfg


def main(argv: list[str] | None = None) -> int:
    from hetlab.integrate import IntegrationError

    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if ns.command == "rerun":
            cfg = config_from_manifest(ns.manifest, ns.out)
        else:
            given = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
            if given.get("mode", "") is None:
                del given["mode"]
            file_values = _load_json(ns.config) if ns.config else None
            if file_values and "config" in file_values and "command" in file_values.get("config", {}):
                file_values = _flatten(file_values["config"])
            cfg = resolve(ns.command, given, file_values)
        execute(cfg)
    except ConfigError as exc:
        print(f"hetlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"hetlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, IntegrationError, ValueError) as exc:
        print(f"hetlab: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _flatten(cfg: dict) -> dict:
    """Option values of a serialised RunConfig (as found in a manifest)."""
    flat = dict(cfg.get("params", {}))
    flat.update(seed=cfg.get("seed", 0), out=cfg.get("output_dir", "hetlab_out"), threads=cfg.get("threads", 1))
    if "format" in cfg and cfg.get("command") in ("simulate", "return-map"):
        flat["format"] = cfg["format"]
    return flat


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
