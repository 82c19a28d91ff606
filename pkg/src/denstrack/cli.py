"""``denstrack`` command line: propagate, converge, consistency, weakgap, mc.

Every experiment except ``weakgap`` reads one JSON config document; a few
scalar fields can be overridden with flags. Data goes to files in the output
directory, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from . import _accel
from .analysis import McConfig, convergence_study, mc_density, weak_gap_demo
from .errors import ConfigError, DensTrackError, DomainError, NumericalError
from .grid import (
    Bump, Cauchy, FromFile, Gaussian, GridSpec, SinePerturbedUniform, Uniform, init_density,
    l1_norm, moment, write_density_csv,
)
from .io import write_json, write_rows, write_step_log
from .model import model_from_config
from .propagator import StepMode, consistency_residual, evolve

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

TOP_LEVEL_KEYS = {"model", "grid", "initial", "time", "mode", "seed", "output_dir",
                  "snapshot_every", "reference", "n_ref", "mc"}
INITIAL_KINDS = {
    "gaussian": (Gaussian, {"mean", "variance"}),
    "cauchy": (Cauchy, {"loc", "scale"}),
    "uniform": (Uniform, {"a", "b"}),
    "sine-perturbed-uniform": (SinePerturbedUniform, {"n"}),
    "bump": (Bump, {"center", "halfwidth"}),
    "file": (FromFile, {"path"}),
}


@dataclass
class RunConfig:
    model: object
    grid: GridSpec
    initial: object
    t: float = 1.0
    n: int | None = None
    n_list: list = field(default_factory=list)
    tau_list: list = field(default_factory=list)
    mode: StepMode | None = None
    seed: int = 0
    output_dir: Path = Path("out")
    snapshot_every: int = 0
    reference: str = "ou-exact"
    n_ref: int | None = None
    mc_paths: int | None = None
    raw: dict = field(default_factory=dict)


def _require(d, key, where):
    if key not in d:
        raise ConfigError("missing", f"{where}.{key}" if where else key)
    return d[key]


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError("must be an object", where or "config")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) {', '.join(extra)}", where or extra[0])


def _parse_grid(d):
    _reject_unknown(d, {"dim", "lower", "upper", "cells"}, "grid")
    lower = _require(d, "lower", "grid")
    upper = _require(d, "upper", "grid")
    cells = _require(d, "cells", "grid")
    try:
        lo = [float(v) for v in (lower if isinstance(lower, list) else [lower])]
        hi = [float(v) for v in (upper if isinstance(upper, list) else [upper])]
    except (TypeError, ValueError):
        raise ConfigError("must be numbers", "grid.lower") from None
    dim = d.get("dim", len(lo))
    if dim not in (1, 2):
        raise ConfigError("must be 1 or 2", "grid.dim")
    if len(lo) != dim or len(hi) != dim:
        raise ConfigError(f"must have {dim} entries", "grid.lower")
    for k, (a, b) in enumerate(zip(lo, hi)):
        if not a < b:
            raise ConfigError(f"lower[{k}]={a} must be < upper[{k}]={b}", "grid.lower")
    try:
        return GridSpec(lo, hi, cells)
    except DomainError as exc:
        raise ConfigError(str(exc), "grid") from None


def _parse_initial(d, base_dir):
    if not isinstance(d, dict):
        raise ConfigError("must be an object", "initial")
    kind = _require(d, "kind", "initial")
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"unknown kind {kind!r} (choose from {', '.join(INITIAL_KINDS)})",
                          "initial.kind")
    cls, keys = INITIAL_KINDS[kind]
    _reject_unknown(d, keys | {"kind"}, "initial")
    kwargs = {k: d[k] for k in keys if k in d}
    if kind == "file":
        path = Path(_require(d, "path", "initial"))
        kwargs["path"] = path if path.is_absolute() else base_dir / path
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in kwargs.items()}
    try:
        return cls(**kwargs)
    except (DomainError, TypeError) as exc:
        raise ConfigError(str(exc), "initial") from None


def parse_config(doc, base_dir=Path(".")):
    """Validate a config document (already decoded JSON) into a :class:`RunConfig`."""
    _reject_unknown(doc, TOP_LEVEL_KEYS, "")
    mdoc = _require(doc, "model", "")
    _reject_unknown(mdoc, {"family", "params"}, "model")
    grid = _parse_grid(_require(doc, "grid", ""))
    try:
        model = model_from_config(_require(mdoc, "family", "model"), _require(mdoc, "params", "model"),
                                  grid.dim)
    except DomainError as exc:
        raise ConfigError(str(exc), "model") from None
    initial = _parse_initial(_require(doc, "initial", ""), base_dir)

    tdoc = doc.get("time", {})
    _reject_unknown(tdoc, {"t", "n", "n_list", "tau_list"}, "time")
    cfg = RunConfig(model, grid, initial, raw=doc)
    cfg.t = float(tdoc.get("t", 1.0))
    if not cfg.t > 0:
        raise ConfigError("must be > 0", "time.t")
    if "n" in tdoc:
        cfg.n = _positive_int(tdoc["n"], "time.n")
    cfg.n_list = [_positive_int(v, "time.n_list") for v in tdoc.get("n_list", [])]
    try:
        cfg.tau_list = [float(v) for v in tdoc.get("tau_list", [])]
    except (TypeError, ValueError):
        raise ConfigError("must be numbers", "time.tau_list") from None
    if any(not tau > 0 for tau in cfg.tau_list):
        raise ConfigError("entries must be > 0", "time.tau_list")

    if "mode" in doc:
        try:
            cfg.mode = StepMode(doc["mode"])
        except ValueError:
            raise ConfigError("must be 'cdf' or 'quadrature'", "mode") from None
        if cfg.mode is StepMode.CDF and grid.dim != 1:
            raise ConfigError("cdf mode is one-dimensional", "mode")
    cfg.seed = int(doc.get("seed", 0))
    cfg.output_dir = Path(doc.get("output_dir", "out"))
    if not cfg.output_dir.is_absolute():
        cfg.output_dir = base_dir / cfg.output_dir
    cfg.snapshot_every = int(doc.get("snapshot_every", 0))
    if cfg.snapshot_every < 0:
        raise ConfigError("must be >= 0", "snapshot_every")
    cfg.reference = doc.get("reference", "ou-exact")
    if cfg.reference not in ("ou-exact", "fine-grid"):
        raise ConfigError("must be 'ou-exact' or 'fine-grid'", "reference")
    if "n_ref" in doc:
        cfg.n_ref = _positive_int(doc["n_ref"], "n_ref")
    if "mc" in doc:
        _reject_unknown(doc["mc"], {"paths"}, "mc")
        cfg.mc_paths = _positive_int(_require(doc["mc"], "paths", "mc"), "mc.paths")
    return cfg


def _positive_int(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v or v < 1:
        raise ConfigError("must be a positive integer", where)
    return int(v)


def load_config(path, overrides=None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc})") from None
    overrides = overrides or {}
    if overrides.get("n") is not None:
        doc.setdefault("time", {})["n"] = overrides["n"]
    if overrides.get("t") is not None:
        doc.setdefault("time", {})["t"] = overrides["t"]
    if overrides.get("seed") is not None:
        doc["seed"] = overrides["seed"]
    if overrides.get("output_dir") is not None:
        doc["output_dir"] = str(Path(overrides["output_dir"]).resolve())
    return parse_config(doc, path.parent)


def _prepare_outputs(out_dir, names, force):
    out_dir = Path(out_dir)
    existing = [n for n in names if (out_dir / n).exists()]
    if existing and not force:
        raise ConfigError(f"{out_dir / existing[0]} exists; pass --force to overwrite", "output_dir")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _density_summary(u):
    summary = {"mass": l1_norm(u), "leaked_mass": u.leaked_mass,
               "min_value": float(u.values.min()), "max_value": float(u.values.max())}
    for k in (1, 2):
        m = moment(u, k)
        summary[f"moment_{k}"] = m if isinstance(m, float) else [float(v) for v in m]
    return summary


def _echo(cfg):
    return {k: v for k, v in cfg.raw.items() if k != "output_dir"}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_propagate(cfg, force=False):
    if cfg.n is None:
        raise ConfigError("missing (or pass --n)", "time.n")
    stride = cfg.snapshot_every
    snap_names = [f"snapshot_{k:06d}.csv" for k in range(1, cfg.n + 1) if stride and k % stride == 0]
    out = _prepare_outputs(cfg.output_dir, ["density.csv", "steps.csv", "summary.json"] + snap_names,
                           force)
    u0 = init_density(cfg.initial, cfg.grid)
    res = evolve(u0, cfg.model, cfg.t, cfg.n, cfg.mode, stride)
    write_density_csv(out / "density.csv", res.final)
    for name, (_, snap) in zip(snap_names, res.snapshots):
        write_density_csv(out / name, snap)
    write_step_log(out / "steps.csv", res.reports)
    summary = _density_summary(res.final)
    summary.update({"t": cfg.t, "n": cfg.n, "tau": cfg.t / cfg.n,
                    "initial_leaked_mass": u0.leaked_mass,
                    "truncated_mass": float(sum(r.truncated for r in res.reports)),
                    "config": _echo(cfg)})
    write_json(out / "summary.json", summary)
    print(f"mass {summary['mass']:.12f}  leaked {summary['leaked_mass']:.3e}  -> {out}")
    return EXIT_OK


def cmd_converge(cfg, force=False):
    if not cfg.n_list:
        raise ConfigError("missing or empty", "time.n_list")
    out = _prepare_outputs(cfg.output_dir, ["convergence.csv", "convergence.json"], force)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = convergence_study(cfg.model, cfg.initial, cfg.grid, cfg.t, cfg.n_list,
                                  cfg.reference, cfg.mode, cfg.n_ref)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    table.to_csv(out / "convergence.csv")
    table.write_sidecar(out / "convergence.json")
    for r in table.rows:
        print(f"n={r.n:6d}  L1 error {r.error:.6e}")
    if table.fitted_rate is None:
        print("fitted rate: n/a (fewer than 3 usable rows)")
    else:
        print(f"fitted rate: {table.fitted_rate:.4f}  (r2 {table.fit_r2:.4f})")
    return EXIT_OK


def cmd_consistency(cfg, force=False):
    if not cfg.tau_list:
        raise ConfigError("missing or empty", "time.tau_list")
    if not isinstance(cfg.initial, Bump):
        raise ConfigError("consistency runs need a smooth compactly supported 'bump' initial density",
                          "initial.kind")
    out = _prepare_outputs(cfg.output_dir, ["consistency.csv"], force)
    u = init_density(cfg.initial, cfg.grid)
    rows = []
    for tau in cfg.tau_list:
        r = consistency_residual(u, cfg.model, tau, cfg.mode)
        rows.append((tau, r, r / tau))
    write_rows(out / "consistency.csv", ("tau", "residual", "ratio"), rows)
    ratios = [r[2] for r in rows]
    for tau, r, q in rows:
        print(f"tau={tau:.6g}  residual {r:.6e}  residual/tau {q:.6f}")
    print(f"ratio spread (max/min): {max(ratios) / min(ratios):.4f}")
    return EXIT_OK


def cmd_weakgap(n, out_dir, force=False):
    out = _prepare_outputs(out_dir, ["weakgap.csv", "weakgap.json"], force)
    gap = weak_gap_demo(n)
    write_rows(out / "weakgap.csv", ("xi", "charfn_gap"), list(zip(gap.xis, gap.charfn_gaps)))
    write_json(out / "weakgap.json", {"n": n, "l1_gap": gap.l1_gap, "two_over_pi": 2 / math.pi,
                                      "xi": gap.xis, "charfn_gap": gap.charfn_gaps})
    print(f"n={n}  L1 gap {gap.l1_gap:.8f}  (2/pi = {2 / math.pi:.8f})")
    for xi, g in zip(gap.xis, gap.charfn_gaps):
        print(f"  xi={xi:.6f}  |charfn gap| {g:.6e}")
    return EXIT_OK


def cmd_mc(cfg, force=False):
    if cfg.mc_paths is None:
        raise ConfigError("missing", "mc.paths")
    if cfg.n is None:
        raise ConfigError("missing (or pass --n)", "time.n")
    try:
        mc = McConfig(cfg.mc_paths, cfg.n, cfg.seed)
    except DomainError as exc:
        raise ConfigError(str(exc), "mc.paths") from None
    out = _prepare_outputs(cfg.output_dir, ["mc_density.csv", "mc_summary.json"], force)
    dens = mc_density(cfg.model, cfg.initial, cfg.t, mc, cfg.grid)
    write_density_csv(out / "mc_density.csv", dens)
    summary = _density_summary(dens)
    summary.update({"paths": mc.paths, "steps": mc.steps, "seed": mc.seed, "t": cfg.t,
                    "config": _echo(cfg)})
    write_json(out / "mc_summary.json", summary)
    print(f"paths {mc.paths}  mass {summary['mass']:.6f}  leaked {summary['leaked_mass']:.3e}  -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="denstrack", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (default: DENSTRACK_THREADS or all cores)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.add_argument("config", help="JSON config file")
        p.add_argument("--n", type=int, help="override time.n")
        p.add_argument("--t", type=float, help="override time.t")
        p.add_argument("--seed", type=int, help="override seed")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return p

    with_config("propagate", "evolve a density for n steps")
    with_config("converge", "L1 convergence study over time.n_list")
    with_config("consistency", "consistency residual over time.tau_list")
    with_config("mc", "Monte-Carlo Euler-Maruyama histogram")
    p = sub.add_parser("weakgap", help="weak versus L1 convergence demo", parents=[common])
    p.add_argument("--n", type=int, required=True, help="oscillation count")
    p.add_argument("--output-dir", default="out")
    p.add_argument("--force", action="store_true")
    return parser


COMMANDS = {"propagate": cmd_propagate, "converge": cmd_converge,
            "consistency": cmd_consistency, "mc": cmd_mc}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _accel.set_threads(args.threads)
        if args.command == "weakgap":
            if args.n < 1:
                raise ConfigError("must be >= 1", "--n")
            return cmd_weakgap(args.n, Path(args.output_dir), args.force)
        cfg = load_config(args.config, {"n": args.n, "t": args.t, "seed": args.seed,
                                        "output_dir": args.output_dir})
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg, args.force)
    except ConfigError as exc:
        print(f"denstrack: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DensTrackError as exc:
        print(f"denstrack: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE if isinstance(exc, NumericalError) else EXIT_CONFIG
    except ValueError as exc:
        print(f"denstrack: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
