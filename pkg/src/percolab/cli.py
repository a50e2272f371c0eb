"""Command line front end: ``percolab {analyze,sample,mc,render,porosity}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, gw, streams
from .errors import FormatError, ParameterError, ResourceCapError, SubcriticalError
from .experiments import EXPERIMENTS, default_config, default_replicas, run_experiment
from .porosity import (OccupiedSet, porosity_map, representative_points, scale_grid,
                       upor_lpor_estimate)
from .pruner import PruneRule, apply_prune
from .sampler import PercolationConfig, sample_ensemble, sample_mu_points
from .treeio import deserialize, heatmap_pgm, occupancy_pgm, serialize, to_json

EXIT_OK, EXIT_PARAM, EXIT_SUBCRITICAL, EXIT_CAP = 0, 2, 3, 4
SCHEMA = 1


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config: dict | None
    seed: int | None
    replicas: int
    output_dir: str
    options: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    replica_seeds: list[int] | str = field(default_factory=list)
    workers: int = 1
    wall_clock: str = ""

    # fields that may differ between runs without changing any output
    VOLATILE = ("workers", "wall_clock", "output_dir")

    def digest(self) -> str:
        data = {k: v for k, v in asdict(self).items() if k not in self.VOLATILE}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()

    def write(self, out: Path) -> str:
        out.mkdir(parents=True, exist_ok=True)
        data = asdict(self)
        data["hash"] = self.digest()
        (out / "manifest.json").write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")
        return data["hash"]


def _versions() -> dict:
    return {"percolab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _replica_seeds(seed: int, replicas: int) -> list[int] | str:
    seeds = streams.replica_seeds(seed, np.arange(replicas, dtype=np.uint64))
    if replicas <= 1000:
        return [int(s) for s in seeds]
    return "sha256:" + hashlib.sha256(seeds.astype("<u8").tobytes()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def write_csv(path: Path, columns: list[str], rows, manifest_hash: str, timestamp: bool) -> None:
    buf = io.StringIO()
    buf.write(f"#schema={SCHEMA}\n#manifest={manifest_hash}\n")
    if timestamp:
        buf.write(f"#generated={time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        vals = [r[c] for c in columns] if isinstance(r, dict) else r
        w.writerow([_fmt(v) for v in vals])
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------- config handling


def _seed_override(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PERCOLAB_SEED")
    if env:
        try:
            return int(env, 0)
        except ValueError as exc:
            raise ParameterError(f"PERCOLAB_SEED is not an integer: {env!r}") from exc
    return None


def load_config(args, fallback: PercolationConfig | None = None) -> PercolationConfig:
    """Config from --config, else flags over ``fallback``, else a homogeneous model from flags."""
    seed = _seed_override(args)
    flags = {k: getattr(args, k) for k in ("M", "d", "p", "depth") if getattr(args, k) is not None}
    if seed is not None:
        flags["seed"] = seed
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ParameterError(f"cannot read config: {exc}") from exc
        over = {k: flags[k] for k in ("seed", "depth") if k in flags}
        return PercolationConfig.from_json(text, **over)
    if fallback is not None:
        if "p" in flags and fallback.model != "homogeneous":
            raise ParameterError("--p applies to homogeneous models only")
        return replace(fallback, **flags)
    if "p" not in flags:
        raise ParameterError("give --config or a homogeneous model via --p (with --M, --d)")
    flags.setdefault("M", 2)
    flags.setdefault("d", 1)
    flags.setdefault("depth", 8)
    return PercolationConfig(**flags)


def _manifest(args, cfg: PercolationConfig | None, replicas: int, **options) -> RunManifest:
    return RunManifest(
        command=args.command, config_path=args.config, config=cfg.to_dict() if cfg else None,
        seed=cfg.seed if cfg else None, replicas=replicas, output_dir=str(args.out),
        options={k: v for k, v in options.items() if v is not None}, versions=_versions(),
        replica_seeds=_replica_seeds(cfg.seed, replicas) if cfg else [],
        workers=args.workers, wall_clock=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    )


def _out(args) -> Path:
    if not args.out:
        args.out = "percolab-out"
    return Path(args.out)


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ParameterError(f"malformed --eps list {text!r}") from exc
    for e in vals:
        if not 0 < e < 0.5:
            raise ParameterError(f"eps = {e} must lie in (0, 1/2)")
    return vals


# ---------------------------------------------------------------- commands


def cmd_analyze(args) -> int:
    cfg = load_config(args)
    dist = cfg.offspring()
    eps_list = _eps_list(args.eps)
    q = gw.extinction_prob(dist)
    print(f"M={cfg.M} d={cfg.d} model={cfg.model} mean={dist.mean!r}")
    print(f"q={q!r}")
    if not dist.supercritical:
        print("subcritical: the limit set is empty almost surely")
        return EXIT_SUBCRITICAL
    s = gw.fractal_dimension(dist)
    print(f"s={s!r}")
    reports, skipped = [], []

    def attempt(name, fn):
        try:
            reports.append(fn())
        except (ParameterError, ResourceCapError) as exc:
            skipped.append((name, str(exc)))

    homogeneous = cfg.model == "homogeneous"
    attempt("T1", lambda: gw.bound_c(dist))
    if homogeneous:
        attempt("annular", lambda: gw.annular_bounds(cfg.M, cfg.d, cfg.p))
    else:
        skipped.append(("annular", "defined for homogeneous percolation only"))
    for e in eps_list:
        attempt(f"T2 eps={e}", lambda e=e: gw.bound_upor_dim(dist, e))
        attempt(f"T3 eps={e}", lambda e=e: gw.bound_lpor_dim(dist, e))
    if homogeneous:
        attempt("T4", lambda: gw.bound_upor_lower(cfg.M, cfg.d, cfg.p))
    else:
        skipped.append(("T4", "defined for homogeneous percolation only"))
    attempt("T5", lambda: gw.bound_lpor_lower(dist))
    rows = [r.to_row() for r in reports]
    cols = list(gw.BoundReport.FIELDS)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r[c] for c in cols])
    for name, why in skipped:
        print(f"# {name} not applicable: {why}")
    if args.out:
        out = _out(args)
        h = _manifest(args, cfg, 0, eps=args.eps).write(out)
        write_csv(out / "bounds.csv", cols, rows, h, not args.no_timestamp)
        (out / "bounds.json").write_text(json.dumps(
            {"q": q, "s": s, "reports": [r.to_dict() for r in reports],
             "not_applicable": [{"theorem": n, "reason": y} for n, y in skipped]},
            sort_keys=True, indent=1) + "\n")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = load_config(args)
    replicas = args.replicas or 1
    out = _out(args)
    _manifest(args, cfg, replicas).write(out)
    tree = sample_ensemble(cfg, replicas, workers=args.workers)
    (out / "tree.perc").write_bytes(serialize(tree))
    if args.json:
        (out / "tree.json").write_text(to_json(tree) + "\n")
    print(f"levels={tree.counts()} replicas={tree.n_replicas} q={tree.q!r}")
    return EXIT_OK


def cmd_mc(args) -> int:
    if not args.experiment:
        raise ParameterError(f"--experiment is required; known: {', '.join(EXPERIMENTS)}")
    seed = _seed_override(args)
    fallback = default_config(args.experiment, seed or 0)
    cfg = load_config(args, fallback)
    replicas = args.replicas or default_replicas(args.experiment)
    out = _out(args)
    h = _manifest(args, cfg, replicas, experiment=args.experiment, block=args.block, eps=args.eps,
                  level=args.level, mode=args.mode).write(out)
    eps = _eps_list(args.eps)[0]
    kw = {}
    if args.mode:
        kw["mode"] = args.mode
    res = run_experiment(args.experiment, cfg, replicas, args.workers, N=args.block, eps=eps,
                         level=args.level, **kw)
    name = res.experiment
    write_csv(out / f"{name}.csv", res.columns, res.rows, h, not args.no_timestamp)
    cols = ["experiment", "statistic", "estimate", "se", "target", "pass", "note"]
    srows = [dict(experiment=name, **s.row()) for s in res.summaries]
    write_csv(out / f"{name}_summary.csv", cols, srows, h, not args.no_timestamp)
    for s in srows:
        print(f"{name}: {s['statistic']} = {_fmt(s['estimate'])} (se {_fmt(s['se'])}) "
              f"target {_fmt(s['target'])} -> {s['pass']}")
    return EXIT_OK


def _load_tree(args):
    if args.tree:
        try:
            data = Path(args.tree).read_bytes()
        except OSError as exc:
            raise ParameterError(f"cannot read tree: {exc}") from exc
        tree = deserialize(data)
        return tree.replica_tree(0) if tree.n_replicas > 1 else tree
    return sample_ensemble(load_config(args), 1, workers=args.workers)


def cmd_render(args) -> int:
    tree = _load_tree(args)
    if tree.d != 2:
        raise ParameterError(f"rendering needs d=2, tree has d={tree.d}")
    mode = args.mode or "surviving"
    level = tree.depth if args.level is None else args.level
    out = _out(args)
    h = _manifest(args, tree.config, 1, mode=mode, level=level, tree=args.tree).write(out)
    if mode.startswith("pruned:"):
        rule = PruneRule(mode.split(":", 1)[1], args.block or 1)
        pruned = apply_prune(tree, rule)
        if not 0 <= level <= pruned.block_levels:
            raise ParameterError(f"block level {level} outside 0..{pruned.block_levels}")
        img = occupancy_pgm(pruned.selected_coords(level), level * rule.N, tree.M)
    elif mode in ("retained", "surviving"):
        if not 0 <= level <= tree.depth:
            raise ParameterError(f"level {level} outside 0..{tree.depth}")
        cells = tree.coords[level] if mode == "retained" else tree.surviving_coords(level)
        img = occupancy_pgm(cells, level, tree.M)
    elif mode in ("upor-heatmap", "lpor-heatmap"):
        pm = porosity_map(tree, level, g=args.g)
        vals = pm.upor if mode == "upor-heatmap" else pm.lpor
        img = heatmap_pgm(pm.cells, vals, level, tree.M)
    else:
        raise ParameterError(f"unknown render mode {mode!r}")
    path = out / f"render_{mode.replace(':', '_')}_L{level}.pgm"
    path.write_bytes(img)
    print(f"wrote {path} (manifest {h[:12]})")
    return EXIT_OK


def _points(args, tree) -> np.ndarray:
    src = args.points or "mu"
    if src == "mu":
        return sample_mu_points(tree, tree.depth, args.count)
    if src == "grid":
        lvl = min(tree.depth, 3) if args.level is None else args.level
        return representative_points(tree, lvl)[1]
    if src.startswith("file:"):
        try:
            pts = np.loadtxt(src[5:], ndmin=2)
        except OSError as exc:
            raise ParameterError(f"cannot read points: {exc}") from exc
        if pts.shape[1] != tree.d:
            raise ParameterError(f"points file has dimension {pts.shape[1]}, tree has {tree.d}")
        return pts
    raise ParameterError(f"unknown points source {src!r}; use mu, grid or file:PATH")


def cmd_porosity(args) -> int:
    tree = _load_tree(args)
    occ = OccupiedSet.from_tree(tree)
    out = _out(args)
    h = _manifest(args, tree.config, 1, points=args.points, preset=args.preset, count=args.count,
                  g=args.g, tree=args.tree, level=args.level).write(out)
    scales = scale_grid(tree.M, tree.d, tree.depth, args.g, args.preset, args.block or 1)
    if len(scales) < 3:
        raise ParameterError(f"depth {tree.depth} gives only {len(scales)} scales; need 3")
    rows, summary = [], []
    for i, x in enumerate(_points(args, tree)):
        up, lo, prof = upor_lpor_estimate(occ, x, scales, args.g)
        rows.extend(prof.rows(i))
        summary.append({"point": i, "x": " ".join(repr(float(v)) for v in x), "upor": up, "lpor": lo})
    ts = not args.no_timestamp
    write_csv(out / "porosity.csv", ["point", "x", "r", "por", "error"], rows, h, ts)
    write_csv(out / "porosity_summary.csv", ["point", "x", "upor", "lpor"], summary, h, ts)
    if summary:
        ups = [s["upor"] for s in summary]
        print(f"points={len(summary)} median upor={float(np.median(ups))!r} "
              f"mean lpor={float(np.mean([s['lpor'] for s in summary]))!r}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "sample": cmd_sample, "mc": cmd_mc, "render": cmd_render,
            "porosity": cmd_porosity}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="model configuration JSON")
    common.add_argument("--seed", type=_u64, help="master seed (overrides config and PERCOLAB_SEED)")
    common.add_argument("--replicas", type=int)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", help="output directory (default percolab-out; analyze writes files only when given)")
    common.add_argument("--eps", default="0.4", help="comma separated epsilon list")
    common.add_argument("--experiment")
    common.add_argument("--level", type=int)
    common.add_argument("--mode")
    common.add_argument("--no-timestamp", action="store_true")
    common.add_argument("--M", type=int)
    common.add_argument("--d", type=int)
    common.add_argument("--p", type=float)
    common.add_argument("--depth", type=int)
    common.add_argument("--block", type=int, help="block size N for pruning")
    common.add_argument("--tree", help="PERC1 tree file (render, porosity)")
    common.add_argument("--points", help="mu, grid or file:PATH (porosity)")
    common.add_argument("--count", type=int, default=100, help="number of mu points")
    common.add_argument("--preset", default="default", help="scale preset: default, T1, T2, T3")
    common.add_argument("-g", type=int, default=4, help="candidate lattice levels below the set")
    common.add_argument("--json", action="store_true", help="also write the JSON debug form")
    parser = argparse.ArgumentParser(prog="percolab", description="Fractal percolation toolkit")
    parser.add_argument("--version", action="version", version=f"percolab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_PARAM
    try:
        return COMMANDS[args.command](args)
    except SubcriticalError as exc:
        print(f"q=1\nsubcritical: {exc}", file=sys.stderr)
        return EXIT_SUBCRITICAL
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ParameterError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
