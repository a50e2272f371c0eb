"""Monte Carlo experiments behind ``percolab mc``.

Each experiment processes replicas in fixed-size chunks (so results never
depend on the worker count), returns per-replica rows and one or more
summary rows with estimate, standard error, analytic target and a pass flag.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats

from . import gw
from .errors import ParameterError
from .porosity import OccupiedSet, box_dimension, level_set, upor_lpor_estimate
from .pruner import PruneRule, apply_prune
from .sampler import PercolationConfig, sample_ensemble, sample_mu_points, surviving_counts

CHUNK = 10_000


@dataclass
class Summary:
    statistic: str
    estimate: float
    se: float
    target: float | None
    passed: bool | None
    note: str = ""

    def row(self) -> dict:
        return {"statistic": self.statistic, "estimate": self.estimate, "se": self.se,
                "target": "" if self.target is None else self.target,
                "pass": "n/a" if self.passed is None else ("PASS" if self.passed else "FAIL"),
                "note": self.note}


@dataclass
class ExperimentResult:
    experiment: str
    params: dict
    columns: list[str]
    rows: list[list]
    summaries: list[Summary] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed is not False for s in self.summaries)


def within(est: float, se: float, target: float, k: float = 3.0) -> bool:
    return abs(est - target) <= k * se


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()) if len(v) else math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def _chunks(n: int, size: int = CHUNK) -> list[tuple[int, int]]:
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def map_chunks(fn: Callable, cfg: PercolationConfig, replicas: int, workers: int, extra=(),
               size: int = CHUNK) -> list:
    """Apply ``fn(cfg, start, stop, *extra)`` to every replica chunk, in order."""
    jobs = _chunks(replicas, size)
    if workers <= 1 or len(jobs) == 1:
        return [fn(cfg, a, b, *extra) for a, b in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, cfg, a, b, *extra) for a, b in jobs]
        return [f.result() for f in futs]


def _ensemble(cfg, start, stop):
    return sample_ensemble(cfg, np.arange(start, stop))


# ---------------------------------------------------------------- EL / pmf / dim


def _el_chunk(cfg, start, stop, N):
    e = _ensemble(cfg, start, stop)
    return surviving_counts(e, N), e.rejections


def exp_el_check(cfg: PercolationConfig, replicas: int, workers: int, N: int) -> ExperimentResult:
    cfg = replace(cfg, depth=N, condition=True)
    parts = map_chunks(_el_chunk, cfg, replicas, workers, (N,))
    z = np.concatenate([p[0] for p in parts])
    rej = np.concatenate([p[1] for p in parts])
    target = cfg.offspring().mean ** N
    est, se = mean_se(z)
    q = gw.extinction_prob(cfg.offspring())
    acc = replicas / (replicas + rej.sum())
    acc_se = math.sqrt(acc * (1 - acc) / (replicas + rej.sum()))
    rows = [[i, int(z[i]), int(rej[i])] for i in range(replicas)]
    return ExperimentResult("EL-check", {"N": N}, ["replica", "Z_N", "rejections"], rows, [
        Summary(f"E(Z_{N} | survival)", est, se, target, within(est, se, target)),
        Summary("acceptance rate", acc, acc_se, 1 - q, within(acc, acc_se, 1 - q)),
    ])


def _pmf_chunk(cfg, start, stop):
    e = _ensemble(cfg, start, stop)
    return np.bincount(e.replica[1], minlength=stop - start)


def exp_pmf_check(cfg: PercolationConfig, replicas: int, workers: int) -> ExperimentResult:
    cfg = replace(cfg, depth=1, condition=False)
    k = np.concatenate(map_chunks(_pmf_chunk, cfg, replicas, workers))
    pmf = np.array(cfg.offspring().pmf)
    obs = np.bincount(k, minlength=len(pmf)).astype(float)
    exp = pmf * replicas
    # pool sparse cells so every expected count is at least 5
    o_cells, e_cells, acc_o, acc_e = [], [], 0.0, 0.0
    for o, x in zip(obs, exp):
        acc_o += o
        acc_e += x
        if acc_e >= 5:
            o_cells.append(acc_o)
            e_cells.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and e_cells:
        o_cells[-1] += acc_o
        e_cells[-1] += acc_e
    chi = stats.chisquare(o_cells, e_cells)
    est, se = mean_se(k)
    rows = [[i, int(k[i])] for i in range(replicas)]
    return ExperimentResult("pmf-check", {}, ["replica", "children"], rows, [
        Summary("mean children", est, se, float(pmf @ np.arange(len(pmf))),
                within(est, se, float(pmf @ np.arange(len(pmf))))),
        Summary("chi-square p-value", float(chi.pvalue), math.nan, 1e-3, bool(chi.pvalue > 1e-3),
                "pass when p > 1e-3"),
    ])


def _dim_chunk(cfg, start, stop, j_min):
    e = _ensemble(cfg, start, stop)
    z = np.array([surviving_counts(e, j) for j in range(cfg.depth + 1)]).T
    levels = list(range(j_min, cfg.depth + 1))
    return [box_dimension(z[i, j_min:], levels, cfg.M).slope for i in range(len(z))]


def exp_dim_check(cfg: PercolationConfig, replicas: int, workers: int, j_min: int = 2,
                  tol: float = 0.1) -> ExperimentResult:
    cfg = replace(cfg, condition=True)
    slopes = np.concatenate(map_chunks(_dim_chunk, cfg, replicas, workers, (j_min,), size=50))
    s = gw.fractal_dimension(cfg.offspring())
    est, se = mean_se(slopes)
    rows = [[i, float(slopes[i])] for i in range(replicas)]
    return ExperimentResult("dim-check", {"j_min": j_min, "tol": tol}, ["replica", "box_dimension"], rows, [
        Summary("box dimension", est, se, s, abs(est - s) <= tol, f"pass when |est - s| <= {tol}"),
    ])


# ---------------------------------------------------------------- pruning


def _prune_chunk(cfg, start, stop, rule, survive_level):
    e = _ensemble(cfg, start, stop)
    p = apply_prune(e, rule)
    counts = np.concatenate([p.offspring_counts(k) for k in range(p.block_levels)])
    alive = p.counts(survive_level) > 0 if survive_level is not None else None
    return counts, alive, p.notes


def _bound_for(tag: str, dist: gw.OffspringDistribution, cfg: PercolationConfig, eps: float):
    if tag == "T1":
        return gw.bound_c(dist)
    if tag == "T2":
        return gw.bound_upor_dim(dist, eps)
    if tag == "T3":
        return gw.bound_lpor_dim(dist, eps)
    if tag == "T4":
        return gw.bound_upor_lower(cfg.M, cfg.d, cfg.p)
    if tag == "T5":
        return gw.bound_lpor_lower(dist)
    if tag == "annular":
        return gw.annular_bounds(cfg.M, cfg.d, cfg.p)
    if tag == "holedrop":
        return gw.bound_upor_dim(dist, eps, mode="hole")
    return None


def exp_prune(cfg: PercolationConfig, replicas: int, workers: int, tag: str, eps: float = 0.4,
              N: int | None = None, blocks: int = 2, N0: int = 2) -> ExperimentResult:
    dist = cfg.offspring()
    report = _bound_for(tag, dist, cfg, eps)
    if N is None:
        N = report.N if report is not None else 3
    rule = PruneRule(tag, N, N0=N0 if tag == "conical" else None)
    survive_level = blocks if tag == "T1" else None
    cfg = replace(cfg, depth=N * blocks, condition=True)
    parts = map_chunks(_prune_chunk, cfg, replicas, workers, (rule, survive_level),
                       size=CHUNK if cfg.d == 1 else 1000)
    counts = np.concatenate([p[0] for p in parts])
    est, se = mean_se(counts)
    full = cfg.M ** (cfg.d * N)
    pmf = np.bincount(counts, minlength=full + 1) / max(len(counts), 1)
    rows = [[k, float(pmf[k])] for k in range(full + 1)]
    params = {"rule": rule.tag, "N": N, "blocks": blocks}
    out = ExperimentResult(f"prune-{tag}", params, ["children", "frequency"], rows)
    if tag in ("T1", "T2", "T3", "T4", "T5"):
        out.summaries.append(Summary("block offspring mean", est, se, report.E_L, within(est, se, report.E_L)))
    elif tag == "annular":
        exact = report.constants["E_L_exact"]
        out.summaries.append(Summary("block offspring mean", est, se, exact, within(est, se, exact),
                                     "target is the exact mean of the rule"))
        out.summaries.append(Summary("formula E(L)", report.E_L, 0.0, None, None,
                                     f"verdict {report.verdict}"))
    elif tag == "holedrop":
        out.summaries.append(Summary("block offspring mean", est, se, report.E_L, est >= report.E_L - 3 * se,
                                     "one-sided: pass when est >= target - 3 se"))
    else:
        out.summaries.append(Summary("block offspring mean", est, se, None, None, "no closed form"))
    if tag == "T1":
        alive = np.concatenate([p[1] for p in parts])
        freq = float(alive.mean())
        fse = math.sqrt(freq * (1 - freq) / len(alive))
        if report.verdict == "subcritical":
            out.summaries.append(Summary(f"P(selected at block level {blocks})", freq, fse, 0.01, freq <= 0.01,
                                         "pass when frequency <= 0.01 (subcritical verdict)"))
        # the exact survival probability of the pruned block process
        off = np.zeros(full + 1)
        off[0], off[full] = 1 - report.E_L / full, report.E_L / full
        ext = 0.0
        for _ in range(blocks):
            ext = float(np.polyval(off[::-1], ext))
        out.summaries.append(Summary(f"P(selected at block level {blocks}) exact", freq, fse, 1 - ext,
                                     within(freq, fse, 1 - ext)))
    notes = sorted({n for p in parts for n in p[2]})
    out.params["notes"] = len(notes)
    return out


# ---------------------------------------------------------------- porosity


def _por_chunk(cfg, start, stop, n_points, g):
    e = _ensemble(cfg, start, stop)
    out = []
    for i in range(stop - start):
        tr = e.replica_tree(i)
        occ = OccupiedSet.from_tree(tr)
        for j, x in enumerate(sample_mu_points(tr, tr.depth, n_points)):
            u, l, _ = upor_lpor_estimate(occ, x, g=g)
            out.append((start + i, j, u, l))
    return out


def exp_porosity_extremal(cfg: PercolationConfig, replicas: int, workers: int, points: int = 20,
                          g: int = 4, threshold: float = 0.4) -> ExperimentResult:
    cfg = replace(cfg, condition=True)
    rows = [list(r) for part in map_chunks(_por_chunk, cfg, replicas, workers, (points, g), size=1)
            for r in part]
    up = np.array([r[2] for r in rows])
    med = float(np.median(up))
    # standard error of the median from the asymptotic normal approximation
    dens = stats.gaussian_kde(up)(med)[0] if len(np.unique(up)) > 1 else math.inf
    se = float(1 / (2 * dens * math.sqrt(len(up))))
    return ExperimentResult("porosity-extremal", {"points": points, "g": g},
                            ["replica", "point", "upor", "lpor"], rows, [
        Summary("median upor", med, se, threshold, med >= threshold, f"pass when median >= {threshold}"),
        Summary("mean lpor", *mean_se([r[3] for r in rows]), None, None),
    ])


def _ls_chunk(cfg, start, stop, alpha, mode, level, g, j_min):
    e = _ensemble(cfg, start, stop)
    out = []
    for i in range(stop - start):
        ls = level_set(e.replica_tree(i), alpha, mode, level, g=g, j_min=j_min)
        beta = ls.beta if ls.beta is not None else 0.0
        out.append((start + i, len(ls.members), ls.n_candidates, beta))
    return out


def exp_levelset(cfg: PercolationConfig, replicas: int, workers: int, alpha: float = 0.45,
                 mode: str = "upor<=", level: int | None = None, g: int = 4,
                 j_min: int = 1) -> ExperimentResult:
    """Level-set dimension estimates from two disjoint halves of the replicas."""
    cfg = replace(cfg, condition=True)
    level = max(3, cfg.depth - 6) if level is None else level
    rows = [list(r) for part in map_chunks(_ls_chunk, cfg, replicas, workers,
                                           (alpha, mode, level, g, j_min), size=1) for r in part]
    beta = np.array([r[3] for r in rows])
    half = replicas // 2
    a, sa = mean_se(beta[:half])
    b, sb = mean_se(beta[half:2 * half])
    diff = a - b
    sd = math.hypot(sa, sb)
    frac = np.array([r[1] / r[2] for r in rows])
    return ExperimentResult("levelset-beta", {"alpha": alpha, "mode": mode, "level": level},
                            ["replica", "members", "candidates", "beta"], rows, [
        Summary("beta batch A", a, sa, None, None),
        Summary("beta batch B", b, sb, None, None),
        Summary("beta A - B", diff, sd, 0.0, within(diff, sd, 0.0), "batches agree within 3 sigma"),
        Summary("member fraction", *mean_se(frac), None, None),
    ])


EXPERIMENTS = ("EL-check", "pmf-check", "dim-check", "prune-T1", "prune-T2", "prune-T3", "prune-T4",
               "prune-T5", "prune-annular", "prune-holedrop", "prune-conical", "porosity-extremal",
               "levelset-beta")
ALIASES = {"levelset-β": "levelset-beta"}

# default model and replica count per experiment
DEFAULTS = {
    "EL-check": (dict(M=2, d=2, depth=2, p=0.7), 100_000),
    "pmf-check": (dict(M=2, d=1, depth=1, p=0.8), 100_000),
    "dim-check": (dict(M=2, d=2, depth=10, p=0.7), 20),
    "prune-T1": (dict(M=2, d=1, depth=10, p=0.8), 100_000),
    "prune-T2": (dict(M=2, d=1, depth=4, p=0.8), 100_000),
    "prune-T3": (dict(M=2, d=1, depth=6, p=0.8), 100_000),
    "prune-T4": (dict(M=2, d=1, depth=10, p=0.8), 10_000),
    "prune-T5": (dict(M=2, d=1, depth=4, p=0.8), 100_000),
    "prune-annular": (dict(M=2, d=2, depth=6, p=0.5), 20_000),
    "prune-holedrop": (dict(M=2, d=1, depth=4, model="general", pmf=(0.1, 0.3, 0.6),
                            placement="uniform-subset"), 100_000),
    "prune-conical": (dict(M=2, d=2, depth=6, p=0.8), 50),
    "porosity-extremal": (dict(M=2, d=2, depth=12, p=0.7), 10),
    "levelset-beta": (dict(M=2, d=1, depth=14, p=0.8), 100),
}


def default_config(experiment: str, seed: int = 0) -> PercolationConfig:
    experiment = ALIASES.get(experiment, experiment)
    if experiment not in DEFAULTS:
        raise ParameterError(f"unknown experiment {experiment!r}; known: {', '.join(EXPERIMENTS)}")
    kw, _ = DEFAULTS[experiment]
    return PercolationConfig(seed=seed, **kw)


def default_replicas(experiment: str) -> int:
    return DEFAULTS[ALIASES.get(experiment, experiment)][1]


def run_experiment(experiment: str, cfg: PercolationConfig, replicas: int, workers: int = 1,
                   N: int | None = None, eps: float = 0.4, alpha: float = 0.45,
                   level: int | None = None, mode: str = "upor<=") -> ExperimentResult:
    experiment = ALIASES.get(experiment, experiment)
    if experiment not in EXPERIMENTS:
        raise ParameterError(f"unknown experiment {experiment!r}; known: {', '.join(EXPERIMENTS)}")
    if replicas < 1:
        raise ParameterError("replicas must be >= 1")
    if experiment == "EL-check":
        return exp_el_check(cfg, replicas, workers, N or cfg.depth)
    if experiment == "pmf-check":
        return exp_pmf_check(cfg, replicas, workers)
    if experiment == "dim-check":
        return exp_dim_check(cfg, replicas, workers)
    if experiment.startswith("prune-"):
        tag = experiment[len("prune-"):]
        if N is None:
            report = _bound_for(tag, cfg.offspring(), cfg, eps)
            N = report.N if report is not None else 3
        return exp_prune(cfg, replicas, workers, tag, eps, N, blocks=max(1, cfg.depth // N))
    if experiment == "porosity-extremal":
        return exp_porosity_extremal(cfg, replicas, workers)
    return exp_levelset(cfg, replicas, workers, alpha, mode, level)
