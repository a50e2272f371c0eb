"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records a single PASS/FAIL line (printed in the terminal summary
and to stdout) before asserting, so a failing criterion still reports what
was measured.
"""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE
from percolab.cli import main
from percolab.experiments import default_config, default_replicas, run_experiment
from percolab.gw import (binomial_offspring, extinction_prob, survival_offspring,
                         survival_offspring_pmf)
from percolab.mcube import child_offsets
from percolab.porosity import OccupiedSet, box_dimension, porosity_at, scale_grid
from percolab.pruner import PruneRule, apply_prune
from percolab.sampler import PercolationConfig, sample_ensemble, surviving_counts

from test_gw import _enumerate_pmf

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def record(key: str, ok: bool, detail: str) -> None:
    line = f"criterion {key}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE[key] = line
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1


def _bisect_root(f, lo, hi, iters=200):
    for _ in range(iters):
        mid = (lo + hi) / 2
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


def test_c1_extinction_exactness():
    worst = 0.0
    for p in (0.6, 0.7, 0.8, 0.9):
        worst = max(worst, abs(extinction_prob(binomial_offspring(2, 1, p)) - ((1 - p) / p) ** 2))
    # (0.3 + 0.7t)^4 - t changes sign once on [0, 0.9]; the other root is t = 1
    oracle = _bisect_root(lambda t: (0.3 + 0.7 * t) ** 4 - t, 0.0, 0.9)
    q2 = extinction_prob(binomial_offspring(2, 2, 0.7))
    worst = max(worst, abs(q2 - oracle))
    record("1", worst <= 1e-9, f"max |q - oracle| = {worst:.2e} (tol 1e-9); d=2 q = {q2:.12f}")


# ---------------------------------------------------------------- 2


def test_c2_conditional_mean():
    R, chunk = 100_000, 20_000
    bad, worst = [], 0.0
    for d in (1, 2):
        for p in (0.7, 0.8):
            cfg = PercolationConfig(2, d, 3, p=p, seed=1000 + 10 * d + int(10 * p), condition=True)
            parts = []
            for a in range(0, R, chunk):
                e = sample_ensemble(cfg, np.arange(a, a + chunk))
                parts.append(np.stack([surviving_counts(e, N) for N in (1, 2, 3)], axis=1))
            z = np.concatenate(parts)
            for j, N in enumerate((1, 2, 3)):
                est, se = z[:, j].mean(), z[:, j].std(ddof=1) / math.sqrt(R)
                target = (p * 2**d) ** N
                dev = abs(est - target) / se
                worst = max(worst, dev)
                if dev > 3:
                    bad.append(f"d={d} p={p} N={N}: {est:.4f} vs {target:.4f}")
    record("2", not bad, f"12 cases, worst deviation {worst:.2f} se (tol 3)" + (f"; {bad}" if bad else ""))


# ---------------------------------------------------------------- 3


def test_c3_survival_pmf():
    B = binomial_offspring(2, 1, 0.8)
    e1 = np.max(np.abs(survival_offspring_pmf(B, 1) - [0, 0.4, 0.6]))
    exact = _enumerate_pmf(Fraction(4, 5), 2)
    e2 = np.max(np.abs(survival_offspring_pmf(B, 2) - np.array([float(x) for x in exact])))
    e3 = 0.0
    for N in (1, 2, 3):
        pmf, so = survival_offspring_pmf(B, N), survival_offspring(B, N)
        e3 = max(e3, abs(pmf[-1] - so.p_top), abs(pmf[1] - so.p_one))
    ok = e1 <= 1e-10 and e2 <= 1e-12 and e3 <= 1e-10
    record("3", ok, f"N=1 err {e1:.1e}; N=2 vs exact enumeration {e2:.1e}; closed forms N<=3 {e3:.1e}")


# ---------------------------------------------------------------- 4


def test_c4_offspring_law():
    R = 100_000
    pvals = []
    for d in (1, 2):
        cfg = PercolationConfig(2, d, 1, p=0.8, seed=400 + d)
        t = sample_ensemble(cfg, R, mark=False)
        k = np.bincount(np.bincount(t.replica[1], minlength=R), minlength=2**d + 1)
        exp = np.array(cfg.offspring().pmf) * R
        pvals.append(stats.chisquare(k, exp).pvalue)
    record("4", min(pvals) > 1e-3, f"chi-square p-values d=1: {pvals[0]:.3f}, d=2: {pvals[1]:.3f} (need > 1e-3)")


# ---------------------------------------------------------------- 5


def test_c5_dimension():
    res = run_experiment("dim-check", default_config("dim-check", 0), 20)
    est = res.summaries[0].estimate
    s = res.summaries[0].target
    lv = list(range(1, 9))
    syn = abs(box_dimension([2.0 ** (s * j) for j in lv], lv, 2).slope - s)
    ok = abs(est - s) <= 0.1 and syn <= 1e-9
    record("5", ok, f"20-replica mean slope {est:.4f} vs s = {s:.6f} (tol 0.1); synthetic error {syn:.1e}")


# ---------------------------------------------------------------- 6


def test_c6_bound_table(capsys):
    assert main(["analyze", "--M", "2", "--d", "1", "--p", "0.8", "--eps", "0.4"]) == 0
    out = capsys.readouterr().out
    rows = {}
    for ln in out.splitlines():
        f = ln.split(",")
        if f[0] in ("T1", "T2", "T3", "T5"):
            rows[f[0]] = dict(N=int(f[4]), E_L=float(f[5]), delta=float(f[7]) if f[7] else None,
                              constants=dict(kv.split("=") for kv in f[8].split(";")))
    # formula evaluation, independent of the package
    s = math.log(1.6) / math.log(2)
    want = {
        "c": 0.5 * 2 ** -2,
        "T2": s - math.log(2.56 - 0.4**2) / (2 * math.log(2)),
        "T3": s - math.log(1.6**3 - 0.6**7) / (3 * math.log(2)),
        "T5": math.log(2.56 - 4 * 0.6**3) / (2 * math.log(2)),
        "T5eps": 0.5 * 2 ** -4,
    }
    got = {
        "c": float(rows["T1"]["constants"]["c"]), "T2": rows["T2"]["delta"], "T3": rows["T3"]["delta"],
        "T5": rows["T5"]["delta"], "T5eps": float(rows["T5"]["constants"]["eps"]),
    }
    Ns = (rows["T1"]["N"], rows["T2"]["N"], rows["T3"]["N"], rows["T5"]["N"])
    err = max(abs(got[k] - want[k]) for k in want)
    ok = Ns == (2, 2, 3, 2) and err <= 1e-6
    printed = {"T2": 0.046553, "T3": 0.003238, "T5": 0.381166}
    gap = ", ".join(f"{k} {got[k]:.6f} vs listed {v}" for k, v in printed.items())
    record("6", ok, f"N* = {Ns}, max |value - oracle| = {err:.1e} (tol 1e-6); {gap}")


# ---------------------------------------------------------------- 7


@pytest.fixture(scope="module")
def prune_results():
    return {t: run_experiment(f"prune-{t}", default_config(f"prune-{t}", 0), default_replicas(f"prune-{t}"))
            for t in ("T1", "T2", "T3", "T5")}


def test_c7a_pruned_means(prune_results):
    parts, ok = [], True
    for tag, res in prune_results.items():
        s = res.summaries[0]
        ok &= bool(s.passed)
        parts.append(f"{tag} {s.estimate:.4f}+-{s.se:.4f} vs {s.target:.4f}")
    record("7a", ok, "; ".join(parts) + " (3 se, 1e5 conditioned replicas)")


def test_c7b_full_block_survival(prune_results):
    res = prune_results["T1"]
    freq = next(s for s in res.summaries if s.statistic.startswith("P(") and "exact" not in s.statistic)
    exact = next(s for s in res.summaries if "exact" in s.statistic)
    record("7b", bool(freq.passed),
           f"P(selected at block level 5) = {freq.estimate:.4f} (need <= 0.01); "
           f"exact value for the subcritical block law is {exact.target:.4f}, matched: {exact.passed}")


# ---------------------------------------------------------------- 8


def test_c8_porosity_geometry():
    full = OccupiedSet(child_offsets(2**6, 2), 6, 2)
    vals = [porosity_at(full, x, r).rho for x in [(0.5, 0.5), (0.3, 0.6), (0.71, 0.44)]
            for r in scale_grid(2, 2, 6, j_min=2) if all(min(c, 1 - c) >= r for c in x)]
    full_ok = len(vals) > 0 and max(vals) == 0.0
    half = OccupiedSet([[0]], 1, 2)
    hs = [(porosity_at(half, [0.5], r, g=10)) for r in scale_grid(2, 1, 1, g=10)]
    half_ok = len(hs) >= 3 and all(abs(v.rho - 0.5) <= v.error for v in hs)
    rng = np.random.default_rng(8)
    mono_bad = 0
    for _ in range(1000):
        k = int(rng.integers(2, 40))
        cells = np.unique(rng.integers(0, 8, size=(k, 2)), axis=0)
        keep = rng.random(len(cells)) < 0.6
        keep[0] = True
        x = (cells[0] + rng.random(2)) / 8
        r = float(rng.choice([0.7, 0.5, 0.25, 0.125]))
        a = porosity_at(OccupiedSet(cells, 3, 2), x, r, g=3).rho
        b = porosity_at(OccupiedSet(cells[keep], 3, 2), x, r, g=3).rho
        mono_bad += b < a
    ok = full_ok and half_ok and mono_bad == 0
    record("8", ok, f"full cube max por {max(vals) if vals else None}; half-space {len(hs)} scales within error: "
                    f"{half_ok}; monotonicity violations {mono_bad}/1000")


# ---------------------------------------------------------------- 9


def test_c9_not_all_witness():
    M, d, N, depth = 2, 1, 2, 12
    eps = 0.5 / math.sqrt(d) * M ** (-2 * N)
    cfg = PercolationConfig(M, d, depth, p=0.8, seed=909, condition=True)
    t = sample_ensemble(cfg, 400)
    pr = apply_prune(t, PruneRule("NotAll", N))
    scales = scale_grid(M, d, depth, g=4, preset="T1", N=N)
    pts, worst, fails = 0, math.inf, 0
    for i in range(t.n_replicas):
        sel = pr.selected_coords(pr.block_levels, i)
        if len(sel) == 0:
            continue
        occ = OccupiedSet(t.surviving_coords(depth, i), depth, M)
        for c in sel[:5]:
            x = (c + 0.5) / M**depth
            for r in scales:
                v = porosity_at(occ, x, r, g=4)
                worst = min(worst, v.rho - (eps - v.error))
                fails += v.rho < eps - v.error
            pts += 1
            if pts == 1000:
                break
        if pts == 1000:
            break
    ok = pts == 1000 and fails == 0
    record("9", ok, f"{pts} points x {len(scales)} scales, {fails} below {eps} - error; "
                    f"smallest margin {worst:.4f}")


# ---------------------------------------------------------------- 10


def test_c10_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"M":2,"d":2,"depth":8,"model":{"type":"homogeneous","p":0.7},"seed":42,"condition":true}')
    runs = {}
    for w in (1, 4, 8):
        base = tmp_path / f"w{w}"
        cmds = [
            ["sample", "--config", str(cfg), "--replicas", "6", "--out", str(base / "sample")],
            ["mc", "--experiment", "EL-check", "--replicas", "30000", "--seed", "5", "--no-timestamp",
             "--out", str(base / "mc")],
            ["render", "--config", str(cfg), "--level", "6", "--out", str(base / "render")],
            ["render", "--config", str(cfg), "--level", "4", "--mode", "upor-heatmap", "--out", str(base / "heat")],
            ["porosity", "--config", str(cfg), "--count", "10", "--no-timestamp", "--out", str(base / "por")],
        ]
        for c in cmds:
            assert main(c + ["--workers", str(w)]) == 0
        runs[w] = {p.relative_to(base): p.read_bytes() for p in sorted(base.rglob("*"))
                   if p.is_file() and p.name != "manifest.json"}
    same = runs[1] == runs[4] == runs[8]
    record("10", same and len(runs[1]) >= 6,
           f"{len(runs[1])} files (tree, CSVs, images) byte-identical across 1/4/8 workers: {same}")


# ---------------------------------------------------------------- 11


def test_c11_levelset_concentration():
    res = run_experiment("levelset-beta", default_config("levelset-beta", 0), 100)
    s = {x.statistic: x for x in res.summaries}
    diff = s["beta A - B"]
    record("11", bool(diff.passed),
           f"beta A {s['beta batch A'].estimate:.4f}+-{s['beta batch A'].se:.4f}, "
           f"B {s['beta batch B'].estimate:.4f}+-{s['beta batch B'].se:.4f}, "
           f"difference {diff.estimate:.4f} vs 3 sigma {3 * diff.se:.4f}; "
           f"member fraction {s['member fraction'].estimate:.3f}")
