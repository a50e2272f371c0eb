"""Pruned block processes on survival-marked trees.

A rule selects, for every selected cube ``Q`` at block level n (tree level
nN), a subset of the surviving descendants of ``Q`` at tree level (n+1)N.
Selections are stored as boolean masks over tree rows, one per block level,
and computed for all replicas and all block cubes at once.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .gw import shell_width
from .mcube import linear_keys
from .porosity import BoxDimension, box_dimension, conical_central_cube, hole_meeting_blocks

log = logging.getLogger(__name__)

RULES = ("FullBlock", "AnnularIsolated", "AtLeastTwo", "DropCenter", "InteriorShell", "NotAll",
         "HoleDrop", "ConicalSelect")
RULE_ALIASES = {"T1": "FullBlock", "annular": "AnnularIsolated", "T2": "AtLeastTwo", "T3": "DropCenter",
                "T4": "InteriorShell", "T5": "NotAll", "holedrop": "HoleDrop", "conical": "ConicalSelect"}


@dataclass(frozen=True)
class PruneRule:
    tag: str
    N: int
    a: int | None = None
    N0: int | None = None
    net: int = 4096

    def __post_init__(self):
        tag = RULE_ALIASES.get(self.tag, self.tag)
        object.__setattr__(self, "tag", tag)
        if tag not in RULES:
            raise ParameterError(f"unknown prune rule {self.tag!r}; expected one of {RULES}")
        if self.N < 1:
            raise ParameterError("block size N must be >= 1")
        if tag == "ConicalSelect":
            if self.N0 is None or not 1 <= self.N0 < self.N:
                raise ParameterError("ConicalSelect needs 1 <= N0 < N")

    def check(self, M: int, d: int) -> None:
        if self.tag == "InteriorShell":
            a = self.shell(d)
            if self.N <= a:
                raise ParameterError(f"InteriorShell needs N > a = {a}")
            if M**a <= 2 * a:
                raise ParameterError(f"InteriorShell needs M^a > 2a (M={M}, a={a})")

    def shell(self, d: int) -> int:
        return self.a if self.a is not None else shell_width(d)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "N": self.N, "a": self.a, "N0": self.N0, "net": self.net}

    @classmethod
    def from_dict(cls, data: dict) -> "PruneRule":
        return cls(data["tag"], int(data["N"]), data.get("a"), data.get("N0"), int(data.get("net", 4096)))


@dataclass(eq=False)
class PrunedTree:
    tree: object
    rule: PruneRule
    selected: list[np.ndarray]
    notes: tuple[str, ...] = ()

    @property
    def block_levels(self) -> int:
        return len(self.selected) - 1

    def selected_rows(self, k: int, replica: int | None = None) -> np.ndarray:
        rows = np.flatnonzero(self.selected[k])
        if replica is not None:
            rows = rows[self.tree.replica[k * self.rule.N][rows] == replica]
        return rows

    def selected_coords(self, k: int, replica: int = 0) -> np.ndarray:
        return self.tree.coords[k * self.rule.N][self.selected_rows(k, replica)]

    def counts(self, k: int) -> np.ndarray:
        """Per-replica number of selected cubes at block level k."""
        lvl = k * self.rule.N
        return np.bincount(self.tree.replica[lvl], weights=self.selected[k],
                           minlength=self.tree.n_replicas).astype(np.int64)

    def offspring_counts(self, k: int) -> np.ndarray:
        """Selected block-(k+1) children of each selected block-k cube."""
        N = self.rule.N
        anc = ancestor_rows(self.tree, (k + 1) * N, k * N)
        per = np.bincount(anc[self.selected[k + 1]], minlength=len(self.selected[k]))
        return per[self.selected[k]]

    def equals(self, other: "PrunedTree") -> bool:
        return (self.rule == other.rule and self.tree.equals(other.tree)
                and len(self.selected) == len(other.selected)
                and all(np.array_equal(a, b) for a, b in zip(self.selected, other.selected)))

    def check_invariants(self) -> None:
        tree = self.tree
        N = self.rule.N
        for k, mask in enumerate(self.selected):
            assert np.all(tree.survives[k * N][mask])
            if k:
                anc = ancestor_rows(tree, k * N, (k - 1) * N)
                assert np.all(self.selected[k - 1][anc[mask]])


def ancestor_rows(tree, level: int, up_to: int) -> np.ndarray:
    """Row index at level ``up_to`` of each row's ancestor at ``level``."""
    idx = np.arange(len(tree.coords[level]))
    for n in range(level, up_to, -1):
        idx = tree.parent[n][idx]
    return idx


def _group_count(group: np.ndarray, mask: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(group[mask], minlength=size)


def _first_in_group(group: np.ndarray, flag: np.ndarray, size: int) -> np.ndarray:
    """Boolean mask marking, per group, the first flagged row (rows are lex-sorted)."""
    out = np.zeros(len(group), dtype=bool)
    rows = np.flatnonzero(flag)
    if len(rows):
        _, first = np.unique(group[rows], return_index=True)
        out[rows[first]] = True
    return out


def _rel(tree, level: int, up: int, anc: np.ndarray) -> np.ndarray:
    span = tree.M ** (level - up)
    return tree.coords[level] - tree.coords[up][anc] * span


def apply_prune(tree, rule: PruneRule) -> PrunedTree:
    """Block levels 0..depth//N of the rule's selection process."""
    if tree.survives is None:
        raise ParameterError("pruning needs survival marks")
    if tree.depth < rule.N:
        raise ParameterError(f"tree depth {tree.depth} is smaller than the block size {rule.N}")
    M, d, N = tree.M, tree.d, rule.N
    rule.check(M, d)
    full = M ** (d * N)
    notes: list[str] = []
    selected = [tree.survives[0].copy()]
    for k in range(tree.depth // N):
        up, lvl = k * N, (k + 1) * N
        anc = ancestor_rows(tree, lvl, up)
        surv = tree.survives[lvl]
        cand = surv & selected[k][anc]
        nup = len(tree.coords[up])
        cnt = _group_count(anc, cand, nup)
        tag = rule.tag
        if tag == "FullBlock":
            sel = cand & (cnt[anc] == full)
        elif tag == "AtLeastTwo":
            sel = cand & (cnt[anc] >= 2)
        elif tag == "NotAll":
            sel = cand & (cnt[anc] < full)
        elif tag == "DropCenter":
            span = M**N
            mid = (span - 1) // 2 if span % 2 else span // 2 - 1
            centre = np.all(_rel(tree, lvl, up, anc) == mid, axis=1)
            sel = cand & ~((cnt[anc] == full) & centre)
        elif tag == "AnnularIsolated":
            rel = _rel(tree, lvl, up, anc)
            span = M**N
            layer = np.minimum(rel, span - 1 - rel).min(axis=1)
            far = (layer >= 2) & ((layer - 1) ** 2 > d)
            sel = cand & ~((cnt[anc] == 1) & far)
        elif tag == "InteriorShell":
            a = rule.shell(d)
            mid_lvl = lvl - a
            anc_a = ancestor_rows(tree, lvl, mid_lvl)
            cnt_a = _group_count(anc_a, cand, len(tree.coords[mid_lvl]))
            rel = _rel(tree, lvl, mid_lvl, anc_a)
            span = M**a
            layer = np.minimum(rel, span - 1 - rel).min(axis=1)
            sel = cand & (cnt_a[anc_a] == M ** (d * a)) & (layer >= a)
        elif tag == "HoleDrop":
            sel = _hole_drop(tree, k, N, anc, cand, selected[k], notes)
        else:
            sel = _conical_select(tree, rule, lvl, cand, notes)
        selected.append(sel)
    return PrunedTree(tree, rule, selected, tuple(notes))


def _hole_drop(tree, k, N, anc, cand, sel_up, notes) -> np.ndarray:
    M, d = tree.M, tree.d
    up = k * N
    nup = len(tree.coords[up])
    # surviving children one level below each block cube
    c1 = tree.parent[up + 1]
    s1 = tree.survives[up + 1]
    rel1 = linear_keys(tree.coords[up + 1] - tree.coords[up][c1] * M, 1, M)
    missing = np.ones((nup, M**d), dtype=bool)
    missing[c1[s1], rel1[s1]] = False
    n_surv = (~missing).sum(1)
    mixed = (n_surv > 0) & (n_surv < M**d) & sel_up
    rows = np.flatnonzero(cand & mixed[anc])
    sel = cand.copy()
    if len(rows) == 0:
        return sel
    lvl = up + N
    rel = tree.coords[lvl][rows] - tree.coords[up][anc[rows]] * M**N
    meets, touches = hole_meeting_blocks(M, d, N, linear_keys(rel, N, M), anc[rows], missing)
    drop = np.zeros(len(sel), dtype=bool)
    drop[rows] = _first_in_group(anc[rows], meets, nup)
    has_hole = np.zeros(nup, dtype=bool)
    has_hole[anc[rows][meets]] = True
    fb = touches & ~has_hole[anc[rows]]
    fb_first = _first_in_group(anc[rows], fb, nup)
    drop[rows] |= fb_first
    n_fb = int(np.unique(anc[rows][fb]).size)
    n_none = int(np.setdiff1d(np.flatnonzero(mixed), anc[rows][meets | touches]).size)
    if n_fb:
        notes.append(f"block level {k}: {n_fb} cube(s) used the adjacent-cube fallback")
    if n_none:
        notes.append(f"block level {k}: {n_none} cube(s) had no hole-meeting descendant; nothing dropped")
    return sel & ~drop


def _conical_select(tree, rule, lvl, cand, notes) -> np.ndarray:
    M, d, N0 = tree.M, tree.d, rule.N0
    mid = lvl - N0
    anc = ancestor_rows(tree, lvl, mid)
    need = (M ** (d - 1) + 1) ** N0
    cnt = _group_count(anc, cand, len(tree.coords[mid]))
    sel = np.zeros(len(cand), dtype=bool)
    groups = np.flatnonzero(cnt >= need)
    if len(groups) == 0:
        return sel
    rows = np.flatnonzero(cand & (cnt[anc] >= need))
    order = np.argsort(anc[rows], kind="stable")
    rows = rows[order]
    bounds = np.searchsorted(anc[rows], groups, side="left")
    ends = np.searchsorted(anc[rows], groups, side="right")
    missed = 0
    for b, e in zip(bounds, ends):
        grp = rows[b:e]
        res = conical_central_cube(tree.coords[lvl][grp], M, lvl, rule.net)
        if res.found:
            sel[grp[res.index]] = True
        else:
            missed += 1
    if missed:
        log.info("conical search found no central cube in %d block(s) at level %d", missed, lvl)
        notes.append(f"level {lvl}: no central cube found in {missed} block(s)")
    return sel


@dataclass(frozen=True)
class BlockOffspringStats:
    pmf: np.ndarray
    mean: float
    se: float
    n: int

    def pmf_se(self) -> np.ndarray:
        return np.sqrt(self.pmf * (1 - self.pmf) / max(self.n, 1))


def block_offspring_stats(pruned, levels: range | None = None) -> BlockOffspringStats:
    """Pooled law of selected-children counts of selected block cubes."""
    items = pruned if isinstance(pruned, (list, tuple)) else [pruned]
    counts = []
    for p in items:
        ks = levels if levels is not None else range(p.block_levels)
        counts.extend(p.offspring_counts(k) for k in ks)
    pool = np.concatenate(counts) if counts else np.zeros(0, dtype=np.int64)
    if len(pool) == 0:
        raise ParameterError("no selected block cubes to pool")
    full = items[0].tree.M ** (items[0].tree.d * items[0].rule.N)
    pmf = np.bincount(pool, minlength=full + 1) / len(pool)
    sd = float(pool.std(ddof=1)) if len(pool) > 1 else 0.0
    return BlockOffspringStats(pmf, float(pool.mean()), sd / math.sqrt(len(pool)), len(pool))


@dataclass(frozen=True)
class PrunedDimension:
    extinct: bool
    estimate: BoxDimension | None
    counts: tuple[int, ...]


def pruned_dimension(pruned: PrunedTree, replica: int = 0, k_min: int = 1) -> PrunedDimension:
    """Box dimension of the pruned limit from selected counts per block level."""
    counts = [int(pruned.counts(k)[replica]) for k in range(pruned.block_levels + 1)]
    ks = list(range(k_min, len(counts)))
    if any(counts[k] == 0 for k in ks) or len(ks) < 3:
        extinct = any(c == 0 for c in counts)
        if not extinct:
            raise ParameterError("fewer than three block levels available")
        return PrunedDimension(True, None, tuple(counts))
    est = box_dimension([counts[k] for k in ks], [k * pruned.rule.N for k in ks], pruned.tree.M)
    return PrunedDimension(False, est, tuple(counts))
