"""Reproducible sampling of percolation trees on M-adic cube trees.

Trees are grown level by level with numpy: each level holds the integer
coordinates of its retained cubes (sorted by replica, then lexicographically),
the row index of each cube's parent one level up, and optionally a survival
mark. All randomness comes from :mod:`percolab.streams`, keyed on the cube
address, so a tree is a pure function of its configuration.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import streams
from .errors import ParameterError, ResourceCapError, SubcriticalError
from .gw import (OffspringDistribution, binomial_offspring, extinction_prob, general_offspring,
                 poisson_binomial_offspring)
from .mcube import child_offsets, max_level

PLACEMENTS = ("bernoulli-independent", "uniform-subset", "corner-packed",
              "hyperplane-biased", "custom-seeded")
MODELS = ("homogeneous", "inhomogeneous", "general")
DEFAULT_NODE_CAP = 10**8
DEFAULT_REJECTION_CAP = 10**6


@dataclass(frozen=True)
class PercolationConfig:
    M: int
    d: int
    depth: int
    model: str = "homogeneous"
    p: float | None = None
    probs: tuple[float, ...] | None = None
    pmf: tuple[float, ...] | None = None
    placement: str = "bernoulli-independent"
    weights: tuple[float, ...] | None = None
    seed: int = 0
    condition: bool = False
    node_cap: int = DEFAULT_NODE_CAP

    def __post_init__(self):
        for name in ("probs", "pmf", "weights"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(float(x) for x in val))
        if self.M < 2 or self.d < 1:
            raise ParameterError(f"need M >= 2 and d >= 1, got M={self.M}, d={self.d}")
        if self.depth < 1:
            raise ParameterError(f"depth must be >= 1, got {self.depth}")
        if self.depth > max_level(self.M):
            raise ParameterError(f"depth {self.depth} exceeds the coordinate range for M={self.M}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")
        if self.model not in MODELS:
            raise ParameterError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.placement not in PLACEMENTS:
            raise ParameterError(f"unknown placement policy {self.placement!r}")
        if self.model == "general":
            if self.pmf is None:
                raise ParameterError("the general model needs an offspring pmf")
            if self.placement == "bernoulli-independent":
                raise ParameterError("the general model needs a count-then-place policy")
            if self.placement == "custom-seeded":
                w = self.weights
                if w is None or len(w) != self.M**self.d or min(w) <= 0:
                    raise ParameterError("custom-seeded placement needs M^d positive weights")
        else:
            if self.placement != "bernoulli-independent":
                raise ParameterError(f"the {self.model} model draws children independently; "
                                     "placement must be bernoulli-independent")
            if self.model == "homogeneous" and self.p is None:
                raise ParameterError("the homogeneous model needs p")
            if self.model == "inhomogeneous" and self.probs is None:
                raise ParameterError("the inhomogeneous model needs probs")
        self.offspring()  # validates model parameters

    def offspring(self) -> OffspringDistribution:
        if self.model == "homogeneous":
            return binomial_offspring(self.M, self.d, self.p)
        if self.model == "inhomogeneous":
            return poisson_binomial_offspring(self.M, self.d, self.probs)
        return general_offspring(self.M, self.d, self.pmf)

    def model_dict(self) -> dict:
        out: dict = {"type": self.model}
        if self.model == "homogeneous":
            out["p"] = self.p
        elif self.model == "inhomogeneous":
            out["probs"] = list(self.probs)
        else:
            out["pmf"] = list(self.pmf)
            out["placement"] = self.placement
            if self.weights is not None:
                out["weights"] = list(self.weights)
        return out

    def to_dict(self) -> dict:
        return {"M": self.M, "d": self.d, "depth": self.depth, "model": self.model_dict(),
                "seed": self.seed, "condition": self.condition}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, **overrides) -> "PercolationConfig":
        try:
            model = dict(data["model"])
            kind = model.pop("type")
            kw = dict(M=int(data["M"]), d=int(data["d"]), depth=int(data["depth"]), model=kind,
                      seed=int(data.get("seed", 0)), condition=bool(data.get("condition", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"malformed configuration: {exc}") from exc
        if kind == "homogeneous":
            kw["p"] = float(model.get("p", math.nan))
        elif kind == "inhomogeneous":
            kw["probs"] = model.get("probs")
        elif kind == "general":
            kw["pmf"] = model.get("pmf")
            kw["placement"] = model.get("placement", "uniform-subset")
            kw["weights"] = model.get("weights")
        if "node_cap" in data:
            kw["node_cap"] = int(data["node_cap"])
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str, **overrides) -> "PercolationConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"configuration is not valid JSON: {exc}") from exc
        return cls.from_dict(data, **overrides)


@dataclass(eq=False)
class PercolationTree:
    """Retained cubes of one or more replicas, level by level.

    ``coords[n]`` has shape (count, d); ``parent[n]`` gives row indices into
    level n-1 (empty for the root level); ``replica[n]`` tags each row with its
    replica index; ``survives[n]`` holds survival marks once assigned.
    """

    config: PercolationConfig
    coords: list[np.ndarray]
    parent: list[np.ndarray]
    replica: list[np.ndarray]
    seeds: np.ndarray
    survives: list[np.ndarray] | None = None
    q: float | None = None
    rejections: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def depth(self) -> int:
        return len(self.coords) - 1

    @property
    def n_replicas(self) -> int:
        return len(self.seeds)

    @property
    def M(self) -> int:
        return self.config.M

    @property
    def d(self) -> int:
        return self.config.d

    def counts(self) -> list[int]:
        return [len(c) for c in self.coords]

    def n_nodes(self) -> int:
        return sum(self.counts())

    def equals(self, other: "PercolationTree") -> bool:
        if self.config != other.config or self.depth != other.depth:
            return False
        if not np.array_equal(self.seeds, other.seeds) or (self.q != other.q):
            return False
        if (self.survives is None) != (other.survives is None):
            return False
        for n in range(self.depth + 1):
            if not (np.array_equal(self.coords[n], other.coords[n])
                    and np.array_equal(self.replica[n], other.replica[n])
                    and np.array_equal(self.parent[n], other.parent[n])):
                return False
            if self.survives is not None and not np.array_equal(self.survives[n], other.survives[n]):
                return False
        return np.array_equal(self.rejections, other.rejections)

    def replica_tree(self, i: int) -> "PercolationTree":
        """The single-replica tree of replica ``i``."""
        if not 0 <= i < self.n_replicas:
            raise ParameterError(f"replica {i} out of range")
        coords, parent, rep, surv = [], [], [], []
        prev_map = None
        for n in range(self.depth + 1):
            rows = np.flatnonzero(self.replica[n] == i)
            coords.append(self.coords[n][rows])
            rep.append(np.zeros(len(rows), dtype=np.int64))
            parent.append(prev_map[self.parent[n][rows]] if n else np.zeros(0, dtype=np.int64))
            if self.survives is not None:
                surv.append(self.survives[n][rows])
            prev_map = np.full(len(self.coords[n]), -1, dtype=np.int64)
            prev_map[rows] = np.arange(len(rows))
        rej = self.rejections[i:i + 1] if len(self.rejections) else self.rejections
        return PercolationTree(self.config, coords, parent, rep, self.seeds[i:i + 1],
                               surv if self.survives is not None else None, self.q, rej.copy())

    def level_rows(self, n: int, replica: int | None = None) -> np.ndarray:
        if not 0 <= n <= self.depth:
            raise ParameterError(f"level {n} outside 0..{self.depth}")
        if replica is None:
            return np.arange(len(self.coords[n]))
        return np.flatnonzero(self.replica[n] == replica)

    def surviving_coords(self, n: int, replica: int = 0) -> np.ndarray:
        rows = self.level_rows(n, replica)
        if self.survives is not None:
            rows = rows[self.survives[n][rows]]
        return self.coords[n][rows]

    def check_invariants(self) -> None:
        """Raise AssertionError if parent closure or survival consistency fails."""
        M = self.M
        for n in range(1, self.depth + 1):
            par = self.parent[n]
            assert np.all(par >= 0) and np.all(par < len(self.coords[n - 1]))
            assert np.array_equal(self.coords[n] // M, self.coords[n - 1][par])
            assert np.array_equal(self.replica[n], self.replica[n - 1][par])
            if self.survives is not None:
                up = np.bincount(par, weights=self.survives[n], minlength=len(self.coords[n - 1])) > 0
                assert np.array_equal(up, self.survives[n - 1])


# ---------------------------------------------------------------- growth


@dataclass(frozen=True)
class _Level:
    coords: np.ndarray
    parent: np.ndarray
    replica: np.ndarray


def _sort_rows(coords: np.ndarray, replica: np.ndarray) -> np.ndarray:
    keys = [coords[:, i] for i in range(coords.shape[1] - 1, -1, -1)] + [replica]
    return np.lexsort(keys)


def _select_children(cfg: PercolationConfig, seeds: np.ndarray, level: int,
                     parents: np.ndarray, children: np.ndarray, prep: np.ndarray) -> np.ndarray:
    """Boolean keep-mask of shape (n_parents, M^d)."""
    nch = children.shape[1]
    cseeds = seeds[prep][:, None]
    if cfg.model == "homogeneous":
        u = streams.uniforms(streams.cube_keys(cseeds, level, children, streams.RETAIN))
        return u < cfg.p
    if cfg.model == "inhomogeneous":
        u = streams.uniforms(streams.cube_keys(cseeds, level, children, streams.RETAIN))
        return u < np.asarray(cfg.probs)[None, :]
    cdf = np.cumsum(cfg.pmf)
    cdf[-1] = 1.0
    uc = streams.uniforms(streams.cube_keys(seeds[prep], level - 1, parents, streams.COUNT))
    k = np.minimum(np.searchsorted(cdf, uc, side="right"), nch)
    if cfg.placement == "corner-packed":
        rank = np.broadcast_to(np.arange(nch), children.shape[:2])
    else:
        r = streams.uniforms(streams.cube_keys(cseeds, level, children, streams.PLACE))
        if cfg.placement == "uniform-subset":
            order = np.argsort(r, axis=1, kind="stable")
        elif cfg.placement == "hyperplane-biased":
            first = np.broadcast_to(child_offsets(cfg.M, cfg.d)[:, 0], r.shape)
            order = np.lexsort((r, first), axis=1)
        else:  # custom-seeded: weighted sampling without replacement
            w = np.asarray(cfg.weights)[None, :]
            order = np.argsort(-np.log1p(-r) / w, axis=1, kind="stable")
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(nch)[None, :].repeat(len(order), 0), axis=1)
    return rank < k[:, None]


_SLAB = 1 << 21  # candidate cubes generated at once


def _available_bytes() -> int | None:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def _check_memory(candidates: int, d: int) -> None:
    # worst case every candidate is kept: coords, parent, replica and sort scratch
    need = candidates * (8 * d + 40)
    avail = _available_bytes()
    if avail is not None and need > avail:
        raise ResourceCapError(f"next level could need {need / 2**30:.1f} GiB but only "
                               f"{avail / 2**30:.1f} GiB of memory is free; lower depth or p")


def _grow(cfg: PercolationConfig, seeds: np.ndarray, start: _Level, start_level: int,
          node_budget: int) -> list[_Level]:
    """Grow from the given rows at ``start_level`` down to ``cfg.depth``."""
    offs = child_offsets(cfg.M, cfg.d)
    out = []
    cur = start
    used = 0
    for level in range(start_level + 1, cfg.depth + 1):
        n = len(cur.coords)
        if n * len(offs) > node_budget:
            raise ResourceCapError(f"level {level} would need {n * len(offs)} candidate cubes; "
                                   f"node cap is {cfg.node_cap}")
        _check_memory(n * len(offs), cfg.d)
        parts_c, parts_p = [], []
        step = max(1, _SLAB // len(offs))
        for lo in range(0, n, step):
            pc = cur.coords[lo:lo + step]
            children = pc[:, None, :] * cfg.M + offs[None, :, :]
            keep = _select_children(cfg, seeds, level, pc, children, cur.replica[lo:lo + step])
            pidx, _ = np.nonzero(keep)
            parts_c.append(children[keep])
            parts_p.append(pidx + lo)
            del children, keep
        coords = np.concatenate(parts_c) if parts_c else np.empty((0, cfg.d), dtype=np.int64)
        pidx = np.concatenate(parts_p) if parts_p else np.empty(0, dtype=np.int64)
        del parts_c, parts_p
        rep = cur.replica[pidx]
        order = _sort_rows(coords, rep)
        cur = _Level(coords[order], pidx[order], rep[order])
        used += len(coords)
        if used > node_budget:
            raise ResourceCapError(f"tree exceeds the node cap of {cfg.node_cap}")
        out.append(cur)
    return out


def _grow_chunk(args):
    cfg, seeds, start, start_level, budget = args
    return _grow(cfg, seeds, start, start_level, budget)


def _grow_forest(cfg: PercolationConfig, seeds: np.ndarray, replicas: np.ndarray,
                 workers: int = 1) -> list[_Level]:
    d = cfg.d
    root = _Level(np.zeros((len(replicas), d), dtype=np.int64), np.zeros(len(replicas), dtype=np.int64),
                  np.asarray(replicas, dtype=np.int64))
    if workers <= 1:
        return [root] + _grow(cfg, seeds, root, 0, cfg.node_cap)
    # grow serially until there is enough work to split, then fan out subtrees
    levels = [root]
    level = 0
    while level < cfg.depth and len(levels[-1].coords) < 8 * workers:
        levels += _grow(replace(cfg, depth=level + 1), seeds, levels[-1], level, cfg.node_cap)
        level += 1
    if level == cfg.depth:
        return levels
    if len(levels[-1].coords) == 0:
        return levels + _grow(cfg, seeds, levels[-1], level, cfg.node_cap)
    top = levels[-1]
    chunks = np.array_split(np.arange(len(top.coords)), workers)
    chunks = [c for c in chunks if len(c)]
    jobs = [(cfg, seeds, _Level(top.coords[c], np.zeros(len(c), dtype=np.int64), top.replica[c]),
             level, cfg.node_cap) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_grow_chunk, jobs))
    # parent indices of the first sub-level are local to each chunk
    for c, part in zip(chunks, parts):
        if part:
            part[0] = _Level(part[0].coords, c[part[0].parent], part[0].replica)
    merged = _merge_parts(parts)
    total = sum(len(lv.coords) for lv in levels) + sum(len(lv.coords) for lv in merged)
    if total > cfg.node_cap:
        raise ResourceCapError(f"tree exceeds the node cap of {cfg.node_cap}")
    return levels + merged


def _merge_parts(parts: list[list[_Level]]) -> list[_Level]:
    """Merge level lists grown from disjoint row sets into one sorted list.

    The first level of every part carries parent indices that are already
    global; deeper levels index rows of the same part one level up.
    """
    if len(parts) == 1:
        return parts[0]
    if not parts or not parts[0]:
        return []
    merged = []
    inv_prev = offsets = None
    for li in range(len(parts[0])):
        coords = np.concatenate([p[li].coords for p in parts])
        rep = np.concatenate([p[li].replica for p in parts])
        if li == 0:
            par = np.concatenate([p[0].parent for p in parts])
        else:
            par = inv_prev[np.concatenate([p[li].parent + off for p, off in zip(parts, offsets)])]
        order = _sort_rows(coords, rep)
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        merged.append(_Level(coords[order], par[order], rep[order]))
        offsets = np.cumsum([0] + [len(p[li].coords) for p in parts[:-1]])
        inv_prev = inv
    return merged


def _mark(cfg: PercolationConfig, seeds: np.ndarray, levels: list[_Level], q: float) -> list[np.ndarray]:
    deep = levels[-1]
    u = streams.uniforms(streams.cube_keys(seeds[deep.replica], cfg.depth, deep.coords, streams.SURVIVE))
    marks = [None] * len(levels)
    marks[-1] = u < 1.0 - q
    for n in range(len(levels) - 1, 0, -1):
        marks[n - 1] = np.bincount(levels[n].parent, weights=marks[n],
                                   minlength=len(levels[n - 1].coords)) > 0
    return marks


def _to_tree(cfg, levels, seeds, marks, q, rejections) -> PercolationTree:
    return PercolationTree(cfg, [lv.coords for lv in levels],
                           [lv.parent if n else np.zeros(0, dtype=np.int64) for n, lv in enumerate(levels)],
                           [lv.replica for lv in levels], seeds, marks, q, rejections)


def _subset_levels(levels: list[_Level], keep_rep: np.ndarray) -> list[_Level]:
    """Restrict to replicas flagged in ``keep_rep``; parents are remapped."""
    out = []
    prev_map = None
    for n, lv in enumerate(levels):
        rows = np.flatnonzero(keep_rep[lv.replica])
        par = prev_map[lv.parent[rows]] if n else lv.parent[rows]
        out.append(_Level(lv.coords[rows], par, lv.replica[rows]))
        prev_map = np.full(len(lv.coords), -1, dtype=np.int64)
        prev_map[rows] = np.arange(len(rows))
    return out


def _merge_replica_sets(sets: list[list[_Level]]) -> list[_Level]:
    return _merge_parts(sets)


def sample_ensemble(config: PercolationConfig, replicas: int | Sequence[int] = 1, workers: int = 1,
                    q: float | None = None, mark: bool = True,
                    rejection_cap: int = DEFAULT_REJECTION_CAP) -> PercolationTree:
    """Sample independent replicas in one vectorized forest.

    Replica ``i`` uses the seed derived from ``(config.seed, i)``; with
    ``config.condition`` each replica is redrawn with fresh attempt seeds
    until its root survives.
    """
    idx = np.arange(replicas) if isinstance(replicas, (int, np.integer)) else np.asarray(replicas)
    idx = idx.astype(np.int64)
    base = streams.replica_seeds(config.seed, idx.astype(np.uint64))
    n_rep = len(idx)
    # replica rows are tagged 0..n_rep-1 locally; seeds are indexed by that tag
    local = np.arange(n_rep, dtype=np.int64)
    if q is None and (mark or config.condition):
        q = extinction_prob(config.offspring())
    if q is not None and not 0 <= q <= 1:
        raise ParameterError(f"extinction probability must lie in [0,1], got {q}")
    if not config.condition:
        levels = _grow_forest(config, base, local, workers)
        marks = _mark(config, base, levels, q) if mark else None
        return _to_tree(config, levels, base, marks, q, np.zeros(n_rep, dtype=np.int64))
    if q >= 1:
        raise SubcriticalError("cannot condition a subcritical process on survival")
    seeds = base.copy()
    rejections = np.zeros(n_rep, dtype=np.int64)
    accepted: list[list[_Level]] = []
    pending = local
    attempt = 0
    while len(pending):
        if attempt > rejection_cap:
            raise ResourceCapError(f"conditioning exceeded {rejection_cap} rejections; "
                                   "the model is probably near-critical")
        seeds[pending] = streams.attempt_seeds(base[pending], attempt)
        levels = _grow_forest(config, seeds, pending, workers)
        marks = _mark(config, seeds, levels, q)
        ok = np.zeros(n_rep, dtype=bool)
        ok[levels[0].replica[marks[0]]] = True
        if ok.any():
            accepted.append(_subset_levels(levels, ok))
        failed = pending[~ok[pending]]
        rejections[failed] += 1
        pending = failed
        attempt += 1
    levels = _merge_replica_sets(accepted)
    marks = _mark(config, seeds, levels, q)
    return _to_tree(config, levels, seeds, marks, q, rejections)


def sample_tree(config: PercolationConfig, workers: int = 1, mark: bool = True) -> PercolationTree:
    """One tree; identical to replica 0 of :func:`sample_ensemble`."""
    return sample_ensemble(config, 1, workers=workers, mark=mark)


def condition_on_nonextinction(config: PercolationConfig, workers: int = 1,
                               rejection_cap: int = DEFAULT_REJECTION_CAP) -> PercolationTree:
    return sample_ensemble(replace(config, condition=True), 1, workers=workers, rejection_cap=rejection_cap)


def mark_survivors_exact(tree: PercolationTree, q: float) -> PercolationTree:
    """Attach exact survival marks drawn with extinction probability ``q``."""
    if not 0 <= q <= 1:
        raise ParameterError(f"extinction probability must lie in [0,1], got {q}")
    levels = [_Level(c, p, r) for c, p, r in zip(tree.coords, tree.parent, tree.replica)]
    marks = _mark(tree.config, tree.seeds, levels, q)
    return replace(tree, survives=marks, q=q)


def surviving_count(tree: PercolationTree, n: int, replica: int | None = None) -> int:
    if not 0 <= n <= tree.depth:
        raise ParameterError(f"level {n} outside 0..{tree.depth}")
    if tree.survives is None:
        raise ParameterError("tree has no survival marks")
    rows = tree.level_rows(n, replica)
    return int(tree.survives[n][rows].sum())


def surviving_counts(tree: PercolationTree, n: int) -> np.ndarray:
    """Per-replica counts of surviving level-n cubes."""
    if tree.survives is None:
        raise ParameterError("tree has no survival marks")
    if not 0 <= n <= tree.depth:
        raise ParameterError(f"level {n} outside 0..{tree.depth}")
    return np.bincount(tree.replica[n], weights=tree.survives[n], minlength=tree.n_replicas).astype(np.int64)


def sample_mu_points(tree: PercolationTree, n: int, k: int, replica: int = 0) -> np.ndarray:
    """``k`` centers of uniformly chosen surviving level-n cubes, shape (k, d)."""
    if k < 0:
        raise ParameterError("point count must be >= 0")
    cubes = tree.surviving_coords(n, replica)
    if k == 0:
        return np.zeros((0, tree.d))
    if len(cubes) == 0:
        raise ParameterError(f"no surviving cube at level {n}")
    key = streams.cube_keys(tree.seeds[replica:replica + 1], n, np.zeros((1, tree.d), dtype=np.int64),
                            streams.POINTS)
    u = streams.uniforms(key, np.arange(k, dtype=np.uint64))
    pick = np.minimum((u * len(cubes)).astype(np.int64), len(cubes) - 1)
    return (cubes[pick] + 0.5) / tree.M**n


def _row_view(rep: np.ndarray, coords: np.ndarray) -> np.ndarray:
    rows = np.ascontiguousarray(np.column_stack([rep.astype(np.int64), coords.astype(np.int64)]))
    return rows.view(np.dtype((np.void, rows.dtype.itemsize * rows.shape[1]))).ravel()


def parent_index(prev_coords: np.ndarray, prev_rep: np.ndarray, coords: np.ndarray,
                 rep: np.ndarray, M: int) -> np.ndarray:
    """Row index in the previous level of each cube's parent."""
    if len(coords) == 0:
        return np.zeros(0, dtype=np.int64)
    pv = _row_view(prev_rep, prev_coords)
    order = np.argsort(pv, kind="stable")
    want = _row_view(rep, coords // M)
    pos = np.searchsorted(pv[order], want)
    pos = np.minimum(pos, len(order) - 1)
    idx = order[pos]
    if not np.array_equal(pv[idx], want):
        raise ParameterError("retained set is not closed under taking parents")
    return idx.astype(np.int64)


def tree_from_levels(config: PercolationConfig, coords: list[np.ndarray], replica: list[np.ndarray],
                     seeds: np.ndarray, survives: list[np.ndarray] | None = None, q: float | None = None,
                     rejections: np.ndarray | None = None) -> PercolationTree:
    """Assemble a tree from per-level arrays, sorting rows and rebuilding parent links."""
    cs, rs, ss, ps = [], [], [], []
    for n, (c, r) in enumerate(zip(coords, replica)):
        c = np.asarray(c, dtype=np.int64).reshape(-1, config.d)
        r = np.asarray(r, dtype=np.int64)
        order = _sort_rows(c, r)
        cs.append(c[order])
        rs.append(r[order])
        if survives is not None:
            ss.append(np.asarray(survives[n], dtype=bool)[order])
        ps.append(parent_index(cs[n - 1], rs[n - 1], cs[n], rs[n], config.M) if n
                  else np.zeros(0, dtype=np.int64))
    if rejections is None:
        rejections = np.zeros(len(seeds), dtype=np.int64)
    return PercolationTree(config, cs, ps, rs, np.asarray(seeds, dtype=np.uint64),
                           ss if survives is not None else None, q, np.asarray(rejections, dtype=np.int64))
