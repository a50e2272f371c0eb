"""Discrete porosity of finite cube approximations.

``porosity_at`` maximizes ``phi(y) = min(dist(y, A), r - |y - x|)`` over an
M-adic lattice of candidate centers ``y`` by branch and bound. ``phi`` is
1-Lipschitz, so a box of lattice points whose representative has value
``v`` cannot beat ``v + (box radius)``; boxes that cannot improve on the best
value found are discarded. The result is the exact lattice maximum, and the
lattice spacing bounds the distance to the continuum supremum.

The region outside the unit cube counts as empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError
from .mcube import child_offsets, linear_keys


class OccupiedSet:
    """Union of closed level-``level`` cubes given by integer coordinates."""

    def __init__(self, coords: np.ndarray, level: int, M: int, kind: str = "surviving"):
        coords = np.asarray(coords, dtype=np.int64)
        if coords.ndim != 2:
            raise ParameterError("coords must have shape (count, d)")
        self.coords = coords
        self.level = level
        self.M = M
        self.d = coords.shape[1]
        self.kind = kind
        self.h = float(M) ** (-level)
        self.centers = (coords + 0.5) * self.h
        self._tree = cKDTree(self.centers) if len(coords) else None

    @classmethod
    def from_tree(cls, tree, level: int | None = None, replica: int = 0,
                  kind: str = "surviving") -> "OccupiedSet":
        level = tree.depth if level is None else level
        if kind == "surviving":
            coords = tree.surviving_coords(level, replica)
        elif kind == "retained":
            coords = tree.coords[level][tree.level_rows(level, replica)]
        else:
            raise ParameterError(f"unknown occupancy kind {kind!r}")
        return cls(coords, level, tree.M, kind)

    def __len__(self) -> int:
        return len(self.coords)

    def _box_dist(self, pts: np.ndarray, idx: np.ndarray) -> np.ndarray:
        gap = np.abs(pts[:, None, :] - self.centers[idx]) - 0.5 * self.h
        return np.sqrt((np.maximum(gap, 0.0) ** 2).sum(-1))

    def distance(self, pts: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the union of cubes."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self._tree is None:
            return np.full(len(pts), math.inf)
        if self.d == 1:
            dc, _ = self._tree.query(pts)
            return np.maximum(dc - 0.5 * self.h, 0.0)
        k = min(len(self.coords), 2 * self.d + 1)
        dc, idx = self._tree.query(pts, k=k)
        dc = dc.reshape(len(pts), k)
        idx = idx.reshape(len(pts), k)
        best = self._box_dist(pts, idx).min(axis=1)
        slack = 0.5 * self.h * math.sqrt(self.d)
        todo = np.flatnonzero((dc[:, -1] <= best + slack) & (k < len(self.coords)))
        for i in todo:
            cand = self._tree.query_ball_point(pts[i], best[i] + slack)
            if cand:
                best[i] = min(best[i], self._box_dist(pts[i:i + 1], np.asarray([cand]))[0].min())
        return best

    def candidates(self, x: np.ndarray, radius: float) -> np.ndarray:
        """Indices of cubes that can come within ``radius`` of ``x``."""
        if self._tree is None:
            return np.zeros(0, dtype=np.int64)
        cand = self._tree.query_ball_point(x, radius + 0.5 * self.h * math.sqrt(self.d))
        return np.asarray(sorted(cand), dtype=np.int64)


@dataclass(frozen=True)
class PorosityValue:
    rho: float
    error: float
    center: tuple[float, ...]
    raw: float


def _check_query(occ: OccupiedSet, x, r: float) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if len(x) != occ.d:
        raise ParameterError(f"point has dimension {len(x)}, set has {occ.d}")
    if not r > 0:
        raise ParameterError(f"radius must be positive, got {r}")
    if np.any(x < 0) or np.any(x > 1):
        raise ParameterError("point must lie in the unit cube")
    return x


def porosity_at(occ: OccupiedSet, x, r: float, g: int = 4) -> PorosityValue:
    """por(A, x, r) on the level-(k+g) lattice, clamped to [0, 1/2].

    ``error`` is the certified bound sqrt(d) M^-(k+g) / r on the gap to the
    continuum value.
    """
    x = _check_query(occ, x, r)
    if g < 1:
        raise ParameterError("grid_levels must be >= 1")
    d = occ.d
    step = float(occ.M) ** (-(occ.level + g))
    lo0 = np.ceil((x - r) / step).astype(np.int64)
    hi0 = np.floor((x + r) / step).astype(np.int64)
    size = 1
    while size < int((hi0 - lo0).max()) + 1:
        size *= 2
    halves = child_offsets(2, d)
    los = lo0[None, :]
    best = -math.inf
    best_y = x
    while len(los):
        his = np.minimum(los + size - 1, hi0)
        mid = los + (his - los) // 2
        ext = np.maximum(mid - los, his - mid)
        rad = np.sqrt((ext.astype(float) ** 2).sum(1)) * step
        y = mid * step
        phi = np.minimum(occ.distance(y), r - np.sqrt(((y - x) ** 2).sum(1)))
        i = int(np.argmax(phi))
        if phi[i] > best:
            best, best_y = float(phi[i]), y[i]
        keep = phi + rad > best
        if size == 1 or not keep.any():
            break
        los = los[keep]
        size //= 2
        los = (los[:, None, :] + halves[None, :, :] * size).reshape(-1, d)
        los = los[np.all(los <= hi0, axis=1)]
    rho = min(max(best / r, 0.0), 0.5)
    return PorosityValue(rho, math.sqrt(d) * step / r, tuple(float(v) for v in best_y), best / r)


def annular_porosity_at(occ: OccupiedSet, x, r: float) -> float:
    """Largest relative shell width at the edge of B(x, r) free of the set.

    Each cube meeting the closed ball contributes its farthest point inside
    the ball, min(farthest corner distance, r).
    """
    x = _check_query(occ, x, r)
    idx = occ.candidates(x, r)
    if len(idx) == 0:
        return 1.0
    c = occ.centers[idx]
    h = 0.5 * occ.h
    near = np.sqrt((np.maximum(np.abs(x - c) - h, 0.0) ** 2).sum(1))
    far = np.sqrt(((np.abs(x - c) + h) ** 2).sum(1))
    hit = near <= r
    if not hit.any():
        return 1.0
    reach = np.minimum(far[hit], r).max()
    return float(1.0 - reach / r)


# ---------------------------------------------------------------- scale grids


def scale_grid(M: int, d: int, level: int, g: int = 4, preset: str = "default", N: int = 1,
               j_min: int = 1, max_rel_error: float = 0.05) -> list[float]:
    """Decreasing radii whose lattice error at level+g stays below ``max_rel_error``.

    Presets: ``default`` r_j = sqrt(d) M^-j; ``T1`` sqrt(d) M^-jN;
    ``T2`` M^-jN / 2; ``T3`` M^-jN / 3.
    """
    step = float(M) ** (-(level + g))
    factor, base = {
        "default": (math.sqrt(d), 1),
        "T1": (math.sqrt(d), N),
        "T2": (0.5, N),
        "T3": (1.0 / 3.0, N),
    }.get(preset, (None, None))
    if factor is None:
        raise ParameterError(f"unknown scale preset {preset!r}")
    out = []
    j = j_min
    while True:
        r = factor * float(M) ** (-j * base)
        if math.sqrt(d) * step / r > max_rel_error:
            break
        out.append(r)
        j += 1
    return out


@dataclass
class PorosityProfile:
    x: tuple[float, ...]
    scales: list[float]
    values: list[float]
    errors: list[float]
    g: int

    @property
    def upor(self) -> float:
        return max(self.values)

    @property
    def lpor(self) -> float:
        return min(self.values)

    def rows(self, point_id: int = 0) -> list[dict]:
        return [{"point": point_id, "x": " ".join(repr(v) for v in self.x), "r": r, "por": v, "error": e}
                for r, v, e in zip(self.scales, self.values, self.errors)]


def upor_lpor_estimate(occ: OccupiedSet, x, scales: Sequence[float] | None = None,
                       g: int = 4) -> tuple[float, float, PorosityProfile]:
    """(upor, lpor, profile) as the max and min of por over a scale grid."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if scales is None:
        scales = scale_grid(occ.M, occ.d, occ.level, g)
    scales = list(scales)
    if len(scales) < 3:
        raise ParameterError(f"only {len(scales)} usable scales; a deeper tree or larger g is needed")
    if any(b >= a for a, b in zip(scales, scales[1:])):
        raise ParameterError("scales must be strictly decreasing")
    if len(occ) and occ.distance(x[None, :])[0] > 0:
        raise ParameterError("point does not lie in the occupied set")
    vals = [porosity_at(occ, x, r, g) for r in scales]
    prof = PorosityProfile(tuple(float(v) for v in x), scales, [v.rho for v in vals],
                           [v.error for v in vals], g)
    return prof.upor, prof.lpor, prof


# ---------------------------------------------------------------- dimension


@dataclass(frozen=True)
class BoxDimension:
    slope: float
    intercept: float
    r2: float
    residuals: tuple[float, ...]
    degenerate: bool = False


def box_dimension(counts: Sequence[float], levels: Sequence[int], M: int) -> BoxDimension:
    """Least-squares slope of log N_j against j log M."""
    counts = np.asarray(counts, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if len(counts) != len(levels) or len(counts) < 3:
        raise ParameterError("box dimension needs at least three levels")
    if np.any(counts <= 0):
        raise ParameterError("box dimension needs positive counts")
    xs = levels * math.log(M)
    ys = np.log(counts)
    if np.all(counts == counts[0]):
        return BoxDimension(0.0, float(ys[0]), math.nan, tuple([0.0] * len(ys)), True)
    A = np.column_stack([xs, np.ones_like(xs)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ys, rcond=None)
    res = ys - (slope * xs + icpt)
    ss = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - float((res**2).sum()) / ss if ss > 0 else math.nan
    return BoxDimension(float(slope), float(icpt), r2, tuple(float(v) for v in res))


def ancestor_counts(coords: np.ndarray, level: int, M: int, levels: Sequence[int]) -> list[int]:
    """Number of distinct level-j ancestors of the given cubes, for each j."""
    out = []
    for j in levels:
        anc = np.asarray(coords, dtype=np.int64) // M ** (level - j)
        out.append(len(np.unique(anc, axis=0)) if len(anc) else 0)
    return out


# ---------------------------------------------------------------- holes


def _hole_tables(M: int, d: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Tables indexed by (relative level-N key, child offset index).

    ``meets``: the closed cube meets the closed inscribed ball of the child.
    ``touch``: the closed cube touches the closed child cube.
    Integer arithmetic after scaling by 2 M^N.
    """
    span = M**N
    rel = child_offsets(span, d)
    offs = child_offsets(M, d)
    unit = M ** (N - 1)
    c = (2 * offs + 1) * unit
    lo = 2 * rel[:, None, :]
    gap = np.maximum(0, np.maximum(lo - c[None], c[None] - lo - 2))
    meets = (gap**2).sum(-1) <= unit**2
    touch = np.all((rel[:, None, :] <= (offs[None] + 1) * unit) & (rel[:, None, :] + 1 >= offs[None] * unit),
                   axis=-1)
    return meets, touch


@dataclass(frozen=True)
class HoleResult:
    cubes: np.ndarray  # level-(n+1)N coordinates, lexicographic
    fallback: bool
    witnesses: np.ndarray  # for each returned cube, the offset index of a missing child


def hole_meeting_blocks(M: int, d: int, N: int, rel_keys: np.ndarray, group: np.ndarray,
                        missing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized hole test for many blocks at once.

    ``rel_keys`` are row-major keys of descendants relative to their block,
    ``group`` maps each descendant to a block row of ``missing`` (shape
    (blocks, M^d)). Returns (meets_hole, touches_missing) boolean arrays.
    """
    meets, touch = _hole_tables(M, d, N)
    miss = missing[group]
    return (meets[rel_keys] & miss).any(1), (touch[rel_keys] & miss).any(1)


def hole_meeting_children(tree, Q, N: int, replica: int = 0) -> HoleResult:
    """Surviving level-(n+1)N descendants of ``Q`` meeting a porosity hole.

    A hole is the open inscribed ball of a non-surviving child of ``Q``; it
    holds no point of the limit set. A descendant meets the hole when it
    intersects the closed ball. Without such descendants the result is the
    lexicographically first surviving descendant touching a non-surviving
    child, flagged as a fallback.
    """
    M, d = tree.M, tree.d
    lvl = Q.level
    if N < 1 or lvl + N > tree.depth:
        raise ParameterError(f"need 1 <= N and level {lvl} + N <= depth {tree.depth}")
    if tree.survives is None:
        raise ParameterError("tree has no survival marks")
    qc = np.asarray(Q.coords, dtype=np.int64)
    rows = tree.level_rows(lvl, replica)
    hit = rows[np.all(tree.coords[lvl][rows] == qc, axis=1)]
    if len(hit) == 0:
        raise ParameterError(f"cube {Q} is not retained")
    kids_rows = tree.level_rows(lvl + 1, replica)
    kids = tree.coords[lvl + 1][kids_rows]
    surv_kids = tree.survives[lvl + 1][kids_rows]
    inside = np.all(kids // M == qc, axis=1)
    missing = np.ones(M**d, dtype=bool)
    rel1 = kids[inside & surv_kids] - qc * M
    missing[linear_keys(rel1, 1, M)] = False
    if missing.all() or not missing.any():
        raise ParameterError("hole detection needs some but not all children of Q to survive")
    span = M**N
    desc = tree.surviving_coords(lvl + N, replica)
    desc = desc[np.all(desc // span == qc, axis=1)]
    rel = desc - qc * span
    keys = linear_keys(rel, N, M)
    meets_tab, touch_tab = _hole_tables(M, d, N)
    m = meets_tab[keys] & missing[None, :]
    hit = m.any(1)
    if hit.any():
        return HoleResult(desc[hit], False, np.argmax(m[hit], axis=1))
    t = touch_tab[keys] & missing[None, :]
    tt = np.flatnonzero(t.any(1))
    if len(tt):
        return HoleResult(desc[tt[:1]], True, np.argmax(t[tt[:1]], axis=1))
    return HoleResult(np.zeros((0, d), dtype=np.int64), True, np.zeros(0, dtype=np.int64))


# ---------------------------------------------------------------- level sets


@dataclass
class PorosityMap:
    level: int
    cells: np.ndarray
    points: np.ndarray
    upor: np.ndarray
    lpor: np.ndarray
    profiles: list[PorosityProfile] = field(default_factory=list)


def representative_points(tree, level: int, replica: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Surviving level-``level`` cubes and, for each, the center of its
    lexicographically first surviving deepest-level descendant."""
    deep = tree.surviving_coords(tree.depth, replica)
    f = tree.M ** (tree.depth - level)
    anc = deep // f
    cells, first = np.unique(anc, axis=0, return_index=True)
    pts = (deep[first] + 0.5) / tree.M**tree.depth
    return cells, pts


def porosity_map(tree, level: int, replica: int = 0, g: int = 4,
                 scales: Sequence[float] | None = None) -> PorosityMap:
    """Per-cube upor/lpor estimates at one representative point per surviving cube."""
    if not 0 <= level <= tree.depth:
        raise ParameterError(f"level {level} outside 0..{tree.depth}")
    occ = OccupiedSet.from_tree(tree, tree.depth, replica)
    cells, pts = representative_points(tree, level, replica)
    up, lo, profs = [], [], []
    for x in pts:
        u, l, prof = upor_lpor_estimate(occ, x, scales, g)
        up.append(u)
        lo.append(l)
        profs.append(prof)
    return PorosityMap(level, cells, pts, np.array(up), np.array(lo), profs)


@dataclass
class LevelSetEstimate:
    alpha: float
    mode: str
    level: int
    members: np.ndarray
    n_candidates: int
    dimension: BoxDimension | None

    @property
    def member_fraction(self) -> float:
        return len(self.members) / self.n_candidates if self.n_candidates else 0.0

    @property
    def beta(self) -> float | None:
        return None if self.dimension is None else self.dimension.slope


LEVEL_SET_MODES = ("upor<=", "lpor>=")


def level_set(tree, alpha: float, mode: str = "upor<=", level: int | None = None, replica: int = 0,
              g: int = 4, scales: Sequence[float] | None = None, j_min: int = 1,
              pmap: PorosityMap | None = None) -> LevelSetEstimate:
    """Finite-resolution {x : upor <= alpha} or {x : lpor >= alpha}.

    Membership is decided per surviving cube at ``level``; the dimension is
    the box-counting slope of member ancestors over levels j_min..level.
    """
    if mode not in LEVEL_SET_MODES:
        raise ParameterError(f"mode must be one of {LEVEL_SET_MODES}")
    if level is None:
        level = tree.depth // 2
    if pmap is None:
        pmap = porosity_map(tree, level, replica, g, scales)
    keep = pmap.upor <= alpha if mode == "upor<=" else pmap.lpor >= alpha
    members = pmap.cells[keep]
    dim = None
    levels = list(range(j_min, level + 1))
    if len(members) and len(levels) >= 3:
        dim = box_dimension(ancestor_counts(members, level, tree.M, levels), levels, tree.M)
    return LevelSetEstimate(alpha, mode, level, members, len(pmap.cells), dim)


# ---------------------------------------------------------------- conical density


def direction_net(d: int, size: int = 4096) -> np.ndarray:
    """Unit vectors: a uniform circle for d=2, a Fibonacci sphere for d=3."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = 2 * math.pi * (np.arange(size) + 0.5) / size
        return np.column_stack([np.cos(t), np.sin(t)])
    if d == 3:
        i = np.arange(size) + 0.5
        z = 1 - 2 * i / size
        phi = math.pi * (3 - math.sqrt(5)) * i
        rho = np.sqrt(1 - z * z)
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    rng = np.random.default_rng(size)
    v = rng.standard_normal((size, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True)
class ConicalResult:
    """Outcome of the finite-net central-cube search; approximate by construction."""

    found: bool
    index: int | None
    witnesses: np.ndarray | None  # (sample point, direction) -> index of witness cube
    samples: np.ndarray | None
    directions: np.ndarray
    approximate: bool = True


def _corners(d: int) -> np.ndarray:
    return child_offsets(2, d).astype(float)


def conical_central_cube(cubes: np.ndarray, M: int, level: int, net: int = 4096,
                         alpha: float = 0.8) -> ConicalResult:
    """Search for a cube such that from each corner and the center, every
    direction's cone holds another cube at distance > M^-level."""
    cubes = np.asarray(cubes, dtype=np.int64)
    n, d = cubes.shape
    dirs = direction_net(d, net)
    if n < 2:
        return ConicalResult(False, None, None, None, dirs)
    corners = _corners(d)
    # all geometry in units of the cube side
    diff = np.abs(cubes[:, None, :] - cubes[None, :, :])
    gap = np.maximum(diff - 1, 0)
    far = (gap**2).sum(-1) > 1
    samples_rel = np.vstack([corners, np.full((1, d), 0.5)])
    cub_corners = cubes[:, None, :] + corners[None]  # (n, 2^d, d)
    for i in range(n):
        cand = np.flatnonzero(far[i])
        if len(cand) == 0:
            continue
        xs = cubes[i] + samples_rel  # (S, d)
        v = cub_corners[cand][None] - xs[:, None, None, :]  # (S, c, 2^d, d)
        norm = np.linalg.norm(v, axis=-1)
        dots = v @ dirs.T  # (S, c, 2^d, K)
        inside = np.all(dots > alpha * norm[..., None], axis=2)  # (S, c, K)
        ok = inside.any(1)
        if ok.all():
            wit = cand[np.argmax(inside, axis=1)]
            return ConicalResult(True, i, wit, xs / M**level, dirs)
    return ConicalResult(False, None, None, None, dirs)
