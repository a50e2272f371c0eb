"""Exact geometry of M-adic cubes in [0,1]^d.

A level-n cube is stored as integer coordinates ``c`` with
``0 <= c_l < M**n``; it covers ``prod_l [c_l M^-n, (c_l + 1) M^-n]``.
Touch/overlap decisions are made in exact rational arithmetic and only the
final Euclidean norm is evaluated in floating point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError

# coordinates are held in signed 64-bit arrays elsewhere
MAX_COORD = 2**62


def max_level(M: int) -> int:
    """Largest level whose coordinates fit the 64-bit coordinate range."""
    n = 0
    while M ** (n + 1) <= MAX_COORD:
        n += 1
    return n


@dataclass(frozen=True, order=True)
class CubeAddress:
    level: int
    coords: tuple[int, ...]
    M: int = 2

    def __post_init__(self):
        if self.M < 2:
            raise ParameterError(f"M must be >= 2, got {self.M}")
        if self.level < 0:
            raise ParameterError(f"level must be >= 0, got {self.level}")
        if len(self.coords) < 1:
            raise ParameterError("a cube needs at least one coordinate")
        if self.level > max_level(self.M):
            raise ParameterError(
                f"level {self.level} exceeds the supported maximum {max_level(self.M)} for M={self.M}"
            )
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))
        side = self.M**self.level
        for c in self.coords:
            if not 0 <= c < side:
                raise ParameterError(f"coordinate {c} outside [0, {side}) at level {self.level}")

    @classmethod
    def root(cls, d: int, M: int = 2) -> "CubeAddress":
        return cls(0, (0,) * d, M)

    @classmethod
    def parse(cls, text: str, M: int = 2) -> "CubeAddress":
        """Parse the ``"n:c1,c2,...,cd"`` text form."""
        try:
            level, rest = text.strip().split(":")
            coords = tuple(int(c) for c in rest.split(","))
            return cls(int(level), coords, M)
        except ValueError as exc:
            if isinstance(exc, ParameterError):
                raise
            raise ParameterError(f"malformed cube address {text!r}") from exc

    def __str__(self) -> str:
        return f"{self.level}:" + ",".join(str(c) for c in self.coords)

    @property
    def d(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> Fraction:
        return Fraction(1, self.M**self.level)

    def bounds(self) -> list[tuple[Fraction, Fraction]]:
        s = self.side
        return [(c * s, (c + 1) * s) for c in self.coords]

    def center(self) -> np.ndarray:
        s = self.M**self.level
        return (np.array(self.coords, dtype=float) + 0.5) / s

    def parent(self) -> "CubeAddress":
        if self.level == 0:
            raise ParameterError("the root cube has no parent")
        return CubeAddress(self.level - 1, tuple(c // self.M for c in self.coords), self.M)

    def ancestor(self, level: int) -> "CubeAddress":
        if not 0 <= level <= self.level:
            raise ParameterError(f"no ancestor at level {level} for a level-{self.level} cube")
        f = self.M ** (self.level - level)
        return CubeAddress(level, tuple(c // f for c in self.coords), self.M)


def child_offsets(M: int, d: int) -> np.ndarray:
    """All M^d child offsets in lexicographic order, shape (M^d, d)."""
    return np.array(list(itertools.product(range(M), repeat=d)), dtype=np.int64).reshape(M**d, d)


def children(addr: CubeAddress) -> list[CubeAddress]:
    base = [c * addr.M for c in addr.coords]
    return [
        CubeAddress(addr.level + 1, tuple(b + o for b, o in zip(base, off)), addr.M)
        for off in itertools.product(range(addr.M), repeat=addr.d)
    ]


def is_descendant(child: CubeAddress, parent: CubeAddress, N: int) -> bool:
    """True iff ``child`` lies in ``parent`` exactly ``N`` levels below it."""
    if child.M != parent.M or child.d != parent.d:
        raise ParameterError("cubes come from different M-adic systems")
    if N < 0 or child.level != parent.level + N:
        raise ParameterError(
            f"invalid descendant query: levels {child.level} and {parent.level} with N={N}"
        )
    f = parent.M**N
    return all(c // f == p for c, p in zip(child.coords, parent.coords))


def _gap(a: tuple[Fraction, Fraction], b: tuple[Fraction, Fraction]) -> Fraction:
    return max(Fraction(0), b[0] - a[1], a[0] - b[1])


def box_distance(a: CubeAddress, b: CubeAddress) -> float:
    gaps = [_gap(ia, ib) for ia, ib in zip(a.bounds(), b.bounds())]
    return math.sqrt(sum(g * g for g in gaps))


def set_distance(cubes_a: Sequence[CubeAddress], cubes_b: Sequence[CubeAddress]) -> float:
    """Euclidean distance between two finite unions of cubes."""
    if not cubes_a or not cubes_b:
        raise ParameterError("set_distance needs two nonempty cube lists")
    ref = cubes_a[0]
    for q in itertools.chain(cubes_a, cubes_b):
        if q.M != ref.M or q.d != ref.d:
            raise ParameterError("cubes come from different M-adic systems")
    best = None
    for a in cubes_a:
        ba = a.bounds()
        for b in cubes_b:
            sq = sum(g * g for g in (_gap(x, y) for x, y in zip(ba, b.bounds())))
            if best is None or sq < best:
                best = sq
                if best == 0:
                    return 0.0
    return math.sqrt(best)


def boundary_layer(child: CubeAddress, parent: CubeAddress) -> int:
    """Number of whole child-sized layers between ``child`` and the boundary of ``parent``."""
    N = child.level - parent.level
    if N < 0 or not is_descendant(child, parent, N):
        raise ParameterError(f"{child} is not a descendant of {parent}")
    span = parent.M**N
    rel = [c - p * span for c, p in zip(child.coords, parent.coords)]
    return min(min(k, span - 1 - k) for k in rel)


def dist_to_parent_boundary(child: CubeAddress, parent: CubeAddress) -> float:
    return boundary_layer(child, parent) / child.M**child.level


def center_child_block(parent: CubeAddress, N: int) -> CubeAddress:
    """The descendant ``N`` levels down that holds the parent's center.

    For even ``M**N`` the center is a grid vertex; the lexicographically
    smallest of the touching cubes is returned.
    """
    if N < 1:
        raise ParameterError("N must be positive")
    span = parent.M**N
    mid = (span - 1) // 2 if span % 2 else span // 2 - 1
    return CubeAddress(parent.level + N, tuple(p * span + mid for p in parent.coords), parent.M)


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float
    closed: bool = True

    def __post_init__(self):
        if not self.radius >= 0:
            raise ParameterError(f"ball radius must be >= 0, got {self.radius}")

    def contains(self, y: Iterable[float]) -> bool:
        dist = math.dist(self.center, tuple(y))
        return dist <= self.radius if self.closed else dist < self.radius


@dataclass(frozen=True)
class Cone:
    """Open cone ``{y : (y - apex) . direction > alpha |y - apex|}``."""

    apex: tuple[float, ...]
    direction: tuple[float, ...]
    alpha: float = 0.8

    def __post_init__(self):
        if len(self.apex) != len(self.direction):
            raise ParameterError("cone apex and direction differ in dimension")
        if abs(math.hypot(*self.direction) - 1.0) > 1e-12:
            raise ParameterError("cone direction must be a unit vector")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"cone alpha must lie in (0,1), got {self.alpha}")


def cone_contains(cone: Cone, y: Sequence[float]) -> bool:
    if len(y) != len(cone.apex):
        raise ParameterError("point and cone differ in dimension")
    v = [yi - ai for yi, ai in zip(y, cone.apex)]
    dot = sum(vi * ti for vi, ti in zip(v, cone.direction))
    return dot > cone.alpha * math.hypot(*v)


def linear_keys(coords: np.ndarray, level: int, M: int) -> np.ndarray:
    """Row-major integer keys of level-``level`` coordinates.

    Numeric order of the keys is lexicographic order of the coordinates.
    """
    coords = np.asarray(coords, dtype=np.int64)
    d = coords.shape[-1]
    side = M**level
    if side**d >= 2**63:
        raise ParameterError(f"level {level} with d={d} exceeds the 64-bit key range")
    key = np.zeros(coords.shape[:-1], dtype=np.int64)
    for i in range(d):
        key = key * side + coords[..., i]
    return key
