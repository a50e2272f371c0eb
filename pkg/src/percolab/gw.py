"""Galton-Watson analytics for cube-tree offspring laws.

Covers pgf evaluation, extinction probabilities, the law of the number of
surviving block descendants (``L~``), and the bound calculators attached to
each pruning construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, ResourceCapError, SubcriticalError

PMF_ATOL = 1e-12
EXTINCTION_TOL = 1e-13
EXTINCTION_MAX_ITER = 10**6
DEFAULT_DEGREE_CAP = 4096
DEFAULT_BLOCK_CAP = 10_000


@dataclass(frozen=True)
class OffspringDistribution:
    """Law of the number of retained children of a retained cube.

    ``kind`` records how the law arose: ``"binomial"`` (homogeneous
    percolation), ``"poisson_binomial"`` (inhomogeneous percolation) or
    ``"general"``. Bound calculators use it to pick the matching construction.
    """

    M: int
    d: int
    pmf: tuple[float, ...]
    kind: str = "general"
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.M < 2 or self.d < 1:
            raise ParameterError(f"need M >= 2 and d >= 1, got M={self.M}, d={self.d}")
        pmf = tuple(float(x) for x in self.pmf)
        object.__setattr__(self, "pmf", pmf)
        if len(pmf) != self.M**self.d + 1:
            raise ParameterError(f"pmf must have M^d + 1 = {self.M**self.d + 1} entries, got {len(pmf)}")
        if any(not math.isfinite(x) or x < 0 for x in pmf):
            raise ParameterError("pmf entries must be finite and non-negative")
        if abs(math.fsum(pmf) - 1.0) > PMF_ATOL:
            raise ParameterError(f"pmf sums to {math.fsum(pmf)!r}, not 1")

    @property
    def size(self) -> int:
        """Number of children of a cube, M^d."""
        return self.M**self.d

    @property
    def mean(self) -> float:
        return math.fsum(k * pk for k, pk in enumerate(self.pmf))

    @property
    def supercritical(self) -> bool:
        return self.mean > 1

    @property
    def nondegenerate(self) -> bool:
        return self.pmf[1] < 1 and self.pmf[-1] < 1

    @property
    def p_full(self) -> float:
        """P(L_o = M^d)."""
        return self.pmf[-1]

    def as_array(self) -> np.ndarray:
        return np.array(self.pmf)

    def to_dict(self) -> dict:
        return {"M": self.M, "d": self.d, "kind": self.kind, "pmf": list(self.pmf), "params": list(self.params)}


def binomial_offspring(M: int, d: int, p: float) -> OffspringDistribution:
    """Offspring law of homogeneous fractal percolation with retention probability ``p``."""
    if not 0 < p < 1:
        raise ParameterError(f"retention probability must lie in (0,1), got {p}")
    n = M**d
    pmf = [math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1)]
    return OffspringDistribution(M, d, tuple(pmf), "binomial", (float(p),))


def poisson_binomial_pmf(probs: Sequence[float]) -> np.ndarray:
    """Exact pmf of a sum of independent Bernoulli variables by sequential convolution."""
    pmf = np.array([1.0])
    for p in probs:
        nxt = np.zeros(len(pmf) + 1)
        nxt[:-1] = pmf * (1 - p)
        nxt[1:] += pmf * p
        pmf = nxt
    return pmf


def poisson_binomial_offspring(M: int, d: int, probs: Sequence[float]) -> OffspringDistribution:
    """Offspring law of inhomogeneous percolation; ``probs`` are in lexicographic child order."""
    probs = [float(p) for p in probs]
    if len(probs) != M**d:
        raise ParameterError(f"expected {M**d} child probabilities, got {len(probs)}")
    if any(not 0 <= p <= 1 for p in probs):
        raise ParameterError("child probabilities must lie in [0,1]")
    if all(p == 1 for p in probs):
        raise ParameterError("at least one child probability must be below 1")
    pmf = poisson_binomial_pmf(probs)
    pmf = np.clip(pmf, 0.0, None)
    pmf /= pmf.sum()
    return OffspringDistribution(M, d, tuple(pmf), "poisson_binomial", tuple(probs))


def general_offspring(M: int, d: int, pmf: Sequence[float]) -> OffspringDistribution:
    return OffspringDistribution(M, d, tuple(float(x) for x in pmf), "general")


def pgf_eval(dist: OffspringDistribution, t: float) -> float:
    """f(t) = sum_k p_k t^k by Horner's rule."""
    acc = 0.0
    for pk in reversed(dist.pmf):
        acc = acc * t + pk
    return acc


def pgf_derivative(dist: OffspringDistribution, t: float) -> float:
    acc = 0.0
    for k in range(len(dist.pmf) - 1, 0, -1):
        acc = acc * t + k * dist.pmf[k]
    return acc


def extinction_prob(dist: OffspringDistribution, tol: float = EXTINCTION_TOL,
                    max_iter: int = EXTINCTION_MAX_ITER) -> float:
    """Smallest fixed point of the pgf on [0,1].

    Iterates t <- f(t) from 0, which increases monotonically to the smallest
    root. The stopping rule bounds the remaining distance to the root using
    the observed contraction ratio of successive steps.
    """
    if dist.pmf[0] == 0:
        return 0.0
    if dist.mean <= 1:
        return 1.0
    t = 0.0
    prev_step = None
    for _ in range(max_iter):
        nxt = pgf_eval(dist, t)
        step = nxt - t
        t = nxt
        if step <= 0:
            return t
        if prev_step is not None and prev_step > 0:
            ratio = step / prev_step
            if ratio < 1 and step * ratio / (1 - ratio) < tol and step < tol:
                return t
        prev_step = step
    raise ResourceCapError(f"extinction iteration did not converge in {max_iter} steps")


@dataclass(frozen=True)
class GwAnalytics:
    q: float
    mean: float
    s: float | None


def fractal_dimension(dist: OffspringDistribution) -> float:
    """Almost-sure dimension log E(L_o) / log M of the limit set."""
    if not dist.supercritical:
        raise SubcriticalError(f"mean offspring {dist.mean} <= 1: the limit set is empty a.s.")
    return math.log(dist.mean) / math.log(dist.M)


def analytics(dist: OffspringDistribution) -> GwAnalytics:
    q = extinction_prob(dist)
    s = fractal_dimension(dist) if dist.supercritical else None
    return GwAnalytics(q=q, mean=dist.mean, s=s)


@dataclass(frozen=True)
class SurvivalOffspring:
    """Summary of ``L~``: surviving level-N descendants of the root given non-extinction."""

    base: OffspringDistribution
    N: int
    q: float
    mean: float
    p_top: float
    p_one: float
    log_p_top: float


def _require_supercritical(dist: OffspringDistribution) -> float:
    if not dist.supercritical:
        raise SubcriticalError(f"mean offspring {dist.mean} <= 1: conditioning on survival is void")
    return extinction_prob(dist)


def _log_p_top(dist: OffspringDistribution, N: int, q: float) -> float:
    n = dist.size
    internal = (n**N - 1) // (n - 1)  # full tree of depth N has this many internal nodes
    if dist.p_full == 0:
        return -math.inf
    log_surv = math.log1p(-q) if q < 1 else -math.inf
    return internal * math.log(dist.p_full) + (n**N - 1) * log_surv


def survival_offspring(dist: OffspringDistribution, N: int) -> SurvivalOffspring:
    if N < 1:
        raise ParameterError("block size N must be positive")
    q = _require_supercritical(dist)
    lpt = _log_p_top(dist, N, q)
    p_one = pgf_derivative(dist, q) ** N
    return SurvivalOffspring(
        base=dist, N=N, q=q, mean=dist.mean**N,
        p_top=math.exp(lpt) if lpt > -math.inf else 0.0,
        p_one=p_one, log_p_top=lpt,
    )


def _compose(pmf: Sequence[float], inner: np.ndarray) -> np.ndarray:
    acc = np.array([pmf[-1]])
    for pk in reversed(pmf[:-1]):
        acc = np.convolve(acc, inner)
        acc[0] += pk
    return acc


def survival_offspring_pmf(dist: OffspringDistribution, N: int,
                           cap: int = DEFAULT_DEGREE_CAP) -> np.ndarray:
    """Exact pmf of ``L~`` on {0, ..., M^{dN}}.

    The unconditional pgf of the surviving count at depth N is
    f^{oN}(q + (1-q) t); dropping the mass q at zero and rescaling by
    1/(1-q) conditions on non-extinction.
    """
    if N < 1:
        raise ParameterError("block size N must be positive")
    if dist.size**N > cap:
        raise ResourceCapError(
            f"M^(dN) = {dist.size**N} exceeds the degree cap {cap}; estimate by Monte Carlo instead"
        )
    q = _require_supercritical(dist)
    poly = np.array([q, 1.0 - q])
    for _ in range(N):
        poly = _compose(dist.pmf, poly)
    out = np.zeros(dist.size**N + 1)
    out[1:len(poly)] = poly[1:] / (1.0 - q)
    return out


# ---------------------------------------------------------------- bound reports


@dataclass
class BoundReport:
    theorem: str
    M: int
    d: int
    params: dict
    N: int
    E_L: float
    verdict: str
    delta: float | None = None
    constants: dict = field(default_factory=dict)

    FIELDS = ("theorem", "M", "d", "params", "N", "E_L", "verdict", "delta", "constants")

    @property
    def supercritical(self) -> bool:
        return self.verdict == "supercritical"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_row(self) -> dict[str, str]:
        """Flat CSV row; nested mappings become ``key=value`` lists joined by ``;``."""
        def flat(mapping):
            return ";".join(f"{k}={_fmt(v)}" for k, v in sorted(mapping.items()))

        row = {k: _fmt(getattr(self, k)) for k in self.FIELDS}
        row["params"] = flat(self.params)
        row["constants"] = flat(self.constants)
        return row


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _verdict(E_L: float) -> str:
    return "supercritical" if E_L > 1 else "subcritical"


def _params(dist: OffspringDistribution, **extra) -> dict:
    out = {"kind": dist.kind}
    if dist.kind == "binomial":
        out["p"] = dist.params[0]
    elif dist.kind == "poisson_binomial":
        out["probs"] = ",".join(repr(x) for x in dist.params)
    else:
        out["pmf"] = ",".join(repr(x) for x in dist.pmf)
    out.update(extra)
    return out


def bound_c(dist: OffspringDistribution, N: int | None = None,
            max_N: int = DEFAULT_BLOCK_CAP) -> BoundReport:
    """Uniform upper-porosity constant from the full-block construction."""
    _require_supercritical(dist)
    if not dist.nondegenerate:
        raise ParameterError("the offspring law is degenerate (P(L=1)=1 or P(L=M^d)=1)")
    if N is None:
        for n in range(1, max_N + 1):
            so = survival_offspring(dist, n)
            if n * dist.d * math.log(dist.M) + so.log_p_top < 0:
                N = n
                break
        else:
            raise ResourceCapError(f"no block size below {max_N} makes the full-block process subcritical")
    so = survival_offspring(dist, N)
    E_L = dist.size**N * so.p_top
    c = 0.5 / math.sqrt(dist.d) * dist.M ** (-N)
    return BoundReport("T1", dist.M, dist.d, _params(dist), N, E_L, _verdict(E_L), None,
                       {"c": c, "p_top": so.p_top})


def _bracket_N(scale: float, eps: float, M: int) -> int:
    """Smallest N >= 1 with scale * M^-N < eps."""
    N = 1
    while scale * M ** (-N) >= eps:
        N += 1
    return N


def _gap(log_removed: float, mean_N: float, N: int, M: int) -> tuple[float, dict]:
    """s - log(mean_N - removed) / (N log M), kept precise for tiny ``removed``.

    Returns the gap and extra constants: its natural log, and an underflow
    flag set when the gap is positive but below the smallest double.
    """
    scale = N * math.log(M)
    x_log = log_removed - math.log(mean_N)
    if x_log == -math.inf:
        return 0.0, {"log_delta": -math.inf, "delta_underflow": False}
    if x_log > -30:
        delta = -math.log1p(-math.exp(x_log)) / scale
        return delta, {"log_delta": math.log(delta), "delta_underflow": False}
    # -log1p(-x) = x to double precision here
    log_delta = x_log - math.log(scale)
    delta = math.exp(log_delta)
    return delta, {"log_delta": log_delta, "delta_underflow": delta == 0.0}


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def bound_upor_dim(dist: OffspringDistribution, eps: float, mode: str = "auto") -> BoundReport:
    """Dimension gap for {upor < 1/2 - eps}.

    ``mode="at_least_two"`` removes the sole-survivor case (mass P(L~ = 1));
    ``mode="hole"`` removes one hole-meeting cube (mass P(0 < L_o < M^d)), the
    construction that works for arbitrary offspring laws. ``"auto"`` uses the
    first for percolation laws with P(L~ = 1) > 0 and the second otherwise.
    """
    if not 0 < eps < 0.5:
        raise ParameterError(f"eps must lie in (0, 1/2), got {eps}")
    if mode not in ("auto", "at_least_two", "hole"):
        raise ParameterError(f"unknown mode {mode!r}")
    _require_supercritical(dist)
    N = _bracket_N(math.sqrt(dist.d), eps, dist.M)
    so = survival_offspring(dist, N)
    if mode == "auto":
        mode = "at_least_two" if dist.kind != "general" and so.p_one > 0 else "hole"
    if mode == "at_least_two":
        removed = so.p_one
    else:
        removed = math.fsum(dist.pmf[1:-1])
    E_L = so.mean - removed
    s = fractal_dimension(dist)
    consts = {"s": s, "removed_mass": removed, "E_Ltilde": so.mean}
    delta = None
    if E_L > 1:
        log_removed = N * _log(pgf_derivative(dist, so.q)) if mode == "at_least_two" else _log(removed)
        delta, extra = _gap(log_removed, so.mean, N, dist.M)
        consts.update(extra)
    return BoundReport("T2", dist.M, dist.d, _params(dist, eps=eps, mode=mode), N, E_L,
                       _verdict(E_L), delta, consts)


def bound_lpor_dim(dist: OffspringDistribution, eps: float) -> BoundReport:
    """Dimension gap for {lpor > eps} from the drop-center construction."""
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    _require_supercritical(dist)
    if dist.p_full == 0:
        raise ParameterError(
            "P(L_o = M^d) = 0: then lpor > 1/(2 sqrt(d) M^2) everywhere, so no dimension gap exists"
        )
    N = _bracket_N(3 * math.sqrt(dist.d), eps, dist.M)
    so = survival_offspring(dist, N)
    E_L = so.mean - so.p_top
    s = fractal_dimension(dist)
    consts = {"s": s, "p_top": so.p_top, "log_p_top": so.log_p_top, "E_Ltilde": so.mean}
    delta = None
    if E_L > 1:
        delta, extra = _gap(so.log_p_top, so.mean, N, dist.M)
        consts.update(extra)
    return BoundReport("T3", dist.M, dist.d, _params(dist, eps=eps), N, E_L, _verdict(E_L), delta, consts)


def _ceil_sqrt(n: int) -> int:
    r = math.isqrt(n)
    return r if r * r == n else r + 1


def shell_width(d: int) -> int:
    """Layer count a = ceil(sqrt(d) + 2) of the interior-shell construction."""
    return _ceil_sqrt(d) + 2


def bound_upor_lower(M: int, d: int, p: float, max_N: int = 10**6) -> BoundReport:
    """Lower dimension bound for {upor <= rho} from the interior-shell construction."""
    dist = binomial_offspring(M, d, p)
    if p <= M ** (-d):
        raise SubcriticalError(f"p = {p} <= M^-d: the process dies out a.s.")
    a = shell_width(d)
    if M**a <= 2 * a:
        raise ParameterError(f"M^a = {M**a} <= 2a = {2 * a}: the interior-shell construction is impossible")
    q = extinction_prob(dist)
    n = M**d
    log_full = n * ((M ** (d * a) - 1) // (n - 1)) * math.log(p)
    log_surv = math.log1p(-q)
    base = -log_surv + d * math.log(M**a - 2 * a) + log_full + M ** (a * d) * log_surv
    growth = math.log(p * n)
    # smallest N > a with base + (N - a) * growth > 0
    k = max(1, math.floor(-base / growth) + 1)
    while base + (k - 1) * growth > 0 and k > 1:
        k -= 1
    while base + k * growth <= 0:
        k += 1
    N = a + k
    if N > max_N:
        raise ResourceCapError(f"interior-shell block size {N} exceeds the cap {max_N}")
    log_E_L = base + k * growth
    E_L = math.exp(log_E_L)
    headroom = M ** (-2.0 * N) / (2 * math.sqrt(d))
    rho = 0.5 - headroom
    return BoundReport("T4", M, d, _params(dist), N, E_L, "supercritical", log_E_L / (N * math.log(M)),
                       {"a": a, "rho": rho, "eps_headroom": headroom,
                        "P_full_block": math.exp(log_full), "q": q})


def bound_lpor_lower(dist: OffspringDistribution, max_N: int = DEFAULT_BLOCK_CAP) -> BoundReport:
    """Lower dimension bound for {lpor > eps} from the not-all construction."""
    _require_supercritical(dist)
    if not dist.nondegenerate:
        raise ParameterError("the offspring law is degenerate (P(L=1)=1 or P(L=M^d)=1)")
    for N in range(1, max_N + 1):
        so = survival_offspring(dist, N)
        E_L = so.mean - dist.size**N * so.p_top
        if E_L > 1:
            break
    else:
        raise ResourceCapError(f"no block size below {max_N} makes the not-all process supercritical")
    eps = 0.5 / math.sqrt(dist.d) * dist.M ** (-2 * N)
    delta = math.log(E_L) / (N * math.log(dist.M))
    return BoundReport("T5", dist.M, dist.d, _params(dist), N, E_L, "supercritical", delta,
                       {"eps": eps, "p_top": so.p_top, "E_Ltilde": so.mean})


def annular_block_size(M: int, d: int) -> int:
    """Smallest N with M^N > 3 + sqrt(d), decided in integers."""
    N = 1
    while not (M**N - 3 > 0 and (M**N - 3) ** 2 > d):
        N += 1
    return N


def far_layer(d: int) -> int:
    """Smallest layer index k with k M^-N strictly beyond (1 + sqrt(d)) M^-N."""
    k = 1
    while not (k - 1 > 0 and (k - 1) ** 2 > d):
        k += 1
    return k


def annular_bounds(M: int, d: int, p: float) -> BoundReport:
    """Subcriticality check for the isolated-interior-cube construction.

    ``E_L`` follows the published expectation with the boundary-distance
    fraction ``p_b``; ``constants["E_L_exact"]`` is the exact mean of the
    implemented rule, using that a sole surviving cube is uniformly placed.
    """
    dist = binomial_offspring(M, d, p)
    if p <= M ** (-d):
        raise SubcriticalError(f"p = {p} <= M^-d: the process dies out a.s.")
    q = extinction_prob(dist)
    N = annular_block_size(M, d)
    span = M**N
    k0 = _ceil_sqrt(d) + 1
    p_b = (max(0, span - 2 * k0) / span) ** d
    m = p * M**d
    p_one = m**N * (1 - p + p * q) ** ((M**d - 1) * N)
    E_L = m**N - p_one + p_b
    kf = far_layer(d)
    p_far = (max(0, span - 2 * kf) / span) ** d
    E_exact = m**N - p_one * p_far
    delta = math.log(E_L) / (N * math.log(M)) if E_L > 1 else None
    return BoundReport("annular", M, d, _params(dist), N, E_L, _verdict(E_L), delta,
                       {"p_b": p_b, "k0": k0, "p_one": p_one, "q": q,
                        "p_far": p_far, "E_L_exact": E_exact})
