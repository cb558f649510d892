"""Rank experiments for pointwise functions applied to low-rank matrices.

* :func:`power_rank_trials`: rank of elementwise powers of rank-d products,
  against the binomial ceiling C(d+p-1, p).
* :func:`square_fullrank_trials`: how often squaring entries of a rank-(N-1)
  N x N matrix gives a full-rank matrix.
* :func:`indicator_construct`: indicator map on M distinct dot products that
  turns the chosen M x M submatrix into the identity.
* :func:`monotone_surrogate`: from any rank-raising map, build a strictly
  increasing piecewise-linear map with at least the same rank.

All ranks are numerical ranks (:func:`numkit.numerical_rank`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .numkit import make_rng, numerical_rank, parallel_map


class ConstructionInapplicable(ValueError):
    pass


class RankPreconditionError(ValueError):
    pass


class SurrogateNotFound(RuntimeError):
    def __init__(self, best_det: float, draws: int, threshold: float):
        super().__init__(
            f"no surrogate within {draws} draws (best |det| {best_det:.3e}, threshold {threshold:.3e})"
        )
        self.best_det = best_det
        self.draws = draws
        self.threshold = threshold


class ValueTableFn:
    """Function given by a table of (input, output) pairs.

    Between table inputs the value is linearly interpolated; outside
    [b_1, b_T] the function is the identity.
    """

    def __init__(self, inputs, outputs):
        b = np.asarray(inputs, dtype=np.float64).ravel()
        c = np.asarray(outputs, dtype=np.float64).ravel()
        if b.size == 0 or b.shape != c.shape:
            raise ValueError("table needs equally many inputs and outputs")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("table entries must be finite")
        if np.any(np.diff(b) <= 0):
            raise ValueError("table inputs must be strictly increasing")
        self.inputs = b
        self.outputs = c

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= self.inputs[0]) & (x <= self.inputs[-1])
        return np.where(inside, np.interp(x, self.inputs, self.outputs), x)

    def is_strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.outputs) > 0))

    def to_dict(self) -> dict:
        return {"inputs": self.inputs.tolist(), "outputs": self.outputs.tolist()}


# ---------------------------------------------------------------- powers


@dataclass(frozen=True)
class RankTrialSpec:
    N: int
    M: int
    d: int
    p: int
    trials: int = 200
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.d <= min(self.N, self.M):
            raise ValueError("need 1 <= d <= min(N, M)")
        if self.p < 1:
            raise ValueError("power p must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class PowerTrialReport:
    spec: RankTrialSpec
    bound: int
    ranks: list[int]
    max_rank: int
    violations: int

    def to_dict(self) -> dict:
        return {**asdict(self.spec), "bound": self.bound, "max_rank": self.max_rank,
                "violations": self.violations}


def hadamard_power_bound(N: int, M: int, d: int, p: int) -> int:
    return min(N, M, math.comb(d + p - 1, p))


def power_rank_trials(spec: RankTrialSpec) -> PowerTrialReport:
    def one(t: int) -> int:
        rng = make_rng(spec.seed, t)
        W = rng.standard_normal((spec.M, spec.d))
        H = rng.standard_normal((spec.N, spec.d))
        return numerical_rank((W @ H.T) ** spec.p)

    ranks = parallel_map(one, range(spec.trials))
    bound = hadamard_power_bound(spec.N, spec.M, spec.d, spec.p)
    return PowerTrialReport(spec, bound, ranks, max(ranks), sum(r > bound for r in ranks))


# ---------------------------------------------------------------- squaring


def has_proportional_columns(A, tol: float = 1e-9) -> bool:
    """True if two columns are parallel (|cos| >= 1 - tol) or a column is zero."""
    A = np.asarray(A, dtype=np.float64)
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        return A.shape[1] > 1
    C = A / norms
    G = np.abs(C.T @ C)
    np.fill_diagonal(G, 0.0)
    return bool(np.any(G >= 1.0 - tol))


@dataclass
class SquareCheck:
    rank: int
    full_rank: bool
    flagged: bool


def square_rank_check(A) -> SquareCheck:
    """Rank of the elementwise square; flags the proportional-column exclusion."""
    A = np.asarray(A, dtype=np.float64)
    r = numerical_rank(A * A)
    return SquareCheck(r, r == min(A.shape), has_proportional_columns(A))


@dataclass
class SquareTrialReport:
    N: int
    trials: int
    seed: int
    full_rank: int
    flagged: int
    frequency: float
    ranks: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("ranks")
        return d


def square_fullrank_trials(N: int, trials: int = 500, seed: int = 0) -> SquareTrialReport:
    """Square random rank-(N-1) matrices elementwise and count full-rank results.

    Matrices with proportional columns can never become full rank this way;
    they are flagged and left out of the frequency instead of counting as
    failures.
    """
    if N <= 1:
        raise ValueError("N must be > 1")

    def one(t: int) -> SquareCheck:
        rng = make_rng(seed, t)
        X = rng.standard_normal((N, N - 1))
        Y = rng.standard_normal((N, N - 1))
        return square_rank_check(X @ Y.T)

    checks = parallel_map(one, range(trials))
    flagged = sum(c.flagged for c in checks)
    full = sum(c.full_rank for c in checks if not c.flagged)
    counted = trials - flagged
    freq = full / counted if counted else float("nan")
    return SquareTrialReport(N, trials, seed, full, flagged, freq, [c.rank for c in checks])


# ---------------------------------------------------------------- indicator construction


@dataclass
class IndicatorResult:
    fn: ValueTableFn
    rank: int
    columns: list[int]
    submatrix: np.ndarray


def _value_scale(A: np.ndarray) -> float:
    s = float(np.max(np.abs(A))) if A.size else 0.0
    return s if s > 0 else 1.0


def indicator_construct(W, H, columns, rel_gap: float = 1e-9) -> IndicatorResult:
    """Indicator of the chosen dot products <w_i, h_{j_i}>, as a value table.

    Raises :class:`ConstructionInapplicable` when a chosen value is within
    ``rel_gap * max|A|`` of another chosen value or of any other entry.
    """
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    A = W @ H.T
    M, N = A.shape
    columns = [int(j) for j in columns]
    if len(columns) != M or len(set(columns)) != M:
        raise ValueError(f"need {M} distinct column indices")
    if M > N or any(not 0 <= j < N for j in columns):
        raise ValueError("column indices out of range")
    rows = np.arange(M)
    chosen = A[rows, columns]
    mask = np.ones_like(A, dtype=bool)
    mask[rows, columns] = False
    others = A[mask]
    gap = rel_gap * _value_scale(A)
    srt = np.sort(chosen)
    if M > 1 and np.min(np.diff(srt)) <= gap:
        raise ConstructionInapplicable("chosen dot products are not pairwise distinct")
    if others.size:
        other_sorted = np.sort(others)
        pos = np.searchsorted(other_sorted, chosen)
        lo = other_sorted[np.clip(pos - 1, 0, other_sorted.size - 1)]
        hi = other_sorted[np.clip(pos, 0, other_sorted.size - 1)]
        nearest = np.minimum(np.abs(chosen - lo), np.abs(chosen - hi))
        if np.min(nearest) <= gap:
            raise ConstructionInapplicable("a chosen dot product coincides with another entry")
    values = np.unique(A)
    outputs = np.isin(values, chosen).astype(np.float64)
    fn = ValueTableFn(values, outputs)
    fA = fn(A)
    return IndicatorResult(fn, numerical_rank(fA), columns, fA[:, columns])


# ---------------------------------------------------------------- monotone surrogate


def select_submatrix(B, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows and columns of a well-conditioned K x K submatrix via pivoted QR."""
    B = np.asarray(B, dtype=np.float64)
    _, _, col_perm = scipy.linalg.qr(B, mode="economic", pivoting=True)
    cols = np.sort(col_perm[:K])
    _, _, row_perm = scipy.linalg.qr(B[:, cols].T, mode="economic", pivoting=True)
    rows = np.sort(row_perm[:K])
    return rows, cols


def select_submatrix_exhaustive(B, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force max |det| over all K x K submatrices (small matrices only)."""
    B = np.asarray(B, dtype=np.float64)
    if max(B.shape) > 6:
        raise ValueError("exhaustive search is limited to dimensions <= 6")
    best, arg = -1.0, None
    for rows in itertools.combinations(range(B.shape[0]), K):
        for cols in itertools.combinations(range(B.shape[1]), K):
            det = abs(np.linalg.det(B[np.ix_(rows, cols)]))
            if det > best:
                best, arg = det, (np.array(rows), np.array(cols))
    return arg


@dataclass
class SurrogateResult:
    g: ValueTableFn
    rank: int
    draws: int
    det: float
    rows: np.ndarray
    cols: np.ndarray
    epsilon: float


def _anchor_table(b: np.ndarray, c: np.ndarray, eps: float) -> ValueTableFn:
    # identity below b_1 - 2eps, g(b_i) = c_i, back on the identity at b_i + 2eps
    xs = np.empty(2 * b.size + 1)
    ys = np.empty_like(xs)
    xs[0] = ys[0] = b[0] - 2 * eps
    xs[1::2], ys[1::2] = b, c
    xs[2::2] = ys[2::2] = b + 2 * eps
    return ValueTableFn(xs, ys)


def monotone_surrogate(
    A,
    f: Callable,
    K: int,
    seed: int = 0,
    budget: int = 10_000,
) -> SurrogateResult:
    """Strictly increasing piecewise-linear g with rank(g(A)) >= K.

    ``f`` is any pointwise map with rank(f(A)) >= K.  A K x K submatrix where
    f is non-singular is located, its distinct values b_1 < ... < b_T are each
    perturbed inside a disjoint window of half-width eps (a quarter of the
    smallest gap), and draws are repeated until the perturbed submatrix is
    non-singular.  Disjoint windows make any draw increasing.
    """
    A = np.asarray(A, dtype=np.float64)
    fA = np.asarray(f(A), dtype=np.float64)
    r = numerical_rank(fA)
    if r < K:
        raise RankPreconditionError(f"rank(f(A)) = {r} < K = {K}")
    rows, cols = select_submatrix(fA, K)
    sub_f = fA[np.ix_(rows, cols)]
    if max(A.shape) <= 6 and numerical_rank(sub_f) < K:
        rows, cols = select_submatrix_exhaustive(fA, K)
    sub = A[np.ix_(rows, cols)]
    b = np.unique(sub)
    eps = 0.25 * float(np.min(np.diff(b))) if b.size > 1 else 0.25 * max(1.0, abs(float(b[0])))
    scale = float(np.max(np.abs(b))) + eps
    threshold = 1e-12 * scale**K
    rng = make_rng(seed, 0x5A11)
    best = 0.0
    for draw in range(1, budget + 1):
        c = rng.uniform(b - eps, b + eps)
        g = _anchor_table(b, c, eps)
        det = abs(float(np.linalg.det(g(sub))))
        best = max(best, det)
        if det > threshold:
            rank = numerical_rank(g(A))
            if rank >= K:
                return SurrogateResult(g, rank, draw, det, rows, cols, eps)
    raise SurrogateNotFound(best, budget, threshold)


def parity_table(A) -> ValueTableFn:
    """Indicator of odd integer entries, tabulated on the distinct values of A."""
    values = np.unique(np.asarray(A, dtype=np.float64))
    return ValueTableFn(values, (np.mod(np.rint(values), 2) == 1).astype(np.float64))


def residue_table(A, modulus: int = 3) -> ValueTableFn:
    values = np.unique(np.asarray(A, dtype=np.float64))
    return ValueTableFn(values, np.mod(np.rint(values), modulus).astype(np.float64))


@dataclass
class RankRaisingPair:
    A: np.ndarray
    f: ValueTableFn
    K: int
    base_rank: int


def search_rank_raising_pairs(count: int = 20, seed: int = 0, dims=(4, 5), d: int = 2,
                              max_tries: int = 100_000) -> list[RankRaisingPair]:
    """Brute-force search over small integer products W H^T for pairs (A, f)
    where a parity or mod-3 table raises the rank above rank(A)."""
    rng = make_rng(seed, 0xA11)
    pairs: list[RankRaisingPair] = []
    for t in range(max_tries):
        if len(pairs) == count:
            break
        n = dims[t % len(dims)]
        W = rng.integers(-3, 4, (n, d)).astype(np.float64)
        H = rng.integers(-3, 4, (n, d)).astype(np.float64)
        A = W @ H.T
        base = numerical_rank(A)
        if base == 0:
            continue
        f = parity_table(A) if t % 2 == 0 else residue_table(A)
        k = numerical_rank(f(A))
        if k > base:
            pairs.append(RankRaisingPair(A, f, k, base))
    if len(pairs) < count:
        raise RuntimeError(f"found only {len(pairs)} rank-raising pairs")
    return pairs
