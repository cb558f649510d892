"""Dense numerical kernels shared by every other module.

Everything here works on float64 numpy arrays.  Randomness comes from
:func:`make_rng`, which builds a Philox (counter-based) generator keyed by
``(seed, *stream)`` so independent streams never have to share state.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from scipy.special import expit

EPS = np.finfo(np.float64).eps

T = TypeVar("T")
R = TypeVar("R")


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.size == 0:
        raise ValueError("expected a non-empty sequence")
    return v


def log_sum_exp(v, axis: int = -1) -> np.ndarray | float:
    """Max-shifted log(sum(exp(v))) along ``axis``.

    Entries may be ``-inf`` as long as a slice is not entirely ``-inf``.
    """
    v = _as_vector(v)
    m = np.max(v, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("log_sum_exp needs at least one finite entry per slice")
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = _as_vector(v)
    m = np.max(v, axis=axis, keepdims=True)
    shifted = v - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(v, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis``; invariant to adding a constant to the inputs."""
    v = _as_vector(v)
    m = np.max(v, axis=axis, keepdims=True)
    e = np.exp(v - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus for y > 0, stable for both tiny and large y."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus_inv requires strictly positive input")
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return expit(x)


def entropy(p, axis: int = -1) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = -np.sum(terms, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def check_finite(A, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def singular_values(A) -> np.ndarray:
    """Singular values in non-increasing order (LAPACK gesdd via numpy)."""
    A = check_finite(A)
    if A.ndim != 2:
        raise ValueError("singular_values expects a 2-D matrix")
    if A.size == 0:
        return np.zeros(0)
    return np.linalg.svd(A, compute_uv=False)


def rank_tolerance(s: np.ndarray, shape: tuple[int, int]) -> float:
    if s.size == 0:
        return 0.0
    return float(s[0]) * max(shape) * EPS


def numerical_rank(A, tol: float | None = None) -> int:
    """Number of singular values above ``tol``.

    Default tolerance is ``sigma_1 * max(rows, cols) * eps``.
    """
    A = np.asarray(A, dtype=np.float64)
    s = singular_values(A)
    if tol is None:
        tol = rank_tolerance(s, A.shape)
    return int(np.count_nonzero(s > tol))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox4x64 generator for ``(seed, *stream)``.

    Streams with different keys are statistically independent, so per-row or
    per-trial generators can be derived without sharing a mutable state.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def thread_count() -> int:
    raw = os.environ.get("SOFTMAXLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SOFTMAXLAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    """Map ``fn`` over ``items``; results come back in input order."""
    items = list(items)
    n = thread_count() if threads is None else threads
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def write_matrix_csv(path, A) -> None:
    """Plain comma-separated rows, no header, round-trippable floats."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in A:
            fh.write(",".join(repr(float(x)) for x in row))
            fh.write("\n")


def read_matrix_csv(path) -> np.ndarray:
    rows: list[Sequence[float]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")])
    if not rows:
        return np.zeros((0, 0))
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ValueError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)
