"""Synthetic tasks: N independent categorical distributions drawn from Dir(alpha)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numkit import make_rng, read_matrix_csv, softmax, write_matrix_csv

TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class SyntheticTaskSpec:
    alpha: float
    M: int
    N: int
    D: int
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.M < 2:
            raise ValueError("vocabulary size M must be at least 2")
        if self.N < 1:
            raise ValueError("context count N must be at least 1")
        if self.D < 1:
            raise ValueError("embedding dimension D must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class SyntheticTask:
    spec: SyntheticTaskSpec
    P_star: np.ndarray

    def save(self, csv_path) -> None:
        """P_star as headerless CSV plus a ``.json`` spec sidecar."""
        csv_path = Path(csv_path)
        write_matrix_csv(csv_path, self.P_star)
        csv_path.with_suffix(".json").write_text(json.dumps(asdict(self.spec), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, csv_path) -> "SyntheticTask":
        csv_path = Path(csv_path)
        spec = SyntheticTaskSpec(**json.loads(csv_path.with_suffix(".json").read_text(encoding="utf-8")))
        P = read_matrix_csv(csv_path)
        if P.shape != (spec.N, spec.M):
            raise ValueError(f"{csv_path}: table shape {P.shape} does not match spec")
        return cls(spec, P)


def log_gamma_variates(alpha: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """log of Gamma(alpha, 1) draws.

    For alpha < 1 the draw is Gamma(alpha + 1) * U**(1/alpha); taking logs keeps
    very small variates (common when alpha is around 0.01) from underflowing.
    """
    if alpha >= 1.0:
        return np.log(rng.standard_gamma(alpha, size))
    g = rng.standard_gamma(alpha + 1.0, size)
    u = 1.0 - rng.random(size)  # in (0, 1]
    return np.log(g) + np.log(u) / alpha


def sample_dirichlet(alpha: float, M: int, rng: np.random.Generator) -> np.ndarray:
    """One draw from the symmetric Dirichlet over M categories.

    Entries are floored at the smallest normal double so every probability
    stays strictly positive and its log finite.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if M < 2:
        raise ValueError("M must be at least 2")
    p = softmax(log_gamma_variates(alpha, M, rng))
    return np.maximum(p, TINY)


def build_task(spec: SyntheticTaskSpec) -> SyntheticTask:
    """Row j is drawn from the stream (seed, j), so it does not depend on N."""
    P = np.empty((spec.N, spec.M))
    for j in range(spec.N):
        P[j] = sample_dirichlet(spec.alpha, spec.M, make_rng(spec.seed, j))
    return SyntheticTask(spec, P)
