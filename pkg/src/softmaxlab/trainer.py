"""Fit heads to synthetic tasks and score them.

Each context gets its own free vector h_j; the word embeddings and head
parameters are shared.  The objective is the mean cross-entropy, which differs
from the mean KL(P* || Q) only by the (constant) mean entropy of P*.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .heads import HEAD_VARIANTS, Head, build_head
from .numkit import entropy, make_rng
from .synth import SyntheticTask

OPTIMIZERS = ("adam", "sgd", "momentum")

# stream keys, kept apart from the per-row task streams (seed, j)
_INIT_STREAM = (0x5EED, 1)
_BATCH_STREAM = (0x5EED, 2)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class TrainConfig:
    steps: int = 3000
    lr: float = 1e-2
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 0  # 0 means full batch
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {', '.join(OPTIMIZERS)}")
        if self.batch < 0:
            raise ValueError("batch must be >= 0")


@dataclass
class HeadSpec:
    variant: str = "linear"
    hidden: int = 32
    knots: int = 1000
    plif_range: float = 10.0
    mix: int = 3

    def __post_init__(self):
        if self.variant not in HEAD_VARIANTS:
            raise ValueError(f"unknown head {self.variant!r}; expected one of {', '.join(HEAD_VARIANTS)}")

    def size_params(self) -> dict:
        """Only the size knobs that matter for this variant."""
        if self.variant == "lms-mlp":
            return {"hidden": self.hidden}
        if self.variant == "lms-plif":
            return {"knots": self.knots, "plif_range": self.plif_range}
        if self.variant == "mos":
            return {"mix": self.mix}
        return {}


@dataclass
class MetricsReport:
    mean_kl: float
    mode_match: float
    final_ce: float
    losses: list[float] = field(default_factory=list)

    def to_dict(self, with_losses: bool = False) -> dict:
        d = asdict(self)
        if not with_losses:
            d.pop("losses")
        return d


@dataclass
class FitResult:
    head: Head
    H: np.ndarray
    metrics: MetricsReport


def mode_match(P_star, Q) -> float:
    """Fraction of rows whose argmax agree; ties go to the lowest index."""
    P_star = np.asarray(P_star)
    Q = np.asarray(Q)
    if P_star.shape != Q.shape:
        raise ValueError("tables must have equal shapes")
    P_star = np.atleast_2d(P_star)
    Q = np.atleast_2d(Q)
    return float(np.mean(np.argmax(P_star, axis=1) == np.argmax(Q, axis=1)))


def mean_kl_from_log(P_star, logQ) -> float:
    P_star = np.atleast_2d(np.asarray(P_star, dtype=np.float64))
    logQ = np.atleast_2d(np.asarray(logQ, dtype=np.float64))
    if P_star.shape != logQ.shape:
        raise ValueError("tables must have equal shapes")
    ce = -np.sum(np.where(P_star > 0, P_star * logQ, 0.0), axis=1)
    return float(np.mean(ce - entropy(P_star, axis=1)))


def mean_kl(P_star, Q) -> float:
    """(1/N) sum_j KL(P*_j || Q_j); +inf if Q misses support of P*."""
    P_star = np.atleast_2d(np.asarray(P_star, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if P_star.shape != Q.shape:
        raise ValueError("tables must have equal shapes")
    if np.any(Q[P_star > 0] <= 0):
        return float("inf")
    with np.errstate(divide="ignore"):
        logQ = np.log(Q)
    return mean_kl_from_log(P_star, np.where(P_star > 0, logQ, 0.0))


class _Optimizer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        cfg = self.cfg
        self.t += 1
        out = {}
        for name, p in params.items():
            g = grads[name]
            if cfg.optimizer == "sgd":
                out[name] = p - cfg.lr * g
            elif cfg.optimizer == "momentum":
                buf = self.m.get(name)
                buf = g.copy() if buf is None else cfg.momentum * buf + g
                self.m[name] = buf
                out[name] = p - cfg.lr * buf
            else:
                m = cfg.beta1 * self.m.get(name, 0.0) + (1 - cfg.beta1) * g
                v = cfg.beta2 * self.v.get(name, 0.0) + (1 - cfg.beta2) * g * g
                self.m[name], self.v[name] = m, v
                m_hat = m / (1 - cfg.beta1**self.t)
                v_hat = v / (1 - cfg.beta2**self.t)
                out[name] = p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return out


def fit_task(task: SyntheticTask, head: HeadSpec | str, cfg: TrainConfig | None = None) -> FitResult:
    """Minimise mean cross-entropy over H, W and head parameters.

    Raises :class:`TrainingDiverged` if the loss stops being finite.
    """
    cfg = cfg or TrainConfig()
    spec = HeadSpec(head) if isinstance(head, str) else head
    P = task.P_star
    N, M = P.shape
    D = task.spec.D
    rng = make_rng(cfg.seed, *_INIT_STREAM)
    model = build_head(
        spec.variant, M, D, rng,
        init_scale=cfg.init_scale, hidden=spec.hidden, knots=spec.knots,
        plif_range=spec.plif_range, mix=spec.mix,
    )
    H = rng.normal(0.0, cfg.init_scale, (N, D))
    H, losses = optimize(model, H, P, cfg)
    logq = model.log_probs(H)
    ce = float(-np.sum(P * logq) / N)
    metrics = MetricsReport(
        mean_kl=mean_kl_from_log(P, logq),
        mode_match=mode_match(P, logq),
        final_ce=ce,
        losses=losses,
    )
    return FitResult(model, H, metrics)


def optimize(model: Head, H: np.ndarray, P: np.ndarray, cfg: TrainConfig):
    """Run ``cfg.steps`` optimiser steps in place on ``model``; returns (H, losses)."""
    N = H.shape[0]
    opt = _Optimizer(cfg)
    batch_rng = make_rng(cfg.seed, *_BATCH_STREAM)
    minibatch = 0 < cfg.batch < N
    losses: list[float] = []
    for step in range(cfg.steps):
        # overflow shows up as a non-finite loss, which is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            if minibatch:
                rows = np.sort(batch_rng.choice(N, cfg.batch, replace=False))
                loss, grads = model.loss_and_grads(H[rows], P[rows])
                g_H = np.zeros_like(H)
                g_H[rows] = grads.pop("H")
            else:
                loss, grads = model.loss_and_grads(H, P)
                g_H = grads.pop("H")
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        losses.append(loss)
        params = dict(model.params())
        params["H"] = H
        grads["H"] = g_H
        new = opt.step(params, grads)
        H = new.pop("H")
        model.set_params(**new)
    return H, losses
