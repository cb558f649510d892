"""Output heads mapping context vectors to distributions over M words.

Three heads share the word embedding matrix ``W`` (M x d):

* ``LinearSoftmax``: softmax(W h)
* ``LMS``: softmax(f(W h)) for a pointwise increasing ``f``
* ``MoS``: sum_k pi_k(h) softmax(W tanh(U_k h)), pi = softmax(V h)

Heads are evaluated on a batch of contexts ``H`` (N x d) and return the
N x M matrix of log-probabilities.  ``backward`` takes dL/dlogQ and returns
gradients for ``H`` and every shared parameter, so any loss defined on the
log-probabilities (cross-entropy, MSE on the log-P matrix) can be trained.

The log-P matrix follows the words-by-contexts convention, i.e. it is the
transpose of what ``log_probs`` returns.  MSE on that matrix punishes errors on
tiny probabilities far more than on large ones (the log has slope 1/p), which
is why cross-entropy is the training loss used elsewhere in the package.
"""

from __future__ import annotations

import numpy as np

from . import monofn
from .monofn import Identity, MonotoneFn
from .numkit import entropy, log_softmax

HEAD_VARIANTS = ("linear", "sigsoftmax", "lms-mlp", "lms-plif", "mos")


def _check_contexts(H, d: int) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[None, :]
    if H.ndim != 2 or H.shape[1] != d:
        raise ValueError(f"context vectors must have dimension {d}, got shape {H.shape}")
    return H


def _log_softmax_backward(g: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return g - probs * np.sum(g, axis=-1, keepdims=True)


class Head:
    kind = ""

    def __init__(self, W):
        W = np.array(W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] < 1:
            raise ValueError("W must be an M x d matrix")
        self.W = W

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def set_params(self, **values) -> None:
        raise NotImplementedError

    def forward(self, H):
        raise NotImplementedError

    def backward(self, cache, g_logq) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def log_probs(self, H) -> np.ndarray:
        logq, _ = self.forward(_check_contexts(H, self.d))
        return logq

    def probs(self, H) -> np.ndarray:
        """Row-stochastic N x M table (a single vector for a 1-D ``h``)."""
        single = np.ndim(H) == 1
        q = np.exp(self.log_probs(H))
        return q[0] if single else q

    def loss_and_grads(self, H, P_star, loss: str = "ce"):
        """Mean loss over contexts and its gradients.

        ``loss="ce"`` is the mean cross-entropy against the rows of ``P_star``.
        ``loss="mse"`` treats ``P_star`` as a target log-P matrix (N x M here)
        and uses (1/N) * squared Frobenius distance.
        """
        H = _check_contexts(H, self.d)
        target = np.asarray(P_star, dtype=np.float64)
        if target.ndim == 1:
            target = target[None, :]
        if target.shape != (H.shape[0], self.M):
            raise ValueError("target shape does not match (contexts, vocabulary)")
        logq, cache = self.forward(H)
        n = H.shape[0]
        if loss == "ce":
            value = -np.sum(target * logq) / n
            g = -target / n
        elif loss == "mse":
            diff = logq - target
            value = np.sum(diff * diff) / n
            g = 2.0 * diff / n
        else:
            raise ValueError(f"unknown loss {loss!r}")
        return float(value), self.backward(cache, g)

    def grad_context(self, h, P_star) -> dict[str, np.ndarray]:
        """Cross-entropy gradients for a single context vector ``h``."""
        _, grads = self.loss_and_grads(np.asarray(h)[None, :], np.asarray(P_star)[None, :])
        grads["H"] = grads["H"][0]
        return grads

    def log_prob_matrix(self, H):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class LMS(Head):
    """softmax(f(W h)); with the identity map this is plain Linear-Softmax."""

    kind = "lms"

    def __init__(self, W, fn: MonotoneFn | None = None):
        super().__init__(W)
        self.fn = fn if fn is not None else Identity()

    def params(self):
        out = {"W": self.W}
        for name, val in self.fn.params().items():
            out[f"f.{name}"] = val
        return out

    def set_params(self, **values):
        fn_vals = {}
        for name, val in values.items():
            if name == "W":
                self.W = np.array(val, dtype=np.float64)
            elif name.startswith("f."):
                fn_vals[name[2:]] = val
            else:
                raise KeyError(name)
        if fn_vals:
            self.fn.set_params(**fn_vals)

    def forward(self, H):
        z = H @ self.W.T
        a, fcache = self.fn.forward(z)
        logq = log_softmax(a, axis=1)
        return logq, (H, fcache, np.exp(logq))

    def backward(self, cache, g_logq):
        H, fcache, q = cache
        g_a = _log_softmax_backward(g_logq, q)
        g_z, g_f = self.fn.backward(fcache, g_a)
        grads = {"H": g_z @ self.W, "W": g_z.T @ H}
        for name, val in g_f.items():
            grads[f"f.{name}"] = val
        return grads

    def log_prob_matrix(self, H):
        """(A_Q, logZ): the M x N log-P matrix and per-context log-partition."""
        H = _check_contexts(H, self.d)
        a = self.fn(H @ self.W.T)
        m = np.max(a, axis=1, keepdims=True)
        logz = (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]
        return (a - logz[:, None]).T, logz

    def to_dict(self):
        return {"head": self.kind, "W": self.W.tolist(), "fn": self.fn.to_dict()}


class LinearSoftmax(LMS):
    kind = "linear"

    def __init__(self, W):
        super().__init__(W, Identity())

    def to_dict(self):
        return {"head": self.kind, "W": self.W.tolist()}


class MoS(Head):
    """Mixture of K softmaxes with context-dependent priors.

    ``V`` (K x d) holds the prior directions and ``U`` (K x d x d) the
    component projections; both are shared across contexts.
    """

    kind = "mos"

    def __init__(self, W, V, U):
        super().__init__(W)
        self.V = np.array(V, dtype=np.float64)
        self.U = np.array(U, dtype=np.float64)
        k = self.V.shape[0]
        if k < 1 or self.V.shape != (k, self.d) or self.U.shape != (k, self.d, self.d):
            raise ValueError("MoS needs V: K x d and U: K x d x d with K >= 1")

    @property
    def K(self) -> int:
        return self.V.shape[0]

    def params(self):
        return {"W": self.W, "V": self.V, "U": self.U}

    def set_params(self, **values):
        for name, val in values.items():
            if name not in ("W", "V", "U"):
                raise KeyError(name)
            setattr(self, name, np.array(val, dtype=np.float64))

    def priors(self, H) -> np.ndarray:
        H = _check_contexts(H, self.d)
        return np.exp(log_softmax(H @ self.V.T, axis=1))

    def forward(self, H):
        n = H.shape[0]
        log_pi = log_softmax(H @ self.V.T, axis=1)
        G = np.tanh(np.einsum("nd,ked->kne", H, self.U))
        log_comp = np.empty((self.K, n, self.M))
        for k in range(self.K):
            log_comp[k] = log_softmax(G[k] @ self.W.T, axis=1)
        joint = log_comp + log_pi.T[:, :, None]
        m = np.max(joint, axis=0)
        logq = m + np.log(np.sum(np.exp(joint - m), axis=0))
        resp = np.exp(joint - logq)
        return logq, (H, log_pi, G, log_comp, resp)

    def backward(self, cache, g_logq):
        H, log_pi, G, log_comp, resp = cache
        g_comp = resp * g_logq[None]
        g_log_pi = np.sum(g_comp, axis=2).T
        g_prior = _log_softmax_backward(g_log_pi, np.exp(log_pi))
        g_H = g_prior @ self.V
        g_V = g_prior.T @ H
        g_W = np.zeros_like(self.W)
        g_U = np.zeros_like(self.U)
        for k in range(self.K):
            g_logits = _log_softmax_backward(g_comp[k], np.exp(log_comp[k]))
            g_W += g_logits.T @ G[k]
            g_pre = (g_logits @ self.W) * (1.0 - G[k] * G[k])
            g_U[k] = g_pre.T @ H
            g_H += g_pre @ self.U[k]
        return {"H": g_H, "W": g_W, "V": g_V, "U": g_U}

    def log_prob_matrix(self, H):
        """(A_Q, None): a mixture has no single log-partition vector."""
        return self.log_probs(H).T, None

    def to_dict(self):
        return {"head": self.kind, "W": self.W.tolist(), "V": self.V.tolist(), "U": self.U.tolist()}


def head_from_dict(d: dict) -> Head:
    kind = d.get("head")
    if kind == "linear":
        return LinearSoftmax(d["W"])
    if kind == "lms":
        return LMS(d["W"], monofn.from_dict(d["fn"]))
    if kind == "mos":
        return MoS(d["W"], d["V"], d["U"])
    raise ValueError(f"unknown head {kind!r}")


def build_head(
    variant: str,
    M: int,
    d: int,
    rng: np.random.Generator,
    init_scale: float = 0.1,
    hidden: int = 32,
    knots: int = 1000,
    plif_range: float = 10.0,
    mix: int = 3,
) -> Head:
    """Freshly initialised head; W and V are N(0, init_scale^2).

    Each MoS component U_k is the identity plus N(0, init_scale^2) noise.

    PLIF starts at the identity map.  The MLP starts from small random raw
    weights rescaled so the map is close to the identity near zero.
    """
    if variant not in HEAD_VARIANTS:
        raise ValueError(f"unknown head {variant!r}; expected one of {', '.join(HEAD_VARIANTS)}")
    W = rng.normal(0.0, init_scale, (M, d))
    if variant == "linear":
        return LinearSoftmax(W)
    if variant == "sigsoftmax":
        return LMS(W, monofn.Sigsoftmax())
    if variant == "lms-plif":
        return LMS(W, monofn.PLIF.identity(plif_range, knots))
    if variant == "lms-mlp":
        return LMS(W, _init_mlp(hidden, rng))
    V = rng.normal(0.0, init_scale, (mix, d))
    U = rng.normal(0.0, init_scale, (mix, d, d)) + np.eye(d)[None]
    return MoS(W, V, U)


def _init_mlp(hidden: int, rng: np.random.Generator) -> monofn.MonotonicMLP:
    # u_k spread over [0.25, 4] so units saturate at different logit scales;
    # v_k chosen so the slope at 0 is about 1 (sigmoid'(0) = 1/4).
    u = np.exp(rng.uniform(np.log(0.25), np.log(4.0), hidden))
    b = rng.normal(0.0, 1.0, hidden)
    v = 4.0 / (hidden * u)
    return monofn.MonotonicMLP.from_effective(u, v, b, 0.0)


def cross_entropy(P_star, Q) -> float:
    """-sum P* log Q, or +inf when Q puts zero mass where P* does not."""
    P_star = np.asarray(P_star, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P_star.shape != Q.shape:
        raise ValueError("distributions must have the same shape")
    support = P_star > 0
    if np.any(Q[support] <= 0):
        return float("inf")
    return float(-np.sum(P_star[support] * np.log(Q[support])))


def kl_divergence(P_star, Q) -> float:
    return cross_entropy(P_star, Q) - entropy(P_star)


def mse_logprob(A_target, A_model) -> float:
    """(1/N) ||A_target - A_model||_F^2 for M x N log-P matrices."""
    A_target = np.asarray(A_target, dtype=np.float64)
    A_model = np.asarray(A_model, dtype=np.float64)
    if A_target.shape != A_model.shape or A_target.ndim != 2:
        raise ValueError("log-P matrices must have equal 2-D shapes")
    diff = A_target - A_model
    return float(np.sum(diff * diff) / A_target.shape[1])
