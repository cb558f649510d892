"""Pointwise monotone functions applied to logits before the softmax.

Each function works elementwise on arrays of any shape.  Parameterised
variants (:class:`MonotonicMLP`, :class:`PLIF`) expose ``forward`` /
``backward`` so a training loop can reuse forward activations; ``eval``,
``deriv`` and ``param_grad`` are thin wrappers around them.

PLIF evaluation is a constant number of array lookups per input no matter how
many knots there are, and its backward pass touches two slots per input; the
O(K) work (cumulative sums) happens once per batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkit import sigmoid, softplus, softplus_inv


class NoParametersError(TypeError):
    pass


def _check_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("monotone function input must be finite")
    return x


def _out(y, x_was_scalar: bool):
    return float(y) if x_was_scalar else y


class MonotoneFn:
    """Common interface; subclasses override ``forward`` and ``backward``."""

    kind: str = ""
    increasing: bool = True

    def param_names(self) -> tuple[str, ...]:
        return ()

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def set_params(self, **values) -> None:
        if values:
            raise NoParametersError(f"{self.kind} has no parameters")

    def forward(self, x: np.ndarray):
        """Return ``(f(x), cache)``."""
        raise NotImplementedError

    def backward(self, cache, upstream: np.ndarray, need_params: bool = True):
        """Return ``(upstream * f'(x), {param: grad})``."""
        raise NotImplementedError

    def eval(self, x):
        scalar = np.ndim(x) == 0
        y, _ = self.forward(_check_input(x))
        return _out(y, scalar)

    __call__ = eval

    def deriv(self, x):
        scalar = np.ndim(x) == 0
        x = _check_input(x)
        _, cache = self.forward(x)
        d, _ = self.backward(cache, np.ones_like(x), need_params=False)
        return _out(d, scalar)

    def param_grad(self, x, upstream) -> dict[str, np.ndarray]:
        if not self.param_names():
            raise NoParametersError(f"{self.kind} has no parameters")
        x = _check_input(x)
        upstream = np.broadcast_to(np.asarray(upstream, dtype=np.float64), x.shape)
        _, cache = self.forward(x)
        _, grads = self.backward(cache, upstream)
        return grads

    def to_dict(self) -> dict:
        return {"kind": self.kind}


class Identity(MonotoneFn):
    kind = "identity"

    def forward(self, x):
        return x, None

    def backward(self, cache, upstream, need_params=True):
        return upstream, {}


class Sigsoftmax(MonotoneFn):
    """ss(x) = 2x - log(1 + exp(x)); derivative 2 - sigmoid(x) lies in (1, 2)."""

    kind = "sigsoftmax"

    def forward(self, x):
        return 2.0 * x - softplus(x), x

    def backward(self, x, upstream, need_params=True):
        return upstream * (2.0 - sigmoid(x)), {}


class Power(MonotoneFn):
    """x ** p.  Increasing only for odd p; even powers are for rank experiments."""

    kind = "power"

    def __init__(self, p: int):
        if int(p) != p or p < 1:
            raise ValueError("power must be a positive integer")
        self.p = int(p)
        self.increasing = self.p % 2 == 1

    def forward(self, x):
        return x**self.p, x

    def backward(self, x, upstream, need_params=True):
        if self.p == 1:
            return upstream, {}
        return upstream * self.p * x ** (self.p - 1), {}

    def to_dict(self):
        return {"kind": self.kind, "p": self.p}


class MonotonicMLP(MonotoneFn):
    """f(x) = sum_k v_k * sigmoid(u_k x + b_k) + b_out with u, v = softplus(raw)."""

    kind = "mlp"

    def __init__(self, u_raw, v_raw, b_hidden, b_out: float = 0.0):
        self.u_raw = np.array(u_raw, dtype=np.float64).ravel()
        self.v_raw = np.array(v_raw, dtype=np.float64).ravel()
        self.b_hidden = np.array(b_hidden, dtype=np.float64).ravel()
        self.b_out = np.float64(b_out)
        k = self.u_raw.size
        if k < 1 or self.v_raw.size != k or self.b_hidden.size != k:
            raise ValueError("MLP parameter vectors must share a positive length")

    @classmethod
    def random(cls, hidden: int, rng: np.random.Generator, scale: float = 1.0):
        return cls(
            rng.normal(0.0, scale, hidden),
            rng.normal(0.0, scale, hidden),
            rng.normal(0.0, scale, hidden),
            0.0,
        )

    @classmethod
    def from_effective(cls, u, v, b_hidden, b_out=0.0):
        return cls(softplus_inv(u), softplus_inv(v), b_hidden, b_out)

    @property
    def hidden(self) -> int:
        return self.u_raw.size

    @property
    def u(self):
        return softplus(self.u_raw)

    @property
    def v(self):
        return softplus(self.v_raw)

    def param_names(self):
        return ("u_raw", "v_raw", "b_hidden", "b_out")

    def params(self):
        return {
            "u_raw": self.u_raw,
            "v_raw": self.v_raw,
            "b_hidden": self.b_hidden,
            "b_out": np.array(self.b_out),
        }

    def set_params(self, **values):
        for name, val in values.items():
            if name not in self.param_names():
                raise KeyError(name)
            if name == "b_out":
                self.b_out = np.float64(val)
            else:
                setattr(self, name, np.array(val, dtype=np.float64).ravel())

    def forward(self, x):
        u, v = self.u, self.v
        flat = x.reshape(-1)
        # (K, n) activations; reductions over n below are BLAS mat-vecs
        acts = sigmoid(np.outer(u, flat) + self.b_hidden[:, None])
        y = (v @ acts + self.b_out).reshape(x.shape)
        return y, (x, acts)

    def backward(self, cache, upstream, need_params=True):
        x, acts = cache
        u, v = self.u, self.v
        flat_x = x.reshape(-1)
        up = np.broadcast_to(upstream, x.shape).reshape(-1)
        ds = acts * (1.0 - acts)
        dx = ((v * u) @ ds).reshape(x.shape) * upstream
        if not need_params:
            return dx, {}
        ds_up = ds @ up
        grads = {
            "u_raw": v * (ds @ (up * flat_x)) * sigmoid(self.u_raw),
            "v_raw": (acts @ up) * sigmoid(self.v_raw),
            "b_hidden": v * ds_up,
            "b_out": np.array(np.sum(up)),
        }
        return dx, grads

    def to_dict(self):
        return {
            "kind": self.kind,
            "u_raw": self.u_raw.tolist(),
            "v_raw": self.v_raw.tolist(),
            "b_hidden": self.b_hidden.tolist(),
            "b_out": float(self.b_out),
        }


@dataclass
class PlifGrad:
    """Per-batch accumulator for PLIF parameter gradients.

    ``local`` collects upstream * (x - l_i) in the slope slot of each input's
    segment; ``prefix`` collects upstream in that segment's slot and is turned
    into slope gradients by one suffix sum in :meth:`finalize`.
    """

    K: int
    local: np.ndarray = field(init=False)
    prefix: np.ndarray = field(init=False)
    bias: float = 0.0

    def __post_init__(self):
        self.local = np.zeros(self.K)
        self.prefix = np.zeros(self.K)

    def accumulate(self, idx, offset_in_segment, upstream):
        self.local += np.bincount(idx, weights=upstream * offset_in_segment, minlength=self.K)
        self.prefix += np.bincount(idx, weights=upstream, minlength=self.K)
        self.bias += float(np.sum(upstream))

    def merge(self, other: "PlifGrad") -> None:
        self.local += other.local
        self.prefix += other.prefix
        self.bias += other.bias

    def finalize(self, plif: "PLIF") -> dict[str, np.ndarray]:
        # slope j enters the running sum of every segment i > j
        tail = np.cumsum(self.prefix[::-1])[::-1]
        g_s = self.local.copy()
        g_s[:-1] += plif.width * tail[1:]
        # the value at the left end is b0 + s_0 * l_0
        g_s[0] += plif.knot(0) * self.bias
        return {"v_raw": g_s * sigmoid(plif.v_raw), "b0": np.array(self.bias)}


class PLIF(MonotoneFn):
    """Piecewise linear increasing function on K equal segments of [-T, T].

    Slopes are softplus(v_raw), so the function is strictly increasing for any
    raw parameters.  Continuity at each knot fixes every segment's intercept
    from ``b0`` and the running sum of slopes.  Outside [-T, T] the boundary
    segments extend linearly.
    """

    kind = "plif"

    def __init__(self, T: float, v_raw, b0: float = 0.0):
        if not T > 0:
            raise ValueError("PLIF half-range T must be positive")
        self.T = float(T)
        self.set_params(v_raw=v_raw, b0=b0)

    @classmethod
    def identity(cls, T: float, K: int) -> "PLIF":
        return cls(T, np.full(K, float(softplus_inv(1.0))), 0.0)

    @property
    def width(self) -> float:
        return 2.0 * self.T / self.K

    def knot(self, i):
        return -self.T + 2.0 * self.T * np.asarray(i) / self.K

    def knots(self) -> np.ndarray:
        return self.knot(np.arange(self.K + 1))

    def param_names(self):
        return ("v_raw", "b0")

    def params(self):
        return {"v_raw": self.v_raw, "b0": np.array(self.b0)}

    def set_params(self, **values):
        for name in values:
            if name not in self.param_names():
                raise KeyError(name)
        if "v_raw" in values:
            v = np.array(values["v_raw"], dtype=np.float64).ravel()
            if v.size < 1:
                raise ValueError("PLIF needs at least one segment")
            self.v_raw = v
            self.K = v.size
        if "b0" in values:
            self.b0 = float(values["b0"])
        self._refresh()

    def _refresh(self):
        self.s = softplus(self.v_raw)
        # base[i] = f(l_i) = b0 + s_0 l_0 + width * sum_{j<i} s_j
        self.base = np.empty(self.K)
        self.base[0] = self.b0 + self.s[0] * self.knot(0)
        self.base[1:] = self.base[0] + self.width * np.cumsum(self.s[:-1])

    def segment(self, x: np.ndarray) -> np.ndarray:
        """Segment index floor((x + T) K / 2T), clamped to [0, K-1]."""
        idx = np.floor((x + self.T) * self.K / (2.0 * self.T))
        return np.clip(idx, 0, self.K - 1).astype(np.intp)

    def forward(self, x):
        idx = self.segment(x)
        offset = x - self.knot(idx)
        return self.s[idx] * offset + self.base[idx], (idx, offset)

    def backward(self, cache, upstream, need_params=True):
        idx, offset = cache
        dx = upstream * self.s[idx]
        if not need_params:
            return dx, {}
        acc = PlifGrad(self.K)
        acc.accumulate(idx.ravel(), offset.ravel(), np.asarray(upstream).ravel())
        return dx, acc.finalize(self)

    def to_dict(self):
        return {"kind": self.kind, "T": self.T, "K": self.K, "v_raw": self.v_raw.tolist(), "b0": self.b0}


def plif_interpolate(samples, T: float, K: int) -> PLIF:
    """PLIF through the points (l_i, y_i), i = 0..K, by linear interpolation.

    ``samples`` is either the K+1 values y_i or an array of (x, y) pairs whose
    x column must be the knots.
    """
    samples = np.asarray(samples, dtype=np.float64)
    knots = -T + 2.0 * T * np.arange(K + 1) / K
    if samples.ndim == 2:
        if samples.shape != (K + 1, 2):
            raise ValueError(f"expected {K + 1} (x, y) pairs")
        if not np.allclose(samples[:, 0], knots, rtol=0, atol=1e-12 * max(1.0, T)):
            raise ValueError("sample abscissae must be the PLIF knots")
        y = samples[:, 1]
    else:
        y = samples
    if y.shape != (K + 1,):
        raise ValueError(f"expected {K + 1} knot values, got {y.shape}")
    dy = np.diff(y)
    if not np.all(dy > 0):
        raise ValueError("knot values must be strictly increasing")
    slopes = dy / (2.0 * T / K)
    b0 = y[0] - slopes[0] * knots[0]
    return PLIF(T, softplus_inv(slopes), b0)


def plif_fit_function(h, T: float, K: int) -> PLIF:
    knots = -T + 2.0 * T * np.arange(K + 1) / K
    return plif_interpolate(np.asarray(h(knots), dtype=np.float64), T, K)


def plif_error_bound(R: float, T: float, K: int) -> float:
    """Max interpolation error 2R * (2T/K) for a target with |h'| <= R."""
    return 4.0 * R * T / K


def from_dict(d: dict) -> MonotoneFn:
    kind = d.get("kind")
    if kind == "identity":
        return Identity()
    if kind == "sigsoftmax":
        return Sigsoftmax()
    if kind == "power":
        return Power(d["p"])
    if kind == "mlp":
        return MonotonicMLP(d["u_raw"], d["v_raw"], d["b_hidden"], d.get("b_out", 0.0))
    if kind == "plif":
        fn = PLIF(d["T"], d["v_raw"], d.get("b0", 0.0))
        if "K" in d and int(d["K"]) != fn.K:
            raise ValueError("PLIF K does not match len(v_raw)")
        return fn
    raise ValueError(f"unknown monotone function kind {kind!r}")


def strictly_increasing_on(fn: MonotoneFn, lo: float, hi: float, n: int = 10_000, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    a = rng.uniform(lo, hi, n)
    b = rng.uniform(lo, hi, n)
    x, y = np.minimum(a, b), np.maximum(a, b)
    keep = x < y
    return bool(np.all(fn(x[keep]) < fn(y[keep])))


__all__ = [
    "MonotoneFn",
    "Identity",
    "Sigsoftmax",
    "Power",
    "MonotonicMLP",
    "PLIF",
    "PlifGrad",
    "NoParametersError",
    "plif_interpolate",
    "plif_fit_function",
    "plif_error_bound",
    "from_dict",
    "strictly_increasing_on",
]
