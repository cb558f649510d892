import numpy as np
import pytest

FD_STEP = 1e-5
# denominator floor so a group whose true gradient is zero (softmax shift
# invariance makes additive output biases gradient-free) is judged absolutely
REL_FLOOR = 1e-4


def central_difference(loss, params: dict[str, np.ndarray], name: str, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of ``loss()`` w.r.t. ``params[name]`` (mutated in place)."""
    p = params[name]
    flat = p.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss()
        flat[i] = old - h
        down = loss()
        flat[i] = old
        out[i] = (up - down) / (2 * h)
    return out.reshape(p.shape)


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), REL_FLOOR)
    return float(np.linalg.norm(a - n) / denom)


def head_gradient_errors(head, H, target, loss: str = "ce") -> dict[str, float]:
    """Relative error per parameter group (plus ``H``) for a head's analytic gradients."""
    H = np.array(H, dtype=np.float64)
    _, grads = head.loss_and_grads(H, target, loss)
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in head.params().items()}
    params["H"] = H

    def f():
        head.set_params(**{k: v for k, v in params.items() if k != "H"})
        return head.loss_and_grads(params["H"], target, loss)[0]

    errors = {}
    for name in params:
        numeric = central_difference(f, params, name)
        errors[name] = relative_error(grads[name], numeric)
    head.set_params(**{k: v for k, v in params.items() if k != "H"})
    return errors


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
