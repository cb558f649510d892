"""Numerical checks of the cross-entropy / maximum-entropy duality and of the
Eckart-Young lower bound for log-P matrix fitting.

Two solvers attack the same optimum from opposite sides and share no code:

* :func:`min_cross_entropy` minimises H(P*, Q_h) over the context vector h by
  Hessian-preconditioned descent with Armijo backtracking (the dual side);
* :func:`max_entropy_primal` maximises H(R) over distributions R whose
  embedding moments match those of P*, by an infeasible-start Newton method
  on the equality-constrained primal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .numkit import make_rng, singular_values


class InfimumNotAttained(RuntimeError):
    """The target moment sits on the boundary of the moment polytope."""

    def __init__(self, best_value: float, h: np.ndarray, grad_norm: float):
        super().__init__(
            f"minimum cross-entropy not attained (best {best_value:.12g}, |grad| {grad_norm:.3e}, |h| {np.linalg.norm(h):.3e})"
        )
        self.best_value = best_value
        self.h = h
        self.grad_norm = grad_norm


class ConvergenceError(RuntimeError):
    pass


class PrimalInfeasible(RuntimeError):
    def __init__(self, residual: float, msg: str = "primal solver could not reach the moment constraints"):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class MaxEntInstance:
    P_star: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.P_star = np.asarray(self.P_star, dtype=np.float64)
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim == 1:
            W = W[:, None]
        self.W = W
        if self.P_star.ndim != 1 or W.shape[0] != self.P_star.size:
            raise ValueError("W must have one row per entry of P_star")
        if np.any(self.P_star < 0) or abs(self.P_star.sum() - 1.0) > 1e-9:
            raise ValueError("P_star must be a probability vector")
        if not np.all(np.isfinite(W)):
            raise ValueError("W must be finite")

    @property
    def moment(self) -> np.ndarray:
        return self.W.T @ self.P_star


def random_instance(M: int, d: int, rng: np.random.Generator, alpha: float = 1.0) -> MaxEntInstance:
    return MaxEntInstance(rng.dirichlet(np.full(M, alpha)), rng.standard_normal((M, d)))


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


# ---------------------------------------------------------------- dual side


@dataclass
class DualSolution:
    h: np.ndarray
    value: float
    grad_norm: float
    iterations: int


def cross_entropy_of_h(inst: MaxEntInstance, h) -> tuple[float, np.ndarray]:
    """H(P*, Q_h) = -<E_P*[w], h> + log Z(h) and its gradient E_Q[w] - E_P*[w]."""
    z = inst.W @ h
    m = np.max(z) if z.size else 0.0
    e = np.exp(z - m)
    Z = e.sum()
    q = e / Z
    value = -float(inst.moment @ h) + m + np.log(Z)
    return float(value), inst.W.T @ q - inst.moment


def _ce_hessian(inst: MaxEntInstance, h) -> np.ndarray:
    """Covariance of the embeddings under Q_h, the Hessian of log Z(h)."""
    z = inst.W @ h
    q = np.exp(z - np.max(z))
    q /= q.sum()
    mean = inst.W.T @ q
    return (inst.W.T * q) @ inst.W - np.outer(mean, mean)


def _descent_direction(inst: MaxEntInstance, h, grad) -> np.ndarray:
    # Hessian-preconditioned when that gives a descent direction, plain
    # negative gradient otherwise
    lam, V = np.linalg.eigh(_ce_hessian(inst, h))
    floor = max(float(lam[-1]), 0.0) * 1e-13
    if floor > 0:
        step = -(V @ ((V.T @ grad) / np.maximum(lam, floor)))
        if np.all(np.isfinite(step)) and step @ grad < 0:
            return step
    return -grad


def min_cross_entropy(inst: MaxEntInstance, tol: float = 1e-8, max_iter: int = 10_000) -> DualSolution:
    """Minimise H(P*, Q_h) over h by descent with Armijo backtracking.

    Steps are preconditioned by the Hessian of the log-partition, which keeps
    nearly degenerate embeddings (rows of W close to an affine subspace) from
    stalling plain gradient descent.  When E_P*[w] lies on the boundary of
    the moment polytope the infimum is approached only as |h| -> infinity;
    this is detected up front by an LP margin check and reported through
    :class:`InfimumNotAttained` carrying the best value of a bounded run.
    """
    d = inst.W.shape[1]
    interior = moment_interior_margin(inst) > 1e-12
    if not interior:
        max_iter = min(max_iter, 2_000)
    h = np.zeros(d)
    value, grad = cross_entropy_of_h(inst, h)
    for it in range(max_iter):
        gn = float(np.linalg.norm(grad))
        if gn <= tol:
            if not interior:
                # the gradient only vanishes because |h| has run off to infinity
                raise InfimumNotAttained(value, h, gn)
            return DualSolution(h, value, gn, it)
        direction = _descent_direction(inst, h, grad)
        slope = float(direction @ grad)
        t = 1.0
        while True:
            h_new = h + t * direction
            v_new, g_new = cross_entropy_of_h(inst, h_new)
            if v_new <= value + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-20:
                break
        if t < 1e-20:
            # no representable decrease left: the value is flat to rounding
            if interior and gn <= 1e3 * tol:
                return DualSolution(h, value, gn, it)
            break
        h, value, grad = h_new, v_new, g_new
    gn = float(np.linalg.norm(grad))
    if not interior:
        raise InfimumNotAttained(value, h, gn)
    raise ConvergenceError(f"dual descent stopped at |grad| = {gn:.3e} after {max_iter} iterations")


def moment_interior_margin(inst: MaxEntInstance) -> float:
    """Largest t such that some R >= t (entrywise) matches the moments of P*.

    Positive exactly when E_P*[w] is in the relative interior of the moment
    polytope, i.e. when the minimum over h is attained.
    """
    M = inst.P_star.size
    A_eq = np.hstack([np.vstack([np.ones((1, M)), inst.W.T]), np.zeros((1 + inst.W.shape[1], 1))])
    b_eq = np.concatenate([[1.0], inst.moment])
    A_ub = np.hstack([-np.eye(M), np.ones((M, 1))])
    c = np.zeros(M + 1)
    c[-1] = -1.0
    res = scipy.optimize.linprog(c, A_ub=A_ub, b_ub=np.zeros(M), A_eq=A_eq, b_eq=b_eq,
                                 bounds=[(0, None)] * M + [(0, 1)], method="highs")
    if res.status != 0:
        return 0.0
    return float(res.x[-1])


# ---------------------------------------------------------------- primal side


@dataclass
class PrimalSolution:
    R: np.ndarray
    value: float
    residual: float
    iterations: int


def _independent_constraints(W: np.ndarray, target: np.ndarray):
    """Rows of [1^T; W^T] reduced to an orthonormal basis of their span."""
    A = np.vstack([np.ones((1, W.shape[0])), W.T])
    b = np.concatenate([[1.0], target])
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    keep = s > s[0] * max(A.shape) * np.finfo(float).eps * 10
    Ur = U[:, keep]
    return Ur.T @ A, Ur.T @ b


def max_entropy_primal(inst: MaxEntInstance, tol: float = 1e-10, max_iter: int = 500) -> PrimalSolution:
    """Maximise H(R) subject to R >= 0, sum R = 1, W^T R = W^T P*.

    Infeasible-start Newton on the convex program min sum R log R; the
    positivity constraint is kept by the line search.  Raises
    :class:`PrimalInfeasible` if the residual cannot be driven below ``tol``
    (the optimum then has zero entries and the log barrier breaks down).
    """
    M = inst.P_star.size
    A, b = _independent_constraints(inst.W, inst.moment)
    R = np.full(M, 1.0 / M)
    nu = np.zeros(A.shape[0])

    def residual(R, nu):
        return np.concatenate([1.0 + np.log(R) + A.T @ nu, A @ R - b])

    res = residual(R, nu)
    for it in range(max_iter):
        r_dual, r_pri = res[:M], res[M:]
        if np.linalg.norm(r_pri) <= tol and np.linalg.norm(r_dual) <= tol:
            return PrimalSolution(R, _entropy(R), float(np.linalg.norm(r_pri)), it)
        # Newton step on the KKT system with Hessian diag(1/R), block-eliminated
        g = 1.0 + np.log(R)
        S = (A * R) @ A.T
        nu_new = np.linalg.solve(S, A @ R - b - A @ (R * g))
        dR = -R * (g + A.T @ nu_new)
        dnu = nu_new - nu
        t = 1.0
        while np.any(R + t * dR <= 0):
            t *= 0.5
        norm0 = np.linalg.norm(res)
        while True:
            cand = residual(R + t * dR, nu + t * dnu)
            if np.linalg.norm(cand) <= (1 - 0.01 * t) * norm0 or t < 1e-12:
                break
            t *= 0.5
        R, nu, res = R + t * dR, nu + t * dnu, cand
        if t < 1e-12:
            break
    raise PrimalInfeasible(float(np.linalg.norm(res[M:])))


def exponential_family_fit(R: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares lambda with log R_i = <w_i, lambda> + c; returns (lambda, max deviation)."""
    X = np.hstack([np.ones((W.shape[0], 1)), W])
    coef, *_ = np.linalg.lstsq(X, np.log(R), rcond=None)
    dev = float(np.max(np.abs(X @ coef - np.log(R))))
    return coef[1:], dev


# ---------------------------------------------------------------- duality


@dataclass
class DualityReport:
    min_ce: float
    max_ent: float
    gap: float
    argmin_h: np.ndarray
    argmax_R: np.ndarray
    entropy_p: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "min_ce": self.min_ce,
            "max_ent": self.max_ent,
            "gap": self.gap,
            "entropy_p": self.entropy_p,
            "argmin_h": self.argmin_h.tolist(),
            "argmax_R": self.argmax_R.tolist(),
        }


def duality_gap(inst: MaxEntInstance, tol: float = 1e-8) -> DualityReport:
    dual = min_cross_entropy(inst, tol=tol)
    primal = max_entropy_primal(inst, tol=min(1e-10, tol))
    return DualityReport(
        dual.value, primal.value, abs(dual.value - primal.value), dual.h, primal.R, _entropy(inst.P_star)
    )


def duality_sweep(M: int, d: int, instances: int, seed: int = 0, tol: float = 1e-8) -> list[DualityReport]:
    """Random instances with vocabulary sizes 2..M and dimensions 0..d."""
    out = []
    for k in range(instances):
        rng = make_rng(seed, k)
        m = int(rng.integers(2, M + 1))
        dd = int(rng.integers(0, d + 1))
        out.append(duality_gap(random_instance(m, dd, rng), tol))
    return out


# ---------------------------------------------------------------- Eckart-Young


def eckart_young_bound(A_target, d: int) -> float:
    """sqrt(sigma_{d+2}^2 + ... ), the least Frobenius error of any rank-(d+1) fit.

    Zero when d + 1 reaches min(M, N).
    """
    s = singular_values(A_target)
    if d + 1 >= s.size:
        return 0.0
    return float(np.sqrt(np.sum(s[d + 1:] ** 2)))


def truncated_svd_residual(A_target, rank: int) -> float:
    s = singular_values(A_target)
    return float(np.sqrt(np.sum(s[rank:] ** 2)))


@dataclass
class MseFitConfig:
    restarts: int = 3
    max_iter: int = 20_000
    init_scale: float = 0.1
    seed: int = 0
    partition: str = "free"  # "free": fitted offset per context; "tied": exact log-partition


@dataclass
class MseFit:
    W: np.ndarray
    H: np.ndarray
    logZ: np.ndarray
    error: float  # Frobenius norm of A_target - A_model
    mse: float  # (1/N) squared Frobenius, the training loss


def _model_matrix(W, H, logZ):
    return W @ H.T - logZ[None, :]


def mse_rank_fit(A_target, d: int, cfg: MseFitConfig | None = None) -> MseFit:
    """Fit A ~ W H^T - 1 logZ^T by L-BFGS on (1/N)||A - A_model||_F^2.

    With ``partition="free"`` the per-context offsets logZ are fitted
    parameters; with ``"tied"`` they are the log-partition of the columns of
    W H^T, so every model column is a log-distribution.  Either way the model
    has rank at most d + 1.
    """
    cfg = cfg or MseFitConfig()
    A = np.asarray(A_target, dtype=np.float64)
    M, N = A.shape
    if cfg.partition not in ("free", "tied"):
        raise ValueError("partition must be 'free' or 'tied'")
    nW, nH = M * d, N * d

    def unpack(x):
        W = x[:nW].reshape(M, d)
        H = x[nW:nW + nH].reshape(N, d)
        if cfg.partition == "free":
            return W, H, x[nW + nH:]
        L = W @ H.T
        mx = L.max(axis=0)
        return W, H, mx + np.log(np.exp(L - mx).sum(axis=0))

    def fun(x):
        W, H, z = unpack(x)
        L = W @ H.T
        R = L - z[None, :] - A
        G = 2.0 * R / N
        if cfg.partition == "free":
            grad = np.concatenate([(G @ H).ravel(), (G.T @ W).ravel(), -G.sum(axis=0)])
        else:
            Q = np.exp(L - z[None, :])
            G = G - Q * G.sum(axis=0, keepdims=True)
            grad = np.concatenate([(G @ H).ravel(), (G.T @ W).ravel()])
        return float(np.sum(R * R) / N), grad

    n_params = nW + nH + (N if cfg.partition == "free" else 0)
    best = None
    for r in range(cfg.restarts):
        x0 = make_rng(cfg.seed, r).normal(0.0, cfg.init_scale, n_params)
        res = scipy.optimize.minimize(
            fun, x0, jac=True, method="L-BFGS-B",
            options={"maxiter": cfg.max_iter, "maxfun": 4 * cfg.max_iter, "gtol": 1e-14, "ftol": 0.0},
        )
        if not np.isfinite(res.fun):
            raise ConvergenceError("MSE fit diverged")
        if best is None or res.fun < best.fun:
            best = res
    W, H, z = unpack(best.x)
    err = float(np.linalg.norm(A - _model_matrix(W, H, z)))
    return MseFit(W, H, z, err, err * err / N)


def log_prob_targets(M: int, N: int, rng: np.random.Generator, alpha: float = 1.0) -> np.ndarray:
    """M x N log-P matrix whose columns are independent Dir(alpha) draws."""
    P = rng.dirichlet(np.full(M, alpha), N).T
    return np.log(np.maximum(P, np.finfo(np.float64).tiny))
