"""Huber ERM over a hypothesis space, and the adaptive scale schedule.

``fit_erm`` minimises the mean Huber loss over the coefficient vector by
iteratively reweighted least squares. An IRLS step minimises the quadratic
majoriser ``sum_i w_i r_i^2`` with ``w_i = huber_weight(r_i)``. IRLS alone
converges linearly and crawls when few residuals sit inside the quadratic
zone, so every iteration also tries a damped Newton step. A step is only
accepted if it lowers the (ridge-jittered) objective, which is therefore
monotone.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.optimize import linprog

from .distributions import dense_grid
from .errors import EmptyDatasetError, InvalidInputError, NumericalError
from .loss import check_sigma, huber, huber_deriv, huber_weight
from .spaces import Estimator


class TheoryRangeWarning(UserWarning):
    """sigma is at or below max{2M, 1}, outside the range the bounds cover."""


class BoundExceededWarning(UserWarning):
    """The unclipped fit leaves [-M, M] somewhere on the check grid."""


class RadiusProjectionWarning(UserWarning):
    """The fitted coefficients left the radius ball and were projected back."""


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 200
    rel_tol: float = 1e-10
    grad_tol: float = 1e-7
    ridge_jitter: float = 1e-10
    fallback: bool = True
    check_points: int = 1001

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidInputError("max_iters must be an integer >= 1")
        if not (self.rel_tol > 0 and self.grad_tol > 0):
            raise InvalidInputError("rel_tol and grad_tol must be positive")
        if not self.ridge_jitter >= 0:
            raise InvalidInputError("ridge_jitter must be nonnegative")


@dataclass(frozen=True)
class ScheduleParams:
    epsilon: float
    q: float

    def __post_init__(self):
        for name in ("epsilon", "q"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidInputError(f"{name} must be positive, got {v!r}")


def _weighted_ls(A, y, w, jitter):
    n, k = A.shape
    Aw = A * w[:, None]
    G = Aw.T @ A / n + jitter * np.eye(k)
    b = Aw.T @ y / n
    try:
        return linalg.solve(G, b, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular normal equations: {exc}") from None


def least_squares_coeffs(A, y, jitter=1e-10):
    """Ridge-jittered least-squares coefficients ``(A'A/n + jitter I)^-1 A'y/n``."""
    return _weighted_ls(A, y, np.ones(len(y)), jitter)


def _objective(A, y, beta, sigma, jitter):
    """Empirical risk and the ridge-jittered objective actually minimised."""
    risk = float(np.mean(huber(y - A @ beta, sigma)))
    return risk, risk + jitter * float(beta @ beta)


def _gradient(A, y, beta, sigma, jitter=0.0):
    return -A.T @ huber_deriv(y - A @ beta, sigma) / len(y) + 2 * jitter * beta


def _line_search(A, y, beta, sigma, jitter, current, direction, slope):
    """Armijo backtracking on the jittered objective."""
    if not slope < 0:
        return None
    risk, obj = current
    t = 1.0
    for _ in range(60):
        cand = beta + t * direction
        c_risk, c_obj = _objective(A, y, cand, sigma, jitter)
        if c_obj <= obj + 1e-4 * t * slope:
            return cand, c_risk, c_obj
        t *= 0.5
    return None


def _newton_step(A, y, beta, sigma, jitter, current):
    # the risk is piecewise quadratic; its Hessian on the current piece is
    # 2 A' D A / n with D the indicator of residuals inside the quadratic zone
    n, k = A.shape
    g = _gradient(A, y, beta, sigma, jitter)
    inside = (np.abs(y - A @ beta) <= sigma).astype(float)
    H = 2 * (A * inside[:, None]).T @ A / n + max(2 * jitter, 1e-12) * np.eye(k)
    try:
        d = -linalg.solve(H, g, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return None
    return _line_search(A, y, beta, sigma, jitter, current, d, float(g @ d))


def _gradient_step(A, y, beta, sigma, jitter, current):
    g = _gradient(A, y, beta, sigma, jitter)
    # the gradient is Lipschitz with constant at most 2 ||A||_2^2 / n + 2 jitter
    step = 1.0 / (2 * np.linalg.norm(A, 2) ** 2 / len(y) + 2 * jitter)
    return _line_search(A, y, beta, sigma, jitter, current, -step * g, -step * float(g @ g))


def fit_erm(space, data, sigma, opts=None):
    """Huber empirical risk minimiser over ``space``.

    The objective is the empirical risk plus ``ridge_jitter * ||beta||^2``.
    Each iteration proposes the IRLS update and a damped Newton step on the
    current quadratic piece, keeping whichever lowers the objective more;
    plain gradient descent is the last resort. Returns an Estimator whose
    diagnostics hold the iteration count, the per-iteration empirical risks
    and objective values, gradient norms and flags for convergence, fallback
    use, radius projection and bound excursions.
    """
    opts = opts or SolverOptions()
    sigma = check_sigma(sigma)
    if len(data) == 0:
        raise EmptyDatasetError("cannot fit on an empty dataset")
    if sigma <= max(2 * space.bound, 1.0):
        warnings.warn(f"sigma={sigma:g} <= max(2M, 1)={max(2 * space.bound, 1.0):g}; "
                      "the calibration bounds do not apply", TheoryRangeWarning, stacklevel=2)
    A = space.design(data.xs)
    y = data.ys
    lam = opts.ridge_jitter
    if lam == 0 and np.linalg.matrix_rank(A) < A.shape[1]:
        raise NumericalError("rank-deficient design and ridge_jitter=0")

    beta = least_squares_coeffs(A, y, lam)
    current = _objective(A, y, beta, sigma, lam)
    history = [current[0]]
    objective = [current[1]]
    converged = False
    fallback_steps = newton_steps = 0
    iters = 0
    for iters in range(1, opts.max_iters + 1):
        best = None
        irls = _weighted_ls(A, y, huber_weight(y - A @ beta, sigma), lam)
        i_risk, i_obj = _objective(A, y, irls, sigma, lam)
        if i_obj < current[1]:
            best = (irls, i_risk, i_obj)
        newton = _newton_step(A, y, beta, sigma, lam, current)
        if newton is not None and (best is None or newton[2] < best[2]):
            best = newton
            newton_steps += 1
        if best is None and opts.fallback:
            best = _gradient_step(A, y, beta, sigma, lam, current)
            fallback_steps += best is not None
        if best is None:
            converged = True
            break
        decrease = current[1] - best[2]
        beta, current = best[0], best[1:]
        history.append(current[0])
        objective.append(current[1])
        if decrease <= opts.rel_tol * max(current[1], np.finfo(float).tiny):
            g = np.linalg.norm(_gradient(A, y, beta, sigma, lam))
            if g <= opts.grad_tol * (1 + current[0]):
                converged = True
                break
    risk = current[0]

    diagnostics = {
        "iters": iters,
        "converged": converged,
        "risk": risk,
        "risk_history": history,
        "objective_history": objective,
        "objective_grad_norm": float(np.linalg.norm(_gradient(A, y, beta, sigma, lam))),
        "fallback_steps": fallback_steps,
        "newton_steps": newton_steps,
        "grad_norm": float(np.linalg.norm(_gradient(A, y, beta, sigma))),
        "projected": False,
    }
    norm = float(np.linalg.norm(beta))
    if norm > space.radius:
        warnings.warn(f"coefficient norm {norm:.4g} exceeds radius {space.radius:g}; projecting",
                      RadiusProjectionWarning, stacklevel=2)
        beta = beta * (space.radius / norm)
        diagnostics["projected"] = True
        diagnostics["risk"] = _objective(A, y, beta, sigma, lam)[0]
    est = Estimator(space, beta, sigma, diagnostics)
    grid = dense_grid(space.domain, opts.check_points)
    diagnostics["max_abs_raw"] = float(np.max(np.abs(est.raw(grid))))
    diagnostics["clip_count"] = est.clip_count(grid)
    # rounding-level excursions (a fit sitting exactly at M) are not worth a warning
    if diagnostics["max_abs_raw"] > space.bound * (1 + 1e-6):
        warnings.warn(f"fitted function reaches {diagnostics['max_abs_raw']:.4g} > M={space.bound:g} "
                      f"at {diagnostics['clip_count']} check points", BoundExceededWarning, stacklevel=2)
    return est


def fit_least_squares(space, data, jitter=1e-10):
    if len(data) == 0:
        raise EmptyDatasetError("cannot fit on an empty dataset")
    A = space.design(data.xs)
    beta = least_squares_coeffs(A, data.ys, jitter)
    return Estimator(space, beta, math.inf, {"method": "least_squares"})


def fit_lad(space, data):
    """Least absolute deviation fit, solved exactly as a linear program."""
    if len(data) == 0:
        raise EmptyDatasetError("cannot fit on an empty dataset")
    A = space.design(data.xs)
    n, k = A.shape
    # variables: beta (free), u >= 0, v >= 0 with A beta + u - v = y
    c = np.concatenate([np.zeros(k), np.ones(2 * n)])
    eye = sparse.identity(n, format="csr")
    A_eq = sparse.hstack([sparse.csr_matrix(A), eye, -eye], format="csr")
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    for method in ("highs-ipm", "highs-ds"):
        res = linprog(c, A_eq=A_eq, b_eq=data.ys, bounds=bounds, method=method)
        if res.status == 0:
            break
    else:
        raise NumericalError(f"LAD linear program failed: {res.message}")
    return Estimator(space, res.x[:k], 0.0, {"method": "lad", "risk": res.fun / n})


def phi_exponent(epsilon, q):
    """Exponent of the scale schedule sigma = n ** phi."""
    p = ScheduleParams(epsilon, q)
    e, q = p.epsilon, p.q
    if e <= 1:
        return 1.0 / ((1 + e) * (1 + q))
    return (1 + e) / (q * (1 + e) ** 2 + e * (e + 3))


def adaptive_sigma(n, params):
    if int(n) != n or n < 1:
        raise InvalidInputError(f"n must be a positive integer, got {n!r}")
    return float(n) ** phi_exponent(params.epsilon, params.q)


def rate_exponent(epsilon, q):
    """Predicted decay exponent of the squared L2 error under the schedule."""
    return epsilon * phi_exponent(epsilon, q)


def psi_bound(n, epsilon, sigma, q):
    """Bias-plus-sample-error envelope for the squared L2 error.

    ``sigma^-eps + sigma / n^(1/(q+1))`` when eps <= 1 and
    ``sigma^-eps + (sigma^(q + 2 eps/(1+eps)) / n)^(1/(q+1))`` otherwise.
    """
    for name, v in (("n", n), ("epsilon", epsilon), ("sigma", sigma), ("q", q)):
        if not (math.isfinite(v) and v > 0):
            raise InvalidInputError(f"{name} must be positive, got {v!r}")
    bias = sigma ** (-epsilon)
    if epsilon <= 1:
        return bias + sigma / n ** (1 / (q + 1))
    return bias + (sigma ** (q + 2 * epsilon / (1 + epsilon)) / n) ** (1 / (q + 1))
