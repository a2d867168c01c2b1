"""Population oracles and Monte Carlo checks of the calibration bounds.

The Huber population minimiser over all measurable functions is
``f*(x) + s(x) c(sigma / s(x))`` where ``c`` is the location minimising
``nu -> E l_sigma(eps - nu)``; for asymmetric noise ``c != 0``. The bound
checks compare Monte Carlo estimates with the explicit envelopes

* ``|[R(f) - R(f*)] - ||f - f*||^2| <= c_eps / sigma^eps``
* ``E xi^2 <= c1 ||f - f*||^(2 (eps-1)_+ / (eps+1)) + c2 sigma^(1-eps)``
* ``P(|Y| >= sigma/2) <= 2^(1+eps) E|Y|^(1+eps) / sigma^(1+eps)``

where ``xi = l_sigma(Y - f(X)) - l_sigma(Y - f*(X))`` and all constants are
functions of ``E|Y|^(1+eps)`` and the sup-norm bound M.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .distributions import dense_grid, generate_dataset, make_rng, moment, response_moment
from .errors import InvalidInputError, NumericalError, PreconditionError
from .integrate import integrate
from .loss import check_sigma, huber

BISECTION_WIDTH = 1e-12
MC_ALLOWANCE = 3.0


# -- oracle shift ------------------------------------------------------------------

def risk_deriv_at(nu, sigma, spec):
    """d/dnu of ``E l_sigma(eps - nu)``, i.e. ``-E huber_deriv(eps - nu)``."""
    sigma = check_sigma(sigma)
    nu = float(nu)
    if not math.isfinite(nu):
        raise InvalidInputError("nu must be finite")
    pdf = spec.pdf_scalar

    def integrand(u):
        t = u - nu
        if t > sigma:
            return 2.0 * sigma * pdf(u)
        if t < -sigma:
            return -2.0 * sigma * pdf(u)
        return 2.0 * t * pdf(u)

    try:
        val = integrate(integrand, -math.inf, math.inf,
                        breakpoints=(nu - sigma, nu + sigma, *spec.breakpoints),
                        tol=1e-11 * max(1.0, sigma))
    except NumericalError as exc:
        raise NumericalError(f"risk derivative at nu={nu}, sigma={sigma}: {exc}") from None
    return -val


def population_risk(nu, sigma, spec):
    """``E l_sigma(eps - nu)`` by quadrature."""
    sigma = check_sigma(sigma)
    pdf = spec.pdf_scalar

    def integrand(u):
        a = abs(u - nu)
        return (a * a if a <= sigma else 2.0 * sigma * a - sigma * sigma) * pdf(u)

    return integrate(integrand, -math.inf, math.inf,
                     breakpoints=(nu - sigma, nu, nu + sigma, *spec.breakpoints), tol=1e-10)


def oracle_shift(spec, sigma):
    """The location c minimising ``E l_sigma(eps - c)``, by bisection on the derivative."""
    sigma = check_sigma(sigma)
    m1 = moment(spec, 1.0)
    if not math.isfinite(m1):
        raise PreconditionError("oracle_shift needs a finite first absolute moment")
    lo, hi = -sigma - m1, sigma + m1
    d_lo, d_hi = risk_deriv_at(lo, sigma, spec), risk_deriv_at(hi, sigma, spec)
    if not (d_lo <= 0 <= d_hi):
        raise NumericalError(f"derivative does not change sign on [{lo}, {hi}]: {d_lo}, {d_hi}")
    while hi - lo > BISECTION_WIDTH:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        d = risk_deriv_at(mid, sigma, spec)
        if d == 0:
            return mid
        if d < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def oracle_function(model, sigma):
    """``x -> f*(x) + s(x) c(sigma / s(x))``, the population Huber minimiser."""
    sigma = check_sigma(sigma)

    def f_sigma(xs):
        xs = np.asarray(xs, dtype=float)
        scale = model.het_scale(xs)
        shift = np.array([s * oracle_shift(model.noise, sigma / s) if s > 0 else 0.0 for s in scale])
        return model.truth(xs) + shift

    return f_sigma


# -- distances ---------------------------------------------------------------------

def _clip_points(fn, lo, hi, points=4001):
    """Where a clipped estimator's raw values cross +-M on [lo, hi]; empty for plain functions."""
    raw = getattr(fn, "raw", None)
    space = getattr(fn, "space", None)
    if raw is None or space is None:
        return ()
    xs = np.linspace(lo, hi, points)
    gap = np.abs(raw(xs[:, None])) - space.bound
    idx = np.flatnonzero(np.sign(gap[:-1]) != np.sign(gap[1:]))
    h = lambda x: abs(float(raw(np.array([[x]]))[0])) - space.bound
    return tuple(optimize.brentq(h, xs[i], xs[i + 1], xtol=1e-14) if gap[i] * gap[i + 1] < 0 else xs[i]
                 for i in idx)


def sq_l2_distance(f, g, domain, mode="quadrature", mc_n=100_000, seed=0):
    """Squared L2 distance under the uniform distribution on ``domain``.

    Returns ``(value, stderr)``; the stderr is 0 in quadrature mode.
    """
    box = np.array(domain, dtype=float).reshape(-1, 2)
    if mode == "quadrature":
        if len(box) != 1:
            raise InvalidInputError("quadrature mode needs a one-dimensional input domain")
        lo, hi = box[0]

        def diff2(x):
            pt = np.array([[x]])
            return float(f(pt)[0] - g(pt)[0]) ** 2

        grid = np.linspace(lo, hi, 2001)[:, None]
        rough = float(np.mean((np.asarray(f(grid)) - np.asarray(g(grid))) ** 2))
        kinks = _clip_points(f, lo, hi) + _clip_points(g, lo, hi)
        val = integrate(diff2, lo, hi, breakpoints=kinks, tol=1e-9 * max(1.0, rough), limit=1000)
        return val / (hi - lo), 0.0
    if mode == "monte_carlo":
        rng = make_rng(seed)
        xs = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((int(mc_n), len(box)))
        d2 = (np.asarray(f(xs)) - np.asarray(g(xs))) ** 2
        return float(d2.mean()), float(d2.std(ddof=1) / math.sqrt(len(d2)))
    raise InvalidInputError(f"unknown mode {mode!r}; expected 'quadrature' or 'monte_carlo'")


def l2_distance(f, g, domain, mode="quadrature", mc_n=100_000, seed=0):
    return math.sqrt(max(sq_l2_distance(f, g, domain, mode, mc_n, seed)[0], 0.0))


# -- bound checks --------------------------------------------------------------------

@dataclass(frozen=True)
class MomentInfo:
    epsilon: float
    moment_1pe: float
    bound: float

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidInputError("epsilon must be positive")
        if not (math.isfinite(self.bound) and self.bound > 0):
            raise InvalidInputError("the sup-norm bound M must be positive")
        if not self.moment_1pe >= 0:
            raise InvalidInputError("E|Y|^(1+eps) must be nonnegative")

    def _finite(self):
        if not math.isfinite(self.moment_1pe):
            raise PreconditionError(f"E|Y|^(1+eps) is infinite for eps={self.epsilon}")
        return self.moment_1pe

    @property
    def c_eps(self):
        return 2 ** (3 + self.epsilon) * (self.bound + 1) ** 2 * self._finite()

    @property
    def c1(self):
        M = self.bound
        return 64 * (M + 1) ** 2 * (self._finite() + M**2 + 1)

    @property
    def c2(self):
        M, m = self.bound, self._finite()
        return 48 * M**2 * (m + M ** (1 + self.epsilon)) + 16 * M**2 * m


def moment_info(model, epsilon, bound=None):
    """MomentInfo with ``E|Y|^(1+eps)`` computed for ``model``."""
    M = model.bound if bound is None else float(bound)
    return MomentInfo(float(epsilon), response_moment(model, 1.0 + float(epsilon)), M)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    mc_stderr: float = 0.0
    name: str = ""
    skipped: bool = False
    inputs: dict = field(default_factory=dict)
    satisfied: bool = field(init=False)

    def __post_init__(self):
        for name in ("lhs", "rhs", "mc_stderr"):
            object.__setattr__(self, name, float(getattr(self, name)))
        ok = (not self.skipped) and self.lhs <= self.rhs + MC_ALLOWANCE * self.mc_stderr
        object.__setattr__(self, "satisfied", bool(ok))

    def to_row(self):
        return {"check": self.name, "lhs": self.lhs, "rhs": self.rhs, "stderr": self.mc_stderr,
                "satisfied": self.satisfied, "skipped": self.skipped, "inputs": self.inputs}


def _require_theory_range(f, model, sigma, info):
    sigma = check_sigma(sigma)
    M = info.bound
    if sigma <= max(2 * M, 1.0):
        raise PreconditionError(f"sigma={sigma:g} must exceed max(2M, 1)={max(2 * M, 1.0):g} "
                                "for the comparison and variance bounds")
    grid = dense_grid(model.domain, 4001)
    for name, fn in (("f", f), ("f*", model.truth)):
        sup = float(np.max(np.abs(fn(grid))))
        if sup > M * (1 + 1e-12):
            raise PreconditionError(f"||{name}||_inf = {sup:.6g} exceeds M = {M:g}")
    info._finite()
    return sigma


def _excess_loss(f, model, sigma, mc_n, seed):
    data = generate_dataset(model, int(mc_n), seed)
    fx = np.asarray(f(data.xs), dtype=float)
    fs = model.truth(data.xs)
    xi = huber(data.ys - fx, sigma) - huber(data.ys - fs, sigma)
    return data, fx, fs, xi


def _mean_se(v):
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def _sq_dist(f, model, fx, fs):
    if model.dim == 1:
        return sq_l2_distance(f, model.truth, model.domain)[0]
    return float(np.mean((fx - fs) ** 2))


def _inputs(model, sigma, info, mc_n, seed):
    return {"sigma": sigma, "epsilon": info.epsilon, "M": info.bound, "moment_1pe": info.moment_1pe,
            "noise": model.noise.family, "mc_n": int(mc_n), "seed": seed}


def _comparison(sigma, info, mean_xi, se_xi, dist2, inputs):
    return BoundCheck(abs(mean_xi - dist2), info.c_eps / sigma**info.epsilon, se_xi, "comparison_gap",
                      inputs=inputs)


def _variance(sigma, info, xi, dist2, inputs):
    e = info.epsilon
    expo = 2 * max(e - 1, 0.0) / (e + 1)
    rhs = info.c1 * math.sqrt(dist2) ** expo + info.c2 * sigma ** (1 - e)
    lhs, se = _mean_se(xi * xi)
    return BoundCheck(lhs, rhs, se, "variance_bound", inputs=inputs)


def _bernstein(sigma, info, xi, mean_xi, se_xi, inputs):
    e = info.epsilon
    a = max(e - 1, 0.0) / (e + 1)
    lhs, se = _mean_se(xi * xi)
    if a > 0 and mean_xi < -MC_ALLOWANCE * se_xi:
        return BoundCheck(lhs, math.nan, se, "relaxed_bernstein", skipped=True, inputs=inputs)
    first = max(mean_xi, 0.0)
    rhs = (info.c1 * first**a + info.c1 * (info.c_eps * sigma ** (-e)) ** a
           + info.c2 * sigma ** (1 - e))
    return BoundCheck(lhs, rhs, se, "relaxed_bernstein", inputs=inputs)


def comparison_gap(f, model, sigma, info, mc_n=1_000_000, seed=0):
    """``|[R(f) - R(f*)] - ||f - f*||^2|`` against ``c_eps / sigma^eps``."""
    sigma = _require_theory_range(f, model, sigma, info)
    _, fx, fs, xi = _excess_loss(f, model, sigma, mc_n, seed)
    m, se = _mean_se(xi)
    return _comparison(sigma, info, m, se, _sq_dist(f, model, fx, fs), _inputs(model, sigma, info, mc_n, seed))


def variance_bound_check(f, model, sigma, info, mc_n=1_000_000, seed=0):
    """``E xi^2`` against ``c1 ||f - f*||^(2(eps-1)_+/(eps+1)) + c2 sigma^(1-eps)``."""
    sigma = _require_theory_range(f, model, sigma, info)
    _, fx, fs, xi = _excess_loss(f, model, sigma, mc_n, seed)
    return _variance(sigma, info, xi, _sq_dist(f, model, fx, fs), _inputs(model, sigma, info, mc_n, seed))


def relaxed_bernstein_check(f, model, sigma, info, mc_n=1_000_000, seed=0):
    """``E xi^2`` against the Bernstein-type bound in terms of ``E xi``.

    Skipped (flagged, not satisfied) when the exponent on ``E xi`` is positive
    and the estimate of ``E xi`` is negative beyond Monte Carlo error.
    """
    sigma = _require_theory_range(f, model, sigma, info)
    _, _, _, xi = _excess_loss(f, model, sigma, mc_n, seed)
    m, se = _mean_se(xi)
    return _bernstein(sigma, info, xi, m, se, _inputs(model, sigma, info, mc_n, seed))


def markov_tail_check(model, sigma, info, mc_n=1_000_000, seed=0):
    """Empirical ``P(|Y| >= sigma/2)`` against the Markov bound."""
    sigma = check_sigma(sigma)
    e = info.epsilon
    rhs = 2 ** (1 + e) * info._finite() / sigma ** (1 + e)
    ys = generate_dataset(model, int(mc_n), seed).ys
    p = float(np.mean(np.abs(ys) >= sigma / 2))
    se = math.sqrt(p * (1 - p) / len(ys))
    return BoundCheck(p, rhs, se, "markov_tail", inputs=_inputs(model, sigma, info, mc_n, seed))


def check_all(f, model, sigma, info, mc_n=1_000_000, seed=0):
    """All four checks, sharing one Monte Carlo sample for the three xi-based ones."""
    sigma = _require_theory_range(f, model, sigma, info)
    _, fx, fs, xi = _excess_loss(f, model, sigma, mc_n, seed)
    m, se = _mean_se(xi)
    dist2 = _sq_dist(f, model, fx, fs)
    inputs = _inputs(model, sigma, info, mc_n, seed)
    inputs["sq_l2"] = float(dist2)
    return [
        _comparison(sigma, info, m, se, dist2, inputs),
        _variance(sigma, info, xi, dist2, inputs),
        _bernstein(sigma, info, xi, m, se, inputs),
        markov_tail_check(model, sigma, info, mc_n, seed),
    ]
