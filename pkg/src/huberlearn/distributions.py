"""Noise families, exact samplers, moments and synthetic regression data.

The regression model is ``Y = f*(X) + s(X) * eps`` with ``X`` uniform on a box.
Every noise family has zero mean, so ``f*`` is the conditional mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special

from .errors import InvalidInputError
from .integrate import integrate

QUARTER = 0.25
TRUNCATION_U = 1e-12
SQRT_2PI = math.sqrt(2.0 * math.pi)


# -- seeding ------------------------------------------------------------------

def derive_seed(master_seed, *keys):
    """Deterministic child seed: a hash of ``(master_seed, *keys)``.

    All keys must be nonnegative integers. Used to give every replicate (and
    every grid point) its own independent stream.
    """
    words = [int(master_seed), *(int(k) for k in keys)]
    if any(w < 0 for w in words):
        raise InvalidInputError("seeds and seed keys must be nonnegative integers")
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _open_uniform(rng, n):
    # strictly inside (0, 1) so quantile transforms never hit an infinite endpoint
    return (rng.integers(0, 2**53, size=n, dtype=np.int64) + 0.5) / 2.0**53


def _check_finite(t, what="t"):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise InvalidInputError(f"{what} must be finite")
    return t


def _check_unit(u):
    u = np.asarray(u, dtype=float)
    if not np.all((u > 0) & (u < 1)):
        raise InvalidInputError("quantile level must lie strictly inside (0, 1)")
    return u


def _scalar(v, like):
    return float(v) if np.ndim(like) == 0 else v


# -- Example 1 ------------------------------------------------------------------

def example1_pdf(t):
    """Asymmetric two-sided exponential density with zero mean.

    ``exp(-(t + 1/4)) / 2`` on ``t >= -1/4`` and ``exp(2 (t + 1/4))`` below.
    """
    x = _check_finite(t)
    s = x + QUARTER
    v = np.where(s >= 0, 0.5 * np.exp(-np.abs(s)), np.exp(-2.0 * np.abs(s)))
    return _scalar(v, t)


def example1_cdf(t):
    x = np.asarray(t, dtype=float)
    if np.any(np.isnan(x)):
        raise InvalidInputError("t must not be NaN")
    s = x + QUARTER
    v = np.where(s < 0, 0.5 * np.exp(-2.0 * np.abs(s)), 1.0 - 0.5 * np.exp(-np.abs(s)))
    return _scalar(v, t)


def example1_quantile(u):
    p = _check_unit(u)
    lo = np.minimum(p, 0.5)
    hi = np.maximum(p, 0.5)
    v = np.where(p < 0.5, -QUARTER + 0.5 * np.log(2.0 * lo), -QUARTER - np.log(2.0 * (1.0 - hi)))
    return _scalar(v, u)


# -- noise families -----------------------------------------------------------------

class NoiseSpec:
    """Common interface; concrete families are the frozen dataclasses below."""

    family = "abstract"
    breakpoints: tuple = ()

    def pdf(self, t):
        raise NotImplementedError

    def pdf_scalar(self, t):
        """Density at a single float; the fast path used inside quadrature."""
        return float(self.pdf(t))

    def cdf(self, t):
        raise NotImplementedError

    def quantile(self, u):
        raise NotImplementedError

    def draw(self, rng, n):
        raise NotImplementedError

    def abs_moment(self, p):
        raise NotImplementedError

    def support(self, u=TRUNCATION_U):
        """Interval between the ``u`` and ``1-u`` quantiles."""
        return float(self.quantile(u)), float(self.quantile(1.0 - u))

    def max_finite_moment(self):
        """Supremum of the orders p with E|eps|^p finite (inf if all are)."""
        return math.inf

    def to_config(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Example1(NoiseSpec):
    family = "example1"
    breakpoints = (-QUARTER,)

    def pdf(self, t):
        return example1_pdf(t)

    def pdf_scalar(self, t):
        s = t + QUARTER
        return 0.5 * math.exp(-s) if s >= 0 else math.exp(2.0 * s)

    def cdf(self, t):
        return example1_cdf(t)

    def quantile(self, u):
        return example1_quantile(u)

    def draw(self, rng, n):
        return example1_quantile(_open_uniform(rng, n)) if n else np.empty(0)

    def abs_moment(self, p):
        f = lambda t: abs(t) ** p * self.pdf_scalar(t)
        return integrate(f, -math.inf, math.inf, breakpoints=(-QUARTER, 0.0))

    def to_config(self):
        return {"family": self.family}


@dataclass(frozen=True)
class GaussMixture(NoiseSpec):
    weights: tuple = (0.5, 0.5)
    means: tuple = (0.0, 0.0)
    stds: tuple = (2.5, 0.5)
    family = "gauss_mixture"

    def __post_init__(self):
        for name in ("weights", "means", "stds"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        w, m, s = (np.array(v) for v in (self.weights, self.means, self.stds))
        if not (len(w) == len(m) == len(s) >= 1):
            raise InvalidInputError("weights, means and stds must have the same nonzero length")
        if not np.all(np.isfinite(np.concatenate([w, m, s]))):
            raise InvalidInputError("mixture parameters must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mixture weights must be nonnegative and sum to 1")
        if np.any(s <= 0):
            raise InvalidInputError("mixture stds must be positive")
        if abs(w @ m) > 1e-12 * (1.0 + np.abs(m).max()):
            raise InvalidInputError("mixture must have zero mean")

    @property
    def breakpoints(self):
        return tuple(sorted(set(self.means)))

    def pdf(self, t):
        x = _check_finite(t)[..., None]
        z = (x - np.array(self.means)) / np.array(self.stds)
        v = np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * np.array(self.stds)) @ np.array(self.weights)
        return _scalar(v, t)

    def pdf_scalar(self, t):
        total = 0.0
        for w, m, s in zip(self.weights, self.means, self.stds):
            z = (t - m) / s
            total += w * math.exp(-0.5 * z * z) / (SQRT_2PI * s)
        return total

    def cdf(self, t):
        x = np.asarray(t, dtype=float)[..., None]
        v = special.ndtr((x - np.array(self.means)) / np.array(self.stds)) @ np.array(self.weights)
        return _scalar(v, t)

    def quantile(self, u):
        from scipy.optimize import brentq

        p = _check_unit(u)
        lo = min(m - 40 * s for m, s in zip(self.means, self.stds))
        hi = max(m + 40 * s for m, s in zip(self.means, self.stds))
        flat = [brentq(lambda t: self.cdf(t) - pi, lo, hi, xtol=1e-14, rtol=1e-14) for pi in p.ravel()]
        return _scalar(np.reshape(flat, p.shape), u)

    def support(self, u=TRUNCATION_U):
        # both tails are Gaussian; the mixture quantile is a root-find, so bound it
        # by the widest component's quantile instead
        z = -special.ndtri(u)
        return (min(m - z * s for m, s in zip(self.means, self.stds)),
                max(m + z * s for m, s in zip(self.means, self.stds)))

    def draw(self, rng, n):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return np.array(self.means)[comp] + np.array(self.stds)[comp] * rng.standard_normal(n)

    def abs_moment(self, p):
        # E|N(m, s^2)|^p = s^p 2^{p/2} Gamma((p+1)/2)/sqrt(pi) 1F1(-p/2; 1/2; -m^2/(2 s^2))
        total = 0.0
        for w, m, s in zip(self.weights, self.means, self.stds):
            base = s**p * 2 ** (p / 2) * math.gamma((p + 1) / 2) / math.sqrt(math.pi)
            total += w * base * special.hyp1f1(-p / 2, 0.5, -(m * m) / (2 * s * s))
        return float(total)

    def to_config(self):
        return {"family": self.family, "weights": list(self.weights),
                "means": list(self.means), "stds": list(self.stds)}


@dataclass(frozen=True)
class StudentT(NoiseSpec):
    df: float = 3.0
    scale: float = 1.0
    family = "student_t"
    breakpoints = (0.0,)

    def __post_init__(self):
        if not (math.isfinite(self.df) and self.df > 1):
            raise InvalidInputError("StudentT needs df > 1 so that the mean exists")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError("StudentT scale must be positive")
        object.__setattr__(self, "df", float(self.df))
        object.__setattr__(self, "scale", float(self.scale))
        v = self.df
        object.__setattr__(self, "_log_norm", math.lgamma((v + 1) / 2) - math.lgamma(v / 2)
                           - 0.5 * math.log(v * math.pi) - math.log(self.scale))

    def pdf(self, t):
        z = _check_finite(t) / self.scale
        v = np.exp(self._log_norm - (self.df + 1) / 2 * np.log1p(z * z / self.df))
        return _scalar(v, t)

    def pdf_scalar(self, t):
        z = t / self.scale
        return math.exp(self._log_norm - (self.df + 1) / 2 * math.log1p(z * z / self.df))

    def cdf(self, t):
        return _scalar(special.stdtr(self.df, np.asarray(t, dtype=float) / self.scale), t)

    def quantile(self, u):
        return _scalar(self.scale * special.stdtrit(self.df, _check_unit(u)), u)

    def draw(self, rng, n):
        return self.scale * rng.standard_t(self.df, size=n)

    def max_finite_moment(self):
        return self.df

    def abs_moment(self, p):
        if p >= self.df:
            return math.inf
        f = lambda t: t**p * self.pdf_scalar(t)
        s = self.scale
        return 2.0 * integrate(f, 0.0, math.inf, breakpoints=(s, 10 * s, 100 * s), tol=1e-9)

    def to_config(self):
        return {"family": self.family, "df": self.df, "scale": self.scale}


@dataclass(frozen=True)
class SymmetricPareto(NoiseSpec):
    """``|eps|`` is Pareto(tail_index, scale); the sign is a fair coin."""

    tail_index: float = 2.5
    scale: float = 1.0
    family = "symmetric_pareto"

    def __post_init__(self):
        if not (math.isfinite(self.tail_index) and self.tail_index > 1):
            raise InvalidInputError("SymmetricPareto needs tail_index > 1")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError("SymmetricPareto scale must be positive")
        object.__setattr__(self, "tail_index", float(self.tail_index))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def breakpoints(self):
        return (-self.scale, self.scale)

    def pdf(self, t):
        x = np.abs(_check_finite(t))
        a, s = self.tail_index, self.scale
        with np.errstate(divide="ignore"):
            v = np.where(x >= s, 0.5 * a * s**a / np.maximum(x, s) ** (a + 1), 0.0)
        return _scalar(v, t)

    def pdf_scalar(self, t):
        a, s = self.tail_index, self.scale
        x = abs(t)
        return 0.5 * a * s**a / x ** (a + 1) if x >= s else 0.0

    def cdf(self, t):
        x = np.asarray(t, dtype=float)
        a, s = self.tail_index, self.scale
        tail = 0.5 * (s / np.maximum(np.abs(x), s)) ** a
        v = np.where(x < 0, tail, 1.0 - tail)
        return _scalar(v, t)

    def quantile(self, u):
        p = _check_unit(u)
        a, s = self.tail_index, self.scale
        lo = np.minimum(p, 0.5)
        hi = np.maximum(p, 0.5)
        v = np.where(p < 0.5, -s * (2 * lo) ** (-1 / a), s * (2 * (1 - hi)) ** (-1 / a))
        return _scalar(v, u)

    def draw(self, rng, n):
        return self.quantile(_open_uniform(rng, n)) if n else np.empty(0)

    def max_finite_moment(self):
        return self.tail_index

    def abs_moment(self, p):
        a = self.tail_index
        if p >= a:
            return math.inf
        return a * self.scale**p / (a - p)

    def to_config(self):
        return {"family": self.family, "tail_index": self.tail_index, "scale": self.scale}


NOISE_FAMILIES = {cls.family: cls for cls in (Example1, GaussMixture, StudentT, SymmetricPareto)}


def noise_from_config(cfg):
    cfg = dict(cfg)
    family = cfg.pop("family", None)
    if family not in NOISE_FAMILIES:
        raise InvalidInputError(f"unknown noise family {family!r}; expected one of {sorted(NOISE_FAMILIES)}")
    try:
        return NOISE_FAMILIES[family](**cfg)
    except TypeError as exc:
        raise InvalidInputError(f"bad parameters for noise family {family!r}: {exc}") from None


def sample_noise(spec, n, seed):
    """``n`` i.i.d. draws from ``spec``; deterministic given ``seed``."""
    n = int(n)
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    if not isinstance(spec, NoiseSpec):
        raise InvalidInputError(f"not a noise spec: {spec!r}")
    return np.asarray(spec.draw(make_rng(seed), n), dtype=float)


def moment(spec, p):
    """E|eps|^p, or ``math.inf`` when the moment does not exist."""
    p = float(p)
    if not (math.isfinite(p) and p > 0):
        raise InvalidInputError("moment order must be positive")
    if p >= spec.max_finite_moment():
        return math.inf
    return float(spec.abs_moment(p))


# -- regression model -----------------------------------------------------------------

def two_sin_pi(x):
    return 2.0 * np.sin(np.pi * x[:, 0])


def zero(x):
    return np.zeros(len(x))


def toy_scale(x):
    return 1.0 + 2.0 * x[:, 0]


def unit_scale(x):
    return np.ones(len(x))


TRUTHS = {"two_sin_pi": two_sin_pi, "zero": zero}
SCALES = {"toy": toy_scale, "unit": unit_scale}


def _box(domain):
    box = np.atleast_2d(np.asarray(domain, dtype=float))
    if box.ndim != 2 or box.shape[1] != 2 or not np.all(np.isfinite(box)) or np.any(box[:, 1] <= box[:, 0]):
        raise InvalidInputError(f"domain must be a list of (low, high) pairs with low < high, got {domain!r}")
    return tuple((float(lo), float(hi)) for lo, hi in box)


def dense_grid(domain, points=1001):
    box = np.array(domain)
    d = len(box)
    per_axis = max(2, int(round(points ** (1.0 / d))))
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class RegressionModel:
    truth: Callable
    het_scale: Callable
    noise: NoiseSpec
    bound: float
    domain: tuple = ((0.0, 1.0),)

    def __post_init__(self):
        object.__setattr__(self, "domain", _box(self.domain))
        grid = dense_grid(self.domain, 4001)
        f = np.asarray(self.truth(grid), dtype=float)
        s = np.asarray(self.het_scale(grid), dtype=float)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(s))):
            raise InvalidInputError("truth and scale functions must be finite on the domain")
        if np.any(s < 0):
            raise InvalidInputError("the heteroscedastic scale must be nonnegative")
        if not self.bound > 0 or np.max(np.abs(f)) > self.bound:
            raise InvalidInputError(f"bound M={self.bound} is below sup|f*|={np.max(np.abs(f)):.6g}")

    @property
    def dim(self):
        return len(self.domain)

    def sample_inputs(self, rng, n):
        box = np.array(self.domain)
        return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((n, self.dim))

    def to_config(self):
        names = {v: k for k, v in TRUTHS.items()}, {v: k for k, v in SCALES.items()}
        return {"truth": names[0].get(self.truth, repr(self.truth)),
                "scale": names[1].get(self.het_scale, repr(self.het_scale)),
                "bound": self.bound, "domain": [list(b) for b in self.domain],
                "noise": self.noise.to_config()}


def toy_model(noise=None, bound=2.0):
    """``Y = 2 sin(pi X) + (1 + 2X) eps`` with X uniform on [0, 1]."""
    return RegressionModel(two_sin_pi, toy_scale, noise or GaussMixture(), bound)


def model_from_config(cfg):
    cfg = dict(cfg)
    try:
        truth = TRUTHS[cfg.get("truth", "two_sin_pi")]
    except KeyError:
        raise InvalidInputError(f"unknown truth {cfg.get('truth')!r}; expected one of {sorted(TRUTHS)}") from None
    try:
        scale = SCALES[cfg.get("scale", "toy")]
    except KeyError:
        raise InvalidInputError(f"unknown scale {cfg.get('scale')!r}; expected one of {sorted(SCALES)}") from None
    noise = noise_from_config(cfg.get("noise", {"family": "example1"}))
    return RegressionModel(truth, scale, noise, float(cfg.get("bound", 2.0)),
                           cfg.get("domain", ((0.0, 1.0),)))


@dataclass(frozen=True, eq=False)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    seed: object = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        ys = np.asarray(self.ys, dtype=float).ravel()
        if len(xs) != len(ys):
            raise InvalidInputError("xs and ys must have equal length")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise InvalidInputError("dataset entries must be finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __len__(self):
        return len(self.ys)


def generate_dataset(model, n, seed):
    n = int(n)
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    x_seed, eps_seed = np.random.SeedSequence(seed).spawn(2) if not isinstance(seed, np.random.Generator) \
        else (seed, seed)
    xs = model.sample_inputs(make_rng(x_seed), n)
    eps = sample_noise(model.noise, n, eps_seed)
    ys = model.truth(xs) + model.het_scale(xs) * eps if n else np.empty(0)
    return Dataset(xs, ys, seed)


@lru_cache(maxsize=256)
def response_moment(model, p, mc_n=2_000_000, seed=0):
    """E|Y|^p for ``Y = f*(X) + s(X) eps``.

    Nested adaptive quadrature when the input domain is an interval; a Monte
    Carlo average of ``mc_n`` draws otherwise.
    """
    if p >= model.noise.max_finite_moment():
        return math.inf
    if model.dim > 1:
        data = generate_dataset(model, mc_n, seed)
        return float(np.mean(np.abs(data.ys) ** p))
    (lo, hi), = model.domain
    noise = model.noise

    def inner(x):
        pt = np.array([[x]])
        f = float(model.truth(pt)[0])
        s = float(model.het_scale(pt)[0])
        if s == 0:
            return abs(f) ** p
        g = lambda t: abs(f + s * t) ** p * noise.pdf_scalar(t)
        return integrate(g, -math.inf, math.inf, breakpoints=(-f / s, *noise.breakpoints), tol=1e-8)

    return integrate(inner, lo, hi, tol=1e-8) / (hi - lo)
