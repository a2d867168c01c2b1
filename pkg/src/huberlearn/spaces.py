"""Bounded hypothesis spaces over a Gaussian-bump dictionary.

A space is the set of functions ``x -> clip(sum_j c_j phi_j(x), -M, M)`` with
coefficients in the Euclidean ball of radius R. The dictionary holds Gaussian
bumps ``exp(-||x - center||^2 / h^2)`` on a uniform grid of centers plus the
constant function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import _box, dense_grid
from .errors import InvalidInputError, OutOfDomainError

DOMAIN_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class HypothesisSpace:
    centers: np.ndarray
    bandwidth: float
    radius: float
    bound: float
    q: float
    domain: tuple = ((0.0, 1.0),)

    def __post_init__(self):
        object.__setattr__(self, "domain", _box(self.domain))
        c = np.asarray(self.centers, dtype=float).reshape(-1, self.dim)
        object.__setattr__(self, "centers", c)
        for name in ("radius", "bound", "q"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidInputError(f"{name} must be positive, got {v!r}")
        if len(c) and not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvalidInputError(f"bandwidth must be positive, got {self.bandwidth!r}")

    @property
    def dim(self):
        return len(self.domain)

    @property
    def size(self):
        """Number of basis functions (bumps plus the constant)."""
        return len(self.centers) + 1

    def check_domain(self, xs):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None] if self.dim == 1 else xs[None, :]
        if xs.shape[-1] != self.dim:
            raise InvalidInputError(f"expected points of dimension {self.dim}, got shape {xs.shape}")
        box = np.array(self.domain)
        inside = (xs >= box[:, 0] - DOMAIN_SLACK) & (xs <= box[:, 1] + DOMAIN_SLACK)
        if not np.all(inside):
            raise OutOfDomainError(f"points outside the domain {self.domain}")
        return xs

    def design(self, xs):
        """Basis matrix of shape (n, size); the last column is the constant."""
        xs = self.check_domain(xs)
        if len(self.centers) == 0:
            return np.ones((len(xs), 1))
        d2 = ((xs[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=-1)
        return np.hstack([np.exp(-d2 / self.bandwidth**2), np.ones((len(xs), 1))])

    def to_config(self):
        return {"centers": len(self.centers), "bandwidth": self.bandwidth, "radius": self.radius,
                "bound": self.bound, "q": self.q, "domain": [list(b) for b in self.domain]}


def make_space(centers, bandwidth, radius, bound, q, domain=((0.0, 1.0),)):
    """Uniform grid of ``centers`` bump centers per axis, plus a constant."""
    box = _box(domain)
    if int(centers) != centers or centers < 1:
        raise InvalidInputError(f"centers per axis must be a positive integer, got {centers!r}")
    if not bandwidth > 0:
        raise InvalidInputError(f"bandwidth must be positive, got {bandwidth!r}")
    centers = int(centers)
    axes = [np.array([(lo + hi) / 2]) if centers == 1 else np.linspace(lo, hi, centers) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    return HypothesisSpace(grid, float(bandwidth), float(radius), float(bound), float(q), box)


def constant_space(radius, bound, q=1.0, domain=((0.0, 1.0),)):
    """The space of constant functions with |c| <= radius, clipped at bound."""
    box = _box(domain)
    return HypothesisSpace(np.empty((0, len(box))), math.nan, float(radius), float(bound), float(q), box)


def space_from_config(cfg):
    cfg = dict(cfg)
    domain = cfg.get("domain", ((0.0, 1.0),))
    centers = int(cfg.get("centers", 8))
    if centers == 0:
        return constant_space(cfg.get("radius", 10.0), cfg.get("bound", 3.0), cfg.get("q", 1.0), domain)
    return make_space(centers, cfg.get("bandwidth", 0.2), cfg.get("radius", 50.0),
                      cfg.get("bound", 3.0), cfg.get("q", 1.0), domain)


@dataclass(frozen=True, eq=False)
class Estimator:
    space: HypothesisSpace
    coeffs: np.ndarray
    sigma_used: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).ravel()
        if c.size != self.space.size:
            raise InvalidInputError(f"expected {self.space.size} coefficients, got {c.size}")
        object.__setattr__(self, "coeffs", c)

    def raw(self, xs):
        """Unclipped predictions."""
        return self.space.design(xs) @ self.coeffs

    def __call__(self, xs):
        """Predictions clipped to [-M, M]."""
        return np.clip(self.raw(xs), -self.space.bound, self.space.bound)

    def clip_count(self, xs):
        return int(np.count_nonzero(np.abs(self.raw(xs)) > self.space.bound))


def evaluate(est, x):
    """Clipped value of the estimator at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    return float(est(x)[0])


def random_coefficients(space, rng, n=None):
    """Coefficient vectors drawn uniformly from the radius ball."""
    k = space.size
    shape = (k,) if n is None else (n, k)
    g = rng.standard_normal(shape)
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    r = space.radius * rng.random(() if n is None else (n, 1)) ** (1.0 / k)
    return g * r


def coefficient_grid(space, resolution):
    """Grid with ``resolution`` points per axis on [-R, R]^k, kept inside the ball.

    The origin is always included.
    """
    k = space.size
    axis = np.linspace(-space.radius, space.radius, int(resolution))
    mesh = np.meshgrid(*([axis] * k), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    pts = pts[np.linalg.norm(pts, axis=1) <= space.radius * (1 + 1e-12)]
    return np.vstack([pts, np.zeros((1, k))])


def _sup_dists(values, block=32):
    n = len(values)
    out = np.empty((n, n))
    for i in range(0, n, block):
        out[i:i + block] = np.max(np.abs(values[i:i + block, None, :] - values[None, :, :]), axis=-1)
    return out


def _function_values(space, resolution, eval_grid):
    if eval_grid is None:
        eval_grid = dense_grid(space.domain, 201)
    coeffs = coefficient_grid(space, resolution)
    vals = np.clip(coeffs @ space.design(eval_grid).T, -space.bound, space.bound)
    # duplicate columns never change a sup distance; duplicate rows are one function
    vals = np.unique(vals, axis=1)
    _, first = np.unique(np.round(vals, 12), axis=0, return_index=True)
    return vals[np.sort(first)]


def covering_number_estimate(space, eta, resolution=41, eval_grid=None):
    """Greedy sup-norm eta-cover size of a discretised version of the space.

    Functions are indexed by a coefficient grid with ``resolution`` points per
    axis and compared through their clipped values on ``eval_grid``. Balls are
    open and centered at members of the discretised set. Each step takes the
    first uncovered function (in coefficient-grid order) and covers it with
    the ball that absorbs the most uncovered functions, which is the optimal
    sweep on an interval.
    """
    if not (math.isfinite(eta) and eta > 0):
        raise InvalidInputError(f"eta must be positive, got {eta!r}")
    vals = _function_values(space, resolution, eval_grid)
    covers = _sup_dists(vals) < eta
    uncovered = np.ones(len(vals), dtype=bool)
    count = 0
    while uncovered.any():
        first = int(np.argmax(uncovered))
        candidates = np.flatnonzero(covers[first])
        gains = covers[np.ix_(candidates, uncovered)].sum(axis=1)
        uncovered &= ~covers[candidates[int(np.argmax(gains))]]
        count += 1
    return count


def packing_number_estimate(space, eta, resolution=41, eval_grid=None):
    """Size of a greedy maximal set of functions pairwise >= eta apart in sup-norm.

    Any such set bounds the covering number at radius eta/2 from below.
    """
    if not (math.isfinite(eta) and eta > 0):
        raise InvalidInputError(f"eta must be positive, got {eta!r}")
    vals = _function_values(space, resolution, eval_grid)
    dist = _sup_dists(vals)
    blocked = np.zeros(len(vals), dtype=bool)
    count = 0
    for i in range(len(vals)):
        if not blocked[i]:
            count += 1
            blocked |= dist[i] < eta
    return count


def fit_capacity_exponent(space, etas, resolution=41, eval_grid=None):
    """Slope of log N(eta) against log(1/eta) over the given radii."""
    etas = np.asarray(etas, dtype=float)
    counts = np.array([covering_number_estimate(space, e, resolution, eval_grid) for e in etas])
    slope, _ = np.polyfit(np.log(1 / etas), np.log(counts), 1)
    return float(slope)
