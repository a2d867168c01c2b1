"""Huber loss, its derivative, the IRLS weight and empirical risk.

All functions accept scalars or numpy arrays and broadcast; scalar inputs
give Python floats back.
"""
import numpy as np

from .errors import EmptyDatasetError, InvalidInputError


def check_sigma(sigma):
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma <= 0:
        raise InvalidInputError(f"sigma must be finite and positive, got {sigma!r}")
    return sigma


def _residuals(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("residuals must be finite")
    return t


def _out(v, like):
    return float(v) if np.ndim(like) == 0 else v


def huber(t, sigma):
    """t**2 for |t| <= sigma, 2*sigma*|t| - sigma**2 otherwise."""
    sigma = check_sigma(sigma)
    r = _residuals(t)
    a = np.abs(r)
    v = np.where(a <= sigma, r * r, 2.0 * sigma * a - sigma * sigma)
    return _out(v, t)


def huber_deriv(t, sigma):
    sigma = check_sigma(sigma)
    r = _residuals(t)
    v = np.where(np.abs(r) <= sigma, 2.0 * r, 2.0 * sigma * np.sign(r))
    return _out(v, t)


def huber_weight(t, sigma):
    """min(1, sigma/|t|), equal to 1 at t = 0.

    Satisfies ``huber_deriv(t) == 2 * t * huber_weight(t)``.
    """
    sigma = check_sigma(sigma)
    r = _residuals(t)
    a = np.abs(np.atleast_1d(r))
    v = np.ones_like(a)
    np.divide(sigma, a, out=v, where=a > sigma)
    return _out(v.reshape(np.shape(r)), t)


def empirical_risk(predictions, targets, sigma):
    """Mean Huber loss of the residuals ``targets - predictions``."""
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if p.size == 0 and y.size == 0:
        raise EmptyDatasetError("empirical risk of an empty dataset is undefined")
    if p.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {p.size} predictions vs {y.size} targets")
    return float(np.mean(huber(y - p, sigma)))
