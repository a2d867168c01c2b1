"""Adaptive 1-D quadrature over a partition of the real line.

Thin wrapper around QUADPACK (``scipy.integrate.quad``): the integration range
is split at the caller's breakpoints (kinks, density joints) so each piece is
smooth, and an error is raised instead of a warning when the reported error
estimate misses the tolerance.
"""
import math
import warnings

from scipy import integrate as _integrate

from .errors import NumericalError

ABS_TOL = 1e-13
REL_TOL = 1e-12


def partition(a, b, breakpoints=()):
    pts = sorted({p for p in breakpoints if a < p < b})
    return [a, *pts, b]


def integrate(func, a, b, breakpoints=(), tol=1e-10, limit=400):
    """Integrate ``func`` over [a, b] (either end may be infinite).

    Raises NumericalError if the total error estimate exceeds ``tol``.
    """
    edges = partition(a, b, breakpoints)
    total = 0.0
    err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo == hi:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("error", _integrate.IntegrationWarning)
            try:
                val, e = _integrate.quad(func, lo, hi, epsabs=ABS_TOL, epsrel=REL_TOL, limit=limit)
            except _integrate.IntegrationWarning as exc:
                # QUADPACK complains when it cannot reach 1e-13; accept if the
                # estimate still meets the caller's tolerance.
                warnings.simplefilter("ignore", _integrate.IntegrationWarning)
                val, e = _integrate.quad(func, lo, hi, epsabs=ABS_TOL, epsrel=REL_TOL, limit=limit)
                if not e <= tol:
                    raise NumericalError(
                        f"quadrature on [{lo}, {hi}] did not converge: {exc}; error estimate {e:.3g}"
                    ) from None
        total += val
        err += e
    if not math.isfinite(total) or err > tol:
        raise NumericalError(f"quadrature error estimate {err:.3g} exceeds tolerance {tol:.3g}")
    return total
