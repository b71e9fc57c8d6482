"""Special functions and quadrature kernels.

Exponential integrals come from :func:`scipy.special.expn`, adaptive
quadrature from :func:`scipy.integrate.quad`.  This module adds the domain
checks, the underflow floor, a cancellation-free series remainder for
:math:`E_n`, and a vectorised composite Gauss-Legendre rule used for
integrands that are cheap in bulk but expensive per call.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate as _integrate
from scipy import special as _special

from .errors import QuadratureError

__all__ = [
    "QuadratureSpec",
    "exp_int_en",
    "exp_int_en_remainder",
    "sinc",
    "integrate",
    "integrate_panels",
    "gauss_legendre",
]

# e^{-700} is ~1e-304; beyond this the value is reported as zero.
UNDERFLOW_Z = 700.0
EULER_GAMMA = 0.57721566490153286061


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for adaptive quadrature.

    Parameters
    ----------
    abs_tol, rel_tol : float
        The estimate is accepted once its error is below
        ``max(abs_tol, rel_tol * |result|)``.
    max_subdivisions : int
        Upper bound on the number of subintervals.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if int(self.max_subdivisions) < 1:
            raise ValueError("max_subdivisions must be at least 1")


def _scalar_or_array(values, like):
    if np.ndim(like) == 0:
        return float(values)
    return values


def exp_int_en(n: int, z):
    """Generalised exponential integral :math:`E_n(z)=\\int_1^\\infty e^{-zt}t^{-n}dt`.

    Parameters
    ----------
    n : int
        Order, ``n >= 1``.
    z : float or array_like
        Non-negative argument.  ``n == 1`` requires ``z > 0``.

    Returns
    -------
    float or ndarray
        ``E_n(z)``; exactly ``0`` for ``z > 700``.

    Raises
    ------
    ValueError
        Negative ``z``, ``n < 1``, or ``n == 1`` at ``z == 0``.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"order must be >= 1, got {n}")
    zz = np.asarray(z, dtype=float)
    if np.any(np.isnan(zz)) or np.any(zz < 0):
        raise ValueError("exp_int_en requires z >= 0")
    if n == 1 and np.any(zz == 0):
        raise ValueError("E_1 diverges at z = 0")
    out = np.where(zz > UNDERFLOW_Z, 0.0, _special.expn(n, np.minimum(zz, UNDERFLOW_Z)))
    return _scalar_or_array(out, z)


def _psi_int(m: int) -> float:
    """Digamma at a positive integer."""
    return -EULER_GAMMA + sum(1.0 / i for i in range(1, m))


def _series_term(m: int, j: int, z, logz):
    # j-th term of the power series of E_m around 0
    if j == m - 1:
        return (-z) ** j / math.factorial(j) * (-logz + _psi_int(m))
    return -((-z) ** j) / ((j - m + 1) * math.factorial(j))


def exp_int_en_remainder(n: int, z, k: int):
    """``E_n(z)`` minus the first ``k`` terms of its power series at 0.

    The series is ``E_n(z) = sum_j c_j z^j`` plus a logarithmic term at
    ``j = n - 1``.  Removing the leading polynomial terms analytically avoids
    the catastrophic cancellation that appears in expressions such as
    ``E_3(z) - 1/2 + z`` for small ``z``.

    Parameters
    ----------
    n : int
        Order, ``n >= 1``.
    z : float or array_like
        Non-negative argument.
    k : int
        Number of leading terms to remove, ``0 <= k <= n - 1``.
    """
    n, k = int(n), int(k)
    if not 0 <= k <= n - 1:
        raise ValueError("k must satisfy 0 <= k <= n - 1")
    if k == 0:
        return exp_int_en(n, z)
    zz = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(zz < 0):
        raise ValueError("z must be non-negative")
    out = np.zeros_like(zz)
    small = (zz > 0) & (zz < 1.0)
    if np.any(small):
        zs = zz[small]
        logz = np.log(zs)
        acc = np.zeros_like(zs)
        # |z|^j / j! < 1e-19 well before j = k + 30 for z < 1
        for j in range(k + 30, k - 1, -1):
            acc += _series_term(n, j, zs, logz)
        out[small] = acc
    big = zz >= 1.0
    if np.any(big):
        zb = zz[big]
        head = sum(_series_term(n, j, zb, None) for j in range(k))
        out[big] = exp_int_en(n, zb) - head
    return _scalar_or_array(out[0] if np.ndim(z) == 0 else out.reshape(np.shape(z)), z)


def sinc(x):
    """Unnormalised sinc, ``sin(x)/x`` with ``sinc(0) = 1``."""
    xx = np.asarray(x, dtype=float)
    small = np.abs(xx) < 1e-4
    x2 = xx * xx
    taylor = 1.0 - x2 / 6.0 + x2 * x2 / 120.0
    safe = np.where(small, 1.0, xx)
    out = np.where(small, taylor, np.sin(safe) / safe)
    return _scalar_or_array(out, x)


def integrate(f, a: float, b: float, spec: QuadratureSpec | None = None, points=None) -> float:
    """Adaptive quadrature of a scalar function on ``[a, b]``.

    Thin wrapper around QUADPACK (:func:`scipy.integrate.quad`) that turns
    silent non-convergence into :class:`QuadratureError`.

    Parameters
    ----------
    f : callable
        ``f(x) -> float``.  Integrable endpoint singularities are allowed
        since the Gauss-Kronrod rule never samples the endpoints.
    a, b : float
        Limits with ``a <= b``; ``b`` may be ``inf``.
    spec : QuadratureSpec, optional
    points : sequence of float, optional
        Interior break points (finite limits only).

    Raises
    ------
    QuadratureError
        If QUADPACK reports failure; ``estimate`` holds its best value.
    """
    spec = spec or QuadratureSpec()
    if b < a:
        raise ValueError("integrate requires a <= b")
    if a == b:
        return 0.0
    kwargs = dict(epsabs=spec.abs_tol, epsrel=spec.rel_tol, limit=int(spec.max_subdivisions), full_output=1)
    if points is not None and np.isfinite(b):
        pts = [p for p in points if a < p < b]
        if pts:
            kwargs["points"] = pts
            kwargs["limit"] = max(kwargs["limit"], len(pts) + 50)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        res = _integrate.quad(f, a, b, **kwargs)
    value, err = res[0], res[1]
    tol = max(spec.abs_tol, spec.rel_tol * abs(value))
    if len(res) > 3 and err > tol:
        raise QuadratureError(f"quadrature did not converge on [{a}, {b}]: {res[3]}", value, err)
    return float(value)


@lru_cache(maxsize=32)
def gauss_legendre(order: int):
    """Gauss-Legendre nodes and weights on ``[-1, 1]`` (cached)."""
    x, w = np.polynomial.legendre.leggauss(int(order))
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def integrate_panels(f, edges, order: int = 20, spec: QuadratureSpec | None = None, check: bool = True):
    """Composite Gauss-Legendre rule for a vectorised integrand.

    Parameters
    ----------
    f : callable
        Vectorised ``f(x) -> ndarray`` (may return complex values).
    edges : array_like
        Increasing panel boundaries.
    order : int
        Nodes per panel.
    spec : QuadratureSpec, optional
        Tolerance used when ``check`` is true.
    check : bool
        Compare against the rule of half the order and raise
        :class:`QuadratureError` if they disagree beyond tolerance.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        return 0.0
    if np.any(np.diff(edges) < 0):
        raise ValueError("panel edges must be increasing")

    def rule(p):
        x, w = gauss_legendre(p)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * np.diff(edges)
        nodes = mid[:, None] + half[:, None] * x[None, :]
        vals = f(nodes.ravel()).reshape(nodes.shape)
        return np.sum(vals * (half[:, None] * w[None, :]))

    value = rule(order)
    if check:
        spec = spec or QuadratureSpec()
        coarse = rule(max(order // 2, 2))
        err = abs(value - coarse)
        if err > max(spec.abs_tol, spec.rel_tol * abs(value)):
            raise QuadratureError("panel quadrature did not converge", value, err)
    return value
