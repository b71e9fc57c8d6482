"""Adaptive Runge-Kutta integration for complex linear systems."""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError

__all__ = ["solve", "DEFAULT_RTOL", "DEFAULT_ATOL"]

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12


def solve(rhs, y0, t_eval, t0: float | None = None, rtol: float = DEFAULT_RTOL,
          atol: float = DEFAULT_ATOL, max_step: float = np.inf) -> np.ndarray:
    """Integrate ``y' = rhs(t, y)`` with the Dormand-Prince 5(4) pair.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, y) -> ndarray`` on flat complex vectors.
    y0 : array_like
        Initial state (any shape; flattened internally).
    t_eval : array_like
        Output times, non-decreasing, all ``>= t0``.
    t0 : float, optional
        Start time; defaults to ``t_eval[0]``.

    Returns
    -------
    ndarray
        States at ``t_eval`` with shape ``(len(t_eval),) + y0.shape``.

    Raises
    ------
    IntegrationError
        If step control fails.
    """
    y0 = np.asarray(y0, dtype=complex)
    shape = y0.shape
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.size == 0:
        return np.empty((0,) + shape, dtype=complex)
    start = float(t_eval[0]) if t0 is None else float(t0)
    if np.any(np.diff(t_eval) < 0) or t_eval[0] < start:
        raise ValueError("t_eval must be non-decreasing and start at or after t0")
    end = float(t_eval[-1])
    out = np.empty((t_eval.size, y0.size), dtype=complex)
    at_start = t_eval == start
    out[at_start] = y0.ravel()
    if end == start:
        return out.reshape((t_eval.size,) + shape)

    def f(t, y):
        return np.asarray(rhs(t, y), dtype=complex).ravel()

    sol = solve_ivp(f, (start, end), y0.ravel(), method="RK45", t_eval=t_eval[~at_start],
                    rtol=rtol, atol=atol, max_step=max_step)
    if sol.status != 0:
        raise IntegrationError(f"ODE integration failed: {sol.message}", sol.y.T if sol.y.size else None)
    out[~at_start] = sol.y.T
    return out.reshape((t_eval.size,) + shape)
