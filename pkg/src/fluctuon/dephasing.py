"""Pure-dephasing envelopes for free induction decay and spin echo.

Three routes are offered:

* Gaussian closure, ``exp(-<phi^2>/2)``, with the phase variance either in
  closed form (time domain) or as a filter-function integral over the
  spectral density;
* two effective telegraph fluctuators, solved analytically as a product of
  single-fluctuator generating functions;
* the same two-fluctuator closure integrated as a linear ODE system, which
  also accepts a time-dependent level splitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .curves import DecayCurve
from .errors import QuadratureError
from .noise import (EffectiveFluctuator, NoiseBand, NoiseModel, effective_fluctuator,
                    normalization_constant, spectral_density)
from .ode import DEFAULT_ATOL, DEFAULT_RTOL, solve
from .special import QuadratureSpec, exp_int_en_remainder, gauss_legendre, integrate_panels, sinc

__all__ = [
    "PROTOCOLS",
    "DephasingProblem",
    "gaussian_fid_variance",
    "gaussian_echo_variance",
    "gaussian_variance",
    "gaussian_envelope",
    "filter_weight",
    "filter_function_variance",
    "filter_function_envelope",
    "phi_fid",
    "phi_fid_derivative",
    "phi_echo",
    "product_envelope",
    "two_fluctuator_envelope",
    "solve_two_fluctuator_scalar",
    "ode_dephasing_envelope",
    "generating_ode_check",
]

PROTOCOLS = ("fid", "echo")


def _protocol(p) -> str:
    p = str(getattr(p, "value", p)).lower()
    if p not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {p!r}")
    return p


@dataclass(frozen=True)
class DephasingProblem:
    """Noise model, longitudinal coupling ``D_z`` and protocol."""

    model: NoiseModel
    D_z: float
    protocol: str = "fid"

    def __post_init__(self):
        if not math.isfinite(self.D_z):
            raise ValueError("D_z must be finite")
        object.__setattr__(self, "protocol", _protocol(self.protocol))


def _times(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("times must be non-negative")
    return t


def _ret(out, like):
    return out if np.ndim(like) else float(np.asarray(out).reshape(-1)[0])


# Gaussian closure, time domain

# below this cutoff ratio the closed forms lose digits to cancellation
_NARROW = 1.5


def _rtp_phase_var(x, protocol):
    """``2 gamma^2 <phase^2>`` of one unit telegraph process at ``x = gamma t``.

    FID: ``2x - 1 + e^{-2x}``.  Echo: ``2x - 3 + 4 e^{-x} - e^{-2x}``.
    Small ``x`` uses the Taylor series to avoid cancellation.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 0.1
    xs = x[small]
    acc = np.zeros_like(xs)
    term = np.ones_like(xs)
    for k in range(1, 16):
        term = term * (-xs) / k
        if k >= 2:
            acc += term * (2.0 ** k if protocol == "fid" else 2.0 ** k - 4.0)
    out[small] = acc if protocol == "fid" else -acc
    xl = x[~small]
    if protocol == "fid":
        out[~small] = 2 * xl + np.expm1(-2 * xl)
    else:
        out[~small] = 2 * xl - 3 + 4 * np.exp(-xl) - np.exp(-2 * xl)
    return out


def _narrow_variance(band: NoiseBand, D_z: float, tt, protocol):
    # average of the single-fluctuator variance over P_n in ln(gamma)
    x, w = gauss_legendre(32)
    lo, width = math.log(band.gamma_lo), math.log(band.gamma_hi / band.gamma_lo)
    g = np.exp(lo + 0.5 * width * (1 + x))
    wt = 0.5 * width * w * normalization_constant(band) * g ** (1 - band.n)
    flat = np.atleast_1d(tt).ravel()
    vals = _rtp_phase_var(g[:, None] * flat[None, :], protocol) / (2 * g[:, None] ** 2)
    out = D_z ** 2 * band.sigma ** 2 * (wt @ vals)
    return out.reshape(np.shape(tt))


def gaussian_fid_variance(band: NoiseBand, D_z: float, t):
    """Closed-form variance of the free-induction phase for one band.

    The leading polynomial part of each ``E_{n+2}`` term cancels exactly,
    so it is removed analytically before evaluation.  Bands narrower than a
    factor 1.5 in rate are averaged over the rate density by Gauss-Legendre
    quadrature instead, since the closed form cancels there.
    """
    tt = _times(t)
    n, b, c = band.n, band.b, band.c
    if c < _NARROW * b:
        return _ret(_narrow_variance(band, D_z, tt, "fid"), t)
    pref = 2.0 ** n * D_z ** 2 * band.sigma ** 2 * normalization_constant(band)

    def r(k):
        return exp_int_en_remainder(n + 2, k * tt, 2) / k ** (n + 1)

    return _ret(pref * (r(b) - r(c)), t)


def gaussian_echo_variance(band: NoiseBand, D_z: float, t):
    """Closed-form variance of the echo phase for one band."""
    tt = _times(t)
    n, b, c = band.n, band.b, band.c
    if c < _NARROW * b:
        return _ret(_narrow_variance(band, D_z, tt, "echo"), t)
    pref = 2.0 ** n * D_z ** 2 * band.sigma ** 2 * normalization_constant(band)

    def q(k):
        return (4.0 * exp_int_en_remainder(n + 2, 0.5 * k * tt, 2)
                - exp_int_en_remainder(n + 2, k * tt, 2)) / k ** (n + 1)

    return _ret(pref * (q(b) - q(c)), t)


def gaussian_variance(band: NoiseBand, D_z: float, t, protocol="fid"):
    if _protocol(protocol) == "fid":
        return gaussian_fid_variance(band, D_z, t)
    return gaussian_echo_variance(band, D_z, t)


def gaussian_envelope(problem: DephasingProblem, t_grid) -> DecayCurve:
    """``exp(-1/2 sum_n <phase_n^2>)`` on a time grid."""
    t = _times(np.atleast_1d(t_grid))
    var = sum(gaussian_variance(b, problem.D_z, t, problem.protocol) for b in problem.model.bands)
    return DecayCurve(t, np.exp(-0.5 * var), "gaussian", meta={"protocol": problem.protocol, "D_z": problem.D_z})


# Gaussian closure, frequency domain

def filter_weight(omega, t: float, protocol="fid"):
    """Filter function ``W(omega t)`` normalised so ``<phase^2> = D^2 t^2 int S W``.

    FID: ``sinc^2(omega t / 2)``.  Echo: ``sin^2(omega t / 4) sinc^2(omega t / 4)``.
    """
    x = np.asarray(omega, dtype=float) * t
    if _protocol(protocol) == "fid":
        return sinc(0.5 * x) ** 2
    return (np.sin(0.25 * x) * sinc(0.25 * x)) ** 2


def filter_function_variance(band: NoiseBand, D_z: float, t: float, protocol="fid",
                             spec: QuadratureSpec | None = None) -> float:
    """Phase variance ``D^2 t^2 2 int_0^inf S(omega) W(omega t) d omega``.

    Panels are geometric below ``pi/t`` and half a filter period wide above
    it.  Beyond ``omega_max`` the spectrum is in its ``omega^-2`` tail and the
    filter is replaced by its mean, which is integrated analytically.
    """
    protocol = _protocol(protocol)
    spec = spec or QuadratureSpec(abs_tol=1e-13, rel_tol=1e-8)
    t = float(t)
    if t == 0 or band.sigma == 0 or D_z == 0:
        return 0.0
    b, c = band.b, band.c
    w_osc = math.pi / t
    w_lo = 1e-4 * min(b, w_osc)
    w_max = max(50.0 * c, 2e3 / t)
    geo = np.geomspace(w_lo, w_osc, max(int(10 * math.log10(w_osc / w_lo)), 2))
    lin = np.arange(w_osc, w_max + w_osc, w_osc)
    edges = np.unique(np.concatenate(([0.0], geo, lin)))

    def f(w):
        return spectral_density(band, w) * filter_weight(w, t, protocol)

    body = integrate_panels(f, edges, order=16, spec=spec)
    top = edges[-1]
    mean_w = (2.0 if protocol == "fid" else 6.0) / t ** 2
    tail = spectral_density(band, top) * top ** 2 * mean_w / (3.0 * top ** 3)
    return D_z ** 2 * t ** 2 * 2.0 * (body + tail)


def filter_function_envelope(problem: DephasingProblem, t_grid, spec: QuadratureSpec | None = None) -> DecayCurve:
    """Gaussian envelope with the variance computed from the spectrum."""
    t = _times(np.atleast_1d(t_grid))
    var = np.array([sum(filter_function_variance(b, problem.D_z, ti, problem.protocol, spec)
                        for b in problem.model.bands) for ti in t])
    return DecayCurve(t, np.exp(-0.5 * var), "filter-function",
                      meta={"protocol": problem.protocol, "D_z": problem.D_z})


# single telegraph fluctuator

def _rtp_kernels(gamma: float, v: float, t):
    """Return ``e^-x cosh(mu x)``, ``e^-x sinh(mu x)/mu`` and ``e^-x (cosh(mu x)-1)/mu^2``.

    ``x = gamma t`` and ``mu^2 = 1 - (v/gamma)^2``.  Each branch avoids
    cancellation: small ``mu x`` uses sinhc forms, large ``mu x`` combines
    the exponentials before evaluation, and imaginary ``mu`` uses trig forms.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not v >= 0:
        raise ValueError("v must be non-negative")
    x = gamma * _times(t)
    q = 1.0 - (v / gamma) ** 2
    ex = np.exp(-x)
    if q < 0:
        m = math.sqrt(-q)
        y = x * m
        return ex * np.cos(y), ex * x * sinc(y), ex * 0.5 * x * x * sinc(0.5 * y) ** 2
    mu = math.sqrt(q)
    y = x * mu
    small = y < 1.0
    ys = np.where(small, y, 0.0)
    shc = np.where(ys < 1e-4, 1.0 + ys * ys / 6.0, np.sinh(ys) / np.where(ys == 0, 1.0, ys))
    hh = 0.5 * ys
    shc2 = np.where(hh < 1e-4, 1.0 + hh * hh / 6.0, np.sinh(hh) / np.where(hh == 0, 1.0, hh))
    C = np.where(small, ex * np.cosh(ys), 0.0)
    S = np.where(small, ex * x * shc, 0.0)
    H = np.where(small, ex * 0.5 * x * x * shc2 ** 2, 0.0)
    if np.any(~small):
        yb, xb = y[~small], x[~small]
        up, dn = np.exp(-(xb - yb)), np.exp(-(xb + yb))
        C[~small] = 0.5 * (up + dn)
        S[~small] = 0.5 * (up - dn) / mu
        H[~small] = 0.5 * up * (-np.expm1(-yb)) ** 2 / q
    return C, S, H


def phi_fid(gamma: float, v: float, t):
    """Free-induction generating function of one telegraph fluctuator.

    ``e^{-gamma t}[cosh(mu gamma t) + sinh(mu gamma t)/mu]`` with
    ``mu = sqrt(1 - v^2/gamma^2)``; oscillates when ``v > gamma``.
    """
    if v == 0:
        return _ret(np.ones(np.shape(_times(t))), t)
    C, S, _ = _rtp_kernels(gamma, v, np.atleast_1d(t))
    return _ret(C + S, t)


def phi_fid_derivative(gamma: float, v: float, t):
    """Time derivative ``-(v^2/gamma) e^{-gamma t} sinh(mu gamma t)/mu`` (1/us)."""
    _, S, _ = _rtp_kernels(gamma, v, np.atleast_1d(t))
    return _ret(-(v * v / gamma) * S, t)


def phi_echo(gamma: float, v: float, t):
    """Echo generating function of one telegraph fluctuator.

    ``e^{-gamma t}[sinh(mu gamma t)/mu + (cosh(mu gamma t) - 1)/mu^2 + 1]``.
    """
    if v == 0:
        return _ret(np.ones(np.shape(_times(t))), t)
    tt = np.atleast_1d(t)
    _, S, H = _rtp_kernels(gamma, v, tt)
    return _ret(S + H + np.exp(-gamma * _times(tt)), t)


# two effective fluctuators

def _phi(protocol: str):
    return phi_fid if protocol == "fid" else phi_echo


def product_envelope(pairs: Sequence[tuple], protocol, t_grid) -> np.ndarray:
    """Product of single-fluctuator generating functions.

    Parameters
    ----------
    pairs : sequence of (gamma, v)
        Switching rate and coupling strength ``v = D a`` per fluctuator.
    """
    protocol = _protocol(protocol)
    t = _times(np.atleast_1d(t_grid))
    out = np.ones_like(t)
    for gamma, v in pairs:
        out = out * _phi(protocol)(gamma, v, t)
    return out


def _effective_pairs(problem: DephasingProblem):
    bands = problem.model.bands
    if len(bands) != 2:
        raise ValueError(f"two-fluctuator closure needs exactly two bands, got {len(bands)}")
    effs = [effective_fluctuator(b) for b in bands]
    return effs, [(e.gamma_star, abs(problem.D_z) * e.a_star) for e in effs]


def two_fluctuator_envelope(problem: DephasingProblem, t_grid) -> DecayCurve:
    """Closed-form envelope of the two-effective-fluctuator closure."""
    _, pairs = _effective_pairs(problem)
    t = _times(np.atleast_1d(t_grid))
    vals = product_envelope(pairs, problem.protocol, t)
    meta = {"protocol": problem.protocol, "pairs": [list(p) for p in pairs]}
    return DecayCurve(t, vals, "two-fluctuator", meta=meta)


def _scalar_rhs(g1, a1, g2, a2, D, omega):
    s1, s2 = a1 * a1, a2 * a2
    omega_f = omega if callable(omega) else (lambda _t, w=float(omega): w)

    def rhs(t, y):
        w = 1j * omega_f(t)
        rho, x1, x2, x12 = y
        return np.array([
            w * rho + 1j * D * (x1 + x2),
            (w - 2 * g1) * x1 + 1j * D * (x12 + s1 * rho),
            (w - 2 * g2) * x2 + 1j * D * (x12 + s2 * rho),
            (w - 2 * (g1 + g2)) * x12 + 1j * D * (s2 * x1 + s1 * x2),
        ])

    return rhs


def solve_two_fluctuator_scalar(g1: float, a1: float, g2: float, a2: float, D: float, t_grid,
                                protocol="fid", omega: float | Callable = 0.0, rho01: complex = 1.0,
                                rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> np.ndarray:
    """Integrate the closed linear system for ``(rho01, X1, X2, X12)``.

    ``X1, X2`` are the averages of ``zeta_i rho01`` and ``X12`` that of
    ``zeta_1 zeta_2 rho01``.  For echo the coupling changes sign at ``t/2``
    for every output time ``t``, so each echo point is a separate solve.

    Returns
    -------
    ndarray, shape (len(t_grid), 4)
    """
    protocol = _protocol(protocol)
    t = _times(np.atleast_1d(t_grid))
    y0 = np.array([rho01, 0, 0, 0], dtype=complex)
    fwd = _scalar_rhs(g1, a1, g2, a2, D, omega)
    order = np.argsort(t, kind="stable")
    out = np.empty((t.size, 4), dtype=complex)
    if protocol == "fid":
        out[order] = solve(fwd, y0, t[order], t0=0.0, rtol=rtol, atol=atol)
        return out
    back = _scalar_rhs(g1, a1, g2, a2, -D, omega)
    mid = solve(fwd, y0, 0.5 * t[order], t0=0.0, rtol=rtol, atol=atol)
    for k, i in enumerate(order):
        h = 0.5 * t[i]
        if t[i] == 0:
            out[i] = mid[k]
        else:
            out[i] = solve(back, mid[k], [t[i]], t0=h, rtol=rtol, atol=atol)[0]
    return out


def ode_dephasing_envelope(problem: DephasingProblem, t_grid, omega: float | Callable = 0.0,
                           rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL):
    """Two-effective-fluctuator envelope by numerical integration.

    Returns
    -------
    curve : DecayCurve
        ``<rho01(t)>`` for ``rho01(0) = 1``; includes the precession phase.
    aux : dict
        ``X1``, ``X2`` and ``X12`` traces on the same grid.
    """
    effs, _ = _effective_pairs(problem)
    e1, e2 = effs
    t = _times(np.atleast_1d(t_grid))
    y = solve_two_fluctuator_scalar(e1.gamma_star, e1.a_star, e2.gamma_star, e2.a_star, problem.D_z, t,
                                    problem.protocol, omega, 1.0, rtol, atol)
    curve = DecayCurve(t, y[:, 0], "ode", meta={"protocol": problem.protocol, "rtol": rtol, "atol": atol})
    return curve, {"X1": y[:, 1], "X2": y[:, 2], "X12": y[:, 3]}


def _fd_residual(f, gamma, v, ts, h):
    """Five-point residual of ``y'' + 2 gamma y' + v^2 y`` at ``ts``."""
    s = np.stack([f(ts + k * h) for k in (-2, -1, 0, 1, 2)])
    d1 = (s[0] - 8 * s[1] + 8 * s[3] - s[4]) / (12 * h)
    d2 = (-s[0] + 16 * s[1] - 30 * s[2] + 16 * s[3] - s[4]) / (12 * h * h)
    return d2 + 2 * gamma * d1 + v * v * s[2]


def generating_ode_check(gamma: float, v: float, protocol, t_grid, h: float | None = None) -> float:
    """Largest residual of ``Phi'' + 2 gamma Phi' + v^2 Phi = 0``.

    For FID the residual is evaluated on ``phi_fid`` directly.  For echo, the
    path with total time ``T`` is the free solution up to ``T/2``, then a
    free solution restarted with the slope reversed.  The residual is checked
    on both halves, and the path end point must reproduce ``phi_echo(T)``.
    """
    protocol = _protocol(protocol)
    t = _times(np.atleast_1d(t_grid))
    if v == 0:
        return 0.0
    h = h or 1e-3 / max(gamma, v)

    def fid(s):
        return phi_fid(gamma, v, np.maximum(s, 0.0))

    def d(s):
        return -phi_fid_derivative(gamma, v, np.maximum(s, 0.0)) / (v * v)

    if protocol == "fid":
        ts = np.maximum(t, 2 * h)
        return float(np.max(np.abs(_fd_residual(fid, gamma, v, ts, h))))
    worst = 0.0
    for T in t[t > 4 * h]:
        half = 0.5 * T
        c_h, d_h = fid(half), d(half)

        def second(s, c_h=c_h, d_h=d_h, half=half):
            u = s - half
            return c_h * fid(u) + v * v * d_h * d(u)

        first_pts = np.linspace(2 * h, half - 2 * h, 5) if half > 4 * h else np.array([])
        second_pts = np.linspace(half + 2 * h, T, 5)
        r1 = _fd_residual(fid, gamma, v, first_pts, h) if first_pts.size else np.zeros(1)
        r2 = _fd_residual(second, gamma, v, second_pts, h)
        end = abs(second(T) - phi_echo(gamma, v, T)) * v * v
        worst = max(worst, float(np.max(np.abs(r1))), float(np.max(np.abs(r2))), end)
    return worst
