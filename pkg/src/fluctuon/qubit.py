"""Two-level density-matrix evolution under fluctuator noise.

The qubit Hamiltonian is ``H(t) = H0 + V xi(t)`` with ``H0 = -(Omega/2) sz``
and ``V = -(D_z/2) sz - (D_perp/2) s_perp``.  Basis ordering puts the
``sz = +1`` state first, so ``rho[0, 1]`` is the coherence that precesses as
``exp(i Omega t)``.

Closures provided:

* two effective telegraph fluctuators (exact for two RTPs),
* one effective fluctuator,
* Gaussian noise in the time-local second-order form
  ``d rho/dt = -i[H0, rho] - [V, [K(t), rho]]``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .curves import format_float
from .noise import (EffectiveFluctuator, NoiseBand, NoiseModel, correlation_time,
                    normalization_constant, spectral_density)
from .ode import DEFAULT_ATOL, DEFAULT_RTOL, solve
from .special import QuadratureSpec, exp_int_en_remainder, gauss_legendre, integrate

__all__ = [
    "SX", "SY", "SZ", "I2",
    "QubitCoupling",
    "FluxQubitParams",
    "DensityTrajectory",
    "BRRates",
    "build_hamiltonian",
    "lindblad",
    "validate_density_matrix",
    "propagate_two_fluctuator",
    "propagate_single_effective",
    "propagate_gaussian",
    "br_rates",
    "br_partial_rates_quadrature",
]

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class QubitCoupling:
    """Level splitting and noise couplings.

    Parameters
    ----------
    Omega : float
        Level splitting in rad/us, ``>= 0``.
    D_z, D_perp : float
        Longitudinal and transverse sensitivities to the noisy parameter.
    perp_axis : {"x", "y"}
    """

    Omega: float
    D_z: float = 0.0
    D_perp: float = 0.0
    perp_axis: str = "x"

    def __post_init__(self):
        if not (self.Omega >= 0 and math.isfinite(self.Omega)):
            raise ValueError("Omega must be finite and non-negative")
        if not (math.isfinite(self.D_z) and math.isfinite(self.D_perp)):
            raise ValueError("couplings must be finite")
        if self.perp_axis not in ("x", "y"):
            raise ValueError("perp_axis must be 'x' or 'y'")


@dataclass(frozen=True)
class FluxQubitParams:
    """Flux qubit with bias ``epsilon`` and tunnelling ``delta`` (rad/us)."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def splitting(self) -> float:
        return math.hypot(self.epsilon, self.delta)

    @property
    def dE_depsilon(self) -> float:
        return self.epsilon / self.splitting

    @property
    def dE_ddelta(self) -> float:
        return self.delta / self.splitting

    def coupling(self, parameter: str = "epsilon") -> QubitCoupling:
        """Coupling in the eigenbasis for noise entering through ``epsilon`` or ``delta``."""
        E = self.splitting
        if parameter == "epsilon":
            return QubitCoupling(E, self.epsilon / E, self.delta / E)
        if parameter == "delta":
            return QubitCoupling(E, self.delta / E, self.epsilon / E)
        raise ValueError("parameter must be 'epsilon' or 'delta'")


def build_hamiltonian(coupling: QubitCoupling):
    """Return ``(H0, V)`` as 2x2 complex arrays."""
    sp = SX if coupling.perp_axis == "x" else SY
    H0 = -0.5 * coupling.Omega * SZ
    V = -0.5 * coupling.D_z * SZ - 0.5 * coupling.D_perp * sp
    return H0, V


def lindblad(*terms):
    """Lindblad dissipator from ``(rate, L)`` pairs.

    Returns a linear map ``M -> sum r (L M L^+ - {L^+ L, M}/2)``, applied
    alike to the density matrix and the auxiliary matrices.
    """
    ops = [(float(r), np.asarray(L, dtype=complex)) for r, L in terms]

    def apply(M):
        out = np.zeros_like(M)
        for r, L in ops:
            Ld = L.conj().T
            LdL = Ld @ L
            out = out + r * (L @ M @ Ld - 0.5 * (LdL @ M + M @ LdL))
        return out

    return apply


def validate_density_matrix(rho, tol: float = 1e-10) -> np.ndarray:
    """Check shape, Hermiticity, unit trace and positivity."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError("density matrix must be 2x2")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix must be Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError("density matrix must have unit trace")
    if np.min(np.linalg.eigvalsh(rho)) < -tol:
        raise ValueError("density matrix must be positive semidefinite")
    return rho


@dataclass
class DensityTrajectory:
    """Density matrices on a time grid plus auxiliary averages."""

    t: np.ndarray
    rho: np.ndarray
    method: str
    aux: dict = field(default_factory=dict)

    def trace_error(self) -> float:
        return float(np.max(np.abs(np.trace(self.rho, axis1=1, axis2=2) - 1)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - np.conj(np.swapaxes(self.rho, 1, 2)))))

    def purity(self) -> np.ndarray:
        return np.real(np.einsum("tij,tji->t", self.rho, self.rho))

    def eigenvalues(self) -> np.ndarray:
        herm = 0.5 * (self.rho + np.conj(np.swapaxes(self.rho, 1, 2)))
        return np.linalg.eigvalsh(herm)

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        buf.write(f"# method={self.method}\n")
        buf.write("t,rho00_re,rho00_im,rho01_re,rho01_im,rho11_re,rho11_im,purity\n")
        pur = self.purity()
        for i, t in enumerate(self.t):
            r = self.rho[i]
            row = [t, r[0, 0].real, r[0, 0].imag, r[0, 1].real, r[0, 1].imag, r[1, 1].real, r[1, 1].imag, pur[i]]
            buf.write(",".join(format_float(x) for x in row) + "\n")
        return buf.getvalue()


def _as_function(M):
    if callable(M):
        return lambda t: np.asarray(M(t), dtype=complex)
    arr = np.asarray(M, dtype=complex)
    return lambda t: arr


def _comm(A, B):
    return A @ B - B @ A


def _grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("time grid must be a non-empty 1-D array")
    if np.any(t < 0) or np.any(np.diff(t) < 0):
        raise ValueError("time grid must be non-negative and non-decreasing")
    return t


def propagate_two_fluctuator(H0, V, eff1: EffectiveFluctuator, eff2: EffectiveFluctuator, rho0, t_grid,
                             L: Callable | None = None, rtol: float = DEFAULT_RTOL,
                             atol: float = DEFAULT_ATOL) -> DensityTrajectory:
    """Evolve ``<rho>`` with two effective telegraph fluctuators.

    State blocks are ``rho``, ``X1 = <z1 rho>``, ``X2 = <z2 rho>`` and
    ``X12 = <z1 z2 rho>``; all auxiliaries start at zero.

    Parameters
    ----------
    H0, V : ndarray or callable
        Constant 2x2 matrices or functions of time.
    eff1, eff2 : EffectiveFluctuator
    rho0 : array_like
        Initial density matrix.
    t_grid : array_like
    L : callable, optional
        Bath superoperator; zero by default.
    """
    rho0 = validate_density_matrix(rho0)
    t = _grid(t_grid)
    h0, v = _as_function(H0), _as_function(V)
    g1, g2 = eff1.gamma_star, eff2.gamma_star
    s1, s2 = eff1.a_star ** 2, eff2.a_star ** 2
    bath = L or (lambda M: 0.0)

    def rhs(tt, y):
        rho, x1, x2, x12 = y.reshape(4, 2, 2)
        H, Vt = h0(tt), v(tt)
        return np.stack([
            -1j * _comm(H, rho) + bath(rho) - 1j * _comm(Vt, x1 + x2),
            -2 * g1 * x1 - 1j * _comm(H, x1) + bath(x1) - 1j * s1 * _comm(Vt, rho) - 1j * _comm(Vt, x12),
            -2 * g2 * x2 - 1j * _comm(H, x2) + bath(x2) - 1j * s2 * _comm(Vt, rho) - 1j * _comm(Vt, x12),
            -2 * (g1 + g2) * x12 - 1j * _comm(H, x12) + bath(x12)
            - 1j * s2 * _comm(Vt, x1) - 1j * s1 * _comm(Vt, x2),
        ]).ravel()

    y0 = np.zeros((4, 2, 2), dtype=complex)
    y0[0] = rho0
    ys = solve(rhs, y0.ravel(), t, t0=0.0, rtol=rtol, atol=atol).reshape(t.size, 4, 2, 2)
    return DensityTrajectory(t, ys[:, 0], "two-fluctuator", {"X1": ys[:, 1], "X2": ys[:, 2], "X12": ys[:, 3]})


def propagate_single_effective(H0, V, eff: EffectiveFluctuator, rho0, t_grid, L: Callable | None = None,
                               rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> DensityTrajectory:
    """Evolve ``<rho>`` with one effective telegraph fluctuator (blocks ``rho``, ``X``)."""
    rho0 = validate_density_matrix(rho0)
    t = _grid(t_grid)
    h0, v = _as_function(H0), _as_function(V)
    g, s = eff.gamma_star, eff.a_star ** 2
    bath = L or (lambda M: 0.0)

    def rhs(tt, y):
        rho, x = y.reshape(2, 2, 2)
        H, Vt = h0(tt), v(tt)
        return np.stack([
            -1j * _comm(H, rho) + bath(rho) - 1j * _comm(Vt, x),
            -2 * g * x - 1j * _comm(H, x) + bath(x) - 1j * s * _comm(Vt, rho),
        ]).ravel()

    y0 = np.zeros((2, 2, 2), dtype=complex)
    y0[0] = rho0
    ys = solve(rhs, y0.ravel(), t, t0=0.0, rtol=rtol, atol=atol).reshape(t.size, 2, 2, 2)
    return DensityTrajectory(t, ys[:, 0], "single-effective", {"X": ys[:, 1]})


class _MemoryKernel:
    """``G(t, w) = int_0^t chi(s) exp(-i w s) ds`` for a noise model.

    ``w = 0`` uses the exact cumulative integral of ``chi``.  Other
    frequencies use the rate representation
    ``chi(s) = sigma^2 int P(gamma) exp(-2 gamma s) d gamma`` with cached
    Gauss-Legendre nodes in ``ln gamma``.
    """

    def __init__(self, model: NoiseModel, panels_per_efold: int = 3, order: int = 20):
        self.model = model
        x, w = gauss_legendre(order)
        nodes, weights = [], []
        for band in model.bands:
            lo, hi = math.log(band.gamma_lo), math.log(band.gamma_hi)
            edges = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) * panels_per_efold)) + 1))
            mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
            u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
            wu = (half[:, None] * w[None, :]).ravel()
            g = np.exp(u)
            A = normalization_constant(band)
            nodes.append(g)
            weights.append(band.sigma ** 2 * A * g ** (1 - band.n) * wu)
        self.gamma = np.concatenate(nodes)
        self.weight = np.concatenate(weights)

    def cumulative(self, t: float) -> float:
        total = 0.0
        for band in self.model.bands:
            n, A = band.n, normalization_constant(band)
            for k, gam, sgn in ((band.b, band.gamma_lo, 1.0), (band.c, band.gamma_hi, -1.0)):
                # int_0^t E_n(k s) ds = (1/n - E_{n+1}(k t)) / k
                total -= sgn * band.sigma ** 2 * A * exp_int_en_remainder(n + 1, k * t, 1) / (k * gam ** (n - 1))
        return total

    def __call__(self, t: float, w: float) -> complex:
        if w == 0:
            return complex(self.cumulative(t))
        z = 2 * self.gamma + 1j * w
        return complex(np.sum(self.weight * (-np.expm1(-z * t)) / z))


def propagate_gaussian(H0, V, model: NoiseModel, rho0, t_grid, rtol: float = DEFAULT_RTOL,
                       atol: float = DEFAULT_ATOL) -> DensityTrajectory:
    """Gaussian-closure master equation for constant ``H0`` and ``V``.

    ``K(t) = int_0^t chi(s) exp(-i H0 s) V exp(i H0 s) ds`` is assembled in
    the eigenbasis of ``H0``, where each element needs ``G(t, E_j - E_k)``.
    Time-dependent ``H0`` would need a time-ordered propagator and is not
    supported.
    """
    if callable(H0) or callable(V):
        raise TypeError("propagate_gaussian supports constant H0 and V only")
    rho0 = validate_density_matrix(rho0)
    t = _grid(t_grid)
    H0 = np.asarray(H0, dtype=complex)
    V = np.asarray(V, dtype=complex)
    E, U = np.linalg.eigh(H0)
    Ve = U.conj().T @ V @ U
    gap = E[:, None] - E[None, :]
    kernel = _MemoryKernel(model)
    active = np.abs(Ve) > 0

    def K(tt):
        Ke = np.zeros((2, 2), dtype=complex)
        for j in range(2):
            for k in range(2):
                if active[j, k]:
                    Ke[j, k] = Ve[j, k] * kernel(tt, float(gap[j, k]))
        return U @ Ke @ U.conj().T

    def rhs(tt, y):
        rho = y.reshape(2, 2)
        return (-1j * _comm(H0, rho) - _comm(V, _comm(K(tt), rho))).ravel()

    ys = solve(rhs, rho0.ravel(), t, t0=0.0, rtol=rtol, atol=atol).reshape(t.size, 2, 2)
    return DensityTrajectory(t, ys, "gaussian")


@dataclass(frozen=True)
class BRRates:
    """Bloch-Redfield rates in 1/us and their validity check."""

    gamma1: float
    gamma_phi: float
    gamma2: float
    tau_c: float
    valid: bool

    def to_dict(self) -> dict:
        return {"gamma1": self.gamma1, "gamma_phi": self.gamma_phi, "gamma2": self.gamma2,
                "tau_c": self.tau_c, "gamma1_tau": self.gamma1 * self.tau_c,
                "gamma2_tau": self.gamma2 * self.tau_c, "valid": self.valid}


def _check_fast(band: NoiseBand):
    if band.n != 2:
        raise ValueError("Bloch-Redfield rates are defined for the n=2 band")


def br_rates(coupling: QubitCoupling, fast_band: NoiseBand) -> BRRates:
    """Relaxation and dephasing rates from the fast band's spectrum.

    ``Gamma1 = pi D_perp^2 S_2(Omega)``, ``Gamma_phi = pi D_z^2 S_2(0)`` and
    ``Gamma2 = Gamma1/2 + Gamma_phi``.  The rates are flagged valid when both
    ``Gamma1 tau`` and ``Gamma2 tau`` are below 0.1, with ``tau`` the band's
    correlation time.
    """
    _check_fast(fast_band)
    g1 = math.pi * coupling.D_perp ** 2 * spectral_density(fast_band, coupling.Omega)
    gphi = math.pi * coupling.D_z ** 2 * spectral_density(fast_band, 0.0)
    g2 = 0.5 * g1 + gphi
    tau = correlation_time(fast_band)
    return BRRates(g1, gphi, g2, tau, bool(g1 * tau < 0.1 and g2 * tau < 0.1))


def br_partial_rates_quadrature(coupling: QubitCoupling, fast_band: NoiseBand, spec: QuadratureSpec | None = None,
                                kernel: str = "normalized"):
    """``(Gamma1, Gamma_phi)`` as integrals over the switching-rate distribution.

    Parameters
    ----------
    kernel : {"normalized", "unnormalized"}
        ``"normalized"`` uses the Lorentzian ``2 sigma^2 gamma / (4 gamma^2 + Omega^2)``
        and agrees with :func:`br_rates`.  ``"unnormalized"`` drops the factor 2 and
        gives half of ``Gamma1``.
    """
    _check_fast(fast_band)
    if kernel not in ("normalized", "unnormalized"):
        raise ValueError("kernel must be 'normalized' or 'unnormalized'")
    spec = spec or QuadratureSpec(abs_tol=1e-15, rel_tol=1e-12)
    A = normalization_constant(fast_band)
    s2 = fast_band.sigma ** 2
    W = coupling.Omega
    pref = 2.0 if kernel == "normalized" else 1.0
    lo, hi = math.log(fast_band.gamma_lo), math.log(fast_band.gamma_hi)

    def rel(u):
        g = math.exp(u)
        return pref * s2 * g / (4 * g * g + W * W) * A / g

    def deph(u):
        g = math.exp(u)
        return s2 / (2 * g) * A / g

    g1 = coupling.D_perp ** 2 * integrate(rel, lo, hi, spec)
    gphi = coupling.D_z ** 2 * integrate(deph, lo, hi, spec)
    return g1, gphi
