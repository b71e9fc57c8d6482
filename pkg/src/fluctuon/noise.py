"""Fluctuator-band noise models.

A band is a continuum of random-telegraph fluctuators whose switching rates
follow ``P_n(gamma) = A_n / gamma**n`` on ``[gamma_lo, gamma_hi]``.  All
quantities use microseconds and inverse microseconds; ``omega`` is in
rad/us.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .special import QuadratureSpec, exp_int_en, integrate

__all__ = [
    "NoiseBand",
    "NoiseModel",
    "EffectiveFluctuator",
    "normalization_constant",
    "rate_pdf",
    "rate_quantile",
    "correlation",
    "correlation_total",
    "spectral_density",
    "spectral_density_total",
    "spectral_density_quadrature",
    "spectral_ratio",
    "correlation_time",
    "effective_fluctuator",
    "band_from_dict",
    "model_from_dict",
    "RATE_UNITS",
]

# conversion factors to 1/us
RATE_UNITS = {
    "1/us": 1.0,
    "us^-1": 1.0,
    "MHz": 1.0,
    "1/s": 1e-6,
    "s^-1": 1e-6,
    "Hz": 1e-6,
}

# below this lag the correlation is returned as its analytic value at 0
_TAU_ZERO = 1e-14


@dataclass(frozen=True)
class NoiseBand:
    """One family of fluctuators with ``P_n(gamma) ~ gamma**-n``.

    Parameters
    ----------
    n : int
        Exponent, ``n >= 1``.  ``n = 1`` yields 1/f noise.
    sigma : float
        Amplitude; the band's variance is ``sigma**2``.
    gamma_lo, gamma_hi : float
        Switching-rate window in 1/us, ``0 < gamma_lo < gamma_hi``.
    """

    n: int
    sigma: float
    gamma_lo: float
    gamma_hi: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"band exponent must be an integer >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        for name in ("sigma", "gamma_lo", "gamma_hi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0 < self.gamma_lo < self.gamma_hi:
            raise ValueError("band requires 0 < gamma_lo < gamma_hi")

    @property
    def b(self) -> float:
        return 2.0 * self.gamma_lo

    @property
    def c(self) -> float:
        return 2.0 * self.gamma_hi

    def scaled(self, sigma: float) -> "NoiseBand":
        """Copy with a different amplitude."""
        return NoiseBand(self.n, sigma, self.gamma_lo, self.gamma_hi)

    def to_dict(self) -> dict:
        return {"n": self.n, "sigma": self.sigma, "gamma_lo": self.gamma_lo,
                "gamma_hi": self.gamma_hi, "units": "1/us"}


@dataclass(frozen=True)
class NoiseModel:
    """Independent bands whose correlations and spectra add.

    Parameters
    ----------
    bands : sequence of NoiseBand
    require_continuity : bool
        Enforce ``bands[i].gamma_hi == bands[i+1].gamma_lo``.
    """

    bands: tuple = field(default_factory=tuple)
    require_continuity: bool = False

    def __post_init__(self):
        bands = tuple(self.bands)
        object.__setattr__(self, "bands", bands)
        if not bands:
            raise ValueError("a noise model needs at least one band")
        if not all(isinstance(b, NoiseBand) for b in bands):
            raise TypeError("bands must be NoiseBand instances")
        if self.require_continuity:
            for lo, hi in zip(bands[:-1], bands[1:]):
                if not math.isclose(lo.gamma_hi, hi.gamma_lo, rel_tol=1e-12):
                    raise ValueError("adjacent bands must share their rate cutoff")

    @classmethod
    def two_band(cls, sigma1, sigma2, gamma_m, gamma_c, gamma_0) -> "NoiseModel":
        """Slow 1/f band on ``[gamma_m, gamma_c]`` and fast n=2 band on ``[gamma_c, gamma_0]``."""
        return cls((NoiseBand(1, sigma1, gamma_m, gamma_c), NoiseBand(2, sigma2, gamma_c, gamma_0)),
                   require_continuity=True)

    def band(self, n: int) -> NoiseBand:
        """The unique band with exponent ``n``."""
        found = [b for b in self.bands if b.n == n]
        if len(found) != 1:
            raise ValueError(f"model has {len(found)} bands with n={n}, expected exactly one")
        return found[0]

    @property
    def gamma_m(self) -> float:
        return self.bands[0].gamma_lo

    @property
    def gamma_c(self) -> float:
        return self.bands[0].gamma_hi

    @property
    def gamma_0(self) -> float:
        return self.bands[-1].gamma_hi

    @property
    def variance(self) -> float:
        return sum(b.sigma ** 2 for b in self.bands)

    def to_dict(self) -> dict:
        return {"bands": [b.to_dict() for b in self.bands]}


@dataclass(frozen=True)
class EffectiveFluctuator:
    """Single telegraph process standing in for a whole band.

    ``a_star**2`` equals the band variance and ``gamma_star`` its initial
    correlation decay rate.
    """

    a_star: float
    gamma_star: float

    def __post_init__(self):
        if not (self.a_star >= 0 and math.isfinite(self.a_star)):
            raise ValueError("a_star must be finite and non-negative")
        if not (self.gamma_star > 0 and math.isfinite(self.gamma_star)):
            raise ValueError("gamma_star must be positive")


def normalization_constant(band: NoiseBand) -> float:
    """``A_n`` such that ``P_n`` integrates to one over the band."""
    lo, hi, n = band.gamma_lo, band.gamma_hi, band.n
    if n == 1:
        return 1.0 / math.log(hi / lo)
    return (n - 1) * lo ** (n - 1) / (-math.expm1((n - 1) * math.log(lo / hi)))


def rate_pdf(band: NoiseBand, gamma):
    """Probability density of the switching rate."""
    g = np.asarray(gamma, dtype=float)
    inside = (g >= band.gamma_lo) & (g <= band.gamma_hi)
    safe = np.where(inside, g, 1.0)
    out = np.where(inside, normalization_constant(band) * safe ** (-float(band.n)), 0.0)
    return out if np.ndim(gamma) else float(out)


def rate_quantile(band: NoiseBand, u):
    """Inverse CDF of ``P_n``; ``u`` uniform on [0, 1]."""
    u = np.asarray(u, dtype=float)
    lo, hi, n = band.gamma_lo, band.gamma_hi, band.n
    if n == 1:
        return lo * (hi / lo) ** u
    p = 1.0 - n
    # F(g) = (lo^p - g^p) / (lo^p - hi^p); solved in ratio form for range
    r = (hi / lo) ** p
    return lo * (1.0 - u * (1.0 - r)) ** (1.0 / p)


def _chi(band: NoiseBand, tau: np.ndarray) -> np.ndarray:
    n, lo, hi = band.n, band.gamma_lo, band.gamma_hi
    A = normalization_constant(band)
    t = np.maximum(tau, _TAU_ZERO)
    val = band.sigma ** 2 * A * (exp_int_en(n, 2 * lo * t) / lo ** (n - 1)
                                 - exp_int_en(n, 2 * hi * t) / hi ** (n - 1))
    return np.where(tau < _TAU_ZERO, band.sigma ** 2, val)


def correlation(band: NoiseBand, tau):
    """Correlation function ``chi_n(tau)`` of one band.

    Parameters
    ----------
    band : NoiseBand
    tau : float or array_like
        Non-negative lag in us.
    """
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0):
        raise ValueError("lag must be non-negative")
    out = _chi(band, np.atleast_1d(t)).reshape(t.shape)
    return out if np.ndim(tau) else float(out)


def correlation_total(model: NoiseModel, tau):
    """Sum of band correlations."""
    return sum(correlation(b, tau) for b in model.bands)


def _atan_diff(b, c, w):
    """``arctan(w/b) - arctan(w/c)`` without cancellation for ``w >> c`` or ``b ~ c``."""
    return np.arctan(w * (c - b) / (b * c + w * w))


def _log_diff(b, c, w):
    """``ln(1 + w^2/b^2) - ln(1 + w^2/c^2)`` in one log1p."""
    return np.log1p(w * w * (c - b) * (c + b) / (b * b * (c * c + w * w)))


def _pow_diff(b, c, m):
    """``b^-m - c^-m`` accurate when ``b`` and ``c`` are close."""
    return b ** (-m) * -math.expm1(m * math.log(b / c))


def _plateau_integral(n, b, c, w):
    """``J(w) = int_b^c u^(1-n) / (u^2 + w^2) du`` for ``w > 0`` (array)."""
    if n == 1:
        return _atan_diff(b, c, w) / w
    if n == 2:
        return _log_diff(b, c, w) / (2 * w * w)
    out = np.empty_like(w)
    low = w < 0.5 * b
    if np.any(low):
        # power series in (w/u)^2, converges geometrically for w < b
        wl = w[low]
        acc = np.zeros_like(wl)
        for j in range(80):
            m = n + 2 * j
            acc += (-1) ** j * (wl / b) ** (2 * j) * b ** (-n) * -math.expm1(m * math.log(b / c)) / m
        out[low] = acc
    hi = ~low
    if np.any(hi):
        wh = w[hi]
        K = (n - 1) // 2 if n % 2 else (n - 2) // 2
        acc = np.zeros_like(wh)
        for k in range(1, K + 1):
            p = n - 2 * k
            acc += (-1) ** (k + 1) * _pow_diff(b, c, p) / (p * wh ** (2 * k))
        if n % 2:
            tail = _atan_diff(b, c, wh) / wh
        else:
            tail = _log_diff(b, c, wh) / (2 * wh * wh)
        out[hi] = acc + (-1) ** K * tail / wh ** (2 * K)
    return out


def spectral_density(band: NoiseBand, omega):
    """Closed-form spectral density ``S_n(omega)``.

    Normalised so that ``2 * int_0^inf S_n d omega = sigma**2``.

    Parameters
    ----------
    band : NoiseBand
    omega : float or array_like
        Angular frequency in rad/us, non-negative.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("omega must be non-negative")
    wf = np.atleast_1d(w).astype(float)
    n, b, c = band.n, band.b, band.c
    C = band.sigma ** 2 * normalization_constant(band) * 2.0 ** (n - 1) / math.pi
    out = np.empty_like(wf)
    zero = wf == 0
    out[zero] = C * _pow_diff(b, c, n) / n
    if np.any(~zero):
        out[~zero] = C * _plateau_integral(n, b, c, wf[~zero])
    out = out.reshape(w.shape)
    return out if np.ndim(omega) else float(out)


def spectral_density_total(model: NoiseModel, omega):
    return sum(spectral_density(b, omega) for b in model.bands)


def spectral_density_quadrature(band: NoiseBand, omega: float, spec: QuadratureSpec | None = None) -> float:
    """Spectral density as the cosine transform of ``chi_n`` by quadrature.

    ``S(omega) = (1/pi) int_0^inf chi(tau) cos(omega tau) d tau``.  The lag
    axis is cut at ``tau_a``: a fixed number of oscillation periods, or the
    point where the slowest exponential has died out.  The remainder beyond
    ``tau_a`` is done analytically in ``tau`` for every rate and then
    integrated over the rate distribution.
    """
    w = float(omega)
    if w < 0:
        raise ValueError("omega must be non-negative")
    b, c, n = band.b, band.c, band.n
    A = normalization_constant(band)
    s2 = band.sigma ** 2
    if s2 == 0:
        return 0.0
    spec = spec or QuadratureSpec(abs_tol=1e-14 * s2, rel_tol=1e-9, max_subdivisions=5000)
    tau_decay = 60.0 / b
    tau_a = tau_decay if w == 0 else min(tau_decay, 40 * 2 * math.pi / w)
    pts = list(np.geomspace(1e-3 / c, tau_a, max(int(math.log2(tau_a * c * 1e3)) + 1, 2))[:-1])
    if w > 0:
        pts += list(np.arange(1, int(tau_a * w / math.pi)) * math.pi / w)
    pts = sorted(set(p for p in pts if 0 < p < tau_a))

    # a slow band is nearly flat over tau_a; subtracting its end value avoids
    # cancelling a large constant against many oscillations
    base = float(_chi(band, np.array([tau_a]))[0]) if w > 0 else 0.0

    def f(t):
        return (_chi(band, np.array([t]))[0] - base) * math.cos(w * t)

    main = integrate(f, 0.0, tau_a, spec, points=pts)
    if w > 0:
        main += base * math.sin(w * tau_a) / w

    if w == 0:
        # exact: int_{tau_a}^inf E_n(k tau) d tau = E_{n+1}(k tau_a) / k
        tail = s2 * A * (exp_int_en(n + 1, b * tau_a) / (b * band.gamma_lo ** (n - 1))
                         - exp_int_en(n + 1, c * tau_a) / (c * band.gamma_hi ** (n - 1)))
    else:
        cw, sw = math.cos(w * tau_a), math.sin(w * tau_a)

        def g(u):
            gam = math.exp(u)
            k = 2 * gam
            lap = math.exp(-k * tau_a) * (k * cw - w * sw) / (k * k + w * w)
            return A * gam ** (1 - n) * lap

        tail = s2 * integrate(g, math.log(band.gamma_lo), math.log(band.gamma_hi),
                              QuadratureSpec(abs_tol=1e-16, rel_tol=1e-10))
    return (main + tail) / math.pi


def spectral_ratio(model: NoiseModel, omega):
    """``S_2(omega) / S_1(omega)`` for a model with one n=1 and one n=2 band."""
    try:
        slow, fast = model.band(1), model.band(2)
    except ValueError as exc:
        raise ValueError("spectral_ratio needs exactly one n=1 and one n=2 band") from exc
    return spectral_density(fast, omega) / spectral_density(slow, omega)


def correlation_time(band: NoiseBand) -> float:
    """``tau_n = (1/chi(0)) int_0^inf chi_n d tau`` in us."""
    b, c, n = band.b, band.c, band.n
    r = b / c
    if n == 1:
        return (1 - r) / (b * math.log(1 / r))
    return (n - 1) * (-math.expm1(n * math.log(r))) / (n * b * (-math.expm1((n - 1) * math.log(r))))


def effective_fluctuator(band: NoiseBand) -> EffectiveFluctuator:
    """Reduce a band to one telegraph process.

    ``a* = sigma`` and ``gamma* = -(1/2) d ln chi / d tau`` at zero lag,
    which equals the mean switching rate under ``P_n``.
    """
    lo, hi, n = band.gamma_lo, band.gamma_hi, band.n
    A = normalization_constant(band)
    if n == 1:
        g = (hi - lo) / math.log(hi / lo)
    elif n == 2:
        g = A * math.log(hi / lo)
    else:
        g = A * (lo ** (2 - n) - hi ** (2 - n)) / (n - 2)
    return EffectiveFluctuator(band.sigma, g)


def band_from_dict(d: dict) -> NoiseBand:
    """Build a band from a config mapping with optional ``units`` for the rates."""
    try:
        units = d.get("units", "1/us")
        if units not in RATE_UNITS:
            raise ConfigError(f"unknown rate units {units!r}; use one of {sorted(RATE_UNITS)}")
        scale = RATE_UNITS[units]
        return NoiseBand(int(d["n"]), float(d["sigma"]), float(d["gamma_lo"]) * scale,
                         float(d["gamma_hi"]) * scale)
    except KeyError as exc:
        raise ConfigError(f"band is missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid band {d!r}: {exc}") from None


def model_from_dict(d) -> NoiseModel:
    """Build a model from ``{"bands": [...]}`` or a bare list of bands."""
    bands: Iterable = d.get("bands", []) if isinstance(d, dict) else d
    bands = [band_from_dict(b) for b in bands]
    if not bands:
        raise ConfigError("noise model has no bands")
    cont = bool(d.get("require_continuity", False)) if isinstance(d, dict) else False
    try:
        return NoiseModel(tuple(bands), require_continuity=cont)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
