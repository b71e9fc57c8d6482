"""Derived dephasing rates, parameter presets and decay-curve fitting."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, minimize

from .curves import format_float
from .dephasing import phi_echo, phi_fid, _protocol
from .errors import ConvergenceError, DatasetError
from .noise import NoiseModel

__all__ = [
    "ExperimentDataset",
    "FitResult",
    "SamplePreset",
    "echo_rate_gaussian",
    "v1_from_echo_rate",
    "fid_rate_gaussian",
    "gamma2_from_gamma0",
    "gamma0_from_gamma2",
    "fit_fast_fluctuator",
    "sample_presets",
    "get_preset",
    "load_dataset",
    "save_dataset",
    "synthetic_dataset",
]


def echo_rate_gaussian(A_lambda: float, dE_dlambda: float) -> float:
    """Gaussian echo rate ``sqrt(A ln 2) |dE/dlambda|`` of 1/f noise with amplitude ``A``."""
    if A_lambda < 0:
        raise ValueError("1/f amplitude must be non-negative")
    return math.sqrt(A_lambda * math.log(2.0)) * abs(dE_dlambda)


def v1_from_echo_rate(Gamma_phiE: float, gamma_m: float, gamma_c: float) -> float:
    """Slow-fluctuator coupling ``Gamma sqrt(2 ln(gamma_c/gamma_m) / ln 2)``."""
    if Gamma_phiE < 0:
        raise ValueError("rate must be non-negative")
    if not 0 < gamma_m < gamma_c:
        raise ValueError("need 0 < gamma_m < gamma_c")
    return Gamma_phiE * math.sqrt(2.0 * math.log(gamma_c / gamma_m) / math.log(2.0))


def fid_rate_gaussian(v1: float, v2: float) -> float:
    """Gaussian FID rate ``sqrt((v1^2 + v2^2) / 2)``."""
    if v1 < 0 or v2 < 0:
        raise ValueError("couplings must be non-negative")
    return math.sqrt(0.5 * (v1 * v1 + v2 * v2))


def gamma2_from_gamma0(gamma_c: float, gamma_0: float) -> float:
    """Effective rate of the fast band ``gamma_c ln(gamma_0/gamma_c) / (1 - gamma_c/gamma_0)``."""
    if not gamma_0 > gamma_c > 0:
        raise ValueError("need gamma_0 > gamma_c > 0")
    r = gamma_c / gamma_0
    return gamma_c * math.log(1 / r) / (1 - r)


def gamma0_from_gamma2(gamma_c: float, gamma_2: float) -> float:
    """Inverse of :func:`gamma2_from_gamma0`; requires ``gamma_2 > gamma_c``."""
    if not gamma_2 > gamma_c > 0:
        raise ValueError("need gamma_2 > gamma_c > 0")
    f = lambda g0: gamma2_from_gamma0(gamma_c, g0) - gamma_2
    hi = 2 * gamma_c
    while f(hi) < 0:
        hi *= 2
    return brentq(f, gamma_c * (1 + 1e-12), hi, xtol=1e-14 * hi, rtol=1e-14)


@dataclass(frozen=True)
class SamplePreset:
    """Reference parameter set, rates in 1/us and couplings in rad/us.

    ``gamma_0`` is ``None`` where only the effective rate ``gamma2`` was
    given; :attr:`fast_cutoff` then inverts the effective-rate relation.
    """

    name: str
    label: str
    gamma1: float
    v1: float
    gamma2: float
    v2: float
    gamma_phi_e: float
    gamma_m: float = 5e-7
    gamma_c: float = 0.5
    gamma_0: float | None = None
    decay: str = "gaussian"

    @property
    def fast_cutoff(self) -> float:
        if self.gamma_0 is not None:
            return self.gamma_0
        return gamma0_from_gamma2(self.gamma_c, self.gamma2)

    def noise_model(self, D: float = 1.0) -> NoiseModel:
        """Two-band model with amplitudes ``v / D``."""
        return NoiseModel.two_band(self.v1 / D, self.v2 / D, self.gamma_m, self.gamma_c, self.fast_cutoff)

    def pairs(self):
        return [(self.gamma1, self.v1), (self.gamma2, self.v2)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fast_cutoff"] = self.fast_cutoff
        return d


_PRESETS = (
    SamplePreset("sample_a", "flux noise, sample A", gamma1=0.04, v1=4.92, gamma2=1.2, v2=2.72,
                 gamma_phi_e=0.8, gamma_m=5e-7, gamma_c=0.5, gamma_0=4.25),
    SamplePreset("sample_b", "flux noise, sample B", gamma1=0.04, v1=21.0, gamma2=5.75, v2=12.45,
                 gamma_phi_e=3.75),
    SamplePreset("bias_current", "bias-current noise, sample A", gamma1=0.04, v1=10.5, gamma2=2.0, v2=50.0,
                 gamma_phi_e=1.7, decay="exponential"),
)


def sample_presets() -> list[SamplePreset]:
    return list(_PRESETS)


def get_preset(name: str) -> SamplePreset:
    key = name.lower().replace("-", "_").replace(" ", "_")
    aliases = {"samplea": "sample_a", "sampleb": "sample_b", "a": "sample_a", "b": "sample_b",
               "bias": "bias_current"}
    key = aliases.get(key, key)
    for p in _PRESETS:
        if p.name == key:
            return p
    raise KeyError(f"unknown preset {name!r}; available: {[p.name for p in _PRESETS]}")


@dataclass(frozen=True)
class ExperimentDataset:
    """Measured envelope samples ``(t, y[, sigma])`` with ``t`` in us."""

    t: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None
    protocol: str = "echo"
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "protocol", _protocol(self.protocol))
        if t.ndim != 1 or t.shape != y.shape:
            raise DatasetError("t and envelope must be 1-D arrays of equal length")
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != t.shape or np.any(s <= 0):
                raise DatasetError("sigma must be positive and match t")
            object.__setattr__(self, "sigma", s)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise DatasetError("dataset contains non-finite values")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise DatasetError("t must be strictly increasing")
        if t.size and t[0] == 0:
            tol = 3 * self.sigma[0] if self.sigma is not None else 0.1
            if abs(y[0] - 1) > tol:
                raise DatasetError(f"envelope at t=0 is {y[0]}, expected 1 within {tol}")

    def __len__(self):
        return int(self.t.size)


def load_dataset(path, protocol: str = "echo", label: str | None = None) -> ExperimentDataset:
    """Read ``t_us, envelope[, sigma]`` rows from a CSV file.

    Lines starting with ``#`` are comments; ``# protocol=...`` and
    ``# label=...`` override the arguments.  A non-numeric first row is taken
    as a header.
    """
    path = Path(path)
    text = path.read_text()
    rows = []
    meta = {}
    first_data = True
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or not "".join(row).strip():
            continue
        if row[0].lstrip().startswith("#"):
            body = ",".join(row).lstrip()[1:].strip()
            if "=" in body:
                k, _, v = body.partition("=")
                meta[k.strip()] = v.strip()
            continue
        try:
            vals = [float(x) for x in row]
        except ValueError:
            if first_data:
                first_data = False
                continue
            raise DatasetError(f"{path}:{lineno}: could not parse row {row!r}") from None
        first_data = False
        if len(vals) not in (2, 3):
            raise DatasetError(f"{path}:{lineno}: expected 2 or 3 columns, got {len(vals)}")
        if rows and len(vals) != len(rows[0]):
            raise DatasetError(f"{path}:{lineno}: inconsistent column count")
        rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    data = np.array(rows)
    sigma = data[:, 2] if data.shape[1] == 3 else None
    return ExperimentDataset(data[:, 0], data[:, 1], sigma, meta.get("protocol", protocol),
                             meta.get("label", label or path.stem))


def save_dataset(ds: ExperimentDataset, path) -> None:
    """Write a dataset with full double precision."""
    lines = [f"# protocol={ds.protocol}", f"# label={ds.label}"]
    cols = "t_us,envelope" + (",sigma" if ds.sigma is not None else "")
    lines.append(cols)
    for i in range(len(ds)):
        vals = [ds.t[i], ds.y[i]] + ([ds.sigma[i]] if ds.sigma is not None else [])
        lines.append(",".join(format_float(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def synthetic_dataset(preset: SamplePreset, protocol: str, t_grid, noise: float = 0.0, seed: int = 0,
                      gamma_2: float | None = None) -> ExperimentDataset:
    """Two-fluctuator curve of a preset, optionally with additive Gaussian noise.

    The fast rate defaults to the one implied by the preset's cutoffs.
    """
    protocol = _protocol(protocol)
    phi = phi_fid if protocol == "fid" else phi_echo
    t = np.asarray(t_grid, dtype=float)
    g2 = gamma_2 if gamma_2 is not None else gamma2_from_gamma0(preset.gamma_c, preset.fast_cutoff)
    y = phi(preset.gamma1, preset.v1, t) * phi(g2, preset.v2, t)
    sigma = None
    if noise > 0:
        rng = np.random.default_rng(seed)
        y = y + noise * rng.standard_normal(t.size)
        y[t == 0] = 1.0
        sigma = np.full(t.size, noise)
    return ExperimentDataset(t, y, sigma, protocol, f"synthetic {preset.name}")


@dataclass
class FitResult:
    """Best-fit fast-fluctuator parameters."""

    v2: float
    gamma_0: float
    gamma_2: float
    sse: float
    iterations: int
    converged: bool = True
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"v2": self.v2, "gamma_0": self.gamma_0, "gamma_2": self.gamma_2, "sse": self.sse,
                "iterations": self.iterations, "converged": self.converged}

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


def fit_fast_fluctuator(dataset: ExperimentDataset, gamma1: float, v1: float, gamma_c: float,
                        v2_bounds=(0.0, 100.0), gamma0_bounds=None, grid: int = 24,
                        max_iter: int = 4000) -> FitResult:
    """Least-squares fit of ``(v2, gamma_0)`` with the slow fluctuator fixed.

    The model is ``Phi(gamma1, v1) Phi(gamma2(gamma_0), v2)`` for the
    dataset's protocol.  Parameters are mapped to ``u1 = ln v2`` and
    ``u2 = ln(gamma_0 - gamma_c)``.  A coarse grid over the box picks the
    start, then Nelder-Mead refines it until the simplex is smaller than
    ``1e-6`` of the box.

    Raises
    ------
    ValueError
        Fewer than six samples.
    ConvergenceError
        Iteration limit reached.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if n < 6:
        raise ValueError(f"need at least 6 samples, got {n}")
    if gamma0_bounds is None:
        gamma0_bounds = (gamma_c * (1 + 1e-6), gamma_c * 1e6)
    v_lo, v_hi = map(float, v2_bounds)
    g_lo, g_hi = map(float, gamma0_bounds)
    if not (0 <= v_lo < v_hi and gamma_c < g_lo < g_hi):
        raise ValueError("invalid bounds")
    phi = phi_fid if dataset.protocol == "fid" else phi_echo
    t, y = dataset.t, dataset.y
    w = 1.0 / dataset.sigma ** 2 if dataset.sigma is not None else np.ones_like(t)
    slow = phi(gamma1, v1, t)

    lo = np.array([math.log(max(v_lo, 1e-9 * v_hi)), math.log(g_lo - gamma_c)])
    hi = np.array([math.log(v_hi), math.log(g_hi - gamma_c)])
    span = hi - lo

    def unpack(u):
        v2 = math.exp(u[0])
        g0 = gamma_c + math.exp(u[1])
        return v2, g0, gamma2_from_gamma0(gamma_c, g0)

    def objective(u):
        if np.any(u < lo - 1e-12) or np.any(u > hi + 1e-12):
            return np.inf
        v2, _, g2 = unpack(u)
        r = slow * phi(g2, v2, t) - y
        return float(np.sum(w * r * r))

    axes = [np.linspace(lo[k], hi[k], grid) for k in range(2)]
    best = min(((objective(np.array([a, b])), a, b) for a in axes[0] for b in axes[1]))
    u0 = np.array(best[1:])
    step = span / (grid - 1)
    simplex = np.array([u0, u0 + [step[0], 0], u0 + [0, step[1]]])
    simplex = np.clip(simplex, lo, hi)
    for k in (1, 2):
        if np.allclose(simplex[k], simplex[0]):
            simplex[k] = simplex[0] - [step[0], 0] if k == 1 else simplex[0] - [0, step[1]]

    history = []

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = minimize(objective, u0, method="Nelder-Mead", callback=record,
                   options={"initial_simplex": simplex, "xatol": 1e-6 * float(span.max()),
                            "fatol": np.inf, "maxiter": max_iter, "maxfev": 4 * max_iter})
    if res.nit >= max_iter or not np.isfinite(res.fun):
        raise ConvergenceError(f"fit did not converge after {res.nit} iterations: {res.message}")
    v2, g0, g2 = unpack(res.x)
    sse = float(res.fun)
    # the log map cannot reach the lower edge; keep it when it fits at least as well
    r = slow * phi(g2, v_lo, t) - y
    edge = float(np.sum(w * r * r))
    if edge <= sse:
        v2, sse = v_lo, edge
    return FitResult(v2, g0, g2, sse, int(res.nit), bool(res.success), history)
