"""Monte-Carlo sampling of random-telegraph processes.

Each fluctuator switches between ``+a`` and ``-a`` as a Poisson process of
rate ``gamma``, which gives the correlation ``a**2 exp(-2 gamma |tau|)``.
Paths are piecewise constant, so phases are integrated exactly.

Every trajectory draws from its own counter-based Philox stream keyed by
``(seed, trajectory index)``.  Results are therefore identical for any
number of worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .curves import DecayCurve
from .noise import NoiseBand, rate_quantile

__all__ = [
    "Fluctuator",
    "Trajectory",
    "StepPath",
    "EnsembleSpec",
    "stream",
    "StreamFactory",
    "sample_trajectory",
    "sample_path",
    "discretize_band",
    "empirical_correlation",
    "empirical_envelope",
    "empirical_moment4",
    "jackknife_mean",
]


@dataclass(frozen=True)
class Fluctuator:
    """Telegraph process with amplitude ``a`` and switching rate ``gamma`` (1/us)."""

    a: float
    gamma: float

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError("fluctuator amplitude must be positive")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError("fluctuator rate must be positive")


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` under ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1), counter=[0, int(index), 0, 0]))


class StreamFactory:
    """Reusable source of the streams produced by :func:`stream`.

    Repositioning one Philox generator is several times cheaper than
    building a new one.  Instances are not thread safe; use one per worker.
    """

    def __init__(self, seed: int):
        self._bits = np.random.Philox(key=int(seed) & (2**64 - 1))
        self._gen = np.random.Generator(self._bits)
        st = self._bits.state
        self._key = st["state"]["key"]
        self._buffer = st["buffer"]

    def at(self, index: int) -> np.random.Generator:
        self._bits.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.array([0, int(index), 0, 0], dtype=np.uint64), "key": self._key},
            "buffer": self._buffer, "buffer_pos": 4, "has_uint32": 0, "uinteger": 0,
        }
        return self._gen


class StepPath:
    """Piecewise-constant path ``x(t)`` on ``[0, T]``.

    Parameters
    ----------
    breaks : ndarray
        Segment start times, ``breaks[0] == 0``, non-decreasing.
    levels : ndarray
        Value of the path on ``[breaks[k], breaks[k+1])``.
    horizon : float
    """

    def __init__(self, breaks, levels, horizon):
        self.breaks = np.asarray(breaks, dtype=float)
        self.levels = np.asarray(levels, dtype=float)
        self.horizon = float(horizon)
        ends = np.empty_like(self.breaks)
        ends[:-1] = self.breaks[1:]
        ends[-1] = self.horizon
        self._cum = np.empty(self.breaks.size + 1)
        self._cum[0] = 0.0
        np.cumsum(self.levels * (ends - self.breaks), out=self._cum[1:])

    def _segment(self, t):
        return np.searchsorted(self.breaks, t, side="right") - 1

    def value(self, t):
        """Path value at ``t`` (right-continuous)."""
        return self.levels[self._segment(np.asarray(t, dtype=float))]

    def integral(self, t):
        """Exact ``int_0^t x(s) ds``."""
        t = np.asarray(t, dtype=float)
        k = self._segment(t)
        return self._cum[k] + self.levels[k] * (t - self.breaks[k])


@dataclass(frozen=True)
class Trajectory:
    """Single telegraph path: initial sign and sorted flip times on ``[0, T]``."""

    initial_sign: int
    flip_times: np.ndarray
    horizon: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.initial_sign not in (-1, 1):
            raise ValueError("initial sign must be +1 or -1")
        ft = np.asarray(self.flip_times, dtype=float)
        if ft.size and (np.any(np.diff(ft) <= 0) or ft[0] < 0 or ft[-1] > self.horizon):
            raise ValueError("flip times must be strictly increasing within [0, T]")
        object.__setattr__(self, "flip_times", ft)

    def to_path(self) -> StepPath:
        k = np.arange(self.flip_times.size + 1)
        levels = self.amplitude * self.initial_sign * (-1.0) ** k
        return StepPath(np.concatenate(([0.0], self.flip_times)), levels, self.horizon)

    def value(self, t):
        return self.to_path().value(t)


def sample_trajectory(f: Fluctuator, T: float, rng: np.random.Generator) -> Trajectory:
    """Draw one path of ``f`` on ``[0, T]``."""
    if not T > 0:
        raise ValueError("horizon must be positive")
    sign = 1 if rng.integers(0, 2) else -1
    count = rng.poisson(f.gamma * T)
    times = np.sort(rng.uniform(0.0, T, count))
    # coincident draws have probability zero; drop them to keep times strict
    if times.size > 1:
        keep = np.concatenate(([True], np.diff(times) > 0))
        times = times[keep]
    return Trajectory(sign, times, T, f.a)


def sample_path(amplitudes, rates, T: float, rng: np.random.Generator) -> StepPath:
    """Sum of independent telegraph paths as one :class:`StepPath`."""
    a = np.asarray(amplitudes, dtype=float)
    g = np.asarray(rates, dtype=float)
    if a.size == 1:
        start = float(a[0]) if rng.random() < 0.5 else -float(a[0])
        total = int(rng.poisson(g[0] * T))
        if total == 0:
            return StepPath(_ZERO, [start], T)
        times = rng.random(total) * T
        times.sort()
        return StepPath(np.concatenate((_ZERO, times)), start * _alternating(total + 1), T)
    signs = np.where(rng.random(a.size) < 0.5, -1.0, 1.0)
    counts = rng.poisson(g * T)
    total = int(counts.sum())
    start = float(a @ signs)
    if total == 0:
        return StepPath(_ZERO, [start], T)
    times = rng.random(total) * T
    owner = np.repeat(np.arange(a.size), counts)
    order = np.lexsort((times, owner))
    times = times[order]
    # rank of each flip within its own fluctuator
    first = np.repeat(np.cumsum(counts) - counts, counts)
    rank = np.arange(total) - first
    jumps = -2.0 * a[owner] * signs[owner] * np.where(rank % 2 == 0, 1.0, -1.0)
    by_time = np.argsort(times, kind="stable")
    levels = start + np.cumsum(jumps[by_time])
    return StepPath(np.concatenate((_ZERO, times[by_time])), np.concatenate(([start], levels)), T)


_ZERO = np.zeros(1)


def _alternating(k: int) -> np.ndarray:
    out = np.ones(k)
    out[1::2] = -1.0
    return out


def discretize_band(band: NoiseBand, N: int, rng: np.random.Generator) -> list[Fluctuator]:
    """Draw ``N`` fluctuators from a band by inverse-CDF sampling.

    Each carries amplitude ``sigma / sqrt(N)`` so the total variance is
    ``sigma**2``.
    """
    if int(N) < 1:
        raise ValueError("N must be at least 1")
    rates = rate_quantile(band, rng.uniform(0.0, 1.0, int(N)))
    a = band.sigma / math.sqrt(N)
    return [Fluctuator(a, float(g)) for g in rates]


@dataclass(frozen=True)
class EnsembleSpec:
    """Ensemble definition for Monte-Carlo estimates.

    Parameters
    ----------
    fluctuators : sequence of Fluctuator
        Fixed fluctuators present in every trajectory.
    trajectories : int
        Trajectories per estimate.
    seed : int
        64-bit seed of the counter-based streams.
    horizon : float
        Path length ``T`` in us.
    sources : sequence of (NoiseBand, int)
        Bands re-discretised independently for every trajectory, so the
        ensemble correlation equals the band's ``chi_n`` exactly.
    """

    fluctuators: tuple = ()
    trajectories: int = 1000
    seed: int = 0
    horizon: float = 1.0
    sources: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "fluctuators", tuple(self.fluctuators))
        object.__setattr__(self, "sources", tuple((b, int(n)) for b, n in self.sources))
        if int(self.trajectories) < 1:
            raise ValueError("trajectories must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.fluctuators and not self.sources:
            raise ValueError("ensemble needs fluctuators or band sources")
        if any(n < 1 for _, n in self.sources):
            raise ValueError("band source counts must be at least 1")

    def path(self, index: int, streams: StreamFactory | None = None) -> StepPath:
        """Sample path of trajectory ``index``."""
        rng = streams.at(index) if streams is not None else stream(self.seed, index)
        a = [f.a for f in self.fluctuators]
        g = [f.gamma for f in self.fluctuators]
        for band, n in self.sources:
            a.extend([band.sigma / math.sqrt(n)] * n)
            g.extend(rate_quantile(band, rng.uniform(0.0, 1.0, n)))
        return sample_path(a, g, self.horizon, rng)


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get("FLUCTUON_THREADS", "1") or 1)
    return max(1, int(workers))


def _map_trajectories(spec: EnsembleSpec, fn, workers=None) -> np.ndarray:
    """Apply ``fn(path)`` to every trajectory; rows stacked in index order."""
    M = int(spec.trajectories)
    workers = _workers(workers)

    def run(lo, hi):
        streams = StreamFactory(spec.seed)
        return np.array([fn(spec.path(j, streams)) for j in range(lo, hi)])

    if workers == 1 or M < 2 * workers:
        return run(0, M)
    edges = np.linspace(0, M, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda k: run(edges[k], edges[k + 1]), range(workers)))
    return np.concatenate(parts, axis=0)


def jackknife_mean(samples: np.ndarray):
    """Mean over axis 0 and its jackknife standard error.

    For complex samples the error refers to the real part.
    """
    x = np.asarray(samples)
    M = x.shape[0]
    mean = x.mean(axis=0)
    if M < 2:
        return mean, np.full(np.shape(mean), np.nan)
    loo = (x.sum(axis=0) - x) / (M - 1)
    dev = np.real(loo) - np.real(loo).mean(axis=0)
    se = np.sqrt((M - 1) / M * np.sum(dev ** 2, axis=0))
    return mean, se


def _lagged_mean(path: StepPath, tau: float, T: float) -> float:
    """Exact time average of ``x(t) x(t + tau)`` over ``[0, T - tau]``."""
    span = T - tau
    if span <= 0:
        raise ValueError("lag must be smaller than the horizon")
    cuts = np.concatenate((path.breaks, path.breaks - tau, [span]))
    cuts = np.unique(cuts[(cuts >= 0) & (cuts <= span)])
    if cuts[0] > 0:
        cuts = np.concatenate(([0.0], cuts))
    left = cuts[:-1]
    w = np.diff(cuts)
    return float(np.sum(path.value(left) * path.value(left + tau) * w) / span)


def empirical_correlation(spec: EnsembleSpec, taus, workers=None):
    """Time-and-ensemble average of ``xi(t) xi(t + tau)``.

    Returns
    -------
    mean, stderr : ndarray
        Estimate per lag with jackknife standard error.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus < 0) or np.any(taus > spec.horizon / 2):
        raise ValueError("lags must lie in [0, T/2]")
    T = spec.horizon
    rows = _map_trajectories(spec, lambda p: [_lagged_mean(p, tau, T) for tau in taus], workers)
    return jackknife_mean(rows)


def _phases(path: StepPath, protocol: str, t: np.ndarray) -> np.ndarray:
    if protocol == "fid":
        return path.integral(t)
    return 2.0 * path.integral(0.5 * t) - path.integral(t)


def empirical_envelope(spec: EnsembleSpec, protocol: str, D: float, t_grid, workers=None) -> DecayCurve:
    """Monte-Carlo estimate of ``<exp(i phi(t))>``.

    Parameters
    ----------
    spec : EnsembleSpec
    protocol : {"fid", "echo"}
        For echo the phase sign is reversed at ``t/2``.
    D : float
        Coupling of the noise to the qubit frequency.
    t_grid : array_like
        Times within ``[0, T]``.
    """
    protocol = str(getattr(protocol, "value", protocol)).lower()
    if protocol not in ("fid", "echo"):
        raise ValueError(f"unknown protocol {protocol!r}")
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0) or np.any(t > spec.horizon):
        raise ValueError("time grid must lie within [0, T]")
    rows = _map_trajectories(spec, lambda p: np.exp(1j * D * _phases(p, protocol, t)), workers)
    mean, se = jackknife_mean(rows)
    meta = {"trajectories": int(spec.trajectories), "seed": int(spec.seed), "protocol": protocol, "D": D}
    return DecayCurve(t, mean, "monte-carlo", se, meta)


def empirical_moment4(f: Fluctuator, times: Sequence[float], n_samples: int, seed: int = 0):
    """Estimate ``<z(t1) z(t2) z(t3) z(t4)>`` for one fluctuator.

    Only flip-count parities between consecutive times matter, so samples
    are drawn directly from the Poisson increments.

    Returns
    -------
    mean, stderr : float
    """
    t = np.asarray(times, dtype=float)
    if t.shape != (4,) or np.any(np.diff(t) > 0):
        raise ValueError("times must be four values with t1 >= t2 >= t3 >= t4")
    rng = stream(seed, 0)
    gaps = -np.diff(t)
    counts = rng.poisson(f.gamma * gaps, size=(int(n_samples), 3))
    # z1 z2 z3 z4 = a^4 (-1)^(N12 + N34); the middle gap cancels
    parity = (counts[:, 0] + counts[:, 2]) % 2
    x = f.a ** 4 * np.where(parity == 0, 1.0, -1.0)
    mean, se = jackknife_mean(x)
    return float(mean), float(se)
