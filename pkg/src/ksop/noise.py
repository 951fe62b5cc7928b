"""Stationary moving-average model for the unresolved modes.

Each real component x of an unresolved mode is modelled as
``x_j = mean + sum_i h_i rho_{i+j}`` with i.i.d. ``rho ~ Normal(0, dt)``.
The weights come from the spectral factorisation of the sampled
autocorrelation: ``dt * |FFT(h)|^2 = FFT(R)`` on a circulant embedding.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .spectral import fmt

log = logging.getLogger(__name__)

COMPONENTS = ("re", "im")


@dataclass
class AutocorrTable:
    """R[c, l] for component c (re/im) at lag l * dtau."""

    k: int
    dtau: float
    R: np.ndarray  # (2, L)
    n_traj: int
    mean: np.ndarray  # (2,) reference means
    warnings: list = field(default_factory=list)


def estimate_autocorrelation(trajectories: np.ndarray, k: int, dtau: float, mean: complex, params) -> AutocorrTable:
    """Ensemble autocorrelation of mode ``k`` relative to the density mean.

    ``trajectories`` has shape (n_traj, T, N) on a common grid starting at the
    initial time; ``mean`` is the stationary reference (the density mean).
    """
    x = np.asarray(trajectories)[:, :, params.index(k)]
    return autocorrelation_from_series(np.stack([x.real, x.imag], axis=-1), k, dtau, np.array([mean.real, mean.imag]))


def autocorrelation_from_series(x: np.ndarray, k: int, dtau: float, mean: np.ndarray) -> AutocorrTable:
    """x has shape (n_traj, T, 2); R(l) = avg_n (x_n(l) - m)(x_n(0) - m)."""
    return table_from_sum(autocorrelation_sum(x, mean), x.shape[0], k, dtau, mean)


def autocorrelation_sum(x: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Un-normalised sum over trajectories, (2, T); lets large ensembles be streamed."""
    d = np.asarray(x) - mean
    return np.einsum("ntc,nc->ct", d, d[:, 0])


def table_from_sum(S: np.ndarray, n: int, k: int, dtau: float, mean: np.ndarray) -> AutocorrTable:
    warn = []
    if n < 100:
        warn.append(f"only {n} trajectories for autocorrelation of mode {k}")
        log.warning(warn[-1])
    return AutocorrTable(k, dtau, S / n, n, mean, warn)


@dataclass
class ComponentWeights:
    R: np.ndarray
    phi: np.ndarray
    h: np.ndarray  # taps for i = -n_w..n_w
    n_w: int
    n_clipped: int

    @property
    def taps(self) -> np.ndarray:
        return np.arange(-self.n_w, self.n_w + 1)


@dataclass
class NoiseModel:
    dt: float
    modes: dict  # k -> (ComponentWeights re, ComponentWeights im)
    means: dict  # k -> complex

    def write_weights_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# dt={fmt(self.dt)}\n")
            w = csv.writer(fh)
            w.writerow(["k", "component", "tap_index", "weight"])
            for k, comps in self.modes.items():
                for name, cw in zip(COMPONENTS, comps):
                    for i, hv in zip(cw.taps, cw.h):
                        w.writerow([k, name, int(i), fmt(hv)])

    def write_csv(self, weights_path, autocorr_path) -> None:
        self.write_weights_csv(weights_path)
        with open(autocorr_path, "w", newline="") as fh:
            fh.write(f"# dt={fmt(self.dt)}\n")
            w = csv.writer(fh)
            w.writerow(["k", "component", "lag", "R"])
            for k, comps in self.modes.items():
                for name, cw in zip(COMPONENTS, comps):
                    for lag, r in enumerate(cw.R):
                        w.writerow([k, name, fmt(lag * self.dt), fmt(r)])

    @classmethod
    def read_weights_csv(cls, path, means: dict) -> "NoiseModel":
        """Rebuild from a weights file; ``R`` and ``phi`` are not stored there."""
        with open(path, newline="") as fh:
            dt = float(fh.readline().split("=", 1)[1])
            rows = list(csv.DictReader(fh))
        taps = {}
        for r in rows:
            taps.setdefault(int(r["k"]), {c: [] for c in COMPONENTS})[r["component"]].append(
                (int(r["tap_index"]), float(r["weight"])))
        modes = {}
        for k in sorted(taps):
            comps = []
            for name in COMPONENTS:
                h = np.array([w for _, w in sorted(taps[k][name])])
                comps.append(ComponentWeights(np.empty(0), np.empty(0), h, (len(h) - 1) // 2, 0))
            modes[k] = tuple(comps)
        return cls(dt, modes, {k: means[k] for k in modes})


def factorize(R: np.ndarray, dt: float, window_rel: float = 1e-3, n_w: int | None = None) -> ComponentWeights:
    """Moving-average weights for a one-sided autocorrelation R[0..L-1]."""
    R = np.asarray(R, dtype=float)
    if not R[0] > 0:
        raise ValueError("R(0) must be positive")
    L = len(R)
    circ = np.concatenate([R, R[-2:0:-1]]) if L > 1 else R.copy()
    phi = np.fft.fft(circ).real
    n_clipped = int(np.sum(phi < 0))
    phi = np.clip(phi, 0.0, None)
    h_full = np.fft.fftshift(np.fft.ifft(np.sqrt(phi / dt)).real)
    centre = len(circ) // 2
    if n_w is None:
        mag = np.abs(h_full)
        big = np.nonzero(mag > window_rel * mag.max())[0]
        n_w = int(max(centre - big.min(), big.max() - centre)) if len(big) else 0
    n_w = min(n_w, centre, len(circ) - 1 - centre)
    h = h_full[centre - n_w : centre + n_w + 1]
    return ComponentWeights(R, phi, h, n_w, n_clipped)


def build_noise_model(tables, dt: float, n_w: int | None = None, means: dict | None = None) -> NoiseModel:
    """Noise model from a list of :class:`AutocorrTable` (one per unresolved positive mode)."""
    modes, mus = {}, {}
    for t in tables:
        if abs(t.dtau - dt) > 1e-12 * dt:
            raise ValueError("autocorrelation grid must match dt")
        modes[t.k] = tuple(factorize(t.R[c], dt, n_w=n_w) for c in range(2))
        mus[t.k] = complex(t.mean[0], t.mean[1]) if means is None else means[t.k]
    return NoiseModel(dt, modes, mus)


def moving_average(h: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """x_j = sum_{i=-n_w}^{n_w} h_i rho_{i+j} (rho has 2 n_w extra entries)."""
    h = np.asarray(h, dtype=float)
    rho = np.asarray(rho, dtype=float)
    kernel = h[::-1].reshape((1,) * (rho.ndim - 1) + (-1,))
    return fftconvolve(rho, kernel, mode="valid", axes=-1)


def simulate_unresolved_path(nm: NoiseModel, horizon: float, dt: float, rng_or_seed, size: int | None = None) -> dict:
    """Sample paths on the grid 0, dt, ..., horizon for every modelled mode.

    Returns ``{k: complex array (n_t,)}`` or ``(size, n_t)`` when ``size`` is
    given.  Components are independent.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if abs(dt - nm.dt) > 1e-12 * nm.dt:
        raise ValueError("path dt must match the noise model dt")
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else np.random.default_rng(rng_or_seed)
    n_t = int(round(horizon / dt)) + 1
    shape = () if size is None else (size,)
    out = {}
    for k in sorted(nm.modes):
        comps = []
        for cw in nm.modes[k]:
            rho = rng.normal(0.0, np.sqrt(dt), size=shape + (n_t + 2 * cw.n_w,))
            comps.append(moving_average(cw.h, rho))
        out[k] = nm.means[k] + comps[0] + 1j * comps[1]
    return out


def path_array(nm: NoiseModel, paths: dict, params) -> np.ndarray:
    """Pack path dict into full-length coefficient arrays (..., n_t, N)."""
    any_path = next(iter(paths.values()))
    out = np.zeros(any_path.shape + (params.N,), dtype=complex)
    for k, x in paths.items():
        out[..., params.index(k)] = x
        out[..., params.index(-k)] = np.conj(x)
    return out
