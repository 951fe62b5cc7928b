"""Fourier-Galerkin truncation of the Kuramoto-Sivashinsky equation.

Coefficients are stored as full length-N complex vectors ordered by
wavenumber ``-N/2 ... N/2-1``.  The redundant negative modes are kept so the
convolution index arithmetic stays literal; reality is enforced explicitly by
:func:`enforce_reality`.

Real-space convention for the padded transform (M = 3N/2 points):
``v_j = sum_k u_k exp(2 pi i j k / M)`` (numpy ``M * ifft``) and
``u_k = (1/M) sum_j v_j exp(-2 pi i j k / M)`` (numpy ``fft / M``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class SpectralParams:
    """Viscosity and truncation size of the Galerkin system."""

    nu: float = 0.085
    N: int = 24

    def __post_init__(self):
        if self.N % 2 or self.N < 4:
            raise ValueError(f"N must be even and >= 4, got {self.N}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")

    @property
    def n(self) -> int:
        """Number of active modes (zero mode and -N/2 are pinned to 0)."""
        return self.N - 2

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(-self.N // 2, self.N // 2)

    @cached_property
    def positive(self) -> np.ndarray:
        """Wavenumbers 1 ... N/2-1 carrying the independent unknowns."""
        return np.arange(1, self.N // 2)

    @cached_property
    def linear_rates(self) -> np.ndarray:
        k = self.wavenumbers.astype(float)
        return k**2 - self.nu * k**4

    @cached_property
    def pinned(self) -> np.ndarray:
        mask = np.zeros(self.N, dtype=bool)
        mask[self.index(0)] = True
        mask[self.index(-self.N // 2)] = True
        return mask

    def index(self, k):
        """Array position of wavenumber ``k`` (scalar or array)."""
        return np.asarray(k) + self.N // 2


@dataclass
class ModeState:
    coeffs: np.ndarray
    time: float = 0.0

    def __getitem__(self, k: int) -> complex:
        N = len(self.coeffs)
        return self.coeffs[k + N // 2]

    def copy(self) -> "ModeState":
        return ModeState(self.coeffs.copy(), self.time)


def linear_growth_rate(k, nu: float):
    k = np.asarray(k, dtype=float)
    return k**2 - nu * k**4


def enforce_reality(raw, params: SpectralParams, time: float = 0.0) -> ModeState:
    """Pin u_0 and u_{-N/2} to zero and overwrite negatives by conjugates."""
    raw = np.asarray(raw, dtype=complex)
    if raw.shape[-1] != params.N:
        raise ValueError(f"expected {params.N} coefficients, got {raw.shape[-1]}")
    return ModeState(reality_fill(raw, params), time)


def reality_fill(raw: np.ndarray, params: SpectralParams) -> np.ndarray:
    """Array version of :func:`enforce_reality`; works on stacked (..., N) input."""
    out = np.array(raw, dtype=complex, copy=True)
    pos = params.index(params.positive)
    neg = params.index(-params.positive)
    out[..., neg] = np.conj(out[..., pos])
    out[..., params.pinned] = 0.0
    return out


def _pad(u: np.ndarray, N: int) -> np.ndarray:
    M = 3 * N // 2
    padded = np.zeros(u.shape[:-1] + (M,), dtype=complex)
    k = np.arange(-N // 2, N // 2)
    padded[..., k % M] = u
    return padded


def to_physical(u: np.ndarray) -> np.ndarray:
    """Field values on the M = 3N/2 point padded grid (complex dtype)."""
    N = u.shape[-1]
    M = 3 * N // 2
    return np.fft.ifft(_pad(u, N), axis=-1) * M


def convolve_dealiased(u) -> np.ndarray:
    """S_k = sum_{k'} u_{k'} u_{k-k'} over the retained band, alias free."""
    if isinstance(u, ModeState):
        u = u.coeffs
    return product_dealiased(u, u)


def product_dealiased(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Truncated convolution sum_{k'} u_{k'} w_{k-k'} via 3/2-rule padding."""
    N = u.shape[-1]
    return from_physical(to_physical(u) * to_physical(w), N)


def from_physical(values: np.ndarray, N: int) -> np.ndarray:
    """Coefficients -N/2..N/2-1 of values on the padded grid (inverse of to_physical)."""
    M = 3 * N // 2
    full = np.fft.fft(values, axis=-1) / M
    k = np.arange(-N // 2, N // 2)
    return full[..., k % M]


def direct_convolution(u: np.ndarray) -> np.ndarray:
    """O(N^2) double sum, used as an oracle."""
    N = len(u)
    half = N // 2
    out = np.zeros(N, dtype=complex)
    for k in range(-half, half):
        s = 0j
        for kp in range(-half, half):
            q = k - kp
            if -half <= q < half:
                s += u[kp + half] * u[q + half]
        out[k + half] = s
    return out


def rhs_array(u: np.ndarray, params: SpectralParams) -> np.ndarray:
    """KS right-hand side on stacked coefficient arrays (..., N)."""
    k = params.wavenumbers
    r = -0.5j * k * convolve_dealiased(u) + params.linear_rates * u
    r[..., params.pinned] = 0.0
    return r


def ks_rhs(state: ModeState, params: SpectralParams) -> np.ndarray:
    return rhs_array(state.coeffs, params)


def energy(state) -> float:
    """E = (1/4pi) int v^2 dx = (1/2) sum_k |u_k|^2."""
    u = state.coeffs if isinstance(state, ModeState) else np.asarray(state)
    e = 0.5 * np.sum(np.abs(u) ** 2, axis=-1)
    return float(e) if np.ndim(e) == 0 else e


# -- real unknown packing ------------------------------------------------------


def pack(u: np.ndarray, params: SpectralParams) -> np.ndarray:
    """Real unknowns [Re u_1..u_{N/2-1}, Im u_1..u_{N/2-1}]."""
    pos = u[..., params.index(params.positive)]
    return np.concatenate([pos.real, pos.imag], axis=-1)


def unpack(y: np.ndarray, params: SpectralParams) -> np.ndarray:
    h = len(params.positive)
    u = np.zeros(y.shape[:-1] + (params.N,), dtype=complex)
    pos = y[..., :h] + 1j * y[..., h:]
    u[..., params.index(params.positive)] = pos
    u[..., params.index(-params.positive)] = np.conj(pos)
    return u


# -- CSV ----------------------------------------------------------------------


def fmt(x) -> str:
    return format(float(x), ".17g")


def write_state_csv(path, state: ModeState, params: SpectralParams) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "re", "im"])
        for k, c in zip(params.wavenumbers, state.coeffs):
            w.writerow([int(k), fmt(c.real), fmt(c.imag)])


def read_state_csv(path, params: SpectralParams, time: float = 0.0) -> ModeState:
    coeffs = np.zeros(params.N, dtype=complex)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            coeffs[params.index(int(row["k"]))] = float(row["re"]) + 1j * float(row["im"])
    return ModeState(coeffs, time)
