"""Diagonal complex Gaussian density with the reality constraint.

Coordinates are ordered ``[1, ..., d/2, -1, ..., -d/2]`` (``d = N - 2``).
Each coordinate has mean ``mu_i`` and ``E|u_i - mu_i|^2 = a_i``; the real
and imaginary parts are independent with variance ``a_i / 2`` each, and
``u_{-k} = conj(u_k)`` holds exactly.

The conditioning routines accept a general Hermitian covariance ``C`` so the
closed forms can be checked against hand-computed Schur complements; the
diagonal case is what the reduction uses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from itertools import product as _product

import numpy as np

from .spectral import ModeState, SpectralParams, fmt, reality_fill


class DegenerateDensityError(ValueError):
    pass


def d_order(params: SpectralParams) -> np.ndarray:
    """Wavenumbers in density order."""
    k = params.positive
    return np.concatenate([k, -k])


@dataclass(frozen=True)
class DiagonalGaussian:
    mu: np.ndarray  # (d,) complex
    a: np.ndarray  # (d,) real
    params: SpectralParams

    def __post_init__(self):
        h = len(self.params.positive)
        if self.mu.shape != (2 * h,) or self.a.shape != (2 * h,):
            raise ValueError("mu and a must have length N - 2")
        if np.any(self.a <= 0):
            raise DegenerateDensityError("all variances must be positive")

    @classmethod
    def from_positive(cls, mu_pos, a_pos, params: SpectralParams) -> "DiagonalGaussian":
        mu_pos = np.asarray(mu_pos, dtype=complex)
        a_pos = np.asarray(a_pos, dtype=float)
        return cls(np.concatenate([mu_pos, mu_pos.conj()]), np.concatenate([a_pos, a_pos]), params)

    @property
    def d(self) -> int:
        return len(self.mu)

    @property
    def half(self) -> int:
        return self.d // 2

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return d_order(self.params)

    @cached_property
    def conj_index(self) -> np.ndarray:
        """Position of the conjugate partner of each coordinate."""
        h = self.half
        return np.concatenate([np.arange(h, 2 * h), np.arange(h)])

    def pos(self, k: int) -> int:
        return int(k - 1 if k > 0 else self.half - k - 1)

    @property
    def cov(self) -> np.ndarray:
        return np.diag(self.a).astype(complex)

    def log_normalizer(self) -> float:
        """log Z with Z = prod over positive modes of (pi a_i)."""
        return float(np.sum(np.log(math.pi * self.a[: self.half])))

    def logpdf(self, u) -> np.ndarray:
        """Log density on stacked full-length coefficient arrays (..., N)."""
        x = np.asarray(u)[..., self.params.index(self.params.positive)]
        h = self.half
        q = np.sum(np.abs(x - self.mu[:h]) ** 2 / self.a[:h], axis=-1)
        return -q - self.log_normalizer()

    def to_d(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[..., self.params.index(self.wavenumbers)]

    def from_d(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[:-1] + (self.params.N,), dtype=complex)
        out[..., self.params.index(self.wavenumbers)] = x
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Unconditional draws as full-length coefficient arrays (size, N)."""
        h = self.half
        z = rng.standard_normal((size, 2, h))
        s = np.sqrt(self.a[:h] / 2)
        pos = self.mu[:h] + s * (z[:, 0] + 1j * z[:, 1])
        return self.from_d(np.concatenate([pos, pos.conj()], axis=-1))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mu_re", "mu_im", "var"])
            for k, m, a in zip(self.wavenumbers, self.mu, self.a):
                w.writerow([int(k), fmt(m.real), fmt(m.imag), fmt(a)])

    @classmethod
    def read_csv(cls, path, params: SpectralParams) -> "DiagonalGaussian":
        h = len(params.positive)
        mu = np.zeros(h, dtype=complex)
        a = np.zeros(h)
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                k = int(r["k"])
                if k > 0:
                    mu[k - 1] = float(r["mu_re"]) + 1j * float(r["mu_im"])
                    a[k - 1] = float(r["var"])
        return cls.from_positive(mu, a, params)


def _column_fsum(x: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(col) for col in np.asarray(x, dtype=float).T])


def fit_diagonal_gaussian(samples, params: SpectralParams) -> DiagonalGaussian:
    """Maximum-likelihood mean and variance with the 1/n normaliser.

    Sums are correctly rounded (``math.fsum``), so the fit does not depend on
    sample order or memory layout.
    """
    w = samples.samples if hasattr(samples, "samples") else np.asarray(samples)
    n = w.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    pos = w[:, params.index(params.positive)]
    mu = np.empty(pos.shape[1], dtype=complex)
    mu.real = _column_fsum(pos.real) / n
    mu.imag = _column_fsum(pos.imag) / n
    dev = pos - mu
    a = _column_fsum(dev.real**2 + dev.imag**2) / n
    if np.any(a <= 0):
        bad = params.positive[a <= 0].tolist()
        raise DegenerateDensityError(f"zero variance for modes {bad}")
    return DiagonalGaussian.from_positive(mu, a, params)


@dataclass(frozen=True)
class Partition:
    """Resolved wavenumbers (conjugate closed) inside the density ordering."""

    resolved_positive: tuple
    params: SpectralParams

    def __post_init__(self):
        r = sorted(set(int(k) for k in self.resolved_positive))
        half = self.params.N // 2
        if not r or r[0] < 1 or r[-1] >= half:
            raise ValueError(f"resolved wavenumbers must lie in 1..{half - 1}")
        object.__setattr__(self, "resolved_positive", tuple(r))

    @classmethod
    def from_wavenumbers(cls, ks, params: SpectralParams) -> "Partition":
        ks = set(int(k) for k in ks)
        if any(-k not in ks for k in ks):
            raise ValueError("resolved set must be closed under k -> -k")
        return cls(tuple(k for k in ks if k > 0), params)

    @cached_property
    def unresolved_positive(self) -> tuple:
        return tuple(k for k in self.params.positive if k not in self.resolved_positive)

    @property
    def m(self) -> int:
        return 2 * len(self.resolved_positive)

    @cached_property
    def resolved_wavenumbers(self) -> np.ndarray:
        r = np.array(self.resolved_positive)
        return np.concatenate([r, -r])

    @cached_property
    def unresolved_wavenumbers(self) -> np.ndarray:
        r = np.array(self.unresolved_positive, dtype=int)
        return np.concatenate([r, -r])

    @cached_property
    def resolved_idx(self) -> np.ndarray:
        """Positions of resolved coordinates in density order."""
        h = len(self.params.positive)
        r = np.array(self.resolved_positive, dtype=int) - 1
        return np.concatenate([r, r + h])

    @cached_property
    def unresolved_idx(self) -> np.ndarray:
        h = len(self.params.positive)
        r = np.array(self.unresolved_positive, dtype=int) - 1
        return np.concatenate([r, r + h])

    @cached_property
    def resolved_mask_full(self) -> np.ndarray:
        mask = np.zeros(self.params.N, dtype=bool)
        mask[self.params.index(self.resolved_wavenumbers)] = True
        return mask

    @cached_property
    def G(self) -> np.ndarray:
        d = self.params.n
        G = np.zeros((self.m, d))
        G[np.arange(self.m), self.resolved_idx] = 1.0
        return G

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Resolved m-vector(s) from full-length coefficient array(s)."""
        return np.asarray(u)[..., self.params.index(self.resolved_wavenumbers)]

    def embed(self, uhat: np.ndarray) -> np.ndarray:
        """Full-length array with resolved entries set and the rest zero."""
        uhat = np.asarray(uhat)
        out = np.zeros(uhat.shape[:-1] + (self.params.N,), dtype=complex)
        out[..., self.params.index(self.resolved_wavenumbers)] = uhat
        return out


@dataclass(frozen=True)
class ConditionalAffine:
    Qmat: np.ndarray  # (d, m)
    c: np.ndarray  # (d,)

    def mean(self, uhat: np.ndarray) -> np.ndarray:
        """E[u | uhat] in density order for stacked resolved vectors (..., m)."""
        return np.asarray(uhat) @ self.Qmat.T + self.c


@dataclass(frozen=True)
class ConditionalCov:
    V: np.ndarray  # (d, d)


def condition(mu: np.ndarray, C: np.ndarray, resolved_idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian conditioning on the coordinates ``resolved_idx``.

    Returns ``(Q, c, V)`` with ``Q = C G^H (G C G^H)^{-1}``,
    ``c = mu - Q G mu`` and ``V = C - Q G C``.
    """
    mu = np.asarray(mu, dtype=complex)
    C = np.asarray(C, dtype=complex)
    d = len(mu)
    G = np.zeros((len(resolved_idx), d))
    G[np.arange(len(resolved_idx)), resolved_idx] = 1.0
    CGh = C @ G.T
    GCGh = G @ CGh
    if np.linalg.cond(GCGh) > 1e14:
        raise np.linalg.LinAlgError("G C G^H is singular")
    Q = np.linalg.solve(GCGh.T, CGh.T).T
    c = mu - Q @ (G @ mu)
    V = C - Q @ (G @ C)
    return Q, c, V


def _diagonal_condition(g: DiagonalGaussian, p: Partition):
    # closed form: resolved rows select, unresolved rows keep mean and variance
    d, r, u = g.d, p.resolved_idx, p.unresolved_idx
    Q = np.zeros((d, p.m), dtype=complex)
    Q[r, np.arange(p.m)] = 1.0
    c = np.zeros(d, dtype=complex)
    c[u] = g.mu[u]
    V = np.zeros((d, d), dtype=complex)
    V[u, u] = g.a[u]
    return Q, c, V


def conditional_affine(g: DiagonalGaussian, p: Partition, C=None) -> ConditionalAffine:
    Q, c, _ = _diagonal_condition(g, p) if C is None else condition(g.mu, C, p.resolved_idx)
    return ConditionalAffine(Q, c)


def conditional_covariance(g: DiagonalGaussian, p: Partition, C=None) -> ConditionalCov:
    _, _, V = _diagonal_condition(g, p) if C is None else condition(g.mu, C, p.resolved_idx)
    return ConditionalCov(V)


def sample_conditional(
    g: DiagonalGaussian,
    p: Partition | None,
    resolved_values,
    seed_or_rng,
    size: int | None = None,
) -> ModeState | np.ndarray:
    """Draw unresolved modes from the density with resolved modes held fixed.

    ``resolved_values`` is the m-vector in partition order.  With ``size``
    given, returns a (size, N) array; otherwise a single :class:`ModeState`.
    """
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    params = g.params
    n = 1 if size is None else size
    out = np.zeros((n, params.N), dtype=complex)
    if p is None:
        out[:] = g.sample(rng, n)
    else:
        vals = np.asarray(resolved_values, dtype=complex)
        if vals.shape[-1] != p.m:
            raise ValueError(f"expected {p.m} resolved values")
        unres = np.array(p.unresolved_positive, dtype=int)
        if len(unres):
            i = unres - 1
            z = rng.standard_normal((n, 2, len(unres)))
            draw = g.mu[i] + np.sqrt(g.a[i] / 2) * (z[:, 0] + 1j * z[:, 1])
            out[:, params.index(unres)] = draw
            out[:, params.index(-unres)] = draw.conj()
        out[:, params.index(p.resolved_wavenumbers)] = vals
    if size is None:
        return ModeState(out[0], 0.0)
    return out


# -- Wick's theorem ---------------------------------------------------------------


def _pairings(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for tail in _pairings(rest[:i] + rest[i + 1 :]):
            yield [(first, other)] + tail


def pair_covariance(V: np.ndarray, conj_index: np.ndarray, fa, fb) -> complex:
    """E[x_a x_b] for centred factors; a factor is (index, conjugated?)."""
    (i, ci), (j, cj) = fa, fb
    if not ci and cj:
        return V[i, j]
    if ci and not cj:
        return V[j, i]
    if not ci:
        return V[i, conj_index[j]]
    return np.conj(V[i, conj_index[j]])


def wick_moment(g: DiagonalGaussian, p: Partition, resolved_values, factors, V=None) -> complex:
    """Conditional expectation of a product of centred (unresolved) factors.

    ``factors`` is a list of ``(density index, conjugated)`` pairs.  For a
    Gaussian the centred conditional moment depends on ``resolved_values``
    only through the mean, which is subtracted, so the result is a sum over
    pairings of conditional covariances.
    """
    P = len(factors)
    if P > 8:
        raise ValueError("at most 8 factors are supported")
    if P % 2:
        return 0j
    if V is None:
        V = conditional_covariance(g, p).V
    total = 0j
    for pairing in _pairings(list(factors)):
        term = 1 + 0j
        for fa, fb in pairing:
            term *= pair_covariance(V, g.conj_index, fa, fb)
            if term == 0:
                break
        total += term
    return total


def n_pairings(P: int) -> int:
    return 0 if P % 2 else math.prod(range(P - 1, 0, -2))
