"""Orthonormal Hermite-type functions of the resolved modes.

Each resolved coordinate u_j (density order over the resolved set) with
real part x and imaginary part y contributes the factor
``Ht_k(X) + i Ht_k(Y)`` where ``X = sqrt(2/a_j) (x - Re mu_j)`` and
``Y = sqrt(2/a_j) (y - Im mu_j)``.  A basis function is the product of the
factors selected by a multi-index kappa.  ``Ht`` is the normalised
probabilists' Hermite function, optionally modulated by a Gaussian weight
``exp(-beta x^2 / 2)``; its E[Ht_k^2] is 1/2 under a standard normal, so each
factor has unit second moment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np

from .gaussian import DiagonalGaussian, Partition


def hermite_normalized(k: int, x) -> np.ndarray:
    """Normalised Hermite polynomial via H_k = (x H_{k-1} - sqrt(k-1) H_{k-2}) / sqrt(k)."""
    x = np.asarray(x, dtype=float)
    h0 = np.ones_like(x)
    if k == 0:
        return h0
    h1 = x.copy()
    for j in range(2, k + 1):
        h0, h1 = h1, (x * h1 - math.sqrt(j - 1) * h0) / math.sqrt(j)
    return h1


def hermite_tilde(k: int, x, beta: float = 0.0) -> np.ndarray:
    s = 1.0 + 2.0 * beta
    x = np.asarray(x, dtype=float)
    return (s**0.25 / math.sqrt(2.0)) * hermite_normalized(k, math.sqrt(s) * x) * np.exp(-0.5 * beta * x * x)


def hermite_tilde_deriv(k: int, x, beta: float = 0.0) -> np.ndarray:
    """d/dx Ht_k = sqrt(k (1 + 2 beta)) Ht_{k-1} - beta x Ht_k."""
    x = np.asarray(x, dtype=float)
    out = -beta * x * hermite_tilde(k, x, beta)
    if k > 0:
        out = out + math.sqrt(k * (1.0 + 2.0 * beta)) * hermite_tilde(k - 1, x, beta)
    return out


@dataclass(frozen=True)
class ProjectionSpec:
    """Linear projection or a finite-rank set of multi-indices.

    For ``finite-rank``, ``indices`` is a tuple of multi-indices over the
    resolved coordinates in partition order (positives, then negatives) and
    ``betas`` holds one beta per entry (0 when the entry is 0).
    """

    kind: str = "linear"
    indices: tuple = ()
    betas: tuple = ()
    labels: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.kind not in ("linear", "finite-rank"):
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.kind == "finite-rank":
            if not self.indices:
                raise ValueError("finite-rank projection needs multi-indices")
            betas = self.betas or tuple(tuple(0.0 for _ in kap) for kap in self.indices)
            object.__setattr__(self, "betas", betas)
            self.validate()

    def validate(self) -> None:
        seen = set()
        for kap, bet in zip(self.indices, self.betas):
            m = len(kap)
            half = m // 2
            if not any(kap):
                raise ValueError("the constant multi-index is excluded")
            for j in range(half):
                if kap[j] and kap[j + half]:
                    raise ValueError(f"multi-index {kap} uses both members of a conjugate pair")
            for kj, bj in zip(kap, bet):
                if kj == 0 and bj != 0:
                    raise ValueError("beta must be 0 for order-zero factors")
                if bj <= -0.5:
                    raise ValueError("beta must exceed -1/2")
            key = _canonical(kap)
            if key in seen:
                raise ValueError(f"multi-index {kap} duplicates another function")
            seen.add(key)

    @property
    def size(self) -> int:
        return len(self.indices)


def _canonical(kap) -> tuple:
    # even orders give the same factor on u_k and u_{-k}
    half = len(kap) // 2
    out = list(kap)
    for j in range(half):
        if out[j + half] and out[j + half] % 2 == 0 and out[j] == 0:
            out[j], out[j + half] = out[j + half], 0
    return tuple(out)


def default_finite_rank_set(p: Partition, n_functions: int = 30, max_order: int = 2, n_quadratic_modes: int = 2):
    """Deterministic finite-rank set over the resolved coordinates.

    Up to order ``max_order`` on the ``n_quadratic_modes`` most unstable
    resolved modes (tensor product, conjugate-pair rule, constant removed,
    duplicates from even orders dropped), first order on every other
    coordinate, then first-order cross products in a fixed order until
    ``n_functions`` functions are reached.
    """
    params = p.params
    res = list(p.resolved_positive)
    half = len(res)
    rates = params.linear_rates[params.index(np.array(res))]
    quad = sorted(np.array(res)[np.argsort(-rates, kind="stable")[:n_quadratic_modes]].tolist())

    def slot(k):
        return res.index(abs(k)) + (half if k < 0 else 0)

    def label(kap):
        parts = []
        for i, o in enumerate(kap):
            if o:
                k = res[i % half] * (1 if i < half else -1)
                parts.append(f"{k}^{o}")
        return "*".join(parts)

    pair_opts = [(0, 0)] + [(o, 0) for o in range(1, max_order + 1)] + [(0, o) for o in range(1, max_order + 1)]
    out, seen = [], set()

    def add(kap):
        kap = tuple(kap)
        key = _canonical(kap)
        if any(kap) and key not in seen:
            seen.add(key)
            out.append(kap)

    for combo in product(pair_opts, repeat=len(quad)):
        kap = [0] * (2 * half)
        for k, (o_pos, o_neg) in zip(quad, combo):
            kap[slot(k)] = o_pos
            kap[slot(-k)] = o_neg
        add(kap)
    for k in res:
        if k in quad:
            continue
        for s in (k, -k):
            kap = [0] * (2 * half)
            kap[slot(s)] = 1
            add(kap)
    n_core = len(out)
    if n_core < n_functions:
        signed = [s * k for k in res for s in (1, -1)]
        cands = []
        for a, b in combinations(signed, 2):
            if abs(a) == abs(b):
                continue
            cands.append((abs(a) + abs(b), min(abs(a), abs(b)), a < 0, b < 0, a, b))
        for *_, a, b in sorted(cands):
            if len(out) >= n_functions:
                break
            kap = [0] * (2 * half)
            kap[slot(a)] = 1
            kap[slot(b)] = 1
            add(kap)
    out = out[:n_functions]
    return ProjectionSpec("finite-rank", tuple(out), labels=tuple(label(k) for k in out)), n_core


class HermiteBasis:
    """Evaluable basis {h^kappa} with the Liouvillian applied at initial data."""

    def __init__(self, spec: ProjectionSpec, g: DiagonalGaussian, p: Partition):
        if spec.kind != "finite-rank":
            raise ValueError("HermiteBasis needs a finite-rank spec")
        spec.validate()
        self.spec, self.g, self.p = spec, g, p
        idx = p.resolved_idx
        self.mu = g.mu[idx]
        self.scale = np.sqrt(2.0 / g.a[idx])
        self.wavenumbers = p.resolved_wavenumbers
        self.kappa = np.array(spec.indices, dtype=int)  # (nb, m)
        self.beta = np.array(spec.betas, dtype=float)
        self.max_order = int(self.kappa.max())

    @property
    def size(self) -> int:
        return len(self.kappa)

    def _XY(self, uhat):
        X = self.scale * (uhat.real - self.mu.real)
        Y = self.scale * (uhat.imag - self.mu.imag)
        return X, Y

    def _factors(self, uhat, deriv=False):
        """Per-function, per-coordinate factors (..., nb, m) (and derivative parts)."""
        X, Y = self._XY(uhat)
        shape = uhat.shape[:-1] + self.kappa.shape
        F = np.empty(shape, dtype=complex)
        dX = np.zeros(shape) if deriv else None
        dY = np.zeros(shape) if deriv else None
        for (b, j), order in np.ndenumerate(self.kappa):
            beta = self.beta[b, j]
            F[..., b, j] = hermite_tilde(order, X[..., j], beta) + 1j * hermite_tilde(order, Y[..., j], beta)
            if deriv:
                dX[..., b, j] = hermite_tilde_deriv(order, X[..., j], beta) * self.scale[j]
                dY[..., b, j] = hermite_tilde_deriv(order, Y[..., j], beta) * self.scale[j]
        return F, dX, dY

    def evaluate(self, uhat: np.ndarray) -> np.ndarray:
        """h^kappa at resolved m-vectors (..., m) -> (..., nb)."""
        uhat = np.asarray(uhat, dtype=complex)
        if np.any(self.beta):
            F, _, _ = self._factors(uhat)
            return np.prod(F, axis=-1)
        X, Y = self._XY(uhat)
        orders = range(self.max_order + 1)
        T = np.stack([hermite_tilde(o, X) + 1j * hermite_tilde(o, Y) for o in orders], axis=-1)  # (..., m, o)
        cols = np.arange(self.kappa.shape[1])
        F = T[..., cols[None, :], self.kappa]  # (..., nb, m)
        return np.prod(F, axis=-1)

    def directional(self, uhat: np.ndarray, vhat: np.ndarray) -> np.ndarray:
        """d/ds h^kappa(uhat + s vhat) at s = 0; vhat is the resolved part of R."""
        uhat = np.asarray(uhat, dtype=complex)
        F, dX, dY = self._factors(uhat, deriv=True)
        vhat = np.asarray(vhat, dtype=complex)[..., None, :]
        dF = dX * vhat.real + 1j * dY * vhat.imag
        m = F.shape[-1]
        total = np.zeros(F.shape[:-1], dtype=complex)
        for j in range(m):
            others = np.prod(np.delete(F, j, axis=-1), axis=-1)
            total += dF[..., j] * others
        return total

    def gradient(self, uhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Partial derivatives with respect to Re/Im of each resolved coordinate, (..., nb, m)."""
        uhat = np.asarray(uhat, dtype=complex)
        F, dX, dY = self._factors(uhat, deriv=True)
        m = F.shape[-1]
        gx = np.empty(F.shape, dtype=complex)
        gy = np.empty(F.shape, dtype=complex)
        for j in range(m):
            others = np.prod(np.delete(F, j, axis=-1), axis=-1)
            gx[..., j] = dX[..., j] * others
            gy[..., j] = 1j * dY[..., j] * others
        return gx, gy


class LinearBasis:
    """The resolved coordinates themselves."""

    def __init__(self, g: DiagonalGaussian, p: Partition):
        self.g, self.p = g, p
        self.spec = ProjectionSpec("linear")
        self.labels = tuple(str(int(k)) for k in p.resolved_wavenumbers)

    @property
    def size(self) -> int:
        return self.p.m

    def evaluate(self, uhat):
        return np.asarray(uhat, dtype=complex)

    def directional(self, uhat, vhat):
        return np.asarray(vhat, dtype=complex)


def hermite_basis(spec: ProjectionSpec, g: DiagonalGaussian, p: Partition):
    return LinearBasis(g, p) if spec.kind == "linear" else HermiteBasis(spec, g, p)


def gram_matrix_b(g: DiagonalGaussian, p: Partition) -> tuple[np.ndarray, np.ndarray]:
    """b_ij = E[u_i conj(u_j)] over resolved coordinates and its inverse."""
    idx = p.resolved_idx
    mu = g.mu[idx]
    b = np.diag(g.a[idx]).astype(complex) + np.outer(mu, mu.conj())
    return b, np.linalg.inv(b)
