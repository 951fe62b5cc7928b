"""Markovian term and the resolved-unresolved noise term A_j.

All functions work on stacked full-length coefficient arrays ``(..., N)``
so a batch of realizations or a whole trajectory is evaluated at once.
Only resolved-unresolved products enter ``A_j``; unresolved-unresolved
products are kept in the Markovian term alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .gaussian import (
    ConditionalAffine,
    ConditionalCov,
    DiagonalGaussian,
    Partition,
    conditional_affine,
    conditional_covariance,
)
from .spectral import from_physical, product_dealiased, reality_fill, to_physical


@dataclass(frozen=True)
class MarkovianModel:
    density: DiagonalGaussian
    partition: Partition
    affine: ConditionalAffine
    cov: ConditionalCov

    @classmethod
    def build(cls, g: DiagonalGaussian, p: Partition) -> "MarkovianModel":
        return cls(g, p, conditional_affine(g, p), conditional_covariance(g, p))

    @property
    def params(self):
        return self.density.params

    @cached_property
    def unresolved_mean_full(self) -> np.ndarray:
        """Full-length vector holding mu on unresolved modes, 0 elsewhere."""
        g, p = self.density, self.partition
        out = np.zeros(self.params.N, dtype=complex)
        out[self.params.index(p.unresolved_wavenumbers)] = g.mu[p.unresolved_idx]
        return out

    @cached_property
    def pseudo_cov_sum(self) -> np.ndarray:
        """sum_{k'} E[(u_k' - m_k')(u_{j-k'} - m_{j-k'}) | uhat] for every j (full length).

        Independent of the resolved values for a Gaussian; vanishes at j != 0
        for a diagonal density but is kept general.
        """
        params, g = self.params, self.density
        V = self.cov.V
        pos_of = {int(k): i for i, k in enumerate(g.wavenumbers)}
        out = np.zeros(params.N, dtype=complex)
        for j in params.wavenumbers:
            s = 0j
            for a, ia in pos_of.items():
                b = int(j) - a
                if b in pos_of:
                    s += V[ia, g.conj_index[pos_of[b]]]
            out[params.index(j)] = s
        return out

    @cached_property
    def unresolved_mean_physical(self) -> np.ndarray:
        return to_physical(self.unresolved_mean_full)

    def conditional_mean_full(self, uhat_full: np.ndarray) -> np.ndarray:
        """E[u | uhat] as a full-length array from a full-length resolved array."""
        g, p = self.density, self.partition
        uhat = p.restrict(uhat_full)
        m = self.affine.mean(uhat)
        return g.from_d(m)

    def resolved_full(self, u: np.ndarray) -> np.ndarray:
        """Zero every unresolved entry of a full-length array."""
        return np.where(self.partition.resolved_mask_full, u, 0.0)


def _finish(values: np.ndarray, mm: MarkovianModel) -> np.ndarray:
    out = np.where(mm.partition.resolved_mask_full, values, 0.0)
    return reality_fill(out, mm.params)


def markovian_rhs_full(mm: MarkovianModel, uhat_full: np.ndarray) -> np.ndarray:
    """E[R_j(u) | uhat] for all resolved j, zero elsewhere (full-length output)."""
    params = mm.params
    k = params.wavenumbers
    m = mm.conditional_mean_full(uhat_full)
    S = product_dealiased(m, m) + mm.pseudo_cov_sum
    r = -0.5j * k * S + params.linear_rates * uhat_full
    return _finish(r, mm)


def markovian_rhs(mm: MarkovianModel, resolved_values, j: int) -> complex:
    """Markovian term for resolved wavenumber ``j``; ``resolved_values`` in partition order."""
    if j not in set(mm.partition.resolved_wavenumbers.tolist()):
        raise ValueError(f"{j} is not a resolved wavenumber")
    full = mm.partition.embed(np.asarray(resolved_values, dtype=complex))
    return complex(markovian_rhs_full(mm, full)[mm.params.index(j)])


def markovian_rhs_batch(mm: MarkovianModel, uhat_full: np.ndarray) -> np.ndarray:
    """Fast path for a diagonal density: unresolved modes sit at their means."""
    params = mm.params
    m = uhat_full + mm.unresolved_mean_full
    S = product_dealiased(m, m) + mm.pseudo_cov_sum
    r = -0.5j * params.wavenumbers * S + params.linear_rates * uhat_full
    return _finish(r, mm)


def noise_term_full(mm: MarkovianModel, uhat_full: np.ndarray, unres_full: np.ndarray) -> np.ndarray:
    """A_j = -i j sum_k' rho_k' r_{j-k'} with rho resolved, r unresolved minus its mean.

    The factor 2 of the symmetric double sum is absorbed: -(ij/2) * 2.
    ``unres_full`` carries unresolved values (resolved entries are ignored).
    """
    p = mm.partition
    rho = np.where(p.resolved_mask_full, uhat_full, 0.0)
    r = np.where(p.resolved_mask_full, 0.0, unres_full - mm.unresolved_mean_full)
    S = product_dealiased(rho, r)
    return _finish(-1j * mm.params.wavenumbers * S, mm)


def noise_term_A(resolved_values, unresolved_path_values, mm: MarkovianModel, j: int) -> complex:
    """A_j from the resolved m-vector and a full-length array of unresolved values."""
    full = mm.partition.embed(np.asarray(resolved_values, dtype=complex))
    return complex(noise_term_full(mm, full, np.asarray(unresolved_path_values))[mm.params.index(j)])


def noise_term_rate(mm: MarkovianModel, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d/ds A_j(u(s)) given u and v = du/ds (full-length, stacked)."""
    p = mm.partition
    res = p.resolved_mask_full
    rho_u = np.where(res, u, 0.0)
    rho_v = np.where(res, v, 0.0)
    r_u = np.where(res, 0.0, u - mm.unresolved_mean_full)
    r_v = np.where(res, 0.0, v)
    S = product_dealiased(rho_v, r_u) + product_dealiased(rho_u, r_v)
    return _finish(-1j * mm.params.wavenumbers * S, mm)


def closure_rhs_batch(mm: MarkovianModel, uhat_full: np.ndarray, unres_full: np.ndarray | None = None) -> np.ndarray:
    """Markovian term plus, when ``unres_full`` is given, the noise term A.

    Same result as ``markovian_rhs_batch + noise_term_full`` with three FFTs
    instead of six: the conditional mean is the resolved field plus a
    constant, so both products share its values on the padded grid.
    """
    params = mm.params
    k = params.wavenumbers
    rho = mm.resolved_full(uhat_full)
    rho_x = to_physical(rho)
    m_x = rho_x + mm.unresolved_mean_physical
    prod = 0.5 * m_x * m_x
    if unres_full is not None:
        r = np.where(mm.partition.resolved_mask_full, 0.0, unres_full - mm.unresolved_mean_full)
        prod = prod + rho_x * to_physical(r)
    S = from_physical(prod, params.N)
    out = -1j * k * S - 0.5j * k * mm.pseudo_cov_sum + params.linear_rates * rho
    return _finish(out, mm)
