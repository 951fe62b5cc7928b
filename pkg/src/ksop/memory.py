"""Monte-Carlo estimation of short-memory kernels.

For initial data u0 drawn from the density and the full flow u(s), the
projected memory integrand for equation j expands on the basis {phi_i} as

    gamma_{j,i}(s) = E[dA_j/ds(s) conj(phi_i(u0))]
                     - sum_l c_{j,l}(s) E[(L phi_l)(u0) conj(phi_i(u0))],
    c_{j,l}(s)     = sum_i' E[A_j(s) conj(phi_i'(u0))] binv[i', l],

and the kernel coefficient on phi_k is K_{j,k}(s) = sum_i gamma_{j,i}(s) binv[i, k]
with ``b_ik = E[phi_i conj(phi_k)]``.  dA_j/ds along the flow equals
sum_l R_l(u(s)) dA_j/du_l.  All three averages are linear in the samples, so
they are accumulated in one sweep over a shared ensemble.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .gaussian import DiagonalGaussian, Partition
from .hermite import ProjectionSpec, gram_matrix_b, hermite_basis
from .integrate import BdfConfig, IntegrationError, integrate_full, sample_grid
from .markov import MarkovianModel, noise_term_full, noise_term_rate
from .parallel import map_ordered
from .spectral import ModeState, fmt, rhs_array
from .streams import stream

log = logging.getLogger(__name__)

CHUNK = 25


@dataclass
class MemoryKernel:
    grid: np.ndarray  # (G+1,)
    K: np.ndarray  # (G+1, m/2, nb) rows: positive resolved j
    j_wavenumbers: np.ndarray
    b_inv: np.ndarray
    t0: float
    projection: ProjectionSpec
    labels: tuple
    meta: dict = field(default_factory=dict)

    @property
    def ds(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def integral(self) -> np.ndarray:
        """int_0^{t0} K(s) ds by the trapezoid rule on the grid."""
        return np.trapezoid(self.K, self.grid, axis=0)

    def at(self, s) -> np.ndarray:
        """Linear interpolation in s; zero outside [0, t0]."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x = s / self.ds
        i = np.clip(np.floor(x).astype(int), 0, len(self.grid) - 2)
        w = (x - i)[:, None, None]
        out = (1 - w) * self.K[i] + w * self.K[i + 1]
        out[(s < -1e-12) | (s > self.t0 + 1e-12)] = 0.0
        return out

    def scaled(self, factor: float) -> "MemoryKernel":
        return MemoryKernel(self.grid, self.K * factor, self.j_wavenumbers, self.b_inv, self.t0,
                            self.projection, self.labels, dict(self.meta))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for key, val in self.meta_lines().items():
                fh.write(f"# {key}={val}\n")
            w = csv.writer(fh)
            w.writerow(["s", "j", "i", "re", "im"])
            for a, s in enumerate(self.grid):
                for b, j in enumerate(self.j_wavenumbers):
                    for i in range(self.K.shape[2]):
                        c = self.K[a, b, i]
                        w.writerow([fmt(s), int(j), i, fmt(c.real), fmt(c.imag)])

    def meta_lines(self) -> dict:
        out = {"projection": self.projection.kind, "t0": fmt(self.t0), "ds": fmt(self.ds)}
        out.update({k: v for k, v in self.meta.items()})
        out["basis"] = ";".join(self.labels)
        if self.projection.kind == "finite-rank":
            out["indices"] = ";".join(",".join(str(x) for x in kap) for kap in self.projection.indices)
        return out

    @classmethod
    def read_csv(cls, path, g: DiagonalGaussian, p: Partition) -> "MemoryKernel":
        meta, rows = {}, []
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                key, _, val = line[2:].partition("=")
                meta[key] = val
            else:
                body.append(line)
        rows = list(csv.DictReader(body))
        s_vals = sorted({float(r["s"]) for r in rows})
        js = sorted({int(r["j"]) for r in rows})
        nb = 1 + max(int(r["i"]) for r in rows)
        K = np.zeros((len(s_vals), len(js), nb), dtype=complex)
        s_index = {s: a for a, s in enumerate(s_vals)}
        for r in rows:
            K[s_index[float(r["s"])], js.index(int(r["j"])), int(r["i"])] = float(r["re"]) + 1j * float(r["im"])
        kind = meta.get("projection", "linear")
        if kind == "linear":
            spec = ProjectionSpec("linear")
            _, binv = gram_matrix_b(g, p)
        else:
            idx = tuple(tuple(int(x) for x in s.split(",")) for s in meta["indices"].split(";"))
            spec = ProjectionSpec("finite-rank", idx)
            binv = np.eye(nb, dtype=complex)
        labels = tuple(meta.get("basis", "").split(";"))
        extra = {k: v for k, v in meta.items() if k not in ("projection", "t0", "ds", "basis", "indices")}
        return cls(np.array(s_vals), K, np.array(js), binv, float(meta["t0"]), spec, labels, extra)


def zero_kernel(p: Partition, t0: float = 1.0, ds: float = 0.01) -> MemoryKernel:
    grid = sample_grid(0.0, t0, ds)
    m = p.m
    return MemoryKernel(grid, np.zeros((len(grid), m // 2, m), dtype=complex),
                        np.array(p.resolved_positive), np.eye(m, dtype=complex), t0,
                        ProjectionSpec("linear"), tuple(str(int(k)) for k in p.resolved_wavenumbers))


@dataclass
class KernelSums:
    """Un-normalised sums over an ensemble chunk."""

    adot_phi: np.ndarray  # (G+1, m/2, nb)
    a_phi: np.ndarray  # (G+1, m/2, nb)
    lphi_phi: np.ndarray  # (nb, nb)
    n: int

    def __add__(self, other):
        return KernelSums(self.adot_phi + other.adot_phi, self.a_phi + other.a_phi,
                          self.lphi_phi + other.lphi_phi, self.n + other.n)


def sample_contributions(traj: np.ndarray, mm: MarkovianModel, basis):
    """Per-trajectory terms: A_j(s), dA_j/ds(s), phi(u0), (L phi)(u0)."""
    params, p = mm.params, mm.partition
    jpos = params.index(np.array(p.resolved_positive))
    v = rhs_array(traj, params)
    A = noise_term_full(mm, traj, traj)[:, jpos]
    Adot = noise_term_rate(mm, traj, v)[:, jpos]
    uhat0 = p.restrict(traj[0])
    phi = basis.evaluate(uhat0)
    lphi = basis.directional(uhat0, p.restrict(v[0]))
    return A, Adot, phi, lphi


def _chunk(args):
    start, stop, g, p, spec, grid_ds, t0, cfg, seed = args
    mm = MarkovianModel.build(g, p)
    basis = hermite_basis(spec, g, p)
    params = g.params
    G = len(sample_grid(0.0, t0, grid_ds))
    mh = len(p.resolved_positive)
    nb = basis.size
    acc = KernelSums(np.zeros((G, mh, nb), complex), np.zeros((G, mh, nb), complex),
                     np.zeros((nb, nb), complex), 0)
    for i in range(start, stop):
        u0 = g.sample(stream(seed, "kernel", i), 1)[0]
        try:
            traj = integrate_full(ModeState(u0, 0.0), t0, cfg, params, grid_ds).coeffs
        except IntegrationError as exc:
            raise IntegrationError(f"kernel sample {i} (seed {seed}) failed: {exc}") from exc
        A, Adot, phi, lphi = sample_contributions(traj, mm, basis)
        pc = phi.conj()
        acc.adot_phi += Adot[:, :, None] * pc
        acc.a_phi += A[:, :, None] * pc
        acc.lphi_phi += np.outer(lphi, pc)
        acc.n += 1
    return acc


def assemble_kernel(sums: KernelSums, b_inv: np.ndarray):
    """Kernel coefficients from accumulated ensemble sums."""
    n = sums.n
    e_adot = sums.adot_phi / n
    alpha = sums.a_phi / n
    D = sums.lphi_phi / n
    c = alpha @ b_inv  # c[s, j, l] = sum_i alpha[s, j, i] binv[i, l]
    gamma = e_adot - c @ D
    return gamma @ b_inv, alpha


def estimate_memory_kernel(
    g: DiagonalGaussian,
    p: Partition,
    spec: ProjectionSpec,
    n_mc: int,
    grid_ds: float = 0.01,
    t0: float = 1.0,
    cfg: BdfConfig | None = None,
    seed: int = 0,
    jobs: int = 1,
) -> MemoryKernel:
    """Estimate K_{j,k}(s) on s = 0, ds, ..., t0 from ``n_mc`` full-system runs."""
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    cfg = cfg or BdfConfig()
    work = [(a, min(a + CHUNK, n_mc), g, p, spec, grid_ds, t0, cfg, seed) for a in range(0, n_mc, CHUNK)]
    parts = map_ordered(_chunk, work, jobs)
    sums = parts[0]
    for part in parts[1:]:
        sums = sums + part
    basis = hermite_basis(spec, g, p)
    if spec.kind == "linear":
        _, b_inv = gram_matrix_b(g, p)
        labels = basis.labels
    else:
        b_inv = np.eye(basis.size, dtype=complex)
        labels = spec.labels
    K, _ = assemble_kernel(sums, b_inv)
    grid = sample_grid(0.0, t0, grid_ds)
    meta = {"n_mc": n_mc, "seed": seed}
    return MemoryKernel(grid, K, np.array(p.resolved_positive), b_inv, t0, spec, labels, meta)


def decay_report(kernel: MemoryKernel, ratio: float = 0.2, s_check: float | None = None):
    """Per (j, i): does |K(s_check)| <= ratio * max_s |K(s)|?  Returns (mask, fraction)."""
    s_check = kernel.t0 if s_check is None else s_check
    a = int(round(s_check / kernel.ds))
    mag = np.abs(kernel.K)
    peak = mag.max(axis=0)
    ok = mag[a] <= ratio * peak
    return ok, float(ok.mean())
