"""Fixed-step RK4 integration of the reduced equations.

Three variants share one stepping loop:

* ``galerkin``: the truncated system with unresolved modes held at zero;
* ``short-memory``: Markovian term + noise term + windowed memory integral;
* ``delta``: the memory integral collapsed onto the current resolved state.

Realizations are advanced together as a batch ``(R, N)``; each realization
draws its noise from its own stream, so results do not depend on how the
batch is split.  Noise is sampled on the path grid and held constant over
every RK4 step.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .integrate import IntegrationError
from .markov import MarkovianModel, closure_rhs_batch
from .memory import MemoryKernel
from .noise import NoiseModel, path_array, simulate_unresolved_path
from .spectral import SpectralParams, energy, fmt, reality_fill, rhs_array
from .streams import stream

log = logging.getLogger(__name__)

VARIANTS = ("galerkin", "markovian", "short-memory", "delta")
QUADRATURES = ("trapezoid", "simpson")
STAGES = (0.0, 0.5, 1.0)
ENERGY_LIMIT = 1e6


@dataclass(frozen=True)
class ReducedRunConfig:
    dt: float = 1e-3
    t_end: float = 5.0
    t0: float = 1.0
    quadrature: str = "trapezoid"
    variant: str = "short-memory"
    seed: int = 0
    sample_dt: float = 0.05

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t0 < 0:
            raise ValueError("t0 must be non-negative")
        if self.quadrature not in QUADRATURES:
            raise ValueError(f"quadrature must be one of {QUADRATURES}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        ratio = self.sample_dt / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("sample_dt must be a multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def window_steps(self) -> int:
        return int(round(self.t0 / self.dt))


@dataclass
class ReducedTrajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (R, T, N) full length, zero on unresolved modes
    realizations: tuple
    meta: dict = field(default_factory=dict)

    def mean(self) -> np.ndarray:
        """Realization average (T, N)."""
        return self.coeffs.mean(axis=0)

    def write_csv(self, path, params: SpectralParams, wavenumbers) -> None:
        write_trajectory_csv(path, self.times, self.coeffs, params, wavenumbers, self.realizations, self.meta)


def write_trajectory_csv(path, times, coeffs, params, wavenumbers, realizations, meta=None) -> None:
    coeffs = np.asarray(coeffs)
    if coeffs.ndim == 2:
        coeffs = coeffs[None]
    with open(path, "w", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow(["t", "k", "re", "im", "realization"])
        for r, traj in zip(realizations, coeffs):
            for t, u in zip(times, traj):
                for k in wavenumbers:
                    c = u[params.index(k)]
                    w.writerow([fmt(t), int(k), fmt(c.real), fmt(c.imag), r])


def read_trajectory_csv(path, params: SpectralParams):
    """Returns (times, coeffs (R, T, N), realizations)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    times = sorted({float(r["t"]) for r in rows})
    reals = sorted({r["realization"] for r in rows}, key=lambda x: (len(x), x))
    ti = {t: i for i, t in enumerate(times)}
    ri = {r: i for i, r in enumerate(reals)}
    out = np.zeros((len(reals), len(times), params.N), dtype=complex)
    for r in rows:
        out[ri[r["realization"]], ti[float(r["t"])], params.index(int(r["k"]))] = float(r["re"]) + 1j * float(r["im"])
    return np.array(times), out, tuple(reals)


# -- memory quadrature -----------------------------------------------------------


def quadrature_weights(n_points: int, h: float, rule: str) -> np.ndarray:
    """Weights for a uniform grid of ``n_points`` samples with spacing h.

    Simpson falls back to a trapezoid on the final interval when the
    interval count is odd.
    """
    if n_points <= 1:
        return np.zeros(n_points)
    w = np.full(n_points, h)
    w[0] = w[-1] = h / 2
    if rule == "trapezoid" or n_points < 3:
        return w
    n_int = n_points - 1
    even = n_int - (n_int % 2)
    ws = np.zeros(n_points)
    ws[: even + 1 : 2] = 2 * h / 3
    ws[1:even:2] = 4 * h / 3
    ws[0] = ws[even] = h / 3
    if even < n_int:
        ws[even] += h / 2
        ws[even + 1] += h / 2
    return ws


class HistoryBuffer:
    """Ring of basis values phi(uhat) at the last ``capacity`` steps.

    Every entry is written twice so the window is always one contiguous,
    chronologically ordered slice.
    """

    def __init__(self, capacity: int, R: int, nb: int):
        self.capacity = capacity
        self.buf = np.zeros((R, 2 * capacity, nb), dtype=complex)
        self.count = 0

    def push(self, phi: np.ndarray) -> None:
        i = self.count % self.capacity
        self.buf[:, i] = phi
        self.buf[:, i + self.capacity] = phi
        self.count += 1

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def window(self, n: int | None = None) -> np.ndarray:
        """Most recent ``n`` entries, oldest first, shape (R, n, nb)."""
        n = len(self) if n is None else n
        if n > len(self):
            raise ValueError("insufficient history")
        end = (self.count - 1) % self.capacity + self.capacity + 1
        return self.buf[:, end - n : end]


class MemoryQuadrature:
    """Memory integral at RK4 stage times ``t_n + c dt`` from the history buffer.

    History entry i (newest first) sits at lag ``s = (c + i) dt``.  For c > 0
    the piece ``[0, c dt]`` uses the stage value by the trapezoid rule.  The
    integral stops at ``min(t, t0)``: lags beyond it are dropped and a short
    trapezoid tail from the oldest retained lag up to ``t0`` uses the oldest
    history value at both ends.
    """

    def __init__(self, K: MemoryKernel, dt: float, t0: float, rule: str):
        self.dt, self.rule, self.t0 = dt, rule, t0
        self.K = K
        self.L = int(round(t0 / dt))
        self.mh, self.nb = K.K.shape[1], K.K.shape[2]
        self.tables = {c: K.at((c + np.arange(self.L + 1)) * dt) for c in STAGES}
        self.k0 = K.at([0.0])[0]
        self.k_end = K.at([t0])[0]
        self._cache = {}

    def n_points(self, c: float, n_hist: int, t: float) -> int:
        lim = min(t, self.t0) + 1e-9 * self.dt
        n_lim = int(math.floor(lim / self.dt - c)) + 1
        return max(0, min(n_hist, n_lim))

    def weights(self, c: float, n: int, tail: float = 0.0) -> np.ndarray:
        """Fused weight-kernel matrix (n * nb, m/2) for oldest-first history."""
        key = (c, n, round(tail / self.dt, 9))
        if key in self._cache:
            return self._cache[key]
        w = quadrature_weights(n, self.dt, self.rule)
        if c > 0 and n >= 1:
            w[0] += c * self.dt / 2
        W = (w[:, None, None] * self.tables[c][:n])[::-1]  # (n, mh, nb)
        if tail > 0:
            W[0] = W[0] + 0.5 * tail * (self.tables[c][n - 1] + self.k_end)
        W = np.ascontiguousarray(W.transpose(0, 2, 1).reshape(n * self.nb, self.mh))
        if n >= self.L:
            self._cache[key] = W
        return W

    def integral(self, hist: HistoryBuffer, c: float, t: float, phi_stage: np.ndarray | None) -> np.ndarray:
        """Returns (R, m/2) memory integrals for the positive resolved rows."""
        n = self.n_points(c, len(hist), t)
        R = hist.buf.shape[0]
        if n == 0:
            return np.zeros((R, self.mh), dtype=complex)
        tail = 0.0
        if t > self.t0:
            tail = max(0.0, self.t0 - (c + n - 1) * self.dt)
            if tail < 1e-9 * self.dt:
                tail = 0.0
        out = hist.window(n).reshape(R, n * self.nb) @ self.weights(c, n, tail)
        if c > 0:
            out += (c * self.dt / 2) * (phi_stage @ self.k0.T)
        return out


def memory_integral(hist: HistoryBuffer, K: MemoryKernel, t: float, quadrature: str, dt: float, t0: float | None = None) -> np.ndarray:
    """Memory integral at a history grid time ``t`` (stage offset 0)."""
    mq = MemoryQuadrature(K, dt, K.t0 if t0 is None else t0, quadrature)
    return mq.integral(hist, 0.0, t, None)


class DeltaKernel:
    """Running integral of K over [0, min(t, t0)], exact for the linear interpolant of K."""

    def __init__(self, K: MemoryKernel, t0: float):
        self.K, self.t0 = K, min(t0, K.t0)
        steps = 0.5 * (K.K[1:] + K.K[:-1]) * K.ds
        self.cum = np.concatenate([np.zeros((1,) + K.K.shape[1:], dtype=complex), np.cumsum(steps, axis=0)])

    def __call__(self, t: float) -> np.ndarray:
        K = self.K
        x = min(t, self.t0) / K.ds
        i = min(int(math.floor(x)), len(K.grid) - 2)
        w = x - i
        return self.cum[i] + w * K.ds * (K.K[i] + 0.5 * w * (K.K[i + 1] - K.K[i]))


# -- runners ---------------------------------------------------------------------


def _basis_for(K: MemoryKernel, mm: MarkovianModel):
    from .hermite import hermite_basis

    return hermite_basis(K.projection, mm.density, mm.partition)


def run_reduced(
    ic: np.ndarray,
    mm: MarkovianModel,
    K: MemoryKernel | None,
    nm: NoiseModel | None,
    cfg: ReducedRunConfig,
    realizations=(0,),
    params: SpectralParams | None = None,
) -> ReducedTrajectory:
    """Advance a batch of realizations of the chosen variant.

    ``ic`` is the resolved m-vector in partition order.
    """
    p = mm.partition
    params = params or mm.params
    realizations = tuple(realizations)
    R = len(realizations) if cfg.variant not in ("galerkin", "markovian") else 1
    mask = p.resolved_mask_full
    jpos = params.index(np.array(p.resolved_positive))
    jneg = params.index(-np.array(p.resolved_positive))
    u = np.repeat(p.embed(np.asarray(ic, dtype=complex))[None], R, axis=0)
    dt = cfg.dt
    n_steps = cfg.n_steps
    every = int(round(cfg.sample_dt / dt))

    use_noise = cfg.variant in ("short-memory", "delta") and nm is not None
    use_memory = cfg.variant in ("short-memory", "delta") and K is not None
    noise_full = np.zeros((R, 1, params.N), dtype=complex)
    path_dt = None
    if use_noise:
        path_dt = nm.dt
        horizon = cfg.t_end + path_dt
        paths = []
        for r in realizations:
            pr = simulate_unresolved_path(nm, horizon, path_dt, stream(cfg.seed, "noise", r))
            paths.append(path_array(nm, pr, params))
        noise_full = np.stack(paths)
    basis = _basis_for(K, mm) if use_memory else None
    mq = hist = kbar = None
    if use_memory and cfg.variant == "short-memory":
        mq = MemoryQuadrature(K, dt, cfg.t0, cfg.quadrature)
        hist = HistoryBuffer(mq.L + 1, R, basis.size)
        hist.push(basis.evaluate(p.restrict(u)))
    elif use_memory:
        kbar = DeltaKernel(K, cfg.t0)

    def full_from_pos(vals):
        out = np.zeros((R, params.N), dtype=complex)
        out[:, jpos] = vals
        out[:, jneg] = vals.conj()
        return out

    def rhs(uu, t, c, noise):
        if cfg.variant == "galerkin":
            r = rhs_array(uu, params)
            return reality_fill(np.where(mask, r, 0.0), params)
        r = closure_rhs_batch(mm, uu, noise if use_noise else None)
        if use_memory:
            phi = basis.evaluate(p.restrict(uu))
            if cfg.variant == "short-memory":
                mem = mq.integral(hist, c, t, phi)
            else:
                mem = phi @ kbar(t).T
            r = r + full_from_pos(mem)
        return r

    times = [0.0]
    out = [u.copy()]
    for n in range(n_steps):
        t = n * dt
        if use_noise:
            idx = min(int(math.floor(t / path_dt + 1e-9)), noise_full.shape[1] - 1)
            noise = noise_full[:, idx]
        else:
            noise = None
        k1 = rhs(u, t, 0.0, noise)
        k2 = rhs(u + 0.5 * dt * k1, t + 0.5 * dt, 0.5, noise)
        k3 = rhs(u + 0.5 * dt * k2, t + 0.5 * dt, 0.5, noise)
        k4 = rhs(u + dt * k3, t + dt, 1.0, noise)
        u = reality_fill(u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), params)
        u[:, ~mask] = 0.0
        if hist is not None:
            hist.push(basis.evaluate(p.restrict(u)))
        if (n + 1) % every == 0:
            e = energy(u)
            if not np.all(np.isfinite(e)) or np.max(e) > ENERGY_LIMIT:
                raise IntegrationError(f"reduced {cfg.variant} run unstable at t={(n + 1) * dt:.4g}")
            times.append((n + 1) * dt)
            out.append(u.copy())
    coeffs = np.stack(out, axis=1)
    meta = {
        "variant": cfg.variant,
        "dt": fmt(dt),
        "t0": fmt(cfg.t0),
        "quadrature": cfg.quadrature,
        "noise_sampling": "sample-and-hold on path grid" if use_noise else "none",
        "path_dt": fmt(path_dt) if path_dt else "",
        "seed": cfg.seed,
    }
    reals = realizations if R == len(realizations) else (realizations[0],)
    return ReducedTrajectory(np.array(times), coeffs, reals, meta)


def run_galerkin(ic, cfg: ReducedRunConfig, mm: MarkovianModel) -> ReducedTrajectory:
    from dataclasses import replace

    return run_reduced(ic, mm, None, None, replace(cfg, variant="galerkin"))


def run_op_realization(ic, mm, K, nm, cfg: ReducedRunConfig, realization: int = 0) -> ReducedTrajectory:
    from dataclasses import replace

    return run_reduced(ic, mm, K, nm, replace(cfg, variant="short-memory"), (realization,))


def run_delta_realization(ic, mm, K, nm, cfg: ReducedRunConfig, realization: int = 0) -> ReducedTrajectory:
    from dataclasses import replace

    return run_reduced(ic, mm, K, nm, replace(cfg, variant="delta"), (realization,))
