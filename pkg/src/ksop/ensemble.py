"""Uniform random initial data, burn-in ensembles and moment diagnostics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .integrate import BdfConfig, IntegrationError, final_state
from .parallel import map_ordered
from .spectral import ModeState, SpectralParams, fmt, reality_fill
from .streams import stream

log = logging.getLogger(__name__)


def draw_uniform_ic(seed: int, params: SpectralParams, index: int = 0) -> ModeState:
    """Re and Im of each positive mode drawn independently from U(-1, 1)."""
    rng = stream(seed, "ic", index)
    h = len(params.positive)
    vals = rng.uniform(-1.0, 1.0, size=(2, h))
    u = np.zeros(params.N, dtype=complex)
    u[params.index(params.positive)] = vals[0] + 1j * vals[1]
    return ModeState(reality_fill(u, params), 0.0)


@dataclass
class SampleSet:
    samples: np.ndarray  # (n_samples, N) complex
    burn_time: float
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


def _burn_one(args):
    i, seed, burn_time, cfg, params = args
    ic = draw_uniform_ic(seed, params, i)
    try:
        return final_state(ic, burn_time, cfg, params).coeffs
    except IntegrationError as exc:
        raise IntegrationError(f"sample {i} (seed {seed}) failed: {exc}") from exc


def collect_samples(
    n_samples: int,
    burn_time: float,
    cfg: BdfConfig,
    params: SpectralParams,
    seed: int,
    jobs: int = 1,
) -> SampleSet:
    """Integrate ``n_samples`` uniform initial states to ``burn_time`` and record them."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    work = [(i, seed, burn_time, cfg, params) for i in range(n_samples)]
    states = map_ordered(_burn_one, work, jobs)
    return SampleSet(
        np.array(states),
        burn_time,
        seed,
        meta={"ic_draw": "uniform[-1,1] per real/imag component of positive modes"},
    )


def write_sample_set(path, s: SampleSet, params: SpectralParams) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# burn_time={fmt(s.burn_time)} seed={s.seed}\n")
        w = csv.writer(fh)
        w.writerow(["sample", "k", "re", "im"])
        for i, u in enumerate(s.samples):
            for k, c in zip(params.wavenumbers, u):
                w.writerow([i, int(k), fmt(c.real), fmt(c.imag)])


def read_sample_set(path, params: SpectralParams) -> SampleSet:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            meta = dict(kv.split("=") for kv in first[1:].split())
        else:
            fh.seek(0)
        rows = list(csv.DictReader(fh))
    n = 1 + max(int(r["sample"]) for r in rows)
    out = np.zeros((n, params.N), dtype=complex)
    for r in rows:
        out[int(r["sample"]), params.index(int(r["k"]))] = float(r["re"]) + 1j * float(r["im"])
    return SampleSet(out, float(meta.get("burn_time", "nan")), int(meta.get("seed", 0)))


@dataclass
class MomentReport:
    """Per positive mode and component: mean, variance, skewness, excess kurtosis.

    Arrays have shape (N/2 - 1, 2); column 0 is the real part, column 1 the
    imaginary part.  ``flat`` is NaN where the variance is zero.
    """

    k: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    skew: np.ndarray
    flat: np.ndarray
    cov_ratio: float = float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# offdiag_cov_ratio={fmt(self.cov_ratio)}\n")
            w = csv.writer(fh)
            w.writerow(["k", "component", "mean", "var", "skew", "flat"])
            for a, k in enumerate(self.k):
                for c, name in enumerate(("re", "im")):
                    cells = [self.mean[a, c], self.var[a, c], self.skew[a, c], self.flat[a, c]]
                    w.writerow([int(k), name] + ["" if np.isnan(x) else fmt(x) for x in cells])


def sample_moments(s: SampleSet | np.ndarray, params: SpectralParams) -> MomentReport:
    w = s.samples if isinstance(s, SampleSet) else np.asarray(s)
    if w.shape[0] < 4:
        raise ValueError("sample_moments needs at least 4 samples")
    pos = w[:, params.index(params.positive)]
    x = np.stack([pos.real, pos.imag], axis=-1)  # (n, h, 2)
    mean = x.mean(axis=0)
    d = x - mean
    var = (np.abs(d) ** 2).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(var > 0, (d**3).mean(axis=0) / var**1.5, np.nan)
        flat = np.where(var > 0, (d**4).mean(axis=0) / var**2 - 3.0, np.nan)
    return MomentReport(params.positive.copy(), mean, var, skew, flat, covariance_ratio(pos))


def covariance_ratio(pos: np.ndarray) -> float:
    """max off-diagonal |Cov| over min diagonal, 1/(n-1) sample covariance."""
    if pos.shape[0] < 2:
        return float("nan")
    C = np.cov(pos, rowvar=False)
    diag = np.real(np.diag(C))
    off = np.abs(C - np.diag(np.diag(C)))
    return float(off.max() / diag.min()) if diag.min() > 0 else float("inf")
