"""Pipeline stages shared by the CLI and the acceptance suite."""

from __future__ import annotations

import configparser
import csv
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .ensemble import collect_samples, read_sample_set, sample_moments, write_sample_set
from .gaussian import DiagonalGaussian, fit_diagonal_gaussian, sample_conditional
from .hermite import ProjectionSpec, default_finite_rank_set
from .integrate import IntegrationError, integrate_full
from .markov import MarkovianModel
from .memory import MemoryKernel, estimate_memory_kernel
from .noise import AutocorrTable, NoiseModel, autocorrelation_sum, build_noise_model, table_from_sum
from .parallel import map_ordered
from .reduced import ReducedRunConfig, read_trajectory_csv, run_reduced, write_trajectory_csv
from .spectral import ModeState, fmt
from .streams import stream

log = logging.getLogger(__name__)

AUTOCORR_CHUNK = 500


# -- manifest -----------------------------------------------------------------------


def update_manifest(cfg: ExperimentConfig, out_dir, command: str, extra: dict | None = None) -> None:
    path = cfg.path("manifest", out_dir)
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if path.exists():
        cp.read(path)
    if not cp.has_section("config"):
        cp.add_section("config")
    for k, v in cfg.knobs().items():
        cp["config"][k] = str(v)
    cp["config"]["ic_draw"] = "uniform[-1,1] per real/imag component of positive modes"
    cp["config"]["noise_sampling"] = "sample-and-hold on the autocorrelation grid"
    cp["config"]["rng"] = "SeedSequence(seed, spawn_key=(crc32(tag), index))"
    if cp.has_section(command):
        cp.remove_section(command)
    cp.add_section(command)
    for k, v in (extra or {}).items():
        cp[command][k] = str(v)
    with open(path, "w") as fh:
        cp.write(fh)


# -- stages -------------------------------------------------------------------------


def stage_sample(cfg: ExperimentConfig, out_dir, jobs: int = 1):
    e = cfg.ensemble
    s = collect_samples(e.n_samples, e.burn_time, cfg.bdf, cfg.params, cfg.seed, jobs)
    write_sample_set(cfg.path("samples", out_dir), s, cfg.params)
    mr = sample_moments(s, cfg.params)
    mr.write_csv(cfg.path("moments", out_dir))
    update_manifest(cfg, out_dir, "sample", {"n_samples": s.n_samples, "offdiag_cov_ratio": fmt(mr.cov_ratio)})
    return s, mr


def stage_fit(cfg: ExperimentConfig, out_dir):
    s = read_sample_set(cfg.path("samples", out_dir), cfg.params)
    g = fit_diagonal_gaussian(s, cfg.params)
    g.write_csv(cfg.path("density", out_dir))
    update_manifest(cfg, out_dir, "fit-density", {"n_samples": s.n_samples, "normaliser": "1/n"})
    return g


def load_density(cfg, out_dir) -> DiagonalGaussian:
    path = cfg.path("density", out_dir)
    if not path.exists():
        raise FileNotFoundError(f"density file {path} missing; run fit-density first")
    return DiagonalGaussian.read_csv(path, cfg.params)


def _density_run(args):
    i, g, horizon, dtau, bdf, seed = args
    u0 = g.sample(stream(seed, "autocorr", i), 1)[0]
    return integrate_full(ModeState(u0, 0.0), horizon, bdf, g.params, dtau).coeffs


def density_trajectories(g: DiagonalGaussian, n: int, horizon: float, dtau: float, bdf, seed: int, jobs: int = 1,
                         start: int = 0):
    """Full runs from density draws ``start .. start + n - 1``, (n, T, N)."""
    work = [(i, g, horizon, dtau, bdf, seed) for i in range(start, start + n)]
    return np.array(map_ordered(_density_run, work, jobs))


def compute_autocorrelations(cfg: ExperimentConfig, g: DiagonalGaussian, jobs: int = 1) -> list:
    """Tables for every positive mode; they depend on the density only, not the partition."""
    e = cfg.ensemble
    ks = cfg.params.positive
    means = {int(k): np.array([g.mu[g.pos(k)].real, g.mu[g.pos(k)].imag]) for k in ks}
    sums = {}
    for a in range(0, e.n_autocorr, AUTOCORR_CHUNK):
        n = min(AUTOCORR_CHUNK, e.n_autocorr - a)
        trajs = density_trajectories(g, n, e.autocorr_horizon, e.autocorr_dt, cfg.bdf, cfg.seed, jobs, start=a)
        for k in ks:
            x = trajs[:, :, cfg.params.index(k)]
            S = autocorrelation_sum(np.stack([x.real, x.imag], -1), means[int(k)])
            sums[int(k)] = S if a == 0 else sums[int(k)] + S
    return [table_from_sum(sums[k], e.n_autocorr, k, e.autocorr_dt, means[k]) for k in sorted(sums)]


def write_autocorr(path, tables) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# dtau={fmt(tables[0].dtau)} n_traj={tables[0].n_traj}\n")
        w = csv.writer(fh)
        w.writerow(["k", "component", "lag", "R"])
        for t in tables:
            for c, name in enumerate(("re", "im")):
                for lag, r in enumerate(t.R[c]):
                    w.writerow([t.k, name, fmt(lag * t.dtau), fmt(r)])


def read_autocorr(path, g: DiagonalGaussian) -> list:
    with open(path, newline="") as fh:
        header = fh.readline()
        meta = dict(kv.split("=") for kv in header[1:].split())
        rows = list(csv.DictReader(fh))
    dtau = float(meta["dtau"])
    data = {}
    for r in rows:
        data.setdefault(int(r["k"]), {"re": [], "im": []})[r["component"]].append(float(r["R"]))
    out = []
    for k in sorted(data):
        mu = g.mu[g.pos(k)]
        R = np.array([data[k]["re"], data[k]["im"]])
        out.append(AutocorrTable(k, dtau, R, int(meta["n_traj"]), np.array([mu.real, mu.imag])))
    return out


def stage_autocorr(cfg, out_dir, jobs: int = 1):
    g = load_density(cfg, out_dir)
    tables = compute_autocorrelations(cfg, g, jobs)
    write_autocorr(cfg.path("autocorr", out_dir), tables)
    warns = [w for t in tables for w in t.warnings]
    update_manifest(cfg, out_dir, "autocorr", {"n_traj": cfg.ensemble.n_autocorr, "warnings": "; ".join(warns)})
    return tables


def stage_noise(cfg, out_dir):
    g = load_density(cfg, out_dir)
    unresolved = set(cfg.partition().unresolved_positive)
    tables = [t for t in read_autocorr(cfg.path("autocorr", out_dir), g) if t.k in unresolved]
    missing = unresolved - {t.k for t in tables}
    if missing:
        raise ValueError(f"autocorrelation file lacks modes {sorted(missing)}")
    n_w = None if cfg.ensemble.noise_window < 0 else cfg.ensemble.noise_window
    nm = build_noise_model(tables, cfg.ensemble.autocorr_dt, n_w)
    nm.write_weights_csv(cfg.path("noise", out_dir))
    windows = {k: nm.modes[k][0].n_w for k in nm.modes}
    update_manifest(cfg, out_dir, "noise-model", {"windows": windows})
    return nm


def load_noise(cfg, out_dir, g: DiagonalGaussian) -> NoiseModel:
    path = cfg.path("noise", out_dir)
    if not path.exists():
        raise FileNotFoundError(f"noise file {path} missing; run noise-model first")
    means = {int(k): complex(g.mu[g.pos(k)]) for k in cfg.partition().unresolved_positive}
    return NoiseModel.read_weights_csv(path, means)


def projection_for(cfg, p) -> ProjectionSpec:
    if cfg.ensemble.projection == "linear":
        return ProjectionSpec("linear")
    if cfg.ensemble.projection == "finite-rank":
        return default_finite_rank_set(p)[0]
    raise ValueError(f"unknown projection {cfg.ensemble.projection!r}")


def stage_kernel(cfg, out_dir, jobs: int = 1):
    g = load_density(cfg, out_dir)
    p = cfg.partition()
    spec = projection_for(cfg, p)
    e = cfg.ensemble
    K = estimate_memory_kernel(g, p, spec, e.n_mc, e.kernel_ds, cfg.reduced.t0, cfg.bdf, cfg.seed, jobs)
    K.write_csv(cfg.path("kernel", out_dir))
    update_manifest(cfg, out_dir, "kernel", {"projection": spec.kind, "n_basis": len(K.labels), "n_mc": e.n_mc})
    return K


def _truth_member(args):
    i, g, p, ic, horizon, sample_dt, bdf, seed = args
    u0 = sample_conditional(g, p, ic, stream(seed, "truth", i), 1)[0]
    try:
        return integrate_full(ModeState(u0, 0.0), horizon, bdf, g.params, sample_dt).coeffs
    except IntegrationError as exc:
        raise IntegrationError(f"truth member {i} (seed {seed}, stream 'truth') failed: {exc}") from exc


def truth_ensemble(cfg, g, jobs: int = 1) -> np.ndarray:
    """Resolved coordinates of every truth member, (n_truth, T, N)."""
    p = cfg.partition()
    ic = cfg.ic_vector()
    r = cfg.reduced
    work = [(i, g, p, ic, r.t_end, r.sample_dt, cfg.bdf, cfg.seed) for i in range(cfg.ensemble.n_truth)]
    members = np.array(map_ordered(_truth_member, work, jobs))
    return np.where(p.resolved_mask_full, members, 0.0)


def stage_truth(cfg, out_dir, jobs: int = 1):
    g = load_density(cfg, out_dir)
    members = truth_ensemble(cfg, g, jobs)
    mean = members.mean(axis=0)
    times = cfg.reduced.sample_dt * np.arange(mean.shape[0])
    p = cfg.partition()
    write_trajectory_csv(cfg.path("truth", out_dir), times, mean, cfg.params, p.resolved_wavenumbers, ("mean",),
                         {"n_truth": cfg.ensemble.n_truth})
    update_manifest(cfg, out_dir, "truth", {"n_truth": cfg.ensemble.n_truth})
    return times, mean


def _estimate_batch(args):
    ic, mm, K, nm, rcfg, reals = args
    out = run_reduced(ic, mm, K, nm, rcfg, reals)
    return out.times, out.coeffs.sum(axis=0), out.coeffs.shape[0], out.meta


def run_estimate(cfg, g, K, nm, variant: str, jobs: int = 1):
    """Realization-averaged estimate (T, N) for a variant."""
    p = cfg.partition()
    mm = MarkovianModel.build(g, p)
    rcfg = replace(cfg.reduced, variant=variant, seed=cfg.seed)
    ic = cfg.ic_vector()
    if variant in ("galerkin", "markovian"):
        out = run_reduced(ic, mm, None, None, rcfg)
        return out.times, out.coeffs[0], out.meta
    n = cfg.ensemble.n_real
    b = cfg.ensemble.batch
    work = [(ic, mm, K, nm, rcfg, tuple(range(a, min(a + b, n)))) for a in range(0, n, b)]
    parts = map_ordered(_estimate_batch, work, jobs)
    total = parts[0][1]
    for part in parts[1:]:
        total = total + part[1]
    return parts[0][0], total / n, parts[0][3]


def stage_estimate(cfg, out_dir, variant: str, jobs: int = 1):
    g = load_density(cfg, out_dir)
    p = cfg.partition()
    K = nm = None
    if variant in ("short-memory", "delta"):
        kpath = cfg.path("kernel", out_dir)
        if not kpath.exists():
            raise FileNotFoundError(f"kernel file {kpath} missing; run kernel first")
        K = MemoryKernel.read_csv(kpath, g, p)
        nm = load_noise(cfg, out_dir, g)
    times, mean, meta = run_estimate(cfg, g, K, nm, variant, jobs)
    meta = dict(meta, n_real=cfg.ensemble.n_real if variant in ("short-memory", "delta") else 1)
    write_trajectory_csv(cfg.path("estimate", out_dir, variant=variant), times, mean, cfg.params,
                         p.resolved_wavenumbers, ("mean",), meta)
    update_manifest(cfg, out_dir, f"estimate-{variant}", meta)
    return times, mean


# -- comparison ---------------------------------------------------------------------


def error_report(times, truth, estimates: dict, wavenumbers, params, horizon: float):
    """Pointwise errors and time-averaged L2 errors over [0, horizon].

    Returns (pointwise rows, summary dict {(variant, k, component): value}).
    The time average is the trapezoid mean of |error|^2, square-rooted;
    component ``abs`` uses the complex modulus.
    """
    times = np.asarray(times)
    sel = times <= horizon + 1e-9
    rows, summary = [], {}
    for variant, est in estimates.items():
        if est.shape != truth.shape:
            raise ValueError(f"grid mismatch for {variant}")
        for k in wavenumbers:
            d = est[:, params.index(k)] - truth[:, params.index(k)]
            parts = {"re": np.abs(d.real), "im": np.abs(d.imag), "abs": np.abs(d)}
            for comp, e in parts.items():
                for t, v in zip(times, e):
                    rows.append((variant, int(k), comp, t, v))
                span = times[sel][-1] - times[sel][0]
                summary[(variant, int(k), comp)] = float(np.sqrt(np.trapezoid(e[sel] ** 2, times[sel]) / span)) if span > 0 else float(e[0])
    return rows, summary


def ordering_holds(summary: dict, modes=(1, 2, 3)) -> bool:
    return all(summary[("short-memory", k, "abs")] < summary[("galerkin", k, "abs")] for k in modes)


def stage_compare(cfg, out_dir):
    params = cfg.params
    p = cfg.partition()
    tpath = cfg.path("truth", out_dir)
    if not tpath.exists():
        raise FileNotFoundError(f"truth file {tpath} missing; run truth first")
    times, truth, _ = read_trajectory_csv(tpath, params)
    truth = truth[0]
    estimates = {}
    for variant in ("galerkin", "markovian", "short-memory", "delta"):
        path = cfg.path("estimate", out_dir, variant=variant)
        if path.exists():
            t2, est, _ = read_trajectory_csv(path, params)
            if len(t2) != len(times) or np.max(np.abs(np.asarray(t2) - times)) > 1e-9:
                raise ValueError(f"grid mismatch between truth and {variant}")
            estimates[variant] = est[0]
    if not estimates:
        raise FileNotFoundError("no estimate files found; run estimate first")
    positive = np.array(p.resolved_positive)
    rows, summary = error_report(times, truth, estimates, positive, params, cfg.compare_horizon)
    with open(cfg.path("errors", out_dir), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "k", "component", "t", "error"])
        for v, k, c, t, e in rows:
            w.writerow([v, k, c, fmt(t), fmt(e)])
    with open(cfg.path("summary", out_dir), "w", newline="") as fh:
        fh.write(f"# horizon={fmt(cfg.compare_horizon)}\n")
        w = csv.writer(fh)
        w.writerow(["variant", "k", "component", "l2_error"])
        for (v, k, c), e in summary.items():
            w.writerow([v, k, c, fmt(e)])
    check = None
    if cfg.partition_name == "set1" and {"galerkin", "short-memory"} <= set(estimates):
        modes = tuple(k for k in (1, 2, 3) if k in p.resolved_positive)
        check = ordering_holds(summary, modes)
    update_manifest(cfg, out_dir, "compare", {"horizon": cfg.compare_horizon, "ordering_holds": check})
    return summary, check
