"""Plain-text experiment configuration (``key = value`` sections)."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .gaussian import Partition
from .integrate import BdfConfig
from .reduced import ReducedRunConfig
from .spectral import SpectralParams

PRESETS = {
    "set1": ((1, 2, 3, 4, 5), {1: 1.0, 2: 1.0, 3: 1.0}),
    "set2": ((2, 3, 4, 5, 6), {2: 1.0, 3: 1.0}),
}

DEFAULT_PATHS = {
    "samples": "samples.csv",
    "moments": "moments.csv",
    "density": "density.csv",
    "autocorr": "autocorr.csv",
    "noise": "noise.csv",
    "kernel": "kernel.csv",
    "truth": "truth.csv",
    "estimate": "estimate_{variant}.csv",
    "errors": "errors.csv",
    "summary": "summary.csv",
    "manifest": "manifest.ini",
}


@dataclass
class EnsembleConfig:
    n_samples: int = 1000
    burn_time: float = 5.0
    n_autocorr: int = 10000
    autocorr_horizon: float = 2.0
    autocorr_dt: float = 0.01
    noise_window: int = -1  # -1: choose from the 1e-3 rule
    n_mc: int = 1000
    kernel_ds: float = 0.01
    projection: str = "linear"
    n_truth: int = 200
    n_real: int = 200
    batch: int = 50


@dataclass
class ExperimentConfig:
    params: SpectralParams = field(default_factory=SpectralParams)
    bdf: BdfConfig = field(default_factory=BdfConfig)
    partition_name: str = "set1"
    resolved: tuple = PRESETS["set1"][0]
    ic: dict = field(default_factory=lambda: dict(PRESETS["set1"][1]))
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    reduced: ReducedRunConfig = field(default_factory=ReducedRunConfig)
    compare_horizon: float = 3.0
    seed: int = 0
    paths: dict = field(default_factory=lambda: dict(DEFAULT_PATHS))

    def partition(self) -> Partition:
        return Partition(tuple(self.resolved), self.params)

    def ic_vector(self) -> np.ndarray:
        """Resolved initial values in partition order (positives, then conjugates)."""
        p = self.partition()
        pos = np.array([complex(self.ic.get(k, 0.0)) for k in p.resolved_positive])
        return np.concatenate([pos, pos.conj()])

    def path(self, key: str, out_dir, **fmt) -> Path:
        return Path(out_dir) / self.paths[key].format(**fmt)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        return replace(self, seed=int(seed), reduced=replace(self.reduced, seed=int(seed)))

    def knobs(self) -> dict:
        """Flat record of every setting, for the manifest."""
        out = {"nu": self.params.nu, "N": self.params.N, "seed": self.seed,
               "partition": self.partition_name, "resolved": ",".join(map(str, self.resolved)),
               "ic": ",".join(f"{k}:{v}" for k, v in sorted(self.ic.items())),
               "compare_horizon": self.compare_horizon}
        for f in fields(self.bdf):
            out[f"bdf.{f.name}"] = getattr(self.bdf, f.name)
        for f in fields(self.ensemble):
            out[f"ensemble.{f.name}"] = getattr(self.ensemble, f.name)
        for f in fields(self.reduced):
            out[f"reduced.{f.name}"] = getattr(self.reduced, f.name)
        return out


def _parse_ic(text: str) -> dict:
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        k, _, v = item.partition(":")
        out[int(k)] = complex(v.strip().replace(" ", ""))
    return out


def _typed(section, cls_fields, current):
    kw = {}
    for f in cls_fields:
        if f.name in section:
            typ = type(getattr(current, f.name))
            raw = section[f.name]
            kw[f.name] = None if raw.lower() == "none" else typ(raw)
    return kw


def load_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"config file {path} not found")
    cfg = ExperimentConfig()
    sysd = cp["system"] if cp.has_section("system") else {}
    params = SpectralParams(nu=float(sysd.get("nu", 0.085)), N=int(sysd.get("N", 24)))
    bdf_kw = {}
    for name, typ in (("tol", float), ("max_order", int), ("dt_init", float), ("dt_min", float),
                      ("dt_max", float), ("newton_tol", float), ("newton_max_iter", int), ("atol", float)):
        if name in sysd:
            bdf_kw[name] = typ(sysd[name])
    bdf = BdfConfig(**bdf_kw)
    seed = int(sysd.get("seed", 0))

    part = cp["partition"] if cp.has_section("partition") else {}
    name = part.get("set", "set1")
    if name in PRESETS:
        resolved, ic = PRESETS[name]
        ic = dict(ic)
    elif name == "explicit":
        resolved = tuple(int(x) for x in part["resolved"].split(","))
        ic = {}
    else:
        raise ValueError(f"unknown partition set {name!r}")
    if "resolved" in part and name != "explicit":
        raise ValueError("'resolved' is only allowed with set = explicit")
    if "ic" in part:
        ic = _parse_ic(part["ic"])

    ens = EnsembleConfig(**_typed(cp["ensemble"], fields(EnsembleConfig), EnsembleConfig())) if cp.has_section("ensemble") else EnsembleConfig()
    red_kw = _typed(cp["reduced"], fields(ReducedRunConfig), ReducedRunConfig()) if cp.has_section("reduced") else {}
    red = ReducedRunConfig(**{**red_kw, "seed": seed})
    horizon = float(cp["reduced"].get("compare_horizon", 3.0)) if cp.has_section("reduced") else 3.0
    paths = dict(DEFAULT_PATHS)
    if cp.has_section("paths"):
        paths.update({k: v for k, v in cp["paths"].items()})
    out = ExperimentConfig(params, bdf, name, tuple(resolved), ic, ens, red, horizon, seed, paths)
    out.partition()  # validate
    return out
