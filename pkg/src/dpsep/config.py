"""Run configuration: one YAML tree, strictly validated.

Unknown keys anywhere in the tree are errors (typos in hyperparameter names
must not silently fall back to defaults). Values land in the module-level
dataclasses, whose own preconditions do the numeric validation. Relative
paths resolve under the DPSEP_OUTPUT_ROOT environment variable when set.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from dpsep.mixtures import NoiseClassSpec, SourceClassSpec, ToyCorpusSpec
from dpsep.posterior import GuidanceConfig
from dpsep.priors.network import DenoiserArch
from dpsep.priors.training import TrainConfig
from dpsep.sampler import SamplerConfig
from dpsep.schedule import ChurnConfig, SigmaSchedule, build_schedule
from dpsep.spectral import StftConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "DEFAULTS", "OUTPUT_ROOT_ENV"]

OUTPUT_ROOT_ENV = "DPSEP_OUTPUT_ROOT"

DEFAULTS = {
    "seed": 1234,
    "audio": {
        "sample_rate": 16000,
        "n_samples": 2048,
    },
    "paths": {
        "corpus_dir": "data/corpus",
        "mixtures_dir": "data/mixtures",
        "checkpoint_dir": "checkpoints",
        "output_dir": "out",
    },
    "stft": {
        "window_len": 510,
        "hop": 160,
        "mag_floor": 1.0e-8,
    },
    "schedule": {
        "n_steps": 400,
        "rho": 10.0,
        "train_sigma_max": 10.0,
        "train_sigma_min": 1.0e-5,
        "sigma_max": 4.0,
        "sigma_min": 1.0e-5,
    },
    "sampler": {
        "s_churn": 30.0,
        "s_tmin": 0.0,
        "s_tmax": float("inf"),
        "s_noise": 1.0,
        "cfg_weight": 1.0,
        "final_denoise": True,
    },
    "guidance": {
        "zeta": 0.5,
        "grad_norm_floor": 1.0e-12,
    },
    "corpus": {
        "rms": 0.1,
        "classes": [
            {"name": "band_low", "band_hz": [400.0, 1200.0], "count": 48, "n_sines": 8},
            {"name": "band_high", "band_hz": [2000.0, 3600.0], "count": 48, "n_sines": 8},
        ],
        "noise": {"name": "am_bursts", "band_hz": [4500.0, 6500.0], "count": 48},
    },
    "mixture": {
        "k_sources": 2,
        "sir_db": [-5.0, 0.0, 5.0],
        "snr_range_db": [-3.0, 3.0],
        "count_per_sir": 20,
        "sigma_z_rel": 1.0e-4,
    },
    "training": {
        "steps": 6000,
        "batch": 16,
        "lr": 3.0e-3,
        "cond_dropout": 0.1,
        "frame_len": 64,
        "hidden": 128,
        "emb_dim": 16,
    },
    "separate": {
        "length_policy": "strict",
    },
}

_CLASS_KEYS = {"name", "band_hz", "count", "n_sines"}
_NOISE_KEYS = {"name", "band_hz", "count"}


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, val in override.items():
        full = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key: {full}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {full} must be a mapping")
            out[key] = _merge(base[key], val, full)
        else:
            out[key] = val
    return out


def _check_class_entries(tree: dict) -> None:
    classes = tree["corpus"]["classes"]
    if not isinstance(classes, list) or not classes:
        raise ConfigError("corpus.classes must be a nonempty list")
    for i, entry in enumerate(classes):
        if not isinstance(entry, dict):
            raise ConfigError(f"corpus.classes[{i}] must be a mapping")
        unknown = set(entry) - _CLASS_KEYS
        if unknown:
            raise ConfigError(
                f"unknown config key: corpus.classes[{i}].{sorted(unknown)[0]}"
            )
        for req in ("name", "band_hz", "count"):
            if req not in entry:
                raise ConfigError(f"corpus.classes[{i}] is missing '{req}'")
    noise = tree["corpus"]["noise"]
    if not isinstance(noise, dict):
        raise ConfigError("corpus.noise must be a mapping")
    unknown = set(noise) - _NOISE_KEYS
    if unknown:
        raise ConfigError(f"unknown config key: corpus.noise.{sorted(unknown)[0]}")


def _apply_set(tree: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key.path=value, got '{assignment}'")
    key_path, raw = assignment.split("=", 1)
    keys = key_path.strip().split(".")
    value = yaml.safe_load(raw)
    node = tree
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config key: {key_path}")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"unknown config key: {key_path}")
    node[keys[-1]] = value


class RunConfig:
    """Validated configuration with typed accessors for the module configs."""

    def __init__(self, tree: dict):
        self.tree = tree
        # construct every derived object now so that invalid values are
        # rejected up front, before any command performs side effects
        self.stft_cfg()
        self.schedule_train()
        self.schedule_inference()
        self.churn_cfg()
        self.corpus_spec()
        self.guidance_cfg(int(tree["audio"]["n_samples"]))
        self.train_cfg()
        self.arch()
        mix = tree["mixture"]
        if int(mix["k_sources"]) < 1:
            raise ConfigError("mixture.k_sources must be >= 1")
        lo, hi = mix["snr_range_db"]
        if not lo <= hi:
            raise ConfigError("mixture.snr_range_db must be [low, high]")
        if int(mix["count_per_sir"]) < 1:
            raise ConfigError("mixture.count_per_sir must be >= 1")
        policy = tree["separate"]["length_policy"]
        if policy not in ("strict", "crop_pad"):
            raise ConfigError(
                f"separate.length_policy must be 'strict' or 'crop_pad', got '{policy}'"
            )

    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    @property
    def sample_rate(self) -> int:
        return int(self.tree["audio"]["sample_rate"])

    @property
    def n_samples(self) -> int:
        return int(self.tree["audio"]["n_samples"])

    def path(self, name: str) -> Path:
        p = Path(self.tree["paths"][name])
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not p.is_absolute():
            p = Path(root) / p
        return p

    def stft_cfg(self) -> StftConfig:
        s = self.tree["stft"]
        try:
            return StftConfig(
                window_len=int(s["window_len"]),
                hop=int(s["hop"]),
                mag_floor=float(s["mag_floor"]),
            )
        except ValueError as exc:
            raise ConfigError(f"stft: {exc}") from exc

    def _schedule(self, sigma_max_key: str, sigma_min_key: str) -> SigmaSchedule:
        s = self.tree["schedule"]
        try:
            return build_schedule(
                float(s[sigma_max_key]),
                float(s[sigma_min_key]),
                float(s["rho"]),
                int(s["n_steps"]),
            )
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from exc

    def schedule_train(self) -> SigmaSchedule:
        return self._schedule("train_sigma_max", "train_sigma_min")

    def schedule_inference(self) -> SigmaSchedule:
        return self._schedule("sigma_max", "sigma_min")

    def churn_cfg(self) -> ChurnConfig:
        s = self.tree["sampler"]
        try:
            return ChurnConfig(
                s_churn=float(s["s_churn"]),
                s_tmin=float(s["s_tmin"]),
                s_tmax=float(s["s_tmax"]),
                s_noise=float(s["s_noise"]),
            )
        except ValueError as exc:
            raise ConfigError(f"sampler: {exc}") from exc

    def sampler_cfg(self, seed: int | None = None) -> SamplerConfig:
        s = self.tree["sampler"]
        return SamplerConfig(
            schedule=self.schedule_inference(),
            churn=self.churn_cfg(),
            seed=self.seed if seed is None else int(seed),
            cfg_weight=float(s["cfg_weight"]),
            final_denoise=bool(s["final_denoise"]),
        )

    def guidance_cfg(self, d: int) -> GuidanceConfig:
        g = self.tree["guidance"]
        try:
            return GuidanceConfig(
                d=d,
                zeta=float(g["zeta"]),
                grad_norm_floor=float(g["grad_norm_floor"]),
            )
        except ValueError as exc:
            raise ConfigError(f"guidance: {exc}") from exc

    def corpus_spec(self) -> ToyCorpusSpec:
        c = self.tree["corpus"]
        try:
            classes = tuple(
                SourceClassSpec(
                    name=str(e["name"]),
                    band_hz=(float(e["band_hz"][0]), float(e["band_hz"][1])),
                    count=int(e["count"]),
                    n_sines=int(e.get("n_sines", 8)),
                )
                for e in c["classes"]
            )
            noise = NoiseClassSpec(
                name=str(c["noise"]["name"]),
                band_hz=(
                    float(c["noise"]["band_hz"][0]),
                    float(c["noise"]["band_hz"][1]),
                ),
                count=int(c["noise"]["count"]),
            )
            return ToyCorpusSpec(
                classes=classes,
                noise=noise,
                n_samples=self.n_samples,
                sample_rate=self.sample_rate,
                rms=float(c["rms"]),
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(f"corpus: {exc}") from exc

    def train_cfg(self) -> TrainConfig:
        t = self.tree["training"]
        try:
            return TrainConfig(
                steps=int(t["steps"]),
                batch=int(t["batch"]),
                lr=float(t["lr"]),
                cond_dropout=float(t["cond_dropout"]),
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(f"training: {exc}") from exc

    def arch(self) -> DenoiserArch:
        t = self.tree["training"]
        cond_dim = len(self.tree["corpus"]["classes"])
        try:
            return DenoiserArch(
                signal_len=self.n_samples,
                frame_len=int(t["frame_len"]),
                hidden=int(t["hidden"]),
                emb_dim=int(t["emb_dim"]),
                cond_dim=cond_dim,
            )
        except ValueError as exc:
            raise ConfigError(f"training: {exc}") from exc


def load_config(path=None, overrides=()) -> RunConfig:
    """Read the YAML tree, apply --set overrides, validate strictly."""
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(Path(path), encoding="utf-8") as f:
            user = yaml.safe_load(f)
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        tree = _merge(tree, user)
    for assignment in overrides:
        _apply_set(tree, assignment)
    _check_class_entries(tree)
    return RunConfig(tree)
