"""Run configuration: line-oriented ``key = value`` files plus flag overrides.

Precedence, lowest to highest: built-in defaults, config file, the
METRICFORGE_SEED environment variable (seed only), command-line flags.
Every key is validated against its owning module's constraints before any
command does work, so a bad config never produces partial output.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .classifiers import ForestParams
from .errors import ConfigError
from .synth import SynthConfig
from .train import TrainConfig

ENV_SEED = "METRICFORGE_SEED"


@dataclass
class RunConfig:
    seed: int = 0
    # synthetic data
    n_identities: int = 8
    videos_per_identity: int = 6
    frames_per_video: int = 30
    dim: int = 64
    identity_scale: float = 8.0
    cluster_std: float = 1.0
    fake_offset_norm: float = 3.0
    offset_commonality: float = 0.8
    fake_video_fraction: float = 0.5
    # split
    test_fraction: float = 0.25
    # projection-head training
    margin: float = 0.2
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 20
    out_dim: int = 128
    mining: str = "semihard"
    normalize: bool = True
    # classifiers
    classifier: str = "sgd"
    linear_epochs: int = 100
    linear_lr: float = 0.1
    linear_batch_size: int = 32
    n_trees: int = 50
    max_depth: int = 10
    min_samples_leaf: int = 2
    features_per_split: int = 0  # 0 = ceil(sqrt(d))
    # bagging / parallelism
    bags: int = 1
    jobs: int = 1
    # video aggregation
    max_frames: int = 25
    aggregate_rule: str = "vote"
    # mining statistics
    sample_cap: int = 200000
    # output
    out_dir: str = ""

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_identities=self.n_identities,
            videos_per_identity=self.videos_per_identity,
            frames_per_video=self.frames_per_video,
            dim=self.dim,
            identity_scale=self.identity_scale,
            cluster_std=self.cluster_std,
            fake_offset_norm=self.fake_offset_norm,
            offset_commonality=self.offset_commonality,
            fake_video_fraction=self.fake_video_fraction,
            seed=self.seed,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            margin=self.margin,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            out_dim=self.out_dim,
            seed=seed,
            mining=self.mining,
            normalize_output=self.normalize,
        )

    def forest_params(self) -> ForestParams:
        return ForestParams(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            features_per_split=self.features_per_split or None,
        )

    def validate(self) -> None:
        """Fail fast on any out-of-range value, before touching outputs."""
        try:
            self.synth_config()
            self.train_config(self.seed)
            self.forest_params()
        except (ConfigError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        checks = [
            (0.0 < self.test_fraction < 1.0, "test_fraction must be in (0, 1)"),
            (self.classifier in ("sgd", "rf", "centroid"), "classifier must be sgd, rf or centroid"),
            (self.linear_epochs >= 0, "linear_epochs must be >= 0"),
            (self.linear_lr > 0, "linear_lr must be > 0"),
            (self.linear_batch_size >= 1, "linear_batch_size must be >= 1"),
            (self.bags >= 1 and self.bags % 2 == 1, "bags must be odd and >= 1"),
            (self.jobs >= 1, "jobs must be >= 1"),
            (self.max_frames >= 1, "max_frames must be >= 1"),
            (self.aggregate_rule in ("vote", "mean"), "aggregate_rule must be vote or mean"),
            (self.sample_cap >= 1, "sample_cap must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(key: str, raw: str, target_type: type):
    try:
        if target_type is bool:
            value = _BOOL_VALUES.get(raw.lower())
            if value is None:
                raise ValueError(f"not a boolean: {raw!r}")
            return value
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None


def parse_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    entries: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, value = stripped.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def build_run_config(
    config_path: str | None,
    overrides: dict[str, object],
) -> RunConfig:
    """Merge defaults, config file, METRICFORGE_SEED, and flag overrides."""
    cfg = RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {name: type(getattr(cfg, name)) for name in known}

    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        cfg.seed = _coerce("seed", env_seed, int)

    if config_path is not None:
        for key, raw in parse_config_file(config_path).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, raw, types[key]))

    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value)

    cfg.validate()
    return cfg
