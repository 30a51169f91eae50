"""Flat ``key = value`` configuration (TOML syntax) with ``GROUNDRL_*`` env overrides."""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from groundrl.geometry import COORD_SPACES
from groundrl.grpo import GrpoConfig
from groundrl.modulation import ModulationConfig
from groundrl.parser import TagScheme
from groundrl.rewards import RewardConfig
from groundrl.synthetic import GeneratorConfig

ENV_PREFIX = "GROUNDRL_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # reward
    tau: float = 0.5
    precision_mode: str = "strict"
    coords: str = "pixel"
    # parser
    cot_token_threshold: int = 20
    ref_open: str = "<|object_ref_start|>"
    ref_close: str = "<|object_ref_end|>"
    box_open: str = "<|box_start|>"
    box_close: str = "<|box_end|>"
    think_open: str = "<think>"
    think_close: str = "</think>"
    none_marker: str = "None"
    # modulation
    hybrid: bool = True
    stage_switch_fraction: float = 0.5
    theta: float = 0.5
    alpha: float = 2.0
    delta1: float = 1.0
    delta2: float = 0.5
    gamma: float = 0.3
    epsilon: float = 1e-6
    # grpo
    group_size: int = 8
    beta: float = 0.04
    learning_rate: float = 0.05
    steps: int = 200
    batch_size: int = 16
    std_mode: str = "sample"
    adv_epsilon: float = 1e-6
    clip_epsilon: float = 0.0  # 0 disables clipping
    epochs_per_batch: int = 1
    optimizer: str = "adam"
    seed: int = 0
    # synthetic data
    images_min: int = 2
    images_max: int = 4
    gt_min: int = 1
    gt_max: int = 3
    image_size_min: int = 320
    image_size_max: int = 1024
    box_noise: float = 0.2
    spurious_p: float = 0.3
    drop_p: float = 0.4
    format_error_p: float = 0.2
    cot_probability: float = 0.5
    candidates: int = 8
    toy_prompts: int = 32

    def __post_init__(self) -> None:
        if self.coords not in COORD_SPACES:
            raise ConfigError(f"coords must be one of {COORD_SPACES}, got {self.coords!r}")
        if self.cot_token_threshold < 0:
            raise ConfigError("cot_token_threshold must be >= 0")
        if self.clip_epsilon < 0:
            raise ConfigError("clip_epsilon must be >= 0")
        if self.toy_prompts < 1:
            raise ConfigError("toy_prompts must be >= 1")
        try:
            self.reward_config()
            self.tags()
            self.modulation_config()
            self.grpo_config()
            self.generator_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes: Any) -> Config:
        return dataclasses.replace(self, **coerce(changes))

    def reward_config(self) -> RewardConfig:
        return RewardConfig(tau=self.tau, precision_mode=self.precision_mode)

    def tags(self) -> TagScheme:
        return TagScheme(
            self.ref_open, self.ref_close, self.box_open, self.box_close,
            self.think_open, self.think_close, self.none_marker,
        )

    def modulation_config(self, stage: str = "none") -> ModulationConfig:
        return ModulationConfig(
            stage=stage,
            theta=self.theta,
            alpha=self.alpha,
            delta1=self.delta1,
            delta2=self.delta2,
            gamma=self.gamma,
            epsilon=self.epsilon,
            stage_switch_fraction=self.stage_switch_fraction,
        )

    def grpo_config(self) -> GrpoConfig:
        return GrpoConfig(
            group_size=self.group_size,
            beta=self.beta,
            learning_rate=self.learning_rate,
            steps=self.steps,
            batch_size=self.batch_size,
            std_mode=self.std_mode,
            adv_epsilon=self.adv_epsilon,
            clip_epsilon=self.clip_epsilon or None,
            epochs_per_batch=self.epochs_per_batch,
            optimizer=self.optimizer,
            seed=self.seed,
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            seed=self.seed,
            images_range=(self.images_min, self.images_max),
            gt_range=(self.gt_min, self.gt_max),
            image_size_range=(self.image_size_min, self.image_size_max),
            box_noise=self.box_noise,
            spurious_p=self.spurious_p,
            drop_p=self.drop_p,
            format_error_p=self.format_error_p,
            cot_probability=self.cot_probability,
            candidates=self.candidates,
        )


FIELD_TYPES: dict[str, type] = {f.name: type(f.default) for f in dataclasses.fields(Config)}


def _check_type(key: str, value: Any) -> Any:
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    want = FIELD_TYPES[key]
    if want is bool:
        ok = isinstance(value, bool)
    elif want is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif want is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, want)
    if not ok:
        raise ConfigError(f"{key}: expected {want.__name__}, got {type(value).__name__} {value!r}")
    return value


def coerce(values: Mapping[str, Any]) -> dict[str, Any]:
    return {k: _check_type(k, v) for k, v in values.items()}


def _parse_env(key: str, raw: str) -> Any:
    want = FIELD_TYPES[key]
    try:
        if want is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "1")
        if want is int:
            return int(raw)
        if want is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX}{key.upper()}: cannot parse {raw!r} as {want.__name__}") from None
    return raw


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r} (from {name})")
        out[key] = _parse_env(key, raw)
    return out


def load_config(path: str | Path | None = None, environ: Mapping[str, str] | None = None) -> Config:
    """Defaults, then the file at ``path`` (if given), then environment overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for key, value in data.items():
            if isinstance(value, (dict, list)):
                raise ConfigError(f"{path}: {key!r} must be a scalar; the config is flat")
        values.update(coerce(data))
    values.update(coerce(env_overrides(environ)))
    return Config(**values)
