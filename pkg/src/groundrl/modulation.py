"""Reward adjustments for hybrid CoT/direct finetuning.

Early stage: push the batch's CoT share toward a target ratio.
Late stage: give inaccurate CoT completions a length-proportional bonus,
capped so they never overtake the weakest accurate completion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from groundrl.parser import Mode, ParsedCompletion
from groundrl.rewards import RewardVector


class Stage(str, enum.Enum):
    NONE = "none"
    EARLY = "early"
    LATE = "late"


@dataclass(frozen=True)
class ModulationConfig:
    stage: Stage = Stage.NONE
    theta: float = 0.5
    alpha: float = 2.0
    delta1: float = 1.0
    delta2: float = 0.5
    gamma: float = 0.3
    epsilon: float = 1e-6
    stage_switch_fraction: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage", Stage(self.stage))
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        for name in ("alpha", "delta1", "delta2", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 <= self.stage_switch_fraction <= 1.0:
            raise ValueError("stage_switch_fraction must lie in [0, 1]")

    def with_stage(self, stage: Stage | str) -> ModulationConfig:
        return ModulationConfig(**{**self.__dict__, "stage": Stage(stage)})


@dataclass(frozen=True)
class ScoredGroup:
    """The N scored rollouts of one prompt."""

    completions: tuple[tuple[ParsedCompletion, RewardVector], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "completions", tuple(self.completions))

    def __len__(self) -> int:
        return len(self.completions)

    @property
    def naive_rewards(self) -> list[float]:
        return [rv.r_total for _, rv in self.completions]

    @property
    def cot_count(self) -> int:
        return sum(1 for c, _ in self.completions if c.mode is Mode.COT)


def cot_proportion(batch: Sequence[ScoredGroup]) -> float:
    total = sum(len(g) for g in batch)
    if total == 0:
        return 0.0
    return sum(g.cot_count for g in batch) / total


def stage_for_step(step: int, total_steps: int, cfg: ModulationConfig) -> Stage:
    """Early for the first ``stage_switch_fraction`` of training, late afterwards."""
    if total_steps <= 0:
        return Stage.EARLY
    return Stage.EARLY if step < cfg.stage_switch_fraction * total_steps else Stage.LATE


def _early_value(c: ParsedCompletion, rv: RewardVector, p: float, cfg: ModulationConfig) -> float:
    delta = cfg.delta1 if rv.is_accurate else cfg.delta2
    if c.mode is Mode.COT and p < cfg.theta:
        return cfg.alpha * (cfg.theta - p) * delta
    if c.mode is Mode.DIRECT and p > cfg.theta:
        return cfg.alpha * (p - cfg.theta) * delta
    return 0.0


def early_adjust(batch: Sequence[ScoredGroup], cfg: ModulationConfig) -> list[list[float]]:
    if cfg.stage is not Stage.EARLY:
        raise ValueError(f"early_adjust requires stage 'early', got {cfg.stage.value!r}")
    if not batch:
        return []
    # p is frozen for the whole batch before any per-completion value.
    p = cot_proportion(batch)
    return [[_early_value(c, rv, p, cfg) for c, rv in g.completions] for g in batch]


def late_adjust(group: ScoredGroup, cfg: ModulationConfig) -> list[float]:
    if cfg.stage is not Stage.LATE:
        raise ValueError(f"late_adjust requires stage 'late', got {cfg.stage.value!r}")
    if not len(group):
        return []
    lengths = [c.length_tokens for c, _ in group.completions]
    lo, hi = min(lengths), max(lengths)
    accurate = [rv.r_total for _, rv in group.completions if rv.is_accurate]
    # No accurate completion: cap at the group's best naive reward instead.
    r_cap = min(accurate) if accurate else max(group.naive_rewards)
    out = []
    for (c, rv), length in zip(group.completions, lengths):
        if c.mode is Mode.COT and not rv.is_accurate:
            norm_len = (length - lo) / (hi - lo + cfg.epsilon)
            out.append(cfg.gamma * norm_len * max(0.0, r_cap - rv.r_total))
        else:
            out.append(0.0)
    return out


def compute_adjustments(batch: Sequence[ScoredGroup], cfg: ModulationConfig) -> list[list[float]]:
    """Dispatch on ``cfg.stage``; stage ``none`` yields all zeros."""
    if cfg.stage is Stage.EARLY:
        return early_adjust(batch, cfg)
    if cfg.stage is Stage.LATE:
        return [late_adjust(g, cfg) for g in batch]
    return [[0.0] * len(g) for g in batch]


def adjusted_rewards(naive: Sequence[float], adjustments: Sequence[float]) -> list[float]:
    if len(naive) != len(adjustments):
        raise ValueError(
            f"cardinality mismatch: {len(naive)} rewards vs {len(adjustments)} adjustments"
        )
    return [r + a for r, a in zip(naive, adjustments)]
