"""Rule-based grounding reward: format + image + precision + recall."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from groundrl.geometry import GroundedInstance, PromptRecord, rescale_instance
from groundrl.matching import MatchResult, match_instances
from groundrl.parser import DEFAULT_TAGS, ParsedCompletion, TagScheme, parse_completion

PRECISION_MODES = ("strict", "paper-literal")


@dataclass(frozen=True)
class RewardConfig:
    tau: float = 0.5
    precision_mode: str = "strict"

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.precision_mode not in PRECISION_MODES:
            raise ValueError(
                f"precision_mode must be one of {PRECISION_MODES}, got {self.precision_mode!r}"
            )


@dataclass(frozen=True)
class RewardVector:
    r_format: float
    r_image: float
    r_precision: float
    r_recall: float
    r_total: float
    is_accurate: bool

    @classmethod
    def from_components(
        cls, r_format: float, r_image: float, r_precision: float, r_recall: float
    ) -> RewardVector:
        partial = cls(r_format, r_image, r_precision, r_recall, 0.0, False)
        return cls(
            r_format,
            r_image,
            r_precision,
            r_recall,
            r_format + r_image + r_precision + r_recall,
            classify_accuracy(partial),
        )


def format_reward(c: ParsedCompletion) -> float:
    return 1.0 if c.format_ok else 0.0


def image_reward(
    pred: Sequence[GroundedInstance], gt: Sequence[GroundedInstance]
) -> float:
    """Jaccard similarity of the predicted and ground-truth image-index sets."""
    p = {i.image_index for i in pred}
    g = {i.image_index for i in gt}
    union = p | g
    if not union:
        return 1.0
    return len(p & g) / len(union)


def precision_reward(m: MatchResult, pred_count: int, mode: str = "strict") -> float:
    """Mean matched IoU.

    ``strict`` divides by every prediction so spurious boxes count as zero;
    ``paper-literal`` divides by the number of matched pairs only.
    """
    if mode == "strict":
        denom = pred_count
    elif mode == "paper-literal":
        denom = len(m.pairs)
    else:
        raise ValueError(f"unknown precision mode {mode!r}")
    if denom == 0:
        return 0.0
    return min(1.0, math.fsum(m.ious) / denom)


def recall_reward(m: MatchResult, gt_count: int, tau: float = 0.5) -> float:
    if gt_count == 0:
        return 1.0 if not m.pairs and not m.unmatched_preds else 0.0
    hits = sum(1 for v in m.ious if v >= tau)
    return hits / gt_count


def classify_accuracy(rv: RewardVector) -> bool:
    return (rv.r_precision + rv.r_recall) / 2 > 0.5


def total_reward(
    c: ParsedCompletion,
    gt: Sequence[GroundedInstance],
    cfg: RewardConfig | None = None,
) -> RewardVector:
    """Score one parsed completion against ground truth.

    The instance components use whatever instances were salvaged, even when
    the format check fails.
    """
    cfg = cfg or RewardConfig()
    preds = list(c.instances)
    m = match_instances(preds, gt)
    return RewardVector.from_components(
        format_reward(c),
        image_reward(preds, gt),
        precision_reward(m, len(preds), cfg.precision_mode),
        recall_reward(m, len(gt), cfg.tau),
    )


def score_completion(
    text: str,
    prompt: PromptRecord,
    cfg: RewardConfig | None = None,
    tags: TagScheme = DEFAULT_TAGS,
    cot_token_threshold: int = 20,
    coords: str = "pixel",
) -> tuple[ParsedCompletion, RewardVector]:
    """Parse ``text`` for ``prompt`` and score it, rescaling coordinates if needed."""
    parsed = parse_completion(text, prompt.image_count, tags, cot_token_threshold)
    if coords != "pixel":
        scaled = []
        for inst in parsed.instances:
            k = inst.image_index - 1
            dims = prompt.image_dims[k] if k < len(prompt.image_dims) else (1000, 1000)
            scaled.append(rescale_instance(inst, dims, coords))
        parsed = replace(parsed, instances=tuple(scaled))
    return parsed, total_reward(parsed, prompt.ground_truth, cfg)
