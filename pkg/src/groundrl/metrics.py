"""Benchmark metrics: Acc@0.5 for single-target and AP50 for multi-target grounding.

Predicted boxes carry no confidence, so AP ranks predictions by the order in
which the completion lists them. AP numbers are therefore comparable only
between runs of this tool.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from groundrl.geometry import GroundedInstance, iou
from groundrl.parser import ParsedCompletion


@dataclass
class EvalReport:
    metric: str
    scores: list[float] = field(default_factory=list)
    format_failures: int = 0
    skipped: int = 0

    @property
    def aggregate(self) -> float:
        return sum(self.scores) / len(self.scores) if self.scores else 0.0

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "aggregate": self.aggregate,
            "samples": len(self.scores),
            "format_failures": self.format_failures,
            "skipped": self.skipped,
            "scores": list(self.scores),
        }


def acc_at_iou(pred: ParsedCompletion, gt: GroundedInstance, threshold: float = 0.5) -> int:
    """1 iff the first predicted instance is on the right image with IoU > threshold."""
    if not pred.format_ok or not pred.instances:
        return 0
    first = pred.instances[0]
    if first.image_index != gt.image_index:
        return 0
    return int(iou(first.box, gt.box) > threshold)


def greedy_hits(
    preds: Sequence[GroundedInstance], gts: Sequence[GroundedInstance], threshold: float = 0.5
) -> list[bool]:
    """Walk predictions in order; each takes the best free same-image GT with IoU >= threshold."""
    taken = [False] * len(gts)
    hits = []
    for p in preds:
        best, best_iou = -1, threshold
        for j, g in enumerate(gts):
            if taken[j] or g.image_index != p.image_index:
                continue
            v = iou(p.box, g.box)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
        hits.append(best >= 0)
    return hits


def average_precision(hits: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP for a ranked list of hit flags."""
    if n_gt == 0:
        return 1.0 if not hits else 0.0
    precisions, recalls = [], []
    tp = 0
    for k, h in enumerate(hits, start=1):
        tp += h
        precisions.append(tp / k)
        recalls.append(tp / n_gt)
    # Precision envelope, right to left.
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    ap, prev_r = 0.0, 0.0
    for p, r in zip(precisions, recalls):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return ap


def sample_ap50(preds: Sequence[GroundedInstance], gts: Sequence[GroundedInstance]) -> float:
    return average_precision(greedy_hits(preds, gts, 0.5), len(gts))


def ap50(
    preds_per_sample: Sequence[Sequence[GroundedInstance]],
    gts_per_sample: Sequence[Sequence[GroundedInstance]],
) -> float:
    """Mean per-sample AP at IoU 0.5."""
    if len(preds_per_sample) != len(gts_per_sample):
        raise ValueError("need one prediction list per ground-truth list")
    if not gts_per_sample:
        return 0.0
    scores = [sample_ap50(p, g) for p, g in zip(preds_per_sample, gts_per_sample)]
    return sum(scores) / len(scores)


def evaluate(
    samples: Sequence[tuple[ParsedCompletion, Sequence[GroundedInstance]]],
    metric: str = "ap50",
    threshold: float = 0.5,
) -> EvalReport:
    """Score ``(parsed completion, ground truth)`` pairs.

    Format failures score 0 for Acc@0.5 and contribute no predictions to AP50.
    Acc@0.5 skips samples that do not have exactly one ground-truth instance.
    """
    if metric not in ("acc@0.5", "ap50"):
        raise ValueError(f"unknown metric {metric!r}")
    report = EvalReport(metric)
    for parsed, gts in samples:
        if metric == "acc@0.5" and len(gts) != 1:
            report.skipped += 1
            continue
        if not parsed.format_ok:
            report.format_failures += 1
        if metric == "acc@0.5":
            report.scores.append(float(acc_at_iou(parsed, gts[0], threshold)))
        else:
            preds = parsed.instances if parsed.format_ok else ()
            report.scores.append(sample_ap50(preds, gts))
    return report
