"""Oracle checks runnable from the command line (``groundrl selftest``)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from groundrl.geometry import BoundingBox, GroundedInstance
from groundrl.grpo import (
    CandidatePolicy,
    GrpoConfig,
    SampledGroup,
    compute_advantages,
    make_rng,
    objective_and_gradient,
)
from groundrl.matching import brute_force_match, match_instances


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_instances(rng: np.random.Generator, n_images: int, max_per_image: int, size: int = 100):
    """Random integer boxes on a ``size`` x ``size`` grid, at most ``max_per_image`` per image."""
    out = []
    for image in range(1, n_images + 1):
        for _ in range(int(rng.integers(0, max_per_image + 1))):
            x1, x2 = sorted(int(v) for v in rng.integers(0, size + 1, size=2))
            y1, y2 = sorted(int(v) for v in rng.integers(0, size + 1, size=2))
            out.append(GroundedInstance(BoundingBox(x1, y1, x2, y2), image))
    rng.shuffle(out)
    return out


def clustered_instances(rng: np.random.Generator, n_images: int, max_per_image: int):
    """Like :func:`random_instances` but boxes overlap heavily, so matchings compete."""
    out = []
    for image in range(1, n_images + 1):
        cx, cy = rng.integers(20, 80, size=2)
        for _ in range(int(rng.integers(0, max_per_image + 1))):
            w, h = rng.integers(5, 40, size=2)
            x1 = int(max(0, cx + rng.integers(-15, 16) - w // 2))
            y1 = int(max(0, cy + rng.integers(-15, 16) - h // 2))
            out.append(GroundedInstance(BoundingBox(x1, y1, x1 + int(w), y1 + int(h)), image))
    rng.shuffle(out)
    return out


def check_matching(n_cases: int = 300, max_per_image: int = 6, seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    for case in range(n_cases):
        gen = clustered_instances if case % 2 else random_instances
        preds = gen(rng, 2, max_per_image)
        gts = gen(rng, 2, max_per_image)
        fast = match_instances(preds, gts).total_iou
        slow = brute_force_match(preds, gts).total_iou
        if fast != slow:
            return CheckResult("matching-vs-brute-force", False, f"case {case}: {fast!r} != {slow!r}")
    return CheckResult("matching-vs-brute-force", True, f"{n_cases} cases agree exactly")


def random_grpo_point(rng: np.random.Generator, k: int = 5, n: int = 8, n_prompts: int = 3):
    logits = {f"q{j}": rng.normal(0, 1.0, size=k) for j in range(n_prompts)}
    old = CandidatePolicy({p: z + rng.normal(0, 0.3, size=k) for p, z in logits.items()})
    ref = CandidatePolicy({p: z + rng.normal(0, 0.3, size=k) for p, z in logits.items()})
    groups, advs = [], []
    for pid in logits:
        idx = tuple(int(i) for i in rng.integers(0, k, size=n))
        groups.append(SampledGroup(pid, idx))
        advs.append(compute_advantages(rng.uniform(0, 4, size=n)))
    return CandidatePolicy(logits), old.snapshot(), ref.snapshot(), groups, advs


def finite_difference_gradient(policy, old, ref, groups, advs, cfg, h: float = 1e-5):
    grads = {}
    for pid, z in policy.logits.items():
        g = np.zeros_like(z)
        for j in range(z.size):
            plus, minus = policy.copy(), policy.copy()
            plus.logits[pid][j] += h
            minus.logits[pid][j] -= h
            f_plus, _ = objective_and_gradient(plus, old, ref, groups, advs, cfg)
            f_minus, _ = objective_and_gradient(minus, old, ref, groups, advs, cfg)
            g[j] = (f_plus - f_minus) / (2 * h)
        grads[pid] = g
    return grads


def gradient_relative_error(policy, old, ref, groups, advs, cfg) -> float:
    _, analytic = objective_and_gradient(policy, old, ref, groups, advs, cfg)
    numeric = finite_difference_gradient(policy, old, ref, groups, advs, cfg)
    a = np.concatenate([analytic.get(p, np.zeros_like(v)) for p, v in numeric.items()])
    b = np.concatenate(list(numeric.values()))
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def check_gradients(n_points: int = 20, betas=(0.0, 0.04), seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for beta in betas:
        cfg = GrpoConfig(beta=beta)
        for _ in range(n_points):
            err = gradient_relative_error(*random_grpo_point(rng), cfg)
            worst = max(worst, err)
    ok = worst < 1e-4 and math.isfinite(worst)
    return CheckResult("objective-gradient-vs-finite-differences", ok, f"max relative error {worst:.2e}")


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check_matching(seed=seed), check_gradients(seed=seed)]
