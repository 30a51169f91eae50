"""Group-relative policy optimisation over explicit candidate sets.

The policy for each prompt is a softmax over K fixed candidate completions.
That keeps sampling, probability ratios and the KL penalty exact, so the
objective gradient can be written in closed form and checked numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from groundrl.geometry import PromptRecord
from groundrl.modulation import (
    ModulationConfig,
    ScoredGroup,
    adjusted_rewards,
    compute_adjustments,
    cot_proportion,
    stage_for_step,
)
from groundrl.parser import DEFAULT_TAGS, ParsedCompletion, TagScheme
from groundrl.rewards import RewardConfig, RewardVector, score_completion

STD_MODES = ("sample", "population")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    beta: float = 0.04
    learning_rate: float = 0.05
    steps: int = 200
    batch_size: int = 16
    std_mode: str = "sample"
    adv_epsilon: float = 1e-6
    clip_epsilon: float | None = None
    epochs_per_batch: int = 1
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.std_mode not in STD_MODES:
            raise ValueError(f"std_mode must be one of {STD_MODES}, got {self.std_mode!r}")
        if self.adv_epsilon <= 0:
            raise ValueError("adv_epsilon must be > 0")
        if self.clip_epsilon is not None and self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0 when set")
        if self.epochs_per_batch < 1 or self.batch_size < 1 or self.steps < 0:
            raise ValueError("epochs_per_batch and batch_size must be >= 1, steps >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


class PolicySnapshot:
    """Frozen logits, used as the sampling (old) or reference policy."""

    def __init__(self, logits: Mapping[str, np.ndarray]):
        frozen = {}
        for pid, z in logits.items():
            arr = np.array(z, dtype=np.float64)
            arr.setflags(write=False)
            frozen[pid] = arr
        self._logits = frozen

    @property
    def logits(self) -> Mapping[str, np.ndarray]:
        return self._logits

    def probs(self, prompt_id: str) -> np.ndarray:
        if prompt_id not in self._logits:
            raise KeyError(f"unknown prompt {prompt_id!r}")
        return softmax(self._logits[prompt_id])


@dataclass
class CandidatePolicy:
    logits: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        self.logits = {pid: np.array(z, dtype=np.float64) for pid, z in self.logits.items()}
        for pid, z in self.logits.items():
            if z.ndim != 1 or z.size < 2:
                raise ValueError(f"prompt {pid!r}: need a 1-d logits vector with K >= 2")

    @classmethod
    def uniform(cls, sizes: Mapping[str, int]) -> CandidatePolicy:
        return cls({pid: np.zeros(k) for pid, k in sizes.items()})

    def probs(self, prompt_id: str) -> np.ndarray:
        if prompt_id not in self.logits:
            raise KeyError(f"unknown prompt {prompt_id!r}")
        return softmax(self.logits[prompt_id])

    def snapshot(self) -> PolicySnapshot:
        return PolicySnapshot(self.logits)

    def copy(self) -> CandidatePolicy:
        return CandidatePolicy({pid: z.copy() for pid, z in self.logits.items()})


@dataclass(frozen=True)
class SampledGroup:
    prompt_id: str
    indices: tuple[int, ...]


def compute_advantages(
    rewards: Sequence[float], std_mode: str = "sample", eps: float = 1e-6
) -> np.ndarray:
    """``(r - mean) / (std + eps)`` within one group."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("need at least two rewards per group")
    ddof = 1 if std_mode == "sample" else 0
    centered = r - r.mean()
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return centered / (r.std(ddof=ddof) + eps)


def sample_group(
    policy: CandidatePolicy | PolicySnapshot, prompt_id: str, n: int, rng_seed
) -> tuple[int, ...]:
    """Draw ``n`` candidate indices i.i.d. from the policy.

    ``rng_seed`` may be an int seed or an existing ``numpy.random.Generator``.
    """
    probs = policy.probs(prompt_id)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    return tuple(int(i) for i in rng.choice(probs.size, size=n, p=probs))


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def kl_term(policy, ref: PolicySnapshot, prompt_id: str, completion: int) -> float:
    """``ratio - log(ratio) - 1`` with ``ratio = pi_ref / pi_theta`` at the sample."""
    p = float(policy.probs(prompt_id)[completion])
    if p <= 0.0:
        raise ValueError(f"candidate {completion} of {prompt_id!r} has zero probability")
    q = float(ref.probs(prompt_id)[completion])
    if q <= 0.0:
        return math.inf
    ratio = q / p
    return ratio - math.log(ratio) - 1.0


def _sample_terms(probs, old_probs, ref_probs, o, a, cfg):
    """Per-sample objective value and the scalar multiplying ``e_o - pi``."""
    ratio = probs[o] / old_probs[o]
    surrogate = ratio * a
    coeff = ratio * a
    if cfg.clip_epsilon is not None:
        clipped = float(np.clip(ratio, 1 - cfg.clip_epsilon, 1 + cfg.clip_epsilon)) * a
        if clipped < surrogate:
            surrogate, coeff = clipped, 0.0
    if probs[o] <= 0.0:
        raise ValueError("sampled candidate has zero probability under the current policy")
    kl_ratio = ref_probs[o] / probs[o]
    kl = kl_ratio - math.log(kl_ratio) - 1.0
    return surrogate - cfg.beta * kl, coeff + cfg.beta * (kl_ratio - 1.0)


def grpo_objective(
    policy: CandidatePolicy,
    old: PolicySnapshot,
    ref: PolicySnapshot,
    groups: Sequence[SampledGroup],
    advantages: Sequence[Sequence[float]],
    cfg: GrpoConfig,
) -> float:
    value, _ = objective_and_gradient(policy, old, ref, groups, advantages, cfg)
    return value


def objective_and_gradient(
    policy: CandidatePolicy,
    old: PolicySnapshot,
    ref: PolicySnapshot,
    groups: Sequence[SampledGroup],
    advantages: Sequence[Sequence[float]],
    cfg: GrpoConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """Objective averaged over groups and its gradient w.r.t. each prompt's logits.

    For a softmax, ``d pi[o] / d z = pi[o] * (e_o - pi)``; both the ratio term
    and the KL estimator reduce to a scalar times ``e_o - pi``.
    """
    if len(groups) != len(advantages):
        raise ValueError("one advantage vector per group is required")
    if not groups:
        return 0.0, {}
    total = 0.0
    grads: dict[str, np.ndarray] = {}
    for g, adv in zip(groups, advantages):
        if len(adv) != len(g.indices):
            raise ValueError(f"group {g.prompt_id!r}: advantage count mismatch")
        probs = policy.probs(g.prompt_id)
        old_probs = old.probs(g.prompt_id)
        ref_probs = ref.probs(g.prompt_id)
        n = len(g.indices)
        group_value = 0.0
        grad = np.zeros_like(probs)
        for o, a in zip(g.indices, adv):
            value, coeff = _sample_terms(probs, old_probs, ref_probs, o, float(a), cfg)
            group_value += value
            row = -coeff * probs
            row[o] += coeff
            grad += row
        total += group_value / n
        grads.setdefault(g.prompt_id, np.zeros_like(probs))
        grads[g.prompt_id] += grad / n
    scale = 1.0 / len(groups)
    return total * scale, {pid: v * scale for pid, v in grads.items()}


class Adam:
    """Adam ascent with per-prompt step counts; prompts absent from a batch are untouched."""

    def __init__(self, learning_rate: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = learning_rate, b1, b2, eps
        self.state: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, policy: CandidatePolicy, grads: Mapping[str, np.ndarray]) -> None:
        if self.lr == 0:
            return
        for pid, g in grads.items():
            m, v, t = self.state.get(pid, (np.zeros_like(g), np.zeros_like(g), 0))
            t += 1
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            self.state[pid] = (m, v, t)
            m_hat = m / (1 - self.b1**t)
            v_hat = v / (1 - self.b2**t)
            policy.logits[pid] = policy.logits[pid] + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, learning_rate: float):
        self.lr = learning_rate

    def step(self, policy: CandidatePolicy, grads: Mapping[str, np.ndarray]) -> None:
        if self.lr == 0:
            return
        for pid, g in grads.items():
            policy.logits[pid] = policy.logits[pid] + self.lr * g


def make_optimizer(cfg: GrpoConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


class CandidateEnvironment:
    """Prompts with fixed candidate completions, parsed and scored on first use."""

    def __init__(
        self,
        prompts: Iterable[PromptRecord],
        candidates: Mapping[str, Sequence[str]],
        reward_cfg: RewardConfig | None = None,
        tags: TagScheme = DEFAULT_TAGS,
        cot_token_threshold: int = 20,
        coords: str = "pixel",
    ):
        self.prompts = {p.id: p for p in prompts}
        self.candidates = {pid: list(texts) for pid, texts in candidates.items()}
        missing = set(self.candidates) - set(self.prompts)
        if missing:
            raise KeyError(f"candidates reference unknown prompts: {sorted(missing)}")
        self.reward_cfg = reward_cfg or RewardConfig()
        self.tags = tags
        self.cot_token_threshold = cot_token_threshold
        self.coords = coords
        self._cache: dict[tuple[str, int], tuple[ParsedCompletion, RewardVector]] = {}

    @property
    def prompt_ids(self) -> list[str]:
        return list(self.candidates)

    def sizes(self) -> dict[str, int]:
        return {pid: len(t) for pid, t in self.candidates.items()}

    def scored(self, prompt_id: str, k: int) -> tuple[ParsedCompletion, RewardVector]:
        key = (prompt_id, k)
        if key not in self._cache:
            self._cache[key] = score_completion(
                self.candidates[prompt_id][k],
                self.prompts[prompt_id],
                self.reward_cfg,
                self.tags,
                self.cot_token_threshold,
                self.coords,
            )
        return self._cache[key]

    def reward_table(self, prompt_id: str) -> np.ndarray:
        return np.array(
            [self.scored(prompt_id, k)[1].r_total for k in range(len(self.candidates[prompt_id]))]
        )

    def expected_reward(self, policy: CandidatePolicy | PolicySnapshot) -> float:
        vals = [float(policy.probs(pid) @ self.reward_table(pid)) for pid in self.candidates]
        return float(np.mean(vals)) if vals else 0.0


@dataclass(frozen=True)
class StepReport:
    step: int
    stage: str
    mean_naive_reward: float
    mean_adjusted_reward: float
    cot_proportion: float
    objective: float
    expected_reward: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "stage": self.stage,
            "mean_naive_reward": self.mean_naive_reward,
            "mean_adjusted_reward": self.mean_adjusted_reward,
            "cot_proportion": self.cot_proportion,
            "objective": self.objective,
            "expected_reward": self.expected_reward,
        }


def train_step(
    policy: CandidatePolicy,
    env: CandidateEnvironment,
    prompt_ids: Sequence[str],
    cfg: GrpoConfig,
    modulation: ModulationConfig,
    *,
    ref: PolicySnapshot,
    rng: np.random.Generator,
    optimizer=None,
    step: int = 0,
) -> tuple[CandidatePolicy, StepReport]:
    """Sample, score, modulate, normalise and take one ascent step.

    Returns a new policy; the input policy is not modified.
    """
    optimizer = optimizer if optimizer is not None else make_optimizer(cfg)
    old = policy.snapshot()
    groups = [
        SampledGroup(pid, sample_group(old, pid, cfg.group_size, rng)) for pid in prompt_ids
    ]
    batch = [ScoredGroup([env.scored(g.prompt_id, k) for k in g.indices]) for g in groups]
    adjustments = compute_adjustments(batch, modulation)
    naive = [sg.naive_rewards for sg in batch]
    adjusted = [adjusted_rewards(r, a) for r, a in zip(naive, adjustments)]
    advantages = [compute_advantages(r, cfg.std_mode, cfg.adv_epsilon) for r in adjusted]

    new = policy.copy()
    objective = 0.0
    for _ in range(cfg.epochs_per_batch):
        objective, grads = objective_and_gradient(new, old, ref, groups, advantages, cfg)
        optimizer.step(new, grads)

    flat_naive = [x for r in naive for x in r]
    flat_adj = [x for r in adjusted for x in r]
    report = StepReport(
        step=step,
        stage=modulation.stage.value,
        mean_naive_reward=float(np.mean(flat_naive)) if flat_naive else 0.0,
        mean_adjusted_reward=float(np.mean(flat_adj)) if flat_adj else 0.0,
        cot_proportion=cot_proportion(batch),
        objective=float(objective),
        expected_reward=env.expected_reward(new),
    )
    return new, report


@dataclass
class TrainResult:
    policy: CandidatePolicy
    initial: PolicySnapshot
    reports: list[StepReport] = field(default_factory=list)


def train(
    env: CandidateEnvironment,
    cfg: GrpoConfig,
    modulation: ModulationConfig,
    *,
    hybrid: bool = True,
    policy: CandidatePolicy | None = None,
    callback=None,
) -> TrainResult:
    """Run ``cfg.steps`` GRPO steps with the reference fixed at the initial policy.

    With ``hybrid`` the modulation stage follows the early/late schedule;
    otherwise ``modulation.stage`` is used throughout.
    """
    policy = policy.copy() if policy is not None else CandidatePolicy.uniform(env.sizes())
    initial = policy.snapshot()
    rng = make_rng(cfg.seed)
    optimizer = make_optimizer(cfg)
    ids = env.prompt_ids
    result = TrainResult(policy=policy, initial=initial)
    for step in range(cfg.steps):
        if cfg.batch_size >= len(ids):
            batch_ids = list(ids)
        else:
            picks = rng.choice(len(ids), size=cfg.batch_size, replace=False)
            batch_ids = [ids[i] for i in sorted(picks)]
        stage = stage_for_step(step, cfg.steps, modulation) if hybrid else modulation.stage
        policy, report = train_step(
            policy,
            env,
            batch_ids,
            cfg,
            modulation.with_stage(stage),
            ref=initial,
            rng=rng,
            optimizer=optimizer,
            step=step,
        )
        result.reports.append(report)
        if callback is not None:
            callback(report)
    result.policy = policy
    return result


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())

