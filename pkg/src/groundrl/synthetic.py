"""Synthetic prompts, ground truth and completions of controllable quality.

All randomness comes from numpy's PCG64 bit generator. Prompt ``i`` of a
corpus with seed ``s`` draws from ``PCG64([s, i])``, so any record can be
regenerated on its own and corpora are reproducible across machines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from groundrl.geometry import BoundingBox, GroundedInstance, PromptRecord
from groundrl.parser import DEFAULT_TAGS, Mode, TagScheme, render_instance
from groundrl.rewards import RewardConfig, score_completion

OBJECTS = (
    "red car", "white dog", "black cat", "person in a blue coat", "traffic light",
    "bicycle", "wooden chair", "potted plant", "otter", "coffee mug", "laptop",
    "street sign", "umbrella", "green bottle", "horse", "backpack",
)

_REASONING = (
    "I compare the images one by one.",
    "The instruction asks for every matching object.",
    "Some of the images do not contain the target at all.",
    "The object is partly occluded, so I estimate its extent from the visible part.",
    "Colour and shape help separate the target from similar objects.",
    "I check the background for smaller instances.",
    "Two candidates look alike; the one matching the description is chosen.",
    "The target appears near the image border.",
    "I verify that each box covers the whole object.",
    "The scale differs between views, which I take into account.",
)


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    images_range: tuple[int, int] = (2, 4)
    gt_range: tuple[int, int] = (1, 3)
    image_size_range: tuple[int, int] = (320, 1024)
    box_noise: float = 0.2
    spurious_p: float = 0.3
    drop_p: float = 0.4
    format_error_p: float = 0.2
    cot_probability: float = 0.5
    candidates: int = 8

    def __post_init__(self) -> None:
        for name in ("spurious_p", "drop_p", "format_error_p", "cot_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.box_noise < 0:
            raise ValueError("box_noise must be >= 0")
        for name in ("images_range", "gt_range", "image_size_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < (0 if name == "gt_range" else 1):
                raise ValueError(f"{name} must be a nonempty range, got {(lo, hi)}")
        if self.image_size_range[0] < 8:
            raise ValueError("images must be at least 8 pixels wide")
        if self.candidates < 2:
            raise ValueError("candidates must be >= 2")


def prompt_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, index]))


def _random_box(rng: np.random.Generator, w: int, h: int) -> BoundingBox:
    bw = max(2, int(round(rng.uniform(0.1, 0.5) * w)))
    bh = max(2, int(round(rng.uniform(0.1, 0.5) * h)))
    x1 = int(rng.integers(0, w - bw + 1))
    y1 = int(rng.integers(0, h - bh + 1))
    return BoundingBox(x1, y1, x1 + bw, y1 + bh)


def generate_prompt(cfg: GeneratorConfig, rng: np.random.Generator, prompt_id: str = "p0") -> PromptRecord:
    m = int(rng.integers(cfg.images_range[0], cfg.images_range[1] + 1))
    lo, hi = cfg.image_size_range
    dims = tuple((int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))) for _ in range(m))
    target = OBJECTS[int(rng.integers(len(OBJECTS)))]
    n_gt = int(rng.integers(cfg.gt_range[0], cfg.gt_range[1] + 1))
    gt = []
    for _ in range(n_gt):
        image = int(rng.integers(1, m + 1))
        w, h = dims[image - 1]
        gt.append(GroundedInstance(_random_box(rng, w, h), image, target))
    gt.sort(key=lambda g: g.image_index)
    return PromptRecord(
        id=prompt_id,
        image_count=m,
        image_dims=dims,
        instruction=f"Locate every {target} in the {m} images.",
        ground_truth=tuple(gt),
    )


def _jitter(box: BoundingBox, scale: float, dims, rng: np.random.Generator) -> BoundingBox:
    w, h = dims
    noise = rng.normal(0.0, 1.0, size=4)
    sx, sy = scale * box.width, scale * box.height
    x1 = min(max(int(round(box.x1 + noise[0] * sx)), 0), w)
    y1 = min(max(int(round(box.y1 + noise[1] * sy)), 0), h)
    x2 = min(max(int(round(box.x2 + noise[2] * sx)), 0), w)
    y2 = min(max(int(round(box.y2 + noise[3] * sy)), 0), h)
    return BoundingBox(x1, y1, x2, y2)


def _corrupt(line: str, prompt: PromptRecord, tags: TagScheme, rng: np.random.Generator) -> str:
    kind = int(rng.integers(3))
    if kind == 0:
        return line.replace(tags.box_close, "")
    if kind == 1:
        _, _, rest = line.partition(":")
        return f"Image-{prompt.image_count + 1}:{rest}"
    return line.replace(tags.ref_close, " ", 1)


def reasoning_block(rng: np.random.Generator, tags: TagScheme = DEFAULT_TAGS) -> str:
    n = int(rng.integers(2, 16))
    picks = rng.integers(len(_REASONING), size=n)
    body = " ".join(_REASONING[int(k)] for k in picks)
    return f"{tags.think_open}\n{body}\n{tags.think_close}"


def generate_completion(
    prompt: PromptRecord,
    quality: float,
    mode: Mode | str,
    cfg: GeneratorConfig,
    rng: np.random.Generator,
    tags: TagScheme = DEFAULT_TAGS,
    force_format_error: bool = False,
) -> str:
    """Render ground truth with quality-controlled degradation.

    With ``quality = 1`` the answer lines reproduce the ground truth exactly.
    """
    if not 0.0 <= quality <= 1.0:
        raise ValueError(f"quality must lie in [0, 1], got {quality}")
    mode = Mode(mode)
    k = 1.0 - quality
    instances = []
    for gt in prompt.ground_truth:
        dropped = rng.random() < k * cfg.drop_p
        dims = prompt.image_dims[gt.image_index - 1]
        box = _jitter(gt.box, k * cfg.box_noise, dims, rng) if k > 0 else gt.box
        if not dropped:
            instances.append(GroundedInstance(box, gt.image_index, gt.description))
    for image in range(1, prompt.image_count + 1):
        if rng.random() < k * cfg.spurious_p:
            w, h = prompt.image_dims[image - 1]
            desc = OBJECTS[int(rng.integers(len(OBJECTS)))]
            instances.append(GroundedInstance(_random_box(rng, w, h), image, desc))
    lines = [render_instance(i, tags) for i in instances]
    corrupt = force_format_error or rng.random() < k * cfg.format_error_p
    if lines and corrupt:
        j = int(rng.integers(len(lines)))
        lines[j] = _corrupt(lines[j], prompt, tags, rng)
    answer = "\n".join(lines) if lines else tags.none_marker
    if mode is Mode.COT:
        return f"{reasoning_block(rng, tags)}\n{answer}"
    return answer


@dataclass(frozen=True)
class CorpusRecord:
    prompt: PromptRecord
    completions: tuple[str, ...]
    modes: tuple[str, ...]
    qualities: tuple[float, ...]


def generate_corpus(
    cfg: GeneratorConfig,
    n_prompts: int,
    quality: float | None = None,
    tags: TagScheme = DEFAULT_TAGS,
) -> list[CorpusRecord]:
    """``n_prompts`` prompts with ``cfg.candidates`` completions each.

    A fixed ``quality`` applies to every completion; otherwise each
    completion draws its quality uniformly from [0, 1].
    """
    out = []
    for i in range(n_prompts):
        rng = prompt_rng(cfg.seed, i)
        prompt = generate_prompt(cfg, rng, f"p{i:05d}")
        texts, modes, qs = [], [], []
        for _ in range(cfg.candidates):
            q = float(rng.uniform()) if quality is None else float(quality)
            mode = Mode.COT if rng.random() < cfg.cot_probability else Mode.DIRECT
            texts.append(generate_completion(prompt, q, mode, cfg, rng, tags))
            modes.append(mode.value)
            qs.append(q)
        out.append(CorpusRecord(prompt, tuple(texts), tuple(modes), tuple(qs)))
    return out


@dataclass(frozen=True)
class ToyTask:
    prompts: tuple[PromptRecord, ...]
    candidates: dict[str, tuple[str, ...]]
    best: dict[str, int]


def build_toy_task(
    cfg: GeneratorConfig,
    n_prompts: int,
    distractor_cap: float = 1.0,
    tags: TagScheme = DEFAULT_TAGS,
    max_tries: int = 32,
) -> ToyTask:
    """Prompts whose candidate sets hold one perfect answer and weak distractors.

    The perfect candidate scores 4.0; every distractor scores below
    ``distractor_cap`` (with the default reward configuration).
    """
    reward_cfg = RewardConfig()
    prompts, candidates, best = [], {}, {}
    for i in range(n_prompts):
        rng = prompt_rng(cfg.seed, i)
        prompt = generate_prompt(cfg, rng, f"t{i:05d}")
        texts = []
        slot = int(rng.integers(cfg.candidates))
        for c in range(cfg.candidates):
            mode = Mode.COT if rng.random() < cfg.cot_probability else Mode.DIRECT
            if c == slot:
                texts.append(generate_completion(prompt, 1.0, mode, cfg, rng, tags))
                continue
            for _ in range(max_tries):
                text = generate_completion(prompt, 0.0, mode, cfg, rng, tags, force_format_error=True)
                if score_completion(text, prompt, reward_cfg, tags)[1].r_total < distractor_cap:
                    break
            else:
                text = "I could not find the target." if mode is Mode.DIRECT else (
                    f"{reasoning_block(rng, tags)}\nI could not find the target."
                )
            texts.append(text)
        prompts.append(prompt)
        candidates[prompt.id] = tuple(texts)
        best[prompt.id] = slot
    return ToyTask(tuple(prompts), candidates, best)
