"""JSONL readers and writers. Field layouts are documented in docs/SCHEMA.md."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

from groundrl.geometry import BoundingBox, GroundedInstance, PromptRecord, validate_prompt
from groundrl.parser import Mode, ParsedCompletion
from groundrl.rewards import RewardVector


class DataError(ValueError):
    """Invalid input data, located by file and 1-based line number."""

    def __init__(self, path: str | Path, line: int, message: str):
        self.path, self.line, self.message = str(path), line, message
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class CompletionRecord:
    prompt_id: str
    completions: tuple[str, ...]
    modes: tuple[str, ...] | None = None


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise DataError(path, lineno, "each line must be a JSON object")
            yield lineno, obj


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def _num(x: float) -> int | float:
    return int(x) if float(x).is_integer() else float(x)


def instance_to_dict(inst: GroundedInstance) -> dict:
    return {
        "image_index": inst.image_index,
        "box": [_num(c) for c in inst.box.as_tuple()],
        "description": inst.description,
    }


def instance_from_dict(obj: Any) -> GroundedInstance:
    if not isinstance(obj, dict):
        raise ValueError("instance must be an object")
    box = obj.get("box")
    if not isinstance(box, list) or len(box) != 4:
        raise ValueError("box must be a list [x1, y1, x2, y2]")
    return GroundedInstance(BoundingBox(*box), obj.get("image_index"), obj.get("description", ""))


def prompt_to_dict(p: PromptRecord) -> dict:
    return {
        "id": p.id,
        "image_count": p.image_count,
        "image_dims": [[_num(w), _num(h)] for w, h in p.image_dims],
        "instruction": p.instruction,
        "ground_truth": [instance_to_dict(g) for g in p.ground_truth],
    }


def prompt_from_dict(obj: dict) -> PromptRecord:
    for key in ("id", "image_count", "image_dims"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    if not isinstance(obj["id"], str):
        raise ValueError("id must be a string")
    dims = obj["image_dims"]
    if not isinstance(dims, list) or any(not isinstance(d, list) for d in dims):
        raise ValueError("image_dims must be a list of [width, height]")
    gts = obj.get("ground_truth", [])
    if not isinstance(gts, list):
        raise ValueError("ground_truth must be a list")
    return PromptRecord(
        id=obj["id"],
        image_count=obj["image_count"],
        image_dims=tuple(tuple(d) for d in dims),
        instruction=obj.get("instruction", ""),
        ground_truth=tuple(instance_from_dict(g) for g in gts),
    )


def read_prompts(path: str | Path) -> dict[str, PromptRecord]:
    prompts: dict[str, PromptRecord] = {}
    for lineno, obj in iter_jsonl(path):
        try:
            p = prompt_from_dict(obj)
        except (TypeError, ValueError) as exc:
            raise DataError(path, lineno, str(exc)) from None
        problems = validate_prompt(p)
        if problems:
            raise DataError(path, lineno, "; ".join(problems))
        if p.id in prompts:
            raise DataError(path, lineno, f"duplicate prompt id {p.id!r}")
        prompts[p.id] = p
    return prompts


def read_completions(path: str | Path, prompts: dict[str, PromptRecord]) -> list[CompletionRecord]:
    out = []
    for lineno, obj in iter_jsonl(path):
        pid = obj.get("prompt_id")
        if not isinstance(pid, str):
            raise DataError(path, lineno, "prompt_id must be a string")
        if pid not in prompts:
            raise DataError(path, lineno, f"unknown prompt id {pid!r}")
        texts = obj.get("completions")
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            raise DataError(path, lineno, "completions must be a list of strings")
        modes = obj.get("modes")
        if modes is not None:
            if not isinstance(modes, list) or len(modes) != len(texts):
                raise DataError(path, lineno, "modes must be a list matching completions")
            valid = {m.value for m in Mode}
            if any(m not in valid for m in modes):
                raise DataError(path, lineno, f"modes must be drawn from {sorted(valid)}")
            modes = tuple(modes)
        out.append(CompletionRecord(pid, tuple(texts), modes))
    return out


def reward_record(
    prompt_id: str,
    index: int,
    parsed: ParsedCompletion,
    rv: RewardVector,
    adjustment: float,
    adjusted: float,
) -> dict:
    return {
        "prompt_id": prompt_id,
        "index": index,
        "mode": parsed.mode.value,
        "format_ok": parsed.format_ok,
        "length_tokens": parsed.length_tokens,
        "r_format": rv.r_format,
        "r_image": rv.r_image,
        "r_precision": rv.r_precision,
        "r_recall": rv.r_recall,
        "r_total": rv.r_total,
        "is_accurate": rv.is_accurate,
        "adjustment": adjustment,
        "adjusted": adjusted,
    }
