"""Parsing of grounding completions.

A grounding line looks like::

    Image-2:<|object_ref_start|>the red car<|object_ref_end|><|box_start|>(10,20),(110,220)<|box_end|>

Lines inside a closed ``<think>...</think>`` block are reasoning, never answers.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

from groundrl.geometry import BoundingBox, GroundedInstance

_NUMBER = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_LINE_START = re.compile(r"^\s*Image-[^\s:]*:")


class Mode(str, enum.Enum):
    COT = "cot"
    DIRECT = "direct"


@dataclass(frozen=True)
class TagScheme:
    ref_open: str = "<|object_ref_start|>"
    ref_close: str = "<|object_ref_end|>"
    box_open: str = "<|box_start|>"
    box_close: str = "<|box_end|>"
    think_open: str = "<think>"
    think_close: str = "</think>"
    none_marker: str = "None"

    def __post_init__(self) -> None:
        markers = self.markers()
        if any(not m for m in markers):
            raise ValueError("tag markers must be non-empty")
        if len(set(markers)) != len(markers):
            raise ValueError("tag markers must be pairwise distinct")

    def markers(self) -> tuple[str, ...]:
        return (
            self.ref_open,
            self.ref_close,
            self.box_open,
            self.box_close,
            self.think_open,
            self.think_close,
        )


DEFAULT_TAGS = TagScheme()


@dataclass(frozen=True)
class ParsedCompletion:
    raw_text: str
    mode: Mode
    instances: tuple[GroundedInstance, ...]
    format_ok: bool
    length_tokens: int
    reasoning_text: str | None = None
    diagnostics: tuple[str, ...] = field(default_factory=tuple)


def _line_pattern(tags: TagScheme) -> re.Pattern[str]:
    e = re.escape
    return re.compile(
        rf"^Image-(\d+):{e(tags.ref_open)}(.*?){e(tags.ref_close)}"
        rf"{e(tags.box_open)}\(\s*({_NUMBER})\s*,\s*({_NUMBER})\s*\)\s*,"
        rf"\s*\(\s*({_NUMBER})\s*,\s*({_NUMBER})\s*\){e(tags.box_close)}$"
    )


def _think_pattern(tags: TagScheme) -> re.Pattern[str]:
    return re.compile(
        rf"{re.escape(tags.think_open)}(.*?){re.escape(tags.think_close)}", re.DOTALL
    )


def _is_grounding_attempt(line: str, tags: TagScheme) -> bool:
    return bool(_LINE_START.match(line)) or tags.box_open in line


def _fmt_coord(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def render_instance(inst: GroundedInstance, tags: TagScheme = DEFAULT_TAGS) -> str:
    b = inst.box
    return (
        f"Image-{inst.image_index}:{tags.ref_open}{inst.description}{tags.ref_close}"
        f"{tags.box_open}({_fmt_coord(b.x1)},{_fmt_coord(b.y1)}),"
        f"({_fmt_coord(b.x2)},{_fmt_coord(b.y2)}){tags.box_close}"
    )


def render_instances(instances, tags: TagScheme = DEFAULT_TAGS) -> str:
    """Render instances one per line; an empty list renders the empty-answer marker."""
    if not instances:
        return tags.none_marker
    return "\n".join(render_instance(i, tags) for i in instances)


def count_tokens(text: str) -> int:
    return len(text.split())


def _first_grounding_offset(text: str, tags: TagScheme) -> int | None:
    offset = 0
    for line in text.splitlines(keepends=True):
        if _is_grounding_attempt(line, tags):
            return offset
        offset += len(line)
    return None


def classify_mode(
    text: str, tags: TagScheme = DEFAULT_TAGS, cot_token_threshold: int = 20
) -> Mode:
    """CoT if a closed think block is present or the untagged preamble is long."""
    if cot_token_threshold < 0:
        raise ValueError("cot_token_threshold must be >= 0")
    if _think_pattern(tags).search(text):
        return Mode.COT
    cut = _first_grounding_offset(text, tags)
    prefix = text if cut is None else text[:cut]
    if count_tokens(prefix) > cot_token_threshold:
        return Mode.COT
    return Mode.DIRECT


def parse_completion(
    text: str,
    image_count: int,
    tags: TagScheme = DEFAULT_TAGS,
    cot_token_threshold: int = 20,
) -> ParsedCompletion:
    """Extract grounding lines from ``text`` and judge the format.

    Never raises on malformed text: problems are reported through
    ``format_ok`` and ``diagnostics``, and well-formed lines are still
    returned as instances.
    """
    if image_count < 1:
        raise ValueError("image_count must be >= 1")
    think = _think_pattern(tags)
    blocks = [m.group(1) for m in think.finditer(text)]
    answer = think.sub("\n", text)
    line_re = _line_pattern(tags)

    instances: list[GroundedInstance] = []
    diagnostics: list[str] = []
    n_lines = 0
    saw_none = False
    for lineno, raw_line in enumerate(answer.splitlines(), start=1):
        line = raw_line.strip()
        if line == tags.none_marker:
            saw_none = True
            continue
        if not _is_grounding_attempt(line, tags):
            continue
        n_lines += 1
        m = line_re.match(line)
        if m is None:
            diagnostics.append(f"line {lineno}: malformed grounding line")
            continue
        index = int(m.group(1))
        coords = [float(g) for g in m.groups()[2:]]
        if not all(math.isfinite(c) for c in coords):
            diagnostics.append(f"line {lineno}: non-finite coordinate")
            continue
        if any(c < 0 for c in coords):
            diagnostics.append(f"line {lineno}: negative coordinate")
            continue
        if not 1 <= index <= image_count:
            diagnostics.append(f"line {lineno}: image index out of bounds ({index})")
            if index < 1:
                continue
        instances.append(GroundedInstance(BoundingBox(*coords), index, m.group(2)))

    if n_lines == 0 and not saw_none:
        diagnostics.append("no grounding line or empty-answer marker")
    if n_lines and saw_none:
        diagnostics.append("empty-answer marker alongside grounding lines")

    mode = classify_mode(text, tags, cot_token_threshold)
    if blocks:
        reasoning = "\n".join(b.strip() for b in blocks)
    elif mode is Mode.COT:
        cut = _first_grounding_offset(text, tags)
        reasoning = (text if cut is None else text[:cut]).strip()
    else:
        reasoning = None
    return ParsedCompletion(
        raw_text=text,
        mode=mode,
        instances=tuple(instances),
        format_ok=not diagnostics,
        length_tokens=count_tokens(text),
        reasoning_text=reasoning,
        diagnostics=tuple(diagnostics),
    )
