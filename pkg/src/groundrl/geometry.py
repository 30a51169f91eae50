"""Boxes, grounded instances, prompt records and IoU."""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box ``(x1, y1, x2, y2)``.

    Swapped corners are reordered on construction, so ``x1 <= x2`` and
    ``y1 <= y2`` always hold. Coordinates must be finite and non-negative.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        for c in coords:
            if isinstance(c, bool) or not isinstance(c, numbers.Real):
                raise TypeError(f"box coordinate must be numeric, got {c!r}")
            if not math.isfinite(c):
                raise ValueError(f"box coordinate must be finite, got {c!r}")
            if c < 0:
                raise ValueError(f"box coordinate must be >= 0, got {c!r}")
        x1, x2 = sorted((float(self.x1), float(self.x2)))
        y1, y2 = sorted((float(self.y1), float(self.y2)))
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "y2", y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def translated(self, dx: float, dy: float) -> BoundingBox:
        return BoundingBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


@dataclass(frozen=True)
class GroundedInstance:
    """One predicted or annotated object: a box on a 1-based image index."""

    box: BoundingBox
    image_index: int
    description: str = ""

    def __post_init__(self) -> None:
        if isinstance(self.image_index, bool) or not isinstance(self.image_index, numbers.Integral):
            raise TypeError(f"image_index must be an int, got {self.image_index!r}")
        object.__setattr__(self, "image_index", int(self.image_index))
        if self.image_index < 1:
            raise ValueError(f"image_index must be >= 1, got {self.image_index}")


@dataclass(frozen=True)
class PromptRecord:
    id: str
    image_count: int
    image_dims: tuple[tuple[float, float], ...]
    instruction: str = ""
    ground_truth: tuple[GroundedInstance, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_dims", tuple(tuple(d) for d in self.image_dims))
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0.0 when the union has zero area."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def validate_prompt(p: PromptRecord) -> list[str]:
    """Return every invariant violation of ``p`` as ``"<field path>: <message>"``.

    An empty list means the record is well formed.
    """
    violations: list[str] = []
    if isinstance(p.image_count, bool) or not isinstance(p.image_count, int) or p.image_count < 1:
        violations.append(f"image_count: must be an integer >= 1, got {p.image_count!r}")
    if len(p.image_dims) != p.image_count:
        violations.append(
            f"image_dims: length {len(p.image_dims)} does not match image_count {p.image_count}"
        )
    for k, dims in enumerate(p.image_dims):
        if len(dims) != 2 or any(not isinstance(d, numbers.Real) or not d > 0 for d in dims):
            violations.append(f"image_dims[{k}]: expected (width, height) > 0, got {dims!r}")
    for k, inst in enumerate(p.ground_truth):
        path = f"ground_truth[{k}]"
        if not 1 <= inst.image_index <= p.image_count:
            violations.append(
                f"{path}.image_index: image_index out of range "
                f"({inst.image_index} not in [1, {p.image_count}])"
            )
            continue
        if inst.image_index - 1 >= len(p.image_dims):
            continue
        dims = p.image_dims[inst.image_index - 1]
        if len(dims) != 2:
            continue
        w, h = dims
        if inst.box.x2 > w or inst.box.y2 > h:
            violations.append(f"{path}.box: box {inst.box.as_tuple()} exceeds image dims {(w, h)}")
    return violations


COORD_SPACES = ("pixel", "norm1000")


def rescale_instance(
    inst: GroundedInstance, dims: tuple[float, float], coords: str = "pixel"
) -> GroundedInstance:
    """Map predicted coordinates into pixel space for an image of size ``dims``."""
    if coords == "pixel":
        return inst
    if coords != "norm1000":
        raise ValueError(f"unknown coordinate space {coords!r}")
    w, h = dims
    b = inst.box
    box = BoundingBox(b.x1 * w / 1000, b.y1 * h / 1000, b.x2 * w / 1000, b.y2 * h / 1000)
    return GroundedInstance(box, inst.image_index, inst.description)
