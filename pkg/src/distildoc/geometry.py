"""Axis-aligned bounding-box helpers in pixel coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

from .errors import DomainError


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class LayoutRegion:
    """One layout detection: box, class name, score and free-form metadata."""

    bbox: BBox
    class_label: str
    score: float = 1.0
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.class_label:
            raise DomainError("layout regions need a class label")


def standardize_bbox(raw: Sequence[float], fmt: str = "xyxy") -> BBox:
    """Convert ``xywh`` or possibly-unordered ``xyxy`` to ordered corners."""
    if len(raw) != 4:
        raise DomainError(f"a box has four coordinates, got {len(raw)}")
    a, b, c, d = (float(v) for v in raw)
    if fmt == "xywh":
        if c < 0 or d < 0:
            raise DomainError(f"negative width/height in xywh box {list(raw)}")
        return BBox(a, b, a + c, b + d)
    if fmt != "xyxy":
        raise DomainError(f"unknown box format {fmt!r}")
    return BBox(min(a, c), min(b, d), max(a, c), max(b, d))


def interpolate_bbox(box: BBox, from_dims: tuple[float, float], to_dims: tuple[float, float]) -> BBox:
    """Rescale ``box`` from one image size (W, H) to another."""
    fw, fh = from_dims
    tw, th = to_dims
    if fw <= 0 or fh <= 0 or tw <= 0 or th <= 0:
        raise DomainError(f"image dimensions must be positive: {from_dims} -> {to_dims}")
    sx, sy = tw / fw, th / fh
    return BBox(box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy)


def intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    return w * h if w > 0 and h > 0 else 0.0


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def fully_contains(outer: BBox, inner: BBox) -> bool:
    """Boundary-inclusive containment."""
    return (
        outer.x1 <= inner.x1
        and outer.y1 <= inner.y1
        and inner.x2 <= outer.x2
        and inner.y2 <= outer.y2
    )


def corner_distance(region: BBox, token: BBox, corner: str = "top_left", norm: str = "L1") -> float:
    """Distance between the same-named corners of two boxes (L1 by default)."""
    if corner == "top_left":
        dx, dy = region.x1 - token.x1, region.y1 - token.y1
    elif corner == "bottom_right":
        dx, dy = region.x2 - token.x2, region.y2 - token.y2
    else:
        raise DomainError(f"unknown corner {corner!r}")
    if norm == "L1":
        return abs(dx) + abs(dy)
    if norm == "L2":
        return math.hypot(dx, dy)
    raise DomainError(f"unknown norm {norm!r}")
