"""Layout-tag enrichment of OCR token streams.

A detected layout region (say a ``Table``) is attached to the OCR tokens it
covers: the first covered token (closest to the region's top-left corner)
gets a ``<Table>`` tag in front of it and the last one (closest to the
bottom-right corner) a ``</Table>`` tag after it. Original token order is
never changed, so removing the tags gives back the input exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DomainError
from .geometry import (
    BBox,
    LayoutRegion,
    corner_distance,
    fully_contains,
    interpolate_bbox,
    iou,
    standardize_bbox,
)

_BAD_LABEL = re.compile(r"[\s<>]")


@dataclass
class OcrDocument:
    tokens: list[str]
    boxes: list[BBox]
    image_width: float
    image_height: float
    # number of boxes clamped into the page while loading; not part of equality
    n_clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.boxes):
            raise DomainError(
                f"{len(self.tokens)} tokens but {len(self.boxes)} boxes"
            )
        if self.image_width <= 0 or self.image_height <= 0:
            raise DomainError("image dimensions must be positive")

    @property
    def dims(self) -> tuple[float, float]:
        return (self.image_width, self.image_height)


@dataclass(frozen=True)
class EnrichmentConfig:
    iou_threshold: float = 0.3
    ignore_labels: frozenset[str] = frozenset({"Text"})
    corner_norm: str = "L1"

    def __post_init__(self):
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise DomainError(f"iou_threshold must lie in [0, 1], got {self.iou_threshold}")
        if self.corner_norm not in ("L1", "L2"):
            raise DomainError(f"corner_norm must be L1 or L2, got {self.corner_norm!r}")
        object.__setattr__(self, "ignore_labels", frozenset(self.ignore_labels))


@dataclass(frozen=True)
class InsertionEvent:
    token_index: int
    kind: str  # "start" | "end"
    region_id: int
    class_label: str
    bbox: BBox | None = None

    def sort_key(self) -> tuple[int, int, int]:
        return (self.token_index, 0 if self.kind == "start" else 1, self.region_id)


@dataclass
class EnrichedTokens:
    tokens: list[str]
    boxes: list[BBox]
    tag_spans: list[tuple[int, int, int]]
    image_width: float = 0.0
    image_height: float = 0.0

    def tag_indices(self) -> set[int]:
        return {i for _, s, e in self.tag_spans for i in (s, e)}


def sanitize_label(label: str) -> str:
    """Whitespace runs become '-'; angle brackets are rejected."""
    if "<" in label or ">" in label:
        raise DomainError(f"class label {label!r} contains an angle bracket")
    cleaned = "-".join(label.split())
    if not cleaned:
        raise DomainError("empty class label")
    return cleaned


def qualifying_tokens(region: BBox, boxes: Sequence[BBox], iou_threshold: float) -> list[int]:
    """Tokens fully inside the region or overlapping it with IoU above the threshold."""
    return [
        t
        for t, box in enumerate(boxes)
        if fully_contains(region, box) or iou(region, box) > iou_threshold
    ]


def find_region_spans(
    doc: OcrDocument,
    regions: Sequence[LayoutRegion],
    cfg: EnrichmentConfig = EnrichmentConfig(),
) -> list[InsertionEvent]:
    """Start/end insertion events for every region that covers some token.

    Regions must already be in the OCR image's coordinate space. The region
    id is the region's position in ``regions``.
    """
    events = []
    for rid, region in enumerate(regions):
        if region.class_label in cfg.ignore_labels:
            continue
        candidates = qualifying_tokens(region.bbox, doc.boxes, cfg.iou_threshold)
        if not candidates:
            continue
        # min() keeps the first of equal keys, i.e. the lowest token index
        start = min(candidates, key=lambda t: corner_distance(region.bbox, doc.boxes[t], "top_left", cfg.corner_norm))
        end = min(candidates, key=lambda t: corner_distance(region.bbox, doc.boxes[t], "bottom_right", cfg.corner_norm))
        label = sanitize_label(region.class_label)
        events.append(InsertionEvent(start, "start", rid, label, region.bbox))
        events.append(InsertionEvent(end, "end", rid, label, region.bbox))
    events.sort(key=InsertionEvent.sort_key)
    return events


def insert_tags(doc: OcrDocument, events: Iterable[InsertionEvent]) -> EnrichedTokens:
    """Splice tags into the token stream, tracking an insertion counter."""
    tokens = list(doc.tokens)
    boxes = list(doc.boxes)
    inserted = 0
    positions: list[tuple[int, str, int]] = []  # (region_id, kind, position at insertion)
    for ev in sorted(events, key=InsertionEvent.sort_key):
        if _BAD_LABEL.search(ev.class_label) or not ev.class_label:
            raise DomainError(f"malformed class label {ev.class_label!r}")
        if not 0 <= ev.token_index < len(doc.tokens):
            raise DomainError(f"event token index {ev.token_index} outside the document")
        if ev.kind == "start":
            pos, tag = ev.token_index + inserted, f"<{ev.class_label}>"
        elif ev.kind == "end":
            pos, tag = ev.token_index + inserted + 1, f"</{ev.class_label}>"
        else:
            raise DomainError(f"unknown event kind {ev.kind!r}")
        box = ev.bbox if ev.bbox is not None else doc.boxes[ev.token_index]
        tokens.insert(pos, tag)
        boxes.insert(pos, box)
        # earlier recorded positions at or after pos shift right by one
        positions = [(r, k, p + 1 if p >= pos else p) for r, k, p in positions]
        positions.append((ev.region_id, ev.kind, pos))
        inserted += 1

    starts = {r: p for r, k, p in positions if k == "start"}
    ends = {r: p for r, k, p in positions if k == "end"}
    spans = sorted((r, starts[r], ends[r]) for r in starts if r in ends)
    if len(spans) != len(starts) or len(spans) != len(ends):
        raise DomainError("every region needs exactly one start and one end event")
    return EnrichedTokens(tokens, boxes, spans, doc.image_width, doc.image_height)


def strip_tags(enriched: EnrichedTokens) -> OcrDocument:
    drop = enriched.tag_indices()
    keep = [i for i in range(len(enriched.tokens)) if i not in drop]
    return OcrDocument(
        [enriched.tokens[i] for i in keep],
        [enriched.boxes[i] for i in keep],
        enriched.image_width or 1.0,
        enriched.image_height or 1.0,
    )


def prepare_regions(
    regions: Iterable[LayoutRegion],
    dla_dims: tuple[float, float] | None,
    ocr_dims: tuple[float, float],
) -> list[LayoutRegion]:
    """Bring layout boxes into the OCR image's coordinate space when sizes differ."""
    out = []
    for r in regions:
        box = standardize_bbox(r.bbox.as_list(), "xyxy")
        if dla_dims is not None and tuple(dla_dims) != tuple(ocr_dims):
            box = interpolate_bbox(box, dla_dims, ocr_dims)
        out.append(LayoutRegion(box, r.class_label, r.score, r.metadata))
    return out


def enrich(
    doc: OcrDocument,
    regions: Iterable[LayoutRegion],
    cfg: EnrichmentConfig = EnrichmentConfig(),
    dla_dims: tuple[float, float] | None = None,
) -> EnrichedTokens:
    """Standardize, rescale, match and tag in one call."""
    prepared = prepare_regions(regions, dla_dims, doc.dims)
    return insert_tags(doc, find_region_spans(doc, prepared, cfg))
