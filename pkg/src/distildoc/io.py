"""JSON readers and writers for detections, OCR pages, enriched pages,
prediction records and model/projector parameters.

Every document carries ``"version": "v1"`` at the top level.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .enrich import EnrichedTokens, OcrDocument
from .errors import DistilDocError, ParseError
from .geometry import BBox, LayoutRegion, standardize_bbox
from .metrics import PredictionRecord
from .projector import Projector
from .tensor import Tensor

log = logging.getLogger(__name__)

SCHEMA_VERSION = "v1"


def read_json(path) -> Any:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not UTF-8", f"byte {e.start}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise ParseError(f"{path}: malformed JSON ({e.msg})", f"byte {offset}") from None


def write_json(path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _versioned(obj: Any, path) -> dict:
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: top level must be an object", "byte 0")
    if obj.get("version") != SCHEMA_VERSION:
        raise ParseError(f"{path}: expected version {SCHEMA_VERSION!r}, got {obj.get('version')!r}", "version")
    return obj


# detections ---------------------------------------------------------------------

@dataclass
class DetectionFile:
    detections: list[dict]
    categories: dict[int, str]
    image_dims: dict[Any, tuple[float, float]]


def _categories(raw, path) -> dict[int, str]:
    if isinstance(raw, dict):
        items = raw.items()
    elif isinstance(raw, list):
        try:
            items = [(c["id"], c["name"]) for c in raw]
        except (KeyError, TypeError):
            raise ParseError(f"{path}: categories need 'id' and 'name'", "categories") from None
    else:
        raise ParseError(f"{path}: categories must be a list or object", "categories")
    try:
        return {int(k): str(v) for k, v in items}
    except (TypeError, ValueError):
        raise ParseError(f"{path}: category ids must be integers", "categories") from None


def load_detection_file(path) -> DetectionFile:
    obj = _versioned(read_json(path), path)
    categories = _categories(obj.get("categories", {}), path)
    dets = obj.get("detections")
    if not isinstance(dets, list):
        raise ParseError(f"{path}: 'detections' must be a list", "detections")
    for i, d in enumerate(dets):
        where = f"detections[{i}]"
        if not isinstance(d, dict) or not {"image_id", "category_id", "bbox", "score"} <= d.keys():
            raise ParseError(f"{path}: detection needs image_id, category_id, bbox, score", where)
        if not isinstance(d["image_id"], (int, str)):
            raise ParseError(f"{path}: image_id must be an integer or string", where)
        if not isinstance(d["category_id"], int) or d["category_id"] not in categories:
            raise ParseError(f"{path}: unknown category_id {d['category_id']!r}", where)
        bbox = d["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4 or not all(isinstance(v, (int, float)) for v in bbox):
            raise ParseError(f"{path}: bbox must be four numbers [x, y, w, h]", where)
        if not isinstance(d["score"], (int, float)) or not 0.0 <= d["score"] <= 1.0:
            raise ParseError(f"{path}: score must lie in [0, 1]", where)
    images = obj.get("images", [])
    if not isinstance(images, list):
        raise ParseError(f"{path}: 'images' must be a list", "images")
    dims = {}
    for i, img in enumerate(images):
        try:
            dims[img["id"]] = (float(img["width"]), float(img["height"]))
        except (KeyError, TypeError, ValueError, IndexError):
            raise ParseError(f"{path}: image entries need id, width, height", f"images[{i}]") from None
    return DetectionFile(dets, categories, dims)


def load_dla_predictions(path, score_threshold: float = 0.6) -> dict[Any, list[LayoutRegion]]:
    """Layout regions per image id, dropping detections scored below the threshold."""
    det_file = load_detection_file(path)
    return regions_by_image(det_file, score_threshold)


def regions_by_image(det_file: DetectionFile, score_threshold: float = 0.6) -> dict[Any, list[LayoutRegion]]:
    grouped: dict[Any, list[LayoutRegion]] = defaultdict(list)
    for i, d in enumerate(det_file.detections):
        if d["score"] < score_threshold:
            continue
        try:
            box = standardize_bbox(d["bbox"], "xywh")
        except DistilDocError as e:
            raise ParseError(str(e), f"detections[{i}]") from None
        meta = {k: v for k, v in d.items() if k not in ("image_id", "category_id", "bbox", "score")}
        grouped[d["image_id"]].append(
            LayoutRegion(box, det_file.categories[d["category_id"]], float(d["score"]), meta)
        )
    return dict(grouped)


def write_detection_file(path, det_file: DetectionFile) -> None:
    write_json(path, {
        "version": SCHEMA_VERSION,
        "categories": [{"id": k, "name": v} for k, v in det_file.categories.items()],
        "images": [{"id": k, "width": w, "height": h} for k, (w, h) in det_file.image_dims.items()],
        "detections": det_file.detections,
    })


# OCR --------------------------------------------------------------------------------

def _clamp(box: BBox, width: float, height: float) -> BBox:
    return BBox(
        min(max(box.x1, 0.0), width),
        min(max(box.y1, 0.0), height),
        min(max(box.x2, 0.0), width),
        min(max(box.y2, 0.0), height),
    )


def ocr_from_dict(obj: dict, source="<ocr>") -> OcrDocument:
    obj = _versioned(obj, source)
    try:
        width, height = float(obj["width"]), float(obj["height"])
        tokens, raw_boxes = obj["tokens"], obj["boxes"]
    except (KeyError, TypeError, ValueError):
        raise ParseError(f"{source}: OCR file needs width, height, tokens, boxes", "top level") from None
    if width <= 0 or height <= 0:
        raise ParseError(f"{source}: image dimensions must be positive", "width/height")
    if not isinstance(tokens, list) or not isinstance(raw_boxes, list):
        raise ParseError(f"{source}: tokens and boxes must be lists", "tokens/boxes")
    if len(tokens) != len(raw_boxes):
        raise ParseError(f"{source}: {len(tokens)} tokens but {len(raw_boxes)} boxes", "boxes")
    boxes, clamped = [], 0
    for i, (tok, raw) in enumerate(zip(tokens, raw_boxes)):
        if not isinstance(tok, str):
            raise ParseError(f"{source}: tokens must be strings", f"tokens[{i}]")
        if not isinstance(raw, list) or len(raw) != 4 or not all(isinstance(v, (int, float)) for v in raw):
            raise ParseError(f"{source}: box must be four numbers", f"boxes[{i}]")
        box = standardize_bbox(raw, "xyxy")
        fixed = _clamp(box, width, height)
        if fixed != box:
            clamped += 1
        boxes.append(fixed)
    if clamped:
        log.warning("%s: clamped %d out-of-page token boxes", source, clamped)
    return OcrDocument(list(tokens), boxes, width, height, n_clamped=clamped)


def load_ocr_document(path) -> OcrDocument:
    return ocr_from_dict(read_json(path), path)


def ocr_to_dict(doc: OcrDocument) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "width": doc.image_width,
        "height": doc.image_height,
        "tokens": list(doc.tokens),
        "boxes": [b.as_list() for b in doc.boxes],
    }


def write_ocr_document(path, doc: OcrDocument) -> None:
    write_json(path, ocr_to_dict(doc))


# enriched pages ---------------------------------------------------------------------

def enriched_to_dict(enriched: EnrichedTokens) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "width": enriched.image_width,
        "height": enriched.image_height,
        "tokens": list(enriched.tokens),
        "boxes": [b.as_list() for b in enriched.boxes],
        "tag_spans": [list(s) for s in enriched.tag_spans],
    }


def write_enriched(path, enriched: EnrichedTokens) -> None:
    write_json(path, enriched_to_dict(enriched))


def load_enriched(path) -> EnrichedTokens:
    obj = read_json(path)
    if not isinstance(obj, dict) or not {"tokens", "boxes", "tag_spans"} <= obj.keys():
        raise ParseError(f"{path}: enriched file needs tokens, boxes, tag_spans", "top level")
    if not all(isinstance(obj[k], list) for k in ("tokens", "boxes", "tag_spans")):
        raise ParseError(f"{path}: tokens, boxes and tag_spans must be lists", "top level")
    if len(obj["tokens"]) != len(obj["boxes"]):
        raise ParseError(f"{path}: tokens and boxes differ in length", "boxes")
    try:
        return EnrichedTokens(
            [str(t) for t in obj["tokens"]],
            [BBox(*map(float, b)) for b in obj["boxes"]],
            [tuple(int(v) for v in s) for s in obj["tag_spans"]],
            float(obj.get("width", 0.0)),
            float(obj.get("height", 0.0)),
        )
    except (TypeError, ValueError):
        raise ParseError(f"{path}: malformed enriched entry", "boxes/tag_spans") from None


# prediction records -----------------------------------------------------------------

def load_records(path) -> list[PredictionRecord]:
    """Records as ``{"confidence", "correct"[, "probabilities"]}`` or ``{"probabilities", "label"}``."""
    obj = read_json(path)
    items = obj.get("records") if isinstance(obj, dict) else obj
    if not isinstance(items, list):
        raise ParseError(f"{path}: expected a list of records", "records")
    records = []
    for i, r in enumerate(items):
        try:
            if "confidence" in r:
                probs = r.get("probabilities")
                records.append(PredictionRecord(
                    float(r["confidence"]),
                    bool(r["correct"]),
                    None if probs is None else tuple(float(p) for p in probs),
                ))
            else:
                records.append(PredictionRecord.from_probabilities(r["probabilities"], r["label"]))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ParseError(f"{path}: bad record ({e})", f"records[{i}]") from None
    return records


def records_to_dict(records: list[PredictionRecord]) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "records": [
            {"confidence": r.confidence, "correct": r.correct}
            if r.probabilities is None
            else {"confidence": r.confidence, "correct": r.correct, "probabilities": list(r.probabilities)}
            for r in records
        ],
    }


# parameters -------------------------------------------------------------------------

def tensors_to_dict(kind: str, seed: int, shapes: dict, tensors: dict[str, np.ndarray]) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "kind": kind,
        "seed": seed,
        "shapes": shapes,
        "tensors": [
            {"name": name, "shape": list(arr.shape), "values": [float(v) for v in np.ravel(arr)]}
            for name, arr in tensors.items()
        ],
    }


def tensors_from_dict(obj: dict, source="<params>") -> dict[str, np.ndarray]:
    obj = _versioned(obj, source)
    out = {}
    for i, t in enumerate(obj.get("tensors", [])):
        try:
            out[t["name"]] = np.array(t["values"], dtype=np.float64).reshape(t["shape"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{source}: malformed tensor entry", f"tensors[{i}]") from None
    return out


def projector_to_dict(p: Projector) -> dict:
    shapes = {
        "student": list(p.student_shape),
        "teacher": list(p.teacher_shape),
        "drop_cls": p.drop_cls,
    }
    return tensors_to_dict(p.kind, p.seed, shapes, {k: v.data for k, v in p.params.items()})


def projector_from_dict(obj: dict) -> Projector:
    arrays = tensors_from_dict(obj)
    shapes = obj["shapes"]
    return Projector(
        kind=obj["kind"],
        student_shape=tuple(shapes["student"]),
        teacher_shape=tuple(shapes["teacher"]),
        seed=obj["seed"],
        drop_cls=bool(shapes.get("drop_cls", True)),
        params={k: Tensor(v, requires_grad=True) for k, v in arrays.items()},
    )


def mlp_to_dict(model, seed: int) -> dict:
    tensors = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        tensors[f"layer{i}.weight"] = w.data
        tensors[f"layer{i}.bias"] = b.data
    return tensors_to_dict("mlp", seed, {"layer_dims": list(model.layer_dims)}, tensors)


def mlp_from_dict(obj: dict):
    from .toy import Mlp

    arrays = tensors_from_dict(obj)
    dims = tuple(obj["shapes"]["layer_dims"])
    n = len(dims) - 1
    return Mlp(
        dims,
        [Tensor(arrays[f"layer{i}.weight"], requires_grad=True) for i in range(n)],
        [Tensor(arrays[f"layer{i}.bias"], requires_grad=True) for i in range(n)],
    )
