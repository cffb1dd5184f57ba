"""Command-line entry point: ``distildoc <subcommand> ...``.

Exit codes: 0 success, 1 contract or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .enrich import EnrichmentConfig, enrich
from .errors import DistilDocError
from .gradcheck import LOSSES, check_loss
from .io import (
    load_detection_file,
    load_enriched,
    load_ocr_document,
    load_records,
    mlp_to_dict,
    projector_to_dict,
    read_json,
    regions_by_image,
    write_enriched,
    write_json,
)
from .losses import KDHyperparams
from .metrics import anls_single, metrics_report
from .prompt import render_prompt, serialize_plain, serialize_space
from .toy import METHODS, TrainConfig, argmax_agreement, distill_experiment

log = logging.getLogger("distildoc")

GRADCHECK_TOLERANCE = 1e-4

# per-method temperature defaults when --tau is not given
DEFAULT_TAU = {"vanilla": 2.5, "nkd": 1.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    level = os.environ.get("DISTILDOC_LOG", "warn").upper()
    level = {"WARN": "WARNING"}.get(level, level)
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write_manifest(out: str, subcommand: str, config: dict, seed, inputs: dict, outputs: list, started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": __version__,
        "duration_seconds": round(time.perf_counter() - started, 6),
    }
    write_json(f"{str(out).rstrip('/')}.manifest.json", manifest)


def _require_file(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file: {path}")
    return p


# subcommands ------------------------------------------------------------------------

def cmd_distill(args) -> int:
    started = time.perf_counter()
    tau = args.tau if args.tau is not None else DEFAULT_TAU.get(args.method, 2.5)
    hp = KDHyperparams(alpha=args.alpha, tau=tau, gamma=args.gamma)
    cfg = TrainConfig(
        method=args.method,
        hyperparams=hp,
        projector_kind=args.projector,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    run = distill_experiment(
        cfg,
        num_classes=args.classes,
        n_per_class=args.n_per_class,
        spread=args.spread,
        teacher_width=args.teacher_width,
        student_width=args.student_width,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "teacher.json": mlp_to_dict(run.teacher.model, args.seed),
        "student_ce.json": mlp_to_dict(run.ce_student.model, args.seed + 1),
        f"student_{args.method}.json": mlp_to_dict(run.kd_student.model, args.seed + 1),
        "loss_trace.json": {
            "teacher": run.teacher.loss_trace,
            "ce_student": run.ce_student.loss_trace,
            "kd_student": run.kd_student.loss_trace,
        },
    }
    if run.kd_student.projector is not None:
        files["projector.json"] = projector_to_dict(run.kd_student.projector)
    records = run.records()
    report = {name: metrics_report(recs, args.bins) for name, recs in records.items()}
    for name in ("ce_student", "kd_student"):
        report[name]["teacher_agreement"] = argmax_agreement(records[name], records["teacher"])
    report["method"] = args.method
    files["metrics.json"] = report
    for name, obj in files.items():
        write_json(out / name, obj)
    config = {
        "method": cfg.method, "alpha": hp.alpha, "tau": hp.tau, "gamma": hp.gamma,
        "projector": cfg.projector_kind, "epochs": cfg.epochs, "lr": cfg.learning_rate,
        "batch_size": cfg.batch_size, "classes": args.classes, "n_per_class": args.n_per_class,
        "spread": args.spread, "teacher_width": args.teacher_width,
        "student_width": args.student_width, "bins": args.bins,
    }
    _write_manifest(args.out, "distill", config, args.seed, {}, sorted(files), started)
    print(json.dumps({k: v for k, v in report.items() if k != "method"}, indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    names = LOSSES if args.loss == "all" else (args.loss,)
    failed = False
    for name in names:
        err = check_loss(name, args.trials, args.eps, args.seed)
        ok = err < GRADCHECK_TOLERANCE
        failed |= not ok
        print(f"{name}\tmax_rel_err={err:.3e}\t{'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def _split_labels(values: list[str]) -> frozenset[str]:
    return frozenset(v for item in values for v in item.split(",") if v)


def cmd_enrich(args) -> int:
    started = time.perf_counter()
    ocr_path = _require_file(args.ocr, "--ocr")
    dla_path = _require_file(args.dla, "--dla")
    doc = load_ocr_document(ocr_path)
    det_file = load_detection_file(dla_path)
    grouped = regions_by_image(det_file, args.score_threshold)
    if args.image_id is not None:
        image_id = _match_id(args.image_id, set(grouped) | set(det_file.image_dims))
    else:
        ids = set(grouped) | set(det_file.image_dims)
        if len(ids) > 1:
            raise DistilDocError("detection file covers several images; pass --image-id")
        image_id = next(iter(ids), None)
    regions = grouped.get(image_id, [])
    cfg = EnrichmentConfig(
        iou_threshold=args.iou_threshold,
        ignore_labels=_split_labels(args.ignore_labels),
        corner_norm=args.corner_norm,
    )
    enriched = enrich(doc, regions, cfg, det_file.image_dims.get(image_id))
    write_enriched(args.out, enriched)
    prompt_path = f"{args.out}.prompt.txt"
    Path(prompt_path).write_text(
        render_prompt(serialize_plain(enriched.tokens), args.question), encoding="utf-8"
    )
    config = {
        "iou_threshold": cfg.iou_threshold, "ignore_labels": sorted(cfg.ignore_labels),
        "corner_norm": cfg.corner_norm, "score_threshold": args.score_threshold,
        "image_id": image_id, "question": args.question,
    }
    _write_manifest(args.out, "enrich", config, None, {"ocr": args.ocr, "dla": args.dla},
                    [args.out, prompt_path], started)
    return 0


def _match_id(raw: str, ids: set):
    for i in ids:
        if str(i) == raw:
            return i
    return raw


def cmd_serialize(args) -> int:
    started = time.perf_counter()
    doc = load_ocr_document(_require_file(args.ocr, "--ocr"))
    tokens, boxes = doc.tokens, doc.boxes
    if args.enriched:
        enriched = load_enriched(_require_file(args.enriched, "--enriched"))
        tokens, boxes = enriched.tokens, enriched.boxes
    if args.mode == "plain":
        text = serialize_plain(tokens)
    else:
        text = serialize_space(tokens, boxes, doc.dims)
    Path(args.out).write_text(text, encoding="utf-8")
    _write_manifest(args.out, "serialize", {"mode": args.mode}, None,
                    {"ocr": args.ocr, "enriched": args.enriched}, [args.out], started)
    return 0


def cmd_prompt(args) -> int:
    started = time.perf_counter()
    text = _require_file(args.doc_text, "--doc-text").read_text(encoding="utf-8")
    Path(args.out).write_text(render_prompt(text, args.question), encoding="utf-8")
    _write_manifest(args.out, "prompt", {"question": args.question}, None,
                    {"doc_text": args.doc_text}, [args.out], started)
    return 0


def cmd_metrics(args) -> int:
    records = load_records(_require_file(args.records, "--records"))
    print(json.dumps(metrics_report(records, args.bins), indent=2))
    return 0


def _answers(obj, path: str, plural: bool) -> dict[str, object]:
    """Accept either {id: answer(s)} or a list of {"question_id", "answer(s)"}."""
    if isinstance(obj, dict) and "version" in obj:
        obj = obj.get("items", obj.get("answers", {}))
    if isinstance(obj, list):
        key = "answers" if plural else "answer"
        try:
            obj = {str(o["question_id"]): o[key] for o in obj}
        except (KeyError, TypeError):
            raise DistilDocError(f"{path}: list entries need question_id and {key}") from None
    if not isinstance(obj, dict):
        raise DistilDocError(f"{path}: expected an object mapping question ids to answers")
    return {str(k): v for k, v in obj.items()}


def cmd_anls(args) -> int:
    preds = _answers(read_json(_require_file(args.pred, "--pred")), args.pred, plural=False)
    golds = _answers(read_json(_require_file(args.gold, "--gold")), args.gold, plural=True)
    missing = sorted(set(golds) - set(preds))
    if missing:
        log.warning("%d questions have no prediction; scored as empty answers", len(missing))
    scores = {}
    for qid, answers in golds.items():
        answers = [answers] if isinstance(answers, str) else list(answers)
        scores[qid] = anls_single(str(preds.get(qid, "")), answers, args.threshold)
    if not scores:
        raise DistilDocError(f"{args.gold}: no gold answers")
    anls = sum(scores.values()) / len(scores)
    print(json.dumps({"anls": anls, "n": len(scores), "per_item": scores}, indent=2))
    return 0


# parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="distildoc", description="Distillation losses, metrics and layout-aware prompts.")
    p.add_argument("--version", action="version", version=f"distildoc {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("distill", help="train toy teacher, CE student and KD student")
    d.add_argument("--method", choices=METHODS, default="vanilla")
    d.add_argument("--alpha", type=float, default=0.5)
    d.add_argument("--tau", type=float, default=None, help="default 2.5 (vanilla), 1.0 (nkd)")
    d.add_argument("--gamma", type=float, default=1.5)
    d.add_argument("--projector", choices=("identity", "linear-cls", "conv-reshape"), default="linear-cls")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--epochs", type=int, default=30)
    d.add_argument("--lr", type=float, default=0.1)
    d.add_argument("--batch-size", type=int, default=32)
    d.add_argument("--classes", type=int, default=3)
    d.add_argument("--n-per-class", type=int, default=300)
    d.add_argument("--spread", type=float, default=0.15)
    d.add_argument("--teacher-width", type=int, default=64)
    d.add_argument("--student-width", type=int, default=8)
    d.add_argument("--bins", type=int, default=10)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_distill)

    g = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    g.add_argument("--loss", choices=(*LOSSES, "all"), default="all")
    g.add_argument("--trials", type=int, default=50)
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("enrich", help="insert layout tags into an OCR token stream")
    e.add_argument("--ocr", required=True)
    e.add_argument("--dla", required=True)
    e.add_argument("--iou-threshold", type=float, default=0.3)
    e.add_argument("--ignore-labels", nargs="*", default=["Text"])
    e.add_argument("--score-threshold", type=float, default=0.6)
    e.add_argument("--corner-norm", choices=("L1", "L2"), default="L1")
    e.add_argument("--image-id", default=None)
    e.add_argument("--question", default="")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_enrich)

    s = sub.add_parser("serialize", help="render an OCR page as plain or spatial text")
    s.add_argument("--ocr", required=True)
    s.add_argument("--mode", choices=("plain", "space"), default="plain")
    s.add_argument("--enriched", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_serialize)

    pr = sub.add_parser("prompt", help="fill the zero-shot DocVQA prompt template")
    pr.add_argument("--doc-text", required=True)
    pr.add_argument("--question", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_prompt)

    m = sub.add_parser("metrics", help="accuracy, ECE and AURC of prediction records")
    m.add_argument("--records", required=True)
    m.add_argument("--bins", type=int, default=10)
    m.set_defaults(func=cmd_metrics)

    a = sub.add_parser("anls", help="ANLS of predicted answers against gold answers")
    a.add_argument("--pred", required=True)
    a.add_argument("--gold", required=True)
    a.add_argument("--threshold", type=float, default=0.5)
    a.set_defaults(func=cmd_anls)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"distildoc: error: {e}", file=sys.stderr)
        return 2
    except DistilDocError as e:
        err = {"error": type(e).__name__, "message": str(e)}
        if getattr(e, "location", None) is not None:
            err["location"] = e.location
        print(json.dumps(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
