"""Command-line entry point wiring every subsystem.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Each subcommand prints one JSON result summary to stdout on success;
diagnostics go to stderr.  Settings resolve as flags > environment >
config file > defaults (see config module).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import adapters, service, synthetic
from .config import Setting, parse_bool, parse_int_tuple, resolve_settings
from .errors import MmcrError, UsageError
from .evalharness import PROTOCOLS, benchmark_report
from .manifest import (GRANULARITIES, LabelVocabulary, load_manifest, records_by_id,
                       save_manifest)
from .models.data import load_image_batch
from .models.network import load_model, predict_batch, save_model
from .models.train import TrainConfig, fine_tune, train
from .preprocess import PreprocessConfig, load_image, bilinear_resize, preprocess_manifest
from .prune import apply_verdicts, build_review_queue, load_queue
from .verify import (calibrate_threshold, evaluate_verification, load_pairs,
                     pair_distances)

__all__ = ["dispatch", "entrypoint"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 via the shared error path
        raise UsageError(message)


def _add_config_flag(parser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file; "
                        "flags override it, environment overrides it too")


def _settings(args, section: str, schema: dict[str, Setting]) -> dict:
    flags = {key: getattr(args, key, None) for key in schema}
    return resolve_settings(section, schema, flags, config_path=args.config)


# ---------------------------------------------------------------- ingest

def _cmd_ingest(args) -> dict:
    if args.dataset == "stanford":
        records = adapters.load_stanford(args.annotations, args.images)
        save_manifest(records, args.out)
        classes = len(LabelVocabulary.from_records(records, "make_model_year")) \
            if records else 0
        return _manifest_summary("ingest", records, args.out,
                                 dataset="stanford", classes=classes)

    if args.task == "classification":
        records = adapters.load_compcars(args.annotations, args.images,
                                         task="classification")
        save_manifest(records, args.out)
        classes = len(LabelVocabulary.from_records(records, "make_model")) \
            if records else 0
        return _manifest_summary("ingest", records, args.out,
                                 dataset="compcars", classes=classes)

    records, pair_sets, calibration = adapters.load_compcars(
        args.annotations, args.images, task="verification")
    save_manifest(records, args.out)
    pairs_dir = Path(args.pairs_out) if args.pairs_out else Path(args.out).parent
    pairs_dir.mkdir(parents=True, exist_ok=True)
    pair_files = {}
    from .verify import save_pairs
    for difficulty, pairs in pair_sets.items():
        pair_path = pairs_dir / f"pairs_{difficulty}.tsv"
        save_pairs(pairs, pair_path)
        pair_files[difficulty] = str(pair_path)
    summary = _manifest_summary("ingest", records, args.out, dataset="compcars")
    summary["pairs"] = {name: len(pairs) for name, pairs in pair_sets.items()}
    summary["pair_files"] = pair_files
    if calibration:
        cal_path = pairs_dir / "pairs_calibration.tsv"
        save_pairs(calibration, cal_path)
        summary["calibration_pairs"] = len(calibration)
        summary["calibration_file"] = str(cal_path)
    return summary


def _manifest_summary(command: str, records, out, **extra) -> dict:
    summary = {
        "command": command,
        "records": len(records),
        "train": sum(1 for r in records if r.split == "train"),
        "test": sum(1 for r in records if r.split == "test"),
        "manifest": str(out),
    }
    summary.update(extra)
    return summary


# ----------------------------------------------------------------- synth

_SYNTH_SCHEMA = {
    "classes": Setting(10, int),
    "per_class": Setting(20, int),
    "color_mode": Setting(False, parse_bool),
    "seed": Setting(0, int),
}


def _cmd_synth(args) -> dict:
    settings = _settings(args, "synth", _SYNTH_SCHEMA)
    records = synthetic.generate_synthetic(
        args.out, settings["classes"], settings["per_class"],
        color_mode=settings["color_mode"], seed=settings["seed"])
    summary = _manifest_summary("synth", records, Path(args.out) / "manifest.tsv",
                                classes=settings["classes"],
                                color_mode=settings["color_mode"],
                                seed=settings["seed"])
    return summary


# ------------------------------------------------------------ preprocess

_PREPROCESS_SCHEMA = {
    "margin": Setting(0.10, float),
    "size": Setting(224, int),
    "mask": Setting(False, parse_bool),
    "fill": Setting("black", str),
}


def _cmd_preprocess(args) -> dict:
    settings = _settings(args, "preprocess", _PREPROCESS_SCHEMA)
    records = load_manifest(args.manifest)
    config = PreprocessConfig(margin_fraction=settings["margin"],
                              target_size=settings["size"],
                              apply_mask=settings["mask"],
                              mask_fill=settings["fill"])
    derived = preprocess_manifest(records, config, args.out)
    return _manifest_summary("preprocess", derived, Path(args.out) / "manifest.tsv",
                             size=settings["size"], mask=settings["mask"])


# ----------------------------------------------------------- train/finetune

_TRAIN_SCHEMA = {
    "preset": Setting("tiny", str),
    "granularity": Setting("make_model", str),
    "epochs": Setting(10, int),
    "batch_size": Setting(32, int),
    "lr": Setting(0.05, float),
    "momentum": Setting(0.9, float),
    "decay_epochs": Setting((), parse_int_tuple),
    "decay_factor": Setting(0.1, float),
    "warmup_epochs": Setting(0, int),
    "seed": Setting(0, int),
    "hflip": Setting(False, parse_bool),
    "jitter": Setting(0.0, float),
    "max_grad_norm": Setting(10.0, float),
}


def _train_config(settings, preset: str) -> TrainConfig:
    return TrainConfig(
        preset=preset,
        epochs=settings["epochs"],
        batch_size=settings["batch_size"],
        learning_rate=settings["lr"],
        momentum=settings["momentum"],
        lr_decay_epochs=tuple(settings["decay_epochs"]),
        lr_decay_factor=settings["decay_factor"],
        warmup_epochs=settings["warmup_epochs"],
        seed=settings["seed"],
        hflip=settings["hflip"],
        brightness_jitter=settings["jitter"],
        max_grad_norm=settings["max_grad_norm"],
    )


def _write_training_outputs(model, log, out, log_out) -> dict:
    save_model(model, out)
    log_path = Path(log_out) if log_out else Path(out).with_suffix(".log.txt")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text(log.to_text(), encoding="utf-8")
    final = log.entries[-1]
    return {
        "model": str(out),
        "log": str(log_path),
        "model_digest": model.digest(),
        "epochs": len(log.entries),
        "final_train_loss": final.train_loss,
        "final_heldout_accuracy": final.heldout_accuracy,
    }


def _cmd_train(args) -> dict:
    settings = _settings(args, "train", _TRAIN_SCHEMA)
    if settings["granularity"] not in GRANULARITIES:
        raise UsageError(f"unknown granularity {settings['granularity']!r}")
    records = load_manifest(args.manifest)
    vocabulary = LabelVocabulary.from_records(records, settings["granularity"])
    config = _train_config(settings, settings["preset"])
    model, log = train(records, vocabulary, config)
    summary = {"command": "train", "classes": len(vocabulary),
               "granularity": settings["granularity"]}
    summary.update(_write_training_outputs(model, log, args.out, args.log_out))
    return summary


def _cmd_finetune(args) -> dict:
    settings = _settings(args, "finetune", _TRAIN_SCHEMA)
    parent = load_model(args.model)
    records = load_manifest(args.manifest)
    preset = args.preset if args.preset is not None else parent.preset
    config = _train_config(settings, preset)
    vocabulary = None
    if args.granularity is not None:
        vocabulary = LabelVocabulary.from_records(records, args.granularity)
    model, log = fine_tune(parent, records, config, vocabulary=vocabulary)
    summary = {"command": "finetune", "parent_digest": parent.digest(),
               "classes": len(model.vocabulary),
               "granularity": model.vocabulary.granularity}
    summary.update(_write_training_outputs(model, log, args.out, args.log_out))
    return summary


# --------------------------------------------------------------- predict

def _cmd_predict(args) -> dict:
    if bool(args.image) == bool(args.manifest):
        raise UsageError("pass either --image (repeatable) or --manifest")
    model = load_model(args.model)
    if args.image:
        names = list(args.image)
        import numpy as np
        images = np.stack([
            bilinear_resize(load_image(path), model.input_size, model.input_size)
            for path in names
        ])
    else:
        records = load_manifest(args.manifest)
        if args.split:
            records = [r for r in records if r.split == args.split]
        names = [r.id for r in records]
        images = load_image_batch(records, model.input_size)
    predictions = predict_batch(model, images)
    results = [
        {"input": str(name),
         "ranking": [{"class": cls, "confidence": conf}
                     for cls, conf in prediction.top(args.top_k)]}
        for name, prediction in zip(names, predictions)
    ]
    return {"command": "predict", "model_digest": model.digest(), "results": results}


# ------------------------------------------------------------------ eval

def _parse_named_files(values, default_name: str) -> dict[str, str]:
    named = {}
    for value in values or []:
        name, sep, path = value.partition("=")
        if not sep:
            name, path = default_name, value
        if name in named:
            raise UsageError(f"duplicate pair set name {name!r}")
        named[name] = path
    return named


def _cmd_eval(args) -> dict:
    model = load_model(args.model)
    records = load_manifest(args.manifest)
    pair_sets = None
    calibration = None
    if args.protocol == "compcars_verif":
        if not args.pairs or not args.calibration_pairs:
            raise UsageError("compcars_verif requires --pairs and --calibration-pairs")
        by_id = records_by_id(records)
        pair_sets = {name: load_pairs(path, by_id)
                     for name, path in _parse_named_files(args.pairs, "pairs").items()}
        calibration = load_pairs(args.calibration_pairs, by_id)
    report = benchmark_report(model, records, args.protocol,
                              pair_sets=pair_sets, calibration_pairs=calibration)
    if args.out:
        report.save(args.out)
    summary = report.to_dict()
    summary.update({"command": "eval", "protocol": args.protocol,
                    "out": str(args.out) if args.out else None})
    return summary


# ---------------------------------------------------------------- verify

def _cmd_verify(args) -> dict:
    model = load_model(args.model)
    records = load_manifest(args.manifest)
    by_id = records_by_id(records)
    if args.action == "calibrate":
        if not args.pairs or len(args.pairs) != 1:
            raise UsageError("calibrate takes exactly one --pairs file")
        pairs = load_pairs(args.pairs[0], by_id)
        distances = pair_distances(model, pairs)
        threshold_model = calibrate_threshold(distances,
                                              [pair.label for pair in pairs])
        if args.out:
            threshold_model.save(args.out)
        return {"command": "verify", "action": "calibrate",
                "pairs": len(pairs), "threshold": threshold_model.threshold,
                "calibration_accuracy": threshold_model.accuracy,
                "out": str(args.out) if args.out else None}

    if not args.calibration_pairs:
        raise UsageError("evaluate requires --calibration-pairs")
    pair_sets = {name: load_pairs(path, by_id)
                 for name, path in _parse_named_files(args.pairs, "pairs").items()}
    if not pair_sets:
        raise UsageError("evaluate requires at least one --pairs file")
    calibration = load_pairs(args.calibration_pairs, by_id)
    report = evaluate_verification(model, pair_sets, calibration)
    if args.out:
        report.save(args.out)
    summary = report.to_dict()
    summary.update({"command": "verify", "action": "evaluate",
                    "out": str(args.out) if args.out else None})
    return summary


# ----------------------------------------------------------------- prune

def _cmd_prune(args) -> dict:
    if args.action == "build":
        if not args.model:
            raise UsageError("prune build requires --model")
        records = load_manifest(args.manifest)
        model = load_model(args.model)
        items, excluded = build_review_queue(records, model, args.fraction,
                                             out_path=args.queue)
        return {"command": "prune", "action": "build", "flagged": len(items),
                "scored_records": len(records), "excluded_classes": excluded,
                "queue": str(args.queue)}

    if not args.out:
        raise UsageError("prune apply requires --out")
    records = load_manifest(args.manifest)
    items = load_queue(args.queue)
    new_records, audit = apply_verdicts(records, items)
    save_manifest(new_records, args.out)
    if args.audit_out:
        Path(args.audit_out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.audit_out).write_text(json.dumps(audit, indent=2) + "\n",
                                        encoding="utf-8")
    actions = [entry["action"] for entry in audit]
    return {"command": "prune", "action": "apply",
            "records_in": len(records), "records_out": len(new_records),
            "removed": actions.count("removed"),
            "relabeled": actions.count("relabeled"),
            "manifest": str(args.out),
            "audit": str(args.audit_out) if args.audit_out else None}


# ----------------------------------------------------------------- serve

_SERVE_SCHEMA = {
    "host": Setting("127.0.0.1", str),
    "port": Setting(8000, int),
    "make_model_model": Setting(None, str),
    "color_model": Setting(None, str),
    "queue_path": Setting(None, str),
    "lease_seconds": Setting(300.0, float),
    "margin_fraction": Setting(0.10, float),
    "apply_mask": Setting(False, parse_bool),
    "ui_dir": Setting(None, str),
}


def _cmd_serve(args) -> dict | None:
    settings = _settings(args, "serve", _SERVE_SCHEMA)
    config = service.ServiceConfig(**settings)
    print(json.dumps({"command": "serve", "host": config.host, "port": config.port,
                      "make_model_model": config.make_model_model,
                      "color_model": config.color_model,
                      "queue_path": config.queue_path}), flush=True)
    service.run(config)
    return None


# ------------------------------------------------------------- dispatcher

def _build_parser() -> _Parser:
    parser = _Parser(prog="mmcr",
                     description="vehicle make, model and color recognition toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("ingest", help="convert a benchmark dataset to a manifest")
    p.add_argument("--dataset", required=True, choices=("stanford", "compcars"))
    p.add_argument("--annotations", required=True,
                   help="annotation file (stanford) or annotation root (compcars)")
    p.add_argument("--images", default=None, help="image root directory")
    p.add_argument("--task", default="classification",
                   choices=("classification", "verification"))
    p.add_argument("--out", required=True, help="manifest output path")
    p.add_argument("--pairs-out", default=None,
                   help="directory for verification pair files")
    _add_config_flag(p)
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("synth", help="render a synthetic labeled dataset")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--per-class", dest="per_class", type=int, default=None)
    p.add_argument("--color-mode", dest="color_mode", action="store_true", default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_config_flag(p)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("preprocess", help="align, crop, resize and optionally mask")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--mask", action="store_true", default=None)
    p.add_argument("--fill", choices=("black", "mean"), default=None)
    _add_config_flag(p)
    p.set_defaults(handler=_cmd_preprocess)

    for name, handler in (("train", _cmd_train), ("finetune", _cmd_finetune)):
        p = sub.add_parser(name, help=f"{name} a classifier on a manifest")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True, help="model output path")
        if name == "finetune":
            p.add_argument("--model", required=True, help="parent model path")
            p.add_argument("--granularity", choices=GRANULARITIES, default=None)
        else:
            p.add_argument("--granularity", choices=GRANULARITIES, default=None)
        p.add_argument("--preset", choices=("tiny", "small", "base"), default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--momentum", type=float, default=None)
        p.add_argument("--decay-epochs", dest="decay_epochs",
                       type=parse_int_tuple, default=None)
        p.add_argument("--decay-factor", dest="decay_factor", type=float, default=None)
        p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--hflip", action="store_true", default=None)
        p.add_argument("--jitter", type=float, default=None)
        p.add_argument("--max-grad-norm", dest="max_grad_norm", type=float, default=None)
        p.add_argument("--log-out", dest="log_out", default=None)
        _add_config_flag(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("predict", help="rank classes for images or a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--image", action="append", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", choices=("train", "test"), default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=5)
    _add_config_flag(p)
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("eval", help="score a model under a benchmark protocol")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", required=True, choices=PROTOCOLS)
    p.add_argument("--out", default=None, help="report path (.json; .txt twin)")
    p.add_argument("--pairs", action="append", default=None,
                   help="NAME=PATH pair file (verification protocol)")
    p.add_argument("--calibration-pairs", dest="calibration_pairs", default=None)
    _add_config_flag(p)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("verify", help="calibrate or evaluate pair verification")
    p.add_argument("action", choices=("calibrate", "evaluate"))
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True,
                   help="manifest that resolves the pair-file image ids")
    p.add_argument("--pairs", action="append", default=None,
                   help="pair file; evaluate accepts repeated NAME=PATH")
    p.add_argument("--calibration-pairs", dest="calibration_pairs", default=None)
    p.add_argument("--out", default=None)
    _add_config_flag(p)
    p.set_defaults(handler=_cmd_verify)

    p = sub.add_parser("prune", help="build a review queue or apply its verdicts")
    p.add_argument("action", choices=("build", "apply"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=None, help="model for outlier scoring (build)")
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--queue", required=True, help="queue file path")
    p.add_argument("--out", default=None, help="pruned manifest path (apply)")
    p.add_argument("--audit-out", dest="audit_out", default=None)
    _add_config_flag(p)
    p.set_defaults(handler=_cmd_prune)

    p = sub.add_parser("serve", help="run the recognition and review HTTP service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--make-model-model", dest="make_model_model", default=None)
    p.add_argument("--color-model", dest="color_model", default=None)
    p.add_argument("--queue", dest="queue_path", default=None)
    p.add_argument("--lease-seconds", dest="lease_seconds", type=float, default=None)
    p.add_argument("--margin", dest="margin_fraction", type=float, default=None)
    p.add_argument("--mask", dest="apply_mask", action="store_true", default=None)
    p.add_argument("--ui-dir", dest="ui_dir", default=None)
    _add_config_flag(p)
    p.set_defaults(handler=_cmd_serve)

    return parser


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = _build_parser().parse_args(argv)
        summary = args.handler(args)
        if summary is not None:
            print(json.dumps(summary, indent=2))
        return 0
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MmcrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - map unexpected bugs to exit 3
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    entrypoint()
