"""Command-line entry point: train / eval / simulate / synth / serve.

Every subcommand resolves its settings the same way: typed defaults, then a
flat key=value config file (--config), then repeated --set key=value
overrides, then dedicated flags — later sources win. Unknown keys and
malformed values are usage errors (exit 2). The fully-resolved configuration
is printed before any work starts, so a run can be reproduced from its log.

Exit codes: 0 success, 1 domain failure (bad data, unreadable checkpoint,
skipped eval samples), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from PIL import Image

from .data import SynthConfig, load_sample, read_manifest, save_dataset, synth_generate
from .errors import ClickmaskError
from .metrics import EvalConfig, evaluate_dataset, iou, record_session
from .model import ClickSegmenter, ModelConfig
from .trainer import TrainConfig, load_checkpoint, train

_REQUIRED = object()


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.split(",") if v.strip())


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.split(",") if v.strip())


# key -> (parser, default, help)
SCHEMAS = {
    "synth": {
        "out": (str, _REQUIRED, "output dataset directory"),
        "seed": (int, 0, "generator seed"),
        "count": (int, 200, "number of samples"),
        "canvas": (int, 112, "square canvas side in pixels"),
        "weights": (str, "", "shape mix, e.g. ellipse=0.4,bar=0.6"),
    },
    "train": {
        "data": (str, _REQUIRED, "dataset directory (manifest.tsv inside)"),
        "out": (str, _REQUIRED, "run directory for checkpoints and the loss curve"),
        "model": (str, "toy", "model preset: toy or paper"),
        "resume": (str, "", "checkpoint to resume from"),
        "lr": (float, None, "learning rate (preset default if unset)"),
        "epochs": (int, None, "training epochs"),
        "epoch_size": (int, None, "samples per epoch"),
        "batch_size": (int, None, "samples per optimizer step"),
        "crop": (int, None, "square training crop (multiple of 2x patch)"),
        "lr_decay_epochs": (_ints, None, "epochs after which lr drops 10x"),
        "iterative_rounds": (int, None, "extra click-feedback rounds per step"),
        "max_initial_clicks": (int, None, "upper bound on initial random clicks"),
        "focal_gamma": (float, None, "focal loss exponent"),
        "freeze_backbone": (_bool, None, "keep encoder weights fixed"),
        "seed": (int, None, "training seed"),
    },
    "eval": {
        "checkpoint": (str, _REQUIRED, "model checkpoint to evaluate"),
        "data": (str, _REQUIRED, "dataset directory"),
        "thresholds": (_floats, (0.85, 0.90, 0.95), "IoU thresholds"),
        "click_cap": (int, 20, "max clicks per session"),
        "out": (str, "eval-out", "directory for records.jsonl / summary.json"),
    },
    "simulate": {
        "checkpoint": (str, _REQUIRED, "model checkpoint"),
        "data": (str, "", "dataset directory: dump simulated sessions"),
        "replay": (str, "", "click-log JSON to replay instead of simulating"),
        "image": (str, "", "image file for --replay"),
        "reference": (str, "", "reference mask PNG for IoU during replay"),
        "cap": (int, 20, "max clicks per simulated session"),
        "out": (str, "", "JSONL records path (default: stdout)"),
        "mask_out": (str, "", "where to write the final replay mask PNG"),
    },
    "serve": {
        "checkpoint": (str, "", "checkpoint to serve (fresh toy model if unset)"),
        "host": (str, "127.0.0.1", "bind address"),
        "port": (int, 8000, "bind port"),
        "session_cap": (int, 8, "max cached sessions (LRU beyond this)"),
        "max_side": (int, 2048, "largest accepted image side"),
        "dry_run": (_bool, False, "build the app and exit without binding"),
    },
}

_SUBPARSERS: dict[str, argparse.ArgumentParser] = {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clickmask",
        description="Interactive segmentation: encode once, refine per click.")
    sub = parser.add_subparsers(dest="command")
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name, help=f"{name} workflow")
        sp.add_argument("--config", default=None,
                        help="flat key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key")
        for key, (_, default, help_text) in schema.items():
            extra = "" if default in (_REQUIRED, None, "") else f" [{default}]"
            sp.add_argument(f"--{key.replace('_', '-')}", dest=f"opt_{key}",
                            default=None, help=help_text + extra)
        _SUBPARSERS[name] = sp
    return parser


def _resolve(command: str, args) -> dict:
    schema = SCHEMAS[command]
    sp = _SUBPARSERS[command]
    values = {k: default for k, (_, default, _h) in schema.items()}

    def apply(key: str, raw: str, source: str):
        if key not in schema:
            sp.error(f"unknown config key {key!r} ({source})")
        try:
            values[key] = schema[key][0](raw)
        except ValueError as e:
            sp.error(f"bad value for {key!r} ({source}): {e}")

    if args.config:
        if not os.path.exists(args.config):
            sp.error(f"config file not found: {args.config}")
        with open(args.config) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    sp.error(f"{args.config}:{line_no}: expected key=value")
                key, raw = (part.strip() for part in line.split("=", 1))
                apply(key, raw, f"{args.config}:{line_no}")
    for item in args.set:
        if "=" not in item:
            sp.error(f"--set needs KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        apply(key.strip(), raw, "--set")
    for key in schema:
        flag = getattr(args, f"opt_{key}")
        if flag is not None:
            apply(key, flag, "flag")

    missing = sorted(k for k, v in values.items() if v is _REQUIRED)
    if missing:
        sp.error(f"missing required settings: {', '.join(missing)}")
    for key in sorted(values):
        print(f"config {command}.{key} = {values[key]}")
    return values


def _parse_weights(raw: str) -> dict | None:
    if not raw.strip():
        return None
    weights = {}
    for part in raw.split(","):
        name, _, value = part.partition("=")
        if not _:
            raise ClickmaskError(f"weights need name=value pairs, got {part!r}")
        weights[name.strip()] = float(value)
    return weights


def _load_dataset_tolerant(root):
    """(samples, skipped) — broken samples become skip records, not aborts."""
    entries, _ = read_manifest(root)
    samples, skipped = [], []
    for entry in entries:
        try:
            samples.append(load_sample(root, entry))
        except ClickmaskError as e:
            skipped.append((entry.id, str(e)))
    return samples, skipped


def _build_model(preset: str) -> ClickSegmenter:
    if preset == "toy":
        return ClickSegmenter(ModelConfig.toy())
    if preset == "paper":
        return ClickSegmenter(ModelConfig.paper_shaped())
    raise ClickmaskError(f"unknown model preset {preset!r} (toy or paper)")


def cmd_synth(cfg: dict) -> int:
    weights = _parse_weights(cfg["weights"])
    synth_cfg = SynthConfig(seed=cfg["seed"], count=cfg["count"],
                            canvas=(cfg["canvas"], cfg["canvas"]),
                            **({"weights": weights} if weights else {}))
    samples = synth_generate(synth_cfg)
    save_dataset(samples, cfg["out"])
    print(f"wrote {len(samples)} samples to {cfg['out']}")
    return 0


def cmd_train(cfg: dict) -> int:
    samples, skipped = _load_dataset_tolerant(cfg["data"])
    for sid, reason in skipped:
        print(f"skipping {sid}: {reason}", file=sys.stderr)
    base = TrainConfig.toy() if cfg["model"] == "toy" else TrainConfig.paper_shaped()
    overrides = {k: cfg[k] for k in
                 ("lr", "epochs", "epoch_size", "batch_size", "crop",
                  "lr_decay_epochs", "iterative_rounds", "max_initial_clicks",
                  "focal_gamma", "freeze_backbone", "seed")
                 if cfg[k] is not None}
    train_cfg = TrainConfig(**{**base.to_dict(), **overrides})
    model = _build_model(cfg["model"])

    def log(record):
        print(f"epoch {record['epoch']} step {record['step']} "
              f"loss {record['loss']:.6f} lr {record['lr']:g}")

    train(train_cfg, samples, model=model, out_dir=cfg["out"],
          resume=cfg["resume"] or None, log=log)
    final = os.path.join(cfg["out"], f"ckpt-{train_cfg.epochs:03d}.npz")
    print(f"final checkpoint: {final}")
    return 0


def cmd_eval(cfg: dict) -> int:
    model = load_checkpoint(cfg["checkpoint"]).model
    samples, skipped = _load_dataset_tolerant(cfg["data"])
    report = evaluate_dataset(
        model, samples,
        EvalConfig(thresholds=cfg["thresholds"], click_cap=cfg["click_cap"]),
        skipped=skipped)
    os.makedirs(cfg["out"], exist_ok=True)
    report.write(os.path.join(cfg["out"], "records.jsonl"),
                 os.path.join(cfg["out"], "summary.json"))
    print(report.to_text())
    return 1 if skipped else 0


def _emit(records, path: str) -> None:
    if path:
        with open(path, "a") as fh:
            for r in records:
                fh.write(json.dumps(r) + "\n")
    else:
        for r in records:
            print(json.dumps(r))


def cmd_simulate(cfg: dict) -> int:
    model = load_checkpoint(cfg["checkpoint"]).model
    if cfg["replay"]:
        return _replay(model, cfg)
    if not cfg["data"]:
        raise ClickmaskError("simulate needs --data, or --replay with --image")
    samples, skipped = _load_dataset_tolerant(cfg["data"])
    for sid, reason in skipped:
        print(f"skipping {sid}: {reason}", file=sys.stderr)
    for sample in samples:
        clicks, ious = record_session(model, sample.image, sample.mask,
                                      cap=cfg["cap"])
        _emit(({"id": sample.id, "step": k + 1, "i": c.i, "j": c.j,
                "label": c.label, "iou": round(v, 6)}
               for k, (c, v) in enumerate(zip(clicks, ious))), cfg["out"])
    return 0


def _replay(model: ClickSegmenter, cfg: dict) -> int:
    from .clicksim import Click
    from .service import _pad_to_multiple  # identical padding to the server
    if not cfg["image"]:
        raise ClickmaskError("--replay needs --image (the session's image)")
    with Image.open(cfg["image"]) as img:
        image = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    with open(cfg["replay"]) as fh:
        doc = json.load(fh)
    raw_clicks = doc["clicks"] if isinstance(doc, dict) else doc
    clicks = [Click(int(c["i"]), int(c["j"]), bool(c["positive"]))
              for c in raw_clicks]
    reference = None
    if cfg["reference"]:
        with Image.open(cfg["reference"]) as m:
            reference = (np.asarray(m.convert("L")) >= 128).astype(np.uint8)

    h, w = image.shape[:2]
    padded = _pad_to_multiple(image, 2 * model.config.backbone.patch_size)
    taps = model.encode(padded[None])
    mask = np.zeros(padded.shape[:2], dtype=np.uint8)
    records = []
    for k in range(len(clicks)):
        mask = model.predict(taps, clicks[: k + 1], mask)
        rec = {"step": k + 1, "i": clicks[k].i, "j": clicks[k].j,
               "label": clicks[k].label}
        if reference is not None:
            rec["iou"] = round(iou(mask[:h, :w], reference), 6)
        records.append(rec)
    _emit(records, cfg["out"])
    if cfg["mask_out"]:
        out = (mask[:h, :w] * 255).astype(np.uint8)
        Image.fromarray(out, mode="L").save(cfg["mask_out"])
        print(f"final mask: {cfg['mask_out']}")
    return 0


def cmd_serve(cfg: dict) -> int:
    from .service import create_app
    model = load_checkpoint(cfg["checkpoint"]).model if cfg["checkpoint"] else None
    app = create_app(model=model, session_cap=cfg["session_cap"],
                     max_side=cfg["max_side"])
    if cfg["dry_run"]:
        print("serve: app ready (dry run)")
        return 0
    import uvicorn
    uvicorn.run(app, host=cfg["host"], port=cfg["port"], log_level="info")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "simulate": cmd_simulate, "serve": cmd_serve}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 2
        cfg = _resolve(args.command, args)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](cfg)
    except ClickmaskError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e!r}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
