"""``ramit`` command line: train, restore, count, gradcheck, metrics, attribution.

Exit codes::

    0  success
    1  gradcheck failure
    2  usage or config error (bad JSON, unknown field, bad override)
    3  checkpoint unreadable or not matching the config
    4  image read/write failure
    5  image size or channel mismatch
    6  dataset error (unreadable or empty manifest)
    7  attribution region out of bounds

stdout carries JSON lines only; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK, EXIT_GRAD, EXIT_CONFIG, EXIT_CKPT, EXIT_IMAGE, EXIT_SIZE, EXIT_DATA, EXIT_REGION = range(8)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _emit(obj: dict):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """``key=value`` with dotted keys for nesting; values parse as JSON when they can."""
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise CliError(EXIT_CONFIG, f"override {item!r} is not key=value")
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise CliError(EXIT_CONFIG, f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = _parse_value(value)
    return doc


def load_config_doc(path: str | None, overrides: list[str] | None) -> dict:
    doc = {}
    if path:
        try:
            with open(path, "rb") as f:
                raw = f.read()
        except OSError as e:
            raise CliError(EXIT_CONFIG, f"cannot read config {path}: {e}") from e
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CliError(EXIT_CONFIG, f"config {path}: invalid UTF-8 at byte offset {e.start}") from e
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            offset = len(text[:e.pos].encode("utf-8"))
            raise CliError(EXIT_CONFIG, f"config {path}: {e.msg} at byte offset {offset} "
                                        f"(line {e.lineno} column {e.colno})") from e
        if not isinstance(doc, dict):
            raise CliError(EXIT_CONFIG, f"config {path}: top level must be an object")
    return apply_overrides(doc, overrides)


def split_config(doc: dict):
    """Model fields at top level; an optional ``train`` section feeds the schedule."""
    from .model import ModelConfig
    from .pipeline.train import TrainSchedule

    doc = dict(doc)
    train = doc.pop("train", {}) or {}
    try:
        cfg = ModelConfig.from_dict(doc)
        train = dict(train)
        steps = train.pop("steps", None)
        schedule = TrainSchedule.from_dict(train)
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_CONFIG, f"invalid config: {e}") from e
    return cfg, schedule, steps


def _parse_hq(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"--hq expects WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise CliError(EXIT_CONFIG, f"--hq must be positive, got {text!r}")
    return w, h


def _parse_region(text: str) -> tuple[int, int, int, int]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 4:
        raise CliError(EXIT_CONFIG, f"--region expects x,y,w,h, got {text!r}")
    return vals


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _read_image(path: str):
    from .pipeline.netpbm import ImageFormatError, load_image
    try:
        return load_image(path)
    except (OSError, ImageFormatError) as e:
        raise CliError(EXIT_IMAGE, f"cannot read image {path}: {e}") from e


def _write_image(arr: np.ndarray, path: str):
    from .pipeline.netpbm import ImageBuffer, save_image
    try:
        save_image(ImageBuffer.from_array(arr), path)
    except OSError as e:
        raise CliError(EXIT_IMAGE, f"cannot write image {path}: {e}") from e


def _load_model(args):
    from .checkpoint import CheckpointIoError, CheckpointShapeMismatch, UnknownParameter, load_checkpoint
    from .pipeline.data import NormStats

    if not args.ckpt:
        raise CliError(EXIT_CONFIG, "--ckpt is required")
    cfg = None
    if args.config or args.override:
        cfg, _, _ = split_config(load_config_doc(args.config, args.override))
    try:
        model, meta = load_checkpoint(args.ckpt, cfg)
    except (CheckpointIoError, CheckpointShapeMismatch, UnknownParameter) as e:
        lines = str(e).splitlines()
        if len(lines) > 9:
            lines = lines[:9] + [f"  ... {len(lines) - 9} more"]
        raise CliError(EXIT_CKPT, "\n".join(lines)) from e
    except (TypeError, ValueError, KeyError) as e:
        raise CliError(EXIT_CKPT, f"checkpoint {args.ckpt}: {e}") from e
    norm = NormStats.from_dict(meta["norm"]) if meta.get("norm") else None
    return model, norm


def _input_array(args, cfg):
    if not args.input:
        raise CliError(EXIT_CONFIG, "--in is required")
    arr = _read_image(args.input).to_array()
    if arr.shape[0] != cfg.in_channels:
        raise CliError(EXIT_SIZE, f"model expects {cfg.in_channels} channel(s), image has {arr.shape[0]}")
    return arr


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_count(args) -> int:
    from .model import count_params, mult_adds_breakdown

    cfg, _, _ = split_config(load_config_doc(args.config, args.override))
    hq = _parse_hq(args.hq)
    model_params = count_params(cfg)
    breakdown = mult_adds_breakdown(cfg, hq)
    _emit({"params": model_params, "mult_adds": breakdown["total"],
           "attention_core": breakdown["attention_core"], "helper": breakdown["helper"],
           "hq": f"{hq[0]}x{hq[1]}"})
    return EXIT_OK


def cmd_restore(args) -> int:
    from .pipeline.train import restore

    model, norm = _load_model(args)
    lq = _input_array(args, model.config)
    if not args.out:
        raise CliError(EXIT_CONFIG, "--out is required")
    _write_image(restore(model, lq, norm), args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    if args.scope == "ops":
        results = gradcheck.check_ops(seeds=args.seeds)
    else:
        results = gradcheck.check_model(seed=args.seed)
    failed = [r for r in results if not r.ok]
    for r in results:
        _emit({"check": r.name, "max_rel_error": r.error, "tolerance": r.tolerance, "ok": r.ok})
    if failed:
        names = ", ".join(f"{r.name} ({r.error:.3e})" for r in failed)
        print(f"gradcheck failed: {names}", file=sys.stderr)
        return EXIT_GRAD
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .pipeline.metrics import psnr, rgb_to_y, ssim

    a = _read_image(args.a).to_array()
    b = _read_image(args.b).to_array()
    if a.shape != b.shape:
        raise CliError(EXIT_SIZE, f"image sizes differ: {a.shape} vs {b.shape}")
    if args.mode == "y":
        if a.shape[0] != 3:
            raise CliError(EXIT_SIZE, "Y conversion requires RGB inputs")
        a, b = rgb_to_y(a) / 255.0, rgb_to_y(b) / 255.0
    try:
        p, s = psnr(a, b), ssim(a, b)
    except ValueError as e:
        raise CliError(EXIT_SIZE, str(e)) from e
    # fixed four decimals, written by hand so 1.0 prints as 1.0000
    p_txt = '"inf"' if np.isinf(p) else f"{p:.4f}"
    sys.stdout.write(f'{{"psnr": {p_txt}, "ssim": {s:.4f}, "mode": "{args.mode}"}}\n')
    return EXIT_OK


def cmd_train(args) -> int:
    from .checkpoint import CheckpointIoError
    from .model import build_model
    from .pipeline.data import Rng
    from .pipeline.train import DatasetError, load_manifest, train_loop, write_trace

    cfg, schedule, steps = split_config(load_config_doc(args.config, args.override))
    if not args.input:
        raise CliError(EXIT_CONFIG, "--in (dataset manifest) is required")
    if not args.out:
        raise CliError(EXIT_CONFIG, "--out (checkpoint path) is required")
    try:
        samples = load_manifest(args.input)
    except DatasetError as e:
        raise CliError(EXIT_DATA, str(e)) from e
    for i, s in enumerate(samples):
        if s.hq.shape[0] != cfg.in_channels:
            raise CliError(EXIT_DATA, f"manifest entry {i}: expected {cfg.in_channels} channel(s)")
    model = build_model(cfg, args.seed)
    trace_path = args.trace or os.path.splitext(args.out)[0] + ".csv"
    try:
        result = train_loop(model, samples, schedule, Rng(args.seed, "train"), steps=steps,
                            checkpoint_path=args.out)
    except DatasetError as e:
        raise CliError(EXIT_DATA, str(e)) from e
    except CheckpointIoError as e:
        raise CliError(EXIT_CKPT, str(e)) from e
    write_trace(result, trace_path)
    last = result.trace[-1] if result.trace else None
    _emit({"steps": len(result.trace), "final_loss": last[3] if last else None,
           "checkpoint": args.out, "trace": trace_path})
    return EXIT_OK


def cmd_attribution(args) -> int:
    from .model import RegionOutOfBounds, attribution_map
    from .pipeline.data import NormStats, crop_back, pad_to_multiple

    model, norm = _load_model(args)
    cfg = model.config
    lq = _input_array(args, cfg)
    if not args.region:
        raise CliError(EXIT_CONFIG, "--region is required")
    region = _parse_region(args.region)
    x, y, w, h = region
    oh, ow = lq.shape[1] * cfg.upscale, lq.shape[2] * cfg.upscale
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > ow or y + h > oh:
        raise CliError(EXIT_REGION, f"region {args.region} outside output {ow}x{oh}")
    if not args.out:
        raise CliError(EXIT_CONFIG, "--out is required")
    norm = norm or NormStats.identity(cfg.in_channels)
    padded, size = pad_to_multiple(lq.astype(np.float32), cfg.unit)
    try:
        heat = attribution_map(model, norm.normalize(padded), region)
    except RegionOutOfBounds as e:
        raise CliError(EXIT_REGION, str(e)) from e
    heat = crop_back(heat[None], size)[0]
    peak = heat.max()
    _write_image((heat / peak if peak > 0 else heat)[None], args.out)
    # 8-bit output hides mass below 1/255 of the peak; report per-tile sums at full precision
    m = cfg.window
    th, tw = -(-heat.shape[0] // m), -(-heat.shape[1] // m)
    tiles = np.pad(heat, ((0, th * m - heat.shape[0]), (0, tw * m - heat.shape[1])))
    tiles = tiles.reshape(th, m, tw, m).sum(axis=(1, 3))
    total = tiles.sum()
    _emit({"out": args.out, "tile": m,
           "tile_mass": (tiles / total if total > 0 else tiles).tolist()})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="model/training JSON")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config field; dotted keys reach the train section")
    common.add_argument("--seed", type=int, default=0)

    p = argparse.ArgumentParser(prog="ramit", description=__doc__.split("\n")[0],
                                epilog="Exit codes: 0 ok, 1 gradcheck, 2 config, 3 checkpoint, 4 image I/O, "
                                       "5 size, 6 dataset, 7 region.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common], help="train on a dataset manifest")
    s.add_argument("--in", dest="input", help="dataset manifest JSON")
    s.add_argument("--out", help="checkpoint path")
    s.add_argument("--trace", help="loss trace CSV (default: checkpoint path with .csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("restore", parents=[common], help="restore one PPM/PGM image")
    s.add_argument("--ckpt")
    s.add_argument("--in", dest="input")
    s.add_argument("--out")
    s.set_defaults(func=cmd_restore)

    s = sub.add_parser("count", parents=[common], help="parameters and Mult-Adds")
    s.add_argument("--hq", default="1280x720", help="HQ resolution WxH")
    s.set_defaults(func=cmd_count)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    s.add_argument("scope", choices=("ops", "model"))
    s.add_argument("--seeds", type=int, default=10)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("metrics", parents=[common], help="PSNR and SSIM of two images")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--mode", choices=("rgb", "y"), default="rgb")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("attribution", parents=[common], help="input-gradient heatmap for a region")
    s.add_argument("--ckpt")
    s.add_argument("--in", dest="input")
    s.add_argument("--out")
    s.add_argument("--region", help="x,y,w,h in output coordinates")
    s.set_defaults(func=cmd_attribution)
    return p


def _thread_limit():
    raw = os.environ.get("RAMIT_THREADS", "1")
    try:
        n = max(1, int(raw))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"RAMIT_THREADS must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except CliError as e:
        print(f"ramit {args.command}: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
