"""Command-line front end: ``binsr {train,eval,bench,compare-alpha,depth-sweep,analyze-pyramid}``.

Settings are resolved as preset < ``--config`` INI file < explicit flags.  The
INI file has a ``[model]`` section (SrModelConfig fields) and a ``[train]``
section (TrainConfig fields).  Every command writes ``manifest.json`` into
``--out`` when one is given.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import datetime
import hashlib
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .data import (
    MetricsReport, bicubic_resize, load_dataset, make_pairs, psnr_y, ssim_y,
)
from .infer import (
    ModelFormatError, count_ops, estimate_speedup, load_model, model_size, save_model,
)
from .models import SrModelConfig, build_model, count_parameters, forward_sr
from .pyramid import pyramid_stats, sparsity_summary
from .train import TrainConfig, TrainingDivergedError, evaluate_psnr, train

log = logging.getLogger("binsr")

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5
EXIT_MODEL_FILE = 6

PRESETS = {
    "resnet-bin-2x": ({"scale": 2}, {"initial_lr": 3e-4}),
    "resnet-bin-4x": ({"scale": 4}, {"initial_lr": 3e-4}),
    "resnet-real-2x": ({"scale": 2, "binarize_residual": False}, {"initial_lr": 1e-4}),
    "resnet-real-4x": ({"scale": 4, "binarize_residual": False}, {"initial_lr": 1e-4}),
    "lapsrn-bin-4x": (
        {"family": "pyramid_sr", "scale": 4, "num_residual_blocks": 10},
        {"initial_lr": 1e-4, "decay_factor": 0.8, "decay_interval_epochs": 30,
         "iterations_per_epoch": 800, "loss": "charbonnier"}),
    "lapsrn-real-4x": (
        {"family": "pyramid_sr", "scale": 4, "num_residual_blocks": 10, "binarize_residual": False},
        {"initial_lr": 3e-5, "decay_factor": 0.8, "decay_interval_epochs": 30,
         "iterations_per_epoch": 800, "loss": "charbonnier"}),
    # small enough for a laptop: see README
    "desk-2x": (
        {"scale": 2, "num_residual_blocks": 3, "feature_channels": 16, "use_batch_norm": False,
         "image_skip": True},
        {"initial_lr": 1e-3, "epochs": 30}),
}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ------------------------------------------------------------------ settings

def _coerce(cls, key, raw, section):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    default = fields[key].default
    if isinstance(default, bool) or default is None:
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def resolve(args):
    """Return (SrModelConfig, TrainConfig) from preset, config file and flags."""
    model_kw, train_kw = {}, {}
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        model_kw.update(PRESETS[preset][0])
        train_kw.update(PRESETS[preset][1])
    if getattr(args, "config", None):
        parser = configparser.ConfigParser()
        try:
            if not parser.read(args.config):
                raise ConfigError(f"cannot read config file {args.config}")
        except configparser.Error as e:
            raise ConfigError(f"malformed config file: {e}") from None
        for section in parser.sections():
            if section not in ("model", "train"):
                raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items("model") if parser.has_section("model") else []:
            model_kw[key] = _coerce(SrModelConfig, key, raw, "model")
        for key, raw in parser.items("train") if parser.has_section("train") else []:
            train_kw[key] = _coerce(TrainConfig, key, raw, "train")
    flag_map = {"scale": "scale", "blocks": "num_residual_blocks", "alpha_mode": "alpha_mode"}
    for flag, key in flag_map.items():
        if getattr(args, flag, None) is not None:
            model_kw[key] = getattr(args, flag)
    if getattr(args, "binarize", None) is not None:
        model_kw["binarize_residual"] = args.binarize == "on"
    if getattr(args, "epochs", None) is not None:
        train_kw["epochs"] = args.epochs
    seed = getattr(args, "seed", None)
    if seed is not None:
        model_kw["seed"] = train_kw["seed"] = seed
    try:
        return SrModelConfig(**model_kw), TrainConfig(**train_kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _images(data_dir, what="training"):
    if not data_dir:
        raise DataError(f"--data is required for {what} data")
    try:
        items = load_dataset(data_dir)
    except (FileNotFoundError, OSError) as e:
        raise DataError(str(e)) from None
    if not items:
        raise DataError(f"no images found in {data_dir}")
    return items


def _check_patch(images, tcfg, scale):
    if tcfg.patch_size % scale:
        raise ConfigError(f"patch_size {tcfg.patch_size} is not divisible by scale {scale}")
    small = [n for n, img in images if min(img.shape[:2]) < tcfg.patch_size]
    if small:
        raise DataError(f"{len(small)} image(s) smaller than patch size {tcfg.patch_size}, e.g. {small[0]}")


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _state_digest(model):
    h = hashlib.sha256()
    for name, p in sorted(model.params().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def write_manifest(args, out_dir, started, outputs, extra=None):
    m = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": os.path.abspath(args.config) if getattr(args, "config", None) else None,
        "preset": getattr(args, "preset", None),
        "seed": getattr(args, "seed", None),
        "data": getattr(args, "data", None),
        "out": os.path.abspath(out_dir),
        "version": __version__,
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
    }
    if extra:
        m.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(m, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write(out_dir, name, text):
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _val_pairs(args, scale):
    if not getattr(args, "val", None):
        return []
    return make_pairs([img for _, img in _images(args.val, "validation")], scale)


def _train_one(mcfg, tcfg, images, val_pairs):
    model = build_model(mcfg)
    initial = _state_digest(model)
    history = train(model, images, tcfg, val_pairs)
    model.sync()
    return model, history, initial


# ------------------------------------------------------------------ commands

def cmd_train(args, started):
    mcfg, tcfg = resolve(args)
    images = _images(args.data) if tcfg.epochs else []
    _check_patch(images, tcfg, mcfg.scale)
    model, history, _ = _train_one(mcfg, tcfg, [img for _, img in images],
                                   _val_pairs(args, mcfg.scale))
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.bsr")
    save_model(model, model_path)
    log_path = _write(args.out, "train_log.jsonl", history.to_lines())
    write_manifest(args, args.out, started, [model_path, log_path],
                   {"model_config": mcfg.to_dict(), "train_config": dataclasses.asdict(tcfg)})
    print(f"trained {model!r}; wrote {model_path}")
    return EXIT_OK


class BicubicStub:
    """Stand-in model that just upsamples bicubically."""

    def __init__(self, scale):
        self.cfg = SrModelConfig(scale=scale)

    def __call__(self, lr):
        return bicubic_resize(lr, self.cfg.scale)


def cmd_eval(args, started):
    if args.model == "bicubic":
        model = BicubicStub(args.scale or 4)
        run = model
    else:
        model = load_model(args.model)
        run = lambda lr: np.clip(forward_sr(model, lr), 0, 1)  # noqa: E731
    scale = model.cfg.scale
    report = MetricsReport()
    for name, img in _images(args.data, "evaluation"):
        (lr, hr), = make_pairs([img], scale)
        if min(hr.shape[2:]) < 11:
            raise DataError(f"{name} is too small for SSIM")
        sr = run(lr)
        bic = bicubic_resize(lr, scale)
        report.add(name, psnr_y(sr, hr), ssim_y(sr, hr), psnr_y(bic, hr), ssim_y(bic, hr))
    text = report.to_csv()
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_manifest(args, args.out, started, [_write(args.out, "metrics.csv", text)])
    return EXIT_OK


def bench_report(mcfg: SrModelConfig, input_hw):
    model = build_model(mcfg.with_(binarize_residual=True))
    real_model = build_model(mcfg.with_(binarize_residual=False))
    ops_bin = count_ops(model, input_hw)
    ops_real = count_ops(real_model, input_hw)
    size = model_size(model)
    bits, real = count_parameters(model)
    return {
        "config": mcfg.to_dict(),
        "input_hw": list(input_hw),
        "ops": {
            "real": {"mults": ops_real.mults, "adds": ops_real.adds, "bitops": ops_real.bitops},
            "binary": {"mults": ops_bin.mults, "adds": ops_bin.adds, "bitops": ops_bin.bitops},
            "residual_conv_mult_share": ops_real.residual_conv_share(),
        },
        "size": {
            "binary_params": bits, "real_params_of_binary_net": real,
            "real_params_of_real_net": sum(count_parameters(real_model)),
            "binary_model_bytes": size.binary_model_bytes,
            "real_model_bytes": size.real_model_bytes,
            "binary_model_mb": size.binary_model_mb, "real_model_mb": size.real_model_mb,
        },
        "speedup": estimate_speedup(ops_real, ops_bin),
    }


def _parse_hw(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise ConfigError(f"sizes must be positive, got {text!r}")
    return h, w


def cmd_bench(args, started):
    mcfg, _ = resolve(args)
    if args.input_size:
        hw = _parse_hw(args.input_size)
    else:
        oh, ow = _parse_hw(args.output_size)
        if oh % mcfg.scale or ow % mcfg.scale:
            raise ConfigError(f"output size {args.output_size} not divisible by scale {mcfg.scale}")
        hw = (oh // mcfg.scale, ow // mcfg.scale)
    text = json.dumps(bench_report(mcfg, hw), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_manifest(args, args.out, started, [_write(args.out, "bench.json", text)])
    return EXIT_OK


def _prepare_training(args, mcfg, tcfg):
    images = _images(args.data)
    _check_patch(images, tcfg, mcfg.scale)
    val = _val_pairs(args, mcfg.scale) or make_pairs([img for _, img in images], mcfg.scale)
    bicubic = float(np.mean([psnr_y(bicubic_resize(l, mcfg.scale), h) for l, h in val]))
    return [img for _, img in images], val, bicubic


def cmd_compare_alpha(args, started):
    mcfg, tcfg = resolve(args)
    images, val, bicubic = _prepare_training(args, mcfg, tcfg)
    os.makedirs(args.out, exist_ok=True)
    rows, outputs = [], []
    for mode in ("deterministic", "learnable"):
        model, history, initial = _train_one(mcfg.with_(alpha_mode=mode), tcfg, images, ())
        path = os.path.join(args.out, f"model_{mode}.bsr")
        save_model(model, path)
        outputs.append(path)
        final = history.records[-1].train_loss if history.records else float("nan")
        rows.append([mode, f"{final:.6g}", f"{evaluate_psnr(model, val):.4f}", f"{bicubic:.4f}",
                     initial])
    text = _csv(rows, ["alpha_mode", "final_train_loss", "val_psnr_y", "bicubic_psnr_y",
                       "initial_state_sha256"])
    sys.stdout.write(text)
    outputs.append(_write(args.out, "compare_alpha.csv", text))
    write_manifest(args, args.out, started, outputs,
                   {"model_config": mcfg.to_dict(), "train_config": dataclasses.asdict(tcfg)})
    return EXIT_OK


def cmd_depth_sweep(args, started):
    mcfg, tcfg = resolve(args)
    try:
        depths = [int(d) for d in args.depths.split(",")]
    except ValueError:
        raise ConfigError(f"bad --depths {args.depths!r}") from None
    images, val, bicubic = _prepare_training(args, mcfg, tcfg)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for d in depths:
        model, _, _ = _train_one(mcfg.with_(num_residual_blocks=d), tcfg, images, ())
        b, r = count_parameters(model)
        s = model_size(model)
        rows.append([d, b, r, f"{s.binary_model_mb:.4f}", f"{s.real_model_mb:.4f}",
                     f"{evaluate_psnr(model, val):.4f}", f"{bicubic:.4f}"])
    text = _csv(rows, ["blocks", "binary_params", "real_params", "binary_mb", "real_mb",
                       "val_psnr_y", "bicubic_psnr_y"])
    sys.stdout.write(text)
    write_manifest(args, args.out, started, [_write(args.out, "depth_sweep.csv", text)],
                   {"model_config": mcfg.to_dict(), "train_config": dataclasses.asdict(tcfg)})
    return EXIT_OK


def cmd_analyze_pyramid(args, started):
    images = [img for _, img in _images(args.data, "pyramid")]
    try:
        stats = pyramid_stats(images, args.levels, args.bins)
        summary = sparsity_summary(stats, args.tau)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    rows = []
    for level, hist in enumerate(stats.histograms):
        for i, mass in enumerate(hist):
            rows.append([level, f"{stats.edges[i]:.4f}", f"{stats.edges[i + 1]:.4f}", f"{mass:.6f}"])
    hist_text = _csv(rows, ["level", "bin_lo", "bin_hi", "mass"])
    lines = [f"images: {len(images)}  levels: {args.levels}  bins: {args.bins}  tau: {args.tau}"]
    for r in summary:
        lines.append(f"level {r['level']}: fraction |v|<=tau {r['fraction_le_tau']:.4f}  "
                     f"mean |v| {r['mean_abs']:.4f}  center bin {r['center_bin_mass']:.4f}  "
                     f"center is mode: {r['center_is_mode']}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        outs = [_write(args.out, "histograms.csv", hist_text), _write(args.out, "summary.txt", text)]
        write_manifest(args, args.out, started, outs)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _common(p, training=True):
    p.add_argument("--config", help="INI file with [model] and [train] sections")
    p.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--blocks", type=int, help="number of residual blocks")
    p.add_argument("--alpha-mode", choices=("learnable", "deterministic"))
    p.add_argument("--binarize", choices=("on", "off"))
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--data", help="training images (directory, or one with an hr/ subdir)")
        p.add_argument("--val", help="held-out images for validation PSNR")


def build_parser():
    ap = argparse.ArgumentParser(prog="binsr", description="Binarized residual super-resolution")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write model.bsr")
    _common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR-Y/SSIM-Y of a model against bicubic")
    p.add_argument("--model", required=True, help="model file, or 'bicubic'")
    p.add_argument("--data", required=True)
    p.add_argument("--scale", type=int, choices=(2, 4), help="scale of the bicubic stub")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="op counts, sizes and estimated speedup")
    _common(p, training=False)
    p.add_argument("--input-size", help="LR input size HxW")
    p.add_argument("--output-size", default="1200x800", help="SR output size HxW (default 1200x800)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare-alpha", help="train twins with deterministic and learnable alpha")
    _common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare_alpha)

    p = sub.add_parser("depth-sweep", help="train one model per residual depth")
    _common(p)
    p.add_argument("--depths", default="8,16,24")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_depth_sweep)

    p = sub.add_parser("analyze-pyramid", help="Laplacian gradient-layer statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--bins", type=int, default=21)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze_pyramid)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    try:
        return args.func(args, started)
    except ConfigError as e:
        print(f"binsr: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"binsr: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as e:
        print(f"binsr: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ModelFormatError, FileNotFoundError) as e:
        print(f"binsr: cannot load model: {e}", file=sys.stderr)
        return EXIT_MODEL_FILE


if __name__ == "__main__":
    sys.exit(main())
