"""Command-line entry point: ``cobbnet <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure. Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from pathlib import Path
from xml.etree import ElementTree as ET

import numpy as np

from . import anglesio, dataset, imaging
from .geometry import (CobbTriple, GeometryError, LandmarkError, cobb_angles, ensemble_mean,
                       mask_to_levels, rasterize_mask, read_landmarks, threshold_small_angles)
from .metrics import MetricError, evaluate, smape
from .neural import Adam, ConfigError, Network, NumericError, SGD, checkpoint, cosine_lr, losses
from .neural.gradcheck import gradient_check
from .neural.network import train_epoch
from .tensor import Shape2D, ShapeError

log = logging.getLogger("cobbnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_VERSION = 1


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


def _conv_block(channels: int) -> list[dict]:
    return [{"type": "conv", "out": channels, "kernel": 3, "stride": 1, "pad": 1},
            {"type": "batchnorm"}, {"type": "relu"}, {"type": "maxpool"}]


def default_network() -> list[dict]:
    """Small regression network: three conv blocks and two fully connected layers."""
    return (_conv_block(8) + _conv_block(16) + _conv_block(32)
            + [{"type": "flatten"}, {"type": "fc", "out": 32}, {"type": "relu"},
               {"type": "linear_head", "out": 3}])


TRAIN_DEFAULTS = {
    "version": CONFIG_VERSION,
    "data": None,
    "input": "mask",
    "size": "512x256",
    "train_count": None,
    "split_seed": 0,
    "network": None,
    "optimizer": {"name": "adam", "lr": 3e-3, "beta1": 0.9, "beta2": 0.999, "weight_decay": 1e-5},
    "schedule": "cosine",
    "epochs": 90,
    "batch": 8,
    "augment": None,
    "lambda": 0.0,
    "domain_data": None,
    "seed": 0,
    "checkpoint": "model.ckpt",
    "log": "train_log.jsonl",
    "gradcheck": {"batch": 2, "h": 1e-5, "tolerance": 1e-3, "samples_per_param": 20},
}
_SUBKEYS = {
    "optimizer": {"name", "lr", "beta1", "beta2", "weight_decay"},
    "augment": {"scale", "rotation", "noise_sigma", "seed"},
    "gradcheck": {"batch", "h", "tolerance", "samples_per_param"},
}


def load_config(path) -> dict:
    """Read and validate a JSON experiment config; relative paths resolve against its folder."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None
    return resolve_config(raw, path.parent)


def resolve_config(raw: dict, base: Path = Path(".")) -> dict:
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    unknown = sorted(set(raw) - set(TRAIN_DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    if raw.get("version") != CONFIG_VERSION:
        raise UsageError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    cfg = copy.deepcopy(TRAIN_DEFAULTS)
    for key, value in raw.items():
        if key in _SUBKEYS and value is not None:
            if not isinstance(value, dict):
                raise UsageError(f"{key} must be an object")
            bad = sorted(set(value) - _SUBKEYS[key])
            if bad:
                raise UsageError(f"unknown {key} keys: {bad}")
            merged = dict(cfg[key] or {})
            merged.update(value)
            cfg[key] = merged
        else:
            cfg[key] = value
    if cfg["network"] is None:
        cfg["network"] = default_network()
    for key in ("data", "domain_data", "checkpoint", "log"):
        if cfg[key] is not None:
            cfg[key] = str((base / cfg[key]).resolve()) if not Path(cfg[key]).is_absolute() else cfg[key]
    try:
        cfg["input"] = dataset.InputKind(cfg["input"]).value
        Shape2D.parse(cfg["size"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if int(cfg["epochs"]) < 1 or int(cfg["batch"]) < 1:
        raise UsageError("epochs and batch must be >= 1")
    if float(cfg["lambda"]) < 0:
        raise UsageError("lambda must be >= 0")
    if cfg["schedule"] not in ("cosine", "constant"):
        raise UsageError(f"schedule must be cosine or constant, got {cfg['schedule']!r}")
    if cfg["optimizer"]["name"] not in ("adam", "sgd"):
        raise UsageError(f"optimizer must be adam or sgd, got {cfg['optimizer']['name']!r}")
    build_network(cfg)  # shape-chain validation
    return cfg


def build_network(cfg: dict) -> Network:
    kind = dataset.InputKind(cfg["input"])
    size = Shape2D.parse(cfg["size"])
    layers = cfg["network"]
    branch_at = None
    if float(cfg["lambda"]) > 0:
        flats = [i for i, layer in enumerate(layers) if layer.get("type") == "flatten"]
        if not flats:
            raise UsageError("domain adaptation needs a flatten layer to attach the branch to")
        branch_at = flats[0]
    try:
        return Network.from_config(layers, (kind.channels, size.height, size.width),
                                   seed=int(cfg["seed"]), branch_at=branch_at)
    except ConfigError as exc:
        raise UsageError(f"network: {exc}") from None


def _augment_params(cfg) -> imaging.AugmentParams | None:
    a = cfg["augment"]
    if a is None:
        return None
    kw = dict(a)
    for k in ("scale", "rotation"):
        if k in kw:
            kw[k] = tuple(kw[k])
    kw.setdefault("seed", int(cfg["seed"]))
    return imaging.AugmentParams(**kw)


def _stack(batches):
    batches = list(batches)
    if not batches:
        return [], np.zeros((0,)), None
    ids = [i for b in batches for i in b.ids]
    x = np.concatenate([b.inputs for b in batches])
    y = None if any(b.targets is None for b in batches) else np.concatenate([b.targets for b in batches])
    return ids, x, y


def predict_angles(net: Network, inputs) -> np.ndarray:
    """Network outputs rescaled to degrees and clipped to [0, 90]."""
    return np.clip(net.predict(inputs) * dataset.ANGLE_SCALE, 0.0, 90.0)


def _set_smape(net, ids, x, y):
    if len(ids) == 0:
        return None
    return smape(predict_angles(net, x), y * dataset.ANGLE_SCALE, ids)


def run_training(cfg: dict, progress=None) -> dict:
    """Train per ``cfg``; writes the checkpoint and JSON-lines log, returns a summary.

    The log's epoch 0 entry scores the freshly initialised network; epochs
    1..E follow each training pass.
    """
    kind = dataset.InputKind(cfg["input"])
    size = Shape2D.parse(cfg["size"])
    if cfg["data"] is None:
        raise UsageError("config needs a data directory")
    rejects: list = []
    records = dataset.scan(cfg["data"], training=True, rejects=rejects)
    if not records:
        raise dataset.DatasetError(f"no usable records under {cfg['data']}")
    n_train = cfg["train_count"]
    if n_train is None:
        n_train = dataset.train_count_for(len(records))
    train, val = dataset.split(records, int(n_train), int(cfg["split_seed"]))
    domain = []
    lam = float(cfg["lambda"])
    if lam > 0:
        if cfg["domain_data"] is None:
            raise UsageError("lambda > 0 needs domain_data")
        domain = dataset.scan(cfg["domain_data"], training=False)
    net = build_network(cfg)
    o = cfg["optimizer"]
    if o["name"] == "adam":
        opt = Adam(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], weight_decay=o["weight_decay"])
    else:
        opt = SGD(lr=o["lr"])
    aug = _augment_params(cfg)
    seed, epochs, batch = int(cfg["seed"]), int(cfg["epochs"]), int(cfg["batch"])

    train_eval = _stack(dataset.make_batches(train, kind, size, 32, shuffle=False, rejects=rejects))
    val_eval = _stack(dataset.make_batches(val, kind, size, 32, shuffle=False, rejects=rejects))
    entries = [{"epoch": 0, "lr": None, "train_loss": None,
                "train_smape": _set_smape(net, *train_eval), "val_smape": _set_smape(net, *val_eval)}]
    log_path = Path(cfg["log"])
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(entries[0], sort_keys=True) + "\n")
        for e in range(epochs):
            lr = cosine_lr(o["lr"], e, epochs) if cfg["schedule"] == "cosine" else o["lr"]
            batches = [(b.inputs, b.targets) for b in
                       dataset.make_batches(train, kind, size, batch, aug, seed, e, rejects=rejects)]
            target_batches = None
            if domain:
                target_batches = [b.inputs for b in
                                  dataset.make_batches(domain, kind, size, batch, None, seed, e)]
            report = train_epoch(net, batches, opt, lr, lam, target_batches)
            entry = {"epoch": e + 1, "lr": lr, "train_loss": report.combined,
                     "train_smape": _set_smape(net, *train_eval), "val_smape": _set_smape(net, *val_eval)}
            entries.append(entry)
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
            if progress:
                progress(entry)
    extra = {"input": kind.value, "size": str(size), "epochs": epochs, "version": CONFIG_VERSION}
    ckpt = Path(cfg["checkpoint"])
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(ckpt, net, extra)
    if rejects:
        dataset.write_rejects(ckpt.with_suffix(".rejects.jsonl"), rejects)
    return {"train": len(train), "val": len(val), "log": entries, "checkpoint": str(ckpt),
            "rejects": len(rejects)}


# --------------------------------------------------------------------------
# commands


def _out(args, text: str):
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _landmark_kwargs(args):
    kw = {"layout": args.layout, "normalized": args.normalized}
    if args.normalized:
        if not args.image_size:
            raise UsageError("--normalized needs --image-size HxW")
        kw["image"] = Shape2D.parse(args.image_size)
    return kw


def cmd_cobb(args) -> int:
    kw = _landmark_kwargs(args)
    results = [(Path(p).stem, cobb_angles(read_landmarks(p, **kw)).angles) for p in args.landmarks]
    if len(results) == 1:
        _out(args, anglesio.format_triple(results[0][1]) + "\n")
    else:
        _out(args, anglesio.format_predictions(results))
    return EXIT_OK


def cmd_rasterize(args) -> int:
    size = Shape2D.parse(args.size)
    lm = read_landmarks(args.landmarks, **_landmark_kwargs(args))
    mask = rasterize_mask(lm, size)
    imaging.save_pgm(args.output, imaging.GrayImage(mask_to_levels(mask), 255))
    return EXIT_OK


def cmd_synth(args) -> int:
    records = dataset.synth_generate(args.n, args.seed, Shape2D.parse(args.size), args.outdir)
    print(json.dumps({"records": len(records), "outdir": str(args.outdir)}, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg["epochs"] = args.epochs
    started = time.perf_counter()

    def progress(entry):
        if not args.quiet:
            print(json.dumps(entry, sort_keys=True), file=sys.stderr, flush=True)

    summary = run_training(cfg, progress)
    final = summary["log"][-1]
    print(json.dumps({"checkpoint": summary["checkpoint"], "epochs": final["epoch"],
                      "train": summary["train"], "val": summary["val"],
                      "train_smape": final["train_smape"], "val_smape": final["val_smape"],
                      "seconds": round(time.perf_counter() - started, 1)}, sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    net, extra = checkpoint.load(args.checkpoint)
    kind = dataset.InputKind(extra.get("input", "img"))
    size = Shape2D.parse(extra.get("size", "512x256"))
    records = dataset.scan(args.data, training=False)
    rejects: list = []
    ids, x, _ = _stack(dataset.make_batches(records, kind, size, 32, shuffle=False, rejects=rejects))
    for r in rejects:
        print(json.dumps({"warning": "skipped", **r}, sort_keys=True), file=sys.stderr)
    rows = []
    if ids:
        rows = list(zip(ids, (CobbTriple(*p) for p in predict_angles(net, x))))
    _out(args, anglesio.format_predictions(rows))
    return EXIT_OK


def _ground_truth(path) -> dict:
    path = Path(path)
    if path.is_dir():
        return {r.id: r.angles for r in dataset.scan(path, training=True)}
    return anglesio.read_predictions(path)


def cmd_evaluate(args) -> int:
    preds = anglesio.read_predictions(args.predictions)
    gts = _ground_truth(args.ground_truth)
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing or extra:
        raise MetricError(f"id mismatch: missing predictions {missing[:5]}, unknown ids {extra[:5]}")
    ids = sorted(gts)
    report = evaluate([preds[i] for i in ids], [gts[i] for i in ids], ids)
    _out(args, report.to_json() + "\n")
    if args.table:
        print(report.to_table(), file=sys.stderr)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    files = [anglesio.read_predictions(p) for p in args.predictions]
    ids = list(files[0])
    for p, f in zip(args.predictions[1:], files[1:]):
        if set(f) != set(ids):
            raise anglesio.AngleFileError(f"{p}: ids differ from {args.predictions[0]}")
    rows = []
    for rid in ids:
        mean = ensemble_mean([f[rid] for f in files])
        rows.append((rid, threshold_small_angles(mean, args.threshold)))
    _out(args, anglesio.format_predictions(rows))
    return EXIT_OK


def run_gradcheck(cfg: dict):
    net = build_network(cfg)
    g = cfg["gradcheck"]
    rng = np.random.default_rng(int(cfg["seed"]))
    x = rng.uniform(-1.0, 1.0, (int(g["batch"]),) + net.input_shape)
    y = rng.uniform(0.0, 1.0, (int(g["batch"]),) + tuple(net.output_shape))

    def mse(out, target):
        return losses.mse(target, out), losses.mse_grad(target, out)

    return gradient_check(net, x, y, mse, h=float(g["h"]), tolerance=float(g["tolerance"]),
                          max_per_param=g["samples_per_param"], seed=int(cfg["seed"]))


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(load_config(args.config))
    _out(args, json.dumps(report.to_dict(), sort_keys=True) + "\n")
    if not report.ok:
        raise NumericFailure(f"{len(report.failures)} gradient entries exceed tolerance")
    return EXIT_OK


HIST_BINS = 18
HIST_COLORS = ("#1f77b4", "#d62728", "#2ca02c")


def angle_histograms(triples) -> np.ndarray:
    """(3, 18) counts over [0, 90]; 90 falls in the last bin."""
    arr = np.asarray(triples, dtype=np.float64).reshape(-1, 3)
    edges = np.linspace(0.0, 90.0, HIST_BINS + 1)
    return np.stack([np.histogram(np.clip(arr[:, k], 0, 90), bins=edges)[0] for k in range(3)])


def render_svg(counts: np.ndarray, width=540, height=300) -> str:
    margin = 40
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    top = max(int(counts.max()), 1)
    bar_w = plot_w / HIST_BINS
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "title").text = "Distribution of the three Cobb angles"
    for k, (name, color) in enumerate(zip(("angle1", "angle2", "angle3"), HIST_COLORS)):
        group = ET.SubElement(svg, "g", {"id": name, "fill": color, "fill-opacity": "0.45"})
        for b, c in enumerate(counts[k]):
            h = plot_h * int(c) / top
            ET.SubElement(group, "rect", x=f"{margin + b * bar_w:.2f}", y=f"{margin + plot_h - h:.2f}",
                          width=f"{bar_w:.2f}", height=f"{h:.2f}")
        ET.SubElement(svg, "text", x=str(width - margin - 60), y=str(margin + 14 * k),
                      fill=color, **{"font-size": "12"}).text = name
    axis = {"stroke": "black", "stroke-width": "1"}
    ET.SubElement(svg, "line", x1=str(margin), y1=str(margin + plot_h), x2=str(margin + plot_w),
                  y2=str(margin + plot_h), **axis)
    ET.SubElement(svg, "line", x1=str(margin), y1=str(margin), x2=str(margin), y2=str(margin + plot_h), **axis)
    for deg in range(0, 91, 15):
        ET.SubElement(svg, "text", x=f"{margin + plot_w * deg / 90:.2f}", y=str(height - margin + 16),
                      **{"font-size": "10", "text-anchor": "middle"}).text = str(deg)
    ET.SubElement(svg, "text", x=str(margin - 6), y=str(margin + 4),
                  **{"font-size": "10", "text-anchor": "end"}).text = str(top)
    return ET.tostring(svg, encoding="unicode") + "\n"


def cmd_plot_angles(args) -> int:
    src = Path(args.angles)
    if src.is_dir():
        triples = [r.angles for r in dataset.scan(src, training=True)]
    else:
        text = src.read_text(encoding="utf-8")
        if text.startswith("id,"):
            triples = list(anglesio.parse_predictions(text, str(src)).values())
        else:
            triples = [anglesio.parse_triple(text, str(src))]
    if not triples:
        raise dataset.DatasetError(f"{src}: no angles to plot")
    Path(args.output).write_text(render_svg(angle_histograms(triples)), encoding="utf-8")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cobbnet", description="Cobb angle estimation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def landmark_opts(sp):
        sp.add_argument("--layout", choices=("interleaved", "challenge-row"), default="interleaved")
        sp.add_argument("--normalized", action="store_true", help="coordinates scaled to [0, 1]")
        sp.add_argument("--image-size", help="HxW used to undo --normalized")

    sp = sub.add_parser("cobb", help="Cobb angles from landmark files")
    sp.add_argument("landmarks", nargs="+")
    sp.add_argument("--out")
    landmark_opts(sp)
    sp.set_defaults(func=cmd_cobb)

    sp = sub.add_parser("rasterize", help="ground-truth mask from landmarks")
    sp.add_argument("landmarks")
    sp.add_argument("output")
    sp.add_argument("--size", required=True, help="HxW")
    landmark_opts(sp)
    sp.set_defaults(func=cmd_rasterize)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("outdir")
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", default="128x64", help="HxW")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train from a JSON config")
    sp.add_argument("config")
    sp.add_argument("--epochs", type=int, help="override the configured epoch count")
    sp.add_argument("--quiet", action="store_true", help="no per-epoch lines on stderr")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="predict angles for a dataset directory")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="score predictions against ground truth")
    sp.add_argument("predictions")
    sp.add_argument("ground_truth", help="id CSV or dataset directory")
    sp.add_argument("--out")
    sp.add_argument("--table", action="store_true", help="also print a table on stderr")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ensemble", help="average prediction files, then zero small angles")
    sp.add_argument("predictions", nargs="+")
    sp.add_argument("--threshold", type=float, default=4.0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ensemble)

    sp = sub.add_parser("gradcheck", help="finite-difference check of a configured network")
    sp.add_argument("config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("plot-angles", help="SVG histogram of the three angles")
    sp.add_argument("angles", help="id CSV, single angle file or dataset directory")
    sp.add_argument("output")
    sp.set_defaults(func=cmd_plot_angles)
    return p


DATA_ERRORS = (LandmarkError, GeometryError, imaging.ImageError, dataset.DatasetError, MetricError,
               anglesio.AngleFileError, checkpoint.CheckpointError, ShapeError, OSError)


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit": code}, sort_keys=True),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (NumericError, NumericFailure, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except DATA_ERRORS as exc:
        return _fail(EXIT_DATA, exc)
    except ValueError as exc:
        return _fail(EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
