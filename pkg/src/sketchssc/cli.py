"""Command-line entry point: ``sketchssc <command> [flags]``.

Exit codes: 0 success, 1 validation failure (bad flags, malformed or
inconsistent input, failed checks), 2 I/O failure (missing or unwritable
files).
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .gradsuite import GRAD_CHECKS, TOLERANCE, run_grad_checks
from .sketch import extract_sketch
from .tsdf import encode_tsdf
from .voxel import GridSpec, SemanticLabelGrid

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

log = logging.getLogger("sketchssc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; here that is a validation failure."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dims(text):
    parts = text.replace("x", ",").split(",")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must be three integers like 16,8,16: {text!r}")
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"dims must be three positive integers: {text!r}")
    return dims


def _triple(text):
    try:
        vals = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three numbers: {text!r}")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers: {text!r}")
    return vals


def _load_cfg(path):
    from .pipeline.config import load_config
    return load_config(path)


def _build_model(cfg_path, manifest):
    from .pipeline.model import SSCModel

    model_cfg, train_cfg = _load_cfg(cfg_path)
    model_cfg = replace(model_cfg, grid_dims=manifest.spec.dims, num_classes=manifest.num_classes)
    return model_cfg, train_cfg, SSCModel(model_cfg, seed=train_cfg.seed)


# --- commands -------------------------------------------------------------

def cmd_gen_data(args):
    from .pipeline.synthetic import generate_dataset

    spec = GridSpec(args.dims, args.voxel_size)
    samples = generate_dataset(args.seed, args.count, spec, args.classes)
    truncation = 3.0 * spec.voxel_size
    path = io.write_dataset(args.out, samples, args.classes, truncation, args.seed)
    print(f"wrote {len(samples)} samples, manifest {path}")
    return EXIT_OK


def cmd_extract_sketch(args):
    spec, labels, _ = io.read_svox(args.labels, io.TAG_LABELS)
    grid = SemanticLabelGrid(spec, labels, int(labels[labels != 255].max(initial=0)) + 1)
    sketch = extract_sketch(grid, threshold=args.threshold)
    io.write_sketch(args.out, sketch)
    print(f"wrote sketch with {int(np.count_nonzero(sketch.mask))} voxels to {args.out}")
    return EXIT_OK


def cmd_encode_tsdf(args):
    depth = io.read_depth(args.depth).astype(np.float64)
    camera = io.read_camera(args.camera)
    spec = GridSpec(args.dims, args.voxel_size, args.origin)
    vol = encode_tsdf(depth, camera, spec, args.truncation)
    io.write_tsdf(args.out, vol)
    print(f"wrote TSDF {spec.dims} to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from .pipeline.config import save_config, with_variant
    from .pipeline.train import train

    manifest, samples = io.read_dataset(args.data)
    model_cfg, train_cfg, _ = _build_model(args.config, manifest)
    if args.variant:
        model_cfg = with_variant(model_cfg, args.variant)
    overrides = {"seed": args.seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    train_cfg = replace(train_cfg, **overrides)
    eval_set = io.read_dataset(args.eval_data)[1] if args.eval_data else None
    os.makedirs(args.out, exist_ok=True)
    metrics = os.path.join(args.out, "metrics.jsonl")
    open(metrics, "w").close()
    model, records = train(samples, model_cfg, train_cfg, eval_set,
                           on_epoch=lambda rec: io.append_metrics(metrics, rec))
    io.save_model(os.path.join(args.out, "checkpoint.skpt"), model)
    save_config(os.path.join(args.out, "config.json"), model_cfg, train_cfg)
    if eval_set:
        io.write_report(os.path.join(args.out, "report.json"),
                        {k: v for k, v in records[-1].items()
                         if k.startswith(("sc_", "ssc_"))})
    print(f"trained {model_cfg.variant} for {train_cfg.epochs} epochs; outputs in {args.out}")
    return EXIT_OK


def cmd_eval(args):
    from .pipeline.metrics import evaluate, mean_report
    from .pipeline.train import evaluate_model

    manifest, samples = io.read_dataset(args.data)
    if args.use_ground_truth:
        report = mean_report(evaluate(s.labels, s.labels, s.masks) for s in samples)
    else:
        if not args.checkpoint:
            raise UsageError("eval: --checkpoint is required unless --use-ground-truth is given")
        _, _, model = _build_model(args.config, manifest)
        io.load_model(args.checkpoint, model)
        report = evaluate_model(model, samples, np.random.default_rng(args.seed))
    io.write_report(args.out, report)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_oracle_ablation(args):
    from .pipeline.train import run_oracle_ablation

    manifest, samples = io.read_dataset(args.data)
    _, _, model = _build_model(args.config, manifest)
    io.load_model(args.checkpoint, model)
    if model.prior_raw is None:
        raise UsageError("oracle-ablation needs a two-stage model with prior mappings")
    out = {}
    for rate in args.drop_rates:
        rep = run_oracle_ablation(samples, model, rate, np.random.default_rng(args.seed))
        out[repr(rate)] = rep.to_dict()
        print(f"drop {rate}: sc_iou {rep.sc_iou:.4f} ssc_miou {rep.ssc_miou:.4f}")
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_grad_check(args):
    model_cfg, train_cfg = _load_cfg(args.config)
    results = run_grad_checks(model_cfg, train_cfg, seed=args.seed, checks=GRAD_CHECKS)
    lines = []
    for name, err, ok, note in results:
        line = f"{'PASS' if ok else 'FAIL'} {name} max_rel_err={err:.3e}"
        lines.append(line + (f" ({note})" if note else ""))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    failed = [r[0] for r in results if not r[2]]
    if failed:
        print(f"{len(failed)} check(s) above tolerance {TOLERANCE:g}: {', '.join(failed)}",
              file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


# --- parser ---------------------------------------------------------------

def build_parser():
    p = _Parser(prog="sketchssc", description="Sketch-aware semantic scene completion tools.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.set_defaults(func=func)
        return sp

    g = add("gen-data", cmd_gen_data, "generate a synthetic dataset")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--dims", type=_dims, default=(16, 8, 16))
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--voxel-size", type=float, default=0.1)
    g.add_argument("--out", required=True, help="output directory")

    e = add("extract-sketch", cmd_extract_sketch, "label SVOX -> sketch SVOX")
    e.add_argument("--labels", required=True)
    e.add_argument("--threshold", type=int, default=1)
    e.add_argument("--out", required=True)

    t = add("encode-tsdf", cmd_encode_tsdf, "depth + camera -> TSDF SVOX")
    t.add_argument("--depth", required=True)
    t.add_argument("--camera", required=True)
    t.add_argument("--dims", type=_dims, required=True)
    t.add_argument("--voxel-size", type=float, required=True)
    t.add_argument("--origin", type=_triple, default=(0.0, 0.0, 0.0))
    t.add_argument("--truncation", type=float, default=0.24)
    t.add_argument("--out", required=True)

    tr = add("train", cmd_train, "train a model on a manifest")
    tr.add_argument("--data", required=True, help="training manifest")
    tr.add_argument("--eval-data", help="held-out manifest evaluated after every epoch")
    tr.add_argument("--config", help="JSON config (default: shipped toy config)")
    tr.add_argument("--variant", choices=("one-stage", "two-stage", "two-stage+prior",
                                          "two-stage+prior+cvae"))
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--out", required=True, help="output directory")

    ev = add("eval", cmd_eval, "evaluate a checkpoint on a manifest")
    ev.add_argument("--checkpoint")
    ev.add_argument("--config")
    ev.add_argument("--data", required=True)
    ev.add_argument("--use-ground-truth", action="store_true",
                    help="score the ground truth against itself")
    ev.add_argument("--out", required=True, help="report JSON path")

    oa = add("oracle-ablation", cmd_oracle_ablation, "evaluate with thinned ground-truth sketches")
    oa.add_argument("--checkpoint", required=True)
    oa.add_argument("--config")
    oa.add_argument("--data", required=True)
    oa.add_argument("--drop-rates", type=float, nargs="+", default=[0.0, 0.4, 0.8])
    oa.add_argument("--out", required=True)

    gc = add("grad-check", cmd_grad_check, "finite-difference check of every differentiable op")
    gc.add_argument("--config")
    gc.add_argument("--out", help="also write the report here")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, IsADirectoryError, PermissionError, NotADirectoryError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
