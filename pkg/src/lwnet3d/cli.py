"""Command-line entry point: ``lwnet3d <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/shape error, 3 failed
``--expect-total`` assertion. Every file a command writes goes under
``--out``. ``LWNET_NUM_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cost import count_macs, count_params
from .data import (
    HsiScene,
    NormStats,
    Splits,
    SplitSpec,
    extract_cube,
    inflate_rgb,
    make_splits,
    signatures,
    synth_scene,
)
from .experiment import prepare
from .fileio import (
    FormatError,
    encode_hsc,
    read_ppm,
    read_scene,
    read_splits,
    write_scene,
    write_splits,
)
from .metrics import MetricsReport, evaluate
from .models import ARCHITECTURES, build_model
from .training import OptimizerConfig, train, write_records
from .transfer import (
    CheckpointError,
    TransferPlan,
    TransferReport,
    load_transfer,
    model_from_checkpoint,
    read_checkpoint,
    write_checkpoint,
)

log = logging.getLogger("lwnet3d")

EXIT_USAGE, EXIT_DATA, EXIT_ASSERT = 1, 2, 3

_OPT_FLAGS = {
    "lr": "learning_rate",
    "momentum": "momentum",
    "weight_decay": "weight_decay",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "lr_drop_epoch": "lr_drop_epoch",
    "lr_drop_factor": "lr_drop_factor",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def optimizer_config(args) -> OptimizerConfig:
    """Defaults < ``--config`` JSON file < explicit flags."""
    values = OptimizerConfig().to_dict()
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(values)
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        values.update(loaded)
    for flag, key in _OPT_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    values["seed"] = args.seed
    try:
        return OptimizerConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _load_splits(args, scene: HsiScene, out: Path):
    if args.split:
        return read_splits(args.split, scene.labels)
    if args.train_per_class is None:
        raise UsageError("give --split FILE or --train-per-class N")
    splits = make_splits(scene, SplitSpec(args.train_per_class, args.val_per_class or 0,
                                          seed=args.seed))
    write_splits(splits, scene.labels, out / "split.txt")
    return splits


def _report(metrics: MetricsReport | None, out: Path) -> None:
    if metrics is None:
        print("test split empty; no evaluation")
        return
    print(metrics.to_text())
    (out / "metrics.csv").write_text(metrics.to_csv())


def _fit_and_save(args, model, scene, splits, S, out, meta_extra) -> None:
    cfg = optimizer_config(args)
    data = prepare(scene, splits, S)
    if len(data.train[1]) == 0:
        raise ValueError("training split is empty")
    model, records = train(model, data.train, data.val, cfg)
    write_records(records, out / "train_record.csv")
    meta = {"optimizer": cfg.to_dict(), "space_size": S, "norm": data.stats.to_dict(),
            "bn": {"eps": model.config.bn_eps, "momentum": model.config.bn_momentum}}
    meta.update(meta_extra)
    write_checkpoint(model, out / "checkpoint.lwck", meta)
    print(f"trained {len(records)} epochs; checkpoint {out / 'checkpoint.lwck'}")
    metrics = evaluate(model, *data.test) if len(data.test[1]) else None
    _report(metrics, out)


# subcommands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args)
    scene = synth_scene(args.classes, args.bands, args.height, args.width, args.noise, args.seed)
    write_scene(scene, out / "scene.hsc", out / "labels.hsl")
    sig = signatures(scene)
    d = np.sqrt(((sig[:, None] - sig[None]) ** 2).sum(-1))
    spread = max(float(np.mean([scene.cube[scene.labels == k + 1].std(axis=0).mean()
                                for k in range(len(sig))])), 0.0)
    print(f"wrote {out / 'scene.hsc'} and {out / 'labels.hsl'}: "
          f"{scene.height}x{scene.width}x{scene.bands}, {scene.num_classes} classes")
    print(f"min centroid distance {d[np.triu_indices(len(sig), 1)].min():.4f}, "
          f"mean in-class band std {spread:.4f}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    scene = read_scene(args.scene, args.labels)
    splits = _load_splits(args, scene, out)
    model = build_model(args.arch, scene.num_classes, args.seed)
    _fit_and_save(args, model, scene, splits, args.space_size, out, {})
    return 0


def cmd_finetune(args) -> int:
    out = _out_dir(args)
    ckpt = read_checkpoint(args.source)
    if args.arch and args.arch != ckpt.arch:
        raise CheckpointError(f"checkpoint holds {ckpt.arch}, requested {args.arch}")
    scene = read_scene(args.scene, args.labels)
    splits = _load_splits(args, scene, out)
    report = TransferReport([], [])
    plan = TransferPlan(scene.num_classes)
    model = load_transfer(ckpt, plan, args.seed, report)
    print(f"transferred {len(report.transferred)} tensors from {args.source}; "
          f"reinitialized: {', '.join(report.reinitialized)}")
    _fit_and_save(args, model, scene, splits, args.space_size, out,
                  {"transferred_from": str(Path(args.source).name)})
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    ckpt = read_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    scene = read_scene(args.scene, args.labels)
    splits = read_splits(args.split, scene.labels)
    coords = getattr(splits, args.which)
    if len(coords) == 0:
        raise ValueError(f"{args.which} split is empty")
    S = args.space_size or ckpt.metadata.get("space_size", 27)
    stats = NormStats.from_dict(ckpt.metadata["norm"]) if "norm" in ckpt.metadata else None
    if stats is not None and len(stats.mean) != scene.bands:
        raise ValueError(f"checkpoint normalization covers {len(stats.mean)} bands, "
                         f"scene has {scene.bands}")
    data = prepare(scene, Splits(coords, coords[:0], coords[:0]), S, stats)
    _report(evaluate(model, *data.train), out)
    return 0


def cmd_inspect(args) -> int:
    target = args.target
    if target in ARCHITECTURES:
        model = build_model(target, args.num_classes, args.seed)
    elif Path(target).is_file():
        model = model_from_checkpoint(read_checkpoint(target))
    else:
        raise UsageError(f"{target!r} is neither an architecture ({', '.join(ARCHITECTURES)}) "
                         "nor a checkpoint file")
    if args.input_shape:
        shape = tuple(int(v) for v in args.input_shape.split(","))
        if len(shape) != 5:
            raise UsageError("--input-shape needs N,C,D,H,W")
        report = count_macs(model, shape, args.mode)
    else:
        report = count_params(model, args.mode)
    print(report.to_csv() if args.csv else report.to_text())
    if args.out:
        (_out_dir(args) / f"cost_{args.mode}.csv").write_text(report.to_csv())
    if args.expect_total is not None and report.total_params != args.expect_total:
        print(f"expected {args.expect_total} parameters, counted {report.total_params}",
              file=sys.stderr)
        return EXIT_ASSERT
    return 0


def cmd_inflate(args) -> int:
    out = _out_dir(args)
    image = read_ppm(args.ppm)
    cube = inflate_rgb(image, args.inflate_l).astype(np.float32)
    path = out / (Path(args.ppm).stem + ".hsc")
    path.write_bytes(encode_hsc(cube))
    print(f"wrote {path}: {cube.shape[0]}x{cube.shape[1]}x{cube.shape[2]}")
    return 0


def cmd_extract(args) -> int:
    out = _out_dir(args)
    scene = read_scene(args.scene, args.labels)
    cube = extract_cube(scene, args.row, args.col, args.space_size)
    path = out / f"cube_r{args.row}_c{args.col}.npy"
    np.save(path, cube.data)
    print(f"label {cube.label}, shape {cube.data.shape}, wrote {path}")
    return 0


# parser ---------------------------------------------------------------------


def _add_training_flags(p):
    p.add_argument("--scene", required=True, help="HSC scene file")
    p.add_argument("--labels", required=True, help="HSL label file")
    p.add_argument("--split", help="split file; generated when omitted")
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--val-per-class", type=int)
    p.add_argument("--space-size", type=int, default=27, help="window size S (odd)")
    p.add_argument("--config", help="JSON file of optimizer settings")
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr-drop-epoch", type=int)
    p.add_argument("--lr-drop-factor", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lwnet3d", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("synth", help="write a synthetic scene")
    p.add_argument("classes", type=int)
    p.add_argument("bands", type=int)
    p.add_argument("height", type=int)
    p.add_argument("width", type=int)
    p.add_argument("noise", type=float)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a scene")
    _add_training_flags(p)
    p.add_argument("--arch", default="lwnet20", choices=sorted(ARCHITECTURES))
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="transfer a checkpoint and fine-tune it")
    p.add_argument("--from", dest="source", required=True, help="source checkpoint")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES))
    _add_training_flags(p)
    common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--which", default="test", choices=("train", "val", "test"))
    p.add_argument("--space-size", type=int)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="parameter / MAC report")
    p.add_argument("target", help="architecture name or checkpoint path")
    p.add_argument("--mode", default="full", choices=("full", "paper"))
    p.add_argument("--input-shape", help="N,C,D,H,W; adds MAC counts")
    p.add_argument("--num-classes", type=int, default=9)
    p.add_argument("--expect-total", type=int)
    p.add_argument("--csv", action="store_true")
    common(p, out_required=False)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("inflate", help="inflate an RGB PPM into a 3l-band scene")
    p.add_argument("ppm")
    p.add_argument("--inflate-l", type=int, default=12)
    common(p)
    p.set_defaults(func=cmd_inflate)

    p = sub.add_parser("extract", help="dump one sample cube as .npy")
    p.add_argument("--scene", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--col", type=int, required=True)
    p.add_argument("--space-size", type=int, default=27)
    common(p)
    p.set_defaults(func=cmd_extract)
    return parser


def _thread_limit():
    n = os.environ.get("LWNET_NUM_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"lwnet3d: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FormatError, CheckpointError, OSError, KeyError) as exc:
        print(f"lwnet3d: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
