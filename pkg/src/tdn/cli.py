"""Command-line entry point: ``tdn {synth,train,eval,segment,viz}``.

Exit codes: 0 success, 1 bad input, 2 internal invariant failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import data
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import InvariantError, TDNError
from .model import TDNConfig, evaluate_gap, forward, init_model, train
from .viz import write_pgm

DEFAULT_SEED = 0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would exit 2, which is reserved for invariant failures
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(args, default: int = DEFAULT_SEED) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("TDN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"TDN_SEED must be an integer, got {env!r}") from None
    return default


def cmd_synth(args) -> int:
    spec = data.SyntheticSpec(
        videos=args.videos, frames=args.frames, dim=args.dim, classes=args.classes,
        segments=args.segments, noise=args.noise, seed=_seed(args, 42),
    )
    ds, truth = data.synth_generate(spec)
    data.save_dataset(ds, args.out, truth)
    print(f"wrote {len(ds)} videos, {spec.classes} classes, dim {spec.dim} to {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = data.load_dataset(args.data)
    if len(ds) == 0:
        raise data.DataError("dataset has no videos")
    train_set, val_set = data.split_by_hash(ds.videos, args.val_frac)
    config = TDNConfig(
        feature_dim=ds.feature_dim, num_classes=ds.classes, num_layers=args.layers,
        lr=args.lr, seed=_seed(args), batch_size=args.batch, epochs=args.epochs,
    )
    if args.epochs == 0:
        model = init_model(config)
    else:
        result = train(train_set, config, val_set, on_epoch=lambda log: print(log.line(), flush=True))
        model = result.model
    save_checkpoint(model, args.ckpt)
    return 0


def _check_compat(model, dim: int, classes: int | None = None) -> None:
    cfg = model.config
    if dim != cfg.feature_dim:
        raise data.DataError(f"features have width {dim}, checkpoint expects {cfg.feature_dim}")
    if classes is not None and classes != cfg.num_classes:
        raise data.DataError(f"dataset has {classes} classes, checkpoint expects {cfg.num_classes}")


def cmd_eval(args) -> int:
    ds = data.load_dataset(args.data)
    model = load_checkpoint(args.ckpt)
    _check_compat(model, ds.feature_dim, ds.classes)
    if args.topk < 1:
        raise UsageError("--topk must be >= 1")
    print(f"GAP: {evaluate_gap(model, ds.videos, args.topk):.6f}")
    return 0


def _traced(args):
    x = data.read_features(args.features)
    model = load_checkpoint(args.ckpt)
    _check_compat(model, x.shape[1])
    if not 1 <= args.layer <= len(model.layers):
        raise UsageError(f"--layer {args.layer} outside 1..{len(model.layers)}")
    return forward(x, model)


def cmd_segment(args) -> int:
    trace = _traced(args)
    for layer in trace.layers[:args.layer]:
        print(",".join(str(c) for c in layer.partition.cuts))
    return 0


def cmd_viz(args) -> int:
    layer = _traced(args).layers[args.layer - 1]
    a = layer.adjacency if args.stage == "raw" else layer.refined
    write_pgm(a.value, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tdn", description="Temporal dependency networks on frame-feature sequences.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset with planted segments")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--videos", type=int, default=200)
    s.add_argument("--frames", type=int, default=64)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--segments", type=int, default=4)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--batch", type=int, default=8)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--val-frac", type=float, default=0.2)
    t.add_argument("--ckpt", required=True, type=Path)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print GAP of a checkpoint on a dataset")
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--ckpt", required=True, type=Path)
    e.add_argument("--topk", type=int, default=20)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("segment", help="print cut indices per layer")
    g.add_argument("--features", required=True, type=Path)
    g.add_argument("--ckpt", required=True, type=Path)
    g.add_argument("--layer", type=int, default=1)
    g.set_defaults(func=cmd_segment)

    v = sub.add_parser("viz", help="export a layer's adjacency as a PGM image")
    v.add_argument("--features", required=True, type=Path)
    v.add_argument("--ckpt", required=True, type=Path)
    v.add_argument("--layer", type=int, default=1)
    v.add_argument("--stage", choices=("raw", "refined"), default="raw")
    v.add_argument("--out", required=True, type=Path)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except InvariantError as exc:
        print(f"tdn: internal error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, TDNError, OSError, ValueError) as exc:
        print(f"tdn: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"tdn: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
