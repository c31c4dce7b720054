"""Command-line front end.

Subcommands: synth, train, eval, params, gradcheck, inspect.
Exit codes: 0 success, 2 usage or configuration error, 3 data or format
error, 4 divergence or failed self-check.
"""

import argparse
import logging
import sys

import numpy as np

from . import config as flat
from . import data as qdata
from . import gradcheck, qfilter
from . import train as qtrain
from .errors import ConfigurationError, DivergenceError, FormatError, UsageError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CHECK = 4

# flag dest -> TrainConfig key; values stay strings until TrainConfig parses them
_TRAIN_FLAGS = {
    "arch": "arch",
    "encoding": "encoding",
    "ansatz": "ansatz",
    "layers": "layers",
    "threshold_t": "threshold_t",
    "pools": "pools",
    "data": "data",
    "val_data": "val_data",
    "train_count": "train_count",
    "val_count": "val_count",
    "epochs": "epochs",
    "batch": "batch",
    "lr": "lr",
    "seeds": "seeds",
    "workers": "workers",
    "out": "out",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _shape(text):
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise UsageError(f"bad shape {text!r}; expected comma-separated integers") from None


def _add_arch_flags(p):
    p.add_argument("--arch", choices=qtrain.ARCHITECTURES)
    p.add_argument("--encoding", choices=qfilter.ENCODINGS)
    p.add_argument("--ansatz", choices=qfilter.ANSATZE)
    p.add_argument("--layers", help="ansatz layers")
    p.add_argument("--threshold-t", dest="threshold_t", help="threshold encoding cut (default 0)")
    p.add_argument("--pools", help="3D pooling stages, e.g. 1,1,1 or auto")


def build_parser():
    parser = _Parser(prog="qccnn", description="Hybrid quantum-classical CNN toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic dataset container")
    p.add_argument("kind", nargs="?", default=None, help="stripes (2D) or blob (3D)")
    p.add_argument("--kind", dest="kind_flag")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16, help="blob volume edge")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one network per seed and aggregate metrics")
    _add_arch_flags(p)
    p.add_argument("--data")
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--train-count", dest="train_count")
    p.add_argument("--val-count", dest="val_count")
    p.add_argument("--epochs")
    p.add_argument("--batch")
    p.add_argument("--lr")
    p.add_argument("--seeds", help="comma-separated, e.g. 0,1,2,3,4")
    p.add_argument("--workers")
    p.add_argument("--out")
    p.add_argument("--config", help="flat key = value file; flags take precedence")
    p.add_argument("--debug-range", dest="debug_range", action="store_true", default=None)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="container path (default: the one used for training)")
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("params", help="per-layer parameter audit")
    _add_arch_flags(p)
    p.add_argument("--input-shape", dest="input_shape", help="C,H,W or C,D,H,W")
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--csv", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference self-checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=100, help="random filter configurations per combination")
    p.add_argument("--perturb-shift", dest="perturb_shift", type=float, default=0.0, help=argparse.SUPPRESS)

    p = sub.add_parser("inspect", help="describe a dataset container or checkpoint")
    p.add_argument("path")
    return parser


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, out):
    kind = args.kind_flag or args.kind
    if kind is None:
        raise UsageError("synth needs a kind (stripes or blob)")
    if kind == "blob":
        container = qdata.synth_3d(kind, args.n, args.seed, size=args.size)
    else:
        container = qdata.synth(kind, args.n, args.seed)
    qdata.save(container, args.out)
    print(f"wrote {len(container)} items of shape {container.item_shape} to {args.out}", file=out)
    return EXIT_OK


def train_config(args):
    """TrainConfig from an optional config file overlaid with explicit flags."""
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = flat.parse_flat(fh.read(), allowed=qtrain.TrainConfig.keys())
    for dest, key in _TRAIN_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = str(v)
    if args.debug_range:
        values["debug_range"] = "1"
    return qtrain.TrainConfig.from_flat(values)


def cmd_train(args, out):
    config = train_config(args)
    if not config.data:
        raise UsageError("train needs --data (or data = ... in the config file)")
    log = None if args.quiet else (lambda msg: print(msg, file=out, flush=True))
    result = qtrain.run_experiment(config, log=log)
    final = max(r.epoch for r in result.aggregate)
    for r in result.aggregate:
        if r.epoch == final:
            print(f"epoch {r.epoch} {r.split} {r.metric}: {r.mean:.4f} +- {r.std:.4f}", file=out)
    print(f"outputs in {config.out}", file=out)
    if result.divergences:
        for seed, msg in result.divergences.items():
            print(f"seed {seed} diverged: {msg}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_eval(args, out):
    """Evaluate with the split and normalisation recorded at training time."""
    model, _, echo = qtrain.load_checkpoint(args.checkpoint, workers=args.workers)
    saved = {k[len("train.") :]: v for k, v in echo.items() if k.startswith("train.")}
    config = qtrain.TrainConfig.from_flat(saved)
    if args.data:
        config.data = args.data
    if args.split == "all":
        if not config.data:
            raise UsageError("eval needs --data")
        train_set = chosen = qdata.load(config.data)
    else:
        train_set, val_set = qtrain.load_splits(config)
        chosen = train_set if args.split == "train" else val_set
    if "norm.mean" in echo:
        stats = qdata.NormStats(float(echo["norm.mean"]), float(echo["norm.std"]))
    else:
        stats = qdata.fit_normalization(train_set)
    loss, acc = qtrain.evaluate(model, qdata.apply_normalization(chosen, stats))
    print(f"split={args.split} items={len(chosen)} loss={loss!r} accuracy={acc!r}", file=out)
    return EXIT_OK


def cmd_params(args, out):
    kind = args.arch or "qccnn2d"
    layers = int(args.layers) if args.layers else None
    threshold = float(args.threshold_t) if args.threshold_t else 0.0
    arch = qtrain.ArchitectureSpec(
        kind, args.encoding, args.ansatz, layers, threshold, qtrain._parse_pools(args.pools)
    )
    if args.input_shape:
        shape = _shape(args.input_shape)
    else:
        shape = (1, 28, 28) if arch.dims == 2 else (1, 32, 32, 16)
    n_classes = args.n_classes or (11 if arch.dims == 2 else 2)
    rows, total = qtrain.parameter_audit(arch, shape, n_classes)
    if args.csv:
        print("index,layer,output_shape,params", file=out)
        for i, name, oshape, count in rows:
            print(f'{i},"{name}",{"x".join(str(s) for s in oshape)},{count}', file=out)
        print(f"total,,,{total}", file=out)
        return EXIT_OK
    print(f"{arch.label()} on input {shape}, {n_classes} classes", file=out)
    for i, name, oshape, count in rows:
        print(f"{i:>3}  {name:<52} {str(oshape):<18} {count:>8}", file=out)
    print(f"{'total':>3}  {'':<52} {'':<18} {total:>8}", file=out)
    return EXIT_OK


def cmd_gradcheck(args, out):
    saved = qfilter.SHIFT
    qfilter.SHIFT = saved + args.perturb_shift
    try:
        results = gradcheck.run_all(args.seed, args.configs)
    finally:
        qfilter.SHIFT = saved
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{status}  {r.component:<8} {r.name:<32} worst {r.worst:.3e}  tol {r.tol:.0e}", file=out)
    for comp, worst in gradcheck.worst_by_component(results).items():
        print(f"worst relative error {comp}: {worst:.3e}", file=out)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return EXIT_CHECK if failed else EXIT_OK


def cmd_inspect(args, out):
    with open(args.path, "rb") as fh:
        head = fh.read(4)
    if head == qdata.MAGIC:
        ds = qdata.load(args.path)
        counts = np.bincount(ds.labels, minlength=ds.n_classes)
        print(f"QTN1 container v{qdata.VERSION}: {len(ds)} items, shape {ds.item_shape}, {ds.n_classes} classes", file=out)
        print(f"label counts: {', '.join(str(int(c)) for c in counts)}", file=out)
        if len(ds):
            print(f"value mean {ds.images.mean():.6g}, std {ds.images.std():.6g}", file=out)
        return EXIT_OK
    if head == qtrain.CKPT_MAGIC:
        with open(args.path, "rb") as fh:
            echo, blocks = qtrain.parse_checkpoint(fh.read())
        print(f"QCK1 checkpoint v{qtrain.CKPT_VERSION}", file=out)
        for k, v in echo.items():
            print(f"  {k} = {v}", file=out)
        for name, arr in blocks.items():
            print(f"  block {name} {arr.shape}", file=out)
        return EXIT_OK
    raise FormatError(f"unrecognised file magic {head!r}", 0)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "params": cmd_params,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
}


def main(argv=None, out=None):
    out = out or sys.stdout
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
