"""Command-line entry point.

Subcommands: train, eval, sweep, gradcheck, merge-labels, synth, inspect.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure. Every command is deterministic given its flags; the default seed
can be overridden through the GENRENET_SEED environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import data, report
from .errors import (ArgumentError, ConfigError, DataError, GenreNetError,
                     NumericalError)
from .losses import MultitaskConfig
from .network import Activation, NetworkConfig, load_checkpoint, save_checkpoint
from .sampler import NoiseConfig
from .trainer import (DataSplits, Optimizer, TrainConfig, heads_for_multitask,
                      run_gradcheck_battery, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this CLI reserves 2 for data
    problems, so usage failures exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    return int(os.environ.get("GENRENET_SEED", "0"))


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints: {text!r}") from exc


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {text!r}") from exc


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=_int_list, default=(256, 128, 64),
                   help="hidden layer widths, e.g. 256,128,64 (default)")
    p.add_argument("--activation", choices=[a.value for a in Activation],
                   default=Activation.RELU.value, help="trunk activation (default relu)")
    p.add_argument("--dropout", type=float, default=0.3,
                   help="dropout rate in [0,1) (default 0.3)")
    bn = p.add_mutually_exclusive_group()
    bn.add_argument("--batch-norm", dest="batch_norm", action="store_true",
                    default=True, help="enable batch norm (default)")
    bn.add_argument("--no-batch-norm", dest="batch_norm", action="store_false",
                    help="disable batch norm")
    p.add_argument("--proj-dim", type=int, default=64,
                   help="projection head width for metric losses (default 64)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=5e-4,
                   help="learning rate (default 5e-4)")
    p.add_argument("--batch", type=int, default=64, help="batch size (default 64)")
    p.add_argument("--epochs", type=int, default=50, help="epochs (default 50)")
    p.add_argument("--optimizer", choices=[o.value for o in Optimizer],
                   default=Optimizer.ADAM.value, help="optimizer (default adam)")
    p.add_argument("--seed", type=int, default=None,
                   help="run seed (default $GENRENET_SEED or 0)")
    p.add_argument("--weights", default="ce:1.0",
                   help="head weights, e.g. ce:0.35,ce:0.35,contrastive:0.3 "
                        "(default ce:1.0)")
    p.add_argument("--contrastive-margin", type=float, default=1.0,
                   help="contrastive margin (default 1.0)")
    p.add_argument("--pair-convention", choices=("standard", "swapped"),
                   default="standard",
                   help="contrastive term binding: standard pulls similar "
                        "pairs together; swapped is the mirror form, kept "
                        "for auditing runs trained under it (default standard)")
    p.add_argument("--triplet-margin", type=float, default=0.2,
                   help="triplet margin (default 0.2)")
    hinge = p.add_mutually_exclusive_group()
    hinge.add_argument("--triplet-hinge", dest="triplet_hinge",
                       action="store_true", default=True,
                       help="clamp triplet loss at zero (default)")
    hinge.add_argument("--no-triplet-hinge", dest="triplet_hinge",
                       action="store_false",
                       help="use the raw unclamped triplet value")
    p.add_argument("--snr-db", type=float, default=None,
                   help="enable noise augmentation at this SNR (dB); off by default")
    p.add_argument("--noise-fraction", type=float, default=0.3,
                   help="leading fraction of epochs with noise active (default 0.3)")
    p.add_argument("--eval-every", type=int, default=1,
                   help="validation cadence in epochs (default 1)")


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split", type=_float_list, default=(0.8, 0.1, 0.1),
                   help="train,val,test fractions (default 0.8,0.1,0.1)")
    p.add_argument("--split-seed", type=int, default=12345,
                   help="stratified split seed (default 12345)")


def _build_configs(args, num_classes: int):
    from .losses import ContrastiveParams, PairConvention, TripletParams
    mt = MultitaskConfig.parse(
        args.weights,
        contrastive_params=ContrastiveParams(
            margin=args.contrastive_margin,
            convention=PairConvention(args.pair_convention)),
        triplet_params=TripletParams(margin=args.triplet_margin,
                                     hinge=args.triplet_hinge))
    seed = args.seed if args.seed is not None else _default_seed()
    noise = None
    if args.snr_db is not None:
        noise = NoiseConfig(snr_db=args.snr_db, active_fraction=args.noise_fraction)
    net_cfg = NetworkConfig(
        input_dim=args.input_dim,
        hidden_sizes=args.hidden,
        activation=Activation(args.activation),
        dropout_rate=args.dropout,
        batch_norm=args.batch_norm,
        heads=heads_for_multitask(mt, num_classes, projection_dim=args.proj_dim),
    )
    train_cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
        optimizer=Optimizer(args.optimizer), seed=seed, multitask=mt,
        noise=noise, eval_every=args.eval_every)
    return net_cfg, train_cfg


def _load_splits(args) -> DataSplits:
    dataset, assignments = data.load_dataset(args.manifest)
    if assignments is not None:
        tr, va, te = data.split_by_assignments(dataset, assignments)
    else:
        tr, va, te = data.stratified_split(dataset, args.split, args.split_seed)
    return DataSplits(train=tr, val=va if va.n else None, test=te)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_train(args) -> int:
    splits = _load_splits(args)
    args.input_dim = splits.train.dim
    net_cfg, train_cfg = _build_configs(args, splits.train.num_classes)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net, state, rep = train(splits, net_cfg, train_cfg,
                            log_path=out_dir / "train_log.tsv")
    save_checkpoint(net, out_dir / "model.emtn")
    (out_dir / "report.txt").write_text(report.render_report(rep), encoding="utf-8")
    (out_dir / "report.csv").write_text(report.report_csv(rep), encoding="utf-8")
    print(f"test accuracy {report.format_percent(rep.accuracy)} "
          f"({rep.total} samples), fingerprint {rep.fingerprint}")
    if state.best_epoch is not None:
        print(f"best validation epoch {state.best_epoch} "
              f"(acc {report.format_percent(state.best_val_acc)})")
    if state.plateau_epoch is not None:
        print(f"validation plateau epoch {state.plateau_epoch}")
    print(f"runtime {rep.runtime_seconds:.1f}s", file=sys.stderr)
    return EXIT_OK


def _cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    dataset, assignments = data.load_dataset(args.manifest)
    if args.part != "all":
        if assignments is not None:
            parts = data.split_by_assignments(dataset, assignments)
        else:
            parts = data.stratified_split(dataset, args.split, args.split_seed)
        dataset = dict(zip(("train", "val", "test"), parts))[args.part]
    rep = report.evaluate(net, dataset,
                          fingerprint=report.config_fingerprint(net.config))
    text = report.render_report(rep)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _parse_axis(spec: str):
    name, _, raw = spec.partition("=")
    if not raw:
        raise ConfigError(f"axis spec {spec!r} is not name=v1,v2,...")
    values = []
    for item in raw.split(","):
        for cast in (int, float):
            try:
                values.append(cast(item))
                break
            except ValueError:
                continue
        else:
            values.append({"true": True, "false": False}.get(item.lower(), item))
    return name.strip(), tuple(values)


def _cmd_sweep(args) -> int:
    if args.manifest:
        splits = _load_splits(args)
    else:
        dataset = data.make_cluster_dataset(
            num_classes=args.synth_classes, dim=args.synth_dim,
            per_class=args.synth_per_class, seed=args.split_seed)
        tr, va, te = data.stratified_split(dataset, args.split, args.split_seed)
        splits = DataSplits(train=tr, val=va, test=te)
    args.input_dim = splits.train.dim
    net_cfg, train_cfg = _build_configs(args, splits.train.num_classes)

    axes = dict(_parse_axis(spec) for spec in args.axis or [])
    if args.table2:
        axes["weights"] = tuple(report.multitask_weight_grid())
    if not axes:
        raise ConfigError("sweep needs --axis or --table2")
    spec = report.SweepSpec(axes=axes, cap=args.cap)
    results = report.run_sweep(splits, net_cfg, train_cfg, spec, jobs=args.jobs)

    text = report.emit_table(results, "text")
    print(text, end="")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "sweep.txt").write_text(text, encoding="utf-8")
        (out_dir / "sweep.csv").write_text(report.emit_table(results, "csv"),
                                           encoding="utf-8")
        for axis in spec.axes:
            (out_dir / f"plot_{axis}.csv").write_text(
                report.plot_series(results, axis), encoding="utf-8")
    failures = [r for r in results if r.report is None]
    for r in failures:
        print(f"FAILED {r.label}: {r.error}", file=sys.stderr)
    return EXIT_OK if not failures else EXIT_NUMERIC


def _cmd_gradcheck(args) -> int:
    passed, results = run_gradcheck_battery(tolerance=args.tolerance,
                                            quick=args.quick, seed=args.seed or 1000)
    for label, rep in results:
        status = "ok" if rep.passed else "FAIL"
        worst = rep.worst()
        print(f"{status}  {label}  max_rel_err={rep.max_rel_err:.2e} "
              f"({worst.block})")
    print(f"{'all passed' if passed else 'FAILURES'} "
          f"({len(results)} cases, tolerance {args.tolerance:g})")
    return EXIT_OK if passed else EXIT_NUMERIC


def _cmd_merge_labels(args) -> int:
    ds_a, _ = data.load_dataset(args.a)
    ds_b, _ = data.load_dataset(args.b)
    merged = data.merge_label_spaces(ds_a, ds_b)
    out = Path(args.out)
    stem = out.stem
    data.write_embeddings(out.parent / f"{stem}.emb", merged.embeddings)
    data.write_labels(out.parent / f"{stem}.labels.tsv", merged.labels,
                      merged.label_map)
    extras = {}
    sources = data.encode_class_sources(merged.label_map)
    if sources:
        extras["class_sources"] = sources
    data.write_manifest(out, merged.source, f"{stem}.emb", f"{stem}.labels.tsv",
                        extractor="merged", extras=extras)
    print(f"merged {ds_a.num_classes}+{ds_b.num_classes} classes -> "
          f"{merged.num_classes}, {merged.n} samples, manifest {out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    dataset = data.make_cluster_dataset(
        num_classes=args.classes, dim=args.dim, per_class=args.per_class,
        std=args.std, center_sep=args.sep,
        seed=args.seed if args.seed is not None else _default_seed(),
        source=args.name)
    manifest = data.write_dataset(args.out_dir, dataset, stem=args.stem)
    print(f"wrote {dataset.n} x {dataset.dim} synthetic embeddings "
          f"({dataset.num_classes} classes) -> {manifest}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.suffix == ".mf":
        mf = data.read_manifest(path)
        print(f"manifest name={mf.name} extractor={mf.extractor}")
        path = mf.embeddings_path
    matrix = data.read_embeddings(path)
    print(f"EMB1 v{data.EMB_VERSION}: {matrix.shape[0]} rows x "
          f"{matrix.shape[1]} dims ({path})")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser wiring
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genrenet",
                     description="train and evaluate genre classifiers on "
                                 "precomputed audio embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier from a manifest")
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--out-dir", default="out", help="output directory (default out)")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_split_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--part", choices=("train", "val", "test", "all"), default="all",
                   help="which split part to evaluate (default all)")
    p.add_argument("--out", default=None, help="also write the report here")
    _add_split_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="grid-sweep configurations")
    p.add_argument("--manifest", default=None, help="dataset manifest "
                   "(omit to sweep on synthetic clusters)")
    p.add_argument("--axis", action="append",
                   help="axis spec name=v1,v2,... (repeatable); axes: "
                        + ",".join(report.SWEEP_AXES))
    p.add_argument("--table2", action="store_true",
                   help="sweep the 17 studied multitask weight rows")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs (default 1)")
    p.add_argument("--cap", type=int, default=512, help="max grid points (default 512)")
    p.add_argument("--out-dir", default=None, help="write sweep tables here")
    p.add_argument("--synth-classes", type=int, default=10)
    p.add_argument("--synth-dim", type=int, default=64)
    p.add_argument("--synth-per-class", type=int, default=50)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_split_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--tolerance", type=float, default=1e-4,
                   help="max relative error (default 1e-4)")
    p.add_argument("--quick", action="store_true", help="run a reduced corner set")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("merge-labels", help="union two datasets' label spaces")
    p.add_argument("--a", required=True, help="first manifest")
    p.add_argument("--b", required=True, help="second manifest")
    p.add_argument("--out", required=True, help="output manifest path")
    p.set_defaults(func=_cmd_merge_labels)

    p = sub.add_parser("synth", help="generate a synthetic cluster dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--sep", type=float, default=6.0,
                   help="minimum center separation in units of std (default 6)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--name", default="synth")
    p.add_argument("--stem", default="data")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("inspect", help="dump an embedding file header")
    p.add_argument("--path", required=True, help="EMB1 file or manifest")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:   # argparse --help / usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GenreNetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
