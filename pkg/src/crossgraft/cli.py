"""Single executable covering the whole workflow.

Commands: fetch, synth, train, eval, source-only, sweep, transfer,
export-assoc, export-features, inspect. Every flag has a config-file
equivalent; command-line values override the file. Logs go to stderr,
machine-readable outputs only to files. Exit codes: 0 ok, 2 configuration,
3 data, 4 numerical, 5 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import datasets, evaluation, persistence, training
from .config import (
    DATA_ROOT_ENV,
    ExperimentConfig,
    default_data_root,
    load_config,
)
from .errors import (
    ConfigurationError,
    CrossgraftError,
    DataError,
    NumericalError,
    PersistenceError,
)
from .networks import DECODER_DEPTH, StackSplit

log = logging.getLogger("crossgraft")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--scenario", help="source:target pair, e.g. mnist:usps")
    p.add_argument("--split", help="stack split label, e.g. H4L2")
    p.add_argument("--steps", type=int, dest="total_steps", help="training rounds")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--content-constancy", dest="content_constancy", action="store_true",
                   default=None)
    p.add_argument("--no-content-constancy", dest="content_constancy", action="store_false",
                   default=None)
    p.add_argument("--semi-supervised", type=int, dest="semi_supervised_target_count",
                   help="labeled target samples per class (0 = unsupervised)")
    p.add_argument("--graft-noise-sigma", type=float, dest="graft_noise_sigma")
    p.add_argument("--data-root", dest="data_root",
                   help=f"dataset root (default ${DATA_ROOT_ENV} or ./data)")
    p.add_argument("--out", dest="out_dir", help="run output directory")
    p.add_argument("--debug-checks", dest="debug_checks", action="store_true", default=None)


def _build_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for field in (
        "total_steps",
        "batch_size",
        "seed",
        "lr0",
        "content_constancy",
        "semi_supervised_target_count",
        "graft_noise_sigma",
        "data_root",
        "out_dir",
        "debug_checks",
    ):
        value = getattr(args, field, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "scenario", None):
        if ":" not in args.scenario:
            raise ConfigurationError(
                f"scenario must be source:target, got {args.scenario!r}"
            )
        source, target = args.scenario.split(":", 1)
        overrides["source"] = source
        overrides["target"] = target
    if getattr(args, "split", None):
        overrides["split"] = StackSplit.parse(args.split)
    config = config.with_overrides(**overrides)
    config.validate_scenario_names()
    return config


def _dump_config(config: ExperimentConfig) -> None:
    log.info("resolved config:")
    for key, value in sorted(config.to_dict().items()):
        log.info("  %s: %s", key, value)


def _print(line: str) -> None:
    sys.stdout.write(line + "\n")


def _report_line(r: evaluation.EvalReport) -> str:
    return (
        f"scenario={r.scenario} channel={r.channel} accuracy={r.accuracy:.4f} "
        f"n_test={r.n_test} step={r.checkpoint_step}"
    )


# --- command handlers -----------------------------------------------------


def cmd_fetch(args) -> int:
    names = datasets.BASE_DATASETS if args.dataset == "all" else (args.dataset,)
    root = args.root or default_data_root()
    if args.dry_run:
        for n in names:
            _print(f"would fetch {n} into {datasets.loaders.raw_dir(root, n)}")
        return EXIT_OK
    for n in names:
        paths = datasets.fetch_dataset(n, root)
        _print(f"fetched {n}: {len(paths)} files")
    return EXIT_OK


def cmd_synth(args) -> int:
    root = args.root or default_data_root()
    seed = args.seed
    splits = args.splits.split(",")
    plans = []
    for split in splits:
        if split not in ("train", "test"):
            raise ConfigurationError(f"unknown split {split!r}")
        plans.append((args.dataset, split))
    if args.dry_run:
        for name, split in plans:
            _print(f"would synthesize {name}/{split} (seed {seed}) into "
                   f"{datasets.set_dir(root, name, split)}")
        return EXIT_OK
    for name, split in plans:
        if name in ("mnist-m", "fashion-m"):
            base = datasets.load_dataset(name[: -len("-m")], split, root)
            if args.backgrounds:
                patches = datasets.background_patches_from_archive(
                    args.backgrounds, count=args.patches, seed=seed
                )
            else:
                patches = datasets.procedural_backgrounds(count=args.patches, seed=seed)
            out = datasets.blend_background(base, patches, seed=seed)
        else:
            base = datasets.load_dataset("mnist", split, root)
            out = datasets.compose_m_digits(base, seed=seed)
        digest = datasets.save_set(out, datasets.set_dir(root, name, split))
        _print(f"{name}/{split}: {out.count} samples, digest {digest}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _build_config(args)
    _dump_config(config)
    data = training.load_domain_data(config)  # surfaces data errors before step 0
    if args.dry_run:
        _print(f"would train {config.scenario_label} split {config.split.label} "
               f"for {config.total_steps} steps into {config.out_dir}")
        return EXIT_OK
    state, _ = training.run_training(config, data=data, resume_from=args.resume)
    _print(f"trained to step {state.step}; final checkpoint at "
           f"{Path(config.out_dir) / 'checkpoints' / 'final.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    index = persistence.read_index(args.checkpoint)
    config = ExperimentConfig.from_dict(index["config"])
    if args.data_root:
        config = config.with_overrides(data_root=args.data_root)
    _dump_config(config)
    if args.dry_run:
        _print(f"would evaluate {args.checkpoint} channel {args.channel} on "
               f"{config.target}/test")
        return EXIT_OK
    test = datasets.load_dataset(config.target, "test", config.data_root)
    state = persistence.load_checkpoint(args.checkpoint)
    report = evaluation.evaluate_accuracy(state, test, args.channel)
    _print(_report_line(report))
    if args.results:
        evaluation.append_report(report, args.results)
    return EXIT_OK


def cmd_source_only(args) -> int:
    config = _build_config(args)
    _dump_config(config)
    if args.dry_run:
        _print(f"would train a {args.train_on}-only baseline for {config.scenario_label}")
        return EXIT_OK
    report = evaluation.evaluate_source_only(config, train_on=args.train_on)
    _print(_report_line(report))
    if args.results:
        evaluation.append_report(report, args.results)
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _build_config(args)
    splits = [StackSplit.parse(s) for s in args.splits.split(",")]
    _dump_config(config)
    if args.dry_run:
        _print(f"would sweep splits {[s.label for s in splits]} at budget {args.budget}")
        return EXIT_OK
    rows = evaluation.sweep_cgrs(config, splits, budget=args.budget)
    for row in rows:
        if row["error"]:
            _print(f"split={row['split']} error={row['error']}")
        else:
            _print(f"split={row['split']} st={row['st']:.4f} ts={row['ts']:.4f} "
                   f"steps={row['budget_steps']}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    config = _build_config(args)
    _dump_config(config)
    if args.dry_run:
        _print(f"would transfer grafted stacks from {args.checkpoint} to "
               f"{config.scenario_label}")
        return EXIT_OK
    reports = evaluation.transfer_cgrs(args.checkpoint, config)
    for report in reports.values():
        _print(_report_line(report))
        if args.results:
            evaluation.append_report(report, args.results)
    return EXIT_OK


def _load_eval_batches(config: ExperimentConfig, count: int):
    source = datasets.load_dataset(config.source, "test", config.data_root)
    target = datasets.load_dataset(config.target, "test", config.data_root)
    n = min(count, source.count, target.count)
    x_s = datasets.preprocess_images(source.images[:n], 3)
    x_t = datasets.preprocess_images(target.images[:n], 3)
    return source, target, x_s, x_t, n


def cmd_export_assoc(args) -> int:
    index = persistence.read_index(args.checkpoint)
    config = ExperimentConfig.from_dict(index["config"])
    if args.data_root:
        config = config.with_overrides(data_root=args.data_root)
    if args.dry_run:
        _print(f"would export association grids for {args.count} samples to {args.out}")
        return EXIT_OK
    _, _, x_s, x_t, n = _load_eval_batches(config, args.count)
    state = persistence.load_checkpoint(args.checkpoint)
    paths = evaluation.export_associations(state, x_s, x_t, args.out)
    for code, p in paths.items():
        _print(f"{code}: {p} ({n} rows)")
    return EXIT_OK


def cmd_export_features(args) -> int:
    index = persistence.read_index(args.checkpoint)
    config = ExperimentConfig.from_dict(index["config"])
    if args.data_root:
        config = config.with_overrides(data_root=args.data_root)
    if args.dry_run:
        _print(f"would export {args.channel} features for {args.count} samples per domain "
               f"to {args.out}")
        return EXIT_OK
    source, target, x_s, x_t, n = _load_eval_batches(config, args.count)
    state = persistence.load_checkpoint(args.checkpoint)
    batches = [
        (x_s, source.labels[:n], 0),
        (x_t, target.labels[:n], 1),
    ]
    path = evaluation.export_features(state, batches, args.out, channel=args.channel)
    _print(f"{args.channel}: {path} ({2 * n} rows)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    _print(persistence.format_index(persistence.read_index(args.checkpoint)))
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossgraft",
        description="Domain adaptation via cross-grafted decoder stacks with "
        "adversarial label alignment",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download raw benchmark archives")
    p.add_argument("--dataset", default="all",
                   choices=list(datasets.BASE_DATASETS) + ["all"])
    p.add_argument("--root", help="dataset root directory")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_fetch)

    p = sub.add_parser("synth", help="synthesize a derived dataset")
    p.add_argument("dataset", choices=list(datasets.DERIVED_DATASETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--root", help="dataset root directory")
    p.add_argument("--splits", default="train,test")
    p.add_argument("--backgrounds", help="directory or tarball of background photos")
    p.add_argument("--patches", type=int, default=4096,
                   help="number of background patches to draw")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="run the three-phase adaptation training")
    _add_config_flags(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the target test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--channel", default="st", choices=["st", "ts", "combined"])
    p.add_argument("--data-root")
    p.add_argument("--results", help="CSV file to append the report to")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("source-only", help="train/evaluate the no-adaptation baseline")
    _add_config_flags(p)
    p.add_argument("--train-on", default="source", choices=["source", "target"])
    p.add_argument("--results")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_source_only)

    all_splits = ",".join(f"H{k}L{DECODER_DEPTH - k}" for k in range(DECODER_DEPTH + 1))
    p = sub.add_parser("sweep", help="train and evaluate several stack splits")
    _add_config_flags(p)
    p.add_argument("--splits", default=all_splits)
    p.add_argument("--budget", type=float, default=0.2,
                   help="fraction of total_steps per split")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("transfer", help="reuse trained grafted stacks on a new scenario")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="donor checkpoint")
    p.add_argument("--results")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_transfer)

    p = sub.add_parser("export-assoc", help="write association image grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--data-root")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_export_assoc)

    p = sub.add_parser("export-features", help="write penultimate-layer features as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channel", default="st", choices=["st", "ts"])
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--data-root")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(handler=cmd_export_features)

    p = sub.add_parser("inspect", help="print a checkpoint's index")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(handler=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except ConfigurationError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except DataError as e:
        log.error("%s", e)
        return EXIT_DATA
    except NumericalError as e:
        log.error("%s", e)
        return EXIT_NUMERIC
    except (PersistenceError, OSError) as e:
        log.error("%s", e)
        return EXIT_IO
    except CrossgraftError as e:
        log.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
