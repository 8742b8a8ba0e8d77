"""Command-line entry point: train, eval, suite, inspect, bench.

Every command accepts ``--config FILE`` (JSON).  Explicit flags override
file values, file values override built-in defaults, and the resolved
configuration is written as ``config.json`` into each output directory.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 checkpoint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from smartmixed import __version__
from smartmixed.activations import ACTIVATION_NAMES, NUM_ACTIVATIONS
from smartmixed.bench import BENCH_ARCHITECTURE, bench_forward, bench_kernels, synthetic_network
from smartmixed.checkpoint import load_checkpoint, save_checkpoint
from smartmixed.data import prepare_mnist
from smartmixed.errors import (
    CheckpointError,
    ConfigError,
    DataMissingError,
    FormatError,
    InsufficientDepthError,
    LabelError,
    StratifyError,
)
from smartmixed.experiments import (
    ACT_DIST_FIELDS,
    RANKINGS_FIELDS,
    REFERENCE_ARCHITECTURES,
    WEIGHT_MEANS_FIELDS,
    SuiteConfig,
    SuiteError,
    act_dist_rows,
    activation_distribution,
    format_weight_table,
    interactivation_weight_means,
    parse_arch,
    rankings_rows,
    weight_means_rows,
    write_table,
)
from smartmixed.grouped import NetworkMixed, freeze
from smartmixed.network import NetworkPhase1
from smartmixed.trainer import TrainConfig, epoch_logs_csv, evaluate, run_training

log = logging.getLogger("smartmixed")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3

TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig)]
DATA_DEFAULTS = {"data_dir": None, "split_seed": 0, "val_fraction": 0.10, "train_subset": None}


class ConfigFileError(ConfigError):
    pass


# ---------------------------------------------------------------------------
# config plumbing


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigFileError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigFileError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args, defaults: dict) -> dict:
    """defaults <- config file <- explicit flags (flags left at None do not override)."""
    resolved = dict(defaults)
    file_cfg = _load_config_file(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _write_config(out_dir: Path, resolved: dict, command: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {"command": command, "version": __version__, **resolved}
    (out_dir / "config.json").write_text(json.dumps(echo, indent=1, sort_keys=True, default=str) + "\n")


def _arch_arg(text: str) -> list[int]:
    try:
        return parse_arch(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_data(resolved: dict, train_subset=None):
    return prepare_mnist(resolved.get("data_dir"), split_seed=int(resolved.get("split_seed", 0)),
                         val_fraction=float(resolved.get("val_fraction", 0.10)), train_subset=train_subset)


def _train_config(resolved: dict) -> TrainConfig:
    kwargs = {k: resolved[k] for k in TRAIN_KEYS if k in resolved}
    try:
        return TrainConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _assignment_rows(net: NetworkMixed):
    rows = []
    for l, hist in enumerate(net.assignment.histogram(), start=1):
        total = sum(hist.values())
        for name in ACTIVATION_NAMES:
            rows.append([l, name, hist[name], repr(hist[name] / total)])
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    defaults = TrainConfig().to_dict() | DATA_DEFAULTS | {"out": None}
    resolved = _resolve(args, defaults)
    cfg = _train_config(resolved)
    resolved.update(cfg.to_dict())
    out = Path(resolved["out"] or f"runs/train-{'-'.join(map(str, cfg.architecture))}-{cfg.strategy}-s{cfg.seed}")
    resolved["out"] = str(out)
    data = _load_data(resolved, resolved.get("train_subset"))
    _write_config(out, resolved, "train")

    result = run_training(cfg, data)
    (out / "epochs.csv").write_text(epoch_logs_csv(result.logs))
    if result.phase1_net is not None:
        save_checkpoint(out / "phase1.ckpt", result.phase1_net, resolved)
    save_checkpoint(out / "model.ckpt", result.net, resolved)
    write_table(out / "assignment", ("layer", "activation", "count", "fraction"), _assignment_rows(result.net))
    (out / "summary.json").write_text(json.dumps(result.summary, indent=1, sort_keys=True) + "\n")
    s = result.summary
    print(f"{cfg.strategy} {cfg.architecture}: val_acc={s['val_acc']:.4f} test_acc={s['test_acc']:.4f}")
    if "phase1_test_acc" in s:
        print(f"end of phase 1: val_acc={s['phase1_val_acc']:.4f} test_acc={s['phase1_test_acc']:.4f}")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, header = load_checkpoint(args.checkpoint)
    echoed = header.get("config", {})
    defaults = DATA_DEFAULTS | {k: echoed[k] for k in DATA_DEFAULTS if k in echoed}
    defaults["eval_batch_size"] = echoed.get("eval_batch_size", 1000)
    resolved = _resolve(args, defaults)
    data = _load_data(resolved)
    bs = int(resolved["eval_batch_size"])
    val_acc, val_loss = evaluate(net, data.val, bs)
    test_acc, test_loss = evaluate(net, data.test, bs)
    report = {"checkpoint": str(args.checkpoint), "phase": header["phase"],
              "val_acc": val_acc, "val_loss": val_loss, "test_acc": test_acc, "test_loss": test_loss}
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        print(f"val:  acc={val_acc:.4f} loss={val_loss:.4f}")
        print(f"test: acc={test_acc:.4f} loss={test_loss:.4f}")
    return EXIT_OK


SUITE_OVERRIDES = ("phase1_epochs", "phase2_epochs", "train_subset", "batch_size", "learning_rate",
                   "tau", "noise_mode", "logit_lr_multiplier")


def cmd_suite(args) -> int:
    defaults = {"preset": "desk", "architectures": [list(a) for a in REFERENCE_ARCHITECTURES],
                "strategies": None, "workers": 1, "seed": 0, "out": None,
                "data_dir": None, "split_seed": 0, "val_fraction": 0.10}
    defaults |= {k: None for k in SUITE_OVERRIDES}
    resolved = _resolve(args, defaults)
    kwargs = {"architectures": resolved["architectures"], "preset": resolved["preset"], "seed": int(resolved["seed"]),
              "overrides": {k: resolved[k] for k in SUITE_OVERRIDES if resolved[k] is not None}}
    if resolved["strategies"]:
        kwargs["strategies"] = resolved["strategies"]
    suite = SuiteConfig(**kwargs)
    resolved.update(strategies=suite.strategies, architectures=suite.architectures, settings=suite.settings())
    out = Path(resolved["out"] or f"runs/suite-{suite.preset}")
    resolved["out"] = str(out)
    data = _load_data(resolved)
    _write_config(out, resolved, "suite")

    from smartmixed.experiments import run_suite

    try:
        result = run_suite(suite, data, workers=int(resolved["workers"]), out_dir=out)
    except SuiteError as exc:
        print(f"error: {exc}; partial results in {out / 'partial_results.csv'}", file=sys.stderr)
        cause = exc.__cause__
        return EXIT_DATA if isinstance(cause, (DataMissingError, FormatError, LabelError)) else EXIT_CONFIG
    write_table(out / "records", RANKINGS_FIELDS, rankings_rows(result.records), "json")
    print(f"{len(result.records)} runs over {len(suite.architectures)} architectures")
    for strategy, value in result.mrr.items():
        print(f"  {strategy:<11} mrr={value:.4f}")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    net, header = load_checkpoint(args.checkpoint)
    if isinstance(net, NetworkPhase1):
        net = freeze(net)
    resolved = _resolve(args, {"out": None, "min_selection_fraction": 0.05})
    out = Path(resolved["out"] or Path(args.checkpoint).with_suffix("").as_posix() + "-inspect")
    resolved["out"] = str(out)
    resolved["checkpoint"] = str(args.checkpoint)
    resolved["checkpoint_phase"] = header["phase"]
    resolved["checkpoint_config"] = header.get("config", {})
    _write_config(out, resolved, "inspect")

    fractions = activation_distribution(net.assignment)
    write_table(out / "act_dist", ACT_DIST_FIELDS, act_dist_rows(fractions))
    print("activation share per hidden layer")
    print("layer " + " ".join(f"{n:>10}" for n in ACTIVATION_NAMES))
    for l, row in enumerate(fractions, start=1):
        print(f"{l:>5} " + " ".join(f"{v:>10.3f}" for v in row))
    try:
        wm = interactivation_weight_means(net)
    except InsufficientDepthError as exc:
        print(f"weight means skipped: {exc}", file=sys.stderr)
        return EXIT_OK
    write_table(out / "weight_means", WEIGHT_MEANS_FIELDS, weight_means_rows(wm))
    counts = np.zeros(NUM_ACTIVATIONS, dtype=np.int64)
    for kinds in net.assignment.layers:
        counts += np.bincount(kinds, minlength=NUM_ACTIVATIONS)
    threshold = int(np.ceil(float(resolved["min_selection_fraction"]) * counts.sum()))
    print("\nmean hidden-to-hidden weight, source (rows) to target (columns)")
    print(format_weight_table(wm, counts, threshold))
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    resolved = _resolve(args, {"architecture": list(BENCH_ARCHITECTURE), "batch": 128, "repeats": 20,
                               "seed": 0, "kernels": False, "out": None})
    if args.checkpoint:
        net, _ = load_checkpoint(args.checkpoint)
        if isinstance(net, NetworkPhase1):
            net = freeze(net)
        resolved["architecture"] = list(net.architecture)
        resolved["checkpoint"] = str(args.checkpoint)
    else:
        net = synthetic_network(resolved["architecture"], int(resolved["seed"]))
    report = bench_forward(net, int(resolved["batch"]), int(resolved["repeats"]), int(resolved["seed"]))
    if resolved["kernels"]:
        report["kernels"] = bench_kernels(seed=int(resolved["seed"]))
    if resolved["out"]:
        out = Path(resolved["out"])
        _write_config(out, resolved, "bench")
        (out / "bench.json").write_text(json.dumps(report, indent=1) + "\n")
    if args.json:
        print(json.dumps(report, sort_keys=True))
        return EXIT_OK
    print(f"architecture {report['architecture']}, batch {report['batch']}, best of {report['repeats']}")
    print(f"  grouped forward: {report['grouped_seconds'] * 1e3:8.2f} ms  kernel calls/layer {report['grouped_kernel_calls']}")
    print(f"  mixture forward: {report['mixture_seconds'] * 1e3:8.2f} ms  kernel calls/layer {report['mixture_kernel_calls']}")
    print(f"  speedup {report['speedup']:.2f}x, outputs identical: {report['outputs_identical']}")
    for name, r in report.get("kernels", {}).get("backends", {}).items():
        print(f"  {name:>9} backend: matmul {r['matmul_gflops']:6.2f} GFLOP/s, adam {r['adam_ns_per_element']:.2f} ns/element")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_data_flags(p):
    p.add_argument("--data-dir", help="directory holding the four MNIST IDX files (or set SMARTMIXED_MNIST_DIR)")
    p.add_argument("--split-seed", type=int, help="seed of the stratified train/validation split")
    p.add_argument("--val-fraction", type=float, help="validation share of the 60k training set")


def _add_train_flags(p):
    p.add_argument("--phase1-epochs", type=int, help="selective phase length (alpha)")
    p.add_argument("--phase2-epochs", type=int, help="mixed phase length")
    p.add_argument("--train-subset", type=int, help="stratified subsample of the training split")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--tau", type=float, help="Gumbel-Softmax temperature")
    p.add_argument("--noise-mode", choices=["per_batch", "per_sample"])
    p.add_argument("--logit-lr-multiplier", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smartmixed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print warnings and results")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network (SmartMixed or a fixed baseline)")
    p.add_argument("--config", help="JSON file with any of the options below")
    p.add_argument("--arch", dest="architecture", type=_arch_arg, help="layer widths, e.g. 784,256,128,10")
    p.add_argument("--strategy", help="smartmixed, an activation name, or fixed:<name>")
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-batch-size", type=int)
    p.add_argument("--out", help="output directory")
    _add_train_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the validation and test sets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--json", action="store_true", help="print one JSON object")
    p.add_argument("--eval-batch-size", type=int)
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suite", help="train every strategy on every architecture and rank them")
    p.add_argument("--config")
    p.add_argument("--preset", choices=["desk", "paper"])
    p.add_argument("--architectures", type=lambda s: [parse_arch(a) for a in s.split(";") if a.strip()],
                   help="semicolon-separated list, e.g. '784,512,10;784,256,128,10'")
    p.add_argument("--strategies", type=lambda s: [x for x in s.split(",") if x.strip()],
                   help="comma-separated, e.g. relu,smartmixed")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--seed", type=int, help="suite seed; per-run seeds derive from it")
    p.add_argument("--out")
    _add_train_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("inspect", help="activation shares and inter-activation weight means of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--min-selection-fraction", type=float,
                   help="hide kinds chosen by fewer hidden neurons than this share in the printed table")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="time grouped vs mixture-style forward passes")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--arch", dest="architecture", type=_arch_arg)
    p.add_argument("--batch", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--kernels", action="store_true", default=None, help="also compare kernel backends")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataMissingError, FormatError, LabelError, StratifyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT if getattr(args, "checkpoint", None) else EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
