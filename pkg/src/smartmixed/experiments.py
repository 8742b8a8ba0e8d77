"""Architecture sweep and the analysis metrics built on its results.

Covers per-architecture ranking by test accuracy, mean reciprocal rank,
rank-frequency tables, per-layer activation shares, and mean connection
weights between activation groups.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from smartmixed.activations import ACTIVATION_NAMES, NUM_ACTIVATIONS, ActivationKind
from smartmixed.data import DataSplits, stratified_subset
from smartmixed.errors import ConfigError, InsufficientDepthError, RankError, SmartMixedError
from smartmixed.grouped import ActivationAssignment, NetworkMixed
from smartmixed.trainer import SMARTMIXED, STRATEGIES, TrainConfig, epoch_logs_csv, parse_strategy, run_training

log = logging.getLogger(__name__)

REFERENCE_ARCHITECTURES = [
    [784, 512, 10],
    [784, 512, 256, 128, 10],
    [784, 512, 256, 128, 64, 10],
    [784, 512, 256, 256, 128, 10],
    [784, 256, 128, 10],
    [784, 768, 10],
    [784, 768, 512, 10],
    [784, 768, 512, 512, 10],
    [784, 768, 512, 512, 256, 10],
    [784, 768, 512, 512, 256, 256, 10],
    [784, 768, 512, 512, 256, 256, 128, 10],
    [784, 768, 512, 512, 256, 256, 128, 128, 10],
    [784, 768, 512, 512, 256, 256, 128, 128, 64, 10],
    [784, 768, 512, 512, 256, 256, 128, 128, 64, 64, 10],
    [784, 768, 512, 512, 256, 256, 128, 128, 64, 64, 32, 10],
    [784, 768, 512, 512, 256, 256, 128, 128, 64, 64, 32, 32, 10],
    [784, 768, 512, 512, 256, 256, 128, 128, 64, 64, 32, 32, 16, 10],
    [784, 768, 512, 512, 256, 256, 128, 128, 64, 64, 32, 32, 16, 16, 10],
]

PRESETS = {
    "desk": {"phase1_epochs": 5, "phase2_epochs": 15, "train_subset": 10000},
    "paper": {"phase1_epochs": 50, "phase2_epochs": 350, "train_subset": None},
}

RANKINGS_FIELDS = ("architecture", "strategy", "seed", "val_acc", "test_acc", "rank")
MRR_FIELDS = ("strategy", "mrr")
RANK_DIST_FIELDS = ("strategy", "rank", "count")
ACT_DIST_FIELDS = ("layer", "activation", "fraction")
WEIGHT_MEANS_FIELDS = ("source", "target", "mean", "pair_count")


def arch_id(architecture) -> str:
    return "-".join(str(int(w)) for w in architecture)


def parse_arch(text: str) -> list[int]:
    """``"784,256,10"`` or ``"784-256-10"`` or ``"[784, 256, 10]"`` -> list of widths."""
    cleaned = text.strip().strip("[]").replace("-", ",")
    try:
        return [int(p) for p in cleaned.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse architecture {text!r}") from None


def run_seed(suite_seed: int, architecture, strategy: str) -> int:
    """Stable per-run seed derived from the suite seed, architecture and strategy."""
    key = f"{suite_seed}|{arch_id(architecture)}|{strategy}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


@dataclass
class SuiteConfig:
    architectures: list = field(default_factory=lambda: [list(a) for a in REFERENCE_ARCHITECTURES])
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    overrides: dict = field(default_factory=dict)
    preset: str = "desk"
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")
        if not self.architectures:
            raise ConfigError("a suite needs at least one architecture")
        self.strategies = [parse_strategy(s) for s in self.strategies]
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("duplicate strategies in suite")
        if len(self.strategies) < 2:
            raise ConfigError("a suite needs at least two strategies to rank")
        self.architectures = [[int(w) for w in a] for a in self.architectures]
        ids = [arch_id(a) for a in self.architectures]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate architectures in suite")

    def settings(self) -> dict:
        """Preset values with explicit overrides applied."""
        out = dict(PRESETS[self.preset])
        out.update({k: v for k, v in self.overrides.items() if v is not None})
        return out

    def train_config(self, architecture, strategy) -> TrainConfig:
        settings = self.settings()
        settings.pop("train_subset", None)
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        extra = {k: v for k, v in settings.items() if k in known and k not in ("architecture", "strategy", "seed")}
        return TrainConfig(architecture=list(architecture), strategy=strategy,
                           seed=run_seed(self.seed, architecture, strategy), **extra)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"resolved": self.settings()}


@dataclass
class RunRecord:
    architecture: str
    strategy: str
    seed: int
    val_acc: float
    test_acc: float
    rank: int | None = None

    def row(self) -> list:
        return [self.architecture, self.strategy, self.seed, repr(self.val_acc), repr(self.test_acc),
                "" if self.rank is None else self.rank]


# ---------------------------------------------------------------------------
# metrics


def rank_records(records: list[RunRecord]) -> list[RunRecord]:
    """Assign ranks 1..k within each architecture.

    Order: test accuracy descending, then validation accuracy descending,
    then strategy name.
    """
    by_arch: dict[str, list[RunRecord]] = {}
    for r in records:
        by_arch.setdefault(r.architecture, []).append(r)
    out = []
    for arch in by_arch:
        group = sorted(by_arch[arch], key=lambda r: (-r.test_acc, -r.val_acc, r.strategy))
        out += [dataclasses.replace(r, rank=i) for i, r in enumerate(group, start=1)]
    return out


def mrr(ranks) -> float:
    """Mean of ``1 / rank``; ranks start at 1."""
    ranks = list(ranks)
    if not ranks:
        raise RankError("mean reciprocal rank of an empty list")
    for r in ranks:
        if int(r) != r or r < 1:
            raise RankError(f"ranks must be integers >= 1, got {r!r}")
    return math.fsum(1.0 / r for r in ranks) / len(ranks)


def _strategy_order(records) -> list[str]:
    present = {r.strategy for r in records}
    known = [s for s in STRATEGIES if s in present]
    return known + sorted(present - set(known))


def mrr_table(records: list[RunRecord]) -> dict[str, float]:
    out = {}
    for s in _strategy_order(records):
        out[s] = mrr(r.rank for r in records if r.strategy == s)
    return out


def ranking_distribution(records: list[RunRecord]) -> dict[str, list[int]]:
    """``{strategy: [count of rank 1, count of rank 2, ...]}``."""
    strategies = _strategy_order(records)
    k = max((r.rank for r in records), default=0)
    k = max(k, len(strategies))
    table = {s: [0] * k for s in strategies}
    for r in records:
        if r.rank is None:
            raise RankError("records must be ranked first")
        table[r.strategy][r.rank - 1] += 1
    return table


def top_k_count(records: list[RunRecord], strategy: str, k: int = 3) -> int:
    return sum(1 for r in records if r.strategy == strategy and r.rank <= k)


def activation_distribution(assignment: ActivationAssignment) -> np.ndarray:
    """Per hidden layer, the fraction of neurons using each activation; shape ``(L, 6)``."""
    rows = []
    for kinds in assignment.layers:
        counts = np.bincount(kinds, minlength=NUM_ACTIVATIONS).astype(np.float64)
        rows.append(counts / max(kinds.size, 1))
    return np.array(rows).reshape(len(rows), NUM_ACTIVATIONS)


def pooled_activation_distribution(assignments) -> np.ndarray:
    """Neuron-weighted layer-wise shares pooled over several networks.

    Layer ``l`` pools the ``l``-th hidden layer of every network that has one.
    """
    depth = max((len(a) for a in assignments), default=0)
    counts = np.zeros((depth, NUM_ACTIVATIONS))
    for a in assignments:
        for l, kinds in enumerate(a.layers):
            counts[l] += np.bincount(kinds, minlength=NUM_ACTIVATIONS)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


@dataclass
class WeightMeans:
    """Sum and count of hidden-to-hidden weights per (source kind, target kind)."""

    sums: np.ndarray    # (6, 6) indexed [source, target]
    counts: np.ndarray  # (6, 6) int

    @property
    def means(self) -> np.ndarray:
        """Cell means; NaN marks cells with no connecting pairs."""
        out = np.full(self.sums.shape, np.nan)
        np.divide(self.sums, self.counts, out=out, where=self.counts > 0)
        return out

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    def __add__(self, other: "WeightMeans") -> "WeightMeans":
        return WeightMeans(self.sums + other.sums, self.counts + other.counts)

    @classmethod
    def empty(cls) -> "WeightMeans":
        return cls(np.zeros((NUM_ACTIVATIONS, NUM_ACTIVATIONS)), np.zeros((NUM_ACTIVATIONS, NUM_ACTIVATIONS), dtype=np.int64))


def interactivation_weight_means(net: NetworkMixed) -> WeightMeans:
    """Mean weight from neurons of one kind to neurons of another.

    Only hidden-to-hidden matrices count: input pixels and output logits
    carry no activation kind.
    """
    hidden = len(net.assignment)
    if hidden < 2:
        raise InsufficientDepthError(f"need at least two hidden layers, network has {hidden}")
    wm = WeightMeans.empty()
    for l in range(1, hidden):
        W = net.layers[l].W  # rows: targets in hidden layer l, cols: sources in hidden layer l-1
        src_groups = net.groups[l - 1].indices
        tgt_groups = net.groups[l].indices
        for s in range(NUM_ACTIVATIONS):
            if not src_groups[s].size:
                continue
            cols = W[:, src_groups[s]]
            for t in range(NUM_ACTIVATIONS):
                if not tgt_groups[t].size:
                    continue
                block = cols[tgt_groups[t]]
                wm.sums[s, t] += block.sum()
                wm.counts[s, t] += block.size
    return wm


def hidden_weight_global_mean(net: NetworkMixed) -> float:
    mats = [net.layers[l].W for l in range(1, len(net.assignment))]
    return float(sum(m.sum() for m in mats) / sum(m.size for m in mats))


def format_weight_table(wm: WeightMeans, selection_counts=None, min_count: int = 0) -> str:
    """Text heatmap; kinds selected fewer than ``min_count`` times are left out."""
    keep = list(range(NUM_ACTIVATIONS))
    if selection_counts is not None:
        keep = [k for k in keep if selection_counts[k] >= min_count]
    means = wm.means
    width = max(len(ACTIVATION_NAMES[k]) for k in keep) if keep else 6
    lines = [" " * (width + 2) + " ".join(f"{ACTIVATION_NAMES[t]:>11}" for t in keep)]
    for s in keep:
        cells = " ".join(f"{'-':>11}" if np.isnan(means[s, t]) else f"{means[s, t]:>11.5f}" for t in keep)
        lines.append(f"{ACTIVATION_NAMES[s]:>{width}}  {cells}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# export


def rankings_rows(records):
    return [r.row() for r in records]


def mrr_rows(table: dict):
    return [[s, repr(v)] for s, v in table.items()]


def rank_dist_rows(dist: dict):
    return [[s, i, c] for s, counts in dist.items() for i, c in enumerate(counts, start=1)]


def act_dist_rows(fractions: np.ndarray):
    return [[l, ACTIVATION_NAMES[k], repr(float(fractions[l - 1, k]))]
            for l in range(1, fractions.shape[0] + 1) for k in range(NUM_ACTIVATIONS)]


def weight_means_rows(wm: WeightMeans):
    means = wm.means
    return [[ACTIVATION_NAMES[s], ACTIVATION_NAMES[t],
             "" if not wm.counts[s, t] else repr(float(means[s, t])), int(wm.counts[s, t])]
            for s in range(NUM_ACTIVATIONS) for t in range(NUM_ACTIVATIONS)]


METRIC_FILES = {
    "mrr": ("mrr", MRR_FIELDS, mrr_rows),
    "rank_dist": ("rank_dist", RANK_DIST_FIELDS, rank_dist_rows),
    "act_dist": ("act_dist", ACT_DIST_FIELDS, act_dist_rows),
    "weight_means": ("weight_means", WEIGHT_MEANS_FIELDS, weight_means_rows),
}


def write_table(path, fields, rows, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        path = path.with_suffix(".csv")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            w.writerows(rows)
    elif fmt == "json":
        path = path.with_suffix(".json")
        path.write_text(json.dumps([dict(zip(fields, _jsonable(row))) for row in rows], indent=1) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return path


def _jsonable(row):
    out = []
    for v in row:
        if isinstance(v, str):
            try:
                f = float(v)
            except ValueError:
                out.append(v)
                continue
            out.append(f if v.strip() else None)
        else:
            out.append(v)
    return out


def export(records, metrics: dict, path, fmt: str = "csv") -> list[Path]:
    """Write ``rankings`` plus one file per metric into directory ``path``.

    ``metrics`` may hold ``mrr`` (dict), ``rank_dist`` (dict),
    ``act_dist`` (array) and ``weight_means`` (:class:`WeightMeans`).
    """
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [write_table(out_dir / "rankings", RANKINGS_FIELDS, rankings_rows(records), fmt)]
    for key, value in metrics.items():
        stem, fields, to_rows = METRIC_FILES[key]
        written.append(write_table(out_dir / stem, fields, to_rows(value), fmt))
    return written


def load_records(path) -> list[RunRecord]:
    """Read ``rankings.json`` or ``rankings.csv`` back into records."""
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text())
    else:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        rank = row["rank"]
        out.append(RunRecord(
            architecture=str(row["architecture"]),
            strategy=str(row["strategy"]),
            seed=int(row["seed"]),
            val_acc=float(row["val_acc"]),
            test_acc=float(row["test_acc"]),
            rank=None if rank in ("", None) else int(rank),
        ))
    return out


# ---------------------------------------------------------------------------
# suite


class SuiteError(SmartMixedError, RuntimeError):
    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


@dataclass
class RunOutcome:
    record: RunRecord
    summary: dict
    epochs_csv: str
    assignment: list | None = None          # activation names per hidden layer (smartmixed)
    weight_sums: list | None = None
    weight_counts: list | None = None
    seconds: float = 0.0


_WORKER_DATA: DataSplits | None = None


def _init_worker(data):
    global _WORKER_DATA
    _WORKER_DATA = data


def execute_run(cfg: TrainConfig, data: DataSplits) -> RunOutcome:
    t0 = time.perf_counter()
    result = run_training(cfg, data)
    record = RunRecord(arch_id(cfg.architecture), cfg.strategy, cfg.seed,
                       float(result.summary["val_acc"]), float(result.summary["test_acc"]))
    outcome = RunOutcome(record, result.summary, epoch_logs_csv(result.logs))
    if cfg.strategy == SMARTMIXED:
        outcome.assignment = result.net.assignment.to_names()
        if len(result.net.assignment) >= 2:
            wm = interactivation_weight_means(result.net)
            outcome.weight_sums = wm.sums.tolist()
            outcome.weight_counts = wm.counts.tolist()
    outcome.seconds = time.perf_counter() - t0
    return outcome


def _worker_run(cfg: TrainConfig) -> RunOutcome:
    return execute_run(cfg, _WORKER_DATA)


def _save_outcome(out_dir: Path, outcome: RunOutcome):
    run_dir = out_dir / "runs" / outcome.record.architecture / outcome.record.strategy
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "epochs.csv").write_text(outcome.epochs_csv)
    (run_dir / "summary.json").write_text(json.dumps(outcome.summary, indent=1, sort_keys=True) + "\n")
    if outcome.assignment is not None:
        fr = activation_distribution(ActivationAssignment.from_names(outcome.assignment))
        write_table(run_dir / "act_dist", ACT_DIST_FIELDS, act_dist_rows(fr))
    if outcome.weight_sums is not None:
        wm = WeightMeans(np.array(outcome.weight_sums), np.array(outcome.weight_counts, dtype=np.int64))
        write_table(run_dir / "weight_means", WEIGHT_MEANS_FIELDS, weight_means_rows(wm))
    with (out_dir / "runs.jsonl").open("a") as fh:
        fh.write(json.dumps({**dataclasses.asdict(outcome.record), "seconds": outcome.seconds}) + "\n")


def suite_data(cfg: SuiteConfig, data: DataSplits) -> DataSplits:
    subset = cfg.settings().get("train_subset")
    if subset:
        return DataSplits(stratified_subset(data.train, int(subset), seed=cfg.seed), data.val, data.test)
    return data


@dataclass
class SuiteResult:
    records: list
    mrr: dict
    rank_dist: dict
    act_dist: np.ndarray
    weight_means: WeightMeans
    outcomes: list

    def metrics(self) -> dict:
        return {"mrr": self.mrr, "rank_dist": self.rank_dist,
                "act_dist": self.act_dist, "weight_means": self.weight_means}


def run_suite(cfg: SuiteConfig, data: DataSplits, workers: int = 1, out_dir=None) -> SuiteResult:
    """Train every (architecture, strategy) pair and rank within each architecture.

    Each finished run is appended to ``runs.jsonl`` in ``out_dir``.  If a run
    fails, the remaining work is cancelled and :class:`SuiteError` carries the
    records completed so far.
    """
    data = suite_data(cfg, data)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "runs.jsonl").write_text("")
    jobs = [cfg.train_config(a, s) for a in cfg.architectures for s in cfg.strategies]
    outcomes: list[RunOutcome] = []

    def collect(outcome: RunOutcome):
        outcomes.append(outcome)
        log.info("finished %s %s: test_acc=%.4f (%.0fs, %d/%d)", outcome.record.architecture,
                 outcome.record.strategy, outcome.record.test_acc, outcome.seconds, len(outcomes), len(jobs))
        if out_dir is not None:
            _save_outcome(out_dir, outcome)

    try:
        if workers <= 1:
            for job in jobs:
                collect(execute_run(job, data))
        else:
            ctx = mp.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                     initializer=_init_worker, initargs=(data,)) as pool:
                futures = [pool.submit(_worker_run, job) for job in jobs]
                try:
                    for fut in as_completed(futures):
                        collect(fut.result())
                except BaseException:
                    for f in futures:
                        f.cancel()
                    raise
    except Exception as exc:
        partial = [o.record for o in outcomes]
        if out_dir is not None:
            write_table(out_dir / "partial_results", RANKINGS_FIELDS, rankings_rows(partial))
        raise SuiteError(f"suite aborted after {len(partial)} of {len(jobs)} runs: {exc}", partial) from exc

    order = {(arch_id(j.architecture), j.strategy): i for i, j in enumerate(jobs)}
    outcomes.sort(key=lambda o: order[(o.record.architecture, o.record.strategy)])
    records = rank_records([o.record for o in outcomes])
    records.sort(key=lambda r: (order[(r.architecture, r.strategy)]))
    assignments = [ActivationAssignment.from_names(o.assignment) for o in outcomes if o.assignment is not None]
    wm = WeightMeans.empty()
    for o in outcomes:
        if o.weight_sums is not None:
            wm = wm + WeightMeans(np.array(o.weight_sums), np.array(o.weight_counts, dtype=np.int64))
    result = SuiteResult(
        records=records,
        mrr=mrr_table(records),
        rank_dist=ranking_distribution(records),
        act_dist=pooled_activation_distribution(assignments),
        weight_means=wm,
        outcomes=outcomes,
    )
    if out_dir is not None:
        export(records, result.metrics(), out_dir, "csv")
    return result
