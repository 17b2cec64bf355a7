"""Ten-fold cross-validation, fold aggregation, and the spectrogram-size /
network-complexity experiment runners."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from . import nn_core, trainer
from .audio_io import read_wav
from .dataset import entry_label_vector, load_manifest, slice_segment
from .errors import ConfigError, CorpusTooSmallError
from .spectrogram import StftConfig, fixed_spectrogram


@dataclass
class FoldPlan:
    fold_index: int
    train_ids: list
    valid_ids: list
    test_ids: list
    seed: int


@dataclass
class FoldReport:
    fold_index: int
    metrics: dict
    benchmark_epochs: list

    def to_dict(self):
        return {"fold_index": self.fold_index, "metrics": self.metrics,
                "benchmark_epochs": self.benchmark_epochs}


@dataclass
class Corpus:
    """Preprocessed items: id -> (K x K spectrogram, binary label vector)."""

    items: dict
    tag_names: list
    input_k: int

    def arrays(self, ids):
        x = np.stack([self.items[i][0] for i in ids])
        y = np.stack([self.items[i][1] for i in ids])
        return x, y


def build_corpus(manifest_path, stft_config: StftConfig) -> Corpus:
    """Decode, slice and spectrogram every manifest item."""
    manifest = load_manifest(manifest_path)
    items = {}
    for entry in manifest.entries:
        y = entry_label_vector(entry, manifest.tag_names)
        if y.sum() == 0:
            continue
        audio = slice_segment(read_wav(entry.audio_path), entry)
        spec = fixed_spectrogram(audio, stft_config)
        items[entry.item_id] = (spec.values, y)
    return Corpus(items, manifest.tag_names, stft_config.k)


def tenfold_split(item_ids, seed, valid_fraction=0.1):
    """Seeded shuffle into ten disjoint test blocks covering every item
    exactly once; per fold, valid_fraction of the rest is held out."""
    ids = list(item_ids)
    n = len(ids)
    if n < 10:
        raise CorpusTooSmallError(f"{n} items < 10 folds")
    if not 0.0 <= valid_fraction < 1.0:
        raise ConfigError("valid_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(n)]
    base, rem = divmod(n, 10)
    fold_seeds = [int(c.generate_state(1)[0])
                  for c in np.random.SeedSequence(seed).spawn(10)]
    plans = []
    pos = 0
    for fold in range(10):
        size = base + (1 if fold < rem else 0)
        test = order[pos:pos + size]
        rest = order[:pos] + order[pos + size:]
        n_valid = max(1, int(round(valid_fraction * len(rest)))) if valid_fraction > 0 else 0
        plans.append(FoldPlan(fold, rest[n_valid:], rest[:n_valid], test,
                              fold_seeds[fold]))
        pos += size
    return plans


def run_fold(plan: FoldPlan, model_config: nn_core.ModelConfig,
             train_config: trainer.TrainConfig, corpus: Corpus) -> FoldReport:
    """Train on the fold's train split, pick benchmark epochs on validation,
    and report the mean test metrics over those epochs."""
    train_xy = corpus.arrays(plan.train_ids)
    valid_xy = corpus.arrays(plan.valid_ids) if plan.valid_ids else None
    test_x, test_y = corpus.arrays(plan.test_ids)
    fold_config = dataclasses.replace(train_config, seed=plan.seed,
                                      checkpoint_dir=None)
    threshold = fold_config.resolve_threshold(model_config.num_tags,
                                              model_config.head)
    params = nn_core.init_params(model_config, seed=plan.seed)

    per_epoch = []

    def evaluate_epoch(epoch, current):
        scores = trainer.scores_for(current, test_x)
        pred = trainer.predict_tags(scores, threshold)
        per_epoch.append(metrics_mod.evaluate_all(test_y, pred, scores))

    try:
        _, history = trainer.train(params, train_xy, valid_xy, fold_config,
                                   epoch_callback=evaluate_epoch)
    except Exception as exc:
        raise type(exc)(f"fold {plan.fold_index}: {exc}") from exc

    bench = trainer.select_benchmark_epochs(history, n=10)
    fold_metrics = {name: float(np.mean([per_epoch[e][name] for e in bench]))
                    for name in metrics_mod.METRIC_NAMES}
    return FoldReport(plan.fold_index, fold_metrics, bench)


def aggregate(reports):
    """Unweighted mean and population standard deviation per metric."""
    names = list(reports[0].metrics)
    mean = {k: float(np.mean([r.metrics[k] for r in reports])) for k in names}
    std = {k: float(np.std([r.metrics[k] for r in reports])) for k in names}
    return {"mean": mean, "std": std, "num_folds": len(reports)}


def _max_workers():
    return max(1, int(os.environ.get("SPECMER_THREADS", "1")))


def crossval(corpus: Corpus, model_config, train_config, seed,
             valid_fraction=0.1):
    """All ten folds (optionally in parallel) plus the aggregate."""
    plans = tenfold_split(sorted(corpus.items), seed, valid_fraction)
    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(
                lambda p: run_fold(p, model_config, train_config, corpus), plans))
    else:
        reports = [run_fold(p, model_config, train_config, corpus) for p in plans]
    reports.sort(key=lambda r: r.fold_index)
    return reports, aggregate(reports)


def simple_preset(input_k, num_tags, head=nn_core.HEAD_SIGMOID):
    """Four conv layers capped at 50 filters, one hidden layer."""
    return nn_core.ModelConfig(input_k=input_k,
                               conv_layers=[(20, 5), (30, 5), (40, 5), (50, 5)],
                               hidden_sizes=[500], num_tags=num_tags, head=head)


def complex_preset(input_k, num_tags, head=nn_core.HEAD_SIGMOID):
    """Filters in the 100..200 range, three hidden layers."""
    return nn_core.ModelConfig(input_k=input_k,
                               conv_layers=[(100, 5), (150, 5), (200, 5), (200, 5)],
                               hidden_sizes=[500, 500, 500], num_tags=num_tags,
                               head=head)


def size_experiment(manifest_path, sizes, make_model_config, train_config,
                    seed=0, fold_limit=None):
    """Full pipeline per spectrogram side K; rows mirror the size table:
    (K, macro_f1, micro_f1, wall_time_s).

    `make_model_config(k, num_tags)` builds the per-size model; sizes are
    K values with (K-1)*2 a power of two. `fold_limit` trims the number of
    CV folds actually trained (None = all ten).
    """
    rows = []
    for k in sizes:
        nfft = (k - 1) * 2
        config = StftConfig(nfft=nfft)
        start = time.perf_counter()
        corpus = build_corpus(manifest_path, config)
        model_config = make_model_config(k, len(corpus.tag_names))
        plans = tenfold_split(sorted(corpus.items), seed)
        if fold_limit is not None:
            plans = plans[:fold_limit]
        reports = [run_fold(p, model_config, train_config, corpus) for p in plans]
        agg = aggregate(reports)
        wall = time.perf_counter() - start
        rows.append({"k": k, "macro_f1": agg["mean"]["macro_f1"],
                     "micro_f1": agg["mean"]["micro_f1"], "wall_time_s": wall})
    return rows


def network_experiment(corpus: Corpus, train_config, seed=0, fold_limit=None,
                       presets=("simple", "complex")):
    """Simple vs complex network contrast; rows are (preset, P, R, F)."""
    makers = {"simple": simple_preset, "complex": complex_preset}
    rows = []
    for name in presets:
        model_config = makers[name](corpus.input_k, len(corpus.tag_names))
        plans = tenfold_split(sorted(corpus.items), seed)
        if fold_limit is not None:
            plans = plans[:fold_limit]
        reports = [run_fold(p, model_config, train_config, corpus) for p in plans]
        agg = aggregate(reports)
        rows.append({"preset": name,
                     "precision": agg["mean"]["macro_precision"],
                     "recall": agg["mean"]["macro_recall"],
                     "f1": agg["mean"]["macro_f1"]})
    return rows


def write_size_table_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Experiment", "macro_f1", "micro_f1", "time_s"])
        for row in rows:
            writer.writerow([f"Size{row['k']}", f"{row['macro_f1']:.6f}",
                             f"{row['micro_f1']:.6f}", f"{row['wall_time_s']:.3f}"])


def write_network_table_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Experiment", "P", "R", "F"])
        for row in rows:
            writer.writerow([row["preset"], f"{row['precision']:.6f}",
                             f"{row['recall']:.6f}", f"{row['f1']:.6f}"])


def write_fold_reports(out_dir, reports, agg) -> None:
    """JSON per fold + aggregate JSON + a flat CSV across folds.

    The aggregate JSON carries no timing, so identical runs are
    byte-identical.
    """
    os.makedirs(out_dir, exist_ok=True)
    for report in reports:
        with open(os.path.join(out_dir, f"fold_{report.fold_index}.json"), "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    with open(os.path.join(out_dir, "aggregate.json"), "w") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "folds.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold"] + list(metrics_mod.METRIC_NAMES))
        for report in reports:
            writer.writerow([report.fold_index] +
                            [f"{report.metrics[m]:.9f}"
                             for m in metrics_mod.METRIC_NAMES])
