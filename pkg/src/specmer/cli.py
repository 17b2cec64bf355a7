"""Command-line entry point: preprocess, synth, train, crossval, evaluate,
experiment, report."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import cv_harness, dataset, metrics as metrics_mod, nn_core, trainer
from .audio_io import read_wav
from .dataset import entry_label_vector, load_manifest, slice_segment
from .errors import ConfigError, SpecmerError
from .spectrogram import StftConfig, fixed_spectrogram, save_spectrogram

_ALLOWED_KEYS = {
    "": {"seed", "stft", "model", "train", "cv", "io"},
    "stft": {"nfft", "window"},
    "model": {"conv_layers", "hidden_sizes", "num_tags", "dropout_p", "head",
              "conv_activation", "hidden_activation"},
    "train": {"epochs", "batch_size", "learning_rate", "momentum", "threshold",
              "loss"},
    "cv": {"valid_fraction", "fold_limit"},
    "io": {"manifest", "out_dir"},
}


def load_run_config(path):
    """Single-JSON run description; unknown keys are rejected by name."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    for key in raw:
        if key not in _ALLOWED_KEYS[""]:
            raise ConfigError(f"{path}: unknown top-level key {key!r}")
    for section in ("stft", "model", "train", "cv", "io"):
        for key in raw.get(section, {}):
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in section {section!r}")
    raw.setdefault("seed", 0)
    return raw


def _stft_config(raw):
    stft = raw.get("stft", {})
    return StftConfig(nfft=int(stft.get("nfft", 256)),
                      window=stft.get("window", "hann"))


def _model_config(raw, input_k, num_tags):
    model = dict(raw.get("model", {}))
    model.setdefault("num_tags", num_tags)
    return nn_core.ModelConfig(input_k=input_k, **model)


def _train_config(raw, seed):
    train = dict(raw.get("train", {}))
    train["seed"] = seed
    return trainer.TrainConfig(**train)


def _atomic_write_bytes(path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- subcommands -----------------------------------------------------------

def cmd_synth(args):
    manifest_path = dataset.synth_corpus(args.items, args.tags, args.seed,
                                         args.out_dir,
                                         duration_s=args.duration,
                                         sample_rate=args.sample_rate)
    print(f"wrote {args.items} items to {manifest_path}")
    return 0


def cmd_preprocess(args):
    config = StftConfig(nfft=args.nfft, window=args.window)
    manifest = load_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    index_path = os.path.join(args.out_dir, "index.json")
    index = {}
    if os.path.exists(index_path):
        with open(index_path) as fh:
            index = json.load(fh)
    written = skipped = 0
    for entry in manifest.entries:
        with open(entry.audio_path, "rb") as fh:
            digest = hashlib.sha256()
            digest.update(fh.read())
        digest.update(json.dumps([config.nfft, config.window,
                                  entry.segment_start_s,
                                  entry.segment_end_s]).encode())
        content_hash = digest.hexdigest()
        out_name = f"{entry.item_id}.spg"
        out_path = os.path.join(args.out_dir, out_name)
        prev = index.get(entry.item_id)
        if prev and prev["hash"] == content_hash and os.path.exists(out_path):
            skipped += 1
            continue
        audio = slice_segment(read_wav(entry.audio_path), entry)
        spec = fixed_spectrogram(audio, config)
        tmp = out_path + ".tmp"
        save_spectrogram(tmp, spec)
        os.replace(tmp, out_path)
        index[entry.item_id] = {"file": out_name, "hash": content_hash}
        written += 1
    _atomic_write_bytes(index_path,
                        (json.dumps(index, indent=2, sort_keys=True) + "\n").encode())
    print(f"preprocess: {written} written, {skipped} up to date")
    return 0


def cmd_train(args):
    raw = load_run_config(args.config)
    seed = args.seed if args.seed is not None else raw["seed"]
    out_dir = args.out_dir or raw.get("io", {}).get("out_dir", "train_out")
    manifest_path = raw.get("io", {}).get("manifest")
    if manifest_path is None:
        raise ConfigError("config io.manifest is required for train")
    os.makedirs(out_dir, exist_ok=True)

    stft = _stft_config(raw)
    corpus = cv_harness.build_corpus(manifest_path, stft)
    model_config = _model_config(raw, stft.k, len(corpus.tag_names))
    train_config = _train_config(raw, seed)
    train_config.checkpoint_dir = os.path.join(out_dir, "checkpoints")

    ids = sorted(corpus.items)
    valid_fraction = raw.get("cv", {}).get("valid_fraction", 0.1)
    n_valid = max(1, int(round(valid_fraction * len(ids))))
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    valid_xy = corpus.arrays(order[:n_valid])
    train_xy = corpus.arrays(order[n_valid:])

    params = nn_core.init_params(model_config, seed=seed)
    trained, history = trainer.train(params, train_xy, valid_xy, train_config)
    nn_core.save_checkpoint(os.path.join(out_dir, "final.smm"), trained)
    trainer.write_history_csv(os.path.join(out_dir, "history.csv"), history)
    trainer.plot_cost_curve(os.path.join(out_dir, "cost_curve.svg"), history)
    print(f"trained {len(history)} epochs; outputs in {out_dir}")
    return 0


def cmd_crossval(args):
    raw = load_run_config(args.config)
    seed = args.seed if args.seed is not None else raw["seed"]
    out_dir = args.out_dir or raw.get("io", {}).get("out_dir", "crossval_out")
    manifest_path = raw.get("io", {}).get("manifest")
    if manifest_path is None:
        raise ConfigError("config io.manifest is required for crossval")

    stft = _stft_config(raw)
    corpus = cv_harness.build_corpus(manifest_path, stft)
    model_config = _model_config(raw, stft.k, len(corpus.tag_names))
    train_config = _train_config(raw, seed)
    valid_fraction = raw.get("cv", {}).get("valid_fraction", 0.1)
    reports, agg = cv_harness.crossval(corpus, model_config, train_config,
                                       seed, valid_fraction)
    cv_harness.write_fold_reports(out_dir, reports, agg)
    print(f"crossval: {len(reports)} folds; aggregate macro_f1 "
          f"{agg['mean']['macro_f1']:.4f}; outputs in {out_dir}")
    return 0


def cmd_evaluate(args):
    params = nn_core.load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    stft_nfft = (params.config.input_k - 1) * 2
    config = StftConfig(nfft=stft_nfft)
    xs, ys = [], []
    for entry in manifest.entries:
        y = entry_label_vector(entry, manifest.tag_names)
        if y.sum() == 0:
            continue
        audio = slice_segment(read_wav(entry.audio_path), entry)
        xs.append(fixed_spectrogram(audio, config).values)
        ys.append(y)
    x = np.stack(xs)
    truth = np.stack(ys)
    scores = trainer.scores_for(params, x)
    threshold = args.threshold
    if threshold is None:
        threshold = (0.5 if params.config.head == nn_core.HEAD_SIGMOID
                     else 1.0 / params.config.num_tags)
    pred = trainer.predict_tags(scores, threshold)
    metrics_mod.write_report_json(args.out + ".json", truth, pred, scores,
                                  manifest.tag_names)
    metrics_mod.write_report_csv(args.out + ".csv", truth, pred, scores,
                                 manifest.tag_names)
    agg = metrics_mod.evaluate_all(truth, pred, scores)
    print(f"evaluate: macro_f1 {agg['macro_f1']:.4f}, "
          f"micro_f1 {agg['micro_f1']:.4f}")
    return 0


def cmd_experiment(args):
    raw = load_run_config(args.config)
    seed = args.seed if args.seed is not None else raw["seed"]
    out_dir = args.out_dir or raw.get("io", {}).get("out_dir", "experiment_out")
    manifest_path = raw.get("io", {}).get("manifest")
    if manifest_path is None:
        raise ConfigError("config io.manifest is required for experiment")
    os.makedirs(out_dir, exist_ok=True)
    train_config = _train_config(raw, seed)
    fold_limit = raw.get("cv", {}).get("fold_limit")

    if args.kind == "size":
        sizes = args.sizes or [129, 257]
        model_section = raw.get("model", {})

        def make_model(k, num_tags):
            return _model_config({"model": model_section}, k, num_tags)

        rows = cv_harness.size_experiment(manifest_path, sizes, make_model,
                                          train_config, seed=seed,
                                          fold_limit=fold_limit)
        out_csv = os.path.join(out_dir, "size_experiment.csv")
        cv_harness.write_size_table_csv(out_csv, rows)
    else:
        stft = _stft_config(raw)
        corpus = cv_harness.build_corpus(manifest_path, stft)
        rows = cv_harness.network_experiment(corpus, train_config, seed=seed,
                                             fold_limit=fold_limit)
        out_csv = os.path.join(out_dir, "network_experiment.csv")
        cv_harness.write_network_table_csv(out_csv, rows)
    print(f"experiment table written to {out_csv}")
    return 0


def cmd_report(args):
    """Render a crossval aggregate or metrics-report JSON as CSV."""
    with open(args.input) as fh:
        data = json.load(fh)
    rows = []
    if "mean" in data:  # crossval aggregate
        rows.append(["metric", "mean", "std"])
        for name in sorted(data["mean"]):
            rows.append([name, f"{data['mean'][name]:.6f}",
                         f"{data['std'][name]:.6f}"])
    elif "aggregate" in data:  # evaluate report
        rows.append(["metric", "value"])
        for name in sorted(data["aggregate"]):
            rows.append([name, f"{data['aggregate'][name]:.6f}"])
    else:
        raise ConfigError(f"{args.input}: unrecognized report structure")
    with open(args.out, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    print(f"report written to {args.out}")
    return 0


# --- parser ----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="specmer",
        description="Spectrogram CNN multi-label music tagging pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic tagged corpus")
    p.add_argument("--items", type=int, default=40)
    p.add_argument("--tags", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--out-dir", default="synth_corpus")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="materialize spectrograms for a manifest")
    p.add_argument("manifest")
    p.add_argument("--nfft", type=int, default=256)
    p.add_argument("--window", choices=["hann", "rectangular"], default="hann")
    p.add_argument("--out-dir", default="spectrograms")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model from a run config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="ten-fold cross-validation")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", default="metrics_report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="size or network contrast tables")
    p.add_argument("kind", choices=["size", "network"])
    p.add_argument("config")
    p.add_argument("--sizes", type=int, nargs="*", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="render a JSON report as CSV")
    p.add_argument("input")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecmerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
