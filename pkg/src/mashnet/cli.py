"""Command-line entry point: synth, builddb, dataset, train, rank, eval."""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys

import numpy as np
import yaml

from . import generation
from .evaluate import (FeatureCache, accuracy, amu_scorer, average_rank, model_scorer,
                       rank_groups, write_report)
from .generation import Condition, GenerationError, build_dataset, candidate_from_seed, split_indices
from .mashupdb import INDEX_NAME, MashupDB, build_db
from .model import ModelConfig, load_checkpoint
from .synth import synth_corpus
from .train import CHECKPOINT_NAME, TrainConfig, TrainingError, extract_features, train

log = logging.getLogger("mashnet")

THREADS_ENV = "MASHNET_THREADS"
CONFIG_ECHO = "config.json"
DATASET_MANIFEST = "dataset.tsv"
SPLIT_FILE = "split.tsv"
VARIANTS = ("premix", "postmix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

# desk-scale defaults; any key can be overridden with --config
DEFAULTS = {
    "window": [8.0, 16.0],
    "model": {"input_frames": 128, "sourcenet_filters": [8, 8, 16, 16],
              "convblock1d_filters": 32, "fc_width": 32},
    "train": {"epochs": 10, "batch_size": 16, "lr": 1e-3},
    "eval": {"n_per_class": 50, "n_seeds": 10, "pool_size": 20},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise UsageError(f"unknown config key {path}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {path}{key} must be a mapping")
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def resolve_config(path):
    if path is None:
        return copy.deepcopy(DEFAULTS)
    with open(path) as fh:
        override = yaml.safe_load(fh) or {}  # JSON is a subset of YAML
    if not isinstance(override, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return _merge(DEFAULTS, override)


def echo_config(out_dir, args, config):
    os.makedirs(out_dir, exist_ok=True)
    record = {"command": args.command,
              "args": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
              "config": config}
    with open(os.path.join(out_dir, CONFIG_ECHO), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def model_config(config, variant) -> ModelConfig:
    m = config["model"]
    return ModelConfig(variant=variant, input_frames=int(m["input_frames"]),
                       sourcenet_filters=tuple(m["sourcenet_filters"]),
                       convblock1d_filters=int(m["convblock1d_filters"]), fc_width=int(m["fc_width"]))


def _window(config):
    lo, hi = (float(v) for v in config["window"])
    if not 0 < lo <= hi:
        raise UsageError("window must satisfy 0 < min <= max")
    return lo, hi


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args, config):
    if args.n_songs < 1:
        raise UsageError("--n-songs must be >= 1")
    truths = synth_corpus(args.n_songs, args.seed, args.out, prefix=args.prefix)
    print(f"wrote {len(truths)} songs to {args.out}")


def cmd_builddb(args, config):
    manifest = args.manifest or os.path.join(args.stems, "manifest.tsv")
    os.makedirs(args.out, exist_ok=True)
    db = build_db(args.stems, manifest, os.path.join(args.out, INDEX_NAME))
    print(f"indexed {len(db)} stems from {len(db.song_ids)} songs")


def cmd_dataset(args, config):
    db = MashupDB.load(args.db)
    rng = np.random.default_rng(args.seed)
    examples = build_dataset(db, args.n_per_class, rng, window=_window(config))
    if args.render:
        examples = generation.render_dataset(db, examples, args.out)
    generation.write_manifest(examples, os.path.join(args.out, DATASET_MANIFEST))
    train_idx, val_idx = split_indices([e.label for e in examples], args.seed)
    val = set(val_idx.tolist())
    with open(os.path.join(args.out, SPLIT_FILE), "w") as fh:
        fh.write("index\tsplit\n")
        for i in range(len(examples)):
            fh.write(f"{i}\t{'val' if i in val else 'train'}\n")
    print(f"{len(examples)} examples ({len(train_idx)} train / {len(val_idx)} val)")


def _read_split(dataset_dir):
    with open(os.path.join(dataset_dir, SPLIT_FILE), newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    train_idx = [int(r["index"]) for r in rows if r["split"] == "train"]
    val_idx = [int(r["index"]) for r in rows if r["split"] == "val"]
    return np.array(train_idx, dtype=int), np.array(val_idx, dtype=int)


def run_name(variant, use_unlabeled):
    return variant if use_unlabeled else f"{variant}_nolsro"


def cmd_train(args, config):
    from .plotting import plot_training

    db = MashupDB.load(args.db)
    examples = generation.read_manifest(os.path.join(args.dataset, DATASET_MANIFEST))
    if not examples:
        raise TrainingError("dataset is empty")
    labels = [e.label for e in examples]
    train_idx, val_idx = _read_split(args.dataset)
    frames = int(config["model"]["input_frames"])
    features = extract_features(db, examples, frames)

    variants = VARIANTS if args.variant == "all" else (args.variant,)
    lsro = (True, False) if args.ablation else (not args.no_unlabeled,)
    t = config["train"]
    for variant in variants:
        for use_unlabeled in lsro:
            name = run_name(variant, use_unlabeled)
            out = os.path.join(args.out, name)
            cfg = TrainConfig(epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), lr=float(t["lr"]),
                              seed=args.seed, use_unlabeled=use_unlabeled)
            _, history = train(features, labels, train_idx, val_idx, model_config(config, variant), cfg, out)
            plot_training(history, os.path.join(out, "training.png"), title=name)
            best = max(h["val_accuracy"] for h in history)
            print(f"{name}: best validation accuracy {best:.4f}")


def cmd_rank(args, config):
    db = MashupDB.load(args.db)
    net = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    window = _window(config)
    pool = []
    if args.include_original:
        pool.append(candidate_from_seed(db, Condition.ORIGINAL, int(rng.integers(generation.SEED_BOUND)),
                                        args.vocal, window))
    pool += [candidate_from_seed(db, Condition.MATCHED, int(rng.integers(generation.SEED_BOUND)), args.vocal, window)
             for _ in range(args.pool_size)]
    scores = model_scorer(net, FeatureCache(db, net.config.input_frames))(pool)
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], i))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ranking.tsv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["rank", "score", "condition", "harmonic_id", "percussion_id",
                         "harmonic_spec", "percussion_spec", "rng_seed", "duration_s", "start_s"])
        for r, i in enumerate(order, start=1):
            c = pool[i]
            writer.writerow([r, f"{scores[i]:.6f}", c.condition.value, c.harmonic_id, c.percussion_id,
                             c.harmonic_spec.to_text(), c.percussion_spec.to_text(), c.rng_seed,
                             repr(c.duration_s), repr(c.start_s)])
    top = pool[order[0]]
    print(f"top candidate: {top.condition.value} {top.harmonic_id} + {top.percussion_id} ({scores[order[0]]:.4f})")


def evaluate_systems(db, models: dict, config, seed: int, with_amu=True):
    """Accuracy on fresh pos/neg examples and average rank of originals among matched pools."""
    e = config["eval"]
    window = _window(config)
    rng = np.random.default_rng(seed)
    labeled = [ex for ex in build_dataset(db, int(e["n_per_class"]), rng, window=window) if ex.label != "unlabeled"]
    groups = rank_groups(db, rng, int(e["n_seeds"]), int(e["pool_size"]), window)
    if not groups:
        raise GenerationError("no vocal seed supports a matched pool")
    scorers = {}
    caches = {}
    for name, net in models.items():
        frames = net.config.input_frames
        cache = caches.setdefault(frames, FeatureCache(db, frames))
        scorers[name] = model_scorer(net, cache)
    if with_amu:
        scorers["amu"] = amu_scorer(db)
    rows = []
    for name, scorer in scorers.items():
        rep = average_rank(scorer, groups)
        rep.accuracy = accuracy(scorer, labeled)
        rows.append((name, rep))
        log.info("%s: accuracy %.4f average rank %.4f", name, rep.accuracy, rep.average_rank)
    return rows


def cmd_eval(args, config):
    from .plotting import plot_ranks

    db = MashupDB.load(args.db)
    models = {}
    for variant in VARIANTS:
        for use_unlabeled in (True, False):
            name = run_name(variant, use_unlabeled)
            path = os.path.join(args.models, name, CHECKPOINT_NAME)
            if os.path.exists(path):
                models[name] = load_checkpoint(path)
    if not models:
        raise FileNotFoundError(f"no checkpoints under {args.models}")
    rows = evaluate_systems(db, models, config, args.seed, with_amu=not args.no_amu)
    os.makedirs(args.out, exist_ok=True)
    write_report(rows, os.path.join(args.out, "report.tsv"))
    plot_ranks(rows, os.path.join(args.out, "ranks.png"))
    for name, rep in rows:
        print(f"{name}\taccuracy {rep.accuracy:.4f}\taverage rank {rep.average_rank:.4f}")


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="mashnet", description="Stem mashup generation and mashability models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, db=False):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="YAML or JSON overrides of the defaults")
        if db:
            sp.add_argument("--db", required=True, help="database directory or index file")

    sp = sub.add_parser("synth", help="write a synthetic stem corpus")
    common(sp)
    sp.add_argument("--n-songs", type=int, default=60)
    sp.add_argument("--prefix", default="song")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("builddb", help="analyze stems into a mashup database")
    common(sp)
    sp.add_argument("--stems", required=True, help="stem root directory")
    sp.add_argument("--manifest", help="song_id/class/path TSV (default: <stems>/manifest.tsv)")
    sp.set_defaults(func=cmd_builddb)

    sp = sub.add_parser("dataset", help="generate a labeled candidate dataset")
    common(sp, db=True)
    sp.add_argument("--n-per-class", type=int, default=300)
    sp.add_argument("--render", action="store_true", help="also write each mix as WAV")
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("train", help="train mashability models")
    common(sp, db=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--variant", choices=VARIANTS + ("all",), default="premix")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--no-unlabeled", action="store_true", help="train on positive/negative only")
    g.add_argument("--ablation", action="store_true", help="train both with and without unlabeled data")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("rank", help="rank matched candidates for one vocal seed")
    common(sp, db=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocal", required=True, help="vocal stem id, e.g. song0003:vocal")
    sp.add_argument("--pool-size", type=int, default=20)
    sp.add_argument("--include-original", action="store_true")
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("eval", help="accuracy and average rank of trained models and AMU")
    common(sp, db=True)
    sp.add_argument("--models", required=True, help="directory holding <variant>/model.ckpt runs")
    sp.add_argument("--no-amu", action="store_true")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        config = resolve_config(args.config)
        echo_config(args.out, args, config)
        threads = os.environ.get(THREADS_ENV)
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(threads)):
                args.func(args, config)
        else:
            args.func(args, config)
    except UsageError as exc:
        print(f"mashnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError, KeyError, GenerationError, TrainingError) as exc:
        print(f"mashnet: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"mashnet: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
