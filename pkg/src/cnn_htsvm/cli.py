"""``cnn-htsvm`` command-line entry point.

Subcommands: ``gen-synth``, ``prepare``, ``train``, ``evaluate``, ``predict``.
Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .cnn import ShallowCNN
from .config import PipelineConfig, load_config
from .container import load_models, save_models
from .corpus import (FOLDED_PHONES, SILENCE, FoldTable, iter_corpus_files,
                     load_utterance, read_audio)
from .errors import ConfigError, DataError
from .htsvm import HTSVMClassifier, TaxonomyError, default_taxonomy, load_taxonomy_file
from .metrics import evaluate as score_utterances
from .mlp import MLPBaseline
from .spectro import extract_frame_images, read_spcf, utterance_images, write_spcf
from .synth import generate_synthetic_corpus

logger = logging.getLogger("cnn_htsvm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

SYNTH_CONFIG = """\
# Pipeline config for the synthetic corpus in this directory.
workers = 0

[paths]
corpus = "."
workdir = "work"
taxonomy = "taxonomy.cfg"

[cnn]
epochs = 5
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextmanager
def stage(name):
    t0 = time.perf_counter()
    logger.info("%s ...", name)
    try:
        yield
    except (DataError, ConfigError, TaxonomyError):
        raise
    except Exception as exc:
        raise RuntimeError(f"stage '{name}' failed: {exc}") from exc
    logger.info("%s done in %.1f s", name, time.perf_counter() - t0)


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fold_table(cfg: PipelineConfig) -> FoldTable:
    p = cfg.path(cfg.paths.fold_table)
    return FoldTable.default() if p is None else FoldTable.from_file(p)


def _taxonomy(cfg: PipelineConfig):
    p = cfg.path(cfg.paths.taxonomy)
    return default_taxonomy() if p is None else load_taxonomy_file(p)


def _frames_dir(cfg: PipelineConfig, split: str) -> Path:
    return cfg.workdir / "frames" / split


# -- prepare -----------------------------------------------------------------

def cmd_prepare(cfg: PipelineConfig, out=None) -> dict:
    """Write one SPCF frame dump per utterance plus a manifest, per split."""
    out = out or sys.stdout
    if not cfg.corpus_dir.is_dir():
        raise DataError(f"corpus directory not found: {cfg.corpus_dir}")
    table = _fold_table(cfg)
    summary = {}
    for split in ("train", "test"):
        files = list(iter_corpus_files(cfg.corpus_dir, split, cfg.corpus.include_sa))
        if not files:
            logger.warning("no %s utterances under %s", split, cfg.corpus_dir)
            continue
        dest = _frames_dir(cfg, split)
        dest.mkdir(parents=True, exist_ok=True)

        def one(item):
            uid, wav, phn = item
            try:
                utt = load_utterance(wav, phn, uid, table)
                frames = extract_frame_images(utt, cfg.spectro)
            except DataError as exc:
                raise DataError(f"{wav}: {exc}") from exc
            name = uid.replace("/", "_") + ".spcf"
            write_spcf(dest / name, np.stack([f.pixels for f in frames]),
                       [f.label for f in frames])
            return name, Counter(f.label for f in frames)

        with stage(f"prepare {split}"):
            results = _map(one, files, cfg.n_workers)
        (dest / "manifest.txt").write_text("".join(n + "\n" for n, _ in results))
        counts = sum((c for _, c in results), Counter())
        summary[split] = counts
        print(f"{split}: {len(results)} utterances, {sum(counts.values())} frames", file=out)
        for phone in sorted(counts):
            print(f"  {phone:>4} {counts[phone]:9d}", file=out)
    return summary


def load_split(cfg: PipelineConfig, split: str):
    """``[(name, images, labels)]`` in manifest order."""
    dest = _frames_dir(cfg, split)
    manifest = dest / "manifest.txt"
    if not manifest.is_file():
        raise DataError(f"no prepared {split} frames in {dest} (run 'prepare' first)")
    out = []
    for name in manifest.read_text().split():
        images, labels = read_spcf(dest / name)
        out.append((name[:-5], images, labels))
    return out


def _stack(utts):
    X = np.concatenate([imgs for _, imgs, _ in utts])
    y = np.array([lab for _, _, labs in utts for lab in labs], dtype=object)
    keep = np.array([lab is not None for lab in y])
    return X[keep], y[keep]


# -- train -------------------------------------------------------------------

def cmd_train(cfg: PipelineConfig, with_mlp: bool = False) -> Path:
    """Train CNN, extract features, train the tree (and optionally the MLP)."""
    taxonomy = _taxonomy(cfg)
    with stage("load frames"):
        X, y = _stack(load_split(cfg, "train"))
    if len(X) == 0:
        raise DataError("no labeled training frames")
    unknown = sorted(set(y) - taxonomy.leaves)
    if unknown:
        raise DataError(f"training labels missing from the taxonomy: {unknown}")
    c = cfg.cnn
    with stage("train cnn"):
        cnn = ShallowCNN(num_maps=c.num_maps, mask_rows=c.mask_rows, mask_cols=c.mask_cols,
                         pool_rows=c.pool_rows, pool_cols=c.pool_cols,
                         learning_rate=c.learning_rate, epochs=c.epochs,
                         batch_size=c.batch_size, random_state=c.seed).fit(X, y)
        logger.info("cnn epoch losses: %s", ", ".join(f"{v:.4f}" for v in cnn.loss_curve_))
    with stage("extract features"):
        F = cnn.transform(X)
    s = cfg.svm
    with stage("train htsvm"):
        tree = HTSVMClassifier(
            taxonomy=taxonomy, C=s.C, degree=s.degree, coef0=s.coef0, scale=s.scale,
            tol=s.tol, max_passes=s.max_passes, n_ensemble=s.n_ensemble,
            k_neighbors=cfg.smote.k_neighbors, random_state=s.seed,
            n_jobs=cfg.n_workers, cache_bytes=s.cache_mb << 20).fit(F, y)
    mlp = None
    if with_mlp or cfg.mlp.enabled:
        m = cfg.mlp
        with stage("train mlp"):
            mlp = MLPBaseline(hidden_units=m.hidden_units, learning_rate=m.learning_rate,
                              epochs=m.epochs, batch_size=m.batch_size,
                              random_state=m.seed).fit(F, y)
    path = cfg.model_path
    path.parent.mkdir(parents=True, exist_ok=True)
    with stage("write model"):
        save_models(path, cnn, tree, mlp, cfg.to_dict())
    logger.info("model written to %s", path)
    return path


# -- evaluate / predict ------------------------------------------------------

def _check_dims(models, image_shape):
    cnn = models["cnn"]
    if tuple(image_shape) != tuple(cnn.image_shape_):
        raise DataError(f"frame images are {tuple(image_shape)}, model expects "
                        f"{tuple(cnn.image_shape_)}")
    if models["htsvm"].n_features_in_ != cnn.feature_dim_:
        raise DataError(f"feature-dim mismatch: cnn gives {cnn.feature_dim_}, tree "
                        f"expects {models['htsvm'].n_features_in_}")


def _predict_utts(models, utts, workers, which="htsvm"):
    cnn, clf = models["cnn"], models[which]

    def one(item):
        _, images, _ = item
        return list(clf.predict(cnn.transform(images)))

    return _map(one, utts, workers)


def _write_reports(report, dest: Path, prefix: str, top_n: int):
    dest.mkdir(parents=True, exist_ok=True)
    (dest / f"{prefix}report.txt").write_text(report.to_text(top_n))
    (dest / f"{prefix}report.json").write_text(report.to_json())
    (dest / f"{prefix}confusion.csv").write_text(report.to_csv())


def cmd_evaluate(cfg: PipelineConfig, model_path=None, split="test", out=None):
    """Score the model on a prepared split; writes text, JSON and CSV reports."""
    out = out or sys.stdout
    models = load_models(model_path or cfg.model_path)
    utts = load_split(cfg, split)
    if not utts:
        raise DataError(f"prepared {split} split is empty")
    _check_dims(models, utts[0][1].shape[1:])
    truth = [list(labels) for _, _, labels in utts]
    if any(lab is None for t in truth for lab in t):
        raise DataError(f"{split} split has unlabeled frames; use 'predict' instead")
    labels = FOLDED_PHONES
    reports = {}
    dest = cfg.workdir / "reports"
    for which, prefix in (("htsvm", ""), ("mlp", "mlp_")):
        if models[which] is None:
            continue
        with stage(f"evaluate {which}"):
            pred = _predict_utts(models, utts, cfg.n_workers, which)
            report = score_utterances(pred, truth, labels)
        _write_reports(report, dest, prefix, cfg.eval.top_n)
        print(f"== {which} on {split} ({len(utts)} utterances)", file=out)
        print(report.to_text(cfg.eval.top_n), file=out)
        reports[which] = report
    return reports


def cmd_predict(cfg: PipelineConfig, inputs, model_path=None, out=None):
    """Per-frame phone strings for unlabeled audio (no scoring)."""
    out = out or sys.stdout
    models = load_models(model_path or cfg.model_path)
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths += sorted(q for q in p.rglob("*") if q.suffix.lower() == ".wav")
        else:
            paths.append(p)
    if not paths:
        raise DataError("no audio files to predict")

    def one(p):
        samples, rate = read_audio(p)
        images, _ = utterance_images(samples, rate, cfg.spectro)
        _check_dims(models, images.shape[1:])
        return p, list(models["htsvm"].predict(models["cnn"].transform(images)))

    for p, phones in _map(one, paths, cfg.n_workers):
        print(f"{p} {' '.join(phones)}", file=out)


def cmd_gen_synth(out_dir, n_train, n_test, seed, out=None):
    out = out or sys.stdout
    out_dir = Path(out_dir)
    generate_synthetic_corpus(n_train, seed, out_dir, "train")
    generate_synthetic_corpus(n_test, seed, out_dir, "test")
    cfg_path = out_dir / "pipeline.toml"
    if not cfg_path.exists():
        cfg_path.write_text(SYNTH_CONFIG)
    print(f"wrote {n_train} train + {n_test} test utterances to {out_dir}", file=out)


# -- argument handling ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cnn-htsvm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="TOML pipeline config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. cnn.epochs=3")
        p.add_argument("--workers", type=int, help="worker threads (default: all cores)")

    p = sub.add_parser("gen-synth", help="write a synthetic TIMIT-layout corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200, help="training utterances")
    p.add_argument("--n-test", type=int, default=50, help="test utterances")
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("prepare", help="extract labeled frame images")
    common(p)

    p = sub.add_parser("train", help="train CNN + HTSVM (and MLP)")
    common(p)
    p.add_argument("--mlp", action="store_true", help="also train the MLP baseline")

    p = sub.add_parser("evaluate", help="score a trained model on a prepared split")
    common(p)
    p.add_argument("--model")
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("predict", help="per-frame phones for unlabeled audio")
    common(p)
    p.add_argument("--model")
    p.add_argument("inputs", nargs="+", help="WAV/SPHERE files or directories")
    return parser


def run(args) -> int:
    if args.command == "gen-synth":
        if args.n < 0 or args.n_test < 0:
            raise ConfigError("--n and --n-test must be non-negative")
        cmd_gen_synth(args.out, args.n, args.n_test, args.seed)
        return EXIT_OK
    overrides = list(args.set)
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    cfg = load_config(args.config, overrides)
    if args.command == "prepare":
        cmd_prepare(cfg)
    elif args.command == "train":
        # fail on a bad taxonomy before any training
        _taxonomy(cfg)
        cmd_train(cfg, with_mlp=args.mlp)
    elif args.command == "evaluate":
        cmd_evaluate(cfg, args.model, args.split)
    elif args.command == "predict":
        cmd_predict(cfg, args.inputs, args.model)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2) if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        return run(args)
    except (ConfigError, TaxonomyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
