"""Acceptance suite: one PASS/FAIL line per criterion (see the summary at the end).

Run on its own with ``pytest tests/test_acceptance.py -v``. Criterion 1 needs
a licensed TIMIT corpus at ``$TIMIT_ROOT`` and is skipped otherwise.
"""
import json
import os
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from cnn_htsvm.cli import EXIT_OK, main
from cnn_htsvm.cnn import ShallowCNN
from cnn_htsvm.corpus import FOLDED_PHONES
from cnn_htsvm.htsvm import HTSVMClassifier
from cnn_htsvm.metrics import collapse_repeats, evaluate, levenshtein
from cnn_htsvm.mlp import MLPBaseline
from cnn_htsvm.smote import balance_node, smote, synthetic_counts
from cnn_htsvm.spectro import fft_magnitude, read_spcf
from cnn_htsvm.svm import KernelParams, dual_objective, kernel_matrix, smo_solve
from cnn_htsvm.synth import TAXONOMY as SYNTH_TAXONOMY

from conftest import record, skip_line
from oracles import (alignment_edit_distance, finite_difference_check, naive_dft_magnitude,
                     svm_dual_oracle)

SMO_INSTANCES = json.loads((Path(__file__).parent / "data" / "smo_instances.json").read_text())
REPORT_FILES = ("report.txt", "report.json", "confusion.csv")


# -- 1: optional TIMIT reproduction --------------------------------------------------

@pytest.mark.timit
def test_criterion_1_timit(tmp_path):
    name = "TIMIT reproduction FER 37.04+-5, PER 35.41+-5, macro-F1 0.491+-0.08"
    root = os.environ.get("TIMIT_ROOT")
    if not root:
        skip_line(1, name, "TIMIT_ROOT not set")
        pytest.skip("TIMIT_ROOT not set")
    work = Path(os.environ.get("TIMIT_WORKDIR", tmp_path))
    cfg = ["--set", f'paths.corpus="{root}"', "--set", f'paths.workdir="{work}"']
    for cmd in ("prepare", "train", "evaluate"):
        assert main([cmd, *cfg]) == EXIT_OK
    rep = json.loads((work / "reports" / "report.json").read_text())
    ok = (abs(rep["fer"] - 37.04) <= 5 and abs(rep["per"] - 35.41) <= 5
          and abs(rep["macro_f1"] - 0.491) <= 0.08)
    detail = f"FER {rep['fer']:.2f}, PER {rep['per']:.2f}, F1 {rep['macro_f1']:.3f}"
    assert record(1, name, ok, detail)


# -- 2: oracle suites --------------------------------------------------------------

def test_criterion_2_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    fft_err = 0.0
    for _ in range(1000):
        size = int(2 ** rng.integers(1, 10))
        x = rng.uniform(-1, 1, rng.integers(1, size + 1))
        fft_err = max(fft_err, np.max(np.abs(fft_magnitude(x, size) - naive_dft_magnitude(x, size))))
    fft_ok = fft_err < 1e-9

    lev_bad = 0
    for _ in range(1000):
        a = list(rng.choice(list("abcd"), rng.integers(0, 9)))
        b = list(rng.choice(list("abcd"), rng.integers(0, 9)))
        lev_bad += sum(levenshtein(a, b)) != alignment_edit_distance(a, b)
    lev_ok = lev_bad == 0

    smo_gap = 0.0
    for inst in SMO_INSTANCES:
        X, y, C = np.array(inst["X"]), np.array(inst["y"]), inst["C"]
        p = KernelParams(inst["degree"], inst["coef0"], inst["scale"])
        K = kernel_matrix(X, X, p)
        alpha = smo_solve(X, y, C, p)[0]
        oracle = svm_dual_oracle(K, y, C)[0]
        smo_gap = max(smo_gap, abs(dual_objective(alpha, y, K) - oracle))
    smo_ok = smo_gap <= 1e-3 and all(len(i["y"]) <= 6 for i in SMO_INSTANCES)

    elapsed = time.perf_counter() - t0
    ok = fft_ok and lev_ok and smo_ok and elapsed < 120
    detail = (f"FFT max err {fft_err:.1e} on 1000 cases; Levenshtein mismatches {lev_bad}/1000; "
              f"SMO max |dObj| {smo_gap:.1e} on {len(SMO_INSTANCES)} instances; {elapsed:.1f} s")
    assert record(2, "oracle suites", ok, detail)


# -- 3: gradient checks ----------------------------------------------------------------

def test_criterion_3_gradients():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(6, 8, 3))
    y_idx = np.array([0, 1, 2, 0, 1, 2])
    cnn = ShallowCNN(num_maps=3, mask_rows=3, mask_cols=1, pool_rows=2, pool_cols=3,
                     random_state=1).initialize((8, 3), ["a", "b", "c"])
    cnn.conv_bias_ = rng.normal(scale=0.1, size=3)
    cnn_err = finite_difference_check(
        cnn, lambda: cnn.loss_and_gradients(X, y_idx),
        ["kernels_", "conv_bias_", "head_weights_", "head_bias_"], step=1e-5)

    Z = rng.normal(size=(8, 4))
    z_idx = rng.integers(0, 3, 8)
    mlp = MLPBaseline(hidden_units=5, random_state=1).initialize(4, ["a", "b", "c"])
    mlp.hidden_bias_ = rng.normal(scale=0.1, size=5)
    mlp_err = finite_difference_check(
        mlp, lambda: mlp.loss_and_gradients(Z, z_idx),
        ["hidden_weights_", "hidden_bias_", "output_weights_", "output_bias_"], step=1e-5)
    ok = cnn_err < 1e-4 and mlp_err < 1e-4
    assert record(3, "gradient checks", ok,
                  f"CNN max rel err {cnn_err:.1e}, MLP max rel err {mlp_err:.1e}")


# -- 5: routing confinement ------------------------------------------------------------

def test_criterion_5_routing_confinement():
    phones = ["sil", "aa", "iy", "m", "l", "s", "sh", "f", "z"]
    rng = np.random.default_rng(5)
    centers = {p: 3 * rng.normal(size=6) for p in phones}
    X = np.concatenate([centers[p] + 0.6 * rng.normal(size=(40, 6)) for p in phones])
    y = np.repeat(np.array(phones, dtype=object), 40)
    model = HTSVMClassifier(taxonomy=SYNTH_TAXONOMY, C=100.0, degree=2).fit(X, y)
    tax = model.taxonomy_
    idx = rng.integers(0, len(X), 1000)
    Xt = X[idx] + rng.normal(scale=3.0, size=(1000, 6))
    # the perfect root: every frame starts at its true broad class
    truth_broad = [tax.broad_class(p) for p in y[idx]]
    pred = model.route(Xt, truth_broad)
    inside = np.mean([tax.broad_class(p) == b for p, b in zip(pred, truth_broad)])
    errors = np.mean(pred != y[idx])
    assert record(5, "routing confinement", inside == 1.0,
                  f"{100 * inside:.1f}% of 1000 frames inside true broad class; "
                  f"leaf error {100 * errors:.1f}%")


# -- 6: balance and SMOTE -----------------------------------------------------------

def test_criterion_6_balance_and_smote():
    rng = np.random.default_rng(6)
    per_class = {"a": rng.normal(size=(120, 4)), "b": rng.normal(size=(17, 4)),
                 "c": rng.normal(size=(45, 4))}
    out = balance_node(per_class)
    equal = len({len(v) for v in out.values()}) == 1

    minority = rng.normal(size=(25, 6))
    syn = smote(minority, 5, 1000, seed=6)
    inside = bool(np.all(syn >= minority.min(axis=0)) and np.all(syn <= minority.max(axis=0)))

    kg = synthetic_counts({"k": 60_433, "g": 17_727})
    arithmetic = kg == {"k": 0, "g": 42_706}
    ok = equal and inside and arithmetic and len(syn) == 1000
    detail = (f"counts {sorted(len(v) for v in out.values())}; 1000 synthetics in envelope: "
              f"{inside}; k/g synthetics {kg['g']}")
    assert record(6, "balance and SMOTE", ok, detail)


# -- 4, 7, 8: synthetic pipeline -------------------------------------------------------

def _pipeline_run(corpus, workdir, workers):
    cfg = ["--config", str(corpus / "pipeline.toml"),
           "--set", f'paths.workdir="{workdir}"', "--workers", str(workers)]
    for cmd in ("prepare", "train", "evaluate"):
        assert main([cmd, *cfg]) == EXIT_OK, cmd
    return workdir


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    """gen-synth n=200 (+50 held out), then three full runs: workers 8, 8 again, and 1."""
    root = tmp_path_factory.mktemp("synthetic")
    corpus = root / "corpus"
    assert main(["gen-synth", "--out", str(corpus), "--n", "200", "--n-test", "50"]) == EXIT_OK
    runs = {}
    for tag, workers in (("a", 8), ("b", 8), ("c", 1)):
        t0 = time.perf_counter()
        runs[tag] = _pipeline_run(corpus, root / f"work_{tag}", workers)
        print(f"run {tag} (workers {workers}): {time.perf_counter() - t0:.1f} s")
    return runs


@pytest.mark.slow
def test_criterion_4_synthetic_end_to_end(synthetic):
    rep = json.loads((synthetic["a"] / "reports" / "report.json").read_text())
    n_test = len((synthetic["a"] / "frames" / "test" / "manifest.txt").read_text().split())
    ok = rep["fer"] <= 10 and rep["per"] <= 15 and n_test == 50
    assert record(4, "synthetic end-to-end", ok,
                  f"FER {rep['fer']:.2f}% (<= 10), PER {rep['per']:.2f}% (<= 15) "
                  f"on {n_test} held-out utterances")


def _outputs(workdir):
    files = {"model.htsv": (workdir / "model.htsv").read_bytes()}
    for name in REPORT_FILES:
        files[name] = (workdir / "reports" / name).read_bytes()
    return files


@pytest.mark.slow
def test_criterion_7_determinism(synthetic):
    a, b, c = (_outputs(synthetic[k]) for k in "abc")
    same_seed = a == b
    workers = a == c
    frames = all((synthetic["a"] / "frames" / s / n).read_bytes()
                 == (synthetic["c"] / "frames" / s / n).read_bytes()
                 for s in ("train", "test")
                 for n in (synthetic["a"] / "frames" / s / "manifest.txt").read_text().split())
    ok = same_seed and workers and frames
    assert record(7, "determinism", ok,
                  f"repeat run identical: {same_seed}; workers 1 == workers 8: {workers}; "
                  f"frame dumps identical: {frames}")


@pytest.mark.slow
def test_criterion_8_metric_identities(synthetic):
    test_dir = synthetic["a"] / "frames" / "test"
    truth = [read_spcf(test_dir / n)[1] for n in (test_dir / "manifest.txt").read_text().split()]
    oracle = evaluate(truth, truth)
    identities = oracle.fer_percent == 0 and oracle.per_percent == 0 and oracle.macro_f1 == 1

    rng = np.random.default_rng(8)
    seqs = truth + [list(rng.choice(["sil", "aa", "s", "z"], rng.integers(0, 30)))
                    for _ in range(500)]
    idempotent = all(collapse_repeats(collapse_repeats(s)) == collapse_repeats(s) for s in seqs)

    true_counts = Counter(lab for t in truth for lab in t if lab != "sil")
    row_ok = True
    reports = [oracle.to_dict()] + [json.loads((synthetic[k] / "reports" / "report.json").read_text())
                                    for k in "abc"]
    for rep in reports:
        rows = Counter()
        for t, _, n in rep["confusion"]:
            rows[t] += n
        row_ok &= rows == true_counts and rep["n_frames"] == sum(true_counts.values())
    assert set(true_counts) <= set(FOLDED_PHONES)
    ok = identities and idempotent and row_ok
    assert record(8, "metric identities", ok,
                  f"oracle FER {oracle.fer_percent}, PER {oracle.per_percent}, "
                  f"F1 {oracle.macro_f1}; collapse idempotent: {idempotent}; "
                  f"row sums match on {len(reports)} reports: {row_ok}")
