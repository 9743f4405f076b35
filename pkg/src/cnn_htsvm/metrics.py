"""Frame- and phone-level scoring: FER, macro-F1, PER and confusion tables.

Silence is excluded from every score: frames whose reference label is
``sil`` are not counted for FER or the confusion table, and ``sil`` tokens
are dropped from collapsed phone strings before PER.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import FOLDED_PHONES, SILENCE


def _check_pair(pred, truth):
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(truth)} references")
    return pred, truth


def frame_error_rate(pred, truth, include_silence=False) -> float:
    """Percentage of scored frames whose prediction differs from the reference."""
    pred, truth = _check_pair(pred, truth)
    scored = [(p, t) for p, t in zip(pred, truth) if include_silence or t != SILENCE]
    if not scored:
        raise ValueError("no frames left to score")
    return 100.0 * sum(p != t for p, t in scored) / len(scored)


def per_class_prf(pred, truth, classes=None) -> dict:
    """``{class: (precision, recall, f1)}``; silence is never a class here."""
    pred, truth = _check_pair(pred, truth)
    if classes is None:
        classes = sorted((set(pred) | set(truth)) - {SILENCE})
    pred_a = np.asarray(pred, dtype=object)
    truth_a = np.asarray(truth, dtype=object)
    out = {}
    for c in classes:
        tp = int(np.sum((pred_a == c) & (truth_a == c)))
        fp = int(np.sum((pred_a == c) & (truth_a != c)))
        fn = int(np.sum((pred_a != c) & (truth_a == c)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = (prec, rec, f1)
    return out


def macro_f1(pred, truth) -> float:
    """Unweighted mean F1 over non-silence classes seen in either sequence."""
    scores = per_class_prf(pred, truth)
    if not scores:
        return 1.0
    return float(np.mean([f for _, _, f in scores.values()]))


def collapse_repeats(seq: Sequence[str]) -> list[str]:
    """Drop silence and merge runs of identical symbols.

    Silence is removed before merging, so a phone interrupted only by
    silence (``aa sil aa``) collapses to one token. This keeps the
    operation idempotent.
    """
    out = []
    for s in seq:
        if s != SILENCE and (not out or out[-1] != s):
            out.append(s)
    return out


def levenshtein(ref: Sequence, hyp: Sequence) -> tuple[int, int, int]:
    """Minimal edit decomposition ``(insertions, deletions, substitutions)``.

    Among minimal alignments the backtrace prefers a substitution (or match),
    then an insertion, then a deletion.
    """
    m, n = len(ref), len(hyp)
    d = np.zeros((m + 1, n + 1), dtype=np.int64)
    d[:, 0] = np.arange(m + 1)
    d[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        r = ref[i - 1]
        for j in range(1, n + 1):
            d[i, j] = min(d[i - 1, j - 1] + (r != hyp[j - 1]),
                          d[i, j - 1] + 1,
                          d[i - 1, j] + 1)
    ins = dels = subs = 0
    i, j = m, n
    while i or j:
        if i and j and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return ins, dels, int(subs)


def phone_error_rate(ref_frames, hyp_frames) -> float:
    """Edit distance between collapsed phone strings, as a percentage of the reference."""
    ref_frames, hyp_frames = _check_pair(ref_frames, hyp_frames)
    ref = collapse_repeats(ref_frames)
    hyp = collapse_repeats(hyp_frames)
    if not ref:
        raise ValueError("collapsed reference is empty")
    return 100.0 * sum(levenshtein(ref, hyp)) / len(ref)


def confusion_counts(pred, truth, labels: Sequence[str] = FOLDED_PHONES) -> np.ndarray:
    """``counts[true, pred]`` over frames whose reference is not silence."""
    pred, truth = _check_pair(pred, truth)
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, t in zip(pred, truth):
        if t != SILENCE:
            counts[index[t], index[p]] += 1
    return counts


def ranked_confusions(counts, labels: Sequence[str] = FOLDED_PHONES, top_n=10):
    """Off-diagonal ``(true, pred, count, percent)`` rows, most frequent first.

    ``percent`` is the share of the true class's frames given to ``pred``.
    """
    totals = counts.sum(axis=1)
    rows = []
    for t, p in zip(*np.nonzero(counts)):
        if t != p:
            rows.append((labels[t], labels[p], int(counts[t, p]),
                         100.0 * counts[t, p] / totals[t]))
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows if top_n is None else rows[:top_n]


def confusion_table(pred, truth, labels: Sequence[str] = FOLDED_PHONES, top_n=10):
    counts = confusion_counts(pred, truth, labels)
    return counts, ranked_confusions(counts, labels, top_n)


@dataclass
class EvalReport:
    fer_percent: float
    macro_f1: float
    per_percent: float
    edit_counts: tuple[int, int, int]
    confusion: np.ndarray
    per_class: dict = field(default_factory=dict)
    labels: tuple[str, ...] = FOLDED_PHONES
    n_frames: int = 0
    n_ref_phones: int = 0

    def top_confusions(self, top_n=10):
        return ranked_confusions(self.confusion, self.labels, top_n)

    def to_dict(self) -> dict:
        ins, dels, subs = self.edit_counts
        triples = [[self.labels[t], self.labels[p], int(self.confusion[t, p])]
                   for t, p in zip(*np.nonzero(self.confusion))]
        return {
            "fer": round(self.fer_percent, 10),
            "macro_f1": round(self.macro_f1, 10),
            "per": round(self.per_percent, 10),
            "ins": ins, "del": dels, "sub": subs,
            "n_frames": self.n_frames,
            "n_ref_phones": self.n_ref_phones,
            "confusion": triples,
            "per_class": {c: {"precision": round(p, 10), "recall": round(r, 10),
                              "f1": round(f, 10)}
                          for c, (p, r, f) in sorted(self.per_class.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self, top_n=10) -> str:
        ins, dels, subs = self.edit_counts
        lines = [
            f"frames scored   {self.n_frames}",
            f"FER             {self.fer_percent:.2f}%",
            f"macro F1        {self.macro_f1:.3f}",
            f"PER             {self.per_percent:.2f}%  "
            f"(ins {ins}, del {dels}, sub {subs}; {self.n_ref_phones} ref phones)",
            "",
            "most frequent confusions (true -> predicted):",
        ]
        for t, p, n, pct in self.top_confusions(top_n):
            lines.append(f"  {t:>4} -> {p:<4} {n:7d}  {pct:6.2f}%")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true", "pred", "count", "percent"])
        for t, p, n, pct in self.top_confusions(None):
            w.writerow([t, p, n, f"{pct:.4f}"])
        return buf.getvalue()


def evaluate(pred_utts: Sequence[Sequence[str]], truth_utts: Sequence[Sequence[str]],
             labels: Sequence[str] = FOLDED_PHONES) -> EvalReport:
    """Score a set of utterances.

    Frame metrics pool all frames; PER sums edits and reference lengths over
    utterances, collapsing each utterance separately.
    """
    if len(pred_utts) != len(truth_utts):
        raise ValueError("one prediction sequence per reference utterance required")
    all_pred, all_truth = [], []
    ins = dels = subs = ref_len = 0
    for p, t in zip(pred_utts, truth_utts):
        p, t = _check_pair(p, t)
        all_pred += p
        all_truth += t
        ref = collapse_repeats(t)
        a, b, c = levenshtein(ref, collapse_repeats(p))
        ins, dels, subs, ref_len = ins + a, dels + b, subs + c, ref_len + len(ref)
    if ref_len == 0:
        raise ValueError("collapsed references are empty")
    counts = confusion_counts(all_pred, all_truth, labels)
    return EvalReport(
        fer_percent=frame_error_rate(all_pred, all_truth),
        macro_f1=macro_f1(all_pred, all_truth),
        per_percent=100.0 * (ins + dels + subs) / ref_len,
        edit_counts=(ins, dels, subs),
        confusion=counts,
        per_class=per_class_prf(all_pred, all_truth),
        labels=tuple(labels),
        n_frames=int(sum(t != SILENCE for t in all_truth)),
        n_ref_phones=ref_len,
    )
