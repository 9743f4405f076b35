"""SMOTE oversampling for per-node class balancing."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target: str = "match_majority"
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.target != "match_majority":
            raise ValueError(f"unsupported SMOTE target {self.target!r}")


def synthetic_counts(counts: Mapping) -> dict:
    """Synthetic rows needed per class to reach the majority count."""
    top = max(counts.values())
    return {c: top - n for c, n in counts.items()}


def _nearest(minority, rows, k):
    """Indices of the k nearest minority rows (self excluded, ties by index)."""
    sq = np.einsum("ij,ij->i", minority, minority)
    out = np.empty((len(rows), k), dtype=np.int64)
    for s in range(0, len(rows), 1024):
        chunk = rows[s:s + 1024]
        d = sq[chunk, None] + sq[None, :] - 2.0 * minority[chunk] @ minority.T
        d[np.arange(len(chunk)), chunk] = np.inf
        out[s:s + len(chunk)] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def smote(minority, k: int, n_new: int, seed=0) -> np.ndarray:
    """Draw ``n_new`` synthetic rows by interpolating towards nearest neighbors.

    Each row is ``x + lam * (x_nn - x)``: ``x`` a uniformly drawn minority row,
    ``x_nn`` one of its ``k`` nearest minority neighbors, ``lam ~ U[0, 1)``.
    ``k`` is clamped to ``len(minority) - 1``.
    """
    minority = np.asarray(minority, dtype=np.float64)
    if n_new < 0:
        raise ValueError("n_new must be non-negative")
    if n_new == 0:
        return np.empty((0, minority.shape[1]))
    m = len(minority)
    if m < 2:
        raise ValueError(f"SMOTE needs at least 2 minority rows, got {m}")
    k = max(1, min(int(k), m - 1))
    rng = np.random.default_rng(seed)
    base = rng.integers(0, m, n_new)
    pick = rng.integers(0, k, n_new)
    lam = rng.random(n_new)
    uniq, inv = np.unique(base, return_inverse=True)
    nn = _nearest(minority, uniq, k)[inv, pick]
    x = minority[base]
    return x + lam[:, None] * (minority[nn] - x)


def balance_node(per_class: Mapping, cfg: SmoteConfig = SmoteConfig()) -> dict:
    """Oversample every class up to the majority count.

    Originals come first in each class, synthetics are appended. A class with
    a single row is duplicated instead (with a warning).
    """
    if len(per_class) < 2:
        raise ValueError("balance_node needs at least 2 classes")
    counts = {}
    for c, rows in per_class.items():
        if len(rows) == 0:
            raise ValueError(f"class {c!r} has no rows")
        counts[c] = len(rows)
    need = synthetic_counts(counts)
    out = {}
    for idx, (c, rows) in enumerate(per_class.items()):
        rows = np.asarray(rows, dtype=np.float64)
        n_new = need[c]
        if n_new == 0:
            out[c] = rows
            continue
        if len(rows) < 2:
            warnings.warn(f"class {c!r} has {len(rows)} row(s); "
                          "oversampling by duplication", RuntimeWarning, stacklevel=2)
            extra = np.repeat(rows, n_new, axis=0)
        else:
            seed = np.random.SeedSequence([int(cfg.seed), idx])
            extra = smote(rows, cfg.k_neighbors, n_new, seed)
        out[c] = np.concatenate([rows, extra])
    return out
