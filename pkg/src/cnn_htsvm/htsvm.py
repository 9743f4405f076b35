"""Hierarchical tree of SVM node classifiers over an articulatory taxonomy.

The root decides between the broad classes (silence, obstruent, sonorant)
by majority vote of several one-vs-one SVMs trained on disjoint chunks of
the data; every other internal node holds one 2-4 way SVM trained only on
the frames whose phone lies below it. Each node's training set is
SMOTE-balanced before fitting.
"""
from __future__ import annotations

import logging
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_labels
from .corpus import FOLDED_PHONES
from .smote import SmoteConfig, balance_node
from .svm import OneVsOneSVC

logger = logging.getLogger(__name__)

MIN_CHILDREN, MAX_CHILDREN = 2, 4


class TaxonomyError(ValueError):
    pass


@dataclass
class Taxonomy:
    """Rooted tree: internal nodes map to ordered children; leaves are phones."""

    root: str
    children: dict[str, tuple[str, ...]]
    phones: frozenset[str]
    parent: dict[str, str] = field(init=False)
    paths: dict[str, tuple[str, ...]] = field(init=False)

    def __post_init__(self):
        self.parent = {c: n for n, kids in self.children.items() for c in kids}
        self.paths = {}
        self._validate()

    def _validate(self):
        if self.root not in self.children:
            raise TaxonomyError(f"root {self.root!r} has no children")
        seen_as_child: dict[str, str] = {}
        for node, kids in self.children.items():
            if not MIN_CHILDREN <= len(kids) <= MAX_CHILDREN:
                raise TaxonomyError(
                    f"node {node!r} has {len(kids)} children; "
                    f"{MIN_CHILDREN}-{MAX_CHILDREN} required")
            for kid in kids:
                if kid in seen_as_child:
                    what = "phone" if kid not in self.children else "node"
                    raise TaxonomyError(
                        f"{what} {kid!r} appears under both {seen_as_child[kid]!r} "
                        f"and {node!r}")
                seen_as_child[kid] = node
        if self.root in seen_as_child:
            raise TaxonomyError(f"cycle: root {self.root!r} is a child of "
                                f"{seen_as_child[self.root]!r}")
        # walk from the root; anything defined but unreached sits on a cycle
        reached, stack = set(), [(self.root, (self.root,))]
        while stack:
            node, path = stack.pop()
            reached.add(node)
            for kid in self.children.get(node, ()):
                if kid in self.children:
                    stack.append((kid, path + (kid,)))
                else:
                    self.paths[kid] = path + (kid,)
        unreached = set(self.children) - reached
        if unreached:
            raise TaxonomyError(f"cycle or unreachable nodes: {sorted(unreached)}")
        leaves = set(self.paths)
        missing = self.phones - leaves
        if missing:
            raise TaxonomyError(f"phones missing from taxonomy: {sorted(missing)}")
        extra = leaves - self.phones
        if extra:
            raise TaxonomyError(f"leaves outside the phone set: {sorted(extra)}")

    @property
    def leaves(self) -> frozenset[str]:
        return frozenset(self.paths)

    @property
    def root_children(self) -> tuple[str, ...]:
        return self.children[self.root]

    def internal_nodes(self) -> list[str]:
        """Internal nodes in preorder (every parent before its children)."""
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(k for k in reversed(self.children[node]) if k in self.children)
        return out

    def is_leaf(self, name: str) -> bool:
        return name not in self.children

    def broad_class(self, phone: str) -> str:
        return self.paths[phone][1]

    def child_towards(self, node: str, phone: str) -> str | None:
        """The child of ``node`` whose subtree holds ``phone`` (None if outside)."""
        path = self.paths[phone]
        if node not in path:
            return None
        return path[path.index(node) + 1]

    def subtree_phones(self, node: str) -> frozenset[str]:
        if self.is_leaf(node):
            return frozenset([node])
        return frozenset(p for p, path in self.paths.items() if node in path)

    def to_text(self) -> str:
        lines = [f"alphabet: {' '.join(sorted(self.phones))}"]
        lines += [f"{n}: {' '.join(self.children[n])}" for n in self.internal_nodes()]
        return "\n".join(lines) + "\n"


def load_taxonomy(config_text: str, phones: Sequence[str] | None = None) -> Taxonomy:
    """Parse ``node: child child ...`` lines into a validated :class:`Taxonomy`.

    The first node line is the root. An optional ``alphabet:`` line declares
    the phone set the leaves must partition; otherwise the 40 folded symbols
    (or ``phones``, when given) are used.
    """
    children: dict[str, tuple[str, ...]] = {}
    root = None
    alphabet = None
    for lineno, raw in enumerate(config_text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise TaxonomyError(f"line {lineno}: expected 'node: children', got {raw!r}")
        name, rest = (s.strip() for s in line.split(":", 1))
        kids = tuple(rest.split())
        if name == "alphabet":
            alphabet = frozenset(kids)
            continue
        if not name or " " in name:
            raise TaxonomyError(f"line {lineno}: bad node name {name!r}")
        if name in children:
            raise TaxonomyError(f"line {lineno}: node {name!r} defined twice")
        if len(set(kids)) != len(kids):
            raise TaxonomyError(f"line {lineno}: repeated child under {name!r}")
        children[name] = kids
        root = root or name
    if root is None:
        raise TaxonomyError("taxonomy defines no nodes")
    if phones is not None:
        alphabet = frozenset(phones)
    elif alphabet is None:
        alphabet = frozenset(FOLDED_PHONES)
    return Taxonomy(root, children, alphabet)


def load_taxonomy_file(path) -> Taxonomy:
    return load_taxonomy(Path(path).read_text())


def default_taxonomy() -> Taxonomy:
    text = (resources.files(__package__) / "taxonomy" / "english39.cfg").read_text()
    return load_taxonomy(text)


def root_vote(member_predictions, taxonomy: Taxonomy):
    """Mode of the ensemble's votes; ties go to the earliest listed root child."""
    counts = Counter(member_predictions)
    order = taxonomy.root_children
    return max(order, key=lambda c: (counts.get(c, 0), -order.index(c)))


def chunk_bounds(n: int, n_chunks: int) -> list[tuple[int, int]]:
    """Equal contiguous chunks; the remainder goes to the last one."""
    size = n // n_chunks
    bounds = [(i * size, (i + 1) * size) for i in range(n_chunks)]
    bounds[-1] = (bounds[-1][0], n)
    return bounds


def _name_seed(random_state, *key) -> np.random.SeedSequence:
    parts = [int(random_state)]
    for k in key:
        parts.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.SeedSequence(parts)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


class HTSVMClassifier(ClassifierMixin, BaseEstimator):
    """Hierarchical tree SVM phone classifier.

    Parameters
    ----------
    taxonomy : Taxonomy, str or None
        Tree definition; a string is parsed as config text. None loads the
        shipped English taxonomy.
    C, degree, coef0, scale, tol, max_passes :
        Passed to every node's :class:`~cnn_htsvm.svm.OneVsOneSVC`.
        ``scale='auto'`` uses ``1 / n_features``.
    n_ensemble : int
        Number of voting members at the root.
    k_neighbors : int
        SMOTE neighborhood size.
    standardize : bool
        Zero-mean, unit-variance features (training statistics) before any
        kernel evaluation.
    random_state : int
    n_jobs : int
        Worker threads for node training; results do not depend on it.
    """

    def __init__(self, taxonomy=None, C=10_000.0, degree=4, coef0=1.0, scale=1.0,
                 tol=1e-3, max_passes=200, n_ensemble=5, k_neighbors=5,
                 standardize=True, random_state=0, n_jobs=1, cache_bytes=256 << 20):
        self.taxonomy = taxonomy
        self.C = C
        self.degree = degree
        self.coef0 = coef0
        self.scale = scale
        self.tol = tol
        self.max_passes = max_passes
        self.n_ensemble = n_ensemble
        self.k_neighbors = k_neighbors
        self.standardize = standardize
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.cache_bytes = cache_bytes

    def _resolve_taxonomy(self) -> Taxonomy:
        if self.taxonomy is None:
            return default_taxonomy()
        if isinstance(self.taxonomy, Taxonomy):
            return self.taxonomy
        return load_taxonomy(self.taxonomy)

    def _node(self, seed) -> OneVsOneSVC:
        return OneVsOneSVC(C=self.C, degree=self.degree, coef0=self.coef0,
                           scale=self.scale, tol=self.tol, max_passes=self.max_passes,
                           random_state=seed, cache_bytes=self.cache_bytes)

    def _balanced(self, Z, labels, classes, seed):
        per_class = {c: Z[labels == c] for c in classes}
        bal = balance_node(per_class, SmoteConfig(self.k_neighbors, seed=_seed_int(seed)))
        Xb = np.concatenate([bal[c] for c in classes])
        yb = np.concatenate([np.full(len(bal[c]), c, dtype=object) for c in classes])
        return Xb, yb

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, len(X))
        tax = self._resolve_taxonomy()
        unknown = sorted(set(y) - tax.leaves)
        if unknown:
            raise ValueError(f"labels not in the taxonomy: {unknown}")
        if self.n_ensemble < 1:
            raise ValueError("n_ensemble must be >= 1")
        self.taxonomy_ = tax
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array(sorted(tax.leaves), dtype=object)
        if self.standardize:
            self.scaler_ = StandardScaler().fit(X)
            Z = self.scaler_.transform(X)
        else:
            self.scaler_ = None
            Z = X

        counts = Counter(y)
        for phone, n in sorted(counts.items()):
            if n < 2:
                logger.warning("phone %r has only %d training frame(s)", phone, n)

        jobs = []   # (owner, node_estimator, problems)

        broad = np.array([tax.broad_class(p) for p in y], dtype=object)
        root_classes = list(tax.root_children)
        for c in root_classes:
            if not np.any(broad == c):
                raise ValueError(f"empty subtree {c!r}: no training frames")
        order = np.random.default_rng(_name_seed(self.random_state, "shuffle")).permutation(len(Z))
        members = []
        for m, (lo, hi) in enumerate(chunk_bounds(len(Z), self.n_ensemble)):
            idx = order[lo:hi]
            bc = broad[idx]
            missing = [c for c in root_classes if not np.any(bc == c)]
            if missing:
                raise ValueError(
                    f"insufficient data: root chunk {m} has no {missing} frames")
            Xb, yb = self._balanced(Z[idx], bc, root_classes,
                                    _name_seed(self.random_state, "root", "smote"))
            # members share seeds: identical chunks give identical members
            est = self._node(_seed_int(_name_seed(self.random_state, "root")))
            members.append(est)
            jobs.append((est, list(est.pair_problems(Xb, yb, root_classes))))

        nodes = {}
        for node in tax.internal_nodes():
            if node == tax.root:
                continue
            kids = list(tax.children[node])
            below = tax.subtree_phones(node)
            rows = np.array([p in below for p in y])
            lab = np.array([tax.child_towards(node, p) for p in y[rows]], dtype=object)
            for k in kids:
                if not np.any(lab == k):
                    raise ValueError(f"empty subtree {k!r} under node {node!r}")
            Xb, yb = self._balanced(Z[rows], lab, kids,
                                    _name_seed(self.random_state, node, "smote"))
            est = self._node(_seed_int(_name_seed(self.random_state, node)))
            nodes[node] = est
            jobs.append((est, list(est.pair_problems(Xb, yb, kids))))

        flat = [(est, pair, binary, Xp, yp) for est, probs in jobs
                for pair, binary, Xp, yp in probs]

        def run(item):
            est, (a, b), binary, Xp, yp = item
            return binary.fit(Xp, yp, classes=[est.classes_[a], est.classes_[b]])

        n_jobs = max(1, int(self.n_jobs or 1))
        if n_jobs == 1:
            fitted = [run(item) for item in flat]
        else:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                fitted = list(pool.map(run, flat))
        pos = 0
        for est, probs in jobs:
            est.set_estimators(fitted[pos:pos + len(probs)])
            pos += len(probs)
        self.root_members_ = members
        self.node_models_ = nodes
        return self

    def _standardize(self, X):
        check_is_fitted(self, "root_members_")
        X = check_features(X, self.n_features_in_)
        return self.scaler_.transform(X) if self.scaler_ is not None else X

    def _broad(self, Z):
        votes = np.stack([m.predict(Z) for m in self.root_members_], axis=1)
        return votes, np.array([root_vote(v, self.taxonomy_) for v in votes], dtype=object)

    def _descend(self, Z, current):
        tax = self.taxonomy_
        # preorder visits every parent before its children
        for node in tax.internal_nodes():
            if node == tax.root:
                continue
            rows = np.flatnonzero(current == node)
            if len(rows):
                current[rows] = self.node_models_[node].predict(Z[rows])
        return current

    def root_votes(self, X) -> np.ndarray:
        """Per-member root predictions, shape (n_samples, n_ensemble)."""
        return self._broad(self._standardize(X))[0]

    def predict_broad(self, X) -> np.ndarray:
        return self._broad(self._standardize(X))[1]

    def route(self, X, start) -> np.ndarray:
        """Descend from the given root children down to leaf phones."""
        Z = self._standardize(X)
        current = np.array(start, dtype=object)
        if current.shape != (len(Z),):
            raise ValueError("one start node per sample required")
        bad = set(current) - set(self.taxonomy_.root_children)
        if bad:
            raise ValueError(f"start nodes must be root children, got {sorted(bad)}")
        return self._descend(Z, current)

    def predict(self, X):
        Z = self._standardize(X)
        return self._descend(Z, self._broad(Z)[1])


def train_tree(features, phone_labels, taxonomy=None, **params) -> HTSVMClassifier:
    return HTSVMClassifier(taxonomy=taxonomy, **params).fit(features, phone_labels)
