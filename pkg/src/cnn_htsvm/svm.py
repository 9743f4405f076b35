"""Soft-margin SVMs trained by Sequential Minimal Optimization.

The dual ``min 1/2 a'Qa - e'a  s.t.  y'a = 0, 0 <= a <= C`` with
``Q_ij = y_i y_j K(x_i, x_j)`` is solved two coordinates at a time, the pair
being the maximal violating pair of the KKT conditions. Multi-class node
classifiers combine binary machines one-vs-one.
"""
from __future__ import annotations

import logging
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_labels

logger = logging.getLogger(__name__)

TAU = 1e-12
MIN_PASS_ITER = 1000


@dataclass(frozen=True)
class KernelParams:
    """Polynomial kernel ``(scale * <x, y> + coef0) ** degree``."""

    degree: int = 4
    coef0: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"degree must be a positive integer, got {self.degree}")

    def __call__(self, A, B):
        return kernel_matrix(A, B, self)


def poly_kernel(x, y, p: KernelParams = KernelParams()) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float((p.scale * np.dot(x, y) + p.coef0) ** p.degree)


def kernel_matrix(A, B, p: KernelParams) -> np.ndarray:
    G = np.asarray(A) @ np.asarray(B).T
    if p.scale != 1.0:
        G *= p.scale
    if p.coef0 != 0.0:
        G += p.coef0
    return G ** int(p.degree)


def dual_objective(alpha, y, K) -> float:
    """``sum(a) - 1/2 (a*y)' K (a*y)`` -- the quantity SMO maximizes."""
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


class _KernelRows:
    """Kernel column access: full Gram matrix when it fits, else an LRU row cache."""

    def __init__(self, X, params, cache_bytes):
        self.X = X
        self.params = params
        n = len(X)
        self.diag = (params.scale * np.einsum("ij,ij->i", X, X) + params.coef0) ** int(params.degree)
        if n * n * 8 <= cache_bytes:
            self.full = kernel_matrix(X, X, params)
            self.cache = None
        else:
            self.full = None
            self.cache = OrderedDict()
            self.max_rows = max(2, cache_bytes // (8 * n))

    def row(self, i):
        if self.full is not None:
            return self.full[i]
        r = self.cache.get(i)
        if r is not None:
            self.cache.move_to_end(i)
            return r
        r = kernel_matrix(self.X[i:i + 1], self.X, self.params)[0]
        self.cache[i] = r
        if len(self.cache) > self.max_rows:
            self.cache.popitem(last=False)
        return r


@dataclass
class BinarySvmModel:
    support_vectors: np.ndarray
    dual_coefs: np.ndarray          # alpha_i * y_i
    bias: float
    kernel: KernelParams
    C: float
    support_indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    converged: bool = True
    n_iter: int = 0

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(self.dual_coefs) == 0:
            return np.full(len(X), self.bias)
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ValueError(
                f"dimension mismatch: {X.shape[1]} vs {self.support_vectors.shape[1]}")
        return kernel_matrix(X, self.support_vectors, self.kernel) @ self.dual_coefs + self.bias


def decision(model: BinarySvmModel, x) -> float:
    return float(model.decision(np.asarray(x, dtype=np.float64)[None, :])[0])


def smo_solve(X, y, C, params: KernelParams, tol=1e-3, max_passes=200,
              random_state=0, cache_bytes=256 << 20, second_order=True):
    """Run SMO; return ``(alpha, rho, converged, n_iter)`` in the input order.

    The decision function is ``sum_i alpha_i y_i K(x_i, x) - rho``. The first
    index of each pair is the maximal KKT violator; with ``second_order`` the
    partner is the violator giving the largest guaranteed objective decrease,
    otherwise the opposite-extreme violator.

    The iteration budget is ``max_passes * max(n, MIN_PASS_ITER)``, so tiny
    but ill-conditioned problems still get room to converge.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    perm = np.random.default_rng(random_state).permutation(n)
    Xp, yp = X[perm], y[perm]
    rows = _KernelRows(Xp, params, cache_bytes)
    diag = rows.diag
    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = yp > 0
    max_iter = max(1, int(max_passes)) * max(n, MIN_PASS_ITER)
    converged = False
    it = 0
    while it < max_iter:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = np.where(pos, ~at_upper, ~at_lower)
        low = np.where(pos, ~at_lower, ~at_upper)
        score = -yp * grad
        s_up = np.where(up, score, -np.inf)
        s_low = np.where(low, score, np.inf)
        i = int(np.argmax(s_up))
        m_up = s_up[i]
        if m_up - s_low.min() < tol:
            converged = True
            break
        Ki = rows.row(i)
        if second_order:
            b = m_up - s_low
            a = np.maximum(diag[i] + diag - 2.0 * Ki, TAU)
            gain = np.where(b > 0, -(b * b) / a, np.inf)
            j = int(np.argmin(gain))
        else:
            j = int(np.argmin(s_low))
        Kj = rows.row(j)
        quad = max(diag[i] + diag[j] - 2.0 * Ki[j], TAU)
        ai, aj = alpha[i], alpha[j]
        if yp[i] != yp[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
                if aj > C:
                    aj, ai = C, total - C
            else:
                if aj < 0:
                    aj, ai = 0.0, total
                if ai < 0:
                    ai, aj = 0.0, total
        d_i = ai - alpha[i]
        d_j = aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        grad += yp * (yp[i] * d_i * Ki + yp[j] * d_j * Kj)
        it += 1

    yg = yp * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        upper = alpha >= C
        ub_mask = (upper & ~pos) | (~upper & pos)
        lb_mask = ~ub_mask
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub + lb) else float(ub if np.isfinite(ub) else lb)
    out = np.empty(n)
    out[perm] = alpha
    return out, rho, converged, it


def smo_train(X, y, C=10_000.0, p: KernelParams = KernelParams(), tol=1e-3,
              max_passes=200, random_state=0, cache_bytes=256 << 20) -> BinarySvmModel:
    """Train a binary soft-margin SVM on labels in {-1, +1}."""
    X = check_features(X)
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y):
        raise ValueError(f"{len(y)} labels for {len(X)} samples")
    if len(y) < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("SMO needs samples from both classes")
    if not np.all(np.abs(y) == 1):
        raise ValueError("binary labels must be -1 or +1")
    if C <= 0:
        raise ValueError("C must be positive")
    alpha, rho, converged, n_iter = smo_solve(X, y, C, p, tol, max_passes,
                                              random_state, cache_bytes)
    if not converged:
        warnings.warn(f"SMO did not converge within {n_iter} iterations",
                      RuntimeWarning, stacklevel=2)
    sv = np.flatnonzero(alpha > 0)
    return BinarySvmModel(
        support_vectors=X[sv].copy(), dual_coefs=alpha[sv] * y[sv], bias=-rho,
        kernel=p, C=float(C), support_indices=sv, converged=converged, n_iter=n_iter)


def resolve_kernel(degree, coef0, scale, n_features) -> KernelParams:
    """``scale='auto'`` means ``1 / n_features``."""
    if isinstance(scale, str):
        if scale != "auto":
            raise ValueError(f"scale must be a number or 'auto', got {scale!r}")
        scale = 1.0 / n_features
    return KernelParams(int(degree), float(coef0), float(scale))


class BinarySVC(ClassifierMixin, BaseEstimator):
    """Two-class polynomial-kernel SVM trained with SMO.

    ``classes_[0]`` is the positive side (decision > 0).
    """

    def __init__(self, C=10_000.0, degree=4, coef0=1.0, scale=1.0, tol=1e-3,
                 max_passes=200, random_state=0, cache_bytes=256 << 20):
        self.C = C
        self.degree = degree
        self.coef0 = coef0
        self.scale = scale
        self.tol = tol
        self.max_passes = max_passes
        self.random_state = random_state
        self.cache_bytes = cache_bytes

    def fit(self, X, y, classes=None):
        X = check_features(X)
        y = check_labels(y, len(X))
        if classes is None:
            classes = sorted(set(y))
        if len(classes) != 2:
            raise ValueError(f"BinarySVC needs exactly 2 classes, got {list(classes)}")
        self.classes_ = np.asarray(classes, dtype=object)
        signs = np.where(y == self.classes_[0], 1.0, -1.0)
        kernel = resolve_kernel(self.degree, self.coef0, self.scale, X.shape[1])
        self.model_ = smo_train(X, signs, self.C, kernel, self.tol, self.max_passes,
                                self.random_state, self.cache_bytes)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision(check_features(X, self.n_features_in_))

    def predict(self, X):
        return self.classes_[np.where(self.decision_function(X) >= 0, 0, 1)]


class OneVsOneSVC(ClassifierMixin, BaseEstimator):
    """k-class SVM (2 <= k <= 4) by one-vs-one voting.

    Class order, fixed at fit time, is the tie-break priority: among classes
    with equal wins the first listed is chosen.
    """

    max_classes = 4

    def __init__(self, C=10_000.0, degree=4, coef0=1.0, scale=1.0, tol=1e-3,
                 max_passes=200, random_state=0, cache_bytes=256 << 20):
        self.C = C
        self.degree = degree
        self.coef0 = coef0
        self.scale = scale
        self.tol = tol
        self.max_passes = max_passes
        self.random_state = random_state
        self.cache_bytes = cache_bytes

    def _binary(self, seed):
        params = self.get_params()
        params["random_state"] = seed
        return BinarySVC(**params)

    def pair_problems(self, X, y, classes=None):
        """Validate and yield ``(pair, estimator, X_pair, y_pair)`` without fitting."""
        X = check_features(X)
        y = check_labels(y, len(X))
        if classes is None:
            classes = sorted(set(y))
        classes = list(classes)
        if not 2 <= len(classes) <= self.max_classes:
            raise ValueError(f"node classifiers take 2-{self.max_classes} classes, "
                             f"got {len(classes)}")
        present = set(y)
        for c in classes:
            if c not in present:
                raise ValueError(f"class {c!r} has no training samples")
        self.classes_ = np.asarray(classes, dtype=object)
        self.n_features_in_ = X.shape[1]
        self.pairs_ = list(combinations(range(len(classes)), 2))
        for k, (a, b) in enumerate(self.pairs_):
            mask = (y == classes[a]) | (y == classes[b])
            est = self._binary(np.random.SeedSequence([int(self.random_state), k]).generate_state(1)[0])
            yield (a, b), est, X[mask], y[mask]

    def fit(self, X, y, classes=None):
        self.estimators_ = []
        for (a, b), est, Xp, yp in self.pair_problems(X, y, classes):
            self.estimators_.append(est.fit(Xp, yp, classes=[self.classes_[a], self.classes_[b]]))
        return self

    def set_estimators(self, estimators):
        self.estimators_ = list(estimators)
        return self

    def votes(self, X):
        check_is_fitted(self, "estimators_")
        X = check_features(X, self.n_features_in_)
        wins = np.zeros((len(X), len(self.classes_)), dtype=np.int64)
        for (a, b), est in zip(self.pairs_, self.estimators_):
            first = est.decision_function(X) >= 0
            wins[first, a] += 1
            wins[~first, b] += 1
        return wins

    def predict(self, X):
        # argmax returns the first maximum, i.e. the earliest listed class
        return self.classes_[self.votes(X).argmax(axis=1)]


def node_train(X, labels, classes=None, C=10_000.0, p: KernelParams = KernelParams(),
               **kwargs) -> OneVsOneSVC:
    return OneVsOneSVC(C=C, degree=p.degree, coef0=p.coef0, scale=p.scale,
                       **kwargs).fit(X, labels, classes)


def node_predict(model: OneVsOneSVC, x):
    return model.predict(np.asarray(x, dtype=np.float64)[None, :])[0]
