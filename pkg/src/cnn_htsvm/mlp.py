"""Single-hidden-layer MLP baseline over CNN features."""
from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_labels, encode_labels
from .cnn import softmax

logger = logging.getLogger(__name__)


class MLPBaseline(ClassifierMixin, BaseEstimator):
    """ReLU hidden layer + softmax output, trained by mini-batch SGD on cross-entropy.

    Inputs are standardized with training-set statistics when ``standardize``
    is set. Ties in ``predict`` go to the lowest class index.
    """

    def __init__(self, hidden_units=100, learning_rate=0.01, epochs=20,
                 batch_size=64, standardize=True, random_state=0):
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.standardize = standardize
        self.random_state = random_state

    def initialize(self, n_features, classes):
        rng = np.random.default_rng(self.random_state)
        lim = np.sqrt(3.0 / n_features)
        self.hidden_weights_ = rng.uniform(-lim, lim, (n_features, self.hidden_units))
        self.hidden_bias_ = np.zeros(self.hidden_units)
        lim = np.sqrt(3.0 / self.hidden_units)
        self.output_weights_ = rng.uniform(-lim, lim, (self.hidden_units, len(classes)))
        self.output_bias_ = np.zeros(len(classes))
        self.classes_ = np.asarray(classes, dtype=object)
        self.n_features_in_ = n_features
        self.mean_ = np.zeros(n_features)
        self.scale_ = np.ones(n_features)
        self._rng = rng
        return self

    def _scores(self, Z):
        h_pre = Z @ self.hidden_weights_ + self.hidden_bias_
        h = np.maximum(h_pre, 0.0)
        return softmax(h @ self.output_weights_ + self.output_bias_), h, h_pre

    def loss_and_gradients(self, Z, y_idx):
        """Mean cross-entropy on already-standardized inputs, plus gradients."""
        Z = np.asarray(Z, dtype=np.float64)
        n = len(Z)
        probs, h, h_pre = self._scores(Z)
        loss = -np.mean(np.log(probs[np.arange(n), y_idx] + 1e-300))
        d_out = probs.copy()
        d_out[np.arange(n), y_idx] -= 1.0
        d_out /= n
        d_h = (d_out @ self.output_weights_.T) * (h_pre > 0)
        return loss, {
            "hidden_weights_": Z.T @ d_h,
            "hidden_bias_": d_h.sum(axis=0),
            "output_weights_": h.T @ d_out,
            "output_bias_": d_out.sum(axis=0),
        }

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, len(X))
        classes, y_idx = encode_labels(y)
        self.initialize(X.shape[1], classes)
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            std = X.std(axis=0)
            self.scale_ = np.where(std > 0, std, 1.0)
        Z = (X - self.mean_) / self.scale_
        rng = self._rng
        n = len(Z)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for s in range(0, n, self.batch_size):
                batch = order[s:s + self.batch_size]
                loss, grads = self.loss_and_gradients(Z[batch], y_idx[batch])
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"MLP training diverged at epoch {epoch + 1} "
                        f"(learning_rate={self.learning_rate} too large?)")
                total += loss * len(batch)
                if self.learning_rate:
                    for name, g in grads.items():
                        setattr(self, name, getattr(self, name) - self.learning_rate * g)
                    if not all(np.all(np.isfinite(getattr(self, k))) for k in grads):
                        raise FloatingPointError(
                            f"MLP weights became non-finite at epoch {epoch + 1} "
                            f"(learning_rate={self.learning_rate} too large?)")
            self.loss_curve_.append(float(total / n))
        del self._rng
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "hidden_weights_")
        X = check_features(X, self.n_features_in_)
        return self._scores((X - self.mean_) / self.scale_)[0]

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


def mlp_train(features, labels, epochs=20, lr=0.01, seed=0, **params) -> MLPBaseline:
    return MLPBaseline(epochs=epochs, learning_rate=lr, random_state=seed,
                       **params).fit(features, labels)


def mlp_predict(model: MLPBaseline, feature):
    return model.predict(np.asarray(feature, dtype=np.float64)[None, :])[0]
