"""Shallow convolutional feature extractor.

One valid convolution layer (ReLU), one non-overlapping max-pool layer and a
softmax head used only to train the kernels. After fitting, ``transform``
returns the flattened pooled activations, which are the features handed to
the SVM tree.
"""
from __future__ import annotations

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_labels, encode_labels

logger = logging.getLogger(__name__)


def conv_forward(images, kernels, bias, return_pre=False):
    """Valid cross-correlation of each image with every kernel, plus bias, ReLU.

    Parameters
    ----------
    images : ndarray, shape (n, rows, cols)
    kernels : ndarray, shape (n_maps, mask_rows, mask_cols)
    bias : ndarray, shape (n_maps,)

    Returns
    -------
    maps : ndarray, shape (n, n_maps, rows - mask_rows + 1, cols - mask_cols + 1)
    """
    images = np.asarray(images, dtype=np.float64)
    n_maps, kh, kw = kernels.shape
    if images.ndim != 3 or images.shape[1] < kh or images.shape[2] < kw:
        raise ValueError(
            f"images of shape {images.shape[1:]} cannot host {kh}x{kw} masks")
    windows = sliding_window_view(images, (kh, kw), axis=(1, 2))
    n, ho, wo = windows.shape[:3]
    cols = windows.reshape(n * ho * wo, kh * kw)
    pre = (cols @ kernels.reshape(n_maps, kh * kw).T + bias)
    pre = pre.reshape(n, ho, wo, n_maps).transpose(0, 3, 1, 2)
    maps = np.maximum(pre, 0.0)
    if return_pre:
        return maps, pre, cols
    return maps


def pooled_shape(rows: int, cols: int, pool_rows: int, pool_cols: int):
    return -(-rows // pool_rows), -(-cols // pool_cols)


def max_pool(maps, pool_rows: int, pool_cols: int):
    """Non-overlapping max pooling over the last two axes.

    Ragged edges are padded with -inf. Returns the pooled maps and, for every
    block, the flat in-block index of its (first) maximum.
    """
    maps = np.asarray(maps, dtype=np.float64)
    *lead, h, w = maps.shape
    hp, wp = pooled_shape(h, w, pool_rows, pool_cols)
    if (hp * pool_rows, wp * pool_cols) != (h, w):
        pad = [(0, 0)] * len(lead) + [(0, hp * pool_rows - h), (0, wp * pool_cols - w)]
        maps = np.pad(maps, pad, constant_values=-np.inf)
    blocks = maps.reshape(*lead, hp, pool_rows, wp, pool_cols)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, hp, wp, pool_rows * pool_cols)
    argmax = blocks.argmax(axis=-1)
    pooled = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return pooled, argmax


def _unpool(grad, argmax, pool_rows, pool_cols, h, w):
    *lead, hp, wp = grad.shape
    blocks = np.zeros((*lead, hp, wp, pool_rows * pool_cols))
    np.put_along_axis(blocks, argmax[..., None], grad[..., None], axis=-1)
    blocks = blocks.reshape(*lead, hp, wp, pool_rows, pool_cols)
    full = np.moveaxis(blocks, -2, -3).reshape(*lead, hp * pool_rows, wp * pool_cols)
    return full[..., :h, :w]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ShallowCNN(ClassifierMixin, TransformerMixin, BaseEstimator):
    """One convolution + max-pool layer trained through a softmax head.

    Parameters
    ----------
    num_maps : int
        Number of convolution kernels (feature maps).
    mask_rows, mask_cols : int
        Kernel size. Rows run along frequency.
    pool_rows, pool_cols : int
        Non-overlapping max-pool block size.
    learning_rate : float
        Fixed SGD step size.
    epochs, batch_size : int
        Mini-batch SGD schedule.
    random_state : int
        Seed for initialization and batch shuffling.

    Attributes
    ----------
    classes_ : ndarray of str
    kernels_ : ndarray, shape (num_maps, mask_rows, mask_cols)
    conv_bias_ : ndarray, shape (num_maps,)
    head_weights_ : ndarray, shape (feature_dim_, n_classes)
    head_bias_ : ndarray, shape (n_classes,)
    feature_dim_ : int
    loss_curve_ : list of float
        Mean training cross-entropy per epoch.
    """

    def __init__(self, num_maps=38, mask_rows=29, mask_cols=1, pool_rows=5,
                 pool_cols=5, learning_rate=0.05, epochs=10, batch_size=32,
                 random_state=0):
        self.num_maps = num_maps
        self.mask_rows = mask_rows
        self.mask_cols = mask_cols
        self.pool_rows = pool_rows
        self.pool_cols = pool_cols
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def _check_config(self, image_shape):
        for name in ("num_maps", "mask_rows", "mask_cols", "pool_rows",
                     "pool_cols", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")
        rows, cols = image_shape
        conv_rows = rows - self.mask_rows + 1
        conv_cols = cols - self.mask_cols + 1
        if conv_rows < 1 or conv_cols < 1:
            raise ValueError(
                f"{self.mask_rows}x{self.mask_cols} mask does not fit "
                f"{rows}x{cols} images")
        hp, wp = pooled_shape(conv_rows, conv_cols, self.pool_rows, self.pool_cols)
        return (conv_rows, conv_cols), self.num_maps * hp * wp

    def initialize(self, image_shape, classes):
        """Draw initial weights (uniform, variance 1/fan_in); returns self."""
        _, feature_dim = self._check_config(image_shape)
        rng = np.random.default_rng(self.random_state)
        fan_in = self.mask_rows * self.mask_cols
        lim = np.sqrt(3.0 / fan_in)
        self.kernels_ = rng.uniform(-lim, lim,
                                    (self.num_maps, self.mask_rows, self.mask_cols))
        self.conv_bias_ = np.zeros(self.num_maps)
        lim = np.sqrt(3.0 / feature_dim)
        self.classes_ = np.asarray(classes, dtype=object)
        self.head_weights_ = rng.uniform(-lim, lim, (feature_dim, len(classes)))
        self.head_bias_ = np.zeros(len(classes))
        self.feature_dim_ = feature_dim
        self.image_shape_ = tuple(image_shape)
        self._rng = rng
        return self

    def _forward(self, X):
        maps, pre, cols = conv_forward(X, self.kernels_, self.conv_bias_, return_pre=True)
        pooled, argmax = max_pool(maps, self.pool_rows, self.pool_cols)
        feats = pooled.reshape(len(X), -1)
        probs = softmax(feats @ self.head_weights_ + self.head_bias_)
        return feats, probs, (pre, cols, pooled.shape, argmax)

    def loss_and_gradients(self, X, y_idx):
        """Mean cross-entropy on ``(X, y_idx)`` and its gradient per parameter."""
        X = np.asarray(X, dtype=np.float64)
        n = len(X)
        feats, probs, (pre, cols, pshape, argmax) = self._forward(X)
        loss = -np.mean(np.log(probs[np.arange(n), y_idx] + 1e-300))
        dlogits = probs.copy()
        dlogits[np.arange(n), y_idx] -= 1.0
        dlogits /= n
        g_head_w = feats.T @ dlogits
        g_head_b = dlogits.sum(axis=0)
        dpooled = (dlogits @ self.head_weights_.T).reshape(pshape)
        dmaps = _unpool(dpooled, argmax, self.pool_rows, self.pool_cols,
                        pre.shape[2], pre.shape[3])
        dpre = dmaps * (pre > 0)
        dpre2 = dpre.transpose(0, 2, 3, 1).reshape(-1, self.num_maps)
        g_kernels = (dpre2.T @ cols).reshape(self.kernels_.shape)
        g_bias = dpre2.sum(axis=0)
        grads = {"kernels_": g_kernels, "conv_bias_": g_bias,
                 "head_weights_": g_head_w, "head_bias_": g_head_b}
        return loss, grads

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, len(X))
        classes, y_idx = encode_labels(y)
        self.initialize(X.shape[1:], classes)
        rng = self._rng
        n = len(X)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for s in range(0, n, self.batch_size):
                batch = order[s:s + self.batch_size]
                loss, grads = self.loss_and_gradients(X[batch], y_idx[batch])
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"CNN training diverged at epoch {epoch + 1} "
                        f"(learning_rate={self.learning_rate} too large?)")
                total += loss * len(batch)
                if self.learning_rate:
                    for name, g in grads.items():
                        setattr(self, name, getattr(self, name) - self.learning_rate * g)
                    if not all(np.all(np.isfinite(getattr(self, k))) for k in grads):
                        raise FloatingPointError(
                            f"CNN weights became non-finite at epoch {epoch + 1} "
                            f"(learning_rate={self.learning_rate} too large?)")
            self.loss_curve_.append(float(total / n))
            logger.debug("cnn epoch %d loss %.5f", epoch + 1, self.loss_curve_[-1])
        del self._rng
        return self

    def _batched(self, X, fn, batch=512):
        check_is_fitted(self, "kernels_")
        X = check_images(X)
        if X.shape[1:] != self.image_shape_:
            raise ValueError(
                f"image shape {X.shape[1:]} does not match the model's {self.image_shape_}")
        if len(X) == 0:
            return None
        return np.concatenate([fn(X[s:s + batch]) for s in range(0, len(X), batch)])

    def forward(self, X):
        """Return ``(features, class_scores)`` for a stack of images."""
        X = check_images(X)
        feats, probs, _ = self._forward(X)
        return feats, probs

    def transform(self, X):
        """Pooled ReLU activations, shape (n, feature_dim_). The head is not applied."""
        out = self._batched(X, lambda b: self._forward(b)[0])
        return np.empty((0, self.feature_dim_)) if out is None else out

    def predict_proba(self, X):
        out = self._batched(X, lambda b: self._forward(b)[1])
        return np.empty((0, len(self.classes_))) if out is None else out

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


def cnn_train(images, labels, **params) -> ShallowCNN:
    return ShallowCNN(**params).fit(images, labels)


def extract_features(images, model: ShallowCNN) -> np.ndarray:
    return model.transform(images)
