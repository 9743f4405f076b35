"""Frame planning and log-spectrogram frame images.

Each 25 ms analysis frame (10 ms hop) is cut into short Hann-weighted
sub-windows whose FFT magnitudes form the columns of a small image: with the
defaults, five 80-sample columns and a 256-point FFT give a native
128 (frequency) x 5 (time) image.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import FOLDED_PHONES, PHONE_INDEX, Utterance, label_frames
from .errors import DataError


@dataclass(frozen=True)
class SpectroConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    sub_window_samples: int = 80
    sub_hop_samples: int = 80
    fft_size: int = 256
    image_rows: int = 128
    image_cols: int = 5
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("window_ms and hop_ms must be positive")
        if self.sub_window_samples < 2 or self.sub_hop_samples < 1:
            raise ValueError("sub_window_samples must be >= 2 and sub_hop_samples >= 1")
        if not _is_pow2(self.fft_size):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.fft_size < self.sub_window_samples:
            raise ValueError("fft_size must be >= sub_window_samples")
        if self.image_rows < 1 or self.image_cols < 1:
            raise ValueError("image dimensions must be positive")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def window_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.window_ms * sample_rate_hz / 1000.0))

    def hop_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.hop_ms * sample_rate_hz / 1000.0))


@dataclass(frozen=True)
class FramePlan:
    frame_starts: np.ndarray
    window_samples: int
    last_frame_extent: int

    @property
    def n_frames(self) -> int:
        return len(self.frame_starts)

    def extent(self, i: int) -> int:
        return self.last_frame_extent if i == self.n_frames - 1 else self.window_samples


@dataclass
class FrameImage:
    pixels: np.ndarray
    label: str | None = None


def _is_pow2(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


def plan_frames(num_samples: int, cfg: SpectroConfig,
                sample_rate_hz: int) -> FramePlan:
    """Lay out frames at a constant hop; tail samples widen the last frame."""
    window = cfg.window_samples(sample_rate_hz)
    hop = cfg.hop_samples(sample_rate_hz)
    if num_samples < window:
        raise DataError(
            f"utterance of {num_samples} samples is shorter than one "
            f"{window}-sample window")
    n = (num_samples - window) // hop + 1
    starts = np.arange(n, dtype=np.int64) * hop
    return FramePlan(starts, window, int(num_samples - starts[-1]))


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, zero at both endpoints."""
    if n < 2:
        raise ValueError(f"Hann window needs n >= 2, got {n}")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))


def fft_magnitude(samples, fft_size: int) -> np.ndarray:
    """Magnitudes of the first ``fft_size // 2`` DFT bins (zero-padded input).

    Works on the last axis, so a stack of windows may be passed at once.
    """
    if not _is_pow2(fft_size):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[-1] > fft_size:
        raise ValueError(f"{x.shape[-1]} samples exceed fft_size {fft_size}")
    return np.abs(np.fft.rfft(x, n=fft_size, axis=-1))[..., : fft_size // 2]


def resize_bilinear(image, rows: int, cols: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling."""
    if rows < 1 or cols < 1:
        raise ValueError(f"target size must be >= 1, got {rows}x{cols}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ValueError(f"expected a non-empty matrix, got shape {img.shape}")
    if img.shape == (rows, cols):
        return img.copy()

    def coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(rows, img.shape[0])
    c0, c1, fc = coords(cols, img.shape[1])
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bottom * fr[:, None]


def _column_starts(n_samples: int, cfg: SpectroConfig) -> np.ndarray:
    if n_samples < cfg.sub_window_samples:
        raise DataError(
            f"frame of {n_samples} samples is shorter than one "
            f"{cfg.sub_window_samples}-sample sub-window")
    n_cols = (n_samples - cfg.sub_window_samples) // cfg.sub_hop_samples + 1
    return np.arange(n_cols) * cfg.sub_hop_samples


def _log_columns(windows: np.ndarray, cfg: SpectroConfig) -> np.ndarray:
    # windows: (..., n_cols, sub_window) -> (..., fft/2, n_cols)
    mag = fft_magnitude(windows * hann_window(cfg.sub_window_samples), cfg.fft_size)
    return np.swapaxes(np.log(mag + cfg.log_floor), -1, -2)


def _fit_shape(raw: np.ndarray, cfg: SpectroConfig) -> np.ndarray:
    if raw.shape == (cfg.image_rows, cfg.image_cols):
        return raw
    return resize_bilinear(raw, cfg.image_rows, cfg.image_cols)


def frame_to_image(samples, cfg: SpectroConfig = SpectroConfig()) -> FrameImage:
    """Un-normalized log-magnitude image of one frame (rows low -> high frequency)."""
    x = np.asarray(samples, dtype=np.float64)
    starts = _column_starts(len(x), cfg)
    windows = x[starts[:, None] + np.arange(cfg.sub_window_samples)]
    return FrameImage(_fit_shape(_log_columns(windows, cfg), cfg))


def normalize_images(images: np.ndarray) -> np.ndarray:
    """Min-max scale a stack of images to [0, 1] (a constant stack maps to 0)."""
    lo, hi = images.min(), images.max()
    if hi <= lo:
        return np.zeros_like(images)
    return (images - lo) / (hi - lo)


def utterance_images(samples, sample_rate_hz: int,
                     cfg: SpectroConfig = SpectroConfig()
                     ) -> tuple[np.ndarray, FramePlan]:
    """Normalized ``(n_frames, rows, cols)`` image stack for one waveform."""
    x = np.asarray(samples, dtype=np.float64)
    plan = plan_frames(len(x), cfg, sample_rate_hz)
    n = plan.n_frames
    images = np.empty((n, cfg.image_rows, cfg.image_cols))
    # all frames but the last share the nominal extent and a fixed column grid
    col_starts = _column_starts(plan.window_samples, cfg)
    if n > 1:
        idx = (plan.frame_starts[:-1, None, None] + col_starts[None, :, None]
               + np.arange(cfg.sub_window_samples)[None, None, :])
        raw = _log_columns(x[idx], cfg)
        if raw.shape[1:] == (cfg.image_rows, cfg.image_cols):
            images[:-1] = raw
        else:
            for i in range(n - 1):
                images[i] = _fit_shape(raw[i], cfg)
    last = int(plan.frame_starts[-1])
    images[-1] = frame_to_image(x[last:last + plan.last_frame_extent], cfg).pixels
    return normalize_images(images), plan


def extract_frame_images(utt: Utterance,
                         cfg: SpectroConfig = SpectroConfig()) -> list[FrameImage]:
    """One normalized, labeled image per planned frame of ``utt``."""
    images, plan = utterance_images(utt.samples, utt.sample_rate_hz, cfg)
    labels = label_frames(utt.segments, plan) if utt.segments else [None] * plan.n_frames
    return [FrameImage(img, lab) for img, lab in zip(images, labels)]


def stack_frames(frames: Sequence[FrameImage]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([f.pixels for f in frames]) if frames else np.empty((0, 0, 0))
    y = np.array([f.label for f in frames], dtype=object)
    return X, y


class SpectrogramImages(TransformerMixin, BaseEstimator):
    """Stateless transformer: list of utterances -> stacked frame images."""

    def __init__(self, config: SpectroConfig | None = None):
        self.config = config

    def fit(self, X=None, y=None):
        return self

    def transform(self, utterances):
        cfg = self.config or SpectroConfig()
        stacks = [utterance_images(u.samples, u.sample_rate_hz, cfg)[0]
                  for u in utterances]
        if not stacks:
            return np.empty((0, cfg.image_rows, cfg.image_cols))
        return np.concatenate(stacks)


# -- SPCF frame dumps --------------------------------------------------------

SPCF_MAGIC = b"SPCF"
SPCF_VERSION = 1
_SPCF_HEADER = struct.Struct("<4sIIII")


def write_spcf(path, images: np.ndarray, labels: Sequence[str | None]) -> None:
    """Write a frame dump: header, float32 pixels (row-major), int32 label indices.

    Label indices point into ``FOLDED_PHONES``; -1 marks an unlabeled frame.
    """
    images = np.asarray(images)
    n, rows, cols = images.shape
    if len(labels) != n:
        raise ValueError("one label per image required")
    idx = np.array([-1 if lab is None else PHONE_INDEX[lab] for lab in labels],
                   dtype="<i4")
    with open(path, "wb") as fh:
        fh.write(_SPCF_HEADER.pack(SPCF_MAGIC, SPCF_VERSION, rows, cols, n))
        fh.write(images.astype("<f4").tobytes(order="C"))
        fh.write(idx.tobytes())


def read_spcf(path) -> tuple[np.ndarray, list[str | None]]:
    data = Path(path).read_bytes()
    if len(data) < _SPCF_HEADER.size:
        raise DataError(f"{path}: truncated SPCF header")
    magic, version, rows, cols, n = _SPCF_HEADER.unpack_from(data)
    if magic != SPCF_MAGIC:
        raise DataError(f"{path}: not an SPCF file")
    if version != SPCF_VERSION:
        raise DataError(f"{path}: unsupported SPCF version {version}")
    n_pix = n * rows * cols
    expected = _SPCF_HEADER.size + 4 * n_pix + 4 * n
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(data)}")
    off = _SPCF_HEADER.size
    images = np.frombuffer(data, "<f4", n_pix, off).reshape(n, rows, cols)
    idx = np.frombuffer(data, "<i4", n, off + 4 * n_pix)
    labels = [None if i < 0 else FOLDED_PHONES[i] for i in idx]
    return images.astype(np.float64), labels
