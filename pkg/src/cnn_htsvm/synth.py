"""Synthetic TIMIT-layout corpus for desk-scale end-to-end runs.

Eight "phones" are rendered as distinct tone stacks (sonorants) or
band-limited noise (obstruents) between stretches of near-silence, with
exact sample-level ``.PHN`` labels. The tree below them is written next to
the corpus as ``taxonomy.cfg``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import EXPECTED_SAMPLE_RATE, write_wav

RATE = EXPECTED_SAMPLE_RATE
UTTERANCE_SAMPLES = RATE  # 1 s
UTTS_PER_SPEAKER = 10

# label -> (kind, spec); tone stacks in Hz, noise bands as (lo, hi) Hz
PHONES = {
    "aa": ("tone", (900.0, 1500.0)),
    "iy": ("tone", (300.0, 2800.0)),
    "m": ("tone", (220.0,)),
    "l": ("tone", (500.0, 3800.0)),
    "s": ("noise", (5500.0, 7600.0)),
    "sh": ("noise", (2200.0, 3800.0)),
    "f": ("noise", (1000.0, 7800.0)),
    "z": ("noise+voice", (4200.0, 6500.0)),
}

TAXONOMY = """\
# Taxonomy for the synthetic eight-phone corpus.
alphabet: sil aa iy m l s sh f z
root: sil obstruent sonorant
obstruent: sibilant f
sibilant: s sh z
sonorant: vowel consonantal
vowel: aa iy
consonantal: m l
"""


def _band_noise(n, lo, hi, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / RATE)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def _tones(n, freqs, rng):
    t = np.arange(n) / RATE
    x = np.zeros(n)
    for f in freqs:
        f *= rng.uniform(0.97, 1.03)
        x += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return x / np.sqrt(len(freqs) / 2.0)


def render_phone(label: str, n: int, rng) -> np.ndarray:
    kind, spec = PHONES[label]
    if kind == "tone":
        return rng.uniform(0.15, 0.45) * _tones(n, spec, rng)
    x = rng.uniform(0.08, 0.25) * _band_noise(n, *spec, rng)
    if kind == "noise+voice":
        x += rng.uniform(0.05, 0.12) * _tones(n, (180.0,), rng)
    return x


def synth_utterance(rng) -> tuple[np.ndarray, list[tuple[int, int, str]]]:
    """One 1-second utterance and its TIMIT-style segments."""
    ms = RATE // 1000
    segs = []
    pos = int(rng.integers(50, 151)) * ms
    segs.append((0, pos, "h#"))
    labels = list(PHONES)
    prev = None
    while True:
        dur = int(rng.integers(80, 301)) * ms
        gap = int(rng.integers(30, 81)) * ms if rng.random() < 0.15 else 0
        if pos + gap + dur > UTTERANCE_SAMPLES - 50 * ms:
            break
        if gap:
            segs.append((pos, pos + gap, "pau"))
            pos += gap
        label = labels[int(rng.integers(len(labels)))]
        while label == prev:
            label = labels[int(rng.integers(len(labels)))]
        segs.append((pos, pos + dur, label))
        pos += dur
        prev = label
    segs.append((pos, UTTERANCE_SAMPLES, "h#"))
    audio = 0.002 * rng.standard_normal(UTTERANCE_SAMPLES)
    for start, end, label in segs:
        if label in PHONES:
            audio[start:end] += render_phone(label, end - start, rng)
    return np.clip(audio, -1.0, 32767 / 32768), segs


def generate_synthetic_corpus(n_utts: int, seed: int, out_dir, split: str = "train") -> list[str]:
    """Write ``n_utts`` utterances under ``out_dir/<SPLIT>/DR1/<speaker>/``.

    Returns the utterance ids. Also writes ``out_dir/taxonomy.cfg``.
    """
    if n_utts < 0:
        raise ValueError("n_utts must be non-negative")
    out = Path(out_dir)
    split_dir = out / split.upper() / "DR1"
    split_dir.mkdir(parents=True, exist_ok=True)
    (out / "taxonomy.cfg").write_text(TAXONOMY)
    split_key = {"train": 0, "test": 1}.get(split, 2)
    ids = []
    for k in range(n_utts):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), split_key, k]))
        audio, segs = synth_utterance(rng)
        spk = f"{'M' if split_key else 'F'}SYN{k // UTTS_PER_SPEAKER:04d}"
        stem = f"SX{k:04d}"
        d = split_dir / spk
        d.mkdir(exist_ok=True)
        write_wav(d / f"{stem}.WAV", audio, RATE)
        (d / f"{stem}.PHN").write_text("".join(f"{a} {b} {lab}\n" for a, b, lab in segs))
        ids.append(f"dr1/{spk.lower()}/{stem.lower()}")
    return ids
