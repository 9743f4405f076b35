"""TIMIT-layout corpus ingestion.

Reads ``split/dialect/speaker/sentence.{wav,phn}`` trees, folds the 61-symbol
TIMIT alphabet onto 39 phones plus ``sil`` and assigns a phone to every
analysis frame.
"""
from __future__ import annotations

import logging
import os
import warnings
import wave
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CorpusFormatError

logger = logging.getLogger(__name__)

SILENCE = "sil"

FOLDED_PHONES: tuple[str, ...] = tuple(sorted((
    "aa", "ae", "ah", "ao", "aw", "ay", "b", "ch", "d", "dh", "dx", "eh",
    "er", "ey", "f", "g", "hh", "ih", "iy", "jh", "k", "l", "m", "n", "ng",
    "ow", "oy", "p", "r", "s", "sh", "t", "th", "uh", "uw", "v", "w", "y",
    "z", SILENCE,
)))
PHONE_INDEX = {p: i for i, p in enumerate(FOLDED_PHONES)}

EXPECTED_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class PhoneSegment:
    start_sample: int
    end_sample: int
    label: str

    def __post_init__(self):
        if self.start_sample >= self.end_sample:
            raise ValueError(
                f"empty segment [{self.start_sample}, {self.end_sample}) "
                f"for {self.label!r}")


@dataclass(frozen=True)
class Utterance:
    id: str
    samples: np.ndarray
    sample_rate_hz: int
    segments: tuple[PhoneSegment, ...] = field(default=())

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.segments and self.segments[-1].end_sample > len(samples):
            raise CorpusFormatError(
                f"{self.id}: last segment ends at "
                f"{self.segments[-1].end_sample} beyond {len(samples)} samples")

    @property
    def num_samples(self) -> int:
        return len(self.samples)


def _strip_comment(line: str) -> str:
    # '#' starts a comment only at a token boundary, so "h#" stays a symbol
    tokens = []
    for tok in line.split():
        if tok.startswith("#"):
            break
        tokens.append(tok)
    return " ".join(tokens)


class FoldTable(Mapping):
    """Total mapping from a source alphabet onto folded phone symbols."""

    def __init__(self, mapping: Mapping[str, str]):
        self._mapping = dict(mapping)

    def __getitem__(self, key):
        return self._mapping[key]

    def __iter__(self):
        return iter(self._mapping)

    def __len__(self):
        return len(self._mapping)

    @property
    def targets(self) -> frozenset[str]:
        return frozenset(self._mapping.values())

    def fold(self, label: str) -> str:
        try:
            return self._mapping[label]
        except KeyError:
            raise CorpusFormatError(
                f"unknown phone symbol {label!r} (not in fold table)") from None

    @classmethod
    def from_text(cls, text: str) -> "FoldTable":
        mapping = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = _strip_comment(raw)
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise CorpusFormatError(
                    f"fold table line {lineno}: expected 'source folded', "
                    f"got {raw!r}")
            src, dst = parts
            if src in mapping and mapping[src] != dst:
                raise CorpusFormatError(
                    f"fold table line {lineno}: {src!r} mapped twice")
            mapping[src] = dst
        return cls(mapping)

    @classmethod
    def from_file(cls, path) -> "FoldTable":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def default(cls) -> "FoldTable":
        """The shipped 61 -> 40 table (39 phones + ``sil``)."""
        text = (resources.files(__package__) / "data" /
                "timit_61_to_39.map").read_text()
        table = cls.from_text(text)
        if table.targets != frozenset(FOLDED_PHONES):
            raise AssertionError("shipped fold table does not map onto 40 symbols")
        return table


def parse_phn(text: str) -> list[PhoneSegment]:
    """Parse a ``.PHN`` transcription (``start end label`` per line).

    Segments must be sorted, non-overlapping and contiguous.
    """
    segments: list[PhoneSegment] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CorpusFormatError(
                f"line {lineno}: expected 'start end label', got {raw!r}")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise CorpusFormatError(
                f"line {lineno}: non-integer sample index in {raw!r}") from None
        if start < 0 or end < 0:
            raise CorpusFormatError(f"line {lineno}: negative sample index")
        if start >= end:
            raise CorpusFormatError(
                f"line {lineno}: empty or reversed segment {start}..{end}")
        if segments:
            prev_end = segments[-1].end_sample
            if start < prev_end:
                raise CorpusFormatError(
                    f"line {lineno}: overlap with previous segment "
                    f"(starts at {start}, previous ends at {prev_end})")
            if start > prev_end:
                raise CorpusFormatError(
                    f"line {lineno}: gap after previous segment "
                    f"(starts at {start}, previous ends at {prev_end})")
        segments.append(PhoneSegment(start, end, parts[2]))
    return segments


def fold_phones(segments: Sequence[PhoneSegment],
                table: Mapping[str, str]) -> list[PhoneSegment]:
    """Replace labels by folded symbols and merge adjacent equal segments.

    Symbols that are already fold targets map to themselves, so folding is
    idempotent.
    """
    targets = set(table.values())
    out: list[PhoneSegment] = []
    for seg in segments:
        if seg.label in table:
            label = table[seg.label]
        elif seg.label in targets:
            label = seg.label
        else:
            raise CorpusFormatError(f"unknown phone symbol {seg.label!r}")
        if out and out[-1].label == label and out[-1].end_sample == seg.start_sample:
            out[-1] = PhoneSegment(out[-1].start_sample, seg.end_sample, label)
        else:
            out.append(PhoneSegment(seg.start_sample, seg.end_sample, label))
    return out


def label_frames(segments: Sequence[PhoneSegment], plan) -> list[str]:
    """Label each planned frame by the segment holding its center sample.

    The center is ``start + window_samples // 2``; the squeezed final frame
    uses the same nominal center.
    """
    starts = np.asarray(plan.frame_starts, dtype=np.int64)
    if len(starts) == 0:
        return []
    if not segments:
        raise CorpusFormatError("cannot label frames: no segments")
    centers = starts + plan.window_samples // 2
    seg_starts = np.array([s.start_sample for s in segments], dtype=np.int64)
    seg_ends = np.array([s.end_sample for s in segments], dtype=np.int64)
    idx = np.searchsorted(seg_ends, centers, side="right")
    labels = []
    for c, i in zip(centers, idx):
        if i >= len(segments) or not seg_starts[i] <= c < seg_ends[i]:
            raise CorpusFormatError(
                f"frame center {int(c)} lies outside all phone segments")
        labels.append(segments[i].label)
    return labels


# -- audio -------------------------------------------------------------------

def _read_sphere(raw: bytes, path) -> tuple[np.ndarray, int]:
    if len(raw) < 16:
        raise CorpusFormatError(f"{path}: truncated NIST header")
    try:
        header_size = int(raw[8:16].strip())
    except ValueError:
        raise CorpusFormatError(f"{path}: bad NIST header size") from None
    fields = {}
    for line in raw[16:header_size].decode("ascii", "replace").splitlines():
        line = line.strip()
        if not line or line == "end_head":
            if line == "end_head":
                break
            continue
        parts = line.split(None, 2)
        if len(parts) == 3:
            fields[parts[0]] = parts[2]
    width = int(fields.get("sample_n_bytes", "2"))
    channels = int(fields.get("channel_count", "1"))
    coding = fields.get("sample_coding", "pcm")
    if width != 2 or channels != 1 or not coding.startswith("pcm") or "shorten" in coding:
        raise CorpusFormatError(
            f"{path}: unsupported SPHERE sample format "
            f"(bytes={width}, channels={channels}, coding={coding})")
    order = fields.get("sample_byte_format", "01")
    dtype = "<i2" if order == "01" else ">i2"
    rate = int(fields.get("sample_rate", EXPECTED_SAMPLE_RATE))
    body = raw[header_size:]
    if len(body) % 2:
        body = body[:-1]
    pcm = np.frombuffer(body, dtype=dtype)
    return pcm.astype(np.float64) / 32768.0, rate


def read_audio(path) -> tuple[np.ndarray, int]:
    """Read 16-bit mono PCM from a RIFF WAV or NIST SPHERE file.

    Samples are scaled to [-1, 1) by division by 32768.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorpusFormatError(f"{path}: unreadable audio ({exc})") from exc
    if raw[:7] == b"NIST_1A":
        return _read_sphere(raw, path)
    if raw[:4] != b"RIFF":
        raise CorpusFormatError(f"{path}: not a RIFF WAV or NIST SPHERE file")
    try:
        with wave.open(str(path), "rb") as w:
            if w.getsampwidth() != 2 or w.getnchannels() != 1:
                raise CorpusFormatError(
                    f"{path}: unsupported sample format "
                    f"(width={w.getsampwidth()}, channels={w.getnchannels()})")
            rate = w.getframerate()
            frames = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise CorpusFormatError(f"{path}: unreadable audio ({exc})") from exc
    pcm = np.frombuffer(frames, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0, rate


def write_wav(path, samples: np.ndarray, sample_rate_hz: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate_hz)
        w.writeframes(pcm.astype("<i2").tobytes())


def load_utterance(wav_path, phn_path, utt_id: str,
                   table: Mapping[str, str] | None) -> Utterance:
    samples, rate = read_audio(wav_path)
    if rate != EXPECTED_SAMPLE_RATE:
        raise CorpusFormatError(
            f"{wav_path}: sample rate {rate} Hz, expected {EXPECTED_SAMPLE_RATE}")
    try:
        segments = parse_phn(Path(phn_path).read_text())
        if table is not None:
            segments = fold_phones(segments, table)
    except CorpusFormatError as exc:
        raise CorpusFormatError(f"{phn_path}: {exc}") from exc
    return Utterance(utt_id, samples, rate, tuple(segments))


def _find_child(parent: Path, name: str) -> Path | None:
    if not parent.is_dir():
        return None
    for child in sorted(parent.iterdir()):
        if child.name.lower() == name.lower():
            return child
    return None


def iter_corpus_files(root, split: str, include_sa: bool = False
                      ) -> Iterable[tuple[str, Path, Path]]:
    """Yield ``(utt_id, wav_path, phn_path)`` in sorted order."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    split_dir = _find_child(Path(root), split)
    if split_dir is None:
        return
    for dirpath, dirnames, filenames in os.walk(split_dir):
        dirnames.sort()
        for fname in sorted(filenames):
            stem, ext = os.path.splitext(fname)
            if ext.lower() != ".wav":
                continue
            if not include_sa and stem.lower().startswith("sa"):
                continue
            wav_path = Path(dirpath) / fname
            phn_path = None
            for cand in (stem + ".PHN", stem + ".phn", stem + ".Phn"):
                if (Path(dirpath) / cand).exists():
                    phn_path = Path(dirpath) / cand
                    break
            if phn_path is None:
                raise CorpusFormatError(f"{wav_path}: missing .PHN transcription")
            rel = Path(dirpath).relative_to(split_dir)
            utt_id = "/".join([*(p.lower() for p in rel.parts), stem.lower()])
            yield utt_id, wav_path, phn_path


def scan_corpus(root, split: str, include_sa: bool = False,
                table: Mapping[str, str] | None = None) -> list[Utterance]:
    """Load every utterance of one split, with folded phone segments.

    SA sentences are skipped unless ``include_sa``.
    """
    if table is None:
        table = FoldTable.default()
    utts = [load_utterance(w, p, uid, table)
            for uid, w, p in iter_corpus_files(root, split, include_sa)]
    if not utts:
        warnings.warn(f"no utterances found for split {split!r} under {root}",
                      stacklevel=2)
    logger.info("loaded %d %s utterances from %s", len(utts), split, root)
    return utts
