"""Pipeline configuration (TOML) with strict key checking.

Relative paths are resolved against the config file's directory. Unknown
sections or keys and out-of-range values raise :class:`ConfigError` before
any computation starts.
"""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .spectro import SpectroConfig


@dataclass
class PathsConfig:
    corpus: str = "corpus"
    workdir: str = "work"
    model: str = "model.htsv"          # relative to workdir unless absolute
    taxonomy: str | None = None        # None -> shipped english39.cfg
    fold_table: str | None = None      # None -> shipped 61->39 table


@dataclass
class CorpusConfig:
    include_sa: bool = False


@dataclass
class CnnConfig:
    num_maps: int = 38
    mask_rows: int = 29
    mask_cols: int = 1
    pool_rows: int = 5
    pool_cols: int = 5
    learning_rate: float = 0.05
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0


@dataclass
class SvmConfig:
    C: float = 10_000.0
    degree: int = 4
    coef0: float = 1.0
    scale: float | str = "auto"
    tol: float = 1e-3
    max_passes: int = 200
    n_ensemble: int = 5
    cache_mb: int = 256
    seed: int = 0


@dataclass
class SmoteSection:
    k_neighbors: int = 5
    seed: int = 0


@dataclass
class MlpConfig:
    enabled: bool = False
    hidden_units: int = 100
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0


@dataclass
class EvalConfig:
    include_silence: bool = False
    top_n: int = 10


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    spectro: SpectroConfig = field(default_factory=SpectroConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    smote: SmoteSection = field(default_factory=SmoteSection)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    workers: int = 0                   # 0 -> all available cores
    base_dir: str = "."

    # -- derived paths
    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def corpus_dir(self) -> Path:
        return self.path(self.paths.corpus)

    @property
    def workdir(self) -> Path:
        return self.path(self.paths.workdir)

    @property
    def model_path(self) -> Path:
        p = Path(self.paths.model)
        return p if p.is_absolute() else self.workdir / p

    @property
    def n_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        """JSON-able snapshot of the compute-relevant settings (no paths)."""
        d = dataclasses.asdict(self)
        for key in ("paths", "base_dir", "workers"):
            d.pop(key)
        return d

    def validate(self, check_files=True) -> "PipelineConfig":
        c, s, m = self.cnn, self.svm, self.mlp
        checks = [
            (c.num_maps >= 1, "cnn.num_maps must be >= 1"),
            (c.mask_rows >= 1 and c.mask_cols >= 1, "cnn mask size must be >= 1"),
            (c.pool_rows >= 1 and c.pool_cols >= 1, "cnn pool size must be >= 1"),
            (c.learning_rate >= 0, "cnn.learning_rate must be >= 0"),
            (c.epochs >= 1, "cnn.epochs must be >= 1"),
            (c.batch_size >= 1, "cnn.batch_size must be >= 1"),
            (self.spectro.image_rows >= c.mask_rows and self.spectro.image_cols >= c.mask_cols,
             "cnn mask larger than the spectrogram image"),
            (s.C > 0, "svm.C must be > 0"),
            (s.degree >= 1, "svm.degree must be >= 1"),
            (s.scale == "auto" or (not isinstance(s.scale, str) and s.scale > 0),
             "svm.scale must be 'auto' or a positive number"),
            (s.tol > 0, "svm.tol must be > 0"),
            (s.max_passes >= 1, "svm.max_passes must be >= 1"),
            (s.n_ensemble >= 1, "svm.n_ensemble must be >= 1"),
            (s.cache_mb >= 1, "svm.cache_mb must be >= 1"),
            (self.smote.k_neighbors >= 1, "smote.k_neighbors must be >= 1"),
            (m.hidden_units >= 1, "mlp.hidden_units must be >= 1"),
            (m.learning_rate >= 0 and m.epochs >= 1 and m.batch_size >= 1,
             "mlp training settings out of range"),
            (self.eval.top_n >= 0, "eval.top_n must be >= 0"),
            (self.workers >= 0, "workers must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if check_files:
            for label, value in (("paths.taxonomy", self.paths.taxonomy),
                                 ("paths.fold_table", self.paths.fold_table)):
                if value is not None and not self.path(value).is_file():
                    raise ConfigError(f"{label}: file not found: {self.path(value)}")
        return self


_SECTIONS = {
    "paths": PathsConfig, "corpus": CorpusConfig, "spectro": SpectroConfig,
    "cnn": CnnConfig, "svm": SvmConfig, "smote": SmoteSection, "mlp": MlpConfig,
    "eval": EvalConfig,
}
_TOP_LEVEL = {"workers"}


def _coerce(cls, name, value):
    fld = {f.name: f for f in dataclasses.fields(cls)}[name]
    default = fld.default if fld.default is not dataclasses.MISSING else None
    is_num = isinstance(value, (int, float)) and not isinstance(value, bool)
    if cls is SvmConfig and name == "scale":
        if value == "auto" or is_num:
            return value
        raise ConfigError(f"{name}: expected 'auto' or a number, got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if not is_num or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if not is_num:
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        value = float(value)
    elif value is not None and not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def build_config(data: dict, base_dir=".", check_files=True) -> PipelineConfig:
    kwargs = {}
    for key, value in data.items():
        if key in _TOP_LEVEL:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{key}: expected an integer")
            kwargs[key] = value
            continue
        cls = _SECTIONS.get(key)
        if cls is None:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(value) - known)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(unknown)}")
        try:
            kwargs[key] = cls(**{k: _coerce(cls, k, v) for k, v in value.items()})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[{key}]: {exc}") from exc
    cfg = PipelineConfig(**kwargs, base_dir=str(base_dir))
    return cfg.validate(check_files)


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value`` with the value parsed as a TOML scalar."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip().split("."), value


def load_config(path=None, overrides=(), check_files=True) -> PipelineConfig:
    data: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = path.parent
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    return build_config(data, base, check_files)
