"""Run configuration: a flat dataclass loadable from an INI file with one section per area."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


# section -> keys; every RunConfig field appears exactly once
SECTIONS = {
    "data": ("train_csv", "test_csv", "schema_path", "numeric_columns", "label_column", "subsample_rows"),
    "model": ("hidden", "d_e", "d_time", "T", "beta_start", "beta_end", "precision", "train_embeddings"),
    "training": ("epochs", "batch_size", "lr", "loss", "sampler", "alpha_start", "alpha_end",
                 "is_correction", "check_clipping"),
    "privacy": ("dp_enabled", "epsilon", "sigma", "delta", "clip_norm"),
    "run": ("seed", "output_dir"),
}

HELP = {
    "train_csv": "training CSV (header row, UTF-8)",
    "test_csv": "held-out real CSV used for utility and as the attack holdout",
    "schema_path": "schema sidecar JSON written by fit-schema",
    "numeric_columns": "comma-separated numeric columns (when no schema file is given)",
    "label_column": "conditioning / target column (when no schema file is given)",
    "subsample_rows": "use at most this many training rows (0 = all)",
    "hidden": "denoiser hidden width H",
    "d_e": "embedding width per feature",
    "d_time": "timestep embedding width",
    "T": "number of diffusion steps",
    "beta_start": "first beta of the linear schedule",
    "beta_end": "last beta of the linear schedule",
    "precision": "float32 or float64",
    "train_embeddings": "train the feature embeddings jointly with the denoiser (they shrink towards zero; off by default)",
    "epochs": "training epochs K",
    "batch_size": "(expected) mini-batch size",
    "lr": "Adam learning rate",
    "loss": "per-sample loss: mse (feature mean) or fa (feature sum)",
    "sampler": "timestep sampler: uniform or at (annealed power law)",
    "alpha_start": "power-law exponent at the first epoch",
    "alpha_end": "power-law exponent at the last epoch",
    "is_correction": "weight losses by u(t)/P_k(t)",
    "check_clipping": "materialise clipped per-sample gradients and verify their norms (slow)",
    "dp_enabled": "train with DP-SGD",
    "epsilon": "target epsilon (sigma is calibrated); mutually exclusive with sigma",
    "sigma": "explicit noise multiplier; mutually exclusive with epsilon",
    "delta": "target delta",
    "clip_norm": "per-sample clipping norm C",
    "seed": "master random seed",
    "output_dir": "directory for checkpoint, logs and reports",
}


@dataclass
class RunConfig:
    train_csv: str = ""
    test_csv: str = ""
    schema_path: str = ""
    numeric_columns: list[str] = field(default_factory=list)
    label_column: str = ""
    subsample_rows: int = 0
    hidden: int = 512
    d_e: int = 2
    d_time: int = 64
    T: int = 500
    beta_start: float = 1e-4
    beta_end: float = 0.02
    precision: str = "float32"
    train_embeddings: bool = False
    epochs: int = 1000
    batch_size: int = 128
    lr: float = 1e-3
    loss: str = "fa"
    sampler: str = "at"
    alpha_start: float = 3.0
    alpha_end: float = -1.0
    is_correction: bool = False
    check_clipping: bool = False
    dp_enabled: bool = True
    epsilon: float | None = 1.0
    sigma: float | None = None
    delta: float = 1e-5
    clip_norm: float = 1.0
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss not in ("mse", "fa"):
            raise ConfigError(f"loss must be mse or fa, got {self.loss!r}")
        if self.sampler not in ("uniform", "at"):
            raise ConfigError(f"sampler must be uniform or at, got {self.sampler!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.dp_enabled:
            if self.epsilon is not None and self.sigma is not None:
                raise ConfigError("epsilon and sigma are mutually exclusive")
            if self.epsilon is None and self.sigma is None:
                raise ConfigError("DP training needs epsilon or sigma")
            if self.epsilon is not None and not self.epsilon > 0:
                raise ConfigError("epsilon must be > 0")
            if self.sigma is not None and self.sigma < 0:
                raise ConfigError("sigma must be >= 0")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must be in (0, 1)")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> RunConfig:
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)


def _coerce(name: str, raw: str):
    default = getattr(RunConfig(), name) if name not in ("epsilon", "sigma") else 0.0
    raw = raw.strip()
    if name in ("epsilon", "sigma"):
        return None if raw.lower() in ("", "none") else float(raw)
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return [s.strip() for s in raw.split(",") if s.strip()]
    return raw


def parse_value(name: str, raw: str):
    try:
        return _coerce(name, raw)
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from None


def load_config(path: str | Path, **overrides) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = parse_value(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    d = cfg.to_dict()
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for k in keys:
            v = d[k]
            if isinstance(v, list):
                v = ",".join(v)
            elif v is None:
                v = "none"
            lines.append(f"# {HELP[k]}")
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
