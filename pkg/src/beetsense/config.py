"""Declarative run configuration: a single JSON file drives every subcommand.

Every key has a default; unknown keys are rejected so typos fail loudly.
CLI flags override their config keys after loading.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigInvalid
from .preprocess import VARIANTS
from .temporal_encoding import ENCODING_MODES

METHODS = ("raw", "histogram", "ae2d", "ae3d")
MAPPING_STRATEGIES = ("best_f1", "low_ndvi")


@dataclass
class RunConfig:
    variant: str = "B10"
    method: str = "ae3d"
    temporal_encodings: bool = True
    encoding_mode: str = "split"
    alpha: float = 0.5
    bins: int = 16
    latent_dim: int = 64
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-3
    train_fraction: float = 0.8
    restarts: int = 10
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    mapping_strategy: str = "best_f1"
    scenes_dir: str = ""
    labels_path: str = ""
    work_dir: str = ""

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigInvalid(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.method not in METHODS:
            raise ConfigInvalid(f"method must be one of {METHODS}, got {self.method!r}")
        if self.encoding_mode not in ENCODING_MODES:
            raise ConfigInvalid(
                f"encoding_mode must be one of {ENCODING_MODES}, got {self.encoding_mode!r}"
            )
        if self.method == "ae2d" and self.temporal_encodings:
            raise ConfigInvalid("method ae2d does not support temporal_encodings")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigInvalid(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.bins < 2:
            raise ConfigInvalid(f"bins must be >= 2, got {self.bins}")
        for name in ("latent_dim", "epochs", "batch_size", "restarts"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0.0:
            raise ConfigInvalid(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigInvalid(
                f"train_fraction must lie strictly inside (0, 1), got {self.train_fraction}"
            )
        if not self.seeds:
            raise ConfigInvalid("seeds must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigInvalid(f"seeds must be distinct, got {self.seeds}")
        if self.mapping_strategy not in MAPPING_STRATEGIES:
            raise ConfigInvalid(
                f"mapping_strategy must be one of {MAPPING_STRATEGIES}, "
                f"got {self.mapping_strategy!r}"
            )

    def snapshot(self) -> dict:
        """Serializable copy of the semantic knobs (paths excluded)."""
        doc = asdict(self)
        for key in ("scenes_dir", "labels_path", "work_dir"):
            doc.pop(key)
        return doc


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigInvalid("config must be a JSON object")
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {unknown}")
    cfg = RunConfig(**doc)
    _check_types(cfg)
    cfg.validate()
    return cfg


def _check_types(cfg: RunConfig) -> None:
    checks = {
        "variant": str, "method": str, "encoding_mode": str, "mapping_strategy": str,
        "scenes_dir": str, "labels_path": str, "work_dir": str,
        "temporal_encodings": bool,
        "bins": int, "latent_dim": int, "epochs": int, "batch_size": int, "restarts": int,
        "alpha": (int, float), "learning_rate": (int, float), "train_fraction": (int, float),
    }
    for name, kind in checks.items():
        value = getattr(cfg, name)
        if isinstance(value, bool) and kind is not bool:
            raise ConfigInvalid(f"config key {name!r} has wrong type: {value!r}")
        if not isinstance(value, kind):
            raise ConfigInvalid(f"config key {name!r} has wrong type: {value!r}")
    if not isinstance(cfg.seeds, list) or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in cfg.seeds
    ):
        raise ConfigInvalid(f"config key 'seeds' must be a list of integers, got {cfg.seeds!r}")


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
