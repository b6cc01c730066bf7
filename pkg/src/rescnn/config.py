"""Run configuration: defaults, JSON loading, validation and overrides.

Precedence is CLI overrides > config file > defaults.  The data root falls
back to the ``RESCNN_DATA_ROOT`` environment variable.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional

import jsonschema

from .errors import ConfigError
from .model import ResCnnConfig

DATA_ROOT_ENV = "RESCNN_DATA_ROOT"

DEFAULT_CROP = {"bonn": 3800, "bern": 9800, "synthetic": 448}
DATASET_SHAPE = {"bonn": (1, 3), "bern": (2, 2), "synthetic": (1, 3)}
SEGMENT_LENGTH = {"bonn": 4097, "bern": 10240}


def _schema():
    return json.loads(resources.files("rescnn").joinpath("run_config.schema.json").read_text())


@dataclass
class ModelSettings:
    kernel_size: int = 9
    block_channels: list = field(default_factory=lambda: [8, 16])
    pool_window: int = 4
    dropout_rate: float = 0.5
    lrelu_alpha: float = 0.01
    fc_hidden: int = 200


@dataclass
class SyntheticSettings:
    length: int = 512
    n_train: int = 300
    n_val: int = 100
    n_test: int = 100


@dataclass
class RunConfig:
    dataset: str = "bonn"
    data_root: Optional[str] = None
    manifest: Optional[str] = None
    crop_len: Optional[int] = None
    batch_size: int = 20
    epochs: int = 60
    base_lr: float = 0.01
    milestones: list = field(default_factory=lambda: [10, 30, 50])
    lr_factor: float = 0.1
    seed: int = 0
    output_dir: str = "runs/latest"
    model: ModelSettings = field(default_factory=ModelSettings)
    synthetic: SyntheticSettings = field(default_factory=SyntheticSettings)

    def resolved_crop(self) -> int:
        return self.crop_len if self.crop_len is not None else DEFAULT_CROP[self.dataset]

    def model_config(self) -> ResCnnConfig:
        channels, classes = DATASET_SHAPE[self.dataset]
        return ResCnnConfig(
            input_length=self.resolved_crop(),
            input_channels=channels,
            n_classes=classes,
            **asdict(self.model),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop_len"] = self.resolved_crop()
        return d


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def build_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge defaults, a parsed config document and overrides, then validate."""
    doc = _merge(asdict(RunConfig()), file_values or {})
    doc = _merge(doc, {k: v for k, v in (overrides or {}).items() if v is not None})
    if doc.get("data_root") is None and os.environ.get(DATA_ROOT_ENV):
        doc["data_root"] = os.environ[DATA_ROOT_ENV]
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {exc.message}") from None

    cfg = RunConfig(
        **{k: v for k, v in doc.items() if k not in ("model", "synthetic")},
        model=ModelSettings(**doc["model"]),
        synthetic=SyntheticSettings(**doc["synthetic"]),
    )
    if cfg.dataset != "synthetic" and not cfg.data_root:
        raise ConfigError(f"dataset {cfg.dataset!r} needs data_root (or ${DATA_ROOT_ENV})")
    seg_len = SEGMENT_LENGTH.get(cfg.dataset, cfg.synthetic.length)
    if cfg.resolved_crop() > seg_len:
        raise ConfigError(f"crop_len {cfg.resolved_crop()} exceeds {cfg.dataset} segment length {seg_len}")
    try:
        cfg.model_config()
    except ValueError as exc:
        raise ConfigError(f"model settings: {exc}") from None
    return cfg


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            with open(path) as f:
                values = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_config(values, overrides)
