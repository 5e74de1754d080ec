"""Run configuration: one versioned JSON document describing a whole experiment."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .autoenc import TrainConfig
from .errors import ParameterError
from .synth import FAMILIES, CorpusSpec

CONFIG_VERSION = 1
SPACES = ("latent", "pca")


class ConfigError(ParameterError):
    pass


@dataclass
class NeighborConfig:
    k: int = 1
    space: str = "latent"  # "pca" measures distances in the 2-component PCA plane
    standardize: bool = False


@dataclass
class CalibrationConfig:
    # 0: calibrate on training samples, each excluded from its own query.
    # n > 0: every n-th train-split cloud (id order) is held out of autoencoder
    # training and calibrated against the fitted training set.
    holdout_every: int = 0


@dataclass
class RunConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    z_dim: int = 16
    model_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    neighbors: NeighborConfig = field(default_factory=NeighborConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    tolerance: float = math.inf
    budget: int = 20
    batches: int = 2
    retrain: bool = False
    out: str = "runs/demo"

    def validate(self) -> None:
        try:
            self.corpus.validate()
            self.train.validate()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        if self.z_dim < 1:
            raise ConfigError("field 'model.z_dim' must be >= 1")
        if self.neighbors.k < 1:
            raise ConfigError("field 'neighbors.k' must be >= 1")
        if self.neighbors.space not in SPACES:
            raise ConfigError(f"field 'neighbors.space' must be one of {SPACES}")
        if self.calibration.holdout_every < 0 or self.calibration.holdout_every == 1:
            raise ConfigError("field 'calibration.holdout_every' must be 0 or >= 2")
        if math.isnan(self.tolerance) or self.tolerance < 0:
            raise ConfigError("field 'tolerance' must be >= 0 or \"inf\"")
        if self.budget < 0:
            raise ConfigError("field 'budget' must be >= 0")
        if self.batches < 1:
            raise ConfigError("field 'batches' must be >= 1")

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "out": self.out,
            "corpus": asdict(self.corpus),
            "model": {"z_dim": self.z_dim, "seed": self.model_seed},
            "train": asdict(self.train),
            "neighbors": asdict(self.neighbors),
            "calibration": asdict(self.calibration),
            "tolerance": "inf" if math.isinf(self.tolerance) else self.tolerance,
            "budget": self.budget,
            "batches": self.batches,
            "retrain": self.retrain,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def with_overrides(self, **kw) -> "RunConfig":
        cfg = copy.deepcopy(self)
        if kw.get("seed") is not None:
            cfg.corpus.seed = kw["seed"]
        if kw.get("out") is not None:
            cfg.out = kw["out"]
        if kw.get("budget") is not None:
            cfg.budget = kw["budget"]
        if kw.get("tolerance") is not None:
            cfg.tolerance = kw["tolerance"]
        if kw.get("k") is not None:
            cfg.neighbors.k = kw["k"]
        if kw.get("epochs") is not None:
            cfg.train = replace(cfg.train, epochs=kw["epochs"])
        if kw.get("retrain") is not None:
            cfg.retrain = kw["retrain"]
        cfg.validate()
        return cfg


def _take(section: dict, cls, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown field(s) in '{where}': {sorted(unknown)}")
    return cls(**section)


def _parse_tolerance(value) -> float:
    if value == "inf":
        return math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(f"field 'tolerance' must be a number or \"inf\", got {value!r}")


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"field 'version' must be {CONFIG_VERSION}, got {doc.get('version')!r}")
    allowed = {"version", "out", "corpus", "model", "train", "neighbors", "calibration", "tolerance", "budget", "batches", "retrain"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level field(s): {sorted(unknown)}")
    try:
        corpus = _take(doc.get("corpus", {}), CorpusSpec, "corpus")
        for split in ("train", "new"):
            for fam in getattr(corpus, split):
                if fam not in FAMILIES:
                    raise ConfigError(f"field 'corpus.{split}': unknown family {fam!r}")
        model = doc.get("model", {})
        unknown = set(model) - {"z_dim", "seed"}
        if unknown:
            raise ConfigError(f"unknown field(s) in 'model': {sorted(unknown)}")
        cfg = RunConfig(
            corpus=corpus,
            z_dim=int(model.get("z_dim", 16)),
            model_seed=int(model.get("seed", 0)),
            train=_take(doc.get("train", {}), TrainConfig, "train"),
            neighbors=_take(doc.get("neighbors", {}), NeighborConfig, "neighbors"),
            calibration=_take(doc.get("calibration", {}), CalibrationConfig, "calibration"),
            tolerance=_parse_tolerance(doc.get("tolerance", "inf")),
            budget=int(doc.get("budget", 20)),
            batches=int(doc.get("batches", 2)),
            retrain=bool(doc.get("retrain", False)),
            out=str(doc.get("out", "runs/demo")),
        )
    except TypeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return config_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def demo_config() -> RunConfig:
    text = resources.files("neighbor_confidence").joinpath("demo_config.json").read_text()
    return config_from_dict(json.loads(text))
