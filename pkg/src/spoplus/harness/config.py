"""Experiment configuration: a YAML file mapped onto frozen dataclasses."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..losses import LOSS_NAMES
from ..predictors import ModelKind, TrainConfig
from ..regions import FeasibleRegion, RegionKind
from ..synthdata import CLASSIFICATION_DIM, FEATURE_DIM, PORTFOLIO_DIM

PROBLEMS = ("portfolio", "classification", "convergence")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Arm:
    """One curve of a convergence study: a data generator paired with a training region."""

    name: str
    data: str
    region: FeasibleRegion

    def to_config(self) -> dict:
        return {"name": self.name, "data": self.data, "region": self.region.to_config()}


# inside (-log 50, -log 49), where the entropy set stays off the simplex boundary
PORTFOLIO_LEVEL_R = -3.9


def default_region(problem: str) -> FeasibleRegion:
    if problem == "classification":
        return FeasibleRegion.unit_simplex(CLASSIFICATION_DIM)
    return FeasibleRegion.entropy_simplex(PORTFOLIO_DIM, PORTFOLIO_LEVEL_R)


def default_arms() -> tuple:
    return (Arm("entropy_simplex", "portfolio", default_region("portfolio")),
            Arm("unit_simplex", "classification", default_region("classification")))


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    losses: tuple = ("spo_plus", "least_squares", "absolute")
    region: Optional[FeasibleRegion] = None
    model: ModelKind = ModelKind.AFFINE
    p: int = FEATURE_DIM
    degs: tuple = (1, 2, 4, 6)
    noises: tuple = (0.0, 0.5)
    n_train: tuple = (1000,)
    n_test: int = 10000
    trials: int = 50
    master_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    arms: tuple = ()
    workers: int = 1
    output: str = "results/experiment.csv"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.region is None:
            object.__setattr__(self, "region", default_region(self.problem))
        object.__setattr__(self, "model", ModelKind(self.model))
        for name in ("losses", "degs", "noises", "n_train", "arms"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.losses:
            raise ConfigError("loss list must be nonempty")
        unknown = [l for l in self.losses if l not in LOSS_NAMES]
        if unknown:
            raise ConfigError(f"unknown losses {unknown}; expected a subset of {LOSS_NAMES}")
        if self.n_test <= 0 or self.trials <= 0 or self.workers <= 0:
            raise ConfigError("n_test, trials and workers must be positive")
        if not self.degs or not self.noises or not self.n_train:
            raise ConfigError("degs, noises and n_train must be nonempty")
        if min(self.n_train) <= 0 or min(self.degs) <= 0 or min(self.noises) < 0:
            raise ConfigError("n_train and degs must be positive, noises nonnegative")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be nonnegative")
        if self.problem == "classification":
            if "spo" in self.losses:
                raise ConfigError("SPO-loss training is unavailable on the polyhedral classification region")
            if self.region.kind is not RegionKind.UNIT_SIMPLEX or self.region.dim != CLASSIFICATION_DIM:
                raise ConfigError(f"classification uses the unit simplex in dimension {CLASSIFICATION_DIM}")
        if self.problem == "portfolio" and self.region.kind is RegionKind.UNIT_SIMPLEX and "spo" in self.losses:
            raise ConfigError("SPO-loss training needs an entropy_simplex region")
        if self.problem == "convergence":
            if not self.arms:
                raise ConfigError("convergence needs at least one arm")
            if 100 not in self.n_train:
                raise ConfigError("convergence normalizes at n_train = 100; include it in the grid")
            for arm in self.arms:
                if arm.data not in ("portfolio", "classification"):
                    raise ConfigError(f"arm {arm.name!r}: data must be portfolio or classification")

    def data_dim(self, data: Optional[str] = None) -> int:
        data = data or self.problem
        return CLASSIFICATION_DIM if data == "classification" else self.region.dim

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "losses": list(self.losses),
            "region": self.region.to_config(),
            "model": self.model.value,
            "p": self.p,
            "degs": list(self.degs),
            "noises": [float(v) for v in self.noises],
            "n_train": list(self.n_train),
            "n_test": self.n_test,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "train": dataclasses.asdict(self.train),
            "arms": [a.to_config() for a in self.arms],
            "workers": self.workers,
            "output": self.output,
        }


def default_config(problem: str) -> ExperimentConfig:
    """Desk-scale settings used when no config file is given."""
    if problem == "convergence":
        return ExperimentConfig(problem, losses=("spo_plus",), degs=(1,), noises=(0.5,),
                                n_train=(100, 200, 400, 800, 1600), n_test=2000, trials=10,
                                arms=default_arms(), output="results/convergence.csv")
    losses = ("spo_plus", "least_squares", "absolute")
    if problem == "portfolio":
        losses = ("spo", *losses)
    else:
        losses = (*losses, "spo_plus_barrier")
    return ExperimentConfig(problem, losses=losses, n_test=2000, trials=10, output=f"results/{problem}.csv")


def _numeric(block: dict) -> dict:
    # YAML 1.1 reads "1e-3" as a string
    out = {}
    for key, val in block.items():
        if isinstance(val, str):
            try:
                val = float(val)
            except ValueError:
                pass
        out[key] = val
    return out


def _region(block: dict) -> FeasibleRegion:
    return FeasibleRegion.from_config(_numeric(block))


def _arm(block: dict) -> Arm:
    try:
        return Arm(str(block["name"]), str(block["data"]), _region(block["region"]))
    except KeyError as exc:
        raise ConfigError(f"arm is missing key {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict) or "problem" not in raw:
        raise ConfigError("config must be a mapping with a 'problem' key")
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    try:
        if raw.get("region") is not None:
            raw["region"] = _region(raw["region"])
        if "train" in raw:
            train = _numeric(raw["train"])
            for key in ("batch_size", "epochs", "seed"):
                if key in train:
                    train[key] = int(train[key])
            raw["train"] = TrainConfig(**train)
        if "arms" in raw:
            raw["arms"] = tuple(_arm(a) for a in raw["arms"])
        if "noises" in raw:
            raw["noises"] = tuple(float(v) for v in raw["noises"])
        return ExperimentConfig(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
