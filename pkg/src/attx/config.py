"""Experiment configuration (YAML) tying together training, model and pipeline options."""
from dataclasses import dataclass, field

import yaml

from .model import ModelSpec
from .preprocess import PipelineConfig
from .rng import default_seed
from .train import TrainConfig


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        train = dict(d.get("train") or {})
        train.setdefault("seed", default_seed())
        return cls(TrainConfig.from_dict(train), ModelSpec.from_dict(d.get("model")),
                   PipelineConfig.from_dict(d.get("pipeline")))

    def to_dict(self):
        return {"train": self.train.to_dict(), "model": self.model.to_dict(),
                "pipeline": self.pipeline.to_dict()}


def load_config(path=None):
    if path is None:
        return ExperimentConfig.from_dict({})
    with open(path) as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh))


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
