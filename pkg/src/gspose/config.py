"""Run configuration: YAML on disk, strict validation, dotted-key overrides."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, Field

from gspose.synth import SynthSpec
from gspose.trainer import TrainConfig


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    noise_sigma: float = Field(0.0, ge=0)
    rot_noise_deg: float = Field(0.0, ge=0)
    trans_noise: float = Field(0.0, ge=0)
    train: TrainConfig = TrainConfig()
    synth: SynthSpec = SynthSpec()


def load_config(path) -> dict:
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data


def parse_override(text: str) -> tuple[list[str], Any]:
    """``train.loss.beta=0.5`` -> (["train", "loss", "beta"], 0.5); values parse as YAML scalars."""
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ValueError(f"override {text!r} must look like key=value")
    return key.strip().split("."), yaml.safe_load(value)


def set_nested(data: dict, keys: list[str], value):
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot set {'.'.join(keys)}: {k} is not a section")
    node[keys[-1]] = value


def resolve(file_data: dict | None, overrides: list[tuple[list[str], Any]]) -> RunConfig:
    data = copy.deepcopy(file_data or {})
    for keys, value in overrides:
        set_nested(data, keys, value)
    return RunConfig.model_validate(data)


def dump_config(cfg: RunConfig, path):
    """Write every field, defaults included, so the file alone reproduces the run."""
    Path(path).write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False))
