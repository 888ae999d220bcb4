"""Python interface to the h2sr recommender core."""

from __future__ import annotations

import json
import os
from typing import Any, Mapping, Optional

from ._core import (
    Dataset,
    H2srError,
    Model,
    distance,
    lift,
    log_origin,
    rank_target,
)
from . import _core

__all__ = [
    "Dataset",
    "H2srError",
    "Model",
    "default_config",
    "distance",
    "lift",
    "log_origin",
    "pretrain",
    "rank_target",
    "resolve_config",
    "synthesize",
    "train",
]


def _encode(config: Optional[Mapping[str, Any]]) -> str:
    return json.dumps(dict(config or {}))


def default_config() -> dict:
    """Every config key with its default value."""
    return json.loads(_core._default_config())


def resolve_config(config: Optional[Mapping[str, Any]] = None) -> dict:
    """Defaults overridden by `config`, validated."""
    return json.loads(_core._resolve_config(_encode(config)))


def synthesize(config: Optional[Mapping[str, Any]] = None) -> str:
    """Synthetic interaction log as user<TAB>item<TAB>timestamp lines."""
    return _core._synthesize(_encode(config))


def pretrain(data: Dataset, out: str | os.PathLike, config: Optional[Mapping[str, Any]] = None) -> list[float]:
    """Pre-trains the item table, writes the checkpoint and returns the epoch losses."""
    return _core._pretrain(data, _encode(config), os.fspath(out))


def train(
    data: Dataset,
    config: Optional[Mapping[str, Any]] = None,
    pretrained: str | os.PathLike | None = None,
) -> Model:
    """Trains a recommender; init and fuse variants need a pretrain checkpoint."""
    return _core._train(data, _encode(config), os.fspath(pretrained) if pretrained else "")
