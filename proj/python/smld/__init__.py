# Copyright (c) 2026, The smld Authors
# SPDX-License-Identifier: Apache-2.0
"""Stylized motion generation with parameter-free style fusion.

Stage functions take a :class:`RunConfig` and a workspace directory and return
their report as a dict. Array functions accept anything numpy can convert to a
2-d float array.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Optional, Sequence, Tuple

from . import _core
from ._core import (
    ConfigError,
    ContractError,
    DependencyError,
    DimensionError,
    LoadError,
    RunConfig,
    StateError,
    TrainingError,
    UsageError,
    VocabularyError,
    align_loss,
    content_labels,
    diversity,
    feature_dim,
    fid,
    fid_gaussian,
    foot_skate_ratio,
    fuse,
    generate_motion,
    mm_distance,
    r_precision,
    read_motion,
    style_labels,
    write_motion,
)


STAGES = (
    "gen_data",
    "train_vae",
    "train_style_encoder",
    "train_diffusion",
    "train_align",
    "train_classifier",
)


def _config(config: Optional[RunConfig]) -> RunConfig:
    return config if config is not None else RunConfig()


def gen_data(root, config: Optional[RunConfig] = None) -> dict:
    return json.loads(_core._gen_data(_config(config), os.fspath(root)))


def train_vae(root, config: Optional[RunConfig] = None) -> dict:
    return json.loads(_core._train_vae(_config(config), os.fspath(root)))


def train_style_encoder(root, config: Optional[RunConfig] = None) -> dict:
    return json.loads(_core._train_style_encoder(_config(config), os.fspath(root)))


def train_diffusion(root, config: Optional[RunConfig] = None) -> dict:
    return json.loads(_core._train_diffusion(_config(config), os.fspath(root)))


def train_align(root, config: Optional[RunConfig] = None) -> dict:
    return json.loads(_core._train_align(_config(config), os.fspath(root)))


def train_classifier(root, config: Optional[RunConfig] = None) -> dict:
    return json.loads(_core._train_classifier(_config(config), os.fspath(root)))


def run_pipeline(root, config: Optional[RunConfig] = None) -> dict:
    """Runs every training stage in order; returns their reports by name."""
    stages = {name: globals()[name] for name in STAGES}
    return {name: run(root, config) for name, run in stages.items()}


def evaluate(root, config: Optional[RunConfig] = None) -> dict:
    return json.loads(_core._evaluate(_config(config), os.fspath(root)))


def ablate_gamma(root, grid: Iterable[float], config: Optional[RunConfig] = None) -> list:
    return json.loads(_core._ablate_gamma(_config(config), os.fspath(root), [float(g) for g in grid]))


def param_report(root) -> dict:
    return json.loads(_core._param_report(os.fspath(root)))


def stylize(
    root,
    content: str,
    style: str,
    output,
    modality: str = "text",
    gamma: Optional[float] = None,
    seed: Optional[int] = None,
    config: Optional[RunConfig] = None,
) -> dict:
    """Generates one motion; `style` is a style word, or a motion path when
    modality is "motion"."""
    return json.loads(
        _core._stylize(
            _config(config), os.fspath(root), content, modality, os.fspath(style) if modality == "motion" else style,
            os.fspath(output), gamma, seed,
        )
    )


def interpolate(
    root,
    content: str,
    styles: Sequence[Tuple[float, str]],
    output,
    modality: str = "text",
    gamma: Optional[float] = None,
    seed: Optional[int] = None,
    config: Optional[RunConfig] = None,
) -> dict:
    return json.loads(
        _core._interpolate(
            _config(config), os.fspath(root), content, [(float(w), s) for w, s in styles], modality,
            os.fspath(output), gamma, seed,
        )
    )


__all__ = [
    "ConfigError", "ContractError", "DependencyError", "DimensionError", "LoadError", "RunConfig", "StateError",
    "TrainingError", "UsageError", "VocabularyError", "STAGES", "ablate_gamma", "align_loss", "content_labels",
    "diversity", "evaluate", "feature_dim", "fid", "fid_gaussian", "foot_skate_ratio", "fuse", "gen_data",
    "generate_motion", "interpolate", "mm_distance", "param_report", "r_precision", "read_motion", "run_pipeline",
    "style_labels", "stylize", "train_align", "train_classifier", "train_diffusion", "train_style_encoder",
    "train_vae", "write_motion",
]
