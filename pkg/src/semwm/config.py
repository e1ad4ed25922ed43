"""Scenario presets and config-file loading.

Config files are YAML (JSON is valid YAML) with keys mirroring
:class:`~semwm.scene.EnvConfig` and :class:`~semwm.training.TrainConfig`;
environment settings live under ``env:``.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Optional

import yaml

from .models import VARIANTS, semantic_width
from .scene import ALL_SHAPES, EnvConfig
from .training import TrainConfig

SCENARIOS = ("minimal", "multi")

# lexicographic shape indices used for training in each scenario
MINIMAL_SHAPES = (0, 13, 26)
MULTI_SHAPES = (0, 7, 13, 19, 26)

STEP_BUDGET = {"minimal": 200_000, "multi": 1_500_000}
EVAL_EVERY = {"minimal": 5_000, "multi": 25_000}


def env_preset(scenario: str, seed: int = 0) -> EnvConfig:
    if scenario == "minimal":
        return EnvConfig(k=5, lock_count_range=(0, 2), regular_count_range=(1, 3),
                         shape_set=tuple(ALL_SHAPES[i] for i in MINIMAL_SHAPES), click_enabled=False, seed=seed)
    if scenario == "multi":
        return EnvConfig(k=7, lock_count_range=(0, 2), regular_count_range=(1, 5),
                         shape_set=tuple(ALL_SHAPES[i] for i in MULTI_SHAPES), click_enabled=True, seed=seed)
    raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def train_preset(scenario: str, variant: str, seed: int = 0, **overrides) -> TrainConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    cfg = TrainConfig(
        env=env_preset(scenario, seed),
        variant=variant,
        semantic_width=semantic_width(variant, scenario),
        batch_size=10,
        trajectory_length=10,
        total_gradient_steps=STEP_BUDGET[scenario],
        eval_every=EVAL_EVERY[scenario],
        seed=seed,
    )
    return replace(cfg, **overrides) if overrides else cfg


def load_config_file(path) -> dict:
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return data


def resolve_train_config(scenario: Optional[str], variant: Optional[str], file_values: Optional[dict] = None,
                         seed: Optional[int] = None) -> TrainConfig:
    """Combine a preset with config-file values; contradictory widths are rejected."""
    values = dict(file_values or {})
    scenario = scenario or values.pop("scenario", None)
    values.pop("scenario", None)
    variant = variant or values.get("variant")
    if scenario is None and "env" not in values:
        raise ValueError("either a scenario preset or an env section is required")
    if variant is None:
        raise ValueError("a model variant is required")
    values["variant"] = variant
    if seed is not None:
        values["seed"] = seed

    if scenario is not None:
        base = train_preset(scenario, variant, values.get("seed", 0))
        expected = base.semantic_width
        if "semantic_width" in values and values["semantic_width"] != expected:
            raise ValueError(
                f"semantic_width {values['semantic_width']} contradicts the {scenario} preset for {variant} ({expected})"
            )
        env_values = base.env.to_dict()
        env_values.update(values.pop("env", {}) or {})
        env_values["seed"] = values.get("seed", env_values["seed"])
        merged = base.to_dict()
        merged.update(values)
        merged["env"] = env_values
        return TrainConfig.from_dict(merged)

    if "semantic_width" not in values:
        raise ValueError("semantic_width is required without a scenario preset")
    return TrainConfig.from_dict(values)
