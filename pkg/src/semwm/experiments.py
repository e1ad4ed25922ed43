"""Multi-seed experiment suites and the summary statistics used to judge them.

Runs are cached on disk: each (scenario, variant, seed, budget) gets its own
directory under ``root`` holding ``config.json``, the training logs and the
final checkpoint. A directory whose stored config matches and whose
checkpoint exists is reused instead of retrained, so a long suite can be
launched once (``python -m semwm.experiments learning --scenario minimal``)
and inspected later.
"""

from __future__ import annotations

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .checkpoint import load_checkpoint
from .config import env_preset, train_preset
from .embed import collect_embeddings, linear_probe, scenes_for_records
from .evaluation import generalization_eval
from .models import VARIANTS, WorldModel
from .training import STREAM_EXPORT, STREAM_GENERALIZE, STREAM_PROBE, TrainLog, stream, train

log = logging.getLogger(__name__)


def run_dir_for(root, scenario: str, variant: str, seed: int, steps: int) -> Path:
    return Path(root) / f"{scenario}_{variant}_seed{seed}_steps{steps}"


def train_or_load(root, scenario: str, variant: str, seed: int, steps: Optional[int] = None,
                  **overrides) -> tuple[WorldModel, TrainLog]:
    cfg = train_preset(scenario, variant, seed, **overrides)
    if steps is not None:
        cfg = replace(cfg, total_gradient_steps=steps)
    run_dir = run_dir_for(root, scenario, variant, seed, cfg.total_gradient_steps)
    ckpt = run_dir / "checkpoint.bin"
    cfg = replace(cfg, checkpoint_path=str(ckpt))
    stored = run_dir / "config.json"
    if ckpt.exists() and stored.exists() and json.loads(stored.read_text()) == cfg.to_dict():
        return load_checkpoint(ckpt), TrainLog.read_csv(run_dir / "log.csv")
    run_dir.mkdir(parents=True, exist_ok=True)
    if ckpt.exists():
        ckpt.unlink()
    stored.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    log.info("training %s/%s seed %d for %d steps", scenario, variant, seed, cfg.total_gradient_steps)
    return train(cfg, run_dir)


def learning_suite(root, scenario: str, variants: Iterable[str] = VARIANTS, seeds: Iterable[int] = range(5),
                   steps: Optional[int] = None, **overrides) -> dict[str, dict[int, tuple[WorldModel, TrainLog]]]:
    out: dict = {}
    for variant in variants:
        out[variant] = {}
        for seed in seeds:
            out[variant][seed] = train_or_load(root, scenario, variant, seed, steps, **overrides)
    return out


def final_value(tlog: TrainLog, category: str) -> Optional[float]:
    return tlog.records[-1].get(category) if tlog.records else None


def seed_mean(values: Iterable[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def steps_to_sustain(tlog: TrainLog, category: str, threshold: float) -> Optional[int]:
    """First evaluation step from which ``category`` stays >= ``threshold`` at every later evaluation."""
    first = None
    for rec in tlog.records:
        v = rec.get(category)
        if v is not None and v >= threshold:
            if first is None:
                first = rec["step"]
        else:
            first = None
    return first


def generalization_scores(models: dict[int, WorldModel], scenario: str, n_batches: int = 1000,
                          scenes_per_batch: int = 1000, category: str = "pc_locked_no_move") -> dict[int, float]:
    cfg = env_preset(scenario)
    return {seed: generalization_eval(m, cfg, stream(seed, STREAM_GENERALIZE), n_batches, scenes_per_batch).ratio(category)
            for seed, m in models.items()}


def probe_scores(models: dict[int, WorldModel], scenario: str, n_records: int = 10_000) -> dict[int, dict]:
    cfg = env_preset(scenario)
    out = {}
    for seed, m in models.items():
        rec = collect_embeddings(m, cfg, scenes_for_records(cfg, n_records), stream(seed, STREAM_EXPORT))
        out[seed] = linear_probe(rec, 0.8, stream(seed, STREAM_PROBE)).to_dict()
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Train the cached multi-seed suites.")
    parser.add_argument("suite", choices=("learning",))
    parser.add_argument("--scenario", choices=("minimal", "multi"), required=True)
    parser.add_argument("--variants", nargs="*", choices=VARIANTS, default=list(VARIANTS))
    parser.add_argument("--seeds", type=int, nargs="*", default=list(range(5)))
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--root", default="experiments")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    suite = learning_suite(args.root, args.scenario, args.variants, args.seeds, args.steps)
    for variant, runs in suite.items():
        for seed, (_, tlog) in runs.items():
            print(variant, seed, json.dumps(tlog.records[-1] if tlog.records else {}, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
