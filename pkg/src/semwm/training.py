"""Supervised training on transitions collected on the fly from the environment."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .env import Transition, rollout_batch, sample_actions, step_batch
from .evaluation import CATEGORIES, MetricsReport, evaluate
from .models import VARIANTS, WorldModel, build_model
from .optim import AdamState, adam_step
from .scene import EnvConfig, sample_scenes

log = logging.getLogger(__name__)

# fixed labels for the independent random streams derived from the master seed
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_EVAL = 3
STREAM_VALID = 4
STREAM_PROBE = 5
STREAM_EXPORT = 6
STREAM_GENERALIZE = 7
STREAM_STATS = 8

LOG_COLUMNS = ("step", "train_loss", "val_loss", "mean_l2_error") + tuple(
    col for c in CATEGORIES for col in (c, f"{c}_n")
)


def stream(seed: int, label: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(label,)))


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    env: EnvConfig
    variant: str = "parallel"
    semantic_width: int = 1
    batch_size: int = 10
    trajectory_length: int = 10
    total_gradient_steps: int = 200_000
    eval_every: int = 5_000
    eval_batches: int = 1
    eval_scenes: int = 2_000
    validation_size: int = 100
    rollout_block: int = 32
    seed: int = 0
    checkpoint_path: Optional[str] = None
    checkpoint_each_eval: bool = False
    relation_hidden: tuple[int, ...] = (64, 64, 64)
    transition_hidden: tuple[int, ...] = (512, 512, 512)

    def __post_init__(self):
        self.relation_hidden = tuple(self.relation_hidden)
        self.transition_hidden = tuple(self.transition_hidden)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_gradient_steps < 0:
            raise ValueError("total_gradient_steps must be >= 0")
        if self.trajectory_length < 1 or self.eval_every < 1 or self.rollout_block < 1:
            raise ValueError("trajectory_length, eval_every and rollout_block must be >= 1")
        if (self.variant == "baseline") != (self.semantic_width == 0):
            raise ValueError(f"semantic_width {self.semantic_width} is inconsistent with variant {self.variant!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env"] = self.env.to_dict()
        d["relation_hidden"] = list(self.relation_hidden)
        d["transition_hidden"] = list(self.transition_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        env = d.pop("env")
        return cls(env=env if isinstance(env, EnvConfig) else EnvConfig.from_dict(env), **d)


@dataclass
class Batch:
    z_t: np.ndarray
    action: np.ndarray
    z_t1: np.ndarray

    def __len__(self) -> int:
        return self.z_t.shape[0]

    @property
    def transitions(self) -> list[Transition]:
        return [Transition(a, b, c) for a, b, c in zip(self.z_t, self.action, self.z_t1)]


class TransitionPool:
    """Rolling supply of transitions in collection order.

    Trajectories of ``trajectory_length`` are generated ``block`` at a time
    (stepped in lockstep) whenever the pool runs dry; transitions are handed
    out trajectory by trajectory, step by step.
    """

    def __init__(self, env: EnvConfig, rng: np.random.Generator, trajectory_length: int = 10, block: int = 32):
        self.env = env
        self.rng = rng
        self.trajectory_length = trajectory_length
        self.block = block
        self._queue: deque = deque()
        self.trajectories_generated = 0

    def _refill(self) -> None:
        scenes, actions = rollout_batch(self.env, self.rng, self.block, self.trajectory_length)
        for i in range(self.block):
            for t in range(self.trajectory_length):
                self._queue.append((scenes[i, t], actions[i, t], scenes[i, t + 1]))
        self.trajectories_generated += self.block

    def take(self, n: int) -> Batch:
        items = []
        for _ in range(n):
            if not self._queue:
                self._refill()
            items.append(self._queue.popleft())
        z, a, z1 = zip(*items)
        return Batch(np.stack(z), np.stack(a), np.stack(z1))


def collect_batch(cfg: TrainConfig, rng: np.random.Generator, pool: Optional[TransitionPool] = None) -> Batch:
    if pool is None:
        pool = TransitionPool(cfg.env, rng, cfg.trajectory_length, cfg.rollout_block)
    return pool.take(cfg.batch_size)


def loss_on(model: WorldModel, batch: Batch) -> float:
    return float(ad.l2_loss(model.forward(batch.z_t, batch.action).prediction, batch.z_t1).value)


def train_step(model: WorldModel, state: AdamState, batch: Batch) -> float:
    with ad.Tape() as tape:
        loss = ad.l2_loss(model.forward(batch.z_t, batch.action).prediction, batch.z_t1)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss {value} at Adam step {state.t + 1}; "
            f"batch |z| max {np.abs(batch.z_t).max():.3g}, "
            f"largest parameter {max(np.abs(p.value).max() for p in model.params.values()):.3g}"
        )
    grads = tape.backward(loss)
    adam_step(model.params, grads, state)
    return value


def validation_batch(cfg: TrainConfig) -> Batch:
    rng = stream(cfg.seed, STREAM_VALID)
    z = sample_scenes(cfg.env, rng, cfg.validation_size)
    a, _ = sample_actions(z, cfg.env, rng)
    return Batch(z, a, step_batch(z, a, cfg.env))


def evaluate_at(model: WorldModel, cfg: TrainConfig) -> MetricsReport:
    """Evaluation used at every log point; always on the same held-out scenes."""
    return evaluate(model, cfg.env, cfg.eval_batches, cfg.eval_scenes, stream(cfg.seed, STREAM_EVAL))


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)

    def append(self, record: dict, wall: float) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("log steps must increase")
        self.records.append(record)
        self.wall_time.append(wall)

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.records]

    @staticmethod
    def csv_row(record: dict) -> list:
        return ["" if record.get(c) is None else _fmt(record.get(c)) for c in LOG_COLUMNS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow(self.csv_row(r))
        return buf.getvalue()

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rec = {}
                for k, v in row.items():
                    if v == "":
                        continue
                    rec[k] = int(v) if k == "step" or k.endswith("_n") else float(v)
                out.records.append(rec)
        return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def make_record(step: int, train_loss: Optional[float], val_loss: float, report: MetricsReport) -> dict:
    rec = {"step": step, "train_loss": train_loss, "val_loss": val_loss}
    rec.update({k: v for k, v in report.to_dict().items() if k != "n_scenes"})
    return rec


def train(cfg: TrainConfig, out_dir=None, progress: Optional[Callable[[dict], None]] = None) -> tuple[WorldModel, TrainLog]:
    """Train ``cfg.variant`` for ``cfg.total_gradient_steps`` Adam steps.

    When ``out_dir`` is given, ``log.csv`` and ``log.jsonl`` are appended at every
    evaluation point (reproducible byte for byte) and wall-clock timings go to
    ``timing.csv``. The final checkpoint goes to ``cfg.checkpoint_path``.
    """
    model = build_model(cfg.variant, cfg.env.k, cfg.semantic_width, stream(cfg.seed, STREAM_INIT),
                        relation_hidden=cfg.relation_hidden, transition_hidden=cfg.transition_hidden)
    state = AdamState()
    pool = TransitionPool(cfg.env, stream(cfg.seed, STREAM_DATA), cfg.trajectory_length, cfg.rollout_block)
    val = validation_batch(cfg)
    tlog = TrainLog()

    files = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "csv": open(out_dir / "log.csv", "w", newline=""),
            "jsonl": open(out_dir / "log.jsonl", "w"),
            "timing": open(out_dir / "timing.csv", "w"),
        }
        csv.writer(files["csv"], lineterminator="\n").writerow(LOG_COLUMNS)
        files["timing"].write("step,wall_seconds\n")

    # stored in checkpoints; without the output path so reruns elsewhere give identical bytes
    portable = replace(cfg, checkpoint_path=None).to_dict()
    start = time.perf_counter()
    loss_sum, loss_n = 0.0, 0
    try:
        for step_no in range(1, cfg.total_gradient_steps + 1):
            batch = pool.take(cfg.batch_size)
            loss_sum += train_step(model, state, batch)
            loss_n += 1
            if step_no % cfg.eval_every == 0 or step_no == cfg.total_gradient_steps:
                report = evaluate_at(model, cfg)
                rec = make_record(step_no, loss_sum / loss_n, loss_on(model, val), report)
                loss_sum, loss_n = 0.0, 0
                wall = time.perf_counter() - start
                tlog.append(rec, wall)
                log.info("step %d loss %.3g locked %s unlocked %s", step_no, rec["train_loss"],
                         rec.get("pc_locked_no_move"), rec.get("pc_unlocked_correct_pos"))
                if files:
                    csv.writer(files["csv"], lineterminator="\n").writerow(TrainLog.csv_row(rec))
                    files["jsonl"].write(json.dumps(rec, sort_keys=True) + "\n")
                    files["timing"].write(f"{step_no},{wall:.3f}\n")
                    for fh in files.values():
                        fh.flush()
                if cfg.checkpoint_each_eval and out_dir is not None:
                    save_checkpoint(model, out_dir / f"checkpoint_step{step_no:08d}.bin",
                                    extra={"step": step_no, "train_config": portable})
                if progress:
                    progress(rec)
    finally:
        if files:
            for fh in files.values():
                fh.close()

    if cfg.checkpoint_path:
        save_checkpoint(model, cfg.checkpoint_path, extra={"step": cfg.total_gradient_steps, "train_config": portable})
    return model, tlog
