"""Percent-correct metrics, state-probability counting and the unseen-shape protocol.

All categories are conditioned on the slot the action targets:

* ``pc_locked_no_move``: drag on a locked slot, no position change predicted.
* ``pc_unlocked_correct_pos``: drag on an unlocked slot, predicted position within the threshold.
* ``pc_blocked_no_shape_change``: click on a blocked slot, no shape change predicted.
* ``pc_unblocked_correct_shape``: click on an unblocked slot, predicted shape within the threshold.
* ``pc_unblocked_any_change``: click on an unblocked slot, any shape change predicted.

A change is "predicted" when the norm of the property's change exceeds the
threshold (strict ``>``); a prediction is "correct" when its distance to the
ground truth is strictly below it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .env import CLICK, DRAG, decode_actions, sample_actions, step_batch
from .scene import ALL_SHAPES, POS, SHAPE, EnvConfig, occupied, sample_scenes, semantic_oracle, shape_index

THRESHOLD = 0.05
CATEGORIES = (
    "pc_locked_no_move",
    "pc_unlocked_correct_pos",
    "pc_blocked_no_shape_change",
    "pc_unblocked_correct_shape",
    "pc_unblocked_any_change",
)

Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class Outcomes:
    applicable: dict[str, np.ndarray]
    correct: dict[str, np.ndarray]


def classify_prediction(z_t, a, z_pred, z_t1, cfg: EnvConfig, threshold: float = THRESHOLD) -> Outcomes:
    """Per-slot outcome masks for a batch ``(B, K, 8)`` (or a single scene ``(K, 8)``)."""
    z_t, a, z_pred, z_t1 = (np.asarray(x, dtype=np.float64) for x in (z_t, a, z_pred, z_t1))
    single = z_t.ndim == 2
    if single:
        z_t, a, z_pred, z_t1 = z_t[None], a[None], z_pred[None], z_t1[None]
    if not (z_t.shape == z_pred.shape == z_t1.shape):
        raise ValueError("scenes must share shape")

    locked, blocked = semantic_oracle(z_t, cfg)
    kind, slot = decode_actions(z_t, a, cfg)
    targeted = np.arange(z_t.shape[1])[None, :] == slot[:, None]
    dragged = targeted & (kind == DRAG)[:, None]
    clicked = targeted & (kind == CLICK)[:, None]

    pos_change = np.linalg.norm(z_pred[..., POS] - z_t[..., POS], axis=-1)
    shape_change = np.linalg.norm(z_pred[..., SHAPE] - z_t[..., SHAPE], axis=-1)
    pos_err = np.linalg.norm(z_pred[..., POS] - z_t1[..., POS], axis=-1)
    shape_err = np.linalg.norm(z_pred[..., SHAPE] - z_t1[..., SHAPE], axis=-1)

    applicable = {
        "pc_locked_no_move": dragged & locked,
        "pc_unlocked_correct_pos": dragged & ~locked,
        "pc_blocked_no_shape_change": clicked & blocked,
        "pc_unblocked_correct_shape": clicked & ~blocked,
        "pc_unblocked_any_change": clicked & ~blocked,
    }
    correct = {
        "pc_locked_no_move": applicable["pc_locked_no_move"] & ~(pos_change > threshold),
        "pc_unlocked_correct_pos": applicable["pc_unlocked_correct_pos"] & (pos_err < threshold),
        "pc_blocked_no_shape_change": applicable["pc_blocked_no_shape_change"] & ~(shape_change > threshold),
        "pc_unblocked_correct_shape": applicable["pc_unblocked_correct_shape"] & (shape_err < threshold),
        "pc_unblocked_any_change": applicable["pc_unblocked_any_change"] & (shape_change > threshold),
    }
    if single:
        applicable = {k: v[0] for k, v in applicable.items()}
        correct = {k: v[0] for k, v in correct.items()}
    return Outcomes(applicable, correct)


@dataclass
class MetricsReport:
    correct: dict[str, int] = field(default_factory=lambda: {c: 0 for c in CATEGORIES})
    count: dict[str, int] = field(default_factory=lambda: {c: 0 for c in CATEGORIES})
    sq_error_sum: float = 0.0
    n_elements: int = 0
    n_scenes: int = 0

    def update(self, outcomes: Outcomes, z_pred=None, z_t1=None) -> "MetricsReport":
        for c in CATEGORIES:
            self.count[c] += int(outcomes.applicable[c].sum())
            self.correct[c] += int(outcomes.correct[c].sum())
        if z_pred is not None:
            diff = np.asarray(z_pred) - np.asarray(z_t1)
            self.sq_error_sum += float(np.sum(diff * diff))
            self.n_elements += diff.size
            self.n_scenes += diff.shape[0] if diff.ndim == 3 else 1
        return self

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        for c in CATEGORIES:
            self.correct[c] += other.correct[c]
            self.count[c] += other.count[c]
        self.sq_error_sum += other.sq_error_sum
        self.n_elements += other.n_elements
        self.n_scenes += other.n_scenes
        return self

    def ratio(self, category: str) -> Optional[float]:
        n = self.count[category]
        return self.correct[category] / n if n else None

    @property
    def mean_l2_error(self) -> Optional[float]:
        return self.sq_error_sum / self.n_elements if self.n_elements else None

    def __getattr__(self, name):
        if name in CATEGORIES:
            return self.ratio(name)
        raise AttributeError(name)

    def without(self, *categories: str) -> "MetricsReport":
        out = replace(self, correct=dict(self.correct), count=dict(self.count))
        for c in categories:
            out.correct[c] = 0
            out.count[c] = 0
        return out

    def to_csv(self) -> str:
        """``category,correct,count,ratio`` rows; the ratio is empty for categories without samples."""
        lines = ["category,correct,count,ratio"]
        for c in CATEGORIES:
            r = self.ratio(c)
            lines.append(f"{c},{self.correct[c]},{self.count[c]},{'' if r is None else repr(r)}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        """Flat dict; categories with zero samples are omitted."""
        d = {}
        for c in CATEGORIES:
            if self.count[c]:
                d[c] = self.ratio(c)
                d[f"{c}_n"] = self.count[c]
        d["mean_l2_error"] = self.mean_l2_error
        d["n_scenes"] = self.n_scenes
        return d


class EnvironmentPredictor:
    """The environment's own transition function used as a (perfect) model."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.k = cfg.k

    def __call__(self, z, a):
        return step_batch(z, a, self.cfg)


class IdentityPredictor:
    def __init__(self, k: int):
        self.k = k

    def __call__(self, z, a):
        return np.array(z, dtype=np.float64, copy=True)


def _predict(model, z, a) -> np.ndarray:
    fn = getattr(model, "predict", model)
    return fn(z, a)


def evaluate_scenes(model, z, a, cfg: EnvConfig, report: Optional[MetricsReport] = None) -> MetricsReport:
    report = report if report is not None else MetricsReport()
    z1 = step_batch(z, a, cfg)
    pred = _predict(model, z, a)
    return report.update(classify_prediction(z, a, pred, z1, cfg), pred, z1)


def evaluate(model, cfg: EnvConfig, n_batches: int, scenes_per_batch: int, rng: np.random.Generator) -> MetricsReport:
    k = getattr(model, "k", cfg.k)
    if k != cfg.k:
        raise ValueError(f"model expects K={k} but the environment has K={cfg.k}")
    report = MetricsReport()
    for _ in range(n_batches):
        z = sample_scenes(cfg, rng, scenes_per_batch)
        a, _ = sample_actions(z, cfg, rng)
        evaluate_scenes(model, z, a, cfg, report)
    return report


@dataclass
class StateProbabilityReport:
    n_scenes: int
    k: int
    selected_locked: float
    selected_blocked: float
    per_slot_locked: float
    per_slot_blocked: float
    action_relevant_locked: float
    action_relevant_blocked: float
    object_locked: float
    object_blocked: float
    drag_fraction: float
    counts: dict = field(default_factory=dict)

    def standard_error(self, p: float, n: Optional[int] = None) -> float:
        n = n if n is not None else self.n_scenes
        return float(np.sqrt(max(p * (1.0 - p), 1e-300) / n))

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "counts"}
        d.update(self.counts)
        return d


def state_probabilities(cfg: EnvConfig, n_scenes: int = 1_000_000, rng: Optional[np.random.Generator] = None,
                        chunk: int = 100_000) -> StateProbabilityReport:
    """Count semantic states over freshly sampled scenes and sampled actions.

    ``selected_*``: the object the action targets is in the state.
    ``per_slot_*``: a given slot is both targeted and in the state (selected / K).
    ``action_relevant_*``: as per-slot, and the action type can reveal the state
    (drag for locked, click for blocked).
    ``object_*``: fraction of occupied slots in the state, regardless of action.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    c = dict(sel_locked=0, sel_blocked=0, rel_locked=0, rel_blocked=0, drags=0,
             obj=0, obj_locked=0, obj_blocked=0)
    done = 0
    while done < n_scenes:
        n = min(chunk, n_scenes - done)
        z = sample_scenes(cfg, rng, n)
        a, target = sample_actions(z, cfg, rng)
        kind, _ = decode_actions(z, a, cfg)
        locked, blocked = semantic_oracle(z, cfg)
        rows = np.arange(n)
        sl, sb = locked[rows, target], blocked[rows, target]
        c["sel_locked"] += int(sl.sum())
        c["sel_blocked"] += int(sb.sum())
        c["rel_locked"] += int((sl & (kind == DRAG)).sum())
        c["rel_blocked"] += int((sb & (kind == CLICK)).sum())
        c["drags"] += int((kind == DRAG).sum())
        occ = occupied(z)
        c["obj"] += int(occ.sum())
        c["obj_locked"] += int(locked.sum())
        c["obj_blocked"] += int(blocked.sum())
        done += n
    k = cfg.k
    return StateProbabilityReport(
        n_scenes=n_scenes,
        k=k,
        selected_locked=c["sel_locked"] / n_scenes,
        selected_blocked=c["sel_blocked"] / n_scenes,
        per_slot_locked=c["sel_locked"] / (n_scenes * k),
        per_slot_blocked=c["sel_blocked"] / (n_scenes * k),
        action_relevant_locked=c["rel_locked"] / (n_scenes * k),
        action_relevant_blocked=c["rel_blocked"] / (n_scenes * k),
        object_locked=c["obj_locked"] / c["obj"],
        object_blocked=c["obj_blocked"] / c["obj"],
        drag_fraction=c["drags"] / n_scenes,
        counts=c,
    )


def unseen_shapes(train_cfg: EnvConfig) -> list[tuple[float, float, float]]:
    """All shape codes not in the training set, in lexicographic order."""
    train = set(train_cfg.shape_set)
    return [s for s in ALL_SHAPES if s not in train]


def generalization_eval(model, train_cfg: EnvConfig, rng: np.random.Generator, n_batches: int = 1000,
                        scenes_per_batch: int = 1000, shapes_per_batch: Optional[int] = None) -> MetricsReport:
    """Evaluate on objects whose shapes never occurred during training.

    Each batch draws ``shapes_per_batch`` (default: size of the training set)
    shapes from the unseen pool and evaluates fresh scenes built from them.
    Shape-change dynamics are scored with the any-change measure only.
    """
    k = getattr(model, "k", train_cfg.k)
    if k != train_cfg.k:
        raise ValueError(f"model expects K={k} but the environment has K={train_cfg.k}")
    pool = unseen_shapes(train_cfg)
    n_shapes = shapes_per_batch or len(train_cfg.shape_set)
    if n_shapes > len(pool):
        raise ValueError("not enough unseen shapes")
    train_idx = train_cfg.shape_indices
    report = MetricsReport()
    for _ in range(n_batches):
        chosen = rng.choice(len(pool), size=n_shapes, replace=False)
        cfg = replace(train_cfg, shape_set=tuple(pool[i] for i in sorted(chosen)))
        z = sample_scenes(cfg, rng, scenes_per_batch)
        occ = occupied(z)
        if np.isin(shape_index(z[..., SHAPE])[occ], train_idx).any():
            raise RuntimeError("a training shape leaked into the generalization batch")
        a, _ = sample_actions(z, cfg, rng)
        evaluate_scenes(model, z, a, cfg, report)
    return report.without("pc_unblocked_correct_shape")
