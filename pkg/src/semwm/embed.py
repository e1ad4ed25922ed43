"""Semantic embedding export and a linear probe over it.

Every non-empty slot of a sampled scene becomes one record holding the
perceptual vector z^k, the semantic embedding zhat^k and the ground-truth
semantic label. The probe is a single softmax layer trained by full-batch
gradient descent on standardized zhat; its held-out accuracy measures how
linearly decodable the semantic states are, and the same probe trained to
predict the shape index measures how much shape identity leaks into zhat.

CSV column order: ``scene_id, slot, z_0..z_7, zhat_0..zhat_{N-1}, label,
shape_idx, is_lock`` followed by ``action_0..action_3`` for the internal
variant, whose embedding depends on the action. To view the clusters, load
the CSV and run any 2-D embedding (e.g. t-SNE) on the ``zhat_*`` columns,
colouring points by ``label``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .env import sample_actions
from .scene import FEATURES, SHAPE, EnvConfig, is_lock, occupied, sample_scenes, semantic_oracle, shape_index

LABELS = ("none", "L", "B", "B+L")
PROBE_STEPS = 2000
PROBE_LR = 0.1


def semantic_labels(locked: np.ndarray, blocked: np.ndarray) -> np.ndarray:
    """Label codes indexing :data:`LABELS`: bit 0 locked, bit 1 blocked."""
    return locked.astype(np.int64) + 2 * blocked.astype(np.int64)


@dataclass
class EmbeddingRecords:
    scene_id: np.ndarray
    slot: np.ndarray
    z: np.ndarray
    zhat: np.ndarray
    label: np.ndarray
    shape_idx: np.ndarray
    is_lock: np.ndarray
    action: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.scene_id)

    def columns(self) -> list[str]:
        cols = ["scene_id", "slot"] + [f"z_{i}" for i in range(FEATURES)]
        cols += [f"zhat_{i}" for i in range(self.zhat.shape[1])] + ["label", "shape_idx", "is_lock"]
        if self.action is not None:
            cols += [f"action_{i}" for i in range(self.action.shape[1])]
        return cols

    def label_counts(self) -> dict[str, int]:
        counts = np.bincount(self.label, minlength=len(LABELS))
        return {name: int(c) for name, c in zip(LABELS, counts)}


def collect_embeddings(model, cfg: EnvConfig, n_scenes: int, rng: np.random.Generator) -> EmbeddingRecords:
    """Embed ``n_scenes`` fresh scenes; one record per occupied slot."""
    if model.kind == "baseline":
        raise ValueError("the baseline model has no semantic embedding to export")
    if model.k != cfg.k:
        raise ValueError(f"model expects K={model.k} but the environment has K={cfg.k}")
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    z = sample_scenes(cfg, rng, n_scenes)
    action = None
    if model.kind == "internal":
        action, _ = sample_actions(z, cfg, rng)
    zhat = model.semantic_readout(z, action)
    locked, blocked = semantic_oracle(z, cfg)
    occ = occupied(z)
    scene_id, slot = np.nonzero(occ)
    return EmbeddingRecords(
        scene_id=scene_id,
        slot=slot,
        z=z[scene_id, slot],
        zhat=zhat[scene_id, slot],
        label=semantic_labels(locked, blocked)[scene_id, slot],
        shape_idx=shape_index(z[scene_id, slot][:, SHAPE]),
        is_lock=is_lock(z)[scene_id, slot],
        action=None if action is None else action[scene_id],
    )


def scenes_for_records(cfg: EnvConfig, n_records: int) -> int:
    """Number of scenes whose expected object count is ``n_records``."""
    lo_l, hi_l = cfg.lock_count_range
    lo_r, hi_r = cfg.regular_count_range
    per_scene = (lo_l + hi_l) / 2 + (lo_r + hi_r) / 2
    return max(1, int(np.ceil(n_records / per_scene)))


def write_csv(records: EmbeddingRecords, path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(records.columns())
        for i in range(len(records)):
            row = [int(records.scene_id[i]), int(records.slot[i])]
            row += [repr(float(v)) for v in records.z[i]]
            row += [repr(float(v)) for v in records.zhat[i]]
            row += [LABELS[records.label[i]], int(records.shape_idx[i]), int(records.is_lock[i])]
            if records.action is not None:
                row += [repr(float(v)) for v in records.action[i]]
            w.writerow(row)
    return len(records)


def read_csv(path) -> EmbeddingRecords:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    col = {name: i for i, name in enumerate(header)}
    zhat_cols = [c for c in header if c.startswith("zhat_")]
    action_cols = [c for c in header if c.startswith("action_")]

    def floats(names):
        return np.array([[float(r[col[n]]) for n in names] for r in rows], dtype=np.float64).reshape(len(rows), len(names))

    def ints(name):
        return np.array([int(r[col[name]]) for r in rows], dtype=np.int64)

    return EmbeddingRecords(
        scene_id=ints("scene_id"),
        slot=ints("slot"),
        z=floats([f"z_{i}" for i in range(FEATURES)]),
        zhat=floats(zhat_cols),
        label=np.array([LABELS.index(r[col["label"]]) for r in rows], dtype=np.int64),
        shape_idx=ints("shape_idx"),
        is_lock=ints("is_lock").astype(bool),
        action=floats(action_cols) if action_cols else None,
    )


def export_embeddings(model, cfg: EnvConfig, n_scenes: int, rng: np.random.Generator, path) -> int:
    """Write the embeddings of ``n_scenes`` fresh scenes to ``path`` as CSV; returns the record count."""
    return write_csv(collect_embeddings(model, cfg, n_scenes, rng), path)


# -- linear probe --------------------------------------------------------------

@dataclass
class ProbeFit:
    accuracy: float
    majority_rate: float
    confusion: np.ndarray  # rows true class, columns predicted, over held-out records
    classes: np.ndarray


@dataclass
class ProbeReport:
    accuracy: float
    majority_rate: float
    confusion: dict[str, dict[str, int]]
    shape_leakage: Optional[float]
    shape_majority_rate: Optional[float]
    n_train: int
    n_test: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fit_softmax_probe(x_train, y_train, x_test, y_test, steps: int = PROBE_STEPS, lr: float = PROBE_LR) -> ProbeFit:
    """Multinomial logistic regression by full-batch gradient descent on standardized features."""
    classes = np.unique(np.concatenate([y_train, y_test]))
    if len(np.unique(y_train)) < 2:
        raise ValueError("the probe needs at least two distinct labels in the training split")
    lookup = {c: i for i, c in enumerate(classes)}
    yt = np.array([lookup[c] for c in y_train])
    ye = np.array([lookup[c] for c in y_test])

    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std[std < 1e-12] = 1.0
    xt = (x_train - mean) / std
    xe = (x_test - mean) / std

    w = Parameter(np.zeros((xt.shape[1], len(classes))), "probe.W")
    b = Parameter(np.zeros(len(classes)), "probe.b")
    for _ in range(steps):
        with ad.Tape() as tape:
            loss = ad.softmax_cross_entropy(ad.affine(xt, w, b), yt)
        grads = tape.backward(loss)
        w.value -= lr * grads["probe.W"]
        b.value -= lr * grads["probe.b"]

    pred = np.argmax(ad.affine(xe, w, b).value, axis=1)
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(confusion, (ye, pred), 1)
    majority = np.bincount(yt, minlength=len(classes)).argmax()
    return ProbeFit(
        accuracy=float((pred == ye).mean()),
        majority_rate=float((ye == majority).mean()),
        confusion=confusion,
        classes=classes,
    )


def linear_probe(records: EmbeddingRecords, train_fraction: float = 0.8, rng: Optional[np.random.Generator] = None,
                 steps: int = PROBE_STEPS, lr: float = PROBE_LR) -> ProbeReport:
    """Held-out accuracy of a linear classifier from zhat to the semantic label, plus shape leakage."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if len(np.unique(records.label)) < 2:
        raise ValueError("linear probe needs at least two distinct semantic labels")
    rng = rng if rng is not None else np.random.default_rng(0)
    order = rng.permutation(len(records))
    n_train = int(round(train_fraction * len(records)))
    if n_train < 1 or n_train >= len(records):
        raise ValueError("too few records for a train/test split")
    tr, te = order[:n_train], order[n_train:]
    x = records.zhat

    fit = fit_softmax_probe(x[tr], records.label[tr], x[te], records.label[te], steps, lr)
    confusion = {LABELS[t]: {LABELS[p]: 0 for p in range(len(LABELS))} for t in range(len(LABELS))}
    for i, t in enumerate(fit.classes):
        for j, p in enumerate(fit.classes):
            confusion[LABELS[t]][LABELS[p]] = int(fit.confusion[i, j])

    leakage = leak_majority = None
    if len(np.unique(records.shape_idx[tr])) >= 2:
        shape_fit = fit_softmax_probe(x[tr], records.shape_idx[tr], x[te], records.shape_idx[te], steps, lr)
        leakage, leak_majority = shape_fit.accuracy, shape_fit.majority_rate

    return ProbeReport(
        accuracy=fit.accuracy,
        majority_rate=fit.majority_rate,
        confusion=confusion,
        shape_leakage=leakage,
        shape_majority_rate=leak_majority,
        n_train=len(tr),
        n_test=len(te),
    )
