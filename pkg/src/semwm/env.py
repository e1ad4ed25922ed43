"""Action decoding, the transition function, the random action sampler and rollouts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .scene import ALL_SHAPES, POS, SHAPE, EnvConfig, hit_test, occupied, sample_scene, sample_scenes, semantic_oracle, shape_index

NOOP, DRAG, CLICK = 0, 1, 2
_MAX_RESAMPLE = 10_000


@dataclass(frozen=True)
class Drag:
    slot: int
    target: tuple[float, float]


@dataclass(frozen=True)
class ShapeChange:
    slot: int


@dataclass(frozen=True)
class NoOp:
    pass


ActionIntent = Union[Drag, ShapeChange, NoOp]


@dataclass
class Transition:
    scene_t: np.ndarray
    action: np.ndarray
    scene_t1: np.ndarray


@dataclass
class Trajectory:
    transitions: list[Transition]

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    def __getitem__(self, i):
        return self.transitions[i]


def decode_actions(z: np.ndarray, a: np.ndarray, cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Batched action decoding: returns ``(kind, slot)`` with kind in {NOOP, DRAG, CLICK}.

    ``slot`` is -1 for NoOp.
    """
    a = np.asarray(a, dtype=np.float64)
    first = np.asarray(hit_test(a[..., 0:2], z, cfg))
    second = np.asarray(hit_test(a[..., 2:4], z, cfg))
    kind = np.where(first < 0, NOOP, np.where(second == first, CLICK, DRAG))
    return kind, first


def interpret_action(z: np.ndarray, a: np.ndarray, cfg: EnvConfig) -> ActionIntent:
    kind, slot = decode_actions(np.asarray(z)[None], np.asarray(a)[None], cfg)
    kind, slot = int(kind[0]), int(slot[0])
    if kind == NOOP:
        return NoOp()
    if kind == CLICK:
        return ShapeChange(slot)
    return Drag(slot, (float(a[2]), float(a[3])))


def step_batch(z: np.ndarray, a: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Apply one action to each scene of a batch ``(n, K, 8)``; returns a new array."""
    z = np.asarray(z, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    kind, slot = decode_actions(z, a, cfg)
    locked, blocked = semantic_oracle(z, cfg)
    out = z.copy()
    rows = np.arange(z.shape[0])
    safe_slot = np.maximum(slot, 0)

    drag = (kind == DRAG) & ~locked[rows, safe_slot]
    if drag.any():
        r, k = rows[drag], slot[drag]
        pos = z[r, k, POS]
        moved = pos + cfg.drag_fraction * (a[drag, 2:4] - pos)
        out[r, k, POS] = np.clip(moved, 0.0, 1.0)

    click = (kind == CLICK) & ~blocked[rows, safe_slot]
    if click.any():
        r, k = rows[click], slot[click]
        nxt = cfg.successor_table()[shape_index(z[r, k, SHAPE])]
        out[r, k, SHAPE] = np.asarray(ALL_SHAPES)[nxt]
    return out


def step(z: np.ndarray, a: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    return step_batch(np.asarray(z)[None], np.asarray(a)[None], cfg)[0]


def _uniform_in_disc(rng: np.random.Generator, centres: np.ndarray, radius: float) -> np.ndarray:
    n = centres.shape[0]
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    pts = centres + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    # clipping moves a point towards the centre on that axis, so it stays inside the disc
    return np.clip(pts, 0.0, 1.0)


def sample_actions(z: np.ndarray, cfg: EnvConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample one action per scene of a batch. Returns ``(actions (n, 4), target_slot (n,))``.

    The target object is uniform among occupied slots. Drag and click are
    equally likely when clicks are enabled. Points are resampled until the
    action decodes to the intended intent on the target slot.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    occ = occupied(z)
    counts = occ.sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("cannot sample an action for an empty scene")
    # occupied slots are not necessarily packed for externally supplied scenes
    pick = np.floor(rng.random(n) * counts).astype(np.int64)
    order = np.argsort(~occ, axis=-1, kind="stable")
    target = order[np.arange(n), pick]
    if cfg.click_enabled:
        is_click = rng.random(n) < 0.5
    else:
        is_click = np.zeros(n, dtype=bool)
    centres = z[np.arange(n), target, POS]

    p1 = _uniform_in_disc(rng, centres, cfg.object_radius)
    p2 = np.where(is_click[:, None], _uniform_in_disc(rng, centres, cfg.object_radius), rng.random((n, 2)))

    for _ in range(_MAX_RESAMPLE):
        bad = hit_test(p1, z, cfg) != target
        if not bad.any():
            break
        p1[bad] = _uniform_in_disc(rng, centres[bad], cfg.object_radius)
    else:
        raise RuntimeError("could not sample a first click on the target object")

    for _ in range(_MAX_RESAMPLE):
        h2 = hit_test(p2, z, cfg)
        bad = np.where(is_click, h2 != target, h2 == target)
        if not bad.any():
            break
        idx = np.flatnonzero(bad)
        redo_click = is_click[idx]
        fresh = rng.random((idx.size, 2))
        if redo_click.any():
            fresh[redo_click] = _uniform_in_disc(rng, centres[idx[redo_click]], cfg.object_radius)
        p2[idx] = fresh
    else:
        raise RuntimeError("could not sample a second click consistent with the intent")

    return np.concatenate([p1, p2], axis=-1), target


def sample_action(z: np.ndarray, cfg: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    actions, _ = sample_actions(np.asarray(z)[None], cfg, rng)
    return actions[0]


def rollout(cfg: EnvConfig, rng: np.random.Generator, length: int = 10) -> Trajectory:
    if length < 1:
        raise ValueError("trajectory length must be >= 1")
    z = sample_scene(cfg, rng)
    transitions = []
    for _ in range(length):
        a = sample_action(z, cfg, rng)
        z1 = step(z, a, cfg)
        transitions.append(Transition(z, a, z1))
        z = z1
    return Trajectory(transitions)


def rollout_batch(cfg: EnvConfig, rng: np.random.Generator, n: int, length: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """``n`` trajectories stepped in lockstep.

    Returns ``scenes (n, length + 1, K, 8)`` and ``actions (n, length, 4)``.
    """
    if length < 1:
        raise ValueError("trajectory length must be >= 1")
    z = sample_scenes(cfg, rng, n)
    scenes = [z]
    actions = []
    for _ in range(length):
        a, _ = sample_actions(z, cfg, rng)
        z = step_batch(z, a, cfg)
        actions.append(a)
        scenes.append(z)
    return np.stack(scenes, axis=1), np.stack(actions, axis=1)


def property_delta(scene_a: np.ndarray, scene_b: np.ndarray, slot, prop: str) -> np.ndarray | float:
    """Euclidean norm of the change of ``prop`` ('position' or 'shape') in ``slot``.

    Works on single scenes ``(K, 8)`` or batches ``(..., K, 8)``; ``slot`` may be
    an int or an array aligned with the leading axes.
    """
    dims = {"position": POS, "shape": SHAPE}.get(prop)
    if dims is None:
        raise ValueError(f"unknown property {prop!r}")
    scene_a = np.asarray(scene_a, dtype=np.float64)
    scene_b = np.asarray(scene_b, dtype=np.float64)
    if scene_a.shape != scene_b.shape:
        raise ValueError("scenes must have the same shape")
    k = scene_a.shape[-2]
    slot_arr = np.asarray(slot)
    if np.any(slot_arr < 0) or np.any(slot_arr >= k):
        raise IndexError(f"slot {slot} out of range for K={k}")
    diff = scene_b[..., dims] - scene_a[..., dims]
    if slot_arr.ndim == 0:
        out = np.linalg.norm(diff[..., int(slot_arr), :], axis=-1)
    else:
        out = np.linalg.norm(np.take_along_axis(diff, slot_arr[..., None, None], axis=-2)[..., 0, :], axis=-1)
    return float(out) if np.ndim(out) == 0 else out
