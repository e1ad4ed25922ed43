"""Objects, scenes and the ground-truth semantic oracle.

A scene is a fixed number of object slots. Each occupied slot encodes to an
8-vector ``[pos_x, pos_y, shape_0, shape_1, shape_2, hue, sat, val]`` in [0, 1];
empty slots encode to the zero vector. Most functions here work directly on
encoded arrays of shape ``(..., K, 8)`` so that they vectorise over batches of
scenes; :class:`Scene` and :class:`ObjectState` are the typed view used at the
edges (construction, decoding, tests).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

FEATURES = 8
POS = slice(0, 2)
SHAPE = slice(2, 5)
COLOR = slice(5, 8)

SHAPE_LEVELS = (0.0, 0.5, 1.0)
# lexicographic order over components with 0 < 0.5 < 1
ALL_SHAPES: tuple[tuple[float, float, float], ...] = tuple(itertools.product(SHAPE_LEVELS, repeat=3))
LOCK_COLOR = (0.0, 1.0, 1.0)
REGULAR_HUE_RANGE = (0.1, 0.9)


def shape_index(code) -> np.ndarray | int:
    """Lexicographic index (0..26) of one or many shape codes (last axis of size 3)."""
    digits = np.rint(np.asarray(code, dtype=float) * 2).astype(np.int64)
    idx = digits[..., 0] * 9 + digits[..., 1] * 3 + digits[..., 2]
    return int(idx) if idx.ndim == 0 else idx


def shape_code(index: int) -> tuple[float, float, float]:
    return ALL_SHAPES[index]


@dataclass(frozen=True)
class ObjectState:
    position: tuple[float, float]
    shape: tuple[float, float, float]
    color: tuple[float, float, float]

    @property
    def is_lock(self) -> bool:
        return tuple(self.color) == LOCK_COLOR

    def encode(self) -> np.ndarray:
        return np.array([*self.position, *self.shape, *self.color], dtype=np.float64)

    @classmethod
    def decode(cls, row: Sequence[float]) -> "ObjectState":
        row = [float(v) for v in row]
        return cls(position=(row[0], row[1]), shape=(row[2], row[3], row[4]), color=(row[5], row[6], row[7]))


@dataclass(frozen=True)
class Scene:
    slots: tuple[Optional[ObjectState], ...]

    @property
    def k(self) -> int:
        return len(self.slots)

    @classmethod
    def empty(cls, k: int) -> "Scene":
        return cls(slots=(None,) * k)

    def with_slot(self, index: int, obj: Optional[ObjectState]) -> "Scene":
        slots = list(self.slots)
        slots[index] = obj
        return replace(self, slots=tuple(slots))


@dataclass(frozen=True)
class EnvConfig:
    """Environment constants. Lengths are in arena units ([0, 1]^2)."""

    k: int = 5
    lock_count_range: tuple[int, int] = (0, 2)
    regular_count_range: tuple[int, int] = (1, 3)
    shape_set: tuple[tuple[float, float, float], ...] = field(
        default_factory=lambda: (ALL_SHAPES[0], ALL_SHAPES[13], ALL_SHAPES[26])
    )
    object_radius: float = 0.0875
    touch_threshold: Optional[float] = None
    drag_fraction: float = 0.25
    click_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lock_count_range", tuple(int(v) for v in self.lock_count_range))
        object.__setattr__(self, "regular_count_range", tuple(int(v) for v in self.regular_count_range))
        object.__setattr__(self, "shape_set", tuple(tuple(float(c) for c in s) for s in self.shape_set))
        if self.touch_threshold is None:
            object.__setattr__(self, "touch_threshold", 2.0 * self.object_radius)
        self.validate()

    def validate(self) -> None:
        lo_l, hi_l = self.lock_count_range
        lo_r, hi_r = self.regular_count_range
        if not (0 <= lo_l <= hi_l and 0 <= lo_r <= hi_r):
            raise ValueError(f"bad count ranges {self.lock_count_range}, {self.regular_count_range}")
        if hi_l + hi_r > self.k:
            raise ValueError(f"up to {hi_l + hi_r} objects do not fit into {self.k} slots")
        if hi_l + hi_r == 0:
            raise ValueError("configuration never produces an object")
        if not self.shape_set:
            raise ValueError("shape_set is empty")
        for s in self.shape_set:
            if len(s) != 3 or any(c not in SHAPE_LEVELS for c in s):
                raise ValueError(f"invalid shape code {s}")
        if len(set(self.shape_set)) != len(self.shape_set):
            raise ValueError("shape_set entries must be distinct")
        if not 0.0 < self.drag_fraction <= 1.0:
            raise ValueError("drag_fraction must lie in (0, 1]")
        if self.object_radius <= 0 or self.touch_threshold <= 0:
            raise ValueError("object_radius and touch_threshold must be positive")

    @property
    def shape_indices(self) -> np.ndarray:
        return np.array([shape_index(s) for s in self.shape_set], dtype=np.int64)

    def successor_table(self) -> np.ndarray:
        """Map each of the 27 shape indices to the index of the shape a click turns it into."""
        table = (np.arange(27) + 1) % 27
        idx = self.shape_indices
        table[idx] = np.roll(idx, -1)
        return table

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "lock_count_range": list(self.lock_count_range),
            "regular_count_range": list(self.regular_count_range),
            "shape_set": [list(s) for s in self.shape_set],
            "object_radius": self.object_radius,
            "touch_threshold": self.touch_threshold,
            "drag_fraction": self.drag_fraction,
            "click_enabled": self.click_enabled,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown EnvConfig fields: {sorted(unknown)}")
        d = dict(d)
        if "shape_set" in d:
            d["shape_set"] = tuple(tuple(s) for s in d["shape_set"])
        return cls(**d)


def encode_scene(scene: Scene) -> np.ndarray:
    z = np.zeros((scene.k, FEATURES))
    for k, obj in enumerate(scene.slots):
        if obj is not None:
            z[k] = obj.encode()
    return z


def decode_scene(z: np.ndarray) -> Scene:
    z = np.asarray(z)
    return Scene(tuple(ObjectState.decode(row) if row.any() else None for row in z))


def occupied(z: np.ndarray) -> np.ndarray:
    """Boolean mask ``(..., K)`` of non-empty slots."""
    return np.any(z != 0.0, axis=-1)


def is_lock(z: np.ndarray) -> np.ndarray:
    return np.all(z[..., COLOR] == np.array(LOCK_COLOR), axis=-1)


def semantic_oracle(z: np.ndarray, cfg: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth ``(locked, blocked)`` flags of shape ``(..., K)``.

    A slot is locked if it is a lock or any lock in the scene shares its shape.
    A slot is blocked if another occupied slot's centre is strictly closer than
    ``cfg.touch_threshold``. Empty slots are neither.
    """
    z = np.asarray(z, dtype=np.float64)
    occ = occupied(z)
    lock = is_lock(z) & occ
    shapes = shape_index(z[..., SHAPE])
    same_shape = shapes[..., :, None] == shapes[..., None, :]
    locked = occ & (lock | np.any(same_shape & lock[..., None, :], axis=-1))

    pos = z[..., POS]
    dist = np.linalg.norm(pos[..., :, None, :] - pos[..., None, :, :], axis=-1)
    k = z.shape[-2]
    touching = (dist < cfg.touch_threshold) & occ[..., None, :] & ~np.eye(k, dtype=bool)
    blocked = occ & np.any(touching, axis=-1)
    return locked, blocked


def sample_scenes(cfg: EnvConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` encoded scenes, shape ``(n, K, 8)``.

    Occupied slots are packed at the lowest indices, locks first.
    """
    k = cfg.k
    n_locks = rng.integers(cfg.lock_count_range[0], cfg.lock_count_range[1] + 1, size=n)
    n_regular = rng.integers(cfg.regular_count_range[0], cfg.regular_count_range[1] + 1, size=n)
    pos = rng.random((n, k, 2))
    shape_choice = rng.integers(0, len(cfg.shape_set), size=(n, k))
    hue = rng.uniform(*REGULAR_HUE_RANGE, size=(n, k))

    slot = np.arange(k)[None, :]
    lock_mask = slot < n_locks[:, None]
    obj_mask = slot < (n_locks + n_regular)[:, None]

    z = np.zeros((n, k, FEATURES))
    z[..., POS] = pos
    z[..., SHAPE] = np.asarray(cfg.shape_set)[shape_choice]
    z[..., 5] = np.where(lock_mask, LOCK_COLOR[0], hue)
    z[..., 6] = 1.0
    z[..., 7] = 1.0
    z[~obj_mask] = 0.0
    return z


def sample_scene(cfg: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    return sample_scenes(cfg, rng, 1)[0]


def hit_test(points: np.ndarray, z: np.ndarray, cfg: EnvConfig) -> np.ndarray | Optional[int]:
    """Slot whose centre is nearest to each point, among those within ``object_radius``.

    Vectorised over leading axes: ``points (..., 2)`` against ``z (..., K, 8)``
    returns an int array with -1 for misses. A single point against a single
    scene returns an ``int`` or ``None``.
    """
    points = np.asarray(points, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    dist = np.linalg.norm(z[..., POS] - points[..., None, :], axis=-1)
    dist = np.where(occupied(z) & (dist <= cfg.object_radius), dist, np.inf)
    best = np.argmin(dist, axis=-1)  # first minimum -> lowest index on ties
    hit = np.take_along_axis(dist, best[..., None], axis=-1)[..., 0] < np.inf
    out = np.where(hit, best, -1)
    if out.ndim == 0:
        return int(out) if out >= 0 else None
    return out
