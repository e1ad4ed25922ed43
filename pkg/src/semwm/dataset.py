"""Line-delimited JSON transition datasets.

One transition per line, keys in this order::

    {"trajectory": int, "t": int, "scene_t": [[8 floats] x K], "action": [4 floats], "scene_t1": [[8 floats] x K]}

Floats are written with their shortest round-trip representation, so reading a
file back gives bit-identical arrays.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .env import rollout_batch
from .scene import EnvConfig


def generate(cfg: EnvConfig, rng: np.random.Generator, n_trajectories: int, length: int = 10,
             block: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """``n_trajectories`` rollouts, generated ``block`` at a time; returns (scenes, actions)."""
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    scenes, actions = [], []
    done = 0
    while done < n_trajectories:
        n = min(block, n_trajectories - done)
        s, a = rollout_batch(cfg, rng, n, length)
        scenes.append(s)
        actions.append(a)
        done += n
    return np.concatenate(scenes), np.concatenate(actions)


def write_jsonl(path, scenes: np.ndarray, actions: np.ndarray) -> int:
    """Write trajectories ``scenes (n, L+1, K, 8)``, ``actions (n, L, 4)``; returns the line count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w") as fh:
        for i in range(scenes.shape[0]):
            for t in range(actions.shape[1]):
                rec = {
                    "trajectory": i,
                    "t": t,
                    "scene_t": scenes[i, t].tolist(),
                    "action": actions[i, t].tolist(),
                    "scene_t1": scenes[i, t + 1].tolist(),
                }
                fh.write(json.dumps(rec) + "\n")
                count += 1
    return count


def read_jsonl(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat ``(z_t, action, z_t1)`` arrays in file order."""
    z, a, z1 = [], [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                z.append(rec["scene_t"])
                a.append(rec["action"])
                z1.append(rec["scene_t1"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed transition record ({exc})") from None
    return np.array(z, dtype=np.float64), np.array(a, dtype=np.float64), np.array(z1, dtype=np.float64)
