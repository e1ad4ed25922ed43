"""Central finite-difference checks of the reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .models import build_model

H = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _forward(fn: Callable[[], Tensor]) -> tuple[float, list[np.ndarray]]:
    with ad.Tape() as tape:
        loss = fn()
    return float(loss.value), [out.value > 0 for out in tape.outputs("relu")]


def check(fn: Callable[[], Tensor], params: Sequence[Parameter], h: float = H,
          max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Relative error between tape gradients and central differences.

    ``fn`` computes a scalar from ``params``, whose values are perturbed in
    place. With ``max_coords`` only that many randomly chosen coordinates are
    compared. Coordinates whose perturbation flips a ReLU (the function is not
    differentiable there) are skipped.
    """
    with ad.Tape() as tape:
        loss = fn()
    base_masks = [out.value > 0 for out in tape.outputs("relu")]
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.value.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[p] for p in pick]

    a_vals, n_vals = [], []
    for i, j in coords:
        flat = params[i].value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        plus, m_plus = _forward(fn)
        flat[j] = orig - h
        minus, m_minus = _forward(fn)
        flat[j] = orig
        kink = any((a != b).any() for a, b in zip(base_masks, m_plus)) or \
            any((a != b).any() for a, b in zip(base_masks, m_minus))
        if kink:
            continue
        a_vals.append(analytic[i].reshape(-1)[j])
        n_vals.append((plus - minus) / (2 * h))
    if not a_vals:
        raise RuntimeError("every sampled coordinate sits on a ReLU kink")
    return relative_error(np.array(a_vals), np.array(n_vals))


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    """One random instance per primitive, each reduced to a scalar by an L2 loss against a random target."""
    def l2(t, target):
        return ad.l2_loss(t, target)

    b, n, m, o = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
    t_affine = rng.normal(size=(b, n, o))
    t_relu = rng.normal(size=(b, m))
    t_concat = rng.normal(size=(b, n + m))
    t_sum = rng.normal(size=(b, m))
    t_mean = rng.normal(size=(b,))
    t_reshape = rng.normal(size=(n * m,))
    t_bcast = rng.normal(size=(b, n, m))
    idx = rng.integers(0, n, size=(n, 2))
    t_take = rng.normal(size=(b, n, 2, m))
    target = rng.normal(size=(b, m))
    labels = rng.integers(0, m, size=b)
    return {
        "affine": (lambda L: l2(ad.affine(L[0], L[1], L[2]), t_affine),
                   [rng.normal(size=(b, n, m)), rng.normal(size=(m, o)), rng.normal(size=(o,))]),
        "relu": (lambda L: l2(ad.relu(L[0]), t_relu), [_away_from_zero(rng, (b, m))]),
        "concat": (lambda L: l2(ad.concat([L[0], L[1]], axis=1), t_concat),
                   [rng.normal(size=(b, n)), rng.normal(size=(b, m))]),
        "sum": (lambda L: l2(ad.sum(L[0], axis=1), t_sum), [rng.normal(size=(b, n, m))]),
        "mean": (lambda L: l2(ad.mean(L[0], axis=1), t_mean), [rng.normal(size=(b, m))]),
        "reshape": (lambda L: l2(ad.reshape(L[0], (n * m,)), t_reshape), [rng.normal(size=(n, m))]),
        "broadcast_to": (lambda L: l2(ad.broadcast_to(L[0], (b, n, m)), t_bcast), [rng.normal(size=(b, 1, m))]),
        "take": (lambda L: l2(ad.take(L[0], idx, axis=1), t_take), [rng.normal(size=(b, n, m))]),
        "l2_loss": (lambda L: ad.l2_loss(L[0], L[1]), [rng.normal(size=(b, m)), rng.normal(size=(b, m))]),
        "softmax_cross_entropy": (lambda L: ad.softmax_cross_entropy(L[0], labels), [rng.normal(size=(b, m))]),
    }


PRIMITIVES = tuple(primitive_cases(np.random.default_rng(0)))


def check_primitive(name: str, rng: np.random.Generator) -> float:
    fn, inputs = primitive_cases(rng)[name]
    leaves = [Parameter(x, f"input{i}") for i, x in enumerate(inputs)]
    return check(lambda: fn(leaves), leaves)


def check_model(kind: str, scenario: str, rng: np.random.Generator, batch: int = 2, max_coords: int = 200) -> float:
    """Gradient check of a full-size model variant on random scenes and actions.

    Compares the gradient with respect to a random subset of all parameter
    coordinates.
    """
    from .config import env_preset
    from .env import sample_actions, step_batch
    from .scene import sample_scenes

    cfg = env_preset(scenario)
    model = build_model(kind, cfg.k, scenario, rng)
    z = sample_scenes(cfg, rng, batch)
    a, _ = sample_actions(z, cfg, rng)
    target = step_batch(z, a, cfg)
    params = model.parameters()
    return check(lambda: ad.l2_loss(model.forward(z, a).prediction, target), params, max_coords=max_coords, rng=rng)
