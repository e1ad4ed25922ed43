"""A small dense-tensor reverse-mode differentiation engine.

Operations are recorded on the active :class:`Tape` (entered with ``with Tape()
as tape:``). Outside a tape the same functions simply compute values, which is
how inference runs. Only the primitives the world models and the linear probe
need are provided; there is no implicit broadcasting except for the bias in
:func:`affine` and the explicit :func:`broadcast_to`.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPE = np.float64

_local = threading.local()


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


class Parameter(Tensor):
    """A trainable leaf tensor with a stable identifier."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.value)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive operations for one forward/backward pass."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable, str]] = []
        self._done = False

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable, op: str = "") -> None:
        if self._done:
            raise RuntimeError("tape already consumed by backward(); call reset() first")
        self.records.append((out, inputs, backward, op))

    def outputs(self, op: str) -> list[Tensor]:
        """Outputs of all recorded operations named ``op`` in recording order."""
        return [out for out, _, _, name in self.records if name == op]

    def reset(self) -> None:
        self.records.clear()
        self._done = False

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Back-propagate from the scalar ``loss``.

        Every :class:`Parameter` that appears on the tape gets a fresh ``.grad``
        (zero if the loss does not depend on it). Returns ``{name: grad}``.
        """
        if self._done:
            raise RuntimeError("backward() called twice on the same tape without reset()")
        if loss.value.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        self._done = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        params: dict[int, Parameter] = {}
        for out, inputs, backward, _ in reversed(self.records):
            for t in inputs:
                if isinstance(t, Parameter):
                    params[id(t)] = t
            g = grads.pop(id(out), None)
            if g is None:
                continue
            out.grad = g
            for t, gi in zip(inputs, backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        result = {}
        for key, p in params.items():
            p.grad = grads.get(key, np.zeros_like(p.value))
            result[p.name] = p.grad
        return result


def current_tape() -> Optional[Tape]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _emit(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    tape = current_tape()
    if needs and tape is not None:
        tape.record(out, tuple(inputs), backward, op)
    return out


# -- primitives ---------------------------------------------------------------


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w (in, out)``, ``b (out,)``."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.value.ndim != 2 or b.value.shape != (w.shape[1],) or x.shape[-1] != w.shape[0]:
        raise ValueError(f"affine shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    lead = x.shape[:-1]
    x2 = x.value.reshape(-1, w.shape[0])  # 2-D matmul is much faster than the batched form
    out = (x2 @ w.value + b.value).reshape(lead + (w.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.value.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _emit(out, (x, w, b), backward, "affine")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    # np.maximum keeps NaN, so a diverging input cannot hide behind the ReLU
    return _emit(np.maximum(x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].value.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.value.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise ValueError(f"concat shape mismatch: {[t.shape for t in tensors]} along axis {axis}")
    out = np.concatenate([t.value for t in tensors], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _emit(out, tensors, backward, "concat")


def sum(x, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = x.value.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _emit(out, (x,), backward, "sum")


def mean(x, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    count = x.value.size if axis is None else x.shape[axis]
    out = x.value.mean(axis=axis)

    def backward(g):
        g = g / count
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _emit(out, (x,), backward, "mean")


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    return _emit(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def broadcast_to(x, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast; ``x`` must have the same rank as ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.value.ndim != len(shape):
        raise ValueError(f"broadcast_to needs equal rank: {x.shape} -> {shape}")
    out = np.broadcast_to(x.value, shape)
    axes = tuple(i for i, (a, b) in enumerate(zip(x.shape, shape)) if a == 1 and b != 1)

    def backward(g):
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _emit(out, (x,), backward, "broadcast_to")


def take(x, indices, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array (like ``np.take``)."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % x.value.ndim
    out = np.take(x.value, idx, axis=ax)

    def backward(g):
        gx = np.zeros_like(x.value)
        # move the gathered axes to the front so np.add.at can scatter along ax
        moved = np.moveaxis(gx, ax, 0)
        gm = np.moveaxis(g.reshape(x.shape[:ax] + (idx.size,) + x.shape[ax + 1:]), ax, 0)
        np.add.at(moved, idx.reshape(-1), gm)
        return (gx,)

    return _emit(out, (x,), backward, "take")


def l2_loss(pred, target) -> Tensor:
    """Mean of squared elementwise differences over all elements."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"l2_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.value - target.value
    n = diff.size
    out = np.array(np.mean(diff * diff))

    def backward(g):
        gd = (2.0 / n) * g * diff
        return gd, -gd

    return _emit(out, (pred, target), backward, "l2_loss")


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels (n,)`` under ``logits (n, c)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross-entropy shape mismatch: {logits.shape} vs {labels.shape}")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = labels.shape[0]
    out = np.array(-logp[np.arange(n), labels].mean())

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _emit(out, (logits,), backward, "softmax_cross_entropy")


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def parameters_of(objs: Iterable[Parameter]) -> dict[str, Parameter]:
    return {p.name: p for p in objs}
