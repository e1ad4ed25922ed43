"""Semantic module, object-wise transition model and their four wirings.

Shapes used throughout: scenes ``z`` are ``(B, K, 8)``, actions ``a`` are ``(B, 4)``.
Single scenes ``(K, 8)`` with actions ``(4,)`` are accepted by :meth:`WorldModel.predict`
and :meth:`WorldModel.semantic_readout` and returned without the batch axis.

* baseline:   z~k = T([z^k ; a])
* internal:   zhat = S(z, a);  z~k = T(zhat^k)
* sequential: zhat = S(z);     z~k = T([zhat^k ; a])
* parallel:   zhat = S(z);     z~k = T([z^k ; zhat^k ; a])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .scene import FEATURES

ACTION_DIM = 4
VARIANTS = ("baseline", "internal", "sequential", "parallel")

RELATION_HIDDEN = (64, 64, 64)
TRANSITION_HIDDEN = (512, 512, 512)


class MLP:
    """ReLU after every hidden layer, linear output layer."""

    def __init__(self, name: str, sizes: tuple[int, ...], rng: Optional[np.random.Generator]):
        self.name = name
        self.sizes = tuple(sizes)
        self.layers: list[tuple[Parameter, Parameter]] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)) if rng is not None else np.zeros((fan_in, fan_out))
            self.layers.append((Parameter(w, f"{name}.{i}.W"), Parameter(np.zeros(fan_out), f"{name}.{i}.b")))

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer]

    def hidden(self, x) -> Tensor:
        for w, b in self.layers[:-1]:
            x = ad.relu(ad.affine(x, w, b))
        return x

    def head(self, x) -> Tensor:
        w, b = self.layers[-1]
        return ad.affine(x, w, b)

    def __call__(self, x) -> Tensor:
        return self.head(self.hidden(x))

    @staticmethod
    def count(sizes) -> int:
        return int(sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:])))


class RelationNet:
    """Sum over all ordered pairs (k, j), self-pair included, of g([z^k ; z^j (; a)]), then a linear map."""

    def __init__(self, k: int, out_width: int, with_action: bool, rng, hidden=RELATION_HIDDEN):
        self.k = k
        self.with_action = with_action
        in_width = 2 * FEATURES + (ACTION_DIM if with_action else 0)
        self.net = MLP("S", (in_width, *hidden, out_width), rng)
        self.left = np.repeat(np.arange(k)[:, None], k, axis=1)  # [k, j] -> k
        self.right = self.left.T.copy()  # [k, j] -> j

    def parameters(self) -> list[Parameter]:
        return self.net.parameters()

    def __call__(self, z, a=None) -> Tensor:
        z = ad.as_tensor(z)
        if self.with_action != (a is not None):
            raise ValueError("action must be given iff the semantic module is action-conditioned")
        b, k, m = z.shape
        if k != self.k or m != FEATURES:
            raise ValueError(f"scene shape {z.shape[1:]} does not match K={self.k}, M={FEATURES}")
        parts = [ad.take(z, self.left, axis=1), ad.take(z, self.right, axis=1)]
        if a is not None:
            parts.append(ad.broadcast_to(ad.reshape(a, (b, 1, 1, ACTION_DIM)), (b, k, k, ACTION_DIM)))
        pairs = ad.concat(parts, axis=-1)  # (B, K, K, in)
        g = self.net.hidden(pairs)
        return self.net.head(ad.sum(g, axis=2))


def semantic_width(variant: str, scenario: str) -> int:
    """Width of zhat for a variant in the minimal or multi scenario (0 for the baseline)."""
    extra = {"minimal": 1, "multi": 8}[scenario]
    if variant == "baseline":
        return 0
    if variant == "parallel":
        return extra
    return FEATURES + extra


@dataclass
class Forward:
    prediction: Tensor
    zhat: Optional[Tensor]


class WorldModel:
    def __init__(self, kind: str, k: int, width: int, rng: Optional[np.random.Generator] = None,
                 relation_hidden=RELATION_HIDDEN, transition_hidden=TRANSITION_HIDDEN):
        if kind not in VARIANTS:
            raise ValueError(f"unknown variant {kind!r}; expected one of {VARIANTS}")
        if kind == "baseline":
            if width != 0:
                raise ValueError("the baseline has no semantic module (width must be 0)")
        elif width < 1:
            raise ValueError(f"{kind} needs a positive semantic width")
        self.kind = kind
        self.k = k
        self.width = width
        self.relation_hidden = tuple(relation_hidden)
        self.transition_hidden = tuple(transition_hidden)

        self.semantic = None
        if kind != "baseline":
            self.semantic = RelationNet(k, width, with_action=(kind == "internal"), rng=rng, hidden=relation_hidden)
        in_width = {
            "baseline": FEATURES + ACTION_DIM,
            "internal": width,
            "sequential": width + ACTION_DIM,
            "parallel": FEATURES + width + ACTION_DIM,
        }[kind]
        self.transition = MLP("T", (in_width, *transition_hidden, FEATURES), rng)
        self.params: dict[str, Parameter] = {p.name: p for p in self.parameters()}

    def parameters(self) -> list[Parameter]:
        out = self.semantic.parameters() if self.semantic is not None else []
        return out + self.transition.parameters()

    @property
    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    @staticmethod
    def expected_parameter_count(kind: str, k: int, width: int,
                                 relation_hidden=RELATION_HIDDEN, transition_hidden=TRANSITION_HIDDEN) -> int:
        total = 0
        if kind != "baseline":
            s_in = 2 * FEATURES + (ACTION_DIM if kind == "internal" else 0)
            total += MLP.count((s_in, *relation_hidden, width))
        t_in = {"baseline": FEATURES + ACTION_DIM, "internal": width,
                "sequential": width + ACTION_DIM, "parallel": FEATURES + width + ACTION_DIM}[kind]
        return total + MLP.count((t_in, *transition_hidden, FEATURES))

    def forward(self, z, a) -> Forward:
        """Differentiable forward pass on a batch; records on the active tape if any."""
        z = ad.as_tensor(z)
        if a is None:
            raise ValueError("an action is required for prediction")
        a = ad.as_tensor(a)
        b, k, m = z.shape
        if k != self.k or m != FEATURES:
            raise ValueError(f"scene shape {z.shape[1:]} does not match K={self.k}, M={FEATURES}")
        if a.shape != (b, ACTION_DIM):
            raise ValueError(f"action shape {a.shape} does not match batch ({b}, {ACTION_DIM})")
        a_slots = ad.broadcast_to(ad.reshape(a, (b, 1, ACTION_DIM)), (b, k, ACTION_DIM))
        zhat = None
        if self.kind == "baseline":
            x = ad.concat([z, a_slots], axis=-1)
        elif self.kind == "internal":
            zhat = self.semantic(z, a)
            x = zhat
        elif self.kind == "sequential":
            zhat = self.semantic(z)
            x = ad.concat([zhat, a_slots], axis=-1)
        else:
            zhat = self.semantic(z)
            x = ad.concat([z, zhat, a_slots], axis=-1)
        return Forward(self.transition(x), zhat)

    def predict(self, z, a) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if a is None:
            raise ValueError("an action is required for prediction")
        a = np.asarray(a, dtype=np.float64)
        single = z.ndim == 2
        if single:
            z, a = z[None], a[None]
        out = self.forward(z, a).prediction.value
        return out[0] if single else out

    __call__ = predict

    def semantic_readout(self, z, a=None) -> np.ndarray:
        """The zhat used by :meth:`predict`.

        For the internal variant zhat is conditioned on the action and therefore
        needs one; it is exposed for analysis only and mixes semantics with
        dynamics.
        """
        if self.kind == "baseline":
            raise ValueError("the baseline model has no semantic readout")
        if self.kind == "internal" and a is None:
            raise ValueError("the internal variant's readout needs an action")
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 2
        if single:
            z = z[None]
        if self.kind == "internal":
            a = np.asarray(a, dtype=np.float64)
            out = self.semantic(z, a[None] if single else a).value
        else:
            out = self.semantic(z).value
        return out[0] if single else out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.params):
            raise ValueError("parameter names do not match the model")
        for name, v in values.items():
            if v.shape != self.params[name].value.shape:
                raise ValueError(f"shape mismatch for {name}: {v.shape} vs {self.params[name].value.shape}")
            self.params[name].value = np.array(v, dtype=np.float64)

    def header(self) -> dict:
        return {"kind": self.kind, "k": self.k, "width": self.width,
                "relation_hidden": list(self.relation_hidden), "transition_hidden": list(self.transition_hidden)}


def build_model(kind: str, k: int, scenario_or_width, rng: Optional[np.random.Generator] = None, **kw) -> WorldModel:
    width = scenario_or_width
    if isinstance(scenario_or_width, str):
        width = semantic_width(kind, scenario_or_width)
    return WorldModel(kind, k, width, rng, **kw)
