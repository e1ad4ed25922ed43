import zlib

import numpy as np
import pytest

from semwm import autodiff as ad
from semwm.autodiff import Parameter, Tape
from semwm.gradcheck import PRIMITIVES, check_model, check_primitive
from semwm.optim import AdamState, adam_step


def test_relu_forward_example():
    assert ad.relu(np.array([-1.0, 0.0, 2.0])).value.tolist() == [0.0, 0.0, 2.0]


def test_l2_loss_forward_example():
    assert ad.l2_loss(np.array([1.0, 2.0]), np.array([1.0, 4.0])).value == pytest.approx(2.0)


def test_affine_identity_is_exact():
    x = np.random.default_rng(0).normal(size=(3, 4))
    out = ad.affine(x, np.eye(4), np.zeros(4))
    assert np.array_equal(out.value, x)


def test_hand_derived_scalar_gradient():
    # L = (relu(w*x + b) - y)^2 with w=2, x=3, b=-1, y=1: d = 5-1 = 4, dL/dw = 2*4*3, dL/db = 2*4
    w, b = Parameter([[2.0]], "w"), Parameter([-1.0], "b")
    with Tape() as tape:
        loss = ad.l2_loss(ad.relu(ad.affine(np.array([[3.0]]), w, b)), np.array([[1.0]]))
    grads = tape.backward(loss)
    assert loss.value == 16.0
    assert grads["w"].tolist() == [[24.0]]
    assert grads["b"].tolist() == [8.0]


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = max(check_primitive(name, rng) for _ in range(100))
    assert worst < 1e-4


@pytest.mark.parametrize("kind", ["baseline", "internal", "sequential", "parallel"])
@pytest.mark.parametrize("scenario", ["minimal", "multi"])
def test_model_gradients_match_finite_differences(kind, scenario):
    assert check_model(kind, scenario, np.random.default_rng(7)) < 1e-4


def test_parameter_outside_loss_path_gets_zero_gradient():
    used, unused = Parameter(np.ones((2, 2)), "used"), Parameter(np.ones((2, 2)), "unused")
    with Tape() as tape:
        ad.relu(unused)  # recorded but not connected to the loss
        loss = ad.l2_loss(ad.affine(np.ones((1, 2)), used, np.zeros(2)), np.zeros((1, 2)))
    grads = tape.backward(loss)
    assert np.array_equal(grads["unused"], np.zeros((2, 2)))
    assert grads["used"].any()


def test_constant_subgraph_contributes_nothing():
    p = Parameter(np.array([1.0, -2.0]), "p")
    const = np.array([3.0, 4.0])
    with Tape() as tape:
        loss = ad.l2_loss(ad.concat([p, ad.relu(const)], axis=0), np.zeros(4))
    assert len(tape.records) == 2  # relu on a constant is not recorded
    grads = tape.backward(loss)
    assert np.allclose(grads["p"], 2 * p.value / 4)


def test_shared_input_gradients_accumulate():
    p = Parameter(np.array([1.5]), "p")
    with Tape() as tape:
        loss = ad.sum(ad.concat([p, p, p], axis=0))
    assert tape.backward(loss)["p"].tolist() == [3.0]


def test_backward_twice_raises():
    p = Parameter(np.ones(3), "p")
    with Tape() as tape:
        loss = ad.sum(p)
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)
    tape.reset()
    with tape:
        loss = ad.sum(p)
    assert tape.backward(loss)["p"].tolist() == [1.0, 1.0, 1.0]


def test_non_scalar_loss_rejected():
    p = Parameter(np.ones(3), "p")
    with Tape() as tape:
        out = ad.relu(p)
    with pytest.raises(ValueError):
        tape.backward(out)


def test_no_tape_means_plain_evaluation():
    p = Parameter(np.ones(2), "p")
    assert ad.sum(p).value == 2.0
    assert ad.current_tape() is None


def test_concat_splits_gradient():
    a, b = Parameter(np.zeros((2, 1)), "a"), Parameter(np.zeros((2, 2)), "b")
    weights = np.arange(6.0).reshape(2, 3)
    with Tape() as tape:
        loss = ad.sum(ad.sum(ad.affine(ad.concat([a, b], axis=1), weights.reshape(6, 1)[:3], np.zeros(1))))
    grads = tape.backward(loss)
    assert grads["a"].tolist() == [[0.0], [0.0]]
    assert grads["b"].tolist() == [[1.0, 2.0], [1.0, 2.0]]


def test_shape_errors():
    with pytest.raises(ValueError):
        ad.l2_loss(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(np.zeros((2, 3)), np.zeros(3))


# -- Adam ----------------------------------------------------------------------

def _numpy_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat, vhat = m / (1 - b1 ** t), v / (1 - b2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


def test_adam_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.0, -2.0]), "p")
    adam_step({"p": p}, {"p": np.zeros(2)}, AdamState())
    assert p.value.tolist() == [1.0, -2.0]


def test_adam_first_step_moves_by_learning_rate():
    p = Parameter(np.array([1.0]), "p")
    adam_step({"p": p}, {"p": np.array([0.5])}, AdamState())
    assert p.value[0] == pytest.approx(0.999, abs=1e-9)


def test_adam_matches_numpy_reference_and_is_deterministic():
    rng = np.random.default_rng(3)
    grads = [rng.normal(size=(4, 3)) for _ in range(100)]
    start = rng.normal(size=(4, 3))
    runs = []
    for _ in range(2):
        p = Parameter(start.copy(), "p")
        state = AdamState()
        for g in grads:
            adam_step({"p": p}, {"p": g}, state)
        runs.append(p.value.copy())
    assert np.array_equal(runs[0], runs[1])
    assert np.allclose(runs[0], _numpy_adam(start, grads), rtol=0, atol=1e-12)


def test_adam_rejects_non_finite_and_mismatched_gradients():
    p = Parameter(np.ones(2), "p")
    state = AdamState()
    with pytest.raises(FloatingPointError):
        adam_step({"p": p}, {"p": np.array([1.0, np.nan])}, state)
    assert state.t == 0 and p.value.tolist() == [1.0, 1.0]
    with pytest.raises(ValueError):
        adam_step({"p": p}, {"p": np.ones(3)}, state)


def test_checker_detects_a_wrong_backward(monkeypatch):
    def leaky_backward_relu(x):
        x = ad.as_tensor(x)
        return ad._emit(np.maximum(x.value, 0), (x,), lambda g: (g,), "relu")  # gradient ignores the mask

    monkeypatch.setattr(ad, "relu", leaky_backward_relu)
    assert check_primitive("relu", np.random.default_rng(0)) > 1e-2


def test_adam_moments_never_become_subnormal():
    p = Parameter(np.array([1.0, 1.0]), "p")
    state = AdamState()
    adam_step({"p": p}, {"p": np.array([1.0, 1e-3])}, state)
    for _ in range(8000):
        adam_step({"p": p}, {"p": np.zeros(2)}, state)
    tiny = np.finfo(np.float64).tiny
    for arr in (state.m["p"], state.v["p"]):
        assert np.all((arr == 0) | (np.abs(arr) >= tiny))
