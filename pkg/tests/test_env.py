import numpy as np
import pytest

from conftest import lock, regular
from semwm.env import (
    CLICK,
    DRAG,
    NOOP,
    Drag,
    NoOp,
    ShapeChange,
    decode_actions,
    interpret_action,
    property_delta,
    rollout,
    rollout_batch,
    sample_action,
    sample_actions,
    step,
    step_batch,
)
from semwm.scene import ALL_SHAPES, COLOR, EnvConfig, Scene, encode_scene, occupied, sample_scenes, semantic_oracle, shape_index


def _scene(*objs, k=5):
    return encode_scene(Scene(tuple(objs) + (None,) * (k - len(objs))))


def test_interpret_action_cases(minimal_cfg):
    z = _scene(regular(0.2, 0.2), regular(0.8, 0.8))
    assert interpret_action(z, np.array([0.5, 0.5, 0.2, 0.2]), minimal_cfg) == NoOp()
    assert interpret_action(z, np.array([0.21, 0.2, 0.19, 0.21]), minimal_cfg) == ShapeChange(0)
    assert interpret_action(z, np.array([0.8, 0.8, 0.5, 0.1]), minimal_cfg) == Drag(1, (0.5, 0.1))


def test_drag_moves_fraction_towards_target(minimal_cfg):
    z = _scene(regular(0.2, 0.2))
    z1 = step(z, np.array([0.2, 0.2, 1.0, 0.2]), minimal_cfg)
    assert z1[0, :2] == pytest.approx([0.4, 0.2], abs=1e-15)
    assert np.array_equal(z1[:, 2:], z[:, 2:])
    assert property_delta(z, z1, 0, "position") == pytest.approx(0.2, abs=1e-15)


def test_drag_on_lock_or_locked_object_does_nothing(minimal_cfg):
    a = ALL_SHAPES[0]
    z = _scene(lock(0.2, 0.2, a), regular(0.6, 0.6, a), regular(0.9, 0.1, ALL_SHAPES[13]))
    assert np.array_equal(step(z, np.array([0.2, 0.2, 0.9, 0.9]), minimal_cfg), z)
    assert np.array_equal(step(z, np.array([0.6, 0.6, 0.0, 0.0]), minimal_cfg), z)
    moved = step(z, np.array([0.9, 0.1, 0.5, 0.5]), minimal_cfg)
    assert not np.array_equal(moved, z)


def test_click_cycles_shape_within_set(multi_cfg):
    for i, shape in enumerate(multi_cfg.shape_set):
        z = _scene(regular(0.5, 0.5, shape), k=7)
        z1 = step(z, np.array([0.5, 0.5, 0.5, 0.5]), multi_cfg)
        nxt = multi_cfg.shape_set[(i + 1) % 5]
        assert tuple(z1[0, 2:5]) == nxt


def test_click_on_shape_outside_set_uses_lexicographic_cycle(multi_cfg):
    off = ALL_SHAPES[1]
    assert off not in multi_cfg.shape_set
    z1 = step(_scene(regular(0.5, 0.5, off), k=7), np.array([0.5, 0.5, 0.5, 0.5]), multi_cfg)
    assert shape_index(z1[0, 2:5]) == 2
    z1 = step(_scene(regular(0.5, 0.5, ALL_SHAPES[25]), k=7), np.array([0.5, 0.5, 0.5, 0.5]), multi_cfg)
    assert ALL_SHAPES[25] not in multi_cfg.shape_set
    assert shape_index(z1[0, 2:5]) == 26


def test_click_on_blocked_object_does_nothing(multi_cfg):
    z = _scene(regular(0.5, 0.5, ALL_SHAPES[0]), regular(0.55, 0.5, ALL_SHAPES[7]), k=7)
    assert np.array_equal(step(z, np.array([0.49, 0.5, 0.48, 0.5]), multi_cfg), z)


def test_locks_are_clickable(multi_cfg):
    z = _scene(lock(0.5, 0.5, ALL_SHAPES[0]), k=7)
    z1 = step(z, np.array([0.5, 0.5, 0.5, 0.5]), multi_cfg)
    assert tuple(z1[0, 2:5]) == multi_cfg.shape_set[1]
    assert np.array_equal(z1[0, COLOR], z[0, COLOR])


def test_property_delta_cases():
    z = _scene(regular(0.2, 0.2, (0, 0, 0)))
    assert property_delta(z, z, 0, "position") == 0.0
    assert property_delta(z, z, 0, "shape") == 0.0
    z1 = z.copy()
    z1[0, 4] = 0.5
    assert property_delta(z, z1, 0, "shape") == 0.5
    with pytest.raises(IndexError):
        property_delta(z, z, 5, "shape")
    with pytest.raises(ValueError):
        property_delta(z, z, 0, "colour")


def test_minimal_sampler_only_drags(minimal_cfg, rng):
    z = sample_scenes(minimal_cfg, rng, 100_000)
    a, target = sample_actions(z, minimal_cfg, rng)
    kind, slot = decode_actions(z, a, minimal_cfg)
    assert np.all(kind == DRAG)
    assert np.array_equal(slot, target)
    assert np.all((a >= 0) & (a <= 1))


def test_multi_sampler_drag_click_ratio(multi_cfg, rng):
    z = sample_scenes(multi_cfg, rng, 100_000)
    a, target = sample_actions(z, multi_cfg, rng)
    kind, slot = decode_actions(z, a, multi_cfg)
    assert np.all(kind != NOOP)
    assert np.array_equal(slot, target)
    assert abs((kind == CLICK).mean() - 0.5) < 0.01


def test_target_slot_is_uniform_among_objects(multi_cfg, rng):
    z = sample_scenes(multi_cfg, rng, 50_000)
    n = occupied(z).sum(1)
    _, target = sample_actions(z, multi_cfg, rng)
    # among scenes with 4 objects each of the four slots is hit ~25% of the time
    counts = np.bincount(target[n == 4], minlength=7)[:4]
    assert np.all(np.abs(counts / counts.sum() - 0.25) < 0.02)


def test_minimal_selected_locked_fraction(minimal_cfg):
    rng = np.random.default_rng(11)
    z = sample_scenes(minimal_cfg, rng, 1_000_000)
    _, target = sample_actions(z, minimal_cfg, rng)
    locked, _ = semantic_oracle(z, minimal_cfg)
    frac = locked[np.arange(len(z)), target].mean()
    assert abs(frac - 0.42) < 0.05


def test_sampler_rejects_empty_scene(minimal_cfg, rng):
    with pytest.raises(ValueError):
        sample_action(np.zeros((5, 8)), minimal_cfg, rng)


def test_rollout_chaining_and_determinism(multi_cfg):
    t1 = rollout(multi_cfg, np.random.default_rng(5), 10)
    t2 = rollout(multi_cfg, np.random.default_rng(5), 10)
    assert len(t1) == 10
    for a, b in zip(t1, t2):
        assert np.array_equal(a.scene_t, b.scene_t) and np.array_equal(a.action, b.action)
    for prev, nxt in zip(t1.transitions[:-1], t1.transitions[1:]):
        assert np.array_equal(prev.scene_t1, nxt.scene_t)
    for tr in t1:
        assert np.array_equal(tr.scene_t1, step(tr.scene_t, tr.action, multi_cfg))
    assert len(rollout(multi_cfg, np.random.default_rng(0), 1)) == 1
    with pytest.raises(ValueError):
        rollout(multi_cfg, np.random.default_rng(0), 0)


def test_rollout_scenes_stay_valid(minimal_cfg, multi_cfg, rng):
    for cfg in (minimal_cfg, multi_cfg):
        scenes, actions = rollout_batch(cfg, rng, 1000, 10)
        assert np.all((scenes >= 0) & (scenes <= 1))
        occ = occupied(scenes)
        # objects never appear, vanish or change colour
        assert np.all(occ == occ[:, :1])
        assert np.all(scenes[..., COLOR] == scenes[:, :1, :, COLOR])
        shapes = shape_index(scenes[..., 2:5])[occ]
        assert np.isin(shapes, cfg.shape_indices).all()


def _changed_slots(z, z1):
    return np.any(z != z1, axis=-1)


@pytest.mark.parametrize("scenario", ["minimal", "multi"])
def test_transition_invariants_sweep(scenario, minimal_cfg, multi_cfg):
    cfg = minimal_cfg if scenario == "minimal" else multi_cfg
    rng = np.random.default_rng(21)
    z = sample_scenes(cfg, rng, 100_000)
    sampled, _ = sample_actions(z, cfg, rng)
    # half sampler actions, half arbitrary actions (which include no-ops)
    a = np.where((np.arange(len(z)) % 2 == 0)[:, None], sampled, rng.random((len(z), 4)))
    z1 = step_batch(z, a, cfg)
    kind, slot = decode_actions(z, a, cfg)
    locked, blocked = semantic_oracle(z, cfg)
    changed = _changed_slots(z, z1)
    rows = np.arange(len(z))

    pos_changed = np.any(z[..., :2] != z1[..., :2], axis=-1)
    shape_changed = np.any(z[..., 2:5] != z1[..., 2:5], axis=-1)
    assert not (pos_changed & locked).any()
    assert not (shape_changed & blocked).any()
    assert np.array_equal(z[..., COLOR], z1[..., COLOR])

    assert not changed[kind == NOOP].any()
    effective = ((kind == DRAG) & ~locked[rows, slot]) | ((kind == CLICK) & ~blocked[rows, slot])
    effective &= kind != NOOP
    suppressed = (kind != NOOP) & ~effective
    assert np.all(changed[effective].sum(axis=1) == 1)
    assert np.all(changed[effective][np.arange(effective.sum()), slot[effective]])
    assert not changed[suppressed].any()

    drags = effective & (kind == DRAG)
    disp = np.linalg.norm(z1[rows[drags], slot[drags], :2] - z[rows[drags], slot[drags], :2], axis=-1)
    dist = np.linalg.norm(a[drags, 2:] - z[rows[drags], slot[drags], :2], axis=-1)
    assert np.allclose(disp, cfg.drag_fraction * dist, atol=1e-12)


def test_step_is_deterministic_and_pure(multi_cfg, rng):
    z = sample_scenes(multi_cfg, rng, 100)
    a, _ = sample_actions(z, multi_cfg, rng)
    z_copy = z.copy()
    assert np.array_equal(step_batch(z, a, multi_cfg), step_batch(z, a, multi_cfg))
    assert np.array_equal(z, z_copy)


def test_externally_supplied_click_in_drag_only_config(minimal_cfg):
    z = _scene(regular(0.5, 0.5, minimal_cfg.shape_set[0]))
    z1 = step(z, np.array([0.5, 0.5, 0.5, 0.5]), minimal_cfg)
    assert tuple(z1[0, 2:5]) == minimal_cfg.shape_set[1]
