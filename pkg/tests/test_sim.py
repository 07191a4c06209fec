import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intentgrasp.sim import (
    GripperBody, Motion, ObjectSpec, SceneRanges, SimError, TraceLog, World, check_grasp, coverage_mask,
    load_scene_file, make_object, new_state, normalize_depth, render_depth, reset, sample_scene,
    save_scene_file, step,
)
from intentgrasp.sim import geometry as geo
from intentgrasp.sim.scripted import grid_motions, one_step_grasps, pivot_motions, run_motions, search_plan
from intentgrasp.sim.world import RigidObject

W = World()
BIN_X = (-0.10, -0.05, -0.02, 0.0, 0.02, 0.05, 0.10)
BIN_P = (-0.3, 0.0, 0.3)


def at(state, x, z, pitch=0.0, closed=False):
    return replace(state, gripper=GripperBody(x, z, pitch, closed))


def card_at_gap(gap, scale=1.0):
    w = 0.085 * scale
    return make_object("card", W.x_max - gap - w / 2, scale)


# ---------------------------------------------------------------------------
# geometry


def test_separation_sign():
    a = geo.box(0, 0, 1, 1)
    assert geo.separation(a, geo.box(2, 0, 3, 1)) == pytest.approx(1.0)
    assert geo.separation(a, geo.box(0.5, 0.5, 1.5, 1.5)) == pytest.approx(-0.5)
    assert not geo.overlaps(a, geo.box(1, 0, 2, 1))


def test_push_distance_flat_boxes():
    pusher = geo.box(0.0, 0.0, 0.3, 0.1)
    obj = geo.box(0.2, 0.0, 0.4, 0.05)
    assert geo.push_distance(pusher, obj, +1) == pytest.approx(0.1)
    assert geo.push_distance(geo.box(0.0, 0.2, 0.3, 0.3), obj, +1) == 0.0


def test_drop_clearance():
    assert geo.drop_clearance(geo.box(0, 0.5, 1, 0.6), geo.box(0.5, 0, 2, 0.2)) == pytest.approx(0.3)
    assert geo.drop_clearance(geo.box(0, 0.5, 1, 0.6), geo.box(2, 0, 3, 0.2)) == math.inf


# ---------------------------------------------------------------------------
# rendering


def interval_oracle(x0, x1, z1, shape):
    """Pixels whose square shares positive area with the box [x0, x1] x [0, z1]."""
    h, w = shape
    px, pz = W.x_max / w, W.z_max / h
    out = np.zeros(shape, dtype=bool)
    for r in range(h):
        top = W.z_max - r * pz
        bottom = top - pz
        for c in range(w):
            if c * px < x1 and (c + 1) * px > x0 and bottom < z1 and top > 0.0:
                out[r, c] = True
    return out


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.45), st.floats(0.005, 0.04), st.floats(0.002, 0.2))
def test_box_coverage_matches_interval_oracle(x0, width, height):
    shape = (32, 32)
    px, pz = W.x_max / 32, W.z_max / 32
    x1 = min(x0 + width, W.x_max)
    # keep clear of exact pixel boundaries, where positive-area overlap is ill-conditioned
    for v, p in ((x0, px), (x1, px), (height, pz)):
        frac = (v / p) % 1.0
        if min(frac, 1 - frac) < 1e-6:
            return
    mask = coverage_mask(geo.box(x0, 0.0, x1, height), W, shape)
    np.testing.assert_array_equal(mask, interval_oracle(x0, x1, height, shape))


def test_aligned_block_spans_whole_pixels():
    px, pz = W.x_max / 32, W.z_max / 32
    spec = ObjectSpec("block", width=3.5 * px, height=2.5 * pz, x=10 * px + 1.75 * px)
    img = render_depth(new_state([spec]), "fast")
    cols = np.flatnonzero((img < 1.0).any(axis=0))
    rows = np.flatnonzero((img < 1.0).any(axis=1))
    assert cols.tolist() == [10, 11, 12, 13]
    assert rows.tolist() == [29, 30, 31]
    assert np.allclose(img[img < 1.0], W.camera_distance - spec.depth_y / 2)


def test_empty_scene_renders_background():
    img = render_depth(new_state([]), "full")
    assert img.shape == (120, 120)
    assert np.all(img == W.depth_max)
    assert np.all(normalize_depth(img) == 0.0)


def test_tilted_card_renders_differently():
    flat = card_at_gap(0.0)
    tilted = ObjectSpec("card", flat.width, flat.height, flat.x, theta=0.8, depth_y=flat.depth_y)
    a = render_depth(new_state([flat]))
    b = render_depth(new_state([tilted]))
    assert (b < 1).sum() > (a < 1).sum()
    assert (a < 1).any(axis=1).sum() == 1


def test_render_is_deterministic_and_noise_needs_generator():
    s = new_state([make_object("block", 0.2)])
    np.testing.assert_array_equal(render_depth(s), render_depth(s))
    with pytest.raises(ValueError):
        render_depth(s, noise=0.01)
    a = render_depth(s, noise=0.01, rng=np.random.default_rng(3))
    b = render_depth(s, noise=0.01, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= W.depth_max


def test_cylinder_is_closer_in_the_middle():
    img = render_depth(new_state([make_object("cylinder", 0.25)]), "full")
    row = img[-1]
    hit = np.flatnonzero(row < 1)
    assert row[hit[len(hit) // 2]] < row[hit[0]]


def test_reset_caches_initial_image():
    s, img = reset([make_object("block", 0.25)])
    np.testing.assert_array_equal(s.image0, img)
    assert s.t == 0 and not s.gripper.closed
    s2, _ = step(s, Motion(0.1, -0.1))
    np.testing.assert_array_equal(s2.image0, img)


# ---------------------------------------------------------------------------
# stepping


def test_zero_motion_only_advances_time():
    s = new_state([make_object("block", 0.3)])
    s2, events = step(s, Motion())
    assert s2.t == 1 and events == []
    assert s2.gripper == s.gripper
    assert s2.objects == s.objects


def test_wall_push_tilts_by_kappa_times_distance():
    card = card_at_gap(0.0)
    s = new_state([card])
    face = W.g_max / 2 + W.finger_thickness
    s = at(s, card.x - card.width / 2 - face, 0.0)
    s2, events = step(s, Motion(dx=0.05))
    assert s2.objects[0].theta == pytest.approx(0.5, abs=1e-9)
    assert any(e["event"] == "tilt" for e in events)


def test_tilt_is_capped_at_vertical():
    obj = RigidObject(card_at_gap(0.0), 0.0).tilted_to(10.0, W)
    assert obj.theta == pytest.approx(math.pi / 2)


def test_push_translates_free_object():
    block = make_object("block", 0.2)
    s = at(new_state([block]), 0.2 - 0.025 - 0.08 - 0.01, 0.0)
    s2, _ = step(s, Motion(dx=0.05))
    assert s2.objects[0].x == pytest.approx(0.24)
    assert s2.objects[0].theta == 0.0


def test_descent_stops_on_block():
    block = make_object("block", 0.25)
    s2, events = step(new_state([block]), Motion(dz=-0.10))
    palm_clear = s2.gripper.z + W.finger_length
    assert s2.gripper.z == pytest.approx(0.05)
    assert palm_clear > block.height
    s3, events = step(s2, Motion(dz=-0.10))
    assert s3.gripper.z == pytest.approx(block.height - W.finger_length)
    assert any(e["event"] == "stop_on" for e in events)


def test_close_on_empty_space_fails():
    s2, events = step(new_state([]), Motion(close=True))
    assert s2.terminated and not s2.success
    assert events[-1] == {"event": "close", "success": False}


def test_step_after_termination_raises():
    s2, _ = step(new_state([]), Motion(close=True))
    with pytest.raises(SimError):
        step(s2, Motion())


def test_episode_times_out_after_three_steps():
    s = new_state([make_object("block", 0.3)])
    for _ in range(3):
        assert not s.terminated
        s, _ = step(s, Motion())
    assert s.terminated and not s.success and s.t == 3


# ---------------------------------------------------------------------------
# grasp check


def test_short_upright_block_is_graspable():
    block = ObjectSpec("block", 0.05, 0.04, 0.25)
    s = at(new_state([block]), 0.25, 0.01, closed=True)
    assert check_grasp(s)


def test_flat_card_is_not_graspable():
    card = card_at_gap(0.0)
    s = at(new_state([card]), min(card.x, 0.42), 0.0, closed=True)
    assert not check_grasp(s)


def test_tilted_card_is_graspable():
    card = card_at_gap(0.0)
    tilted = ObjectSpec("card", card.width, card.height, card.x, theta=0.6, depth_y=card.depth_y)
    s = new_state([tilted])
    assert check_grasp(at(s, 0.42, 0.0, closed=True))
    # a barely tilted card still has less than c_min of vertical extent
    slight = ObjectSpec("card", card.width, card.height, card.x, theta=0.02, depth_y=card.depth_y)
    assert not check_grasp(at(new_state([slight]), 0.42, 0.0, closed=True))


def test_two_objects_between_fingers_fail():
    a = ObjectSpec("block", 0.03, 0.04, 0.22)
    b = ObjectSpec("block", 0.03, 0.04, 0.27)
    assert not check_grasp(at(new_state([a, b]), 0.245, 0.01, closed=True))


def test_too_wide_object_fails():
    big = ObjectSpec("block", 0.2, 0.04, 0.25)
    assert not check_grasp(at(new_state([big]), 0.25, 0.01, closed=True))


def test_scene_validation():
    with pytest.raises(SimError):
        new_state([ObjectSpec("block", 0.05, 0.04, 0.49)])
    with pytest.raises(SimError):
        new_state([ObjectSpec("block", 0.05, 0.04, 0.2), ObjectSpec("block", 0.05, 0.04, 0.22)])
    with pytest.raises(ValueError):
        ObjectSpec("sphere", 0.05, 0.04, 0.2)


# ---------------------------------------------------------------------------
# reachability gap


@pytest.mark.parametrize("gap", [0.0, 0.02, 0.04, 0.06, 0.08])
@pytest.mark.parametrize("scale", [0.7, 1.0, 1.3])
def test_flat_card_needs_more_than_one_step(gap, scale):
    s = new_state([card_at_gap(gap, scale)])
    table = grid_motions(BIN_X, BIN_X, BIN_P)
    assert one_step_grasps(s, table) == []
    end = run_motions(s, pivot_motions(s, clearance=0.005))
    assert end.success, (gap, scale)
    assert end.t == 3


def test_plan_search_finds_block_grasp():
    s = new_state([make_object("block", 0.1)])
    plan = search_plan(s, grid_motions(BIN_X, BIN_X))
    assert plan is not None and run_motions(s, plan).success


# ---------------------------------------------------------------------------
# invariants under random play


motion_st = st.builds(Motion, st.sampled_from(BIN_X), st.sampled_from(BIN_X), st.sampled_from(BIN_P),
                      st.booleans())


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["card", "block", "cylinder", "clutter"]), st.integers(0, 2 ** 31 - 1),
       st.lists(motion_st, min_size=3, max_size=3))
def test_random_play_invariants(kind, seed, motions):
    s = new_state(sample_scene(kind, np.random.default_rng(seed), SceneRanges(), W))
    prev = [o.theta for o in s.objects]
    steps = 0
    for m in motions:
        if s.terminated:
            with pytest.raises(SimError):
                step(s, m)
            break
        s, _ = step(s, m)
        steps += 1
        polys = [o.polygon(W) for o in s.objects]
        for i, p in enumerate(polys):
            x0, z0, x1, z1 = geo.bounds(p)
            assert x0 >= -1e-9 and x1 <= W.x_max + 1e-9 and z0 >= -1e-9
            for q in polys[:i]:
                assert not geo.overlaps(p, q, 1e-9)
        thetas = [o.theta for o in s.objects]
        assert all(b >= a - 1e-12 for a, b in zip(prev, thetas))
        assert all(0 <= th <= math.pi / 2 for th in thetas)
        prev = thetas
        g = s.gripper
        for poly in g.polygons(W):
            x0, z0, x1, z1 = geo.bounds(poly)
            assert x0 >= -1e-9 and x1 <= W.x_max + 1e-9 and z0 >= -1e-9 and z1 <= W.z_max + 1e-9
    assert steps <= W.episode_length
    assert s.terminated


def test_step_is_deterministic():
    scene = sample_scene("clutter", np.random.default_rng(5))
    motions = [Motion(0.1, -0.1), Motion(-0.05, -0.1, 0.3), Motion(0.02, 0.0, 0.0, True)]
    a = run_motions(new_state(scene), motions)
    b = run_motions(new_state(scene), motions)
    assert a.snapshot() == b.snapshot()


# ---------------------------------------------------------------------------
# files


def test_scene_file_roundtrip(tmp_path):
    objs = [make_object("block", 0.2), card_at_gap(0.01)]
    world = World(kappa=12.0)
    save_scene_file(tmp_path / "scene.yaml", objs, world)
    back, w2 = load_scene_file(tmp_path / "scene.yaml")
    assert back == objs and w2 == world


def test_world_rejects_unknown_keys():
    with pytest.raises(ValueError, match="gravity"):
        World.from_dict({"gravity": 9.8})


def test_trace_log_writes_one_line_per_step(tmp_path):
    log = TraceLog(tmp_path / "trace.jsonl")
    s = new_state([make_object("block", 0.25)])
    for m in (Motion(0.0, -0.1), Motion(0.0, -0.1), Motion(close=True)):
        s, ev = step(s, m)
        log.log(0, s, [m.dx, m.dz, m.dpitch, int(m.close)], 0.0, ev)
    log.flush()
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    assert len(lines) == 3
    last = json.loads(lines[-1])
    assert last["terminated"] and last["success"]
