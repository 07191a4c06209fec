import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intentgrasp.demofile import read_demos, write_demos
from intentgrasp.demogen import (
    AugmentRanges, DemoDataset, EncodedGrasp, InfeasibleGrasp, augment_grasp, encoded_grasps, filter_perfect,
    generate_dataset, replay,
)
from intentgrasp.sim import World, make_object
from intentgrasp.trajseg import GripperPose

WORLD = World()
GRASPS = encoded_grasps(WORLD)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(40, seed=7)


def test_encoded_grasps_have_four_waypoints_and_one_closure():
    for type_id, g in GRASPS.items():
        assert g.type_id == type_id
        assert len(g.waypoints) == 4
        assert g.close_index == 2


def test_encoded_grasp_rejects_reopening():
    wps = tuple(GripperPose(x=0.2, z=0.1, psi=p) for p in (0, 1, 0, 1))
    with pytest.raises(ValueError, match="reopen"):
        EncodedGrasp(9, "bad", make_object("block", 0.2), wps)
    with pytest.raises(ValueError, match="four"):
        EncodedGrasp(9, "bad", make_object("block", 0.2), wps[:3])


@pytest.mark.parametrize("type_id", [1, 2, 3])
def test_identity_augmentation_is_a_no_op(type_id):
    g = GRASPS[type_id]
    assert augment_grasp(g) == g


@pytest.mark.parametrize("type_id", [1, 2, 3])
def test_translation_shifts_every_waypoint(type_id):
    g = GRASPS[type_id]
    moved = augment_grasp(g, -0.03 if type_id > 1 else 0.10)
    shift = -0.03 if type_id > 1 else 0.10
    for a, b in zip(g.waypoints, moved.waypoints):
        assert b.x == pytest.approx(a.x + shift, abs=1e-12)
        assert (b.z, b.beta, b.psi) == (a.z, a.beta, a.psi)


@settings(max_examples=50, deadline=None)
@given(type_id=st.sampled_from([1, 2, 3]), dx=st.floats(-0.2, 0.2))
def test_translation_preserves_relative_geometry(type_id, dx):
    g = GRASPS[type_id]
    np.testing.assert_allclose(augment_grasp(g, dx).relative_offsets(), g.relative_offsets(), atol=1e-12)


@pytest.mark.parametrize("type_id", [2, 3])
def test_card_width_scale_keeps_standoff_from_near_edge(type_id):
    g = GRASPS[type_id]
    big = augment_grasp(g, -0.04, (1.5, 1.5), world=WORLD)
    edge0 = g.obj.x - g.obj.width / 2
    edge1 = big.obj.x - big.obj.width / 2
    for a, b in zip(g.waypoints, big.waypoints):
        assert b.x - edge1 == pytest.approx(a.x - edge0, abs=1e-12)
    assert replay(big, WORLD).success


def test_mirror_reflects_offsets_and_pitch():
    g = GRASPS[3]
    m = augment_grasp(g, mirror=True)
    np.testing.assert_allclose(m.relative_offsets()[:, 0], -g.relative_offsets()[:, 0], atol=1e-12)
    assert [w.beta for w in m.waypoints] == [-w.beta for w in g.waypoints]
    assert m.mirrored and not augment_grasp(m, mirror=True).mirrored


def test_infeasible_augmentation_is_rejected():
    with pytest.raises(InfeasibleGrasp):
        augment_grasp(GRASPS[2], 0.05, world=WORLD)        # card through the wall
    with pytest.raises(InfeasibleGrasp):
        augment_grasp(GRASPS[2], -0.3, world=WORLD)        # approach waypoint off the table
    with pytest.raises(ValueError):
        augment_grasp(GRASPS[1], scale=(0.0, 1.0))


@pytest.mark.parametrize("type_id", [1, 2, 3])
def test_nominal_replays_succeed(type_id):
    traj = replay(GRASPS[type_id], WORLD)
    assert traj.success
    assert traj.poses.shape == (5, 7)
    assert traj.meta["grasp_type"] == type_id
    assert len(traj.meta["actions"]) == 4


def test_top_down_grasp_of_a_flat_card_fails():
    card = make_object("card", 0.25)
    assert not replay(GRASPS[1], WORLD, scene=[card]).success


def test_replay_records_home_then_each_waypoint():
    g = GRASPS[1]
    traj = replay(g, WORLD)
    assert traj.poses[0][0] == WORLD.home_x and traj.poses[0][2] == WORLD.home_z
    for w, p in zip(g.waypoints, traj.poses[1:]):
        assert p[0] == pytest.approx(w.x) and p[2] == pytest.approx(w.z) and p[6] == w.psi
    assert np.all(traj.image_index == 0) and traj.images.shape[0] == 1


def test_counts_and_imperfect_fraction(dataset):
    assert len(dataset) == 120
    assert dataset.counts_per_type() == {1: 40, 2: 40, 3: 40}
    assert 0.0 < dataset.imperfect_fraction < 0.5
    rep = dataset.report()
    assert rep["demos"] == 120 and rep["imperfect_fraction"] == dataset.imperfect_fraction


def test_block_demos_always_succeed(dataset):
    assert all(t.success for t in dataset if t.meta["grasp_type"] == 1)


def test_labels_are_monotone_and_span_all_intents(dataset):
    for t in dataset:
        lab = np.asarray(t.labels)
        assert np.all(np.diff(lab) >= 0)
        assert set(lab.tolist()) == {1, 2, 3}


def test_generation_is_deterministic(dataset, tmp_path):
    again = generate_dataset(40, seed=7)
    write_demos(tmp_path / "a.jsonl", dataset.trajectories)
    write_demos(tmp_path / "b.jsonl", again.trajectories)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back = read_demos(tmp_path / "a.jsonl")
    assert [t.meta["demo_id"] for t in back] == [t.meta["demo_id"] for t in dataset]


def test_single_demo_regenerates_independently(dataset):
    one = generate_dataset(1, seed=7, types=(2,))
    np.testing.assert_array_equal(one.trajectories[0].poses, dataset.trajectories[40].poses)


def test_generate_rejects_empty_budget():
    with pytest.raises(ValueError):
        generate_dataset(0, seed=0)


def test_filter_perfect(dataset):
    kept = filter_perfect(dataset)
    failures = sum(not t.success for t in dataset)
    assert len(kept) == len(dataset) - failures
    assert all(t.success for t in kept)
    assert len(filter_perfect(kept)) == len(kept)
    with pytest.raises(ValueError):
        filter_perfect(DemoDataset([t for t in dataset if not t.success]))


def test_augment_ranges_roundtrip():
    r = AugmentRanges(translate={1: (-0.1, 0.1), 2: (-0.02, 0.0), 3: (-0.02, 0.0)}, mirror_prob=0.0)
    assert AugmentRanges.from_dict(r.to_dict()) == r
