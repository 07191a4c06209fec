import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intentgrasp.demofile import read_demos, write_demos
from intentgrasp.trajseg import (
    DemoTrajectory, GripperPose, SegConfig, label_states, offset_poses, optimal_segmentation,
    pose_dissimilarity, segment_and_label, segment_cost,
)

CFG = SegConfig(n=3, lam=1.0, mu=5.0)


def brute_force(poses, cfg):
    """Enumerate every contiguous n-partition; pair sums computed directly."""
    l = len(poses)

    def seg_cost(a, b):
        return math.fsum(pose_dissimilarity(poses[i], poses[j], cfg)
                         for i in range(a, b) for j in range(i + 1, b))

    best, best_cuts = math.inf, None
    for cuts in itertools.combinations(range(1, l), cfg.n - 1):
        edges = (0, *cuts, l)
        total = math.fsum(seg_cost(a, b) for a, b in zip(edges[:-1], edges[1:]))
        if total < best - 1e-12:
            best, best_cuts = total, cuts
    return best, best_cuts


def random_poses(rng, l):
    p = np.zeros((l, 7))
    p[:, :3] = rng.uniform(-0.3, 0.3, size=(l, 3))
    p[:, 3:6] = rng.uniform(-np.pi, np.pi, size=(l, 3))
    p[:, 6] = rng.integers(0, 2, size=l)
    return p


def make_traj(poses, labels=None):
    return DemoTrajectory(poses=poses, images=np.zeros((1, 4, 4)), image_index=np.zeros(len(poses)), labels=labels)


def test_dissimilarity_identity():
    a = GripperPose(0.1, 0.2, 0.3, 0.4, -0.5, 1.0, 1)
    assert pose_dissimilarity(a, a, CFG) == 0.0


def test_dissimilarity_position_l1():
    a = GripperPose(0.1, 0.2, 0.3)
    b = GripperPose(0.11, 0.22, 0.33)
    assert pose_dissimilarity(a, b, CFG) == pytest.approx(0.06, abs=1e-12)


def test_dissimilarity_closure_weight():
    assert pose_dissimilarity(GripperPose(psi=0), GripperPose(psi=1), SegConfig(mu=5.0)) == 5.0


def test_dissimilarity_wraps_angles():
    a = GripperPose(alpha=np.pi - 0.1)
    b = GripperPose(alpha=-np.pi + 0.1)
    assert pose_dissimilarity(a, b, SegConfig(lam=1.0)) == pytest.approx(0.2 / np.pi)
    assert pose_dissimilarity(GripperPose(beta=0.0), GripperPose(beta=np.pi), SegConfig(lam=2.0)) == pytest.approx(2.0)


def test_pose_normalises_angles():
    assert GripperPose(alpha=3 * np.pi).alpha == pytest.approx(np.pi)
    assert GripperPose(alpha=-np.pi).alpha == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        GripperPose(psi=2)


pose_strategy = st.tuples(
    *[st.floats(-1, 1) for _ in range(3)], *[st.floats(-np.pi, np.pi) for _ in range(3)], st.integers(0, 1)
).map(lambda t: GripperPose(*t[:6], psi=t[6]))


@settings(max_examples=200)
@given(pose_strategy, pose_strategy, pose_strategy, st.floats(0, 3), st.floats(0, 6))
def test_dissimilarity_is_a_metric(a, b, c, lam, mu):
    cfg = SegConfig(lam=lam, mu=mu)
    ab = pose_dissimilarity(a, b, cfg)
    assert ab >= 0
    assert ab == pose_dissimilarity(b, a, cfg)
    assert pose_dissimilarity(a, c, cfg) <= ab + pose_dissimilarity(b, c, cfg) + 1e-12


def test_segment_cost_small_cases(rng):
    poses = random_poses(rng, 3)
    assert segment_cost(poses, 1, 2, CFG) == 0.0
    assert segment_cost(poses, 0, 2, CFG) == pytest.approx(pose_dissimilarity(poses[0], poses[1], CFG))
    d01 = pose_dissimilarity(poses[0], poses[1], CFG)
    d02 = pose_dissimilarity(poses[0], poses[2], CFG)
    d12 = pose_dissimilarity(poses[1], poses[2], CFG)
    assert segment_cost(poses, 0, 3, CFG) == pytest.approx(d01 + d02 + d12, rel=1e-12)
    same = np.tile(poses[:1], (3, 1))
    assert segment_cost(same, 0, 3, CFG) == 0.0
    with pytest.raises(ValueError):
        segment_cost(poses, 2, 2, CFG)


def test_singletons_when_n_equals_length(rng):
    poses = random_poses(rng, 5)
    seg = optimal_segmentation(poses, SegConfig(n=5))
    assert seg.boundaries == (1, 2, 3, 4)
    assert seg.total == 0.0
    labelled = label_states(make_traj(poses), seg)
    assert labelled.labels.tolist() == [1, 2, 3, 4, 5]


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_identical_states_cost_nothing(n):
    poses = np.tile([[0.1, 0.0, 0.2, 0.3, 0.0, 0.0, 1.0]], (6, 1))
    assert optimal_segmentation(poses, SegConfig(n=n)).total == 0.0


def test_invalid_n_rejected(rng):
    poses = random_poses(rng, 3)
    with pytest.raises(ValueError):
        optimal_segmentation(poses, SegConfig(n=4))
    with pytest.raises(ValueError):
        SegConfig(n=0)


def test_matches_brute_force(rng):
    for _ in range(150):
        l = int(rng.integers(1, 9))
        n = int(rng.integers(1, min(4, l) + 1))
        poses = random_poses(rng, l)
        cfg = SegConfig(n=n, lam=1.0, mu=5.0)
        seg = optimal_segmentation(poses, cfg)
        expected, cuts = brute_force(poses, cfg)
        assert abs(seg.total - expected) <= 1e-9
        assert seg.boundaries == cuts
        assert seg.total == math.fsum(seg.costs)


def test_lexicographic_tie_break():
    # two identical halves: any interior cut of the constant runs ties
    poses = np.zeros((4, 7))
    seg = optimal_segmentation(poses, SegConfig(n=2))
    assert seg.boundaries == (1,)


def test_more_segments_never_cost_more(rng):
    for _ in range(50):
        l = int(rng.integers(2, 9))
        poses = random_poses(rng, l)
        costs = [optimal_segmentation(poses, SegConfig(n=n)).total for n in range(1, l + 1)]
        assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))


def test_offset_invariance(rng):
    for _ in range(30):
        poses = random_poses(rng, 7)
        shifted = offset_poses(poses, rng.uniform(-1, 1, size=6))
        a, b = optimal_segmentation(poses, CFG), optimal_segmentation(shifted, CFG)
        assert a.total == pytest.approx(b.total, abs=1e-9)
        assert a.boundaries == b.boundaries


def test_label_mapping():
    poses = np.zeros((4, 7))
    from intentgrasp.trajseg import Segmentation
    seg = Segmentation(boundaries=(1, 3), costs=(0.0, 0.0, 0.0), total=0.0, length=4)
    assert label_states(make_traj(poses), seg).labels.tolist() == [1, 2, 2, 3]


def test_labels_must_be_monotone():
    with pytest.raises(ValueError):
        make_traj(np.zeros((3, 7)), labels=[1, 3, 2])


def test_segment_and_label_default_three_intents(rng):
    traj = segment_and_label(make_traj(random_poses(rng, 6)))
    assert traj.labels[0] == 1 and traj.labels[-1] == 3
    assert set(traj.labels.tolist()) == {1, 2, 3}


def test_demo_file_roundtrip(tmp_path, rng):
    img = rng.uniform(0, 1, size=(2, 5, 6)).astype(np.float32).astype(np.float64)
    traj = DemoTrajectory(poses=random_poses(rng, 3), images=img, image_index=[0, 1, 1],
                          labels=[1, 2, 2], success=True, meta={"grasp_type": 2})
    path = tmp_path / "d.jsonl"
    write_demos(path, [traj, traj])
    back = read_demos(path)
    assert len(back) == 2
    np.testing.assert_array_equal(back[0].poses, traj.poses)
    np.testing.assert_array_equal(back[0].images, traj.images)
    assert back[0].labels.tolist() == [1, 2, 2]
    assert back[0].success and back[0].meta == {"grasp_type": 2}
    assert back[0].resolution == (5, 6)
