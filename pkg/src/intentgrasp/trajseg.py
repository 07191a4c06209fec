"""Optimal contiguous segmentation of grasp trajectories into intents.

A trajectory of ``l`` gripper poses is split into ``n`` contiguous segments
minimising the summed within-segment pairwise dissimilarity.  Indices are
0-based here; a boundary ``c`` means a new segment starts at state ``c``
(equivalently, the cut falls after 1-based state ``c``).  Intent labels are
1-based, as in ``1..n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

POSE_FIELDS = ("x", "y", "z", "alpha", "beta", "gamma", "psi")
_POS = slice(0, 3)
_ANG = slice(3, 6)
_PSI = 6


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class GripperPose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    psi: int = 0

    def __post_init__(self):
        if self.psi not in (0, 1):
            raise ValueError("psi must be 0 (open) or 1 (closed)")
        for name in ("alpha", "beta", "gamma"):
            object.__setattr__(self, name, float(wrap_angle(getattr(self, name))))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.alpha, self.beta, self.gamma, self.psi], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "GripperPose":
        a = np.asarray(a, dtype=np.float64)
        return cls(*map(float, a[:6]), psi=int(round(a[6])))


@dataclass(frozen=True)
class SegConfig:
    n: int = 3
    lam: float = 1.0
    mu: float = 5.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("number of intents must be positive")
        if self.lam < 0 or self.mu < 0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class DemoState:
    image: np.ndarray
    pose: GripperPose


@dataclass
class DemoTrajectory:
    """Poses ``(l, 7)`` plus depth images shared through ``image_index``.

    Several states may point at the same image (e.g. the initial observation
    reused for a whole episode), which keeps files small.
    """

    poses: np.ndarray
    images: np.ndarray
    image_index: np.ndarray
    labels: np.ndarray | None = None
    success: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64).reshape(-1, 7)
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim == 2:
            self.images = self.images[None]
        self.image_index = np.asarray(self.image_index, dtype=np.int64)
        if len(self.poses) < 1:
            raise ValueError("a trajectory needs at least one state")
        if self.image_index.shape != (len(self.poses),):
            raise ValueError("one image index per state is required")
        if self.image_index.min() < 0 or self.image_index.max() >= len(self.images):
            raise ValueError("image index out of range")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            check_labels(self.labels, len(self.poses))

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.images.shape[1:])

    def state(self, i: int) -> DemoState:
        return DemoState(self.images[self.image_index[i]], GripperPose.from_array(self.poses[i]))

    @property
    def states(self) -> Iterator[DemoState]:
        for i in range(len(self)):
            yield self.state(i)

    def state_images(self) -> np.ndarray:
        """``(l, H, W)`` image per state."""
        return self.images[self.image_index]


def check_labels(labels: np.ndarray, length: int, n: int | None = None):
    if labels.shape != (length,):
        raise ValueError("one label per state is required")
    if labels.min() < 1 or (n is not None and labels.max() > n):
        raise ValueError("labels must lie in 1..n")
    if np.any(np.diff(labels) < 0):
        raise ValueError("labels must be non-decreasing")


@dataclass(frozen=True)
class Segmentation:
    boundaries: tuple[int, ...]
    costs: tuple[float, ...]
    total: float
    length: int

    @property
    def n(self) -> int:
        return len(self.boundaries) + 1

    def segments(self) -> list[tuple[int, int]]:
        edges = (0, *self.boundaries, self.length)
        return list(zip(edges[:-1], edges[1:]))


# ---------------------------------------------------------------------------
# costs


def _angle_gap(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def pose_dissimilarity(a, b, cfg: SegConfig = SegConfig()) -> float:
    """Weighted L1 pose distance.

    Position L1 + lam * sum of wrapped angle gaps / pi + mu * |closure change|.
    """
    a = a.as_array() if isinstance(a, GripperPose) else np.asarray(a, dtype=np.float64)
    b = b.as_array() if isinstance(b, GripperPose) else np.asarray(b, dtype=np.float64)
    pos = np.abs(a[_POS] - b[_POS]).sum()
    ang = (_angle_gap(a[_ANG], b[_ANG]) / np.pi).sum()
    return float(pos + cfg.lam * ang + cfg.mu * abs(a[_PSI] - b[_PSI]))


def dissimilarity_matrix(poses: np.ndarray, cfg: SegConfig = SegConfig()) -> np.ndarray:
    p = np.asarray(poses, dtype=np.float64)
    pos = np.abs(p[:, None, _POS] - p[None, :, _POS]).sum(-1)
    ang = (_angle_gap(p[:, None, _ANG], p[None, :, _ANG]) / np.pi).sum(-1)
    psi = np.abs(p[:, None, _PSI] - p[None, :, _PSI])
    return pos + cfg.lam * ang + cfg.mu * psi


def _poses_of(traj) -> np.ndarray:
    return traj.poses if isinstance(traj, DemoTrajectory) else np.asarray(traj, dtype=np.float64)


def segment_cost(traj, start: int, stop: int, cfg: SegConfig = SegConfig()) -> float:
    """Sum of pairwise dissimilarities over states ``start..stop-1``."""
    poses = _poses_of(traj)
    if not 0 <= start < stop <= len(poses):
        raise ValueError(f"invalid segment [{start}, {stop}) for length {len(poses)}")
    d = dissimilarity_matrix(poses[start:stop], cfg)
    return float(np.triu(d, 1).sum())


def segment_cost_table(d: np.ndarray) -> np.ndarray:
    """``C[i, j]`` = cost of the segment ``[i, j)``; entries with ``j <= i`` are 0."""
    l = len(d)
    upper = np.triu(d, 1)
    cost = np.zeros((l + 1, l + 1))
    for i in range(l):
        acc = 0.0
        for j in range(i + 1, l):
            acc += upper[i:j, j].sum()
            cost[i, j + 1] = acc
    return cost


def optimal_segmentation(traj, cfg: SegConfig = SegConfig()) -> Segmentation:
    """Minimum-cost split into ``cfg.n`` contiguous segments.

    ``best[k, j]`` is the optimum for the prefix ``[0, j)`` with ``k``
    segments, built from the ``k-1`` prefix problem plus one closing segment.
    Among equal-cost optima the lexicographically smallest boundary vector is
    returned.
    """
    poses = _poses_of(traj)
    l, n = len(poses), cfg.n
    if n > l:
        raise ValueError(f"cannot split {l} states into {n} segments")
    cost = segment_cost_table(dissimilarity_matrix(poses, cfg))

    best = np.full((n + 1, l + 1), np.inf)
    best[0, 0] = 0.0
    for k in range(1, n + 1):
        for j in range(k, l + 1):
            cand = best[k - 1, k - 1:j] + cost[k - 1:j, j]
            best[k, j] = cand.min()
    total = float(best[n, l])

    # suffix optimum: rest[k, i] = best split of [i, l) into k segments
    rest = np.full((n + 1, l + 1), np.inf)
    rest[0, l] = 0.0
    for k in range(1, n + 1):
        for i in range(l - k, -1, -1):
            rest[k, i] = (cost[i, i + 1:l + 1] + rest[k - 1, i + 1:l + 1]).min()

    tol = 1e-12 * max(1.0, abs(total))
    boundaries = []
    start, acc = 0, 0.0
    for k in range(n, 1, -1):
        for c in range(start + 1, l - k + 2):
            if acc + cost[start, c] + rest[k - 1, c] <= total + tol:
                boundaries.append(c)
                acc += cost[start, c]
                start = c
                break
    edges = (0, *boundaries, l)
    costs = tuple(float(cost[a, b]) for a, b in zip(edges[:-1], edges[1:]))
    return Segmentation(tuple(boundaries), costs, float(math.fsum(costs)), l)


def label_states(traj: DemoTrajectory, seg: Segmentation) -> DemoTrajectory:
    """Copy of ``traj`` whose states carry their 1-based segment index."""
    if seg.length != len(traj):
        raise ValueError("segmentation does not cover the trajectory")
    labels = np.empty(len(traj), dtype=np.int64)
    for i, (a, b) in enumerate(seg.segments(), start=1):
        labels[a:b] = i
    return replace(traj, labels=labels)


def segment_and_label(traj: DemoTrajectory, cfg: SegConfig = SegConfig()) -> DemoTrajectory:
    return label_states(traj, optimal_segmentation(traj, cfg))


def offset_poses(poses: np.ndarray, offset: Sequence[float]) -> np.ndarray:
    """Add a constant offset to every pose (used by invariance checks)."""
    out = np.array(poses, dtype=np.float64)
    out[:, :6] += np.asarray(offset, dtype=np.float64)[:6]
    out[:, 3:6] = wrap_angle(out[:, 3:6])
    return out
