"""Demonstrations from a few hand-encoded grasps.

Each encoded grasp is four gripper waypoints authored for one nominal object.
Augmentation moves and rescales the object and carries the waypoints along,
then the grasp is replayed in the simulator and kept whether or not it works.
Failed replays are the "imperfect" demos.

Waypoint x offsets are tied to a fraction of the object width (``x_anchor``)
and z offsets to a fraction of its height (``z_anchor``), so that e.g. a
waypoint on the card's near edge follows that edge when the card is resized.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .sim import NOMINAL, Motion, ObjectSpec, World, make_object, reset, step
from .trajseg import DemoTrajectory, GripperPose, SegConfig, segment_and_label


class InfeasibleGrasp(ValueError):
    pass


@dataclass(frozen=True)
class EncodedGrasp:
    type_id: int
    name: str
    obj: ObjectSpec
    waypoints: tuple[GripperPose, ...]
    x_anchor: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    z_anchor: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    mirrored: bool = False

    def __post_init__(self):
        if len(self.waypoints) != 4:
            raise ValueError("an encoded grasp has exactly four waypoints")
        if len(self.x_anchor) != 4 or len(self.z_anchor) != 4:
            raise ValueError("one anchor per waypoint is required")
        psi = [w.psi for w in self.waypoints]
        if any(b < a for a, b in zip(psi, psi[1:])):
            raise ValueError("the gripper may close once and never reopen")

    @property
    def close_index(self) -> int | None:
        for i, w in enumerate(self.waypoints):
            if w.psi == 1:
                return i
        return None

    def relative_offsets(self) -> np.ndarray:
        """``(4, 2)`` waypoint minus object position in x and z."""
        return np.array([[w.x - self.obj.x, w.z] for w in self.waypoints])


def _pose(x, z, pitch=0.0, psi=0):
    return GripperPose(x=x, z=z, beta=pitch, psi=psi)


def encoded_grasps(world: World = World()) -> dict[int, EncodedGrasp]:
    """The three hand-authored grasps.

    1. top-down grasp of an upright block: hover, descend until the palm
       nearly touches the top, close, lift.
    2. wall pivot of a flat card: drop beside the card's near edge, sweep
       it into the wall so it tilts up, close while still sweeping, lift.
    3. the same pivot performed with the gripper pitched so the pushing
       finger leads (a stand-in for the third, sliding, grasp).
    """
    block = make_object("block", 0.25)
    grip = block.height / 3
    g1 = EncodedGrasp(1, "block-top-down", block, (
        _pose(0.25, grip + 0.10),
        _pose(0.25, grip),
        _pose(0.25, grip, psi=1),
        _pose(0.25, grip + 0.10, psi=1),
    ), x_anchor=(0, 0, 0, 0), z_anchor=(1 / 3, 1 / 3, 1 / 3, 1 / 3))

    card = make_object("card", world.x_max - 0.01 - NOMINAL["card"]["width"] / 2)
    left = card.x - card.width / 2
    reach = world.g_max / 2 + world.finger_thickness          # tip midpoint to outer finger face
    x1 = left - reach - 0.03
    g2 = EncodedGrasp(2, "card-wall-pivot", card, (
        _pose(x1, 0.10),
        _pose(x1 + 0.10, 0.0),
        _pose(x1 + 0.15, 0.0, psi=1),
        _pose(x1 + 0.15, 0.10, psi=1),
    ), x_anchor=(-0.5, -0.5, -0.5, -0.5), z_anchor=(0, 0, 0, 0))

    tilt = -0.3
    g3 = EncodedGrasp(3, "card-pitched-pivot", card, (
        _pose(x1, 0.10),
        _pose(x1 + 0.10, 0.0, tilt),
        _pose(x1 + 0.15, 0.0, tilt, psi=1),
        _pose(x1 + 0.15, 0.10, tilt, psi=1),
    ), x_anchor=(-0.5, -0.5, -0.5, -0.5), z_anchor=(0, 0, 0, 0))
    return {1: g1, 2: g2, 3: g3}


def augment_grasp(g: EncodedGrasp, translate: float = 0.0, scale: tuple[float, float] = (1.0, 1.0),
                  mirror: bool = False, world: World | None = None) -> EncodedGrasp:
    """Move the object by ``translate`` and rescale it by ``scale = (sw, sh)``.

    Waypoints keep their offset from the object, except that the part of the
    offset tied to the object's size (through the anchors) rescales with it.
    ``mirror`` reflects the grasp about the object's vertical centre line.
    With ``world`` given, waypoints the gripper cannot reach raise
    :class:`InfeasibleGrasp`.
    """
    sw, sh = scale
    if sw <= 0 or sh <= 0:
        raise ValueError("scale factors must be positive")
    obj = g.obj
    new_obj = replace(obj, x=obj.x + translate, width=obj.width * sw, height=obj.height * sh)
    wps = []
    for w, fx, fz in zip(g.waypoints, g.x_anchor, g.z_anchor):
        off = (w.x - obj.x) + fx * obj.width * (sw - 1.0)
        pitch = w.beta
        if mirror:
            off, pitch = -off, -pitch
        z = w.z + fz * obj.height * (sh - 1.0)
        wps.append(replace(w, x=new_obj.x + off, z=z, beta=pitch))
    out = replace(g, obj=new_obj, waypoints=tuple(wps), mirrored=g.mirrored != mirror)
    if world is not None:
        check_feasible(out, world)
    return out


def check_feasible(g: EncodedGrasp, world: World):
    """Reject grasps whose object or waypoints leave the workspace.

    Waypoints are tested on the fingertip midpoint only; the simulator
    clamps the rest of the gripper body as it would for any command.
    """
    o = g.obj
    tol = 1e-9
    if o.x - o.width / 2 < -tol or o.x + o.width / 2 > world.x_max + tol or o.height > world.z_max:
        raise InfeasibleGrasp("object leaves the workspace")
    for i, w in enumerate(g.waypoints):
        if not (-tol <= w.x <= world.x_max + tol and -tol <= w.z <= world.z_max + tol) or \
                abs(w.beta) > world.pitch_limit:
            raise InfeasibleGrasp(f"waypoint {i + 1} leaves the workspace")


def replay(g: EncodedGrasp, world: World = World(), resolution="fast", scene: Sequence[ObjectSpec] | None = None
           ) -> DemoTrajectory:
    """Execute the waypoints and record the state before each one plus the final state.

    The episode ends when the gripper closes; waypoints after that are
    recorded kinematically (the gripper carries the grasped object away and
    the simulator has nothing left to decide).  Every state shares the
    initial depth image.
    """
    state, image = reset(scene if scene is not None else [g.obj], world=world, resolution=resolution)
    poses = [state.gripper.as_pose()]
    actions = []
    for w in g.waypoints:
        if state.terminated:
            pose = np.array([w.x, 0.0, w.z, 0.0, w.beta, 0.0, float(w.psi)])
            actions.append([float(w.x - poses[-1][0]), float(w.z - poses[-1][2]), float(w.beta - poses[-1][4]),
                            int(w.psi)])
            poses.append(pose)
            continue
        gr = state.gripper
        m = Motion(dx=w.x - gr.x, dz=w.z - gr.z, dpitch=w.beta - gr.pitch, close=bool(w.psi) and not gr.closed)
        actions.append([m.dx, m.dz, m.dpitch, int(m.close)])
        state, _ = step(state, m)
        poses.append(state.gripper.as_pose())
    meta = {
        "grasp_type": g.type_id,
        "object": g.obj.to_dict(),
        "mirrored": g.mirrored,
        "actions": actions,
    }
    return DemoTrajectory(poses=np.array(poses), images=image[None].astype(np.float32).astype(np.float64),
                          image_index=np.zeros(len(poses), dtype=np.int64), success=bool(state.success), meta=meta)


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges for augmentation, per grasp type.

    ``translate`` is a list of ``(lo, hi)`` offsets (metres) from the
    nominal object position.
    """

    translate: dict = field(default_factory=lambda: {1: (-0.05, 0.05), 2: (-0.07, 0.01), 3: (-0.07, 0.01)})
    scale: tuple = (0.7, 1.3)
    mirror_prob: float = 0.5

    def to_dict(self) -> dict:
        return {"translate": {str(k): list(v) for k, v in self.translate.items()}, "scale": list(self.scale),
                "mirror_prob": self.mirror_prob}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentRanges":
        base = cls()
        tr = {int(k): tuple(v) for k, v in d.get("translate", {}).items()} or base.translate
        return cls(translate=tr, scale=tuple(d.get("scale", base.scale)),
                   mirror_prob=float(d.get("mirror_prob", base.mirror_prob)))


@dataclass
class DemoDataset:
    trajectories: list[DemoTrajectory]

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def counts_per_type(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for t in self.trajectories:
            k = int(t.meta.get("grasp_type", 0))
            out[k] = out.get(k, 0) + 1
        return dict(sorted(out.items()))

    @property
    def imperfect_fraction(self) -> float:
        if not self.trajectories:
            return 0.0
        return sum(not t.success for t in self.trajectories) / len(self.trajectories)

    def report(self) -> dict:
        return {"demos": len(self), "per_type": {str(k): v for k, v in self.counts_per_type().items()},
                "imperfect_fraction": self.imperfect_fraction}


def sample_augmented(g: EncodedGrasp, rng: np.random.Generator, ranges: AugmentRanges, world: World,
                     max_tries: int = 1000) -> EncodedGrasp:
    lo, hi = ranges.translate[g.type_id]
    for _ in range(max_tries):
        dx = float(rng.uniform(lo, hi))
        s = float(rng.uniform(*ranges.scale))
        mirror = bool(rng.uniform() < ranges.mirror_prob)
        try:
            return augment_grasp(g, dx, (s, s), mirror, world)
        except InfeasibleGrasp:
            continue
    raise InfeasibleGrasp(f"no feasible augmentation of grasp {g.type_id} in {max_tries} tries")


def generate_dataset(per_type: int, seed: int, world: World = World(), ranges: AugmentRanges = AugmentRanges(),
                     resolution="fast", seg: SegConfig = SegConfig(), types: Iterable[int] = (1, 2, 3)
                     ) -> DemoDataset:
    """``per_type`` replayed and segmented demos for each grasp type.

    Each demo draws from its own generator derived from ``(seed, type, index)``
    so any single demo can be regenerated on its own.
    """
    if per_type < 1:
        raise ValueError("per_type must be at least 1")
    grasps = encoded_grasps(world)
    out = []
    for type_id in types:
        for i in range(per_type):
            rng = np.random.default_rng([seed, type_id, i])
            g = sample_augmented(grasps[type_id], rng, ranges, world)
            traj = replay(g, world, resolution)
            traj.meta["demo_id"] = f"{type_id}-{i}"
            out.append(segment_and_label(traj, seg))
    return DemoDataset(out)


def filter_perfect(ds: DemoDataset) -> DemoDataset:
    kept = [t for t in ds.trajectories if t.success]
    if not kept:
        raise ValueError("no successful demonstrations to keep")
    return DemoDataset(kept)
