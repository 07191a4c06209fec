"""Quasi-static side-view grasping world.

The world is the x-z plane: a table at ``z = 0`` and a vertical wall at
``x = x_max``.  Objects are rectangles resting on the table.  An object that
is pushed past the wall pivots about its far edge and leans against the wall
as a rectangle rotated counter-clockwise by its tilt.

The gripper is two fingers of length ``finger_length`` whose tips sit
``g_max`` apart (inner faces) along the closing axis, joined by a palm.  Its
pose is the tip midpoint ``(x, z)`` plus a pitch rotation about that point.
Within one step the commanded motion is applied in a fixed order: pitch,
vertical move, horizontal move, close.

Contact rules:

* Descending fingers and palm stop on whatever they would hit.
* Horizontally, any finger face (inner or outer) that sweeps into a flat
  object translates it by the overlap; pushed objects push others in turn.
* A flat object driven past the wall by ``d`` pivots to ``theta = kappa * d``;
  pushing a tilted object further adds ``kappa * d`` (capped at pi / 2).
  Leftward motion ignores tilted objects, and flat objects stop at ``x = 0``.
* The gripper itself is never blocked; fingers may end a step inside an
  object whose motion was blocked.  Object-object, object-wall and
  object-table overlaps are always resolved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import geometry as geo

SHAPES = ("card", "block", "cylinder")
_EPS = 1e-12


@dataclass(frozen=True)
class World:
    x_max: float = 0.5
    z_max: float = 0.4
    kappa: float = 10.0          # rad of tilt per metre of blocked push
    c_min: float = 0.005         # minimum finger/object vertical overlap
    theta_min: float = 0.5       # tilt that makes a thin object graspable
    g_max: float = 0.14          # open gap between the finger inner faces
    finger_thickness: float = 0.01
    finger_length: float = 0.05
    palm_thickness: float = 0.01
    pitch_limit: float = 0.6
    home_x: float = 0.25
    home_z: float = 0.15
    episode_length: int = 3
    depth_max: float = 1.0
    camera_distance: float = 0.5

    def __post_init__(self):
        for name in ("x_max", "z_max", "kappa", "c_min", "theta_min", "g_max", "finger_thickness",
                     "finger_length", "palm_thickness", "depth_max", "camera_distance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"world constant {name} must be positive")
        if self.theta_min >= math.pi / 2:
            raise ValueError("theta_min must be below pi/2")
        if self.episode_length < 1:
            raise ValueError("episode_length must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown world constants: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    width: float
    height: float
    x: float                      # centre of the footprint when flat
    theta: float = 0.0
    depth_y: float = 0.05         # extent towards the camera

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if min(self.width, self.height, self.depth_y) <= 0:
            raise ValueError("object dimensions must be positive")
        if not 0.0 <= self.theta <= math.pi / 2:
            raise ValueError("tilt must lie in [0, pi/2]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(**d)


def object_polygon(width: float, height: float, x: float, theta: float, x_max: float) -> geo.Poly:
    if theta == 0.0:
        return geo.box(x - width / 2, 0.0, x + width / 2, height)
    c, s = math.cos(theta), math.sin(theta)
    base = x_max - width * c
    return ((base, 0.0), (x_max, width * s), (x_max - height * s, width * s + height * c),
            (base - height * s, height * c))


@dataclass(frozen=True)
class RigidObject:
    spec: ObjectSpec
    x: float
    theta: float = 0.0

    def polygon(self, world: World) -> geo.Poly:
        return object_polygon(self.spec.width, self.spec.height, self.x, self.theta, world.x_max)

    def at_wall(self, world: World) -> bool:
        return self.theta > 0 or self.x + self.spec.width / 2 >= world.x_max - _EPS

    def tilted_to(self, theta: float, world: World) -> "RigidObject":
        theta = min(math.pi / 2, theta)
        poly = object_polygon(self.spec.width, self.spec.height, 0.0, theta, world.x_max)
        return replace(self, theta=theta, x=geo.centroid(poly)[0] if theta > 0 else self.x)

    def top(self, world: World) -> float:
        return max(p[1] for p in self.polygon(world))


@dataclass(frozen=True)
class GripperBody:
    x: float
    z: float
    pitch: float = 0.0
    closed: bool = False

    def axes(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Closing axis ``u`` and finger axis ``v`` (pointing from tips to palm)."""
        c, s = math.cos(self.pitch), math.sin(self.pitch)
        return (c, s), (-s, c)

    def _at(self, su: float, sv: float) -> tuple[float, float]:
        (ux, uz), (vx, vz) = self.axes()
        return (self.x + su * ux + sv * vx, self.z + su * uz + sv * vz)

    def polygons(self, world: World) -> list[geo.Poly]:
        """Left finger, right finger, palm."""
        t, L = world.finger_thickness, world.finger_length
        a = world.g_max / 2 + t / 2
        out = []
        for sign in (-1.0, 1.0):
            cx, cz = self._at(sign * a, L / 2)
            out.append(geo.rect(cx, cz, t / 2, L / 2, self.pitch))
        cx, cz = self._at(0.0, L + world.palm_thickness / 2)
        out.append(geo.rect(cx, cz, world.g_max / 2 + t, world.palm_thickness / 2, self.pitch))
        return out

    def closing_region(self, world: World) -> geo.Poly:
        h, L = world.g_max / 2, world.finger_length
        return (self._at(-h, 0.0), self._at(h, 0.0), self._at(h, L), self._at(-h, L))

    def as_pose(self) -> np.ndarray:
        """7-vector ``(x, y, z, alpha, beta, gamma, psi)`` with the planar axes zeroed."""
        return np.array([self.x, 0.0, self.z, 0.0, self.pitch, 0.0, float(self.closed)])


def home_gripper(world: World) -> GripperBody:
    return GripperBody(world.home_x, world.home_z, 0.0, False)


@dataclass(frozen=True)
class Motion:
    """Continuous displacement command: ``(dx, dz, dpitch)`` plus close flag."""

    dx: float = 0.0
    dz: float = 0.0
    dpitch: float = 0.0
    close: bool = False


@dataclass(frozen=True)
class SimState:
    world: World
    objects: tuple[RigidObject, ...]
    gripper: GripperBody
    t: int = 0
    terminated: bool = False
    success: bool = False
    image0: np.ndarray | None = field(default=None, compare=False, repr=False)

    def snapshot(self) -> dict:
        """Plain-data view used for equality checks and trace logs."""
        return {
            "t": self.t,
            "terminated": self.terminated,
            "success": self.success,
            "gripper": [float(self.gripper.x), float(self.gripper.z), float(self.gripper.pitch),
                        int(self.gripper.closed)],
            "objects": [[o.spec.shape, float(o.x), float(o.theta)] for o in self.objects],
        }


class SimError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# gripper clamping


def _gripper_bounds(g: GripperBody, world: World):
    """Allowed ``(x_lo, x_hi, z_lo, z_hi)`` for the tip midpoint at this pitch."""
    pts = [p for poly in g.polygons(world) for p in poly]
    dx = [p[0] - g.x for p in pts]
    dz = [p[1] - g.z for p in pts]
    return -min(dx), world.x_max - max(dx), -min(dz), world.z_max - max(dz)


def _clamp_gripper(g: GripperBody, world: World) -> GripperBody:
    pitch = min(world.pitch_limit, max(-world.pitch_limit, g.pitch))
    g = replace(g, pitch=pitch)
    x_lo, x_hi, z_lo, z_hi = _gripper_bounds(g, world)
    return replace(g, x=min(max(g.x, x_lo), x_hi), z=min(max(g.z, z_lo), z_hi))


# ---------------------------------------------------------------------------
# contact phases


def _descend(g: GripperBody, target_z: float, objects, world: World, events: list) -> GripperBody:
    if target_z >= g.z:
        return replace(g, z=target_z)
    drop = g.z - target_z
    polys = g.polygons(world)
    for i, obj in enumerate(objects):
        op = obj.polygon(world)
        for gp in polys:
            if geo.overlaps(gp, op, _EPS):
                continue
            gap = geo.drop_clearance(gp, op)
            if gap < drop:
                drop = max(0.0, gap)
                events.append({"event": "stop_on", "object": i})
    return replace(g, z=g.z - drop)


def _behind(pusher: geo.Poly, obj: geo.Poly, direction: int) -> bool:
    if geo.overlaps(pusher, obj, _EPS):
        return False
    lo = max(min(p[1] for p in pusher), min(p[1] for p in obj))
    hi = min(max(p[1] for p in pusher), max(p[1] for p in obj))
    if hi <= lo:
        return False
    mid = (lo + hi) / 2
    p, o = geo.span_at_height(pusher, mid), geo.span_at_height(obj, mid)
    if p is None or o is None:
        return False
    return p[1] <= o[0] + _EPS if direction > 0 else p[0] >= o[1] - _EPS


def _slide(g0: GripperBody, g1: GripperBody, objects: list[RigidObject], world: World, events: list):
    """Horizontal phase: returns the updated object list."""
    dx = g1.x - g0.x
    if dx == 0.0:
        return objects
    d = 1 if dx > 0 else -1
    objs = list(objects)
    pushers = list(zip(g0.polygons(world), g1.polygons(world)))

    def width(i):
        return objs[i].spec.width

    flat = [i for i, o in enumerate(objs) if o.theta == 0.0]
    flat.sort(key=lambda i: d * objs[i].x)
    tilted = [i for i, o in enumerate(objs) if o.theta > 0.0]

    for i in flat:
        before = objs[i].polygon(world)
        shift = 0.0
        for p0, p1 in pushers:
            if _behind(p0, before, d):
                shift = max(shift, geo.push_distance(p1, before, d))
        if shift <= 0.0:
            continue
        obj = replace(objs[i], x=objs[i].x + d * shift)
        events.append({"event": "push", "object": i, "distance": shift})
        if d < 0 and obj.x - width(i) / 2 < 0.0:
            obj = replace(obj, x=width(i) / 2)
        if d > 0:
            for j in tilted:
                pen = geo.push_distance(obj.polygon(world), objs[j].polygon(world), +1) \
                    if _behind(before, objs[j].polygon(world), +1) else 0.0
                if pen > 0:
                    obj = replace(obj, x=obj.x - pen)
                    objs[j] = objs[j].tilted_to(objs[j].theta + world.kappa * pen, world)
                    events.append({"event": "tilt", "object": j, "theta": objs[j].theta})
            excess = obj.x + width(i) / 2 - world.x_max
            if excess > 0:
                obj = replace(obj, x=world.x_max - width(i) / 2)
                if world.kappa * excess > 0:
                    obj = obj.tilted_to(world.kappa * excess, world)
                    tilted.append(i)
                    events.append({"event": "tilt", "object": i, "theta": obj.theta})
        objs[i] = obj
        pushers.append((before, obj.polygon(world)))

    if d > 0:
        for j in tilted:
            poly = objs[j].polygon(world)
            pen = 0.0
            for p0, p1 in pushers[:3]:
                if _behind(p0, poly, +1):
                    pen = max(pen, geo.push_distance(p1, poly, +1))
            if pen > 0 and objects[j].theta > 0:
                objs[j] = objs[j].tilted_to(objs[j].theta + world.kappa * pen, world)
                events.append({"event": "tilt", "object": j, "theta": objs[j].theta})
    return _resolve_overlaps(objs, world)


def _resolve_overlaps(objs: list[RigidObject], world: World) -> list[RigidObject]:
    """Shift flat objects left (then right off the x=0 edge) until nothing overlaps."""
    for _ in range(2 * len(objs) + 1):
        changed = False
        order = sorted(range(len(objs)), key=lambda i: -objs[i].x)
        for a in order:
            if objs[a].theta > 0:
                continue
            pa = objs[a].polygon(world)
            for b in order:
                if b == a or objs[b].x < objs[a].x and objs[b].theta == 0:
                    continue
                pb = objs[b].polygon(world)
                if geo.overlaps(pa, pb, _EPS):
                    back = geo.push_distance(pb, pa, -1)
                    objs[a] = replace(objs[a], x=objs[a].x - back)
                    pa = objs[a].polygon(world)
                    changed = True
        if not changed:
            break
    # anything shoved past x = 0 is walked back to the right
    order = sorted(range(len(objs)), key=lambda i: objs[i].x)
    edge = 0.0
    for i in order:
        if objs[i].theta > 0:
            continue
        left = objs[i].x - objs[i].spec.width / 2
        if left < edge:
            objs[i] = replace(objs[i], x=edge + objs[i].spec.width / 2)
        edge = objs[i].x + objs[i].spec.width / 2
    return objs


# ---------------------------------------------------------------------------
# grasp check


def grasp_contacts(state: SimState) -> list[int]:
    """Indices of objects inside the region swept by the closing fingers."""
    region = state.gripper.closing_region(state.world)
    return [i for i, o in enumerate(state.objects) if geo.overlaps(region, o.polygon(state.world), _EPS)]


def graspable(obj: RigidObject, gripper: GripperBody, world: World) -> bool:
    u, _ = gripper.axes()
    poly = obj.polygon(world)
    cx, cz = geo.centroid(poly)
    if abs((cx - gripper.x) * u[0] + (cz - gripper.z) * u[1]) > world.g_max / 2:
        return False
    lo, hi = geo.extent(poly, u)
    if hi - lo > world.g_max:
        return False
    _, rz0, _, rz1 = geo.bounds(gripper.closing_region(world))
    _, oz0, _, oz1 = geo.bounds(poly)
    overlap = min(rz1, oz1) - max(rz0, oz0)
    if overlap >= world.c_min:
        return True
    return obj.theta >= world.theta_min and overlap > 0


def check_grasp(state: SimState) -> bool:
    """Exactly one object between the closed fingers, and that one is held."""
    contacts = grasp_contacts(state)
    if len(contacts) != 1:
        return False
    return graspable(state.objects[contacts[0]], state.gripper, state.world)


# ---------------------------------------------------------------------------
# reset / step


def validate_scene(objects: Sequence[RigidObject], world: World):
    polys = [o.polygon(world) for o in objects]
    for i, p in enumerate(polys):
        x0, _, x1, z1 = geo.bounds(p)
        if x0 < -_EPS or x1 > world.x_max + _EPS or z1 > world.z_max:
            raise SimError(f"object {i} lies outside the workspace")
        for j in range(i):
            if geo.overlaps(p, polys[j], _EPS):
                raise SimError(f"objects {j} and {i} overlap")
    tilted = [o for o in objects if o.theta > 0]
    if len(tilted) > 1:
        raise SimError("at most one object may lean against the wall")


def make_objects(specs: Sequence[ObjectSpec], world: World) -> tuple[RigidObject, ...]:
    out = []
    for s in specs:
        obj = RigidObject(s, s.x, 0.0)
        if s.theta > 0:
            obj = obj.tilted_to(s.theta, world)
        out.append(obj)
    return tuple(out)


def new_state(specs: Sequence[ObjectSpec], world: World = World()) -> SimState:
    objects = make_objects(specs, world)
    validate_scene(objects, world)
    return SimState(world, objects, home_gripper(world))


def step(state: SimState, motion: Motion) -> tuple[SimState, list[dict]]:
    if state.terminated:
        raise SimError("step called on a terminated episode")
    world = state.world
    events: list[dict] = []
    g0 = state.gripper

    g = _clamp_gripper(replace(g0, pitch=g0.pitch + motion.dpitch), world)
    x_lo, x_hi, z_lo, z_hi = _gripper_bounds(g, world)
    target_z = min(max(g.z + motion.dz, z_lo), z_hi)
    g = _descend(g, target_z, state.objects, world, events)

    x_lo, x_hi, _, _ = _gripper_bounds(g, world)
    g1 = replace(g, x=min(max(g.x + motion.dx, x_lo), x_hi))
    objects = tuple(_slide(g, g1, list(state.objects), world, events))

    t = state.t + 1
    success = False
    terminated = t >= world.episode_length
    if motion.close:
        g1 = replace(g1, closed=True)
        probe = replace(state, objects=objects, gripper=g1)
        success = check_grasp(probe)
        terminated = True
        events.append({"event": "close", "success": success})
    elif terminated:
        events.append({"event": "timeout"})
    return SimState(world, objects, g1, t, terminated, success, state.image0), events
