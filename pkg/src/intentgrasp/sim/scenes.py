"""Scene sampling, scene files and episode trace logs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .render import render_depth
from .world import ObjectSpec, SimState, World, new_state

# nominal sizes: a payment card lying flat, a small box, an upright can
NOMINAL = {
    "card": dict(width=0.085, height=0.002, depth_y=0.054),
    "block": dict(width=0.05, height=0.06, depth_y=0.05),
    "cylinder": dict(width=0.05, height=0.07, depth_y=0.05),
}


def make_object(shape: str, x: float, scale: float = 1.0, height_scale: float | None = None,
                theta: float = 0.0) -> ObjectSpec:
    n = NOMINAL[shape]
    hs = scale if height_scale is None else height_scale
    return ObjectSpec(shape, n["width"] * scale, n["height"] * hs, x, theta, n["depth_y"])


@dataclass(frozen=True)
class SceneRanges:
    """Where objects may appear.

    Cards are placed by the gap between their far edge and the wall; upright
    objects by their centre.  Each range is a list of ``(lo, hi)`` intervals
    sampled in proportion to their length.
    """

    card_gap: tuple = ((0.0, 0.08),)
    upright_x: tuple = ((0.05, 0.45),)
    scale: tuple = (0.7, 1.3)

    def to_dict(self) -> dict:
        return {"card_gap": [list(r) for r in self.card_gap], "upright_x": [list(r) for r in self.upright_x],
                "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRanges":
        return cls(card_gap=tuple(tuple(r) for r in d.get("card_gap", cls.card_gap)),
                   upright_x=tuple(tuple(r) for r in d.get("upright_x", cls.upright_x)),
                   scale=tuple(d.get("scale", cls.scale)))


def _sample_intervals(rng: np.random.Generator, intervals) -> float:
    lengths = np.array([hi - lo for lo, hi in intervals], dtype=np.float64)
    if len(intervals) == 1 or lengths.sum() == 0:
        k = 0
    else:
        k = int(rng.choice(len(intervals), p=lengths / lengths.sum()))
    lo, hi = intervals[k]
    return float(rng.uniform(lo, hi))


def sample_scene(kind: str, rng: np.random.Generator, ranges: SceneRanges = SceneRanges(),
                 world: World = World()) -> list[ObjectSpec]:
    """One random scene: ``card``, ``block``, ``cylinder`` or ``clutter`` (two upright objects)."""
    scale = float(rng.uniform(*ranges.scale))
    if kind == "card":
        gap = _sample_intervals(rng, ranges.card_gap)
        w = NOMINAL["card"]["width"] * scale
        return [make_object("card", world.x_max - gap - w / 2, scale)]
    if kind in ("block", "cylinder"):
        return [make_object(kind, _sample_intervals(rng, ranges.upright_x), scale)]
    if kind == "clutter":
        a = make_object("block", _sample_intervals(rng, ranges.upright_x), scale)
        other = "cylinder" if rng.uniform() < 0.5 else "block"
        b_scale = float(rng.uniform(*ranges.scale))
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        gap = float(rng.uniform(0.0, 0.02))
        w_b = NOMINAL[other]["width"] * b_scale
        x_b = a.x + side * (a.width / 2 + gap + w_b / 2)
        if x_b - w_b / 2 < 0 or x_b + w_b / 2 > world.x_max:
            x_b = a.x - side * (a.width / 2 + gap + w_b / 2)
        return [a, make_object(other, x_b, b_scale)]
    raise ValueError(f"unknown scene kind {kind!r}")


def reset(scene: Sequence[ObjectSpec], seed: int | None = None, world: World = World(), resolution="fast",
          noise: float = 0.0) -> tuple[SimState, np.ndarray]:
    """Fresh episode: gripper home and open, ``t = 0``, ``I_0`` rendered and cached."""
    state = new_state(scene, world)
    rng = np.random.default_rng(seed) if noise > 0 else None
    image = render_depth(state, resolution, noise=noise, rng=rng)
    return replace(state, image0=image), image


# ---------------------------------------------------------------------------
# files


def load_scene_file(path) -> tuple[list[ObjectSpec], World]:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    world = World.from_dict(doc.get("world", {}) or {})
    objects = [ObjectSpec.from_dict(o) for o in doc.get("objects", []) or []]
    return objects, world


def save_scene_file(path, objects: Sequence[ObjectSpec], world: World | None = None):
    doc = {"objects": [o.to_dict() for o in objects]}
    if world is not None:
        doc["world"] = world.to_dict()
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=True), encoding="utf-8")


@dataclass
class TraceLog:
    """One JSON line per step: pose, action, rewards, events."""

    path: Path
    records: list = field(default_factory=list)

    def log(self, episode: int, state: SimState, action, reward: float, events: list, **extra):
        rec = {"episode": episode, "t": state.t, "pose": [float(v) for v in state.gripper.as_pose()],
               "action": action, "reward": float(reward), "events": events,
               "terminated": state.terminated, "success": state.success}
        rec.update(extra)
        self.records.append(rec)

    def flush(self):
        with open(self.path, "a", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.records.clear()
