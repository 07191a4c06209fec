"""Scripted controllers that read the true simulator state.

They are references, not learners: a hand-written wall pivot for a flat
card, and an exhaustive search over a table of discrete displacements that
finds a successful action sequence when one exists.
"""
from __future__ import annotations

import itertools
from typing import Iterable, Sequence

from .world import Motion, SimState, step


def pivot_motions(state: SimState, clearance: float = 0.01) -> list[Motion]:
    """Three motions that sweep the first (flat) object into the wall and grasp it.

    Step 1 parks the right finger's outer face ``clearance`` left of the
    object and halfway down; step 2 lowers to the table and sweeps 0.10;
    step 3 sweeps another 0.10 and closes.
    """
    world = state.world
    obj = state.objects[0]
    g = state.gripper
    face = world.g_max / 2 + world.finger_thickness
    left = obj.x - obj.spec.width / 2
    x1 = left - clearance - face
    return [
        Motion(dx=x1 - g.x, dz=-0.10),
        Motion(dx=0.10, dz=-0.10),
        Motion(dx=0.10, close=True),
    ]


def run_motions(state: SimState, motions: Iterable[Motion]) -> SimState:
    for m in motions:
        if state.terminated:
            break
        state, _ = step(state, m)
    return state


def search_plan(state: SimState, table: Sequence[Motion], close_table: Sequence[Motion] | None = None
                ) -> list[Motion] | None:
    """Depth-first search for a motion sequence that ends in a successful grasp.

    ``table`` lists the non-closing motions tried at intermediate steps and
    ``close_table`` the closing ones (defaults to ``table`` with close set).
    Returns the first successful sequence found, or None.
    """
    if close_table is None:
        close_table = [Motion(m.dx, m.dz, m.dpitch, True) for m in table]
    remaining = state.world.episode_length - state.t

    def dfs(s: SimState, left: int):
        for m in close_table:
            nxt, _ = step(s, m)
            if nxt.success:
                return [m]
        if left <= 1:
            return None
        for m in table:
            nxt, _ = step(s, m)
            if nxt.terminated:
                continue
            rest = dfs(nxt, left - 1)
            if rest is not None:
                return [m] + rest
        return None

    return dfs(state, remaining) if remaining > 0 else None


def grid_motions(xs: Sequence[float], zs: Sequence[float], pitches: Sequence[float] = (0.0,),
                 close: bool = False) -> list[Motion]:
    return [Motion(dx, dz, dp, close) for dx, dz, dp in itertools.product(xs, zs, pitches)]


def one_step_grasps(state: SimState, table: Sequence[Motion]) -> list[Motion]:
    """Every closing motion in ``table`` that grasps from ``state`` in one step."""
    out = []
    for m in table:
        nxt, _ = step(state, Motion(m.dx, m.dz, m.dpitch, True))
        if nxt.success:
            out.append(m)
    return out


def top_down_motions(state: SimState) -> list[Motion]:
    """Move above the first object, lower to a third of its height, close."""
    obj = state.objects[0]
    g = state.gripper
    return [
        Motion(dx=obj.x - g.x),
        Motion(dz=obj.spec.height / 3 - g.z),
        Motion(close=True),
    ]


def expert_motions(state: SimState) -> list[Motion]:
    """Reference plan from the true state: wall pivot for cards, top-down otherwise."""
    if not state.objects:
        return [Motion(close=True)]
    if state.objects[0].spec.shape == "card":
        return pivot_motions(state, clearance=0.005)
    return top_down_motions(state)
