"""Planar quasi-static grasping simulator."""
from .render import RESOLUTIONS, coverage_mask, normalize_depth, render_depth, resolve_resolution
from .scenes import (NOMINAL, SceneRanges, TraceLog, load_scene_file, make_object, reset, sample_scene,
                     save_scene_file)
from .scripted import expert_motions, grid_motions, one_step_grasps, pivot_motions, run_motions, search_plan, top_down_motions
from .world import (GripperBody, Motion, ObjectSpec, RigidObject, SimError, SimState, World, check_grasp,
                    grasp_contacts, graspable, home_gripper, new_state, object_polygon, step)

__all__ = [
    "RESOLUTIONS", "coverage_mask", "normalize_depth", "render_depth", "resolve_resolution",
    "NOMINAL", "SceneRanges", "TraceLog", "load_scene_file", "make_object", "reset", "sample_scene",
    "save_scene_file", "GripperBody", "Motion", "ObjectSpec", "RigidObject", "SimError", "SimState", "World",
    "expert_motions", "grid_motions", "one_step_grasps", "pivot_motions", "run_motions", "search_plan",
    "top_down_motions",
    "check_grasp", "grasp_contacts", "graspable", "home_gripper", "new_state", "object_polygon", "step",
]
