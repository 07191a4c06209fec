"""Orthographic side-view depth rendering.

The camera looks along +y at the x-z plane.  The image covers
``x in [0, x_max]`` (columns, left to right) and ``z in [0, z_max]`` (rows,
row 0 at the top).  A pixel shows an object if the pixel square and the
object's cross-section overlap with positive area.  The gripper is not drawn.
"""
from __future__ import annotations

import math

import numpy as np

from . import geometry as geo
from .world import SimState, World

RESOLUTIONS = {"fast": (32, 32), "full": (120, 120)}


def resolve_resolution(res) -> tuple[int, int]:
    if isinstance(res, str):
        try:
            return RESOLUTIONS[res]
        except KeyError:
            raise ValueError(f"unknown resolution mode {res!r}") from None
    h, w = (int(v) for v in res)
    if h < 1 or w < 1:
        raise ValueError("resolution must be positive")
    return h, w


def pixel_grid(world: World, shape) -> tuple[np.ndarray, np.ndarray, float, float]:
    h, w = shape
    px, pz = world.x_max / w, world.z_max / h
    xs = (np.arange(w) + 0.5) * px
    zs = world.z_max - (np.arange(h) + 0.5) * pz
    return xs, zs, px, pz


def coverage_mask(poly: np.ndarray, world: World, shape) -> np.ndarray:
    """Pixels whose square overlaps ``poly`` (separating-axis test per pixel)."""
    xs, zs, px, pz = pixel_grid(world, shape)
    cx, cz = np.meshgrid(xs, zs)
    mask = np.ones(cx.shape, dtype=bool)
    arr = geo.as_array(poly)
    for ax in [(1.0, 0.0), (0.0, 1.0)] + geo.edge_normals(poly):
        proj = arr @ np.asarray(ax)
        centre = cx * ax[0] + cz * ax[1]
        r = 0.5 * (px * abs(ax[0]) + pz * abs(ax[1]))
        mask &= (centre - r < proj.max()) & (centre + r > proj.min())
    return mask


def object_depth(obj, world: World, shape) -> np.ndarray:
    """Depth of the object's camera-facing surface per pixel (inf where absent)."""
    poly = obj.polygon(world)
    mask = coverage_mask(poly, world, shape)
    out = np.full(mask.shape, np.inf)
    half_y = obj.spec.depth_y / 2
    if obj.spec.shape == "cylinder":
        xs, zs, _, _ = pixel_grid(world, shape)
        cx, cz = np.meshgrid(xs, zs)
        c = geo.centroid(poly)
        ux, uz = math.cos(obj.theta), math.sin(obj.theta)
        along = ((cx - c[0]) * ux + (cz - c[1]) * uz) / (obj.spec.width / 2)
        bulge = half_y * np.sqrt(np.clip(1.0 - along ** 2, 0.0, 1.0))
        out[mask] = world.camera_distance - bulge[mask]
    else:
        out[mask] = world.camera_distance - half_y
    return out


def render_depth(state: SimState, resolution="fast", noise: float = 0.0, rng: np.random.Generator | None = None
                 ) -> np.ndarray:
    world = state.world
    shape = resolve_resolution(resolution)
    img = np.full(shape, world.depth_max)
    for obj in state.objects:
        img = np.minimum(img, object_depth(obj, world, shape))
    if noise > 0:
        if rng is None:
            raise ValueError("observation noise needs an explicit generator")
        img = img + rng.uniform(-noise, noise, size=shape)
    return np.clip(img, 0.0, world.depth_max)


def normalize_depth(img: np.ndarray, world: World = World()) -> np.ndarray:
    """Map depth to [0, 1] with the far plane at 0 and the camera at 1."""
    return 1.0 - np.asarray(img, dtype=np.float64) / world.depth_max
