"""Egocentric semantic-depth column render over the 120 degree field of view."""

from __future__ import annotations

import math

import numpy as np

from .geometry import (
    AGENT_RADIUS,
    DEFAULT_FOV_DEG,
    KIND_OBSTACLE,
    KIND_OPPONENT,
    KIND_WALL,
    Pose,
    WorldMap,
    can_see,
    cast_rays,
    wrap_pi,
)

RESOLUTION = 64
N_RAYS = 64
DEPTH_SCALE = 20.0

_ROWS = np.arange(RESOLUTION)


def ray_angles(heading: float, fov_deg: float = DEFAULT_FOV_DEG, n: int = N_RAYS) -> np.ndarray:
    """Ray directions from the left edge of the view to the right edge."""
    fov = math.radians(fov_deg)
    return heading + fov / 2.0 - (np.arange(n) + 0.5) * (fov / n)


def column_height(d: float) -> int:
    if not d > 0:
        raise ValueError(f"column height needs a positive distance, got {d}")
    return min(RESOLUTION, int(math.floor(RESOLUTION / d + 0.5)))


def _column_heights(dist: np.ndarray) -> np.ndarray:
    return np.minimum(RESOLUTION, np.floor(RESOLUTION / dist + 0.5)).astype(np.int64)


def cast_view(viewer: Pose, world: WorldMap, opponent=None,
              opponent_radius: float = AGENT_RADIUS) -> tuple[np.ndarray, np.ndarray]:
    """Per-column hits, with the opponent present exactly when ``can_see`` holds.

    A disc whose centre is hidden is left out, so a rim peeking past a corner
    draws nothing. A visible disc that no ray reaches (all clipped by an edge,
    or thinner than the ray spacing when far away) is drawn in the column
    containing its centre.
    """
    angles = ray_angles(viewer.heading)
    if opponent is None or not can_see(viewer, opponent, world):
        return cast_rays(viewer.position, angles, world, None, opponent_radius)
    dist, kind = cast_rays(viewer.position, angles, world, opponent, opponent_radius)
    if not (kind == KIND_OPPONENT).any():
        dx, dy = float(opponent[0]) - viewer.x, float(opponent[1]) - viewer.y
        fov = math.radians(DEFAULT_FOV_DEG)
        off = wrap_pi(math.atan2(dy, dx) - viewer.heading)
        j = min(N_RAYS - 1, max(0, int((fov / 2 - off) // (fov / N_RAYS))))
        dist[j] = max(math.hypot(dx, dy) - opponent_radius, 1e-6)
        kind[j] = KIND_OPPONENT
    return dist, kind


def render_hits(dist: np.ndarray, kind: np.ndarray) -> np.ndarray:
    """Paint per-column hits into a (3, 64, 64) float32 image.

    Columns are centred vertically; an odd height puts the extra pixel above the
    middle row.
    """
    heights = _column_heights(dist)
    top = RESOLUTION // 2 - (heights + 1) // 2
    mask = (_ROWS[:, None] >= top[None, :]) & (_ROWS[:, None] < (top + heights)[None, :])
    shade = np.clip(1.0 - dist / DEPTH_SCALE, 0.0, 1.0)
    solid = (kind == KIND_WALL) | (kind == KIND_OBSTACLE)
    obs = np.empty((3, RESOLUTION, RESOLUTION), dtype=np.float32)
    obs[0] = np.where(mask & solid[None, :], shade[None, :], 0.0)
    obs[1] = np.where(mask & (kind == KIND_OPPONENT)[None, :], shade[None, :], 0.0)
    obs[2] = np.broadcast_to(shade[None, :], (RESOLUTION, RESOLUTION))
    return obs


def render_view(viewer: Pose, world: WorldMap, opponent=None) -> np.ndarray:
    return render_hits(*cast_view(viewer, world, opponent))


def render(state, viewer: str = "hider") -> np.ndarray:
    """Observation of ``viewer`` ("hider" or "seeker") for an environment state."""
    if viewer == "hider":
        me, other = state.hider, state.seeker
    elif viewer == "seeker":
        me, other = state.seeker, state.hider
    else:
        raise ValueError(f"unknown viewer {viewer!r}")
    return render_view(me.pose, state.world, (other.x, other.y))


def to_ppm(obs: np.ndarray) -> bytes:
    """Binary PPM of the three channels mapped to R, G, B."""
    c, h, w = obs.shape
    rgb = (np.clip(obs, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes()
