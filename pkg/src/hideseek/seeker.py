"""Scripted seeker: chase / pursue-last-known / patrol, navigating an occupancy grid."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import ndimage

from .geometry import (
    AGENT_RADIUS,
    CELL_SIZE,
    Pose,
    Vec2,
    WorldMap,
    blocked_cells,
    can_see,
    corridor_clear,
    wrap_pi,
)

SEEKER_SPEED = 1.5
TURN_RATE = math.radians(120.0)  # rad/s
TICKS_PER_SECOND = 50
MAX_TURN_PER_TICK = TURN_RATE / TICKS_PER_SECOND
ADVANCE_CONE = math.radians(45.0)
REACH_RADIUS = 0.3
REPLAN_PERIOD = 10

CHASE, PURSUE_LAST, PATROL = "chase", "pursue_last", "patrol"
# NE, NW, SW, SE
PATROL_WAYPOINTS = (Vec2(5.0, 5.0), Vec2(-5.0, 5.0), Vec2(-5.0, -5.0), Vec2(5.0, -5.0))


class Unreachable(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    blocked: np.ndarray  # (rows=y, cols=x)
    cell_size: float = CELL_SIZE
    half_extent: float = 7.0
    labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        # 4-connected components of free cells, 0 = blocked
        labels, _ = ndimage.label(~self.blocked)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.blocked.shape

    def cell_of(self, p) -> tuple[int, int]:
        n = self.blocked.shape[0]
        col = int(math.floor((float(p[0]) + self.half_extent) / self.cell_size))
        row = int(math.floor((float(p[1]) + self.half_extent) / self.cell_size))
        return min(max(row, 0), n - 1), min(max(col, 0), n - 1)

    def center(self, row: int, col: int) -> Vec2:
        return Vec2(
            -self.half_extent + (col + 0.5) * self.cell_size,
            -self.half_extent + (row + 0.5) * self.cell_size,
        )

    def free_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(~self.blocked)
        return list(zip(rows.tolist(), cols.tolist()))

    def nearest_free(self, p, component: Optional[int] = None) -> tuple[int, int]:
        """Free cell whose centre is nearest ``p``; ties go to lower (row, col)."""
        mask = ~self.blocked if component is None else self.labels == component
        rows, cols = np.nonzero(mask)
        if len(rows) == 0:
            raise Unreachable("no free cell")
        cx = -self.half_extent + (cols + 0.5) * self.cell_size
        cy = -self.half_extent + (rows + 0.5) * self.cell_size
        d2 = (cx - float(p[0])) ** 2 + (cy - float(p[1])) ** 2
        i = int(np.argmin(d2))  # nonzero is row-major, so argmin's first hit is the tie-break
        return int(rows[i]), int(cols[i])


@lru_cache(maxsize=128)
def build_occupancy_grid(world: WorldMap) -> OccupancyGrid:
    return OccupancyGrid(
        blocked_cells(world, CELL_SIZE, AGENT_RADIUS),
        cell_size=CELL_SIZE,
        half_extent=world.half_extent,
    )


def _astar(blocked: np.ndarray, start: tuple[int, int], goal: tuple[int, int]):
    n_rows, n_cols = blocked.shape
    gr, gc = goal
    g = {start: 0}
    came: dict = {start: None}
    heap = [(abs(start[0] - gr) + abs(start[1] - gc), start[0], start[1])]
    closed = set()
    while heap:
        _, r, c = heapq.heappop(heap)
        cur = (r, c)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = came[cur]
            return path[::-1]
        closed.add(cur)
        gn = g[cur] + 1
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if not (0 <= nr < n_rows and 0 <= nc < n_cols) or blocked[nr, nc]:
                continue
            nxt = (nr, nc)
            if gn < g.get(nxt, 1 << 30):
                g[nxt] = gn
                came[nxt] = cur
                heapq.heappush(heap, (gn + abs(nr - gr) + abs(nc - gc), nr, nc))
    return None


def plan_path(grid: OccupancyGrid, start, target) -> list[Vec2]:
    """Cell-centre waypoints from ``start`` to the reachable free cell nearest ``target``.

    The start cell itself is not included, so an empty list means already there.
    A start position inside a blocked cell (a disc hugging an obstacle) is snapped to
    its nearest free cell first.
    """
    s = grid.cell_of(start)
    if grid.blocked[s]:
        s = grid.nearest_free(start)
    comp = int(grid.labels[s])
    goal = grid.nearest_free(target, component=comp)
    cells = _astar(grid.blocked, s, goal)
    if cells is None:  # pragma: no cover - components guarantee a path
        raise Unreachable(f"no path from {s} to {goal}")
    return [grid.center(r, c) for r, c in cells[1:]]


# --------------------------------------------------------------------------
# finite-state controller


@dataclass
class SeekerInternal:
    mode: str = PATROL
    last_known: Optional[Vec2] = None
    patrol_index: int = 0
    patrol_target: Optional[Vec2] = None
    path: list = field(default_factory=list)
    ticks_since_plan: int = 0
    # navigation goal the current path was planned to, and where that path ends
    goal: Optional[Vec2] = None
    endpoint: Optional[Vec2] = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "last_known": None if self.last_known is None else list(self.last_known),
            "patrol_index": self.patrol_index,
            "patrol_target": None if self.patrol_target is None else list(self.patrol_target),
            "path": [list(p) for p in self.path],
            "ticks_since_plan": self.ticks_since_plan,
            "goal": None if self.goal is None else list(self.goal),
            "endpoint": None if self.endpoint is None else list(self.endpoint),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeekerInternal":
        def v(x):
            return None if x is None else Vec2(float(x[0]), float(x[1]))

        return cls(
            mode=d["mode"],
            last_known=v(d["last_known"]),
            patrol_index=int(d["patrol_index"]),
            patrol_target=v(d["patrol_target"]),
            path=[Vec2(float(p[0]), float(p[1])) for p in d["path"]],
            ticks_since_plan=int(d["ticks_since_plan"]),
            goal=v(d["goal"]),
            endpoint=v(d.get("endpoint")),
        )


def _snapped_start(grid: OccupancyGrid, pose: Pose) -> Vec2:
    cell = grid.cell_of(pose.position)
    if grid.blocked[cell]:
        cell = grid.nearest_free(pose.position)
    return grid.center(*cell)


def patrol_point(grid: OccupancyGrid, index: int) -> Vec2:
    """Fixed patrol waypoint snapped onto the nearest free cell centre."""
    return grid.center(*grid.nearest_free(PATROL_WAYPOINTS[index % 4]))


def _random_free_point(grid: OccupancyGrid, rng: np.random.Generator) -> Vec2:
    cells = grid.free_cells()
    r, c = cells[int(rng.integers(len(cells)))]
    return grid.center(r, c)


def update_mode(
    internal: SeekerInternal,
    sees_hider: bool,
    hider_pos,
    reached: bool,
    stochastic: bool,
    rng: Optional[np.random.Generator],
    grid: OccupancyGrid,
) -> SeekerInternal:
    """Advance the chase / pursue / patrol state machine in place.

    ``reached`` means the seeker is within REACH_RADIUS of the target of its
    current (pre-update) mode.
    """
    if sees_hider:
        internal.mode = CHASE
        internal.last_known = Vec2(float(hider_pos[0]), float(hider_pos[1]))
        return internal
    if internal.last_known is not None:
        if internal.mode == CHASE or (internal.mode == PURSUE_LAST and not reached):
            internal.mode = PURSUE_LAST
            return internal
        internal.last_known = None
        reached = False
    if internal.mode == PATROL and reached:
        if stochastic:
            internal.patrol_target = None
        else:
            internal.patrol_index = (internal.patrol_index + 1) % 4
    internal.mode = PATROL
    if stochastic:
        if internal.patrol_target is None:
            internal.patrol_target = _random_free_point(grid, rng)
    else:
        internal.patrol_target = patrol_point(grid, internal.patrol_index)
    return internal


def seeker_steer(pose: Pose, target) -> tuple[float, bool]:
    """Turn (rad, clipped to one tick's worth) and whether to advance this tick."""
    err = wrap_pi(math.atan2(float(target[1]) - pose.y, float(target[0]) - pose.x) - pose.heading)
    if err == -math.pi:  # exactly behind: turn left
        err = math.pi
    turn = max(-MAX_TURN_PER_TICK, min(MAX_TURN_PER_TICK, err))
    return turn, abs(err) < ADVANCE_CONE


def _mode_target(internal: SeekerInternal, grid: OccupancyGrid) -> Optional[Vec2]:
    if internal.mode == PURSUE_LAST and internal.last_known is not None:
        return grid.center(*grid.nearest_free(internal.last_known))
    if internal.mode == PATROL:
        return internal.patrol_target
    return None


def seeker_act(
    internal: SeekerInternal,
    pose: Pose,
    hider_pos,
    world: WorldMap,
    grid: OccupancyGrid,
    stochastic: bool,
    rng: Optional[np.random.Generator],
) -> tuple[float, bool]:
    """One tick of seeker decision making. Mutates ``internal``; returns steering.

    ``hider_pos`` may be None to run the seeker with no hider in the world.
    """
    sees = hider_pos is not None and can_see(pose, hider_pos, world)
    target = _mode_target(internal, grid)
    reached = target is not None and (
        math.hypot(target[0] - pose.x, target[1] - pose.y) <= REACH_RADIUS
        or (
            internal.goal == target
            and internal.endpoint is not None
            and math.hypot(internal.endpoint[0] - pose.x, internal.endpoint[1] - pose.y) <= REACH_RADIUS
        )
    )
    prev_mode = internal.mode
    update_mode(internal, sees, hider_pos, reached, stochastic, rng, grid)

    if internal.mode == CHASE:
        if corridor_clear(pose.position, hider_pos, AGENT_RADIUS, world):
            internal.path = []
            internal.goal = internal.endpoint = None
            return seeker_steer(pose, hider_pos)
        # line of sight without room for the body: route around the corner
        goal = grid.center(*grid.nearest_free(hider_pos))
    else:
        goal = _mode_target(internal, grid)
    internal.ticks_since_plan += 1
    if (
        internal.mode != prev_mode
        or goal != internal.goal
        or internal.ticks_since_plan >= REPLAN_PERIOD
    ):
        try:
            internal.path = plan_path(grid, pose.position, goal)
        except Unreachable:
            if internal.mode == CHASE:
                internal.path = []
                internal.goal = internal.endpoint = None
                return seeker_steer(pose, hider_pos)
            # drop the unreachable target and move on to the next patrol target
            if internal.mode == PURSUE_LAST:
                internal.last_known = None
            elif stochastic:
                internal.patrol_target = None
            else:
                internal.patrol_index = (internal.patrol_index + 1) % 4
            internal.mode = PATROL
            internal.path = []
            internal.goal = internal.endpoint = None
            return 0.0, False
        internal.goal = goal
        internal.endpoint = internal.path[-1] if internal.path else _snapped_start(grid, pose)
        internal.ticks_since_plan = 0

    while internal.path and math.hypot(
        internal.path[0][0] - pose.x, internal.path[0][1] - pose.y
    ) <= REACH_RADIUS:
        internal.path.pop(0)
    aim = internal.path[0] if internal.path else goal
    if math.hypot(aim[0] - pose.x, aim[1] - pose.y) <= 1e-9:
        return 0.0, False
    return seeker_steer(pose, aim)
