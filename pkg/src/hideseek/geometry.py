"""Static world geometry: arena, box obstacles, raycasting and visibility."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

HALF_EXTENT = 7.0
AGENT_RADIUS = 0.25
DEFAULT_FOV_DEG = 120.0
CELL_SIZE = 0.5

TWO_PI = 2.0 * math.pi

# ray hit kinds, also used as integer codes in vectorised casts
KIND_NONE, KIND_WALL, KIND_OBSTACLE, KIND_OPPONENT = 0, 1, 2, 3
KIND_NAMES = ("none", "wall", "obstacle", "opponent")


class MapSamplingError(RuntimeError):
    pass


class Vec2(NamedTuple):
    x: float
    y: float


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    if t >= TWO_PI:
        t = 0.0
    return t


def wrap_pi(theta: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (theta + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def position(self) -> Vec2:
        return Vec2(self.x, self.y)


@dataclass(frozen=True)
class Obstacle:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate obstacle {self}")

    def overlaps(self, other: "Obstacle") -> bool:
        return (
            self.xmin < other.xmax
            and other.xmin < self.xmax
            and self.ymin < other.ymax
            and other.ymin < self.ymax
        )

    def distance_to(self, x: float, y: float) -> float:
        dx = max(self.xmin - x, 0.0, x - self.xmax)
        dy = max(self.ymin - y, 0.0, y - self.ymax)
        return math.hypot(dx, dy)

    def to_dict(self) -> dict:
        return {"min": [self.xmin, self.ymin], "max": [self.xmax, self.ymax]}

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        return cls(float(d["min"][0]), float(d["min"][1]), float(d["max"][0]), float(d["max"][1]))


@dataclass(frozen=True)
class WorldMap:
    obstacles: tuple[Obstacle, ...] = ()
    map_id: str = "empty"
    half_extent: float = HALF_EXTENT
    _boxes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        h = self.half_extent
        for i, ob in enumerate(self.obstacles):
            if ob.xmin < -h or ob.ymin < -h or ob.xmax > h or ob.ymax > h:
                raise ValueError(f"obstacle {ob} leaves the arena")
            for other in self.obstacles[:i]:
                if ob.overlaps(other):
                    raise ValueError(f"obstacles {other} and {ob} overlap")
        boxes = np.array(
            [[o.xmin, o.ymin, o.xmax, o.ymax] for o in self.obstacles], dtype=np.float64
        ).reshape(-1, 4)
        boxes.setflags(write=False)
        object.__setattr__(self, "_boxes", boxes)

    @property
    def boxes(self) -> np.ndarray:
        """(K, 4) array of [xmin, ymin, xmax, ymax]."""
        return self._boxes

    def to_dict(self) -> dict:
        return {
            "half_extent": self.half_extent,
            "obstacles": [o.to_dict() for o in self.obstacles],
            "map_id": self.map_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldMap":
        return cls(
            obstacles=tuple(Obstacle.from_dict(o) for o in d["obstacles"]),
            map_id=str(d["map_id"]),
            half_extent=float(d["half_extent"]),
        )


class RayHit(NamedTuple):
    distance: float
    kind: str


CANONICAL_OBSTACLES = (
    Obstacle(-5.0, -5.0, -4.0, -3.0),
    Obstacle(4.0, -5.0, 5.0, -3.0),
    Obstacle(-1.0, -0.5, 1.0, 0.5),
    Obstacle(-5.0, 4.0, -3.0, 5.0),
    Obstacle(3.0, 3.0, 5.0, 5.0),
    Obstacle(-0.5, -5.0, 0.5, -4.0),
)


def canonical_map() -> WorldMap:
    return WorldMap(CANONICAL_OBSTACLES, map_id="canonical")


EMPTY_MAP = WorldMap((), map_id="empty")


# --------------------------------------------------------------------------
# predicates


def _segment_enters_box(px, py, dx, dy, ob: Obstacle) -> bool:
    lo, hi = 0.0, 1.0
    for o, d, bmin, bmax in ((px, dx, ob.xmin, ob.xmax), (py, dy, ob.ymin, ob.ymax)):
        if d == 0.0:
            if not (bmin < o < bmax):
                return False
        else:
            t1 = (bmin - o) / d
            t2 = (bmax - o) / d
            if t1 > t2:
                t1, t2 = t2, t1
            lo = max(lo, t1)
            hi = min(hi, t2)
            if lo >= hi:
                return False
    return lo < hi


def segment_blocked(p, q, world: WorldMap) -> bool:
    """True iff the open segment (p, q) passes through the interior of an obstacle."""
    # canonical endpoint order makes the result exactly symmetric
    if (q[0], q[1]) < (p[0], p[1]):
        p, q = q, p
    px, py = float(p[0]), float(p[1])
    dx, dy = float(q[0]) - px, float(q[1]) - py
    return any(_segment_enters_box(px, py, dx, dy, ob) for ob in world.obstacles)


def in_fov(observer: Pose, target, fov: float = DEFAULT_FOV_DEG) -> bool:
    """Whether ``target`` lies within ``fov`` degrees centred on the observer heading."""
    dx = float(target[0]) - observer.x
    dy = float(target[1]) - observer.y
    if dx == 0.0 and dy == 0.0:
        return True
    offset = abs(wrap_pi(math.atan2(dy, dx) - observer.heading))
    return offset <= math.radians(fov) / 2.0


def angular_offset(observer: Pose, target) -> float:
    """Absolute angle in radians between the heading and the direction to target."""
    dx = float(target[0]) - observer.x
    dy = float(target[1]) - observer.y
    return abs(wrap_pi(math.atan2(dy, dx) - observer.heading))


def can_see(observer: Pose, target, world: WorldMap, fov: float = DEFAULT_FOV_DEG) -> bool:
    return in_fov(observer, target, fov) and not segment_blocked(
        observer.position, target, world
    )


# --------------------------------------------------------------------------
# raycasting


def cast_rays(
    origin,
    angles: np.ndarray,
    world: WorldMap,
    opponent: Optional[tuple] = None,
    opponent_radius: float = AGENT_RADIUS,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised raycast. Returns (distances, kind codes) for each angle."""
    ox, oy = float(origin[0]), float(origin[1])
    angles = np.asarray(angles, dtype=np.float64)
    dx = np.cos(angles)
    dy = np.sin(angles)
    h = world.half_extent
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (h - ox) / dx, np.where(dx < 0, (-h - ox) / dx, np.inf))
        ty = np.where(dy > 0, (h - oy) / dy, np.where(dy < 0, (-h - oy) / dy, np.inf))
    dist = np.minimum(tx, ty)
    kind = np.full(angles.shape, KIND_WALL, dtype=np.int8)

    boxes = world.boxes
    if len(boxes):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_x = 1.0 / dx[:, None]
            inv_y = 1.0 / dy[:, None]
            ax = (boxes[None, :, 0] - ox) * inv_x
            bx = (boxes[None, :, 2] - ox) * inv_x
            ay = (boxes[None, :, 1] - oy) * inv_y
            by = (boxes[None, :, 3] - oy) * inv_y
        # rays parallel to a slab: inside the slab -> unbounded, outside -> miss
        par_x = dx[:, None] == 0.0
        inside_x = (boxes[None, :, 0] < ox) & (ox < boxes[None, :, 2])
        par_y = dy[:, None] == 0.0
        inside_y = (boxes[None, :, 1] < oy) & (oy < boxes[None, :, 3])
        xnear = np.where(par_x, np.where(inside_x, -np.inf, np.inf), np.minimum(ax, bx))
        xfar = np.where(par_x, np.where(inside_x, np.inf, -np.inf), np.maximum(ax, bx))
        ynear = np.where(par_y, np.where(inside_y, -np.inf, np.inf), np.minimum(ay, by))
        yfar = np.where(par_y, np.where(inside_y, np.inf, -np.inf), np.maximum(ay, by))
        tnear = np.maximum(xnear, ynear)
        tfar = np.minimum(xfar, yfar)
        hit = (tnear <= tfar) & (tnear > 0.0)
        tbox = np.where(hit, tnear, np.inf).min(axis=1)
        closer = tbox < dist
        dist = np.where(closer, tbox, dist)
        kind = np.where(closer, KIND_OBSTACLE, kind).astype(np.int8)

    if opponent is not None:
        cx = float(opponent[0]) - ox
        cy = float(opponent[1]) - oy
        proj = cx * dx + cy * dy
        disc = proj * proj - (cx * cx + cy * cy - opponent_radius * opponent_radius)
        root = np.sqrt(np.maximum(disc, 0.0))
        t0 = proj - root
        t1 = proj + root
        t = np.where(t0 > 0.0, t0, t1)
        valid = (disc >= 0.0) & (t > 0.0)
        t = np.where(valid, t, np.inf)
        closer = t < dist
        dist = np.where(closer, t, dist)
        kind = np.where(closer, KIND_OPPONENT, kind).astype(np.int8)
    return dist, kind


def raycast(origin, angle: float, world: WorldMap, opponent=None,
            opponent_radius: float = AGENT_RADIUS) -> RayHit:
    """Nearest hit along a single ray. ``opponent`` is a disc centre or None."""
    d, k = cast_rays(origin, np.array([angle]), world, opponent, opponent_radius)
    return RayHit(float(d[0]), KIND_NAMES[int(k[0])])


# --------------------------------------------------------------------------
# collision


def disc_clearance(x: float, y: float, radius: float, world: WorldMap) -> float:
    """Signed clearance between a disc and the nearest wall or obstacle."""
    h = world.half_extent
    c = min(h - x, x + h, h - y, y + h) - radius
    for ob in world.obstacles:
        c = min(c, ob.distance_to(x, y) - radius)
    return c


def disc_free(x: float, y: float, radius: float, world: WorldMap) -> bool:
    return disc_clearance(x, y, radius, world) >= 0.0


def _point_segment_distance(px, py, ax, ay, bx, by) -> float:
    vx, vy = bx - ax, by - ay
    ll = vx * vx + vy * vy
    if ll == 0.0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / ll))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _sweep_free(ax, ay, bx, by, radius, world: WorldMap) -> bool:
    h = world.half_extent - radius
    if not (-h <= bx <= h and -h <= by <= h):
        return False
    for ob in world.obstacles:
        if _segment_enters_box(ax, ay, bx - ax, by - ay, ob):
            return False
        d = min(ob.distance_to(ax, ay), ob.distance_to(bx, by))
        for cx, cy in ((ob.xmin, ob.ymin), (ob.xmin, ob.ymax), (ob.xmax, ob.ymin), (ob.xmax, ob.ymax)):
            d = min(d, _point_segment_distance(cx, cy, ax, ay, bx, by))
        if d < radius:
            return False
    return True


def corridor_clear(p, q, radius: float, world: WorldMap) -> bool:
    """True iff a disc can slide straight from ``p`` to ``q`` without touching anything."""
    return _sweep_free(float(p[0]), float(p[1]), float(q[0]), float(q[1]), radius, world)


def _axis_limit(pos: float, other: float, delta: float, radius: float,
                world: WorldMap, axis: int) -> float:
    """Furthest coordinate reachable moving along one axis by ``delta``."""
    h = world.half_extent - radius
    target = min(max(pos + delta, -h), h)
    if delta > 0:
        target = max(target, min(pos, h))
    elif delta < 0:
        target = min(target, max(pos, -h))
    for ob in world.obstacles:
        if axis == 0:
            lo, hi, olo, ohi = ob.xmin, ob.xmax, ob.ymin, ob.ymax
        else:
            lo, hi, olo, ohi = ob.ymin, ob.ymax, ob.xmin, ob.xmax
        gap = max(olo - other, 0.0, other - ohi)
        if gap >= radius:
            continue
        w = math.sqrt(radius * radius - gap * gap)
        if delta > 0:
            edge = lo - w
            if pos <= edge + 1e-12 and target > edge:
                target = max(edge, pos) if pos <= edge else pos
        elif delta < 0:
            edge = hi + w
            if pos >= edge - 1e-12 and target < edge:
                target = min(edge, pos) if pos >= edge else pos
    return target


def resolve_motion(position, delta, radius: float, world: WorldMap) -> Vec2:
    """Move a disc by ``delta``; slide along blocked axes (x first, then y)."""
    x, y = float(position[0]), float(position[1])
    dx, dy = float(delta[0]), float(delta[1])
    if dx == 0.0 and dy == 0.0:
        return Vec2(x, y)
    nx, ny = x + dx, y + dy
    if _sweep_free(x, y, nx, ny, radius, world):
        return Vec2(nx, ny)
    if dx != 0.0:
        x = _axis_limit(x, y, dx, radius, world, axis=0)
    if dy != 0.0:
        y = _axis_limit(y, x, dy, radius, world, axis=1)
    return Vec2(x, y)


# --------------------------------------------------------------------------
# occupancy and map sampling


def blocked_cells(world: WorldMap, cell_size: float = CELL_SIZE,
                  inflate: float = AGENT_RADIUS) -> np.ndarray:
    """Boolean (rows, cols) grid; row indexes y, column indexes x, both from -h upward.

    A cell is blocked when its square grown by ``inflate`` overlaps an obstacle
    interior or leaves the arena.
    """
    h = world.half_extent
    n = int(round(2 * h / cell_size))
    lo = -h + np.arange(n) * cell_size - inflate
    hi = -h + (np.arange(n) + 1) * cell_size + inflate
    out_x = (lo < -h) | (hi > h)
    blocked = out_x[:, None] | out_x[None, :]
    for ob in world.obstacles:
        over_y = (lo < ob.ymax) & (hi > ob.ymin)
        over_x = (lo < ob.xmax) & (hi > ob.xmin)
        blocked |= over_y[:, None] & over_x[None, :]
    return blocked


def cell_center(row: int, col: int, half_extent: float = HALF_EXTENT,
                cell_size: float = CELL_SIZE) -> Vec2:
    return Vec2(-half_extent + (col + 0.5) * cell_size, -half_extent + (row + 0.5) * cell_size)


def _spawnable(world: WorldMap) -> bool:
    blocked = blocked_cells(world)
    n = blocked.shape[0] // 2
    free = ~blocked
    return bool(free[:n, :n].any() and free[:n, n:].any() and free[n:, :n].any() and free[n:, n:].any())


def sample_map(seed: int, stochastic: bool, max_tries: int = 10_000) -> WorldMap:
    """Canonical layout, or a seeded random set of 0..8 boxes with sides in [1, 3]."""
    if not stochastic:
        return canonical_map()
    rng = np.random.default_rng(seed)
    count = int(rng.integers(0, 9))
    h = HALF_EXTENT
    tries = 0
    while True:
        boxes: list[Obstacle] = []
        while len(boxes) < count:
            tries += 1
            if tries > max_tries:
                raise MapSamplingError(f"could not place {count} obstacles for seed {seed}")
            w, ht = rng.uniform(1.0, 3.0, size=2)
            x0 = rng.uniform(-h, h - w)
            y0 = rng.uniform(-h, h - ht)
            ob = Obstacle(float(x0), float(y0), float(x0 + w), float(y0 + ht))
            if any(ob.overlaps(b) for b in boxes):
                continue
            boxes.append(ob)
        world = WorldMap(tuple(boxes), map_id=f"stochastic-{seed}")
        if _spawnable(world):
            return world
        tries += 1
        if tries > max_tries:
            raise MapSamplingError(f"no spawnable map for seed {seed}")
