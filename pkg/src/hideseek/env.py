"""The hide-and-seek game: kinematics, action repeat, catching, rewards, visual states."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import seeker as seeker_mod
from .geometry import (
    AGENT_RADIUS,
    KIND_OBSTACLE,
    Pose,
    WorldMap,
    can_see,
    disc_free,
    resolve_motion,
    sample_map,
)
from .render import cast_view, render_hits

TICKS_PER_SECOND = 50
ACTION_REPEAT = 6
MAX_DECISION_STEPS = 1000
TURN_PER_TICK = math.radians(120.0) / TICKS_PER_SECOND
ACCELERATION = 2.0  # units/s^2
MAX_ACCEL_SPEED = 4.0
CATCH_DISTANCE = 2 * AGENT_RADIUS
MIN_SPAWN_SEPARATION = 2.0
SPAWN_TRIES = 10_000

LIVING_REWARD = 0.001
VISIBILITY_REWARD = 0.001
CATCH_REWARD = -1.0


class Action(enum.IntEnum):
    FORWARD = 0
    BACKWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3
    STILL = 4


N_ACTIONS = len(Action)


class EnvError(RuntimeError):
    pass


class UnknownVariant(ValueError):
    pass


@dataclass(frozen=True)
class VariantConfig:
    name: str
    hider_speed: float = 2.0
    hider_accelerates: bool = False
    seeker_speed: float = seeker_mod.SEEKER_SPEED
    seeker_stochastic: bool = False
    stochastic_maps: bool = False
    visibility_reward: bool = False

    def __post_init__(self):
        if self.hider_speed <= 0 or self.seeker_speed <= 0:
            raise ValueError("speeds must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VariantConfig":
        return cls(**d)


# one row per named configuration
PRESETS = {
    "basic": VariantConfig("basic"),
    "fasterhider": VariantConfig("fasterhider", hider_accelerates=True),
    "slowerhider": VariantConfig("slowerhider", hider_speed=1.0),
    "stochasticseeker": VariantConfig("stochasticseeker", seeker_stochastic=True),
    "stochasticmaps+stochasticseeker": VariantConfig(
        "stochasticmaps+stochasticseeker", seeker_stochastic=True, stochastic_maps=True
    ),
    "visibilityreward": VariantConfig("visibilityreward", visibility_reward=True),
    "visibilityreward+faster": VariantConfig(
        "visibilityreward+faster", hider_accelerates=True, visibility_reward=True
    ),
}

_TOKENS = {
    "basic": {},
    "fasterhider": {"hider_accelerates": True},
    "faster": {"hider_accelerates": True},
    "slowerhider": {"hider_speed": 1.0},
    "slower": {"hider_speed": 1.0},
    "stochasticseeker": {"seeker_stochastic": True},
    "stochasticmaps": {"stochastic_maps": True},
    "visibilityreward": {"visibility_reward": True},
}


def get_variant(name: str, **overrides) -> VariantConfig:
    """Look up a preset, or compose one from '+'-joined tokens, then apply overrides."""
    if name in PRESETS:
        cfg = PRESETS[name]
    else:
        fields: dict = {}
        tokens = [t.strip() for t in name.split("+")]
        for tok in tokens:
            if tok not in _TOKENS:
                raise UnknownVariant(f"unknown variant {name!r}")
            fields.update(_TOKENS[tok])
        if {"fasterhider", "faster"} & set(tokens) and {"slowerhider", "slower"} & set(tokens):
            raise UnknownVariant(f"variant {name!r} is both faster and slower")
        cfg = VariantConfig(name, **fields)
    if overrides:
        unknown = set(overrides) - {f.name for f in dataclasses.fields(VariantConfig)}
        if unknown:
            raise UnknownVariant(f"unknown variant fields {sorted(unknown)}")
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


@dataclass
class AgentState:
    x: float
    y: float
    heading: float
    speed: float
    radius: float = AGENT_RADIUS

    @property
    def pose(self) -> Pose:
        return Pose(self.x, self.y, self.heading)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class VisualState(NamedTuple):
    S: bool  # hider sees seeker
    H: bool  # seeker sees hider
    O: bool  # hider sees an obstacle

    @property
    def index(self) -> int:
        return state_index(self.S, self.H, self.O)


def state_index(s: bool, h: bool, o: bool) -> int:
    """Index into STATE_LABELS; visible-first ordering on each of S, H, O."""
    return 4 * (not s) + 2 * (not h) + (not o)


STATE_LABELS = tuple(
    f"{'' if s else '¬'}S,{'' if h else '¬'}H,{'' if o else '¬'}O"
    for s in (True, False)
    for h in (True, False)
    for o in (True, False)
)


@dataclass
class EnvState:
    variant: VariantConfig
    world: WorldMap
    hider: AgentState
    seeker: AgentState
    seeker_memory: seeker_mod.SeekerInternal
    rng: np.random.Generator
    seed: int
    tick: int = 0
    decision_step: int = 0
    done: bool = False
    caught: bool = False
    grid: seeker_mod.OccupancyGrid = field(init=False, repr=False)

    def __post_init__(self):
        self.grid = seeker_mod.build_occupancy_grid(self.world)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.to_dict(),
            "map": self.world.to_dict(),
            "hider": self.hider.to_dict(),
            "seeker": self.seeker.to_dict(),
            "seeker_memory": self.seeker_memory.to_dict(),
            "rng": self.rng.bit_generator.state,
            "seed": self.seed,
            "tick": self.tick,
            "decision_step": self.decision_step,
            "done": self.done,
            "caught": self.caught,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvState":
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng"]
        return cls(
            variant=VariantConfig.from_dict(d["variant"]),
            world=WorldMap.from_dict(d["map"]),
            hider=AgentState(**d["hider"]),
            seeker=AgentState(**d["seeker"]),
            seeker_memory=seeker_mod.SeekerInternal.from_dict(d["seeker_memory"]),
            rng=rng,
            seed=int(d["seed"]),
            tick=int(d["tick"]),
            decision_step=int(d["decision_step"]),
            done=bool(d["done"]),
            caught=bool(d["caught"]),
        )


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    visual: VisualState
    caught: bool


def _spawn_point(rng: np.random.Generator, world: WorldMap) -> tuple[float, float]:
    lim = world.half_extent - AGENT_RADIUS
    for _ in range(SPAWN_TRIES):
        x, y = rng.uniform(-lim, lim, size=2)
        if disc_free(float(x), float(y), AGENT_RADIUS, world):
            return float(x), float(y)
    raise EnvError("spawn rejection budget exhausted")


def reset(variant: VariantConfig, seed: int, world: Optional[WorldMap] = None) -> EnvState:
    """Fresh episode: random collision-free spawns facing each other."""
    rng = np.random.default_rng(seed)
    if world is None:
        world = sample_map(int(rng.integers(2**31)), variant.stochastic_maps)
    for _ in range(SPAWN_TRIES):
        hx, hy = _spawn_point(rng, world)
        sx, sy = _spawn_point(rng, world)
        if math.hypot(hx - sx, hy - sy) >= MIN_SPAWN_SEPARATION:
            break
    else:
        raise EnvError("spawn rejection budget exhausted")
    return place_agents(variant, world, (hx, hy), (sx, sy), rng=rng, seed=seed)


def place_agents(variant: VariantConfig, world: WorldMap, hider_xy, seeker_xy,
                 rng: Optional[np.random.Generator] = None, seed: int = 0,
                 hider_heading: Optional[float] = None,
                 seeker_heading: Optional[float] = None) -> EnvState:
    """Build a state with agents at given points, facing each other unless headings are given."""
    hx, hy = map(float, hider_xy)
    sx, sy = map(float, seeker_xy)
    if hider_heading is None:
        hider_heading = math.atan2(sy - hy, sx - hx)
    if seeker_heading is None:
        seeker_heading = math.atan2(hy - sy, hx - sx)
    hider = AgentState(hx, hy, Pose(0, 0, hider_heading).heading, variant.hider_speed)
    seeker = AgentState(sx, sy, Pose(0, 0, seeker_heading).heading, variant.seeker_speed)
    return EnvState(
        variant=variant,
        world=world,
        hider=hider,
        seeker=seeker,
        seeker_memory=seeker_mod.SeekerInternal(),
        rng=rng if rng is not None else np.random.default_rng(seed),
        seed=seed,
    )


def check_catch(state: EnvState) -> bool:
    return (
        math.hypot(state.hider.x - state.seeker.x, state.hider.y - state.seeker.y)
        <= CATCH_DISTANCE
    )


def _move(agent: AgentState, distance: float, world: WorldMap) -> None:
    delta = (distance * math.cos(agent.heading), distance * math.sin(agent.heading))
    agent.x, agent.y = resolve_motion((agent.x, agent.y), delta, agent.radius, world)


def tick(state: EnvState, action: int, hider_present: bool = True) -> EnvState:
    """Advance one 1/50 s engine frame in place."""
    if state.done:
        raise EnvError("tick called on a finished episode")
    v = state.variant
    hider, sk = state.hider, state.seeker

    turn, advance = seeker_mod.seeker_act(
        state.seeker_memory,
        sk.pose,
        (hider.x, hider.y) if hider_present else None,
        state.world,
        state.grid,
        v.seeker_stochastic,
        state.rng,
    )
    sk.heading = Pose(0, 0, sk.heading + turn).heading
    if advance:
        _move(sk, sk.speed / TICKS_PER_SECOND, state.world)

    a = Action(int(action))
    if a == Action.FORWARD:
        _move(hider, hider.speed / TICKS_PER_SECOND, state.world)
    elif a == Action.BACKWARD:
        _move(hider, -hider.speed / TICKS_PER_SECOND, state.world)
    elif a == Action.TURN_LEFT:
        hider.heading = Pose(0, 0, hider.heading + TURN_PER_TICK).heading
    elif a == Action.TURN_RIGHT:
        hider.heading = Pose(0, 0, hider.heading - TURN_PER_TICK).heading
    if v.hider_accelerates:
        if a in (Action.FORWARD, Action.BACKWARD):
            hider.speed = min(hider.speed + ACCELERATION / TICKS_PER_SECOND, MAX_ACCEL_SPEED)
        else:
            hider.speed = v.hider_speed

    state.tick += 1
    if hider_present and check_catch(state):
        state.caught = True
        state.done = True
    return state


def visual_state(state: EnvState, hider_hits=None) -> VisualState:
    hider, sk = state.hider, state.seeker
    if hider_hits is None:
        hider_hits = cast_view(hider.pose, state.world, (sk.x, sk.y))
    return VisualState(
        S=can_see(hider.pose, (sk.x, sk.y), state.world),
        H=can_see(sk.pose, (hider.x, hider.y), state.world),
        O=bool(np.any(hider_hits[1] == KIND_OBSTACLE)),
    )


def hider_reward(caught: bool, hider_visible: bool, variant: VariantConfig) -> float:
    if caught:
        return CATCH_REWARD
    r = LIVING_REWARD
    if variant.visibility_reward:
        r += -VISIBILITY_REWARD if hider_visible else VISIBILITY_REWARD
    return r


def observe(state: EnvState) -> tuple[np.ndarray, VisualState]:
    hits = cast_view(state.hider.pose, state.world, (state.seeker.x, state.seeker.y))
    return render_hits(*hits), visual_state(state, hits)


def step(state: EnvState, action: int) -> StepResult:
    """One decision step: the hider's action held for ACTION_REPEAT ticks."""
    if state.done:
        raise EnvError("step called on a finished episode")
    for _ in range(ACTION_REPEAT):
        tick(state, action)
        if state.caught:
            break
    state.decision_step += 1
    obs, vis = observe(state)
    reward = hider_reward(state.caught, vis.H, state.variant)
    if state.decision_step >= MAX_DECISION_STEPS:
        state.done = True
    return StepResult(obs, reward, state.done, vis, state.caught)
