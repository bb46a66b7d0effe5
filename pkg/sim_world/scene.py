"""
Procedural single-lane scenes.

A scene is a centerline made of constant-curvature pieces, a lane
corridor of fixed half-width, static obstacles beside the lane and lead
agents driving along it at constant speed.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import UsageError

from .geometry import Box, Polyline, box_corners, boxes_overlap

DEFAULT_HALF_WIDTH = 3.5
DEFAULT_ROUTE_LENGTH = 220.0
ROUTE_MARGIN = 40.0
SAMPLE_SPACING = 0.5
MAX_HEADING = 1.2
STRAIGHT_LEAD_IN = 30.0

EGO_LENGTH = 4.5
EGO_WIDTH = 2.0
OBSTACLE_LENGTH = 4.0
OBSTACLE_WIDTH = 2.0
OBSTACLE_INNER_EDGE = 2.0
OBSTACLE_MIN_S = 40.0
OBSTACLE_MIN_GAP = 15.0

SPAWN_S = 10.0
SPAWN_SPEED = 6.0


class DifficultySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kappa_max: float = Field(ge=0.0)
    n_obstacles: int = Field(ge=0)
    n_agents: int = Field(ge=0)
    stopped_agent_prob: float = Field(0.0, ge=0.0, le=1.0)


DIFFICULTIES: Dict[str, DifficultySpec] = {
    "straight": DifficultySpec(kappa_max=0.0, n_obstacles=0, n_agents=0),
    "easy": DifficultySpec(kappa_max=0.01, n_obstacles=2, n_agents=0),
    "medium": DifficultySpec(kappa_max=0.02, n_obstacles=4, n_agents=1),
    "hard": DifficultySpec(kappa_max=0.03, n_obstacles=6, n_agents=1, stopped_agent_prob=0.3),
}


@dataclass(frozen=True)
class Agent:
    """Vehicle moving along the centerline at constant arc-length speed."""

    s0: float
    lateral: float
    speed: float
    length: float = EGO_LENGTH
    width: float = EGO_WIDTH

    def s_at(self, time: float) -> float:
        return self.s0 + self.speed * time

    def box(self, centerline: Polyline, time: float) -> Box:
        x, y, h = centerline.lateral_point(self.s_at(time), self.lateral)
        return Box(float(x), float(y), float(h), self.length, self.width)


@dataclass(frozen=True)
class Scene:
    centerline: Polyline = field(compare=False)
    points: Tuple[Tuple[float, float], ...]
    half_width: float
    obstacles: Tuple[Box, ...]
    agents: Tuple[Agent, ...]
    route_length: float
    seed: int
    difficulty: str
    spawn_s: float = SPAWN_S
    spawn_speed: float = SPAWN_SPEED

    def ego_start(self) -> np.ndarray:
        return self.centerline.point_at(self.spawn_s)[0]

    def agent_boxes(self, time: float) -> List[Box]:
        return [agent.box(self.centerline, time) for agent in self.agents]

    def boxes(self, time: float) -> List[Box]:
        return list(self.obstacles) + self.agent_boxes(time)


def _centerline(rng: np.random.Generator, kappa_max: float, length: float) -> np.ndarray:
    n = int(math.ceil(length / SAMPLE_SPACING))
    kappa = np.zeros(n)
    pos = int(STRAIGHT_LEAD_IN / SAMPLE_SPACING)
    while pos < n:
        seg = int(rng.uniform(20.0, 50.0) / SAMPLE_SPACING)
        kappa[pos : pos + seg] = rng.uniform(-kappa_max, kappa_max) if kappa_max > 0 else 0.0
        pos += seg
    pts = np.zeros((n + 1, 2))
    heading = 0.0
    for i in range(n):
        # heading stays inside (-pi/2, pi/2) so x is strictly increasing
        new_heading = float(np.clip(heading + kappa[i] * SAMPLE_SPACING, -MAX_HEADING, MAX_HEADING))
        mid = 0.5 * (heading + new_heading)
        pts[i + 1] = pts[i] + SAMPLE_SPACING * np.array([math.cos(mid), math.sin(mid)])
        heading = new_heading
    return pts


def build_scene(seed: int, difficulty: str = "medium", route_length: float = DEFAULT_ROUTE_LENGTH,
                half_width: float = DEFAULT_HALF_WIDTH) -> Scene:
    if difficulty not in DIFFICULTIES:
        raise UsageError(f"unknown difficulty '{difficulty}', expected one of {sorted(DIFFICULTIES)}")
    spec = DIFFICULTIES[difficulty]
    rng = np.random.default_rng(seed)
    pts = _centerline(rng, spec.kappa_max, route_length + ROUTE_MARGIN)
    centerline = Polyline(pts)

    obstacles = []
    if spec.n_obstacles:
        span = (route_length - OBSTACLE_MIN_S) / spec.n_obstacles
        for i in range(spec.n_obstacles):
            s = OBSTACLE_MIN_S + i * span + rng.uniform(0.0, max(0.0, span - OBSTACLE_MIN_GAP))
            side = 1.0 if rng.random() < 0.5 else -1.0
            offset = side * (OBSTACLE_INNER_EDGE + 0.5 * OBSTACLE_WIDTH + rng.uniform(0.0, 0.5))
            x, y, h = centerline.lateral_point(s, offset)
            obstacles.append(Box(float(x), float(y), float(h), OBSTACLE_LENGTH, OBSTACLE_WIDTH))

    agents = []
    for _ in range(spec.n_agents):
        s0 = SPAWN_S + rng.uniform(25.0, 40.0)
        speed = 0.0 if rng.random() < spec.stopped_agent_prob else rng.uniform(3.0, 6.0)
        agents.append(Agent(float(s0), 0.0, float(speed)))

    return Scene(
        centerline=centerline,
        points=tuple(map(tuple, pts.tolist())),
        half_width=half_width,
        obstacles=tuple(obstacles),
        agents=tuple(agents),
        route_length=route_length,
        seed=seed,
        difficulty=difficulty,
    )


def spawn_clear(scene: Scene) -> bool:
    """True when no obstacle or agent overlaps the ego footprint at spawn."""
    x, y, h = scene.ego_start()
    ego = box_corners(x, y, h, EGO_LENGTH, EGO_WIDTH)
    return not any(boxes_overlap(ego, b.corners()) for b in scene.boxes(0.0))


class Command(IntEnum):
    FOLLOW = 0
    LEFT = 1
    RIGHT = 2
    STOP = 3


TURN_LOOKAHEAD = 30.0
TURN_THRESHOLD = 0.3
STOP_LOOKAHEAD = 40.0


def route_command(scene: Scene, pose, time: float = 0.0) -> int:
    """Command derived from route geometry and stopped traffic ahead."""
    s, _ = scene.centerline.project([np.asarray(pose, dtype=np.float64)[:2]])
    s = float(s[0])
    for agent in scene.agents:
        ahead = agent.s_at(time) - s
        if agent.speed == 0.0 and 0.0 < ahead <= STOP_LOOKAHEAD:
            return int(Command.STOP)
    h0, h1 = scene.centerline.heading_at([s, s + TURN_LOOKAHEAD])
    turn = math.remainder(h1 - h0, 2.0 * math.pi)
    if turn > TURN_THRESHOLD:
        return int(Command.LEFT)
    if turn < -TURN_THRESHOLD:
        return int(Command.RIGHT)
    return int(Command.FOLLOW)
