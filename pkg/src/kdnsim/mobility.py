"""Random-waypoint movement for the simulated terminals.

Each UE travels toward a uniformly drawn waypoint at a uniformly drawn speed,
pauses on arrival, then draws the next leg. Every UE owns its own random
stream, so trajectories are independent and reproducible per UE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .network import UserEquipment


@dataclass(frozen=True)
class MobilityConfig:
    area: tuple[float, float] = (500.0, 500.0)       # width, height in metres
    speed_range: tuple[float, float] = (0.0, 20.0)   # m/s
    pause_range: tuple[float, float] = (0.0, 2.0)    # s
    tick_duration: float = 0.1                       # s

    def __post_init__(self):
        if self.area[0] <= 0 or self.area[1] <= 0:
            raise InvalidParameterError("area must have positive extent")
        if not (0 <= self.speed_range[0] <= self.speed_range[1]):
            raise InvalidParameterError("speed_range must satisfy 0 <= v_min <= v_max")
        if not (0 <= self.pause_range[0] <= self.pause_range[1]):
            raise InvalidParameterError("pause_range must satisfy 0 <= p_min <= p_max")
        if self.tick_duration <= 0:
            raise InvalidParameterError("tick_duration must be > 0")


@dataclass
class WaypointWalk:
    """Progress of one UE along its current leg."""

    waypoint: tuple[float, float]
    speed: float        # m/s for this leg
    pause_left: float = 0.0  # s remaining at the waypoint


def start_walk(cfg: MobilityConfig, rng: np.random.Generator) -> WaypointWalk:
    """Draw a fresh leg: waypoint x, waypoint y, then speed (three draws)."""
    wx = rng.random() * cfg.area[0]
    wy = rng.random() * cfg.area[1]
    v = cfg.speed_range[0] + rng.random() * (cfg.speed_range[1] - cfg.speed_range[0])
    return WaypointWalk(waypoint=(wx, wy), speed=v)


def step_mobility(ue: UserEquipment, cfg: MobilityConfig,
                  rng: np.random.Generator) -> UserEquipment:
    """Advance one tick of random-waypoint motion. Mutates and returns ue.

    Arrival happens when the waypoint is within one tick's travel; the UE is
    clamped onto the waypoint (no overshoot), pauses, then draws a new leg.
    """
    if ue.walk is None:
        ue.walk = start_walk(cfg, rng)
    walk = ue.walk
    dt = cfg.tick_duration

    if walk.pause_left > 0.0:
        walk.pause_left -= dt
        ue.velocity = (0.0, 0.0)
        if walk.pause_left <= 0.0:
            ue.walk = start_walk(cfg, rng)
        return ue

    dx = walk.waypoint[0] - ue.position[0]
    dy = walk.waypoint[1] - ue.position[1]
    dist = math.sqrt(dx * dx + dy * dy)
    step_len = walk.speed * dt
    if dist <= step_len:
        ue.position = walk.waypoint
        ue.velocity = (0.0, 0.0)
        p_min, p_max = cfg.pause_range
        walk.pause_left = p_min + rng.random() * (p_max - p_min)
    else:
        scale = step_len / dist
        ue.position = (ue.position[0] + dx * scale, ue.position[1] + dy * scale)
        vel_scale = walk.speed / dist
        ue.velocity = (dx * vel_scale, dy * vel_scale)
    return ue


def observed_speed(prev_position, new_position, tick_duration: float) -> float:
    """Location change rate in m/s over one tick."""
    dx = new_position[0] - prev_position[0]
    dy = new_position[1] - prev_position[1]
    return math.sqrt(dx * dx + dy * dy) / tick_duration


class WalkField:
    """Vectorized random-waypoint state for a whole UE population.

    Matches step_mobility tick for tick and draw for draw; leg draws happen
    from each UE's own stream, so the scalar and vector paths produce
    bitwise-identical trajectories (covered by tests).
    """

    def __init__(self, cfg: MobilityConfig, rngs: list[np.random.Generator]):
        self.cfg = cfg
        self.rngs = rngs
        n = len(rngs)
        self.waypoint = np.empty((n, 2), dtype=float)
        self.speed = np.empty(n, dtype=float)
        self.pause_left = np.zeros(n, dtype=float)
        for i, rng in enumerate(rngs):
            walk = start_walk(cfg, rng)
            self.waypoint[i] = walk.waypoint
            self.speed[i] = walk.speed

    def step(self, pos: np.ndarray) -> None:
        """Advance all UEs one tick, updating pos (N, 2) in place."""
        cfg = self.cfg
        dt = cfg.tick_duration
        moving = self.pause_left <= 0.0

        delta = self.waypoint - pos
        dist = np.sqrt((delta * delta).sum(axis=1))
        step_len = self.speed * dt
        arrived = moving & (dist <= step_len)
        cruising = moving & ~arrived
        # scale is zero off the cruising set, so pos += delta*scale is a no-op there
        scale = np.where(cruising, step_len / np.where(cruising, dist, 1.0), 0.0)
        pos += delta * scale[:, None]

        if arrived.any():
            p_min, p_max = cfg.pause_range
            for i in np.nonzero(arrived)[0]:
                pos[i] = self.waypoint[i]
                self.pause_left[i] = p_min + self.rngs[i].random() * (p_max - p_min)

        paused = ~moving
        if paused.any():
            self.pause_left[paused] -= dt
            for i in np.nonzero(paused & (self.pause_left <= 0.0))[0]:
                walk = start_walk(cfg, self.rngs[i])
                self.waypoint[i] = walk.waypoint
                self.speed[i] = walk.speed
                self.pause_left[i] = 0.0
