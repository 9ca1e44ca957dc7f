"""Unicycle kinematics and waypoint-following for ground robots.

A robot is a point with a heading. A proportional heading controller steers it
toward the active waypoint while speed is gated by the cosine of the heading
error, so a robot facing the wrong way turns in place before driving. While
driving, the onboard array is sampled on a fixed simulated-time cadence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import ArenaBounds, DEFAULT_ARENA, NoiseConfig, Position, SignalField, distance
from .sensing import DEFAULT_MIC_GEOMETRY, MicGeometry, center_spl, simulate_mics


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    return -((-a + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True, slots=True)
class RobotState:
    """Pose plus the currently commanded velocities."""

    position: Position
    heading: float = 0.0
    v: float = 0.0
    omega: float = 0.0


@dataclass(frozen=True, slots=True)
class NavConfig:
    """Motion and sampling parameters.

    ``heading_ki``/``heading_kd`` are reserved slots; the stock controller is
    proportional only, which suffices for noise-free kinematics.
    """

    v_max: float = 0.1
    omega_max: float = 3.0
    tolerance: float = 0.05
    heading_gain: float = 2.0
    heading_ki: float = 0.0
    heading_kd: float = 0.0
    sample_rate: float = 10.0
    dt: float = 0.05
    stall_window: float = 10.0

    def __post_init__(self) -> None:
        for name in ("v_max", "omega_max", "tolerance", "heading_gain", "sample_rate", "dt", "stall_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, slots=True)
class Observation:
    """One calibrated reading taken along a trajectory.

    ``phi`` is the body-centre level before stream cleanup; ``phi_filtered``
    is filled in once the leg's readings have been through the filter.
    """

    t: float
    robot_id: int
    position: Position
    phi: float
    phi_filtered: float | None = None


class SimClock:
    """Simulated time as an integer tick count; immune to wall-clock and drift."""

    def __init__(self, start: float = 0.0, dt: float = 0.05):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.start = start
        self.dt = dt
        self.ticks = 0

    @property
    def now(self) -> float:
        return self.start + self.ticks * self.dt

    def advance(self) -> float:
        self.ticks += 1
        return self.now


def pid_step(state: RobotState, waypoint: Position, cfg: NavConfig) -> tuple[float, float]:
    """Commanded (v, omega) steering toward ``waypoint``.

    Turn rate is proportional to the wrapped heading error, clamped to the
    limit; forward speed is v_max scaled by cos(error) and floored at zero.
    """
    bearing = math.atan2(waypoint.y - state.position.y, waypoint.x - state.position.x)
    err = wrap_angle(bearing - state.heading)
    omega = max(-cfg.omega_max, min(cfg.omega_max, cfg.heading_gain * err))
    v = cfg.v_max * max(0.0, math.cos(err))
    return v, omega


def kinematic_step(
    state: RobotState,
    v: float,
    omega: float,
    dt: float,
    bounds: ArenaBounds | None = None,
) -> RobotState:
    """Integrate the unicycle one step (explicit Euler, pre-turn heading).

    When ``bounds`` is given the new position is clipped to the workspace.
    """
    x = state.position.x + v * math.cos(state.heading) * dt
    y = state.position.y + v * math.sin(state.heading) * dt
    pos = Position(x, y)
    if bounds is not None:
        pos = bounds.clip(pos)
    return RobotState(
        position=pos,
        heading=wrap_angle(state.heading + omega * dt),
        v=v,
        omega=omega,
    )


class WaypointTracker:
    """Steps one robot toward a waypoint and watches for arrival or stalling.

    Stall means the straight-line distance to the waypoint has not improved by
    at least tolerance/2 within ``stall_window`` simulated seconds; it flags
    waypoints the controller cannot reach (e.g. pinned against a wall).
    """

    def __init__(
        self,
        state: RobotState,
        waypoint: Position,
        cfg: NavConfig,
        bounds: ArenaBounds = DEFAULT_ARENA,
    ):
        self.state = state
        self.waypoint = waypoint
        self.cfg = cfg
        self.bounds = bounds
        self.elapsed = 0.0
        self._ref_dist = distance(state.position, waypoint)
        self._ref_elapsed = 0.0

    @property
    def arrived(self) -> bool:
        return distance(self.state.position, self.waypoint) <= self.cfg.tolerance

    @property
    def stalled(self) -> bool:
        if self.arrived:
            return False
        return self.elapsed - self._ref_elapsed >= self.cfg.stall_window

    def step(self) -> RobotState:
        v, omega = pid_step(self.state, self.waypoint, self.cfg)
        self.state = kinematic_step(self.state, v, omega, self.cfg.dt, self.bounds)
        self.elapsed += self.cfg.dt
        d = distance(self.state.position, self.waypoint)
        if d <= self._ref_dist - self.cfg.tolerance / 2.0:
            self._ref_dist = d
            self._ref_elapsed = self.elapsed
        return self.state


def sample_observation(
    robot_id: int,
    t: float,
    position: Position,
    field: SignalField,
    geometry: MicGeometry,
    noise: NoiseConfig,
    rng: np.random.Generator | None,
) -> Observation:
    """Read the array at ``position`` and calibrate to a body-centre level."""
    if rng is None:
        if not noise.is_zero:
            raise ValueError("noisy sampling requires a random generator")
        rng = _NULL_RNG
    reading = simulate_mics(field(position), noise, rng, timestamp=t)
    return Observation(t=t, robot_id=robot_id, position=position, phi=center_spl(reading, geometry))


#: Placeholder for noise-free sampling paths; a zero noise config never draws.
_NULL_RNG = np.random.default_rng(0)


@dataclass(frozen=True)
class NavLeg:
    """Outcome of driving one leg: final state, samples taken, stall flag."""

    state: RobotState
    observations: tuple[Observation, ...]
    stalled: bool


def navigate_to(
    state: RobotState,
    waypoint: Position,
    field: SignalField,
    cfg: NavConfig,
    clock: SimClock | None = None,
    rng: np.random.Generator | None = None,
    *,
    robot_id: int = 0,
    bounds: ArenaBounds = DEFAULT_ARENA,
    noise: NoiseConfig | None = None,
    geometry: MicGeometry = DEFAULT_MIC_GEOMETRY,
) -> NavLeg:
    """Drive from ``state`` to ``waypoint``, sampling the field along the way.

    One observation is taken at the leg start and another every 1/sample_rate
    of simulated time until arrival (distance <= tolerance) or a stall. If the
    start already satisfies the tolerance the leg returns immediately with the
    single start observation.
    """
    if not bounds.contains(waypoint):
        raise ValueError(f"waypoint ({waypoint.x}, {waypoint.y}) outside arena bounds")
    clock = clock if clock is not None else SimClock(0.0, cfg.dt)
    noise = noise if noise is not None else NoiseConfig.none()
    obs: list[Observation] = [
        sample_observation(robot_id, clock.now, state.position, field, geometry, noise, rng)
    ]
    tracker = WaypointTracker(state, waypoint, cfg, bounds)
    if tracker.arrived:
        return NavLeg(state=state, observations=tuple(obs), stalled=False)
    period = 1.0 / cfg.sample_rate
    sample_index = 1
    start_time = clock.now
    while True:
        tracker.step()
        clock.advance()
        while clock.now - start_time + 1e-9 >= sample_index * period:
            obs.append(
                sample_observation(
                    robot_id, clock.now, tracker.state.position, field, geometry, noise, rng
                )
            )
            sample_index += 1
        if tracker.arrived:
            return NavLeg(state=tracker.state, observations=tuple(obs), stalled=False)
        if tracker.stalled:
            return NavLeg(state=tracker.state, observations=tuple(obs), stalled=True)


def leg_time_bound(dist: float, cfg: NavConfig) -> float:
    """Loose upper bound on the time to finish a leg of length ``dist``."""
    return 3.0 * (dist / cfg.v_max + math.pi / cfg.omega_max)
