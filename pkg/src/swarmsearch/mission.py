"""Mission executor: the tick loop, robot state machines, message bus, termination.

Robots alternate between driving to a waypoint (sampling on a fixed cadence)
and deciding the next one. Cross-robot data moves over an in-process bus with
per-subscriber cursors; a decision may only consume messages stamped strictly
before its own instant, which makes sequential and parallel decision execution
produce identical missions. All randomness flows from named per-component
streams derived from the master seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .deciders import (
    AlgoSettings,
    Decider,
    Decision,
    DecisionContext,
    make_decider,
)
from .env import (
    AcousticSource,
    ArenaBounds,
    DEFAULT_ARENA,
    GridField,
    NoiseConfig,
    PointSourceField,
    Position,
    SignalField,
    distance,
    interp_field,
    write_grid,
)
from .gp import GpModel
from .nav import (
    NavConfig,
    Observation,
    RobotState,
    WaypointTracker,
    sample_observation,
)
from .sensing import DEFAULT_MIC_GEOMETRY, FilterConfig, MicGeometry, filter_trajectory

#: Slack used when comparing simulated times, well under one tick.
TIME_EPS = 1e-9

FIELD_MODES = ("analytic", "analytic+noise", "grid")

#: Fixed entropy for the streams that must not vary with the master seed
#: (initial waypoint fan-out and belief-data thinning). Keeping these stable
#: makes a noise-free model-based mission identical across campaign repeats,
#: which is exactly the zero-spread behaviour the bench shows.
CASE_STREAM_ENTROPY = 0x5357_4152_4D53_4541


@dataclass(frozen=True)
class FieldSpec:
    """What the robots are measuring: an analytic source or a replayed grid."""

    mode: str = "analytic"
    source: AcousticSource | None = None
    grid: GridField | None = None

    def __post_init__(self) -> None:
        if self.mode not in FIELD_MODES:
            raise ValueError(f"field mode must be one of {FIELD_MODES}, got {self.mode!r}")
        if self.mode in ("analytic", "analytic+noise") and self.source is None:
            raise ValueError(f"field mode {self.mode!r} requires a source")
        if self.mode == "grid" and self.grid is None:
            raise ValueError("field mode 'grid' requires grid data")

    def build(self) -> tuple[SignalField, Position]:
        """Returns the base (noise-free) field and the true source position."""
        if self.mode == "grid":
            assert self.grid is not None
            return interp_field(self.grid), self.grid.peak()
        assert self.source is not None
        return PointSourceField(self.source), self.source.location


@dataclass(frozen=True)
class MissionConfig:
    """Everything one mission needs; immutable and fully seedable."""

    algorithm: str
    field: FieldSpec
    name: str = "mission"
    seed: int = 0
    robots: int = 4
    start: Position | tuple[Position, ...] | str = Position(0.0, 0.0)
    arena: ArenaBounds = DEFAULT_ARENA
    noise: NoiseConfig = NoiseConfig()
    nav: NavConfig = NavConfig()
    mic_geometry: MicGeometry = DEFAULT_MIC_GEOMETRY
    filter: FilterConfig = FilterConfig()
    algo: AlgoSettings = AlgoSettings()
    tolerance: float = 0.2
    time_limit: float = 300.0
    decision_latency: float = 0.0
    min_leg_time: float = 1.0
    parallel_decisions: bool = False
    snapshot_resolution: int = 41

    def __post_init__(self) -> None:
        if self.robots < 1:
            raise ValueError("robots must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.decision_latency < 0 or self.min_leg_time < 0:
            raise ValueError("latencies must be >= 0")
        if self.tolerance >= self.arena.diagonal():
            raise ValueError("tolerance must be smaller than the arena diagonal")
        if isinstance(self.start, str):
            if self.start != "random":
                raise ValueError(f"start must be positions or 'random', got {self.start!r}")
        else:
            starts = (self.start,) if isinstance(self.start, Position) else tuple(self.start)
            object.__setattr__(self, "start", starts if len(starts) > 1 else starts[0])
            if not isinstance(self.start, Position) and len(starts) != self.robots:
                raise ValueError(
                    f"got {len(starts)} start positions for {self.robots} robots"
                )
            for p in starts:
                if not self.arena.contains(p):
                    raise ValueError(f"start ({p.x}, {p.y}) outside arena bounds")


# ------------------------------------------------------------------------- bus


TOPICS = ("observations", "waypoints", "positions")


@dataclass(frozen=True)
class BusMessage:
    """One published datum; payloads are immutable after publish."""

    topic: str
    sender: int
    timestamp: float
    payload: object


class Bus:
    """In-process pub/sub with per-(subscriber, topic) read cursors.

    Messages are appended in nondecreasing timestamp order; a subscriber's
    collect() consumes everything unread on a topic stamped strictly before
    the given instant, so each message is delivered to each peer exactly once.
    """

    def __init__(self) -> None:
        self.messages: list[BusMessage] = []
        self._cursors: dict[tuple[int, str], int] = {}

    def publish(self, topic: str, sender: int, timestamp: float, payload: object) -> None:
        if topic not in TOPICS:
            raise ValueError(f"unknown topic {topic!r}")
        if self.messages and timestamp < self.messages[-1].timestamp - TIME_EPS:
            raise ValueError("bus timestamps must be nondecreasing")
        self.messages.append(BusMessage(topic, sender, timestamp, payload))

    def collect(self, subscriber: int, topic: str, before: float) -> list[BusMessage]:
        key = (subscriber, topic)
        i = self._cursors.get(key, 0)
        out: list[BusMessage] = []
        while i < len(self.messages):
            msg = self.messages[i]
            if msg.timestamp >= before - TIME_EPS:
                break
            if msg.topic == topic and msg.sender != subscriber:
                out.append(msg)
            i += 1
        self._cursors[key] = i
        return out


# ----------------------------------------------------------------- seed streams


@dataclass(frozen=True)
class MissionStreams:
    """Named random streams for one mission.

    Stream layout (spawn keys off the master seed): (0,) field/mic noise at
    large, (1, r) robot r's decider, (2, r) robot r's mic noise, (3,) random
    placement. ``belief`` streams (initial waypoint fan-out + training-data
    thinning) spawn from a fixed entropy instead, keyed only by robot id, so
    they do not vary with the master seed; see CASE_STREAM_ENTROPY.
    """

    field_noise: np.random.Generator
    placement: np.random.Generator
    decider: tuple[np.random.Generator, ...]
    mic: tuple[np.random.Generator, ...]
    belief: tuple[np.random.Generator, ...]


def _stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=key))


def seed_streams(master_seed: int, robots: int) -> MissionStreams:
    """Derive all per-component generators for a mission.

    Streams are independent and stable: a component's stream depends only on
    the master seed and its own key, never on the robot count or on how many
    draws other components make.
    """
    return MissionStreams(
        field_noise=_stream(master_seed, 0),
        placement=_stream(master_seed, 3),
        decider=tuple(_stream(master_seed, 1, r) for r in range(robots)),
        mic=tuple(_stream(master_seed, 2, r) for r in range(robots)),
        belief=tuple(
            np.random.default_rng(
                np.random.SeedSequence(entropy=CASE_STREAM_ENTROPY, spawn_key=(r,))
            )
            for r in range(robots)
        ),
    )


# ------------------------------------------------------------------ termination


@dataclass(frozen=True)
class Termination:
    reason: str  # "continue" | "success" | "timeout"
    finder: int | None = None


def check_termination(
    positions: Sequence[Position],
    source: Position,
    tolerance: float,
    now: float,
    limit: float,
) -> Termination:
    """Success as soon as any robot is within tolerance (inclusive) of the
    source; otherwise timeout once the clock reaches the limit. Success wins
    when both hold on the same tick. The finder is the closest robot, lowest
    id on ties.
    """
    if positions:
        dists = [distance(p, source) for p in positions]
        best = min(range(len(dists)), key=lambda i: (dists[i], i))
        if dists[best] <= tolerance:
            return Termination("success", finder=best)
    if now >= limit - TIME_EPS:
        return Termination("timeout")
    return Termination("continue")


# ----------------------------------------------------------------------- result


@dataclass(frozen=True)
class DecisionRecord:
    t: float
    robot_id: int
    waypoint: Position
    fallback: bool = False
    triggered: bool = False


@dataclass(frozen=True)
class RobotTrace:
    """Per-robot mission record, time-ordered."""

    observations: tuple[Observation, ...]
    waypoints: tuple[tuple[float, Position], ...]
    decisions: tuple[DecisionRecord, ...]


EVENTS = ("sample", "decide", "waypoint_reached", "success", "timeout", "stalled")


@dataclass(frozen=True)
class MissionResult:
    config: MissionConfig
    success: bool
    mission_time: float
    finder: int | None
    termination: str
    traces: tuple[RobotTrace, ...]
    events: tuple[dict, ...]

    @property
    def trace_rows(self) -> tuple[dict, ...]:
        return self.events


# ------------------------------------------------------------------ world state


class _Robot:
    """One robot's runtime state inside the world."""

    def __init__(self, rid: int, state: RobotState, decider: Decider):
        self.id = rid
        self.state = state
        self.decider = decider
        self.tracker: WaypointTracker | None = None
        self.waypoint: Position | None = None
        self.move_after = 0.0
        self.no_close_before = 0.0
        self.sample_index = 0
        self.leg_obs: list[Observation] = []
        self.leg_rows: list[dict] = []
        self.history: list[Observation] = []
        self.peer_obs: list[Observation] = []
        self.peer_wps: dict[int, Position] = {}
        self.all_obs: list[Observation] = []
        self.waypoints: list[tuple[float, Position]] = []
        self.decisions: list[DecisionRecord] = []

    @property
    def position(self) -> Position:
        return self.state.position


class World:
    """Owner of all mission state; stepped one tick at a time."""

    def __init__(self, cfg: MissionConfig, snapshot_dir: str | Path | None = None):
        self.cfg = cfg
        self.dt = cfg.nav.dt
        self.ticks = 0
        self.streams = seed_streams(cfg.seed, cfg.robots)
        self.base_field, self.source_position = cfg.field.build()
        self.sample_noise = (
            cfg.noise if cfg.field.mode == "analytic+noise" else NoiseConfig.none()
        )
        self.bus = Bus()
        self.events: list[dict] = []
        self.termination: Termination = Termination("continue")
        self.mission_time: float | None = None
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir is not None else None
        self._snapshot_counts: dict[int, int] = {}
        self._pool: ThreadPoolExecutor | None = None

        starts = self._resolve_starts()
        self.robots = [
            _Robot(
                rid,
                RobotState(position=starts[rid], heading=0.0),
                make_decider(cfg.algorithm, cfg.algo, subsample_rng=self.streams.belief[rid]),
            )
            for rid in range(cfg.robots)
        ]
        self._bootstrap()

    # -- setup

    def _resolve_starts(self) -> list[Position]:
        cfg = self.cfg
        if isinstance(cfg.start, str):  # "random": keep clear of the source
            starts = []
            for _ in range(cfg.robots):
                for _ in range(1000):
                    p = cfg.arena.sample(self.streams.placement)
                    if distance(p, self.source_position) >= 0.4:
                        starts.append(p)
                        break
                else:
                    raise ValueError("could not place a robot >= 0.4 m from the source")
            return starts
        if isinstance(cfg.start, Position):
            return [cfg.start] * cfg.robots
        return list(cfg.start)

    def _initial_radius(self) -> float:
        return min(self.cfg.algo.bayes.reach, 0.5)

    def _bootstrap(self) -> None:
        """Take the t=0 samples and hand every robot a short opening waypoint."""
        radius = self._initial_radius()
        for robot in self.robots:
            self._take_sample(robot, 0.0)
        for robot in self.robots:
            rng = self.streams.belief[robot.id]
            r = radius * math.sqrt(float(rng.random()))
            theta = 2.0 * math.pi * float(rng.random())
            wp = self.cfg.arena.clip(
                Position(robot.position.x + r * math.cos(theta),
                         robot.position.y + r * math.sin(theta))
            )
            self._commit_waypoint(robot, wp, 0.0, record=DecisionRecord(0.0, robot.id, wp))
        self._check_now(0.0)

    # -- helpers

    @property
    def now(self) -> float:
        return self.ticks * self.dt

    @property
    def finished(self) -> bool:
        return self.termination.reason != "continue"

    def _take_sample(self, robot: _Robot, now: float) -> None:
        ob = sample_observation(
            robot.id,
            now,
            robot.position,
            self.base_field,
            self.cfg.mic_geometry,
            self.sample_noise,
            self.streams.mic[robot.id],
        )
        robot.leg_obs.append(ob)
        robot.all_obs.append(ob)
        row = {
            "t": now,
            "robot_id": robot.id,
            "event": "sample",
            "x": ob.position.x,
            "y": ob.position.y,
            "phi_raw": ob.phi,
            "phi_filtered": None,
            "waypoint_x": None,
            "waypoint_y": None,
        }
        robot.leg_rows.append(row)
        self.events.append(row)
        robot.sample_index += 1

    def _commit_waypoint(
        self, robot: _Robot, wp: Position, now: float, record: DecisionRecord
    ) -> None:
        robot.waypoint = wp
        robot.tracker = WaypointTracker(robot.state, wp, self.cfg.nav, self.cfg.arena)
        robot.move_after = now + self.cfg.decision_latency
        robot.no_close_before = now + self.cfg.decision_latency + self.cfg.min_leg_time
        robot.waypoints.append((now, wp))
        robot.decisions.append(record)
        self.bus.publish("waypoints", robot.id, now, (robot.id, wp))
        self.events.append(
            {
                "t": now,
                "robot_id": robot.id,
                "event": "decide",
                "x": robot.position.x,
                "y": robot.position.y,
                "phi_raw": None,
                "phi_filtered": None,
                "waypoint_x": wp.x,
                "waypoint_y": wp.y,
            }
        )

    def _close_leg(self, robot: _Robot, now: float, stalled: bool) -> None:
        assert robot.waypoint is not None
        self.events.append(
            {
                "t": now,
                "robot_id": robot.id,
                "event": "stalled" if stalled else "waypoint_reached",
                "x": robot.position.x,
                "y": robot.position.y,
                "phi_raw": None,
                "phi_filtered": None,
                "waypoint_x": robot.waypoint.x,
                "waypoint_y": robot.waypoint.y,
            }
        )
        filtered, kept = filter_trajectory(
            [ob.phi for ob in robot.leg_obs], self.cfg.filter
        )
        survivors = []
        for value, idx in zip(filtered, kept):
            ob = replace(robot.leg_obs[idx], phi_filtered=value)
            survivors.append(ob)
            robot.leg_rows[idx]["phi_filtered"] = value
        robot.history.extend(survivors)
        self.bus.publish("observations", robot.id, now, tuple(survivors))
        self.bus.publish("positions", robot.id, now, (robot.id, robot.position))
        robot.leg_obs = []
        robot.leg_rows = []
        robot.tracker = None
        robot.waypoint = None

    def _build_context(self, robot: _Robot, now: float) -> DecisionContext:
        for msg in self.bus.collect(robot.id, "observations", now):
            robot.peer_obs.extend(msg.payload)  # type: ignore[arg-type]
        for msg in self.bus.collect(robot.id, "waypoints", now):
            rid, wp = msg.payload  # type: ignore[misc]
            robot.peer_wps[rid] = wp
        return DecisionContext(
            robot_id=robot.id,
            position=robot.position,
            own_history=tuple(robot.history),
            peer_observations=tuple(robot.peer_obs),
            peer_waypoints=dict(robot.peer_wps),
            bounds=self.cfg.arena,
            elapsed=now,
            rng=self.streams.decider[robot.id],
        )

    def _decide_safely(self, robot: _Robot, ctx: DecisionContext) -> Decision:
        try:
            return robot.decider.decide(ctx)
        except Exception:
            # a broken decider must not kill the mission; fall back to a
            # random arena waypoint and mark it
            return Decision(waypoint=ctx.bounds.sample(ctx.rng), fallback=True)

    def _snapshot(self, robot: _Robot, model: GpModel, now: float) -> None:
        assert self.snapshot_dir is not None
        self.snapshot_dir.mkdir(parents=True, exist_ok=True)
        res = self.cfg.snapshot_resolution
        xs = np.linspace(self.cfg.arena.lower.x, self.cfg.arena.upper.x, res)
        ys = np.linspace(self.cfg.arena.lower.y, self.cfg.arena.upper.y, res)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        mu, _ = model.predict(pts)
        grid = GridField(xs=xs, ys=ys, values=mu.reshape(res, res))
        peak = grid.peak()
        count = self._snapshot_counts.get(robot.id, 0)
        self._snapshot_counts[robot.id] = count + 1
        path = self.snapshot_dir / (
            f"{self.cfg.name}_seed{self.cfg.seed}_r{robot.id}_d{count:03d}.csv"
        )
        write_grid(
            grid,
            path,
            comments=[
                f"belief t={now:.6f} robot={robot.id}",
                f"expected_source,{peak.x:.9g},{peak.y:.9g}",
            ],
        )

    def _check_now(self, now: float) -> None:
        term = check_termination(
            [r.position for r in self.robots],
            self.source_position,
            self.cfg.tolerance,
            now,
            self.cfg.time_limit,
        )
        if term.reason == "success":
            self.termination = term
            self.mission_time = now
            finder = self.robots[term.finder] if term.finder is not None else None
            self.events.append(
                {
                    "t": now,
                    "robot_id": term.finder,
                    "event": "success",
                    "x": finder.position.x if finder else None,
                    "y": finder.position.y if finder else None,
                    "phi_raw": None,
                    "phi_filtered": None,
                    "waypoint_x": None,
                    "waypoint_y": None,
                }
            )
        elif term.reason == "timeout":
            self.termination = term
            self.mission_time = self.cfg.time_limit
            self.events.append(
                {
                    "t": self.cfg.time_limit,
                    "robot_id": -1,
                    "event": "timeout",
                    "x": None,
                    "y": None,
                    "phi_raw": None,
                    "phi_filtered": None,
                    "waypoint_x": None,
                    "waypoint_y": None,
                }
            )

    # -- the tick

    def step(self) -> bool:
        """Advance one tick; returns False once the mission has terminated."""
        if self.finished:
            return False
        self.ticks += 1
        now = self.now

        for robot in self.robots:
            if robot.tracker is not None and now > robot.move_after + TIME_EPS:
                robot.tracker.step()
                robot.state = robot.tracker.state
            while robot.sample_index / self.cfg.nav.sample_rate <= now + TIME_EPS:
                self._take_sample(robot, now)

        self._check_now(now)
        if self.finished:
            return False

        arrivals = [
            r
            for r in self.robots
            if r.tracker is not None
            and now + TIME_EPS >= r.no_close_before
            and (r.tracker.arrived or r.tracker.stalled)
        ]
        if arrivals:
            stall_flags = {r.id: r.tracker.stalled for r in arrivals if r.tracker}
            for robot in arrivals:
                self._close_leg(robot, now, stall_flags[robot.id])
            contexts = [self._build_context(r, now) for r in arrivals]
            if self.cfg.parallel_decisions and len(arrivals) > 1:
                if self._pool is None:
                    self._pool = ThreadPoolExecutor(max_workers=self.cfg.robots)
                decisions = list(self._pool.map(self._decide_safely, arrivals, contexts))
            else:
                decisions = [self._decide_safely(r, c) for r, c in zip(arrivals, contexts)]
            for robot, dec in zip(arrivals, decisions):
                record = DecisionRecord(
                    t=now,
                    robot_id=robot.id,
                    waypoint=dec.waypoint,
                    fallback=dec.fallback,
                    triggered=dec.triggered,
                )
                self._commit_waypoint(robot, dec.waypoint, now, record)
                if self.snapshot_dir is not None and dec.model is not None:
                    self._snapshot(robot, dec.model, now)
        return True

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def result(self) -> MissionResult:
        term = self.termination
        success = term.reason == "success"
        mission_time = self.mission_time if self.mission_time is not None else self.cfg.time_limit
        traces = tuple(
            RobotTrace(
                observations=tuple(r.all_obs),
                waypoints=tuple(r.waypoints),
                decisions=tuple(r.decisions),
            )
            for r in self.robots
        )
        return MissionResult(
            config=self.cfg,
            success=success,
            mission_time=mission_time,
            finder=term.finder,
            termination=term.reason if term.reason != "continue" else "timeout",
            traces=traces,
            events=tuple(self.events),
        )


def scheduler_step(world: World, dt: float | None = None) -> World:
    """Advance the world one tick; ``dt`` must match the world's fixed step."""
    if dt is not None and abs(dt - world.dt) > TIME_EPS:
        raise ValueError(f"world runs at dt={world.dt}, cannot step by {dt}")
    world.step()
    return world


# ------------------------------------------------------------------ trace files


TRACE_HEADER = "t,robot_id,event,x,y,phi_raw,phi_filtered,waypoint_x,waypoint_y"


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.6f}"


def _fmt_pos_label(p: Position) -> str:
    return f"{p.x:g};{p.y:g}"


def start_label(cfg: MissionConfig) -> str:
    if isinstance(cfg.start, str):
        return cfg.start
    if isinstance(cfg.start, Position):
        return _fmt_pos_label(cfg.start)
    return "|".join(_fmt_pos_label(p) for p in cfg.start)


def trace_metadata(result: MissionResult) -> str:
    cfg = result.config
    source = cfg.field.build()[1]
    return (
        f"# campaign-run case={cfg.name} algorithm={cfg.algorithm} seed={cfg.seed} "
        f"start={start_label(cfg)} source={_fmt_pos_label(source)} limit={cfg.time_limit:g}"
    )


def write_trace(result: MissionResult, path: str | Path) -> None:
    """One CSV row per mission event, with a machine-readable comment header."""
    lines = [trace_metadata(result), TRACE_HEADER]
    for row in result.events:
        lines.append(
            ",".join(
                [
                    _fmt(row["t"]),
                    str(row["robot_id"]) if row["robot_id"] is not None else "",
                    row["event"],
                    _fmt(row["x"]),
                    _fmt(row["y"]),
                    _fmt(row["phi_raw"]),
                    _fmt(row["phi_filtered"]),
                    _fmt(row["waypoint_x"]),
                    _fmt(row["waypoint_y"]),
                ]
            )
        )
    p = Path(path)
    if p.parent != Path(""):
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(lines) + "\n")


def run_mission(
    cfg: MissionConfig,
    trace_path: str | Path | None = None,
    snapshot_dir: str | Path | None = None,
) -> MissionResult:
    """Run one mission to termination; optionally write its trace and snapshots."""
    world = World(cfg, snapshot_dir=snapshot_dir)
    try:
        while world.step():
            pass
    finally:
        world.close()
    result = world.result()
    if trace_path is not None:
        write_trace(result, trace_path)
    return result
