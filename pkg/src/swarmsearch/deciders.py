"""Waypoint deciders: random walk, particle-swarm, and belief-model search.

Every decider consumes a DecisionContext snapshot (own cleaned history, peer
broadcasts, bounds, a seeded stream) and returns a Decision. Deciders are
instantiated per robot and own whatever mutable state they need, so distinct
robots may decide concurrently. The registry at the bottom is the extension
point for plugging in new algorithms.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .env import ArenaBounds, Position, distance
from .gp import DEFAULT_KERNEL, GpFitError, GpModel, Kernel, fit_xy, select_kernel, subsample
from .nav import Observation


@dataclass(frozen=True)
class DecisionContext:
    """Everything a decider may look at when choosing the next waypoint.

    ``own_history`` holds the robot's cleaned trajectory observations;
    ``peer_observations`` and ``peer_waypoints`` hold what teammates have
    broadcast so far. All timestamps are <= ``elapsed``.
    """

    robot_id: int
    position: Position
    own_history: tuple[Observation, ...]
    peer_observations: tuple[Observation, ...]
    peer_waypoints: Mapping[int, Position]
    bounds: ArenaBounds
    elapsed: float
    rng: np.random.Generator


@dataclass(frozen=True)
class Decision:
    """A chosen waypoint plus how it was reached.

    ``model`` carries the fitted belief snapshot when one was built;
    ``fallback`` marks a random waypoint issued because the model could not
    be fitted; ``triggered`` marks a re-decision by the exploration rule.
    """

    waypoint: Position
    model: GpModel | None = None
    fallback: bool = False
    triggered: bool = False


class Decider(ABC):
    """One robot's waypoint-choosing policy."""

    @abstractmethod
    def decide(self, ctx: DecisionContext) -> Decision: ...


# ------------------------------------------------------------------ random walk


def random_walk_decide(ctx: DecisionContext) -> Position:
    """Uniform random waypoint over the arena; ignores all shared data."""
    return ctx.bounds.sample(ctx.rng)


class RandomWalkDecider(Decider):
    def decide(self, ctx: DecisionContext) -> Decision:
        return Decision(waypoint=random_walk_decide(ctx))


# -------------------------------------------------------------------------- PSO


@dataclass(frozen=True, slots=True)
class PsoParams:
    """Velocity-update weights: inertia plus local/global attraction.

    Defaults are contraction-dominant (local + global <= 1, low inertia): a
    new waypoint then always lands inside the hull of the points already
    visited, so the swarm tightens onto its best find instead of overshooting
    outward, which is the behaviour this benchmark exists to expose.
    """

    inertia: float = 0.1
    local_weight: float = 0.45
    global_weight: float = 0.45

    def __post_init__(self) -> None:
        if self.inertia < 0 or self.local_weight < 0 or self.global_weight < 0:
            raise ValueError("PSO weights must be >= 0")


@dataclass(frozen=True, slots=True)
class _Best:
    """Best observation seen so far under (level desc, time asc, id asc) order."""

    phi: float
    t: float
    robot_id: int
    position: Position

    def beats(self, other: "_Best | None") -> bool:
        if other is None:
            return True
        if self.phi != other.phi:
            return self.phi > other.phi
        if self.t != other.t:
            return self.t < other.t
        return self.robot_id < other.robot_id


def _obs_level(ob: Observation) -> float:
    return ob.phi_filtered if ob.phi_filtered is not None else ob.phi


@dataclass
class PsoState:
    """Mutable per-robot PSO memory: velocity, bests, and scan watermarks."""

    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    p_best: _Best | None = None
    g_best: _Best | None = None
    own_seen: int = 0
    peer_seen: int = 0


def pso_update_bests(ctx: DecisionContext, state: PsoState) -> tuple[Position, Position]:
    """Refresh the personal and swarm bests from any unseen observations.

    The personal best scans the robot's own history; the swarm best scans own
    plus peer broadcasts. Histories are append-only, so the scan resumes at a
    watermark rather than rescanning everything. Ties go to the earliest
    timestamp, then the lowest robot id. With no observations at all, both
    bests are the current position.
    """
    for ob in ctx.own_history[state.own_seen :]:
        cand = _Best(_obs_level(ob), ob.t, ob.robot_id, ob.position)
        if cand.beats(state.p_best):
            state.p_best = cand
        if cand.beats(state.g_best):
            state.g_best = cand
    state.own_seen = len(ctx.own_history)
    for ob in ctx.peer_observations[state.peer_seen :]:
        cand = _Best(_obs_level(ob), ob.t, ob.robot_id, ob.position)
        if cand.beats(state.g_best):
            state.g_best = cand
    state.peer_seen = len(ctx.peer_observations)
    p = state.p_best.position if state.p_best is not None else ctx.position
    g = state.g_best.position if state.g_best is not None else ctx.position
    return p, g


def pso_decide(ctx: DecisionContext, params: PsoParams, state: PsoState) -> Position:
    """One velocity update; the waypoint is the clipped updated position.

    v <- inertia*v + r1*local*(p_best - x) + r2*global*(g_best - x), with r1
    and r2 fresh uniform draws. The updated velocity persists in ``state``.
    """
    p_best, g_best = pso_update_bests(ctx, state)
    r1 = float(ctx.rng.random())
    r2 = float(ctx.rng.random())
    x = ctx.position.as_array()
    v = (
        params.inertia * state.velocity
        + r1 * params.local_weight * (p_best.as_array() - x)
        + r2 * params.global_weight * (g_best.as_array() - x)
    )
    state.velocity = v
    return ctx.bounds.clip(Position.from_array(x + v))


class PsoDecider(Decider):
    def __init__(self, params: PsoParams = PsoParams()):
        self.params = params
        self.state = PsoState()

    def decide(self, ctx: DecisionContext) -> Decision:
        return Decision(waypoint=pso_decide(ctx, self.params, self.state))


# ---------------------------------------------------------------- belief search


@dataclass(frozen=True, slots=True)
class BayesSwarmParams:
    """Acquisition weights and feasible-set geometry for belief-model search.

    The robot plans within a disc of radius speed*horizon around itself. With
    ``penalty="bsp"`` candidate scores are scaled up with distance from peers'
    planned waypoints, and with ``explore_trigger`` a waypoint landing within
    ``epsilon`` of the robot triggers one re-decision weighted toward
    uncertainty (``explore_alpha``).
    """

    alpha: float = 0.6
    beta: float = 1.0
    speed: float = 0.1
    horizon: float = 10.0
    penalty: str = "none"
    explore_trigger: bool = False
    epsilon: float = 0.1
    explore_alpha: float = 0.1
    candidates: int = 512

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for name in ("beta", "speed", "horizon", "epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.penalty not in ("none", "bsp"):
            raise ValueError(f"penalty must be 'none' or 'bsp', got {self.penalty!r}")
        if not 0.0 <= self.explore_alpha <= 1.0:
            raise ValueError("explore_alpha must lie in [0, 1]")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")

    @property
    def reach(self) -> float:
        """Planning disc radius."""
        return self.speed * self.horizon


@dataclass(frozen=True)
class GpSettings:
    """Belief-model management: kernel, training cap, optional tuning."""

    kernel: Kernel = DEFAULT_KERNEL
    cap: int = 500
    tune: bool = False

    def __post_init__(self) -> None:
        if self.cap < 1:
            raise ValueError("cap must be >= 1")


def bsp_penalty(
    x: Position, peer_waypoints: Iterable[Position], bounds: ArenaBounds
) -> float:
    """Crowding penalty: grows with distance from every peer's planned waypoint.

    Per peer the factor is 1 + d/(1 + diag) where d is the distance to that
    peer's waypoint and diag the arena diagonal; factors multiply. Scores
    scaled by it favour candidates away from where teammates are heading.
    No peers means no scaling (1.0).
    """
    diag = bounds.diagonal()
    gamma = 1.0
    for wp in peer_waypoints:
        gamma *= 1.0 + distance(x, wp) / (1.0 + diag)
    return gamma


def _bsp_penalty_batch(
    points: np.ndarray, peers: Sequence[Position], diag: float
) -> np.ndarray:
    if not peers:
        return np.ones(len(points))
    gamma = np.ones(len(points))
    for wp in peers:
        d = np.hypot(points[:, 0] - wp.x, points[:, 1] - wp.y)
        gamma *= 1.0 + d / (1.0 + diag)
    return gamma


_SOBOL_CACHE: dict[int, np.ndarray] = {}


def _unit_samples(n: int) -> np.ndarray:
    """First n points of the unscrambled 2-D Sobol sequence (cached)."""
    pts = _SOBOL_CACHE.get(n)
    if pts is None:
        pts = qmc.Sobol(d=2, scramble=False).random(n)
        _SOBOL_CACHE[n] = pts
    return pts


def candidate_points(
    center: Position, radius: float, bounds: ArenaBounds, n: int
) -> np.ndarray:
    """Low-discrepancy candidate set in the reach disc, clipped to the arena.

    Unit samples map to the disc by the equal-area transform (r = R*sqrt(u)),
    then clip to the rectangle; clipping a disc point toward an interior
    center stays inside the disc, so the feasibility constraint survives. The
    disc center is prepended so the no-move option is always scored.
    """
    unit = _unit_samples(n)
    r = radius * np.sqrt(unit[:, 0])
    theta = 2.0 * math.pi * unit[:, 1]
    pts = np.column_stack(
        [center.x + r * np.cos(theta), center.y + r * np.sin(theta)]
    )
    np.clip(pts[:, 0], bounds.lower.x, bounds.upper.x, out=pts[:, 0])
    np.clip(pts[:, 1], bounds.lower.y, bounds.upper.y, out=pts[:, 1])
    return np.vstack([[center.x, center.y], pts])


def _minmax(values: np.ndarray) -> tuple[float, float]:
    lo = float(values.min())
    span = float(values.max()) - lo
    return lo, span


class _Acquisition:
    """Scores points against a fitted belief with frozen normalization.

    Mean and std are min-max normalized over the base candidate set; the
    constants freeze there so refinement steps score on the same scale.
    """

    def __init__(
        self,
        model: GpModel,
        base_candidates: np.ndarray,
        alpha: float,
        beta: float,
        peers: Sequence[Position],
        diag: float,
        penalized: bool,
    ):
        self.model = model
        self.alpha = alpha
        self.beta = beta
        self.peers = peers
        self.diag = diag
        self.penalized = penalized
        mu, sigma = model.predict(base_candidates)
        self._mu_lo, self._mu_span = _minmax(mu)
        self._sg_lo, self._sg_span = _minmax(sigma)
        self.base_scores = self._combine(base_candidates, mu, sigma)

    def _normalize(self, v: np.ndarray, lo: float, span: float) -> np.ndarray:
        if span <= 1e-12:
            return np.zeros_like(v)
        return (v - lo) / span

    def _combine(self, points: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        om = self._normalize(mu, self._mu_lo, self._mu_span)
        sg = self._normalize(sigma, self._sg_lo, self._sg_span)
        score = self.alpha * om + (1.0 - self.alpha) * self.beta * sg
        if self.penalized:
            score = score * _bsp_penalty_batch(points, self.peers, self.diag)
        return score

    def score(self, points: np.ndarray) -> np.ndarray:
        mu, sigma = self.model.predict(points)
        return self._combine(points, mu, sigma)

    def rescored(self, alpha: float) -> "_Acquisition":
        """Same model and normalization constants, different exploitation weight."""
        clone = object.__new__(_Acquisition)
        clone.__dict__.update(self.__dict__)
        clone.alpha = alpha
        return clone


#: Relative refinement step sizes, as fractions of the reach radius.
_REFINE_STEPS = (1.0 / 16.0, 1.0 / 64.0)


def _refine(
    acq: _Acquisition,
    start: np.ndarray,
    start_score: float,
    center: Position,
    radius: float,
    bounds: ArenaBounds,
) -> tuple[np.ndarray, float]:
    """One coordinate-descent pass around the incumbent candidate."""
    best = start
    best_score = start_score
    for frac in _REFINE_STEPS:
        step = radius * frac
        for dx, dy in ((step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)):
            cand = np.array([best[0] + dx, best[1] + dy])
            if math.hypot(cand[0] - center.x, cand[1] - center.y) > radius:
                continue
            if not (
                bounds.lower.x <= cand[0] <= bounds.upper.x
                and bounds.lower.y <= cand[1] <= bounds.upper.y
            ):
                continue
            sc = float(acq.score(cand[None, :])[0])
            if sc > best_score:
                best = cand
                best_score = sc
    return best, best_score


def _disc_fallback(ctx: DecisionContext, radius: float) -> Position:
    """Random feasible waypoint when no belief model is available."""
    u = float(ctx.rng.random())
    theta = 2.0 * math.pi * float(ctx.rng.random())
    r = radius * math.sqrt(u)
    return ctx.bounds.clip(
        Position(ctx.position.x + r * math.cos(theta), ctx.position.y + r * math.sin(theta))
    )


def bayes_swarm_decide(
    ctx: DecisionContext,
    params: BayesSwarmParams,
    gp_settings: GpSettings = GpSettings(),
    subsample_rng: np.random.Generator | None = None,
) -> Decision:
    """Choose the next waypoint by maximizing the acquisition over the reach disc.

    Pools own and peer observations (thinned to the training cap), fits the
    belief model, and scores the candidate set: normalized mean weighted by
    alpha, normalized std by (1-alpha)*beta, optionally scaled by the peer
    crowding penalty. The argmax is polished by a local refinement pass. If
    the chosen waypoint is within ``epsilon`` of the robot and the trigger is
    enabled, the decision is redone once with the exploration weight.

    With no observations at all the decider degenerates to a random arena
    waypoint (the opening move); if the model cannot be fitted the robot gets
    a random waypoint inside its reach disc, flagged as a fallback.
    """
    pooled = list(ctx.own_history) + list(ctx.peer_observations)
    if not pooled:
        return Decision(waypoint=random_walk_decide(ctx))
    radius = params.reach
    rng = subsample_rng if subsample_rng is not None else ctx.rng
    data = subsample(pooled, gp_settings.cap, rng)
    X = np.array([[ob.position.x, ob.position.y] for ob in data])
    y = np.array([_obs_level(ob) for ob in data])
    kernel = gp_settings.kernel
    try:
        if gp_settings.tune:
            kernel = select_kernel(X, y, base=kernel)
        model = fit_xy(X, y, kernel)
    except GpFitError:
        return Decision(waypoint=_disc_fallback(ctx, radius), fallback=True)

    peers = [wp for rid, wp in sorted(ctx.peer_waypoints.items()) if rid != ctx.robot_id]
    cands = candidate_points(ctx.position, radius, ctx.bounds, params.candidates)
    acq = _Acquisition(
        model=model,
        base_candidates=cands,
        alpha=params.alpha,
        beta=params.beta,
        peers=peers,
        diag=ctx.bounds.diagonal(),
        penalized=params.penalty == "bsp",
    )

    def pick(a: _Acquisition) -> Position:
        idx = int(np.argmax(a.base_scores))
        best, best_score = _refine(
            a, cands[idx].copy(), float(a.base_scores[idx]), ctx.position, radius, ctx.bounds
        )
        return Position(float(best[0]), float(best[1]))

    waypoint = pick(acq)
    triggered = False
    if params.explore_trigger and distance(waypoint, ctx.position) < params.epsilon:
        triggered = True
        waypoint = pick(acq.rescored(params.explore_alpha))
    return Decision(waypoint=waypoint, model=model, triggered=triggered)


class BayesSwarmDecider(Decider):
    def __init__(
        self,
        params: BayesSwarmParams = BayesSwarmParams(),
        gp_settings: GpSettings = GpSettings(),
        subsample_rng: np.random.Generator | None = None,
    ):
        self.params = params
        self.gp_settings = gp_settings
        self.subsample_rng = subsample_rng

    def decide(self, ctx: DecisionContext) -> Decision:
        return bayes_swarm_decide(ctx, self.params, self.gp_settings, self.subsample_rng)


# --------------------------------------------------------------------- registry


@dataclass(frozen=True)
class AlgoSettings:
    """Bundle of per-algorithm knobs handed to decider factories."""

    bayes: BayesSwarmParams = BayesSwarmParams()
    pso: PsoParams = PsoParams()
    gp: GpSettings = GpSettings()


DeciderFactory = Callable[[AlgoSettings, "np.random.Generator | None"], Decider]


def _make_rw(settings: AlgoSettings, subsample_rng) -> Decider:
    return RandomWalkDecider()


def _make_pso(settings: AlgoSettings, subsample_rng) -> Decider:
    return PsoDecider(settings.pso)


def _make_bs(settings: AlgoSettings, subsample_rng) -> Decider:
    params = replace(settings.bayes, penalty="none", explore_trigger=False)
    return BayesSwarmDecider(params, settings.gp, subsample_rng)


def _make_bsp(settings: AlgoSettings, subsample_rng) -> Decider:
    params = replace(settings.bayes, penalty="bsp", explore_trigger=True)
    return BayesSwarmDecider(params, settings.gp, subsample_rng)


ALGORITHMS: dict[str, DeciderFactory] = {
    "random_walk": _make_rw,
    "pso": _make_pso,
    "bs": _make_bs,
    "bsp": _make_bsp,
}


def register_algorithm(name: str, factory: DeciderFactory) -> None:
    """Add (or replace) a decider under ``name`` for configs and the CLI.

    The factory receives the mission's AlgoSettings and a per-robot generator
    reserved for data-thinning; it must return a fresh Decider per call, since
    every robot gets its own instance.
    """
    if not name:
        raise ValueError("algorithm name must be non-empty")
    ALGORITHMS[name] = factory


def make_decider(
    algorithm: str,
    settings: AlgoSettings = AlgoSettings(),
    subsample_rng: np.random.Generator | None = None,
) -> Decider:
    """Instantiate one robot's decider for the named algorithm."""
    try:
        factory = ALGORITHMS[algorithm]
    except KeyError:
        known = ", ".join(sorted(ALGORITHMS))
        raise ValueError(f"unknown algorithm {algorithm!r} (known: {known})") from None
    return factory(settings, subsample_rng)


def decide(algorithm: str, ctx: DecisionContext) -> Position:
    """One-shot dispatch: route a context through a fresh decider for ``algorithm``."""
    return make_decider(algorithm).decide(ctx).waypoint
