"""Experiment campaigns: config files, seeded repeats, summaries, scans.

Config files are TOML. A single-run file has a ``[mission]`` table; a campaign
file has a ``[campaign]`` table plus ``[[case]]`` entries that inherit from
``[campaign.defaults]``. Unknown keys are rejected with their dotted path so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib  # type: ignore[no-redef]

from .deciders import ALGORITHMS, AlgoSettings, BayesSwarmParams, GpSettings, PsoParams
from .env import (
    AcousticSource,
    ArenaBounds,
    GridField,
    NoiseConfig,
    NoisyField,
    Position,
    grid_scan,
    read_grid,
    write_grid,
)
from .gp import Kernel
from .mission import (
    FieldSpec,
    MissionConfig,
    MissionResult,
    run_mission,
    seed_streams,
    start_label,
    write_trace,
)
from .nav import NavConfig
from .sensing import FilterConfig


class ConfigError(ValueError):
    """A config file problem, annotated with the offending dotted path."""


# ------------------------------------------------------------------ the schema

_NAV_KEYS = {
    "v_max",
    "omega_max",
    "tolerance",
    "heading_gain",
    "heading_ki",
    "heading_kd",
    "sample_rate",
    "dt",
    "stall_window",
}

_MISSION_SCHEMA: dict[str, object] = {
    "algorithm": None,
    "name": None,
    "seed": None,
    "robots": None,
    "start": None,
    "tolerance": None,
    "time_limit": None,
    "decision_latency": None,
    "min_leg_time": None,
    "parallel_decisions": None,
    "snapshot_resolution": None,
    "arena": {"lower": None, "upper": None},
    "field": {"mode": None, "source": None, "p0": None, "p_ref": None, "r_min": None, "grid": None},
    "noise": {"gaussian_sigma": None, "outlier_probability": None, "outlier_range": None},
    "nav": {k: None for k in _NAV_KEYS},
    "filter": {"window": None, "smooth_width": None},
    "gp": {"length_scale": None, "signal_variance": None, "noise_variance": None, "cap": None, "tune": None},
    "bayes": {
        "alpha": None,
        "beta": None,
        "speed": None,
        "horizon": None,
        "epsilon": None,
        "explore_alpha": None,
        "candidates": None,
    },
    "pso": {"inertia": None, "local_weight": None, "global_weight": None},
}

_CAMPAIGN_SCHEMA: dict[str, object] = {
    "name": None,
    "repeats": None,
    "base_seed": None,
    "out": None,
    "defaults": _MISSION_SCHEMA,
}

_SCAN_SCHEMA: dict[str, object] = {"resolution": None}


def _check_keys(data: Mapping, schema: Mapping, path: str) -> None:
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"{where}: unknown key")
        sub = schema[key]
        if isinstance(sub, Mapping):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{where}: expected a table")
            _check_keys(value, sub, where)


def _position(value: object, where: str) -> Position:
    if (
        not isinstance(value, Sequence)
        or isinstance(value, str)
        or len(value) != 2
        or not all(isinstance(v, (int, float)) for v in value)
    ):
        raise ConfigError(f"{where}: expected [x, y]")
    return Position(float(value[0]), float(value[1]))


def _start(value: object, where: str):
    if isinstance(value, str):
        if value != "random":
            raise ConfigError(f"{where}: expected [x, y], a list of them, or 'random'")
        return "random"
    if isinstance(value, Sequence) and value and isinstance(value[0], Sequence):
        return tuple(_position(v, where) for v in value)
    return _position(value, where)


def _deep_merge(base: Mapping, override: Mapping) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key in out and isinstance(out[key], Mapping) and isinstance(value, Mapping):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _build(cls, table: Mapping, where: str, **remap):
    """Construct a config dataclass from a TOML table with path-tagged errors."""
    kwargs = {remap.get(k, k): v for k, v in table.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def mission_from_dict(data: Mapping, base_dir: Path, where: str = "mission") -> MissionConfig:
    """Build a MissionConfig from a parsed (already key-checked) table."""
    if "algorithm" not in data:
        raise ConfigError(f"{where}.algorithm: required")
    algorithm = data["algorithm"]
    if algorithm not in ALGORITHMS:
        known = ", ".join(sorted(ALGORITHMS))
        raise ConfigError(f"{where}.algorithm: unknown algorithm {algorithm!r} (known: {known})")

    arena_tab = data.get("arena", {})
    arena_kwargs = {}
    if "lower" in arena_tab:
        arena_kwargs["lower"] = _position(arena_tab["lower"], f"{where}.arena.lower")
    if "upper" in arena_tab:
        arena_kwargs["upper"] = _position(arena_tab["upper"], f"{where}.arena.upper")
    arena = _build(
        ArenaBounds,
        {**{"lower": Position(-1.0, -1.0), "upper": Position(1.0, 1.0)}, **arena_kwargs},
        f"{where}.arena",
    )

    field_tab = dict(data.get("field", {}))
    mode = field_tab.pop("mode", "analytic")
    grid: GridField | None = None
    grid_path = field_tab.pop("grid", None)
    if grid_path is not None:
        grid = read_grid((base_dir / str(grid_path)).resolve())[0]
    source = None
    if "source" in field_tab or mode != "grid":
        if "source" not in field_tab:
            raise ConfigError(f"{where}.field.source: required for mode {mode!r}")
        loc = _position(field_tab.pop("source"), f"{where}.field.source")
        source = _build(AcousticSource, {"location": loc, **field_tab}, f"{where}.field")
    elif field_tab:
        raise ConfigError(f"{where}.field: {sorted(field_tab)} only apply to analytic modes")
    field_spec = _build(
        FieldSpec, {"mode": mode, "source": source, "grid": grid}, f"{where}.field"
    )

    noise_tab = dict(data.get("noise", {}))
    if "outlier_range" in noise_tab:
        rng = noise_tab["outlier_range"]
        if not (isinstance(rng, Sequence) and len(rng) == 2):
            raise ConfigError(f"{where}.noise.outlier_range: expected [low, high]")
        noise_tab["outlier_range"] = (float(rng[0]), float(rng[1]))
    noise = _build(NoiseConfig, noise_tab, f"{where}.noise")

    nav = _build(NavConfig, data.get("nav", {}), f"{where}.nav")
    filt = _build(FilterConfig, data.get("filter", {}), f"{where}.filter")

    gp_tab = dict(data.get("gp", {}))
    cap = int(gp_tab.pop("cap", 500))
    tune = bool(gp_tab.pop("tune", False))
    kernel = _build(Kernel, gp_tab, f"{where}.gp")
    gp_settings = _build(GpSettings, {"kernel": kernel, "cap": cap, "tune": tune}, f"{where}.gp")

    bayes_tab = dict(data.get("bayes", {}))
    bayes_tab.setdefault("speed", nav.v_max)
    bayes = _build(BayesSwarmParams, bayes_tab, f"{where}.bayes")
    pso = _build(PsoParams, data.get("pso", {}), f"{where}.pso")

    top = {
        k: data[k]
        for k in (
            "name",
            "seed",
            "robots",
            "tolerance",
            "time_limit",
            "decision_latency",
            "min_leg_time",
            "parallel_decisions",
            "snapshot_resolution",
        )
        if k in data
    }
    if "start" in data:
        top["start"] = _start(data["start"], f"{where}.start")
    return _build(
        MissionConfig,
        {
            "algorithm": algorithm,
            "field": field_spec,
            "arena": arena,
            "noise": noise,
            "nav": nav,
            "filter": filt,
            "algo": AlgoSettings(bayes=bayes, pso=pso, gp=gp_settings),
            **top,
        },
        where,
    )


@dataclass(frozen=True)
class CampaignSpec:
    """A named list of cases, each run ``repeats`` times with distinct seeds."""

    name: str
    cases: tuple[MissionConfig, ...]
    repeats: int = 5
    base_seed: int = 0
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not self.cases:
            raise ValueError("campaign needs at least one case")
        names = [c.name for c in self.cases]
        if len(set(names)) != len(names):
            raise ValueError("case names must be unique")


def load_mission_config(path: str | Path) -> MissionConfig:
    """Parse a single-run config file (the ``[mission]`` table)."""
    path = Path(path)
    data = _load_toml(path)
    if "mission" not in data:
        raise ConfigError(f"{path}: missing [mission] table")
    extra = set(data) - {"mission", "scan"}
    if extra:
        raise ConfigError(f"{sorted(extra)[0]}: unknown key")
    _check_keys(data["mission"], _MISSION_SCHEMA, "mission")
    if "scan" in data:
        _check_keys(data["scan"], _SCAN_SCHEMA, "scan")
    return mission_from_dict(data["mission"], path.parent)


def scan_resolution(path: str | Path, default: int = 41) -> int:
    """Read the optional ``[scan] resolution`` setting from a config file."""
    data = _load_toml(Path(path))
    value = data.get("scan", {}).get("resolution", default)
    if not isinstance(value, int) or value < 2:
        raise ConfigError("scan.resolution: expected an integer >= 2")
    return value


def _load_toml(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(path: str | Path) -> CampaignSpec:
    """Parse a campaign config; a plain ``[mission]`` file becomes a 1-case campaign."""
    path = Path(path)
    data = _load_toml(path)
    if "campaign" not in data:
        mission = load_mission_config(path)
        return CampaignSpec(
            name=mission.name,
            cases=(mission,),
            repeats=1,
            base_seed=mission.seed,
        )
    extra = set(data) - {"campaign", "case"}
    if extra:
        raise ConfigError(f"{sorted(extra)[0]}: unknown key")
    camp = data["campaign"]
    _check_keys(camp, _CAMPAIGN_SCHEMA, "campaign")
    defaults = camp.get("defaults", {})
    case_tables = data.get("case", [])
    if not isinstance(case_tables, list) or not case_tables:
        raise ConfigError("case: campaign needs at least one [[case]]")
    cases = []
    for i, tab in enumerate(case_tables):
        where = f"case[{i}]"
        _check_keys(tab, _MISSION_SCHEMA, where)
        merged = _deep_merge(defaults, tab)
        if "name" not in merged:
            raise ConfigError(f"{where}.name: required")
        cases.append(mission_from_dict(merged, path.parent, where))
    return CampaignSpec(
        name=str(camp.get("name", path.stem)),
        cases=tuple(cases),
        repeats=int(camp.get("repeats", 5)),
        base_seed=int(camp.get("base_seed", 0)),
        out_dir=camp.get("out"),
    )


# ---------------------------------------------------------------------- summary


@dataclass(frozen=True)
class RunRecord:
    case: str
    algorithm: str
    start: str
    source: str
    seed: int
    success: bool
    time_s: float


@dataclass(frozen=True)
class CaseAggregate:
    case: str
    algorithm: str
    start: str
    source: str
    runs: int
    successes: int
    min_s: float
    max_s: float


@dataclass(frozen=True)
class CampaignSummary:
    name: str
    rows: tuple[RunRecord, ...]

    def aggregates(self) -> list[CaseAggregate]:
        """Per-case success counts and completion-time extremes."""
        order: list[str] = []
        groups: dict[str, list[RunRecord]] = {}
        for row in self.rows:
            if row.case not in groups:
                order.append(row.case)
                groups[row.case] = []
            groups[row.case].append(row)
        out = []
        for case in order:
            rows = groups[case]
            times = [r.time_s for r in rows]
            out.append(
                CaseAggregate(
                    case=case,
                    algorithm=rows[0].algorithm,
                    start=rows[0].start,
                    source=rows[0].source,
                    runs=len(rows),
                    successes=sum(r.success for r in rows),
                    min_s=min(times),
                    max_s=max(times),
                )
            )
        return out

    def case_rows(self, case: str) -> list[RunRecord]:
        return [r for r in self.rows if r.case == case]


SUMMARY_HEADER = "case,algorithm,start,source,seed,success,time_s"


def write_summary(summary: CampaignSummary, path: str | Path) -> None:
    """Summary CSV: aggregate comment lines, then one row per run."""
    lines = [f"# campaign={summary.name}"]
    for agg in summary.aggregates():
        lines.append(
            f"# case={agg.case} algorithm={agg.algorithm} start={agg.start} "
            f"source={agg.source} successes={agg.successes}/{agg.runs} "
            f"min_s={agg.min_s:.2f} max_s={agg.max_s:.2f}"
        )
    lines.append(SUMMARY_HEADER)
    for r in summary.rows:
        lines.append(
            f"{r.case},{r.algorithm},{r.start},{r.source},{r.seed},"
            f"{1 if r.success else 0},{r.time_s:.2f}"
        )
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(lines) + "\n")


def read_summary(path: str | Path) -> CampaignSummary:
    """Parse a summary CSV back; aggregates are recomputed, not trusted."""
    name = "campaign"
    rows: list[RunRecord] = []
    saw_header = False
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            text = line.lstrip("#").strip()
            if text.startswith("campaign="):
                name = text.split("=", 1)[1]
            continue
        if not saw_header:
            if line != SUMMARY_HEADER:
                raise ValueError(f"{path}:{lineno}: expected header {SUMMARY_HEADER!r}")
            saw_header = True
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ValueError(f"{path}:{lineno}: expected 7 columns")
        rows.append(
            RunRecord(
                case=parts[0],
                algorithm=parts[1],
                start=parts[2],
                source=parts[3],
                seed=int(parts[4]),
                success=parts[5] == "1",
                time_s=float(parts[6]),
            )
        )
    if not saw_header:
        raise ValueError(f"{path}: no summary header")
    return CampaignSummary(name=name, rows=tuple(rows))


def _record_from_result(result: MissionResult) -> RunRecord:
    cfg = result.config
    return RunRecord(
        case=cfg.name,
        algorithm=cfg.algorithm,
        start=start_label(cfg),
        source=_source_label(cfg),
        seed=cfg.seed,
        success=result.success,
        time_s=result.mission_time,
    )


def _source_label(cfg: MissionConfig) -> str:
    source = cfg.field.build()[1]
    return f"{source.x:g};{source.y:g}"


def run_campaign(
    spec: CampaignSpec,
    out_dir: str | Path | None = None,
    snapshots: bool = False,
    parallel: bool = False,
    echo: bool = False,
) -> CampaignSummary:
    """Run every case ``repeats`` times and write traces plus one summary CSV.

    Run seeds are ``base_seed + case_index*repeats + i``, so every run in the
    campaign is distinct and exactly replayable. A run that raises is recorded
    as a failed row at the time limit rather than aborting the campaign.
    """
    out = Path(out_dir) if out_dir is not None else Path(spec.out_dir or f"runs/{spec.name}")
    out.mkdir(parents=True, exist_ok=True)
    rows: list[RunRecord] = []
    for case_index, case in enumerate(spec.cases):
        for i in range(spec.repeats):
            seed = spec.base_seed + case_index * spec.repeats + i
            cfg = replace(case, seed=seed, parallel_decisions=case.parallel_decisions or parallel)
            trace_path = out / f"{case.name}_seed{seed}.csv"
            try:
                result = run_mission(
                    cfg,
                    trace_path=trace_path,
                    snapshot_dir=(out / "snapshots") if snapshots else None,
                )
            except Exception as exc:
                print(f"run {case.name} seed {seed} failed: {exc}", file=sys.stderr)
                rows.append(
                    RunRecord(
                        case=case.name,
                        algorithm=case.algorithm,
                        start=start_label(case),
                        source=_source_label(case),
                        seed=seed,
                        success=False,
                        time_s=case.time_limit,
                    )
                )
                continue
            rows.append(_record_from_result(result))
            if echo:
                r = rows[-1]
                print(
                    f"  {r.case} seed {r.seed}: "
                    f"{'success' if r.success else 'failure'} at {r.time_s:.2f} s"
                )
    rows.sort(key=lambda r: (r.case, r.seed))
    summary = CampaignSummary(name=spec.name, rows=tuple(rows))
    write_summary(summary, out / "summary.csv")
    return summary


# ----------------------------------------------------------- trace re-summaries


def _parse_trace_meta(line: str, path: Path) -> dict:
    prefix = "# campaign-run "
    if not line.startswith(prefix):
        raise ValueError(f"{path}: missing campaign-run metadata header")
    meta: dict[str, str] = {}
    for token in line[len(prefix) :].split():
        if "=" not in token:
            raise ValueError(f"{path}: malformed metadata token {token!r}")
        key, value = token.split("=", 1)
        meta[key] = value
    for key in ("case", "algorithm", "seed", "start", "source", "limit"):
        if key not in meta:
            raise ValueError(f"{path}: metadata missing {key!r}")
    return meta


def summarize(trace_paths: Iterable[str | Path], name: str = "campaign") -> CampaignSummary:
    """Rebuild a campaign summary purely from trace files.

    The terminal event decides the row: a ``success`` event yields its
    timestamp, anything else counts as failure at the time limit. Rows come
    out sorted by (case, seed), matching what run_campaign writes.
    """
    rows: list[RunRecord] = []
    for p in trace_paths:
        path = Path(p)
        lines = path.read_text().splitlines()
        if not lines:
            raise ValueError(f"{path}: empty trace")
        meta = _parse_trace_meta(lines[0], path)
        limit = float(meta["limit"])
        success = False
        time_s = limit
        for raw in lines[1:]:
            if raw.startswith("#") or not raw.strip():
                continue
            parts = raw.split(",")
            if len(parts) != 9 or parts[0] == "t":
                continue
            if parts[2] == "success":
                success = True
                time_s = float(parts[0])
            elif parts[2] == "timeout":
                success = False
                time_s = limit
        rows.append(
            RunRecord(
                case=meta["case"],
                algorithm=meta["algorithm"],
                start=meta["start"],
                source=meta["source"],
                seed=int(meta["seed"]),
                success=success,
                time_s=time_s,
            )
        )
    rows.sort(key=lambda r: (r.case, r.seed))
    return CampaignSummary(name=name, rows=tuple(rows))


# ------------------------------------------------------------------------ scans


def run_scan(
    cfg: MissionConfig, resolution: int, out_path: str | Path
) -> Path:
    """Grid-scan the mission's field and write it as a grid CSV.

    In ``analytic+noise`` mode every node reading is corrupted using the
    mission's field-noise stream, so a fixed seed reproduces the file.
    """
    base, source = cfg.field.build()
    field = base
    if cfg.field.mode == "analytic+noise":
        field = NoisyField(base, cfg.noise, seed_streams(cfg.seed, cfg.robots).field_noise)
    grid = grid_scan(field, cfg.arena, resolution)
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_grid(
        grid,
        path,
        comments=[
            f"scan mode={cfg.field.mode} source={source.x:g};{source.y:g} "
            f"resolution={resolution} seed={cfg.seed}"
        ],
    )
    return path
