"""Scenario configuration: YAML schema, defaults, and validation.

Validation is exhaustive rather than fail-fast: every violation found is
reported, each with a machine-readable code (RADIUS_ORDER, SPEED_BOUND,
CAPACITY, SPAWN_INFEASIBLE, SYMMETRIC_DEADLOCK, BAD_EVENT, BAD_VALUE,
MISSING_FIELD).  The spawn checks inflate the required clearances by twice
the unicycle control-point offset so that offset-space safety implies
body-frame safety from the first tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .barriers import Bounds, SafetyParams, eval_landing
from .errors import ConfigError, ConfigViolation, InvalidInputError
from .netsim import LinkModel

_GOLDEN_ANGLE = 2.399963229728653


@dataclass
class AgentSpec:
    start: np.ndarray
    waypoints: list[np.ndarray]
    speed: float = 0.0


@dataclass
class LandingEvent:
    time: float
    pair: int


@dataclass
class WatcherOptions:
    activation_margin: float | None = None
    smoothing: float = 0.7
    velocity_stale_after: float = 0.2
    touchdown_radius_sq: float = 0.01
    touchdown_height: float = 0.02
    touchdown_hold: float = 0.5


@dataclass
class ScenarioConfig:
    n_pairs: int
    dt: float
    duration: float
    seed: int
    capacity: int
    control_rate: float
    watcher_rate: float
    hold_timeout: float
    platform_height: float
    ugv_offset: float
    wheel_base: float
    localization_noise: float
    uav_velocity_lag: float  # low-level tracking time constant; 0 = perfect
    safety: SafetyParams
    gains_uav: np.ndarray
    gains_ugv: np.ndarray
    network: LinkModel
    watcher: WatcherOptions
    uavs: list[AgentSpec]
    ugvs: list[AgentSpec]
    events: list[LandingEvent]
    perturb_setpoints: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    def agent_ids(self) -> list[str]:
        ids = []
        for i in range(self.n_pairs):
            ids.append(f"uav{i}")
            ids.append(f"ugv{i}")
        return ids

    def steps_per_control(self) -> int:
        return round(1.0 / (self.dt * self.control_rate))

    def steps_per_watcher(self) -> int:
        return round(1.0 / (self.dt * self.watcher_rate))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def _get(data: dict, key: str, default=None, *, required=False, violations=None):
    if key in data:
        return data[key]
    if required and violations is not None:
        violations.append(ConfigViolation("MISSING_FIELD", f"missing required field '{key}'"))
    return default


def _as_floats(value, n: int | None = None):
    arr = np.asarray(value, dtype=float)
    if n is not None and arr.shape != (n,):
        raise ValueError(f"expected {n} numbers, got {value!r}")
    return arr


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario; raises ConfigError listing every problem."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([ConfigViolation("BAD_VALUE", f"not valid YAML: {exc}")])
    if not isinstance(data, dict):
        raise ConfigError([ConfigViolation("BAD_VALUE", "top level must be a mapping")])
    return config_from_dict(data)


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r") as f:
        return parse_config(f.read())


def config_from_dict(data: dict) -> ScenarioConfig:
    v: list[ConfigViolation] = []

    n_pairs = int(_get(data, "pairs", 0, required=True, violations=v) or 0)
    if n_pairs <= 0:
        v.append(ConfigViolation("BAD_VALUE", f"pairs must be >= 1, got {n_pairs}"))

    dt = float(_get(data, "dt", 0.01))
    duration = float(_get(data, "duration", 10.0))
    seed = int(_get(data, "seed", 0))
    control_rate = float(_get(data, "control_rate", 50.0))
    watcher_rate = float(_get(data, "watcher_rate", 20.0))
    hold_timeout = float(_get(data, "hold_timeout", 0.25))
    platform_height = float(_get(data, "platform_height", 0.0))
    ugv_offset = float(_get(data, "ugv_offset", 0.1))
    wheel_base = float(_get(data, "wheel_base", 0.2))
    noise = float(_get(data, "localization_noise", 0.0))
    velocity_lag = float(_get(data, "uav_velocity_lag", 0.0))
    perturb = bool(_get(data, "perturb_setpoints", False))

    if dt <= 0:
        v.append(ConfigViolation("BAD_VALUE", f"dt must be positive, got {dt}"))
    if duration < 0:
        v.append(ConfigViolation("BAD_VALUE", f"duration must be >= 0, got {duration}"))
    if ugv_offset <= 0:
        v.append(ConfigViolation("BAD_VALUE", "ugv_offset must be positive"))
    if wheel_base <= 0:
        v.append(ConfigViolation("BAD_VALUE", "wheel_base must be positive"))
    if hold_timeout <= 0:
        v.append(ConfigViolation("BAD_VALUE", "hold_timeout must be positive"))
    if noise < 0:
        v.append(ConfigViolation("BAD_VALUE", "localization_noise must be >= 0"))
    if velocity_lag < 0:
        v.append(ConfigViolation("BAD_VALUE", "uav_velocity_lag must be >= 0"))
    for name, rate in (("control_rate", control_rate), ("watcher_rate", watcher_rate)):
        if rate <= 0:
            v.append(ConfigViolation("BAD_VALUE", f"{name} must be positive"))
        elif dt > 0:
            steps = 1.0 / (dt * rate)
            if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
                v.append(ConfigViolation(
                    "BAD_VALUE",
                    f"{name}={rate} Hz does not divide the dt={dt} grid evenly",
                ))

    ws = _get(data, "workspace", {}) or {}
    try:
        bx = _as_floats(ws.get("x", [-6.0, 6.0]), 2)
        by = _as_floats(ws.get("y", [-6.0, 6.0]), 2)
        bz = _as_floats(ws.get("z", [0.0, 3.0]), 2)
        bounds = Bounds(float(bx[0]), float(bx[1]), float(by[0]), float(by[1]),
                        float(bz[0]), float(bz[1]))
    except ValueError as exc:
        v.append(ConfigViolation("BAD_VALUE", f"workspace: {exc}"))
        bounds = Bounds(-6.0, 6.0, -6.0, 6.0, 0.0, 3.0)

    saf = _get(data, "safety", {}, required=True, violations=v) or {}
    safety = SafetyParams(
        uav_separation=float(saf.get("uav_separation", 0.5)),
        uav_ugv_separation=float(saf.get("uav_ugv_separation", 0.7)),
        ugv_separation=float(saf.get("ugv_separation", 1.0)),
        funnel_sharpness=float(saf.get("funnel_sharpness", 1.0)),
        funnel_height=float(saf.get("funnel_height", 0.5)),
        hover_clearance=float(saf.get("hover_clearance", 0.2)),
        barrier_gain=float(saf.get("barrier_gain", 1.0)),
        bounds=bounds,
        uav_speed_limit=float(saf.get("uav_speed_limit", 1.0)),
        ugv_speed_limit=float(saf.get("ugv_speed_limit", 0.6)),
        turn_rate_limit=float(saf.get("turn_rate_limit", 4.0)),
    )
    for problem in safety.validate():
        code = "RADIUS_ORDER" if "separation radii" in problem else (
            "SPEED_BOUND" if "speed limits" in problem else "BAD_VALUE")
        v.append(ConfigViolation(code, problem))

    min_capacity = 2 * n_pairs + 4 if n_pairs > 0 else 4
    capacity = int(_get(data, "capacity", min_capacity))
    if n_pairs > 0 and capacity < min_capacity:
        v.append(ConfigViolation(
            "CAPACITY",
            f"capacity {capacity} is below the {min_capacity} rows a UAV can need "
            f"with {n_pairs} pairs",
        ))

    gains = _get(data, "gains", {}) or {}
    try:
        raw_g = gains.get("uav", 1.0)
        g_uav = _as_floats(raw_g, 3) if np.ndim(raw_g) else np.full(3, float(raw_g))
    except (ValueError, TypeError):
        v.append(ConfigViolation("BAD_VALUE", "gains.uav must be a number or 3 numbers"))
        g_uav = np.ones(3)
    try:
        raw_g = gains.get("ugv", 1.0)
        g_ugv = _as_floats(raw_g, 2) if np.ndim(raw_g) else np.full(2, float(raw_g))
    except (ValueError, TypeError):
        v.append(ConfigViolation("BAD_VALUE", "gains.ugv must be a number or 2 numbers"))
        g_ugv = np.ones(2)
    if np.any(g_uav <= 0) or np.any(g_ugv <= 0):
        v.append(ConfigViolation("BAD_VALUE", "gains must be positive"))

    net = _get(data, "network", {}) or {}
    network = LinkModel(
        base_latency=float(net.get("latency", 0.0)),
        jitter=float(net.get("jitter", 0.0)),
        drop_prob=float(net.get("drop", 0.0)),
    )
    if network.base_latency < 0 or network.jitter < 0:
        v.append(ConfigViolation("BAD_VALUE", "network latency and jitter must be >= 0"))
    if not 0.0 <= network.drop_prob <= 1.0:
        v.append(ConfigViolation("BAD_VALUE", "network drop must be in [0, 1]"))
    elif network.drop_prob >= 1.0:
        network = LinkModel(network.base_latency, network.jitter, 0.9999999999)

    wv = _get(data, "watcher", {}) or {}
    margin = wv.get("activation_margin", None)
    watcher = WatcherOptions(
        activation_margin=None if margin is None else float(margin),
        smoothing=float(wv.get("smoothing", 0.7)),
        velocity_stale_after=float(wv.get("velocity_stale_after", 0.2)),
        touchdown_radius_sq=float(wv.get("touchdown_radius_sq", 0.01)),
        touchdown_height=float(wv.get("touchdown_height", 0.02)),
        touchdown_hold=float(wv.get("touchdown_hold", 0.5)),
    )
    if not 0 < watcher.smoothing <= 1:
        v.append(ConfigViolation("BAD_VALUE", "watcher.smoothing must be in (0, 1]"))

    agents = _get(data, "agents", [], required=True, violations=v) or []
    if n_pairs > 0 and len(agents) != n_pairs:
        v.append(ConfigViolation(
            "BAD_VALUE", f"expected {n_pairs} agent pair entries, got {len(agents)}"))
    uavs: list[AgentSpec] = []
    ugvs: list[AgentSpec] = []
    for i, entry in enumerate(agents):
        entry = entry or {}
        for kind, dim, bucket in (("uav", 3, uavs), ("ugv", 2, ugvs)):
            spec = entry.get(kind)
            if spec is None:
                v.append(ConfigViolation("MISSING_FIELD", f"agents[{i}].{kind} missing"))
                bucket.append(AgentSpec(np.zeros(3), [np.zeros(dim)]))
                continue
            try:
                start = _as_floats(spec.get("start"), 3)
            except (ValueError, TypeError):
                v.append(ConfigViolation(
                    "BAD_VALUE",
                    f"agents[{i}].{kind}.start must be 3 numbers "
                    f"({'x,y,z' if kind == 'uav' else 'x,y,theta'})",
                ))
                start = np.zeros(3)
            wps = spec.get("waypoints") or [start[:dim]]
            try:
                waypoints = [_as_floats(w, dim) for w in wps]
            except (ValueError, TypeError):
                v.append(ConfigViolation(
                    "BAD_VALUE", f"agents[{i}].{kind}.waypoints must be {dim}-vectors"))
                waypoints = [np.zeros(dim)]
            speed = float(spec.get("speed", 0.0))
            limit = safety.uav_speed_limit if kind == "uav" else safety.ugv_speed_limit
            if speed < 0:
                v.append(ConfigViolation("BAD_VALUE", f"agents[{i}].{kind}.speed < 0"))
            elif speed > limit:
                v.append(ConfigViolation(
                    "SPEED_BOUND",
                    f"agents[{i}].{kind} track speed {speed} exceeds the "
                    f"admissible limit {limit}",
                ))
            bucket.append(AgentSpec(start=start, waypoints=waypoints, speed=speed))

    if perturb:
        for i, spec in enumerate(uavs):
            phi = _GOLDEN_ANGLE * (i + 1)
            nudge = 1e-3 * np.array([math.cos(phi), math.sin(phi), 0.0])
            spec.waypoints = [w + nudge for w in spec.waypoints]
        for i, spec in enumerate(ugvs):
            phi = _GOLDEN_ANGLE * (i + 1) + 1.0
            nudge = 1e-3 * np.array([math.cos(phi), math.sin(phi)])
            spec.waypoints = [w + nudge for w in spec.waypoints]

    events: list[LandingEvent] = []
    for i, entry in enumerate(_get(data, "events", []) or []):
        entry = entry or {}
        etype = entry.get("type", "landing")
        if etype != "landing":
            v.append(ConfigViolation("BAD_EVENT", f"events[{i}]: unknown type {etype!r}"))
            continue
        time = float(entry.get("time", -1.0))
        pair = int(entry.get("pair", -1))
        if time < 0:
            v.append(ConfigViolation("BAD_EVENT", f"events[{i}]: time must be >= 0"))
        if not 0 <= pair < max(n_pairs, 1):
            v.append(ConfigViolation("BAD_EVENT", f"events[{i}]: pair {pair} out of range"))
        else:
            events.append(LandingEvent(time=time, pair=pair))
    events.sort(key=lambda e: (e.time, e.pair))

    if n_pairs > 0 and len(uavs) == n_pairs and len(ugvs) == n_pairs:
        _validate_spawn(v, safety, uavs, ugvs, ugv_offset, platform_height)

    if v:
        raise ConfigError(v)

    return ScenarioConfig(
        n_pairs=n_pairs, dt=dt, duration=duration, seed=seed, capacity=capacity,
        control_rate=control_rate, watcher_rate=watcher_rate,
        hold_timeout=hold_timeout, platform_height=platform_height,
        ugv_offset=ugv_offset, wheel_base=wheel_base, localization_noise=noise,
        uav_velocity_lag=velocity_lag,
        safety=safety, gains_uav=g_uav, gains_ugv=g_ugv, network=network,
        watcher=watcher, uavs=uavs, ugvs=ugvs, events=events,
        perturb_setpoints=perturb, raw=data,
    )


def _inside(bounds: Bounds, x: float, y: float, z: float | None = None) -> bool:
    ok = bounds.x_min < x < bounds.x_max and bounds.y_min < y < bounds.y_max
    if z is not None:
        ok = ok and bounds.z_min < z < bounds.z_max
    return ok


def _validate_spawn(v: list[ConfigViolation], safety: SafetyParams,
                    uavs: list[AgentSpec], ugvs: list[AgentSpec],
                    offset: float, platform_height: float) -> None:
    bounds = safety.bounds
    pad = 2.0 * offset  # offset-space rows protect the body only up to this slack
    n = len(uavs)
    offset_points = []
    for i, spec in enumerate(ugvs):
        x, y, th = spec.start
        ox = x + offset * math.cos(th)
        oy = y + offset * math.sin(th)
        offset_points.append(np.array([ox, oy]))
        if not _inside(bounds, x, y) or not _inside(bounds, ox, oy):
            v.append(ConfigViolation(
                "SPAWN_INFEASIBLE", f"ugv{i} spawns outside the workspace"))
    for i, spec in enumerate(uavs):
        x, y, z = spec.start
        if not _inside(bounds, x, y, z):
            v.append(ConfigViolation(
                "SPAWN_INFEASIBLE", f"uav{i} spawns outside the workspace"))
        platform = np.array([ugvs[i].start[0], ugvs[i].start[1], platform_height])
        try:
            h, _, _ = eval_landing(spec.start, platform, safety.funnel_sharpness,
                                   safety.funnel_height, safety.hover_clearance)
        except InvalidInputError:
            return  # funnel params already reported as BAD_VALUE
        if h <= 0:
            v.append(ConfigViolation(
                "SPAWN_INFEASIBLE",
                f"uav{i} spawns outside its landing funnel safe set (h={h:.4g})"))
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(uavs[i].start - uavs[j].start))
            if d <= safety.uav_separation + pad:
                v.append(ConfigViolation(
                    "SPAWN_INFEASIBLE",
                    f"uav{i}/uav{j} spawn {d:.3f} m apart; need > "
                    f"{safety.uav_separation + pad:.3f}"))
            d = float(np.linalg.norm(offset_points[i] - offset_points[j]))
            if d <= safety.ugv_separation + pad:
                v.append(ConfigViolation(
                    "SPAWN_INFEASIBLE",
                    f"ugv{i}/ugv{j} spawn {d:.3f} m apart; need > "
                    f"{safety.ugv_separation + pad:.3f}"))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            platform = np.array([ugvs[j].start[0], ugvs[j].start[1], platform_height])
            d = float(np.linalg.norm(uavs[i].start - platform))
            if d <= safety.uav_ugv_separation + pad:
                v.append(ConfigViolation(
                    "SPAWN_INFEASIBLE",
                    f"uav{i}/ugv{j} spawn {d:.3f} m apart; need > "
                    f"{safety.uav_ugv_separation + pad:.3f}"))
    # Exactly antipodal crossing tasks stall projection filters; reject them.
    for bucket, label in ((uavs, "uav"), (ugvs, "ugv")):
        dim = 3 if label == "uav" else 2
        for i in range(n):
            for j in range(i + 1, n):
                si, wi = bucket[i].start[:dim], bucket[i].waypoints[0][:dim]
                sj, wj = bucket[j].start[:dim], bucket[j].waypoints[0][:dim]
                if (np.linalg.norm(si - wj) < 1e-9 and np.linalg.norm(sj - wi) < 1e-9
                        and np.linalg.norm(wi - si) > 0):
                    v.append(ConfigViolation(
                        "SYMMETRIC_DEADLOCK",
                        f"{label}{i} and {label}{j} swap positions along the same "
                        "line; enable perturb_setpoints or offset the tasks"))
