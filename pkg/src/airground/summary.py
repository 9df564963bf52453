"""Post-run metric aggregation, independent of the in-loop telemetry.

Every barrier value in the summary is recomputed from the raw states in the
trajectory log (never trusted from the controller), then cross-checked
against the per-tick minimum the runner logged; any disagreement beyond
1e-9 means the log was tampered with or the physics diverged, and is an
error.  States are parsed from the log text, so the recomputation sees the
exact same rounded values the producer committed to disk.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

from .config import ScenarioConfig, load_config
from .errors import InvalidInputError
from .logfmt import roundtrip

TRAJECTORY_FILE = "trajectory.csv"
WATCHER_FILE = "watcher.csv"
TRACE_FILE = "trace.log"
METRICS_FILE = "metrics.json"
CONFIG_FILE = "resolved_config.yaml"

TRAJECTORY_HEADER = ("time_s,agent_id,kind,x,y,z,theta,"
                     "ux,uy,uz,qp_status,min_h")
WATCHER_HEADER = ("time_s,agent_id,phase,active_count,"
                  "workspace,uav_other_ugv,landing,uav_uav,ugv_ugv,proximal")


class LogIntegrityError(Exception):
    """A log line disagrees with physics recomputed from its own states."""


@dataclass
class AgentSample:
    kind: str          # uav | ugv
    x: float
    y: float
    z: float
    theta: float
    status: str
    min_h: float


@dataclass
class MetricsSummary:
    duration: float = 0.0
    ticks: int = 0
    family_min_h: dict = field(default_factory=dict)
    min_pair_distance: dict = field(default_factory=dict)
    status_counts: dict = field(default_factory=dict)
    landing_outcomes: dict = field(default_factory=dict)   # pair -> time | None
    row_count_histogram: dict = field(default_factory=dict)
    active_links: int | None = None
    agent_to_agent_messages: int | None = None
    messages_sent: int | None = None
    messages_dropped: int | None = None

    def to_json(self) -> str:
        data = {
            "duration": self.duration,
            "ticks": self.ticks,
            "family_min_h": self.family_min_h,
            "min_pair_distance": self.min_pair_distance,
            "status_counts": self.status_counts,
            "landing_outcomes": {str(k): v for k, v in self.landing_outcomes.items()},
            "row_count_histogram": {
                agent: {str(k): n for k, n in hist.items()}
                for agent, hist in self.row_count_histogram.items()
            },
            "active_links": self.active_links,
            "agent_to_agent_messages": self.agent_to_agent_messages,
            "messages_sent": self.messages_sent,
            "messages_dropped": self.messages_dropped,
        }
        return json.dumps(data, indent=2, sort_keys=True)


@dataclass(frozen=True)
class PhysicsView:
    """The handful of scenario constants needed to re-evaluate every barrier."""

    uav_separation: float
    uav_ugv_separation: float
    ugv_separation: float
    funnel_sharpness: float
    funnel_height: float
    hover_clearance: float
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    ugv_offset: float
    platform_height: float
    n_pairs: int

    @staticmethod
    def from_config(cfg: ScenarioConfig) -> "PhysicsView":
        s = cfg.safety
        b = s.bounds
        return PhysicsView(
            uav_separation=s.uav_separation,
            uav_ugv_separation=s.uav_ugv_separation,
            ugv_separation=s.ugv_separation,
            funnel_sharpness=s.funnel_sharpness,
            funnel_height=s.funnel_height,
            hover_clearance=s.hover_clearance,
            x_min=b.x_min, x_max=b.x_max, y_min=b.y_min, y_max=b.y_max,
            z_min=b.z_min, z_max=b.z_max,
            ugv_offset=cfg.ugv_offset, platform_height=cfg.platform_height,
            n_pairs=cfg.n_pairs,
        )


def _offset_point(view: PhysicsView, s: AgentSample) -> tuple[float, float]:
    return (s.x + view.ugv_offset * math.cos(s.theta),
            s.y + view.ugv_offset * math.sin(s.theta))


def _funnel_h(view: PhysicsView, uav: AgentSample, ugv: AgentSample) -> float:
    rx = uav.x - ugv.x
    ry = uav.y - ugv.y
    rz = uav.z - view.platform_height
    l = rx * rx + ry * ry
    a = view.funnel_sharpness
    return (rz - view.funnel_height * a * l * math.exp(-a * l)
            - view.hover_clearance)


def tick_barriers(view: PhysicsView, snapshot: dict[str, AgentSample]
                  ) -> tuple[dict[str, float], dict[str, float], dict[str, float]]:
    """Evaluate every barrier family from one tick's states.

    Returns (per-agent min h, per-family min h, per-kind min distance).
    Landed UAVs retire from the aerial separation families but keep their
    wall and funnel terms, mirroring the coordinator's row retirement.
    """
    per_agent = {aid: math.inf for aid in snapshot}
    family: dict[str, float] = {}
    dist: dict[str, float] = {}

    def feed(agent_id: str, fam: str, h: float) -> None:
        if h < per_agent[agent_id]:
            per_agent[agent_id] = h
        if h < family.get(fam, math.inf):
            family[fam] = h

    def feed_dist(kind: str, d: float) -> None:
        if d < dist.get(kind, math.inf):
            dist[kind] = d

    uav_ids = sorted(a for a, s in snapshot.items() if s.kind == "uav")
    ugv_ids = sorted(a for a, s in snapshot.items() if s.kind == "ugv")

    for aid in uav_ids:
        s = snapshot[aid]
        feed(aid, "workspace", view.x_max - s.x)
        feed(aid, "workspace", s.x - view.x_min)
        feed(aid, "workspace", view.y_max - s.y)
        feed(aid, "workspace", s.y - view.y_min)
        feed(aid, "workspace", view.z_max - s.z)
        own = "ugv" + aid[3:]
        if own in snapshot:
            feed(aid, "landing", _funnel_h(view, s, snapshot[own]))
    for aid in ugv_ids:
        s = snapshot[aid]
        ox, oy = _offset_point(view, s)
        feed(aid, "workspace", view.x_max - ox)
        feed(aid, "workspace", ox - view.x_min)
        feed(aid, "workspace", view.y_max - oy)
        feed(aid, "workspace", oy - view.y_min)

    flying = [a for a in uav_ids if snapshot[a].status != "landed"]
    for i, ai in enumerate(flying):
        si = snapshot[ai]
        for aj in flying[i + 1:]:
            sj = snapshot[aj]
            dx, dy, dz = si.x - sj.x, si.y - sj.y, si.z - sj.z
            d2 = dx * dx + dy * dy + dz * dz
            h = d2 - view.uav_separation ** 2
            feed(ai, "uav_uav", h)
            feed(aj, "uav_uav", h)
            feed_dist("uav_uav", math.sqrt(d2))
        own = "ugv" + ai[3:]
        for gj in ugv_ids:
            if gj == own:
                continue
            sg = snapshot[gj]
            dx = si.x - sg.x
            dy = si.y - sg.y
            dz = si.z - view.platform_height
            d2 = dx * dx + dy * dy + dz * dz
            h = d2 - view.uav_ugv_separation ** 2
            feed(ai, "uav_other_ugv", h)
            feed_dist("uav_ugv", math.sqrt(d2))
    for i, gi in enumerate(ugv_ids):
        oxi, oyi = _offset_point(view, snapshot[gi])
        for gj in ugv_ids[i + 1:]:
            oxj, oyj = _offset_point(view, snapshot[gj])
            dx, dy = oxi - oxj, oyi - oyj
            d2 = dx * dx + dy * dy
            h = d2 - view.ugv_separation ** 2
            feed(gi, "ugv_ugv", h)
            feed(gj, "ugv_ugv", h)
            feed_dist("ugv_ugv", math.sqrt(d2))

    return per_agent, family, dist


def _parse_trajectory(path: str):
    """Yields (line_number, time_str, AgentSample keyed fields) per record."""
    with open(path, "r") as f:
        header = f.readline().rstrip("\n")
        if header != TRAJECTORY_HEADER:
            raise InvalidInputError(f"{path}:1: unexpected header {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 12:
                raise InvalidInputError(f"{path}:{lineno}: expected 12 fields, "
                                        f"got {len(parts)}")
            try:
                yield lineno, parts[0], parts[1], AgentSample(
                    kind=parts[2],
                    x=float(parts[3]), y=float(parts[4]), z=float(parts[5]),
                    theta=float(parts[6]), status=parts[10],
                    min_h=float(parts[11]),
                )
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}")


def summarize_dir(out_dir: str, check: bool = True) -> MetricsSummary:
    """Recompute the safety metrics for a finished run directory."""
    cfg = load_config(os.path.join(out_dir, CONFIG_FILE))
    view = PhysicsView.from_config(cfg)
    summary = MetricsSummary()

    traj_path = os.path.join(out_dir, TRAJECTORY_FILE)
    tick_time: str | None = None
    tick_rows: list[tuple[int, str, AgentSample]] = []
    first_landed: dict[int, float] = {}
    last_time = 0.0

    def flush():
        nonlocal tick_rows
        if not tick_rows:
            return
        snapshot = {aid: sample for _, aid, sample in tick_rows}
        per_agent, family, dist = tick_barriers(view, snapshot)
        for lineno, aid, sample in tick_rows:
            # The column was written at 9 significant digits; push the
            # recomputed value through the same format before comparing.
            expected = roundtrip(per_agent[aid]) if math.isfinite(per_agent[aid]) \
                else per_agent[aid]
            if check and not (math.isinf(expected) and math.isinf(sample.min_h)):
                if abs(expected - sample.min_h) > 1e-9:
                    raise LogIntegrityError(
                        f"{traj_path}:{lineno}: logged min_h {sample.min_h!r} "
                        f"disagrees with recomputed {expected!r}")
        for fam, h in family.items():
            if h < summary.family_min_h.get(fam, math.inf):
                summary.family_min_h[fam] = h
        for kind, d in dist.items():
            if d < summary.min_pair_distance.get(kind, math.inf):
                summary.min_pair_distance[kind] = d
        tick_rows = []

    for lineno, t_str, agent_id, sample in _parse_trajectory(traj_path):
        if t_str != tick_time:
            flush()
            tick_time = t_str
            summary.ticks += 1
        tick_rows.append((lineno, agent_id, sample))
        summary.status_counts[sample.status] = (
            summary.status_counts.get(sample.status, 0) + 1)
        t = float(t_str)
        last_time = max(last_time, t)
        if sample.kind == "uav" and sample.status == "landed":
            pair = int(agent_id[3:])
            first_landed.setdefault(pair, t)
    flush()
    summary.duration = last_time
    summary.landing_outcomes = {
        i: first_landed.get(i) for i in range(cfg.n_pairs)
    }

    watcher_path = os.path.join(out_dir, WATCHER_FILE)
    if os.path.exists(watcher_path):
        with open(watcher_path, "r") as f:
            header = f.readline().rstrip("\n")
            if header != WATCHER_HEADER:
                raise InvalidInputError(f"{watcher_path}:1: unexpected header")
            for lineno, line in enumerate(f, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 10:
                    raise InvalidInputError(
                        f"{watcher_path}:{lineno}: expected 10 fields")
                agent, count = parts[1], int(parts[3])
                hist = summary.row_count_histogram.setdefault(agent, {})
                hist[count] = hist.get(count, 0) + 1

    trace_path = os.path.join(out_dir, TRACE_FILE)
    if os.path.exists(trace_path):
        links: set[str] = set()
        a2a = 0
        sent = dropped = 0
        with open(trace_path, "r") as f:
            for line in f:
                fields = dict(
                    part.split("=", 1) for part in line.split()[1:]
                )
                event = line.split()[0]
                src, dst = fields.get("src", ""), fields.get("dst", "")
                if event == "send":
                    sent += 1
                elif event == "drop":
                    sent += 1
                    dropped += 1
                if "watcher" not in (src, dst):
                    a2a += 1
                else:
                    links.add(dst if src == "watcher" else src)
        summary.active_links = len(links)
        summary.agent_to_agent_messages = a2a
        summary.messages_sent = sent
        summary.messages_dropped = dropped

    return summary
