"""Centralized coordination node.

The watcher is the only component that sees every agent.  Each tick it:

1. ingests localization poses and refreshes per-agent velocity estimators,
2. advances landing phases (signal handling, touchdown detection),
3. decides which separation constraints are locally relevant to each agent
   (distance gate with a hysteresis band so rows do not chatter),
4. assembles one fixed-capacity, zero-padded constraint matrix per agent in
   a fixed row order: workspace walls, then cross-layer / ground rows, then
   the landing funnel and finally UAV-UAV rows,
5. emits pose, setpoint and constraint-matrix updates over the star bus.

Landing orchestration: a landing signal flips the pair to the `landing`
phase, which switches the UAV's setpoint stream from its task track to the
moving platform.  Touchdown is declared after the UAV holds within tight
horizontal/vertical thresholds for a dwell time; the pair then retires from
the aerial collision set (every UAV-UAV row involving the landed UAV drops,
and the landed UAV keeps only its wall and funnel rows).  Other UAVs keep
their rows against the carrier UGV, which keeps protecting the docked stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .barriers import (ConstraintRow, RowKind, SafetyParams,
                       build_constraint_row, build_workspace_rows)
from .errors import CapacityError, InvalidInputError
from .netsim import MsgType

_PROXIMITY_HYSTERESIS = 0.1  # extra meters before an active pair deactivates


class VelQuality(Enum):
    FRESH = "fresh"           # single finite difference so far
    SMOOTHED = "smoothed"     # blend of two or more differences
    WORST_CASE = "worst_case"  # stale or insufficient history


@dataclass
class VelocityEstimate:
    v: np.ndarray
    age: float
    quality: VelQuality


class VelocityEstimator:
    """Exponentially smoothed finite differences over a pose stream.

    The smoother is seeded with the first difference, so constant-velocity
    data is reproduced exactly from the second sample on.  Histories older
    than stale_after fall back to worst-case quality, telling the constraint
    builder to assume the most adversarial motion within the speed bounds.
    """

    def __init__(self, dim: int, smoothing: float = 0.7, stale_after: float = 0.2,
                 speed_bound: float = 1.0):
        if not 0.0 < smoothing <= 1.0:
            raise InvalidInputError("smoothing must be in (0, 1]")
        self._dim = dim
        self._smoothing = smoothing
        self._stale_after = stale_after
        self._bound = speed_bound
        self._last_pos: np.ndarray | None = None
        self._last_time = -math.inf
        self._value: np.ndarray | None = None
        self._n_diffs = 0

    def push(self, t: float, position) -> None:
        pos = np.asarray(position, dtype=float)
        if self._last_pos is not None and t > self._last_time:
            diff = (pos - self._last_pos) / (t - self._last_time)
            if self._value is None:
                self._value = diff
                self._n_diffs = 1
            else:
                self._value = self._smoothing * diff + (1 - self._smoothing) * self._value
                self._n_diffs += 1
        self._last_pos = pos
        self._last_time = t

    def estimate(self, now: float) -> VelocityEstimate:
        if self._value is None:
            return VelocityEstimate(np.zeros(self._dim), math.inf, VelQuality.WORST_CASE)
        age = now - self._last_time
        if age > self._stale_after:
            clipped = np.clip(self._value, -self._bound, self._bound)
            return VelocityEstimate(clipped, age, VelQuality.WORST_CASE)
        quality = VelQuality.FRESH if self._n_diffs == 1 else VelQuality.SMOOTHED
        return VelocityEstimate(self._value.copy(), age, quality)


@dataclass
class ConstraintMatrix:
    """Fixed-capacity constraint block shipped to one agent.

    Rows beyond active_count are identically zero; row order is the assembly
    order documented on the class builder.
    """

    agent_id: str
    timestamp: float
    a: np.ndarray               # (capacity, dim), zero-padded
    b: np.ndarray               # (capacity,), zero-padded
    kinds: list[RowKind]
    other_ids: list[str | None]
    h_values: list[float]

    @property
    def capacity(self) -> int:
        return self.a.shape[0]

    @property
    def active_count(self) -> int:
        return len(self.kinds)

    def active_rows(self) -> list[ConstraintRow]:
        return [
            ConstraintRow(a=self.a[i], b=float(self.b[i]), kind=self.kinds[i],
                          other_id=self.other_ids[i], h_value=self.h_values[i])
            for i in range(self.active_count)
        ]

    def wire_bytes(self) -> int:
        return self.a.size * 8 + self.b.size * 8 + 16

    @staticmethod
    def from_rows(agent_id: str, timestamp: float, capacity: int, dim: int,
                  rows: list[ConstraintRow]) -> "ConstraintMatrix":
        if len(rows) > capacity:
            raise CapacityError(
                f"{agent_id}: {len(rows)} active rows exceed capacity {capacity}"
            )
        a = np.zeros((capacity, dim))
        b = np.zeros(capacity)
        for i, row in enumerate(rows):
            a[i] = row.a
            b[i] = row.b
        return ConstraintMatrix(
            agent_id=agent_id, timestamp=timestamp, a=a, b=b,
            kinds=[r.kind for r in rows],
            other_ids=[r.other_id for r in rows],
            h_values=[r.h_value for r in rows],
        )


class PairPhase(Enum):
    TASK = "task"
    LANDING = "landing"
    LANDED = "landed"


@dataclass
class WaypointTrack:
    """Piecewise-linear setpoint carrot traversed at constant speed.

    A single waypoint (or zero speed) is a static setpoint.  Multi-waypoint
    tracks cycle forever, which is how ground tasks keep running while their
    UAV lands.
    """

    waypoints: list[np.ndarray]
    speed: float = 0.0

    def __post_init__(self):
        self.waypoints = [np.asarray(w, dtype=float) for w in self.waypoints]
        if not self.waypoints:
            raise InvalidInputError("a track needs at least one waypoint")
        if self.speed < 0:
            raise InvalidInputError("track speed must be non-negative")
        self._legs = []
        n = len(self.waypoints)
        if n > 1 and self.speed > 0:
            for i in range(n):
                a = self.waypoints[i]
                d = self.waypoints[(i + 1) % n] - a
                length = float(np.linalg.norm(d))
                if length > 0:
                    self._legs.append((a, d / length, length))
        self._total = sum(leg[2] for leg in self._legs)

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Setpoint position and rate at time t."""
        if not self._legs or self._total == 0.0:
            w = self.waypoints[0]
            return w.copy(), np.zeros_like(w)
        s = math.fmod(self.speed * t, self._total)
        for start, direction, length in self._legs:
            if s <= length:
                return start + s * direction, direction * self.speed
            s -= length
        start, direction, length = self._legs[-1]
        return start + length * direction, direction * self.speed


@dataclass
class WatcherRecord:
    """One per-tick, per-agent decision snapshot for the run log."""

    time: float
    agent_id: str
    active_count: int
    kind_counts: dict[str, int]
    phase: str
    proximal: tuple[str, ...] = ()


@dataclass
class Outbound:
    msg_type: MsgType
    dst: str
    payload: object


def _pair_ids(index: int) -> tuple[str, str]:
    return f"uav{index}", f"ugv{index}"


class Watcher:
    """State and per-tick decision logic of the coordination node."""

    def __init__(
        self,
        n_pairs: int,
        params: SafetyParams,
        capacity: int,
        tracks: dict[str, WaypointTrack],
        *,
        platform_height: float = 0.0,
        ugv_offset: float = 0.1,
        period: float = 0.05,
        max_latency: float = 0.0,
        activation_margin: float | None = None,
        smoothing: float = 0.7,
        velocity_stale_after: float = 0.2,
        touchdown_radius_sq: float = 0.01,
        touchdown_height: float = 0.02,
        touchdown_hold: float = 0.5,
    ):
        params.require_valid()
        self.n_pairs = n_pairs
        self.params = params
        self.capacity = capacity
        self.tracks = tracks
        self.platform_height = platform_height
        self.ugv_offset = ugv_offset
        self.period = period
        if activation_margin is None:
            # Worst-case closing distance over one update interval, padded.
            activation_margin = 2.0 * params.uav_speed_limit * (period + max_latency) + 0.5
        self.activation_margin = activation_margin
        self._touch_l = touchdown_radius_sq
        self._touch_rz = touchdown_height
        self._touch_hold = touchdown_hold

        self.phases = {i: PairPhase.TASK for i in range(n_pairs)}
        self._touch_since: dict[int, float | None] = {i: None for i in range(n_pairs)}
        self.touchdown_times: dict[int, float] = {}
        self._pending: list[Outbound] = []
        self._active: dict[tuple[str, str, str], bool] = {}
        self._poses: dict[str, np.ndarray] = {}

        def estimator(dim):
            return VelocityEstimator(dim, smoothing, velocity_stale_after,
                                     params.uav_speed_limit)

        self._est_uav = {i: estimator(3) for i in range(n_pairs)}
        self._est_ugv_body = {i: estimator(2) for i in range(n_pairs)}
        self._est_ugv_offset = {i: estimator(2) for i in range(n_pairs)}

    # -- event handling -----------------------------------------------------

    def handle_landing_signal(self, pair: int, now: float) -> bool:
        """Flip one pair into the landing phase; duplicate signals are no-ops.

        Effects (setpoint switch, notification message) materialize on the
        next tick.  Returns False for rejected signals.
        """
        if pair not in self.phases:
            return False
        if self.phases[pair] is PairPhase.LANDED:
            return False  # already down; warn-level no-op
        if self.phases[pair] is PairPhase.LANDING:
            return True  # idempotent
        self.phases[pair] = PairPhase.LANDING
        uav_id, _ = _pair_ids(pair)
        self._pending.append(Outbound(MsgType.LANDING_SIGNAL, uav_id, pair))
        return True

    # -- geometry helpers ---------------------------------------------------

    def _ugv_xy(self, pair: int) -> np.ndarray:
        pose = self._poses[f"ugv{pair}"]
        return pose[:2]

    def _ugv_offset_point(self, pair: int) -> np.ndarray:
        pose = self._poses[f"ugv{pair}"]
        return np.array([
            pose[0] + self.ugv_offset * math.cos(pose[2]),
            pose[1] + self.ugv_offset * math.sin(pose[2]),
        ])

    def _platform_3d(self, pair: int) -> np.ndarray:
        xy = self._ugv_xy(pair)
        return np.array([xy[0], xy[1], self.platform_height])

    def hover_point(self, pair: int) -> np.ndarray:
        p = self._platform_3d(pair)
        p[2] += self.params.hover_clearance
        return p

    # -- proximity gating ---------------------------------------------------

    def _gate(self, kind: str, id_a: str, id_b: str, distance: float,
              radius: float) -> bool:
        key = (kind, id_a, id_b) if id_a < id_b else (kind, id_b, id_a)
        activate_at = radius + self.activation_margin
        active = self._active.get(key, False)
        if active:
            active = distance <= activate_at + _PROXIMITY_HYSTERESIS
        else:
            active = distance < activate_at
        self._active[key] = active
        return active

    def proximal_set(self, agent_id: str) -> set[str]:
        """Other agents currently gated active against agent_id."""
        out = set()
        for (kind, a, b), active in self._active.items():
            if active and agent_id in (a, b):
                out.add(b if agent_id == a else a)
        return out

    def _update_gates(self) -> None:
        p = self.params
        for i in range(self.n_pairs):
            uav_i = f"uav{i}"
            landed_i = self.phases[i] is PairPhase.LANDED
            for j in range(i + 1, self.n_pairs):
                landed_j = self.phases[j] is PairPhase.LANDED
                # aerial layer
                if not landed_i and not landed_j:
                    d = float(np.linalg.norm(self._poses[uav_i] - self._poses[f"uav{j}"]))
                    self._gate("aa", uav_i, f"uav{j}", d, p.uav_separation)
                else:
                    self._active[("aa", *sorted((uav_i, f"uav{j}")))] = False
                # ground layer (offset points)
                d = float(np.linalg.norm(self._ugv_offset_point(i) - self._ugv_offset_point(j)))
                self._gate("gg", f"ugv{i}", f"ugv{j}", d, p.ugv_separation)
            # cross layer: UAV i against every other pair's UGV
            for j in range(self.n_pairs):
                if j == i:
                    continue
                key = ("ago", uav_i, f"ugv{j}")
                if landed_i:
                    self._active[key] = False
                    continue
                d = float(np.linalg.norm(self._poses[uav_i] - self._platform_3d(j)))
                active_at = p.uav_ugv_separation + self.activation_margin
                active = self._active.get(key, False)
                if active:
                    self._active[key] = d <= active_at + _PROXIMITY_HYSTERESIS
                else:
                    self._active[key] = d < active_at
        # purge aerial gates for landed pairs is handled above by forcing False

    # -- landing ------------------------------------------------------------

    def _check_touchdowns(self, now: float) -> None:
        for i in range(self.n_pairs):
            if self.phases[i] is not PairPhase.LANDING:
                continue
            uav = self._poses[f"uav{i}"]
            r = uav - self._platform_3d(i)
            l = float(r[0] * r[0] + r[1] * r[1])
            inside = (l <= self._touch_l
                      and r[2] <= self.params.hover_clearance + self._touch_rz)
            if not inside:
                self._touch_since[i] = None
                continue
            if self._touch_since[i] is None:
                self._touch_since[i] = now
            if now - self._touch_since[i] >= self._touch_hold:
                self.phases[i] = PairPhase.LANDED
                self.touchdown_times[i] = now
                self._pending.append(Outbound(MsgType.TOUCHDOWN_ACK, f"uav{i}", i))

    # -- constraint assembly ------------------------------------------------

    def assemble_constraints(self, agent_id: str, now: float) -> ConstraintMatrix:
        """Build one agent's matrix in the fixed order: walls, cross-layer or
        ground rows, landing funnel, aerial rows."""
        p = self.params
        rows: list[ConstraintRow] = []
        if agent_id.startswith("uav"):
            pair = int(agent_id[3:])
            pos = self._poses[agent_id]
            landed = self.phases[pair] is PairPhase.LANDED
            rows.extend(build_workspace_rows(pos, p, is_uav=True))
            if not landed:
                for j in range(self.n_pairs):
                    if j == pair:
                        continue
                    if not self._active.get(("ago", agent_id, f"ugv{j}"), False):
                        continue
                    est = self._est_ugv_body[j].estimate(now)
                    rows.append(build_constraint_row(
                        RowKind.UAV_OTHER_UGV, pos, self._ugv_xy(j), est.v,
                        params=p, platform_height=self.platform_height,
                        other_id=f"ugv{j}",
                        worst_case=est.quality is VelQuality.WORST_CASE,
                    ))
            est = self._est_ugv_body[pair].estimate(now)
            rows.append(build_constraint_row(
                RowKind.LANDING, pos, self._ugv_xy(pair), est.v, params=p,
                platform_height=self.platform_height, other_id=f"ugv{pair}",
                worst_case=est.quality is VelQuality.WORST_CASE,
            ))
            if not landed:
                for j in range(self.n_pairs):
                    if j == pair or self.phases[j] is PairPhase.LANDED:
                        continue
                    key = ("aa", *sorted((agent_id, f"uav{j}")))
                    if not self._active.get(key, False):
                        continue
                    est = self._est_uav[j].estimate(now)
                    rows.append(build_constraint_row(
                        RowKind.UAV_UAV, pos, self._poses[f"uav{j}"], est.v,
                        params=p, other_id=f"uav{j}",
                        worst_case=est.quality is VelQuality.WORST_CASE,
                    ))
            dim = 3
        else:
            pair = int(agent_id[3:])
            point = self._ugv_offset_point(pair)
            rows.extend(build_workspace_rows(point, p, is_uav=False))
            for j in range(self.n_pairs):
                if j == pair:
                    continue
                key = ("gg", *sorted((agent_id, f"ugv{j}")))
                if not self._active.get(key, False):
                    continue
                est = self._est_ugv_offset[j].estimate(now)
                rows.append(build_constraint_row(
                    RowKind.UGV_UGV, point, self._ugv_offset_point(j), est.v,
                    params=p, other_id=f"ugv{j}",
                    worst_case=est.quality is VelQuality.WORST_CASE,
                ))
            dim = 2
        return ConstraintMatrix.from_rows(agent_id, now, self.capacity, dim, rows)

    # -- setpoints ----------------------------------------------------------

    def _setpoint_for(self, agent_id: str, now: float) -> tuple[np.ndarray, np.ndarray]:
        if agent_id.startswith("ugv"):
            return self.tracks[agent_id].sample(now)
        pair = int(agent_id[3:])
        if self.phases[pair] is PairPhase.TASK:
            return self.tracks[agent_id].sample(now)
        # landing and landed: chase the moving platform's hover point
        est = self._est_ugv_body[pair].estimate(now)
        rate = np.array([est.v[0], est.v[1], 0.0])
        if est.quality is VelQuality.WORST_CASE:
            rate = np.zeros(3)
        return self.hover_point(pair), rate

    # -- main tick ----------------------------------------------------------

    def tick(self, now: float, poses: dict[str, np.ndarray]
             ) -> tuple[list[Outbound], list[WatcherRecord]]:
        """Run one coordination cycle; returns messages to send and records."""
        for agent_id, pose in poses.items():
            self._poses[agent_id] = np.asarray(pose, dtype=float)
        for i in range(self.n_pairs):
            self._est_uav[i].push(now, self._poses[f"uav{i}"])
            self._est_ugv_body[i].push(now, self._ugv_xy(i))
            self._est_ugv_offset[i].push(now, self._ugv_offset_point(i))

        self._check_touchdowns(now)
        self._update_gates()

        outbound: list[Outbound] = list(self._pending)
        self._pending = []
        records: list[WatcherRecord] = []
        for i in range(self.n_pairs):
            for agent_id in _pair_ids(i):
                matrix = self.assemble_constraints(agent_id, now)
                setpoint, rate = self._setpoint_for(agent_id, now)
                outbound.append(Outbound(MsgType.POSE_UPDATE, agent_id,
                                         self._poses[agent_id].copy()))
                outbound.append(Outbound(MsgType.SETPOINT_UPDATE, agent_id,
                                         (setpoint, rate)))
                outbound.append(Outbound(MsgType.CONSTRAINT_UPDATE, agent_id, matrix))
                counts: dict[str, int] = {}
                for kind in matrix.kinds:
                    counts[kind.value] = counts.get(kind.value, 0) + 1
                records.append(WatcherRecord(
                    time=now, agent_id=agent_id,
                    active_count=matrix.active_count, kind_counts=counts,
                    phase=self.phases[i].value,
                    proximal=tuple(sorted(self.proximal_set(agent_id))),
                ))
        return outbound, records
