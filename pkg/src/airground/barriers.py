"""Barrier functions for the UAV/UGV fleet and their linearization as velocity
constraints.

Every safety condition is a scalar barrier h(x, t) whose zero super-level set
is the safe region.  Keeping h >= 0 requires the velocity input u to satisfy

    grad_h . u  >=  -(kappa * h + dh/dt)

which each function here packages as an affine row ``a . u >= -b``.  Four
families exist:

* UAV_UAV      h = |p_i - p_j|^2 - s^2        (sphere between two UAVs)
* UGV_UGV      h = |rho_i - rho_j|^2 - s^2    (circle between UGV offset points)
* UAV_OTHER_UGV  same sphere, UAV vs. another pair's ground vehicle
* LANDING      h = r_z - beta*alpha*l*exp(-alpha*l) - gamma   (descent funnel
               above the paired vehicle; l = r_x^2 + r_y^2)
* WORKSPACE    axis-aligned task-space walls, one row per face

The separation barriers are time-varying because the other agent moves; their
explicit time derivative enters b through the other agent's velocity estimate.
Workspace rows are time-invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import IncompleteInputError, InvalidInputError

DEFAULT_BARRIER_GAIN = 1.0


def _require_finite(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} must be finite, got {value!r}")
    return arr


class RowKind(Enum):
    """Which barrier family produced a constraint row."""

    UAV_UAV = "uav_uav"
    UGV_UGV = "ugv_ugv"
    UAV_OTHER_UGV = "uav_other_ugv"
    LANDING = "landing"
    WORKSPACE = "workspace"


# Families whose b-term carries an explicit time derivative.
TIME_VARYING_KINDS = frozenset(
    {RowKind.UAV_UAV, RowKind.UGV_UGV, RowKind.UAV_OTHER_UGV, RowKind.LANDING}
)


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned task-space box (meters)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def validate(self) -> list[str]:
        problems = []
        for lo, hi, axis in (
            (self.x_min, self.x_max, "x"),
            (self.y_min, self.y_max, "y"),
            (self.z_min, self.z_max, "z"),
        ):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                problems.append(f"{axis} bounds must be finite")
            elif not lo < hi:
                problems.append(f"{axis} bounds must satisfy min < max, got [{lo}, {hi}]")
        return problems

    def horizontal_diag_sq(self) -> float:
        return (self.x_max - self.x_min) ** 2 + (self.y_max - self.y_min) ** 2


@dataclass(frozen=True)
class SafetyParams:
    """All safety radii, funnel shape, gain and actuation bounds for a scenario.

    uav_separation < uav_ugv_separation < ugv_separation is required so the
    collision spheres do not block a UAV from entering its own landing funnel.
    """

    uav_separation: float        # min UAV-UAV distance (m)
    uav_ugv_separation: float    # min UAV to other-pair UGV distance (m)
    ugv_separation: float        # min UGV-UGV offset-point distance (m)
    funnel_sharpness: float      # horizontal scale of the landing funnel (1/m^2)
    funnel_height: float         # vertical scale of the landing funnel (m)
    hover_clearance: float       # standoff above the platform deck (m)
    barrier_gain: float = DEFAULT_BARRIER_GAIN  # linear class-K gain (1/s)
    bounds: Bounds = field(default=Bounds(-5.0, 5.0, -5.0, 5.0, 0.0, 3.0))
    uav_speed_limit: float = 1.0   # per-axis UAV velocity bound (m/s)
    ugv_speed_limit: float = 0.6   # per-axis UGV offset-velocity bound (m/s)
    turn_rate_limit: float = 2.0   # UGV angular rate bound (rad/s)

    def validate(self) -> list[str]:
        problems = []
        if not (self.ugv_separation > self.uav_ugv_separation > self.uav_separation > 0):
            problems.append(
                "separation radii must satisfy ugv > uav_ugv > uav > 0, got "
                f"({self.ugv_separation}, {self.uav_ugv_separation}, {self.uav_separation})"
            )
        if not (0 < self.ugv_speed_limit < self.uav_speed_limit):
            problems.append(
                "speed limits must satisfy 0 < ugv_speed_limit < uav_speed_limit, got "
                f"({self.ugv_speed_limit}, {self.uav_speed_limit})"
            )
        if self.funnel_sharpness <= 0 or self.funnel_height <= 0:
            problems.append("funnel_sharpness and funnel_height must be positive")
        if self.hover_clearance < 0:
            problems.append("hover_clearance must be non-negative")
        if self.barrier_gain <= 0:
            problems.append("barrier_gain must be positive")
        if self.turn_rate_limit <= 0:
            problems.append("turn_rate_limit must be positive")
        problems.extend(self.bounds.validate())
        return problems

    def require_valid(self) -> "SafetyParams":
        problems = self.validate()
        if problems:
            raise InvalidInputError("; ".join(problems))
        return self


@dataclass
class ConstraintRow:
    """One linearized barrier condition ``a . u >= -b`` on an agent's velocity.

    a is the barrier gradient w.r.t. the agent's own position (3 entries for a
    UAV row, 2 for a UGV row); b = kappa*h + dh/dt.  h_value is kept for
    diagnostics only and never enters the filter.
    """

    a: np.ndarray
    b: float
    kind: RowKind
    other_id: str | None = None
    h_value: float = 0.0

    def satisfied_by(self, u: np.ndarray, tol: float = 1e-9) -> bool:
        return float(self.a @ u) + self.b >= -tol


def eval_uav_uav(p_i, p_j, separation: float) -> float:
    """Sphere barrier between two UAV centers: |p_i - p_j|^2 - separation^2."""
    p_i = _require_finite("p_i", p_i)
    p_j = _require_finite("p_j", p_j)
    if separation <= 0 or not math.isfinite(separation):
        raise InvalidInputError(f"separation must be positive, got {separation}")
    d = p_i - p_j
    return float(d @ d) - separation * separation


def eval_ugv_ugv(rho_i, rho_j, separation: float) -> float:
    """Circle barrier between two UGV offset points (planar)."""
    rho_i = _require_finite("rho_i", rho_i)
    rho_j = _require_finite("rho_j", rho_j)
    if separation <= 0 or not math.isfinite(separation):
        raise InvalidInputError(f"separation must be positive, got {separation}")
    d = rho_i - rho_j
    return float(d @ d) - separation * separation


def eval_uav_other_ugv(p_uav, p_ugv_3d, separation: float) -> float:
    """Sphere barrier between a UAV and another pair's UGV.

    The UGV is embedded in 3D at its platform height before calling this.
    """
    p_uav = _require_finite("p_uav", p_uav)
    p_ugv_3d = _require_finite("p_ugv_3d", p_ugv_3d)
    if separation <= 0 or not math.isfinite(separation):
        raise InvalidInputError(f"separation must be positive, got {separation}")
    d = p_uav - p_ugv_3d
    return float(d @ d) - separation * separation


def eval_landing(p_uav, p_ugv_3d, sharpness: float, height: float,
                 clearance: float) -> tuple[float, float, float]:
    """Funnel barrier above the paired vehicle.

    With r = p_uav - p_ugv_3d and l = r_x^2 + r_y^2:

        h = r_z - height*sharpness*l*exp(-sharpness*l) - clearance

    Returns (h, l, k) where k = 2*height*sharpness*(sharpness*l - 1) *
    exp(-sharpness*l) is the surface slope factor reused by the gradient and
    the time term.
    """
    p_uav = _require_finite("p_uav", p_uav)
    p_ugv_3d = _require_finite("p_ugv_3d", p_ugv_3d)
    if sharpness <= 0 or height <= 0:
        raise InvalidInputError("funnel sharpness and height must be positive")
    r = p_uav - p_ugv_3d
    l = float(r[0] * r[0] + r[1] * r[1])
    decay = math.exp(-sharpness * l)
    h = float(r[2]) - height * sharpness * l * decay - clearance
    k = 2.0 * height * sharpness * (sharpness * l - 1.0) * decay
    return h, l, k


def landing_gradient(r, k: float) -> np.ndarray:
    """Spatial gradient of the funnel barrier: (k*r_x, k*r_y, 1)."""
    r = _require_finite("r", r)
    return np.array([k * r[0], k * r[1], 1.0])


def landing_time_term(r, k: float, ugv_velocity) -> float:
    """Explicit dh/dt of the funnel under platform motion: -k*(r_x*vx + r_y*vy)."""
    r = _require_finite("r", r)
    v = _require_finite("ugv_velocity", ugv_velocity)
    return -k * (r[0] * v[0] + r[1] * v[1])


def _frozen(values) -> np.ndarray:
    arr = np.array(values)
    arr.flags.writeable = False
    return arr


_UAV_WALL_GRADIENTS = (
    _frozen([-1.0, 0.0, 0.0]), _frozen([1.0, 0.0, 0.0]),
    _frozen([0.0, -1.0, 0.0]), _frozen([0.0, 1.0, 0.0]),
    _frozen([0.0, 0.0, -1.0]),
)
_UGV_WALL_GRADIENTS = (
    _frozen([-1.0, 0.0]), _frozen([1.0, 0.0]),
    _frozen([0.0, -1.0]), _frozen([0.0, 1.0]),
)


def eval_workspace(p, bounds: Bounds, is_uav: bool) -> list[tuple[float, np.ndarray]]:
    """Wall barriers for one agent: list of (h, unit gradient) pairs.

    UAVs get five rows (both x walls, both y walls, ceiling); the floor is
    covered by the landing funnel, which never deactivates.  UGVs get four
    planar rows evaluated at the offset point.  The gradients are shared
    read-only constants.
    """
    p = _require_finite("p", p)
    x, y = float(p[0]), float(p[1])
    heights = [bounds.x_max - x, x - bounds.x_min,
               bounds.y_max - y, y - bounds.y_min]
    if is_uav:
        heights.append(bounds.z_max - float(p[2]))
        return list(zip(heights, _UAV_WALL_GRADIENTS))
    return list(zip(heights, _UGV_WALL_GRADIENTS))


def build_workspace_rows(p, params: SafetyParams, is_uav: bool) -> list[ConstraintRow]:
    """All wall rows for one agent in face order (single workspace pass)."""
    kappa = params.barrier_gain
    return [
        ConstraintRow(a=grad, b=kappa * h, kind=RowKind.WORKSPACE, h_value=h)
        for h, grad in eval_workspace(p, params.bounds, is_uav)
    ]


def _embed_platform(xy, platform_height: float) -> np.ndarray:
    xy = _require_finite("ugv position", xy)
    return np.array([xy[0], xy[1], platform_height])


def build_constraint_row(
    kind: RowKind,
    self_state,
    other_state=None,
    other_velocity=None,
    params: SafetyParams | None = None,
    *,
    platform_height: float = 0.0,
    wall_index: int | None = None,
    other_id: str | None = None,
    worst_case: bool = False,
) -> ConstraintRow:
    """Assemble one affine row ``a . u >= -b`` for the given barrier family.

    self_state is the agent's own position (3D for UAV rows, 2D offset point
    for UGV rows).  For the separation families, other_state/other_velocity
    describe the other agent; UGV positions are planar and get embedded at
    platform_height where 3D geometry is needed.  For WORKSPACE rows,
    wall_index selects the face (see eval_workspace ordering).

    With worst_case=True the velocity estimate is replaced by the most
    adversarial motion allowed by the speed bounds (used when the estimate is
    stale): dh/dt = -2*|r|*v_max for the spheres, -|k|*sqrt(l)*v_max for the
    funnel.
    """
    if params is None:
        raise InvalidInputError("params is required")
    kappa = params.barrier_gain

    if kind is RowKind.WORKSPACE:
        if wall_index is None:
            raise InvalidInputError("wall_index is required for workspace rows")
        is_uav = len(np.asarray(self_state, dtype=float)) == 3
        rows = eval_workspace(self_state, params.bounds, is_uav)
        if not 0 <= wall_index < len(rows):
            raise InvalidInputError(f"wall_index {wall_index} out of range")
        h, grad = rows[wall_index]
        return ConstraintRow(a=grad, b=kappa * h, kind=kind, h_value=h)

    if other_state is None:
        raise IncompleteInputError(f"{kind.value} row requires the other agent's state")
    if other_velocity is None and not worst_case:
        raise IncompleteInputError(
            f"{kind.value} row is time-varying and requires a velocity estimate"
        )

    if kind is RowKind.UAV_UAV:
        p_i = _require_finite("self position", self_state)
        p_j = _require_finite("other position", other_state)
        h = eval_uav_uav(p_i, p_j, params.uav_separation)
        r = p_i - p_j
        a = 2.0 * r
        if worst_case:
            dh_dt = -2.0 * float(np.linalg.norm(r)) * params.uav_speed_limit
        else:
            v = _require_finite("other velocity", other_velocity)
            dh_dt = -2.0 * float(r @ v)
    elif kind is RowKind.UGV_UGV:
        rho_i = _require_finite("self offset point", self_state)
        rho_j = _require_finite("other offset point", other_state)
        h = eval_ugv_ugv(rho_i, rho_j, params.ugv_separation)
        r = rho_i - rho_j
        a = 2.0 * r
        if worst_case:
            dh_dt = -2.0 * float(np.linalg.norm(r)) * params.uav_speed_limit
        else:
            v = _require_finite("other velocity", other_velocity)
            dh_dt = -2.0 * float(r @ v)
    elif kind is RowKind.UAV_OTHER_UGV:
        p_i = _require_finite("self position", self_state)
        p_g = _embed_platform(other_state, platform_height)
        h = eval_uav_other_ugv(p_i, p_g, params.uav_ugv_separation)
        r = p_i - p_g
        a = 2.0 * r
        if worst_case:
            dh_dt = -2.0 * float(np.linalg.norm(r)) * params.uav_speed_limit
        else:
            v = _require_finite("other velocity", other_velocity)
            dh_dt = -2.0 * (float(r[0] * v[0]) + float(r[1] * v[1]))  # platform stays flat
    elif kind is RowKind.LANDING:
        p_i = _require_finite("self position", self_state)
        p_g = _embed_platform(other_state, platform_height)
        h, l, k = eval_landing(
            p_i, p_g, params.funnel_sharpness, params.funnel_height, params.hover_clearance
        )
        r = p_i - p_g
        a = landing_gradient(r, k)
        if worst_case:
            dh_dt = -abs(k) * math.sqrt(l) * params.uav_speed_limit
        else:
            dh_dt = landing_time_term(r, k, other_velocity)
    else:
        raise InvalidInputError(f"unknown row kind {kind!r}")

    return ConstraintRow(a=a, b=kappa * h + dh_dt, kind=kind, other_id=other_id, h_value=h)


def verify_validity(row: ConstraintRow, admissible_bound: float) -> bool:
    """Check the barrier condition is satisfiable inside the admissible box.

    Over the box |u_j| <= admissible_bound the supremum of a . u is
    admissible_bound * |a|_1, so the row is achievable iff

        admissible_bound * |a|_1 + b >= 0

    (b already contains kappa*h + dh/dt).
    """
    if admissible_bound < 0 or not math.isfinite(admissible_bound):
        raise InvalidInputError("admissible_bound must be finite and >= 0")
    reach = admissible_bound * float(np.abs(row.a).sum())
    return reach + row.b >= 0.0
