"""
Time-to-collision between two road users from position, speed and heading.
"""
import math

from schemas.trajectory import VehicleState

LANE_WIDTH = 3.5
PARALLEL_TOLERANCE_RAD = math.radians(15.0)
CROSSING_HORIZON_S = 6.0


def _wrap(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def compute_ttc(
    ego: VehicleState,
    other: VehicleState,
    lane_width: float = LANE_WIDTH,
    horizon: float = CROSSING_HORIZON_S,
) -> float:
    """
    TTC in seconds, +inf when the two are not on a collision course.

    Near-parallel headings (within 15 deg of parallel or anti-parallel) use the
    following formula: gap along the ego heading over closing speed, provided the
    other user is within half a lane of the ego path and ahead of it.
    Other geometries use the arrival-time difference at the intersection of the
    two heading rays, provided both arrive within `horizon`.
    Coincident positions give 0.
    """
    dx, dy = other.x - ego.x, other.y - ego.y
    if math.hypot(dx, dy) < 1e-9:
        return 0.0

    he, ho = ego.heading_rad, other.heading_rad
    ue = (math.cos(he), math.sin(he))
    uo = (math.cos(ho), math.sin(ho))
    relative = _wrap(ho - he)

    if abs(math.sin(relative)) < math.sin(PARALLEL_TOLERANCE_RAD):
        longitudinal = dx * ue[0] + dy * ue[1]
        lateral = -dx * ue[1] + dy * ue[0]
        if abs(lateral) > lane_width / 2.0 or longitudinal <= 0.0:
            return math.inf
        closing = ego.v - other.v * math.cos(relative)
        return longitudinal / closing if closing > 0.0 else math.inf

    # ego.p + s * ue = other.p + r * uo
    det = -ue[0] * uo[1] + ue[1] * uo[0]
    s = (-dx * uo[1] + dy * uo[0]) / det
    r = (ue[0] * dy - ue[1] * dx) / det
    if s < 0.0 or r < 0.0 or ego.v <= 0.0 or other.v <= 0.0:
        return math.inf
    t_ego, t_other = s / ego.v, r / other.v
    if t_ego > horizon or t_other > horizon:
        return math.inf
    return abs(t_ego - t_other)
