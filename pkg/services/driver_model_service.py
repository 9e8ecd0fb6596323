"""
Emotion-modulated ego driver: linear desired-gap car following plus proportional lane keeping.
"""
import math
from typing import Optional

import numpy as np

from schemas.cognitive import EmoCluster
from schemas.scenario import DriverCommand, DriverContext, DriverGains
from schemas.trajectory import VehicleState

STEERING_RATIO = 15.0
WHEELBASE = 2.7
NEUTRAL_STYLE_SCORE = 3.0


def pedal_response(accel_cmd: float, emotion: EmoCluster, gains: DriverGains):
    """
    Map a commanded acceleration onto pedals and the acceleration they produce.

    Braking demand saturates at the comfort deceleration; a frightened driver presses
    the brake fright_brake times harder.
    """
    if accel_cmd >= 0.0:
        throttle = min(1.0, accel_cmd / gains.max_accel)
        return throttle, 0.0, throttle * gains.max_accel
    gain = gains.fright_brake if emotion == EmoCluster.FRIGHT else 1.0
    brake = min(1.0, gain * min(gains.comfort_decel, -accel_cmd) / gains.full_brake_decel)
    return 0.0, brake, -brake * gains.full_brake_decel


def longitudinal_command(ego: VehicleState, context: DriverContext, emotion: EmoCluster, gains: DriverGains) -> float:
    style = context.sub_style_score - NEUTRAL_STYLE_SCORE
    desired = gains.desired_speed * (1.0 + gains.style_speed * style)
    speed_gain = gains.speed_gain
    headway = gains.headway * (1.0 - gains.style_headway * style)
    gap_scale = 1.0
    if emotion == EmoCluster.ANGER:
        desired *= gains.anger_speed
        speed_gain *= gains.anger_speed
        gap_scale = gains.anger_gap
    if context.speed_limit is not None:
        desired = min(desired, context.speed_limit * (gains.anger_speed if emotion == EmoCluster.ANGER else 1.0))

    accel = speed_gain * (desired - ego.v)
    if context.lead_gap is not None:
        desired_gap = gap_scale * (gains.standstill_gap + max(headway, 0.1) * ego.v)
        follow = gains.gap_gain * (context.lead_gap - desired_gap) + gains.closing_gain * (context.lead_speed - ego.v)
        accel = min(accel, follow)
    return float(np.clip(accel, -gains.full_brake_decel, gains.max_accel))


def driver_step(
    ego: VehicleState,
    context: DriverContext,
    emotion: EmoCluster,
    gains: DriverGains,
    noise: Optional[np.random.Generator] = None,
) -> DriverCommand:
    """
    One control step.

    Steering (degrees at the wheel, positive right) combines curvature feed-forward,
    lateral and heading feedback, and AR(1) noise whose scale grows under anger
    (anger_lateral_noise) and fright (extra fright_steer_noise_deg).

    Args:
        ego: Current ego state
        context: Perceived lead vehicle and path errors; carries the noise state
        emotion: Current emotion regime label
        gains: Driver coefficients
        noise: Generator for the steering noise; None disables noise

    Returns:
        Pedals, steering angle, the acceleration they produce and the new noise state
    """
    throttle, brake, accel = pedal_response(longitudinal_command(ego, context, emotion, gains), emotion, gains)

    scale = gains.lateral_noise_deg
    if emotion == EmoCluster.ANGER:
        scale *= gains.anger_lateral_noise
    elif emotion == EmoCluster.FRIGHT:
        scale = math.hypot(scale, gains.fright_steer_noise_deg)
    rho = gains.noise_correlation
    state = context.noise_state
    if noise is not None:
        state = rho * state + math.sqrt(1.0 - rho ** 2) * float(noise.standard_normal())

    wheel = -math.atan(WHEELBASE * context.curvature) + gains.lateral_gain * context.lateral_error \
        + gains.heading_gain * context.heading_error
    steer_deg = STEERING_RATIO * math.degrees(wheel) + scale * state
    return DriverCommand(throttle=throttle, brake=brake, steer_deg=steer_deg, accel=accel, noise_state=state)


def advance(ego: VehicleState, command: DriverCommand, dt: float) -> VehicleState:
    """Kinematic bicycle update; heading is counter-clockwise positive, steering positive right."""
    wheel = -math.radians(command.steer_deg / STEERING_RATIO)
    v = max(0.0, ego.v + command.accel * dt)
    heading = ego.heading_rad + ego.v / WHEELBASE * math.tan(wheel) * dt
    return VehicleState(
        t=ego.t + dt,
        vehicle_id=ego.vehicle_id,
        x=ego.x + ego.v * math.cos(ego.heading_rad) * dt,
        y=ego.y + ego.v * math.sin(ego.heading_rad) * dt,
        v=v,
        a=command.accel,
        steer_deg=command.steer_deg,
        throttle=command.throttle,
        brake=command.brake,
        heading_rad=heading,
    )
