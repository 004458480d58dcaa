"""Closed-loop scenario wiring: simulation, estimation and control.

The loop runs the simulator at its internal step, feeds every IMU sample
to the filter, recomputes the control command at the IMU rate from the
latest estimate (zero-order hold in between), and applies delayed pose
corrections as they arrive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import Controller, ControllerGains, place_poles
from .estimation import NavEstimate, NavFilter, steady_state_weights
from .geometry import Pose, Quat
from .simulation import NoiseConfig, Simulator, VehicleParams, VehicleState, WindProfile
from .trajectory import QuinticSpline, RefPoint, eval_spline


@dataclass
class LoopLog:
    """Synchronized per-IMU-tick records of one closed-loop run."""

    t: list[float] = field(default_factory=list)
    truth_pos: list[np.ndarray] = field(default_factory=list)
    truth_rate: list[np.ndarray] = field(default_factory=list)
    est_pos: list[np.ndarray] = field(default_factory=list)
    ref_pos: list[np.ndarray] = field(default_factory=list)
    thrust: list[float] = field(default_factory=list)
    torque: list[np.ndarray] = field(default_factory=list)
    truth_poses: list[Pose] = field(default_factory=list)
    estimates: list[NavEstimate] = field(default_factory=list)

    def position_error(self) -> np.ndarray:
        return np.linalg.norm(np.array(self.truth_pos) - np.array(self.ref_pos), axis=1)

    def estimate_error(self) -> np.ndarray:
        return np.linalg.norm(np.array(self.truth_pos) - np.array(self.est_pos), axis=1)

    def times(self) -> np.ndarray:
        return np.array(self.t)


def hover_ref_fn(position, heading: float = 0.0):
    target = np.asarray(position, dtype=float)
    z = np.zeros(3)

    def ref(t: float) -> RefPoint:
        return RefPoint(target, z, z, z, z, heading, 0.0, t)

    return ref


def spline_ref_fn(spline: QuinticSpline):
    def ref(t: float) -> RefPoint:
        return eval_spline(spline, t)

    return ref


def run_closed_loop(
    ref_fn,
    duration: float,
    params: VehicleParams = VehicleParams(),
    noise: NoiseConfig = NoiseConfig(),
    wind: WindProfile = WindProfile(),
    gains: ControllerGains | None = None,
    seed: int = 0,
    initial_state: VehicleState | None = None,
) -> LoopLog:
    """Fly `ref_fn` for `duration` seconds; returns the synchronized log."""
    sim = Simulator(params, noise, wind, seed, initial_state)
    gains = gains or place_poles(vehicle=params)
    controller = Controller(gains, params)
    quiet = min(noise.accel_std, noise.gyro_std, noise.pose_pos_std, noise.pose_rot_std) <= 0
    weights = steady_state_weights(noise if not quiet else NoiseConfig())
    filt = NavFilter(
        NavEstimate(pose=sim.state.pose, velocity=sim.state.twist.linear,
                    stamp=sim.state.pose.stamp),
        weights,
        noise,
    )

    log = LoopLog()
    thrust, torque = params.hover_thrust, np.zeros(3)
    t_end = sim.time + duration
    while sim.time < t_end - 1e-9:
        imu, meas = sim.step(thrust, torque)
        if imu is not None:
            filt.predict(imu)
            if meas is not None:
                filt.correct(meas)
            est = filt.estimate
            ref = ref_fn(imu.stamp)
            body_rate = np.asarray(imu.angular_rate) - est.gyro_bias
            thrust, torque = controller.step(est, ref, body_rate, 0.01)
            log.t.append(imu.stamp)
            log.truth_pos.append(sim.state.pose.position.copy())
            log.truth_rate.append(sim.state.twist.angular.copy())
            log.est_pos.append(est.pose.position.copy())
            log.ref_pos.append(ref.position.copy())
            log.thrust.append(thrust)
            log.torque.append(torque.copy())
            log.truth_poses.append(sim.state.pose)
            log.estimates.append(est)
        elif meas is not None:
            filt.correct(meas)
    return log


def run_hover(
    duration: float = 60.0,
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
    params: VehicleParams = VehicleParams(),
    gains: ControllerGains | None = None,
    offset: float = 0.0,
) -> LoopLog:
    """Stationary hover at the origin, optionally starting offset in x."""
    initial = None
    if offset:
        initial = VehicleState(pose=Pose(np.array([offset, 0.0, 0.0])))
    return run_closed_loop(
        hover_ref_fn([0.0, 0.0, 0.0]), duration, params, noise,
        gains=gains, seed=seed, initial_state=initial,
    )


def run_wind_step(
    wind_speed: float = 3.0,
    onset: float = 5.0,
    duration: float = 15.0,
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
    params: VehicleParams = VehicleParams(),
    gains: ControllerGains | None = None,
) -> LoopLog:
    """Hover through a lateral constant-wind step starting at `onset`."""
    wind = WindProfile(gusts=((onset, 1e6, [wind_speed, 0.0, 0.0]),))
    return run_closed_loop(
        hover_ref_fn([0.0, 0.0, 0.0]), duration, params, noise, wind,
        gains=gains, seed=seed,
    )
