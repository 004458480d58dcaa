import math

import numpy as np
import pytest

from mavnav.estimation import (
    FilterError,
    FusionWeights,
    NavEstimate,
    NavFilter,
    predict,
    riccati_gain,
    steady_state_weights,
)
from mavnav.geometry import Pose, Quat, partial_rotation
from mavnav.simulation import (
    ImuSample,
    NoiseConfig,
    PoseHistory,
    PoseMeasurement,
    Simulator,
    VehicleParams,
    VehicleState,
    sample_imu,
    sample_pose_sensor,
)

QUIET = NoiseConfig(accel_std=0, gyro_std=0, bias_walk_std=0, pose_pos_std=0, pose_rot_std=0)
GRAV = np.array([0.0, 0.0, -9.81])


def imu_at(t, f=(0.0, 0.0, 9.81), w=(0.0, 0.0, 0.0)):
    return ImuSample(t, np.asarray(f, dtype=float), np.asarray(w, dtype=float))


class TestPredict:
    def test_stationary_equilibrium(self):
        est = NavEstimate()
        for k in range(1, 101):
            est = predict(est, imu_at(0.01 * k))
        np.testing.assert_allclose(est.pose.position, 0.0, atol=1e-12)
        np.testing.assert_allclose(est.velocity, 0.0, atol=1e-12)

    def test_constant_accel_euler_sum(self):
        est = NavEstimate()
        for k in range(1, 101):
            est = predict(est, imu_at(0.01 * k, f=(1.0, 0.0, 9.81)))
        assert est.velocity[0] == pytest.approx(1.0, abs=1e-12)
        assert est.pose.position[0] == pytest.approx(0.505, abs=1e-12)

    def test_gyro_yaw_integration(self):
        est = NavEstimate()
        rate = (0.0, 0.0, math.pi / 2)
        for k in range(1, 101):
            est = predict(est, imu_at(0.01 * k, w=rate))
        assert math.degrees(est.pose.orientation.yaw()) == pytest.approx(90.0, abs=0.5)
        # oracle: same integration at dt = 1e-5
        q = Quat.identity()
        for _ in range(100000):
            q = (q * Quat.from_rotvec(np.array(rate) * 1e-5)).normalized()
        assert est.pose.orientation.angle_to(q) < math.radians(0.5)

    def test_non_monotonic_stamp_rejected(self):
        est = NavEstimate(stamp=1.0)
        with pytest.raises(FilterError):
            predict(est, imu_at(0.5))


def make_filter(weights=None, noise=QUIET):
    w = weights or FusionWeights(0.3, 0.05, 0.3, 0.01, 0.01)
    return NavFilter(NavEstimate(), w, noise)


class TestCorrect:
    def test_zero_innovation_equals_prediction(self):
        filt = make_filter()
        plain = NavEstimate()
        for k in range(1, 31):
            filt.predict(imu_at(0.01 * k))
            plain = predict(plain, imu_at(0.01 * k))
        snap_pose = Pose(np.zeros(3), Quat.identity(), 0.2)
        meas = PoseMeasurement(0.2, 0.3, snap_pose)
        out = filt.correct(meas)
        np.testing.assert_allclose(out.pose.position, plain.pose.position, atol=1e-12)
        np.testing.assert_allclose(out.velocity, plain.velocity, atol=1e-12)
        assert out.pose.orientation.angle_to(plain.pose.orientation) < 1e-12

    def test_full_trust_snaps_to_measurement(self):
        filt = NavFilter(NavEstimate(), FusionWeights(1.0, 0.0, 1.0, 0.0, 0.0), QUIET)
        for k in range(1, 31):
            filt.predict(imu_at(0.01 * k))
        target = Pose(np.array([0.4, -0.2, 0.1]), Quat.from_yaw(0.3), 0.3)
        out = filt.correct(PoseMeasurement(0.3, 0.3, target))
        np.testing.assert_allclose(out.pose.position, target.position, atol=1e-9)
        assert out.pose.orientation.angle_to(target.orientation) < 1e-9

    def test_stale_measurement_dropped_and_counted(self):
        filt = make_filter()
        for k in range(1, 101):
            filt.predict(imu_at(0.01 * k))
        before = filt.estimate
        out = filt.correct(PoseMeasurement(0.1, 1.0, Pose(np.ones(3), Quat.identity(), 0.1)))
        assert filt.dropped_stale == 1
        assert out is before

    def test_matches_full_history_refilter_oracle(self):
        """Replay correction == reprocessing the whole history offline."""
        rng = np.random.default_rng(3)
        w = FusionWeights(0.25, 0.04, 0.2, 0.015, 0.01)
        imus = []
        for k in range(1, 201):  # 2 s of wavy IMU data
            t = 0.01 * k
            f = np.array([0.3 * math.sin(t * 3), -0.2 * math.cos(t * 2), 9.81 + 0.1 * math.sin(t)])
            gyro = np.array([0.05 * math.sin(t), 0.04 * math.cos(t * 1.7), 0.3])
            imus.append(ImuSample(t, f, gyro))
        measurements = []
        for k in range(1, 19):
            t_cap = 0.1 * k
            pose = Pose(rng.normal(0, 0.3, 3), Quat.from_rotvec(rng.normal(0, 0.1, 3)), t_cap)
            measurements.append(PoseMeasurement(t_cap, t_cap + 0.1, pose))

        filt = NavFilter(NavEstimate(), w, QUIET, buffer_span=0.5)
        meas_iter = iter(measurements)
        pending = next(meas_iter, None)
        for imu in imus:
            filt.predict(imu)
            if pending and abs(imu.stamp - pending.delivery_stamp) < 1e-9:
                filt.correct(pending)
                pending = next(meas_iter, None)
        final = filt.estimate

        # oracle: offline pass applying each blend at its capture time
        def blend(est, meas):
            innov = meas.pose.position - est.pose.position
            p = est.pose.position + w.position * innov
            v = est.velocity + (w.velocity / 0.1) * innov
            q = partial_rotation(est.pose.orientation, meas.pose.orientation, w.orientation)
            rot_in = (est.pose.orientation.conjugate() * meas.pose.orientation).as_rotvec()
            r_t = est.pose.orientation.to_matrix().T
            ba = est.accel_bias - w.accel_bias * (r_t @ innov)
            bg = est.gyro_bias - w.gyro_bias * rot_in
            return NavEstimate(Pose(p, q, est.stamp), v, ba, bg, est.stamp)

        oracle = NavEstimate()
        applied = [m for m in measurements if m.delivery_stamp <= imus[-1].stamp + 1e-9]
        mi = 0
        for imu in imus:
            oracle = predict(oracle, imu)
            while mi < len(applied) and abs(applied[mi].capture_stamp - imu.stamp) < 1e-9:
                oracle = blend(oracle, applied[mi])
                mi += 1

        np.testing.assert_allclose(final.pose.position, oracle.pose.position, atol=1e-9)
        np.testing.assert_allclose(final.velocity, oracle.velocity, atol=1e-9)
        np.testing.assert_allclose(final.accel_bias, oracle.accel_bias, atol=1e-9)
        assert final.pose.orientation.angle_to(oracle.pose.orientation) < 1e-9


class TestSteadyStateWeights:
    def test_scalar_matches_closed_form(self):
        k, _ = riccati_gain([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        s = (1.0 + math.sqrt(5.0)) / 2.0
        assert k[0, 0] == pytest.approx(s / (s + 1.0), abs=1e-6)

    def test_perfect_sensor_limit(self):
        noise = NoiseConfig(pose_pos_std=1e-9)
        w = steady_state_weights(noise)
        assert w.position > 0.999

    def test_perfect_model_limit(self):
        # position weight falls toward 0 as process noise shrinks
        levels = [1e-3, 1e-4, 1e-5, 1e-6]
        ws = [
            steady_state_weights(
                NoiseConfig(accel_std=a, gyro_std=a, bias_walk_std=a * 1e-2)
            ).position
            for a in levels
        ]
        assert all(b < a for a, b in zip(ws, ws[1:]))
        assert ws[-1] < 0.01

    def test_weights_in_range(self):
        w = steady_state_weights(NoiseConfig())
        for v in (w.position, w.velocity, w.orientation, w.accel_bias, w.gyro_bias):
            assert 0.0 <= v <= 1.0
        assert w.accel_bias <= 0.05 and w.gyro_bias <= 0.05

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            FusionWeights(position=1.5)


def _drive_sensors(duration, noise, seed, truth_bias=None):
    """Stationary truth; yields (imu, meas) streams like the simulator."""
    rng = np.random.default_rng(seed)
    truth = VehicleState()
    if truth_bias is not None:
        truth.accel_bias = np.asarray(truth_bias, dtype=float)
    hist = PoseHistory(horizon=2.0)
    hist.push(truth.pose)
    events = []
    n = int(round(duration / 0.01))
    for k in range(1, n + 1):
        t = k * 0.01
        truth.pose = Pose(truth.pose.position, truth.pose.orientation, t)
        hist.push(truth.pose)
        imu, ab, gb = sample_imu(truth, np.zeros(3), noise, rng)
        truth.accel_bias, truth.gyro_bias = ab, gb
        meas = None
        if k % 10 == 0 and t >= 0.1:
            meas = sample_pose_sensor(hist, t, noise, rng)
        events.append((imu, meas))
    return events, truth


class TestFilterBehaviour:
    def test_delay_equivalence_zero_noise(self):
        """After each correction the delayed filter matches a zero-delay
        filter that received the same measurements at their capture times."""
        sim = Simulator(noise=QUIET, seed=0)
        params = VehicleParams()
        imus = []
        by_capture = {}
        by_delivery = {}
        while sim.time < 3.0 - 1e-9:
            t = sim.time
            thrust = params.hover_thrust + 0.3 * math.sin(2.0 * t)
            torque = np.array([0.002 * math.sin(t), -0.002 * math.cos(1.3 * t), 0.001])
            imu, meas = sim.step(thrust, torque)
            if imu is not None:
                imus.append(imu)
            if meas is not None and meas.capture_stamp >= 0.1 - 1e-9:
                by_capture[round(meas.capture_stamp, 6)] = meas
                by_delivery[round(meas.delivery_stamp, 6)] = meas

        w = FusionWeights(0.3, 0.05, 0.3, 0.0, 0.0)
        delayed = NavFilter(NavEstimate(), w, QUIET)
        immediate = NavFilter(NavEstimate(), w, QUIET)
        compared = 0
        for imu in imus:
            delayed.predict(imu)
            immediate.predict(imu)
            key = round(imu.stamp, 6)
            if key in by_delivery:
                delayed.correct(by_delivery[key])
                np.testing.assert_allclose(
                    delayed.estimate.pose.position,
                    immediate.estimate.pose.position,
                    atol=1e-6,
                )
                compared += 1
            if key in by_capture:
                m = by_capture[key]
                immediate.correct(PoseMeasurement(m.capture_stamp, m.capture_stamp, m.pose))
        assert compared >= 25

    def test_bias_observability(self):
        noise = NoiseConfig()
        events, truth = _drive_sensors(30.0, noise, seed=5, truth_bias=[0.1, 0.0, 0.0])
        filt = NavFilter(NavEstimate(), steady_state_weights(noise), noise)
        for imu, meas in events:
            filt.predict(imu)
            if meas is not None:
                filt.correct(meas)
        assert filt.estimate.accel_bias[0] == pytest.approx(0.1, rel=0.2)

    def test_filter_beats_dead_reckoning(self):
        noise = NoiseConfig()
        events, _ = _drive_sensors(60.0, noise, seed=11)
        filt = NavFilter(NavEstimate(), steady_state_weights(noise), noise)
        dead = NavEstimate()
        filt_err, dead_err = [], []
        for imu, meas in events:
            filt.predict(imu)
            dead = predict(dead, imu)
            if meas is not None:
                filt.correct(meas)
            filt_err.append(np.linalg.norm(filt.estimate.pose.position))
            dead_err.append(np.linalg.norm(dead.pose.position))
        rms = lambda e: math.sqrt(np.mean(np.square(e)))
        assert rms(filt_err) * 10.0 <= rms(dead_err)

    def test_orientation_unit_norm_many_predictions(self):
        rng = np.random.default_rng(2)
        est = NavEstimate()
        rates = rng.normal(0, 0.5, (100_000, 3))
        for k in range(100_000):
            est = predict(est, imu_at(0.01 * (k + 1), w=rates[k]))
        q = est.pose.orientation
        assert abs(math.sqrt(q.w**2 + q.x**2 + q.y**2 + q.z**2) - 1.0) < 1e-9
