import numpy as np
import pytest

from edgedrive.errors import (
    DegenerateEvidenceError,
    DomainError,
    NumericalError,
    ShapeError,
    UsageError,
)
from edgedrive.fusion import (
    STATE_CLOSING,
    STATE_GAP,
    STATE_LATERAL,
    STATE_SPEED,
    DiscreteBelief,
    DrivingStateEstimator,
    GaussianEstimate,
    ObservationModel,
    TransitionModel,
    bayes_update,
    ekf_update,
    inverse_variance_weights,
    kalman_gain,
    kalman_predict,
    kalman_update,
    numeric_jacobian,
    scalar_observation,
    weighted_fuse,
)
from edgedrive.sensors import Measurement, SensorKind


def random_spd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T + n * np.eye(n))


class TestDiscreteBelief:
    def test_requires_unit_mass(self):
        with pytest.raises(DomainError):
            DiscreteBelief(probs=[0.5, 0.4])

    def test_rejects_negative_mass(self):
        with pytest.raises(DomainError):
            DiscreteBelief(probs=[1.5, -0.5])

    def test_label_count_must_match(self):
        with pytest.raises(ShapeError):
            DiscreteBelief(probs=[0.5, 0.5], states=("a",))

    def test_top_state(self):
        b = DiscreteBelief(probs=[0.2, 0.7, 0.1], states=("a", "b", "c"))
        assert b.argmax() == 1
        assert b.top_state() == "b"


class TestBayesUpdate:
    def test_hand_posterior(self):
        prior = DiscreteBelief(probs=[0.5, 0.5])
        post = bayes_update(prior, np.array([0.9, 0.3]))
        assert post.probs == pytest.approx([0.75, 0.25])

    def test_sequential_equals_joint(self):
        rng = np.random.default_rng(11)
        prior = DiscreteBelief(probs=np.full(5, 0.2))
        l1, l2 = rng.uniform(0.1, 1.0, 5), rng.uniform(0.1, 1.0, 5)
        seq = bayes_update(bayes_update(prior, l1), l2)
        joint = bayes_update(prior, l1 * l2)
        assert seq.probs == pytest.approx(joint.probs, abs=1e-15)

    def test_zero_evidence_raises(self):
        prior = DiscreteBelief(probs=[0.0, 1.0])
        with pytest.raises(DegenerateEvidenceError):
            bayes_update(prior, np.array([1.0, 0.0]))

    def test_length_mismatch(self):
        prior = DiscreteBelief(probs=[0.5, 0.5])
        with pytest.raises(ShapeError):
            bayes_update(prior, np.array([1.0, 1.0, 1.0]))


class TestInverseVarianceFusion:
    def test_weights_hand_example(self):
        w = inverse_variance_weights([1.0, 4.0])
        assert w == pytest.approx([0.8, 0.2])

    def test_weights_reject_nonpositive(self):
        with pytest.raises(DomainError):
            inverse_variance_weights([1.0, 0.0])
        with pytest.raises(UsageError):
            inverse_variance_weights([])

    def test_fuse_matches_gaussian_product(self):
        # the product of Gaussian densities is itself Gaussian with
        # precision-weighted mean and summed precision
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 6))
            mu = rng.normal(scale=10.0, size=n)
            var = rng.uniform(0.1, 9.0, size=n)
            mean, fused_var = weighted_fuse(list(zip(mu, var)))
            prec = 1.0 / var
            assert fused_var == pytest.approx(1.0 / prec.sum(), rel=1e-12)
            assert mean == pytest.approx((mu * prec).sum() / prec.sum(), rel=1e-12)

    def test_fused_variance_never_above_smallest(self):
        mean, var = weighted_fuse([(0.0, 2.0), (10.0, 0.5), (4.0, 1.0)])
        assert var <= 0.5
        assert 0.0 < mean < 10.0

    def test_single_estimate_unchanged(self):
        assert weighted_fuse([(3.5, 0.7)]) == pytest.approx((3.5, 0.7))

    def test_order_invariant(self):
        a = weighted_fuse([(1.0, 0.3), (2.0, 0.6), (5.0, 1.2)])
        b = weighted_fuse([(5.0, 1.2), (1.0, 0.3), (2.0, 0.6)])
        assert a == pytest.approx(b, rel=1e-15)


class TestGaussianEstimate:
    def test_rejects_asymmetric_covariance(self):
        with pytest.raises(DomainError):
            GaussianEstimate(mean=[0.0, 0.0], cov=[[1.0, 0.5], [0.2, 1.0]])

    def test_rejects_dim_mismatch(self):
        with pytest.raises(ShapeError):
            GaussianEstimate(mean=[0.0, 0.0, 0.0], cov=np.eye(2))

    def test_rejects_nonfinite_mean(self):
        with pytest.raises(DomainError):
            GaussianEstimate(mean=[np.inf, 0.0], cov=np.eye(2))


class TestObservationModel:
    def test_exactly_one_of_linear_or_nonlinear(self):
        with pytest.raises(UsageError):
            ObservationModel(R=np.eye(1))
        with pytest.raises(UsageError):
            ObservationModel(R=np.eye(1), H=np.ones((1, 2)), h=lambda x: x[:1])

    def test_h_rows_must_match_r(self):
        with pytest.raises(ShapeError):
            ObservationModel(R=np.eye(2), H=np.ones((1, 3)))


class TestKalmanPredict:
    def test_hand_example(self):
        est = GaussianEstimate(mean=[1.0, 2.0], cov=np.diag([1.0, 4.0]))
        trans = TransitionModel(F=np.array([[1.0, 0.5], [0.0, 1.0]]),
                                Q=np.diag([0.1, 0.2]))
        out = kalman_predict(est, trans)
        assert out.mean == pytest.approx([2.0, 2.0])
        assert out.cov == pytest.approx(
            np.array([[2.1, 2.0], [2.0, 4.2]])
        )

    def test_dim_mismatch(self):
        est = GaussianEstimate(mean=[1.0], cov=np.eye(1))
        trans = TransitionModel(F=np.eye(2), Q=np.eye(2))
        with pytest.raises(ShapeError):
            kalman_predict(est, trans)


class TestKalmanUpdate:
    def test_scalar_matches_gaussian_product(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            mu0 = rng.normal(scale=20.0)
            v0 = rng.uniform(0.05, 25.0)
            z = rng.normal(scale=20.0)
            r = rng.uniform(0.05, 25.0)
            est = GaussianEstimate(mean=[mu0], cov=[[v0]])
            model = ObservationModel(R=[[r]], H=[[1.0]])
            out = kalman_update(est, np.array([z]), model)
            post_var = 1.0 / (1.0 / v0 + 1.0 / r)
            post_mean = post_var * (mu0 / v0 + z / r)
            assert out.mean[0] == pytest.approx(post_mean, abs=1e-10)
            assert out.cov[0, 0] == pytest.approx(post_var, abs=1e-10)

    def test_gain_matches_textbook_inverse(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n, m = int(rng.integers(1, 6)), int(rng.integers(1, 4))
            cov = random_spd(rng, n)
            H = rng.normal(size=(m, n))
            R = random_spd(rng, m, scale=0.5)
            model = ObservationModel(R=R, H=H)
            K = kalman_gain(cov, model)
            K_ref = cov @ H.T @ np.linalg.inv(H @ cov @ H.T + R)
            assert K == pytest.approx(K_ref, abs=1e-9)

    def test_update_preserves_symmetry_and_psd(self):
        rng = np.random.default_rng(9)
        est = GaussianEstimate(mean=rng.normal(size=4), cov=random_spd(rng, 4))
        model = ObservationModel(R=random_spd(rng, 2, scale=0.2),
                                 H=rng.normal(size=(2, 4)))
        out = kalman_update(est, rng.normal(size=2), model)
        assert np.allclose(out.cov, out.cov.T)
        assert np.linalg.eigvalsh(out.cov).min() > 0.0

    def test_update_shrinks_observed_variance(self):
        est = GaussianEstimate(mean=[0.0, 0.0], cov=np.diag([9.0, 9.0]))
        model = ObservationModel(R=[[1.0]], H=[[1.0, 0.0]])
        out = kalman_update(est, np.array([3.0]), model)
        assert out.cov[0, 0] < 9.0
        assert out.cov[1, 1] == pytest.approx(9.0)

    def test_measurement_size_checked(self):
        est = GaussianEstimate(mean=[0.0], cov=np.eye(1))
        model = ObservationModel(R=np.eye(1), H=np.ones((1, 1)))
        with pytest.raises(ShapeError):
            kalman_update(est, np.array([1.0, 2.0]), model)

    def test_nonlinear_model_rejected(self):
        est = GaussianEstimate(mean=[0.0], cov=np.eye(1))
        model = ObservationModel(R=np.eye(1), h=lambda x: x)
        with pytest.raises(UsageError):
            kalman_update(est, np.array([1.0]), model)


class TestNumericJacobian:
    def test_exact_on_affine(self):
        A = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]])
        b = np.array([0.3, -0.7])
        jac = numeric_jacobian(lambda x: A @ x + b, np.array([1.0, 2.0, -3.0]))
        assert jac == pytest.approx(A, abs=1e-8)

    def test_quadratic(self):
        jac = numeric_jacobian(lambda x: np.array([x[0] ** 2 + x[1]]),
                               np.array([3.0, 1.0]))
        assert jac == pytest.approx(np.array([[6.0, 1.0]]), abs=1e-6)


class TestEkfUpdate:
    def test_affine_case_reproduces_linear_update(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            n, m = 4, 2
            est = GaussianEstimate(mean=rng.normal(size=n),
                                   cov=random_spd(rng, n))
            H = rng.normal(size=(m, n))
            b = rng.normal(size=m)
            R = random_spd(rng, m, scale=0.3)
            z = rng.normal(size=m)
            lin = kalman_update(
                GaussianEstimate(est.mean, est.cov),
                z - b,
                ObservationModel(R=R, H=H),
            )
            ekf = ekf_update(
                est, z,
                ObservationModel(R=R, h=lambda x, H=H, b=b: H @ x + b,
                                 jacobian=lambda x, H=H: H),
            )
            assert ekf.mean == pytest.approx(lin.mean, abs=1e-12)
            assert ekf.cov == pytest.approx(lin.cov, abs=1e-12)

    def test_numeric_jacobian_fallback(self):
        est = GaussianEstimate(mean=[2.0, 0.5], cov=np.diag([0.5, 0.5]))

        def h(x):
            return np.array([np.hypot(x[0], x[1])])

        def jac(x):
            r = np.hypot(x[0], x[1])
            return np.array([[x[0] / r, x[1] / r]])

        model_num = ObservationModel(R=[[0.1]], h=h)
        model_ana = ObservationModel(R=[[0.1]], h=h, jacobian=jac)
        z = np.array([2.2])
        out_num = ekf_update(est, z, model_num)
        out_ana = ekf_update(est, z, model_ana)
        assert out_num.mean == pytest.approx(out_ana.mean, abs=1e-6)
        assert out_num.cov == pytest.approx(out_ana.cov, abs=1e-6)

    def test_linear_model_rejected(self):
        est = GaussianEstimate(mean=[0.0], cov=np.eye(1))
        model = ObservationModel(R=np.eye(1), H=np.ones((1, 1)))
        with pytest.raises(UsageError):
            ekf_update(est, np.array([1.0]), model)

    def test_nonfinite_jacobian_raises(self):
        est = GaussianEstimate(mean=[0.0, 0.0], cov=np.eye(2))
        model = ObservationModel(
            R=[[0.1]],
            h=lambda x: np.array([np.hypot(x[0], x[1])]),
            jacobian=lambda x: np.array([[np.nan, np.nan]]),
        )
        with pytest.raises(NumericalError):
            ekf_update(est, np.array([1.0]), model)


def radar_measurement(rng_value, closing, variance=0.09, tick=0):
    return Measurement(sensor=SensorKind.RADAR, tick=tick,
                       values=np.array([rng_value, closing, 0.0]),
                       variance=variance, valid=True)


def camera_measurement(rng_value, lateral, variance=0.25, tick=0):
    return Measurement(sensor=SensorKind.CAMERA, tick=tick,
                       values=np.array([rng_value, lateral]),
                       variance=variance, valid=True)


def lidar_measurement(rng_value, bearing, variance=0.02, tick=0):
    return Measurement(sensor=SensorKind.LIDAR, tick=tick,
                       values=np.array([rng_value, bearing]),
                       variance=variance, valid=True)


def invalid_measurement(kind):
    return Measurement(sensor=kind, tick=0,
                       values=np.full(2, np.nan), variance=1.0, valid=False)


class TestDrivingStateEstimator:
    def test_constructor_validation(self):
        with pytest.raises(DomainError):
            DrivingStateEstimator(dt=0.0)
        with pytest.raises(DomainError):
            DrivingStateEstimator(process_noise=(0.1, 0.1, 0.1))
        with pytest.raises(DomainError):
            DrivingStateEstimator(process_noise=(0.1, -0.1, 0.1, 0.1))
        with pytest.raises(DomainError):
            DrivingStateEstimator(odometry_variance=0.0)

    def test_reset_state(self):
        est = DrivingStateEstimator().reset(v0=15.0)
        assert est.mean == pytest.approx([100.0, 0.0, 0.0, 15.0])
        assert est.cov == pytest.approx(np.diag([2500.0, 25.0, 4.0, 1.0]))

    def test_transition_couples_gap_to_closing(self):
        flt = DrivingStateEstimator(dt=0.2)
        F = flt.transition.F
        expected = np.eye(4)
        expected[STATE_GAP, STATE_CLOSING] = -0.2
        assert F == pytest.approx(expected)
        assert flt.transition.Q == pytest.approx(
            np.diag([0.25, 0.25, 0.01, 0.04]) * 0.2
        )

    def test_scalar_update_equals_kalman_update(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            cov = random_spd(rng, 4, scale=2.0)
            mean = rng.normal(scale=10.0, size=4)
            idx = int(rng.integers(0, 4))
            var = float(rng.uniform(0.01, 4.0))
            z = float(rng.normal(scale=10.0))
            m2, c2 = DrivingStateEstimator._scalar_update(
                mean.copy(), cov.copy(), idx, var, z
            )
            ref = kalman_update(
                GaussianEstimate(mean=mean, cov=cov),
                np.array([z]),
                scalar_observation(idx, var),
            )
            assert m2 == pytest.approx(ref.mean, abs=1e-10)
            assert c2 == pytest.approx(ref.cov, abs=1e-10)

    def test_scalar_update_rejects_bad_innovation_variance(self):
        with pytest.raises(NumericalError):
            DrivingStateEstimator._scalar_update(
                np.zeros(4), np.zeros((4, 4)), 0, 0.0, 1.0
            )

    def test_step_without_measurements_is_pure_predict(self):
        flt = DrivingStateEstimator()
        prior = flt.reset()
        out = flt.step(prior, [])
        ref = kalman_predict(prior, flt.transition)
        assert out.mean == pytest.approx(ref.mean)
        assert out.cov == pytest.approx(ref.cov)

    def test_step_matches_building_block_pipeline(self):
        # the fast path must agree with the generic predict/update chain
        flt = DrivingStateEstimator()
        est = flt.reset()
        ms = [
            camera_measurement(48.0, 0.4),
            lidar_measurement(47.5, 0.01),
            radar_measurement(48.2, 5.5),
        ]
        out = flt.step(est, ms, odometry_speed=12.3)

        ref = kalman_predict(est, flt.transition)
        z, fused_var = weighted_fuse([(48.0, 0.25), (47.5, 0.02), (48.2, 0.09)])
        ref = kalman_update(ref, np.array([z]),
                            scalar_observation(STATE_GAP, fused_var))
        ref = kalman_update(ref, np.array([5.5]),
                            scalar_observation(STATE_CLOSING, 0.09))
        ref = kalman_update(ref, np.array([0.4]),
                            scalar_observation(STATE_LATERAL, 0.25))
        ref = kalman_update(ref, np.array([12.3]),
                            scalar_observation(STATE_SPEED, flt.odometry_variance))
        assert out.mean == pytest.approx(ref.mean, abs=1e-9)
        assert out.cov == pytest.approx(ref.cov, abs=1e-9)

    def test_invalid_measurements_are_skipped(self):
        flt = DrivingStateEstimator()
        est = flt.reset()
        with_invalid = flt.step(
            est, [invalid_measurement(SensorKind.CAMERA)], odometry_speed=12.0
        )
        without = flt.step(est, [], odometry_speed=12.0)
        assert with_invalid.mean == pytest.approx(without.mean)
        assert with_invalid.cov == pytest.approx(without.cov)

    def test_lateral_moves_only_on_camera_evidence(self):
        flt = DrivingStateEstimator()
        est = flt.reset()
        out_radar = flt.step(est, [radar_measurement(50.0, 7.0)])
        out_lidar = flt.step(est, [lidar_measurement(50.0, 0.02)])
        out_cam = flt.step(est, [camera_measurement(50.0, 1.2)])
        assert out_radar.mean[STATE_LATERAL] == 0.0
        assert out_lidar.mean[STATE_LATERAL] == 0.0
        assert out_cam.mean[STATE_LATERAL] != 0.0

    def test_lidar_contributes_range_only(self):
        # a lidar reading must act exactly like the fused range update
        flt = DrivingStateEstimator()
        est = flt.reset()
        out = flt.step(est, [lidar_measurement(55.0, 0.01)])
        ref = kalman_predict(est, flt.transition)
        ref = kalman_update(ref, np.array([55.0]),
                            scalar_observation(STATE_GAP, 0.02))
        assert out.mean == pytest.approx(ref.mean, abs=1e-10)
        assert out.cov == pytest.approx(ref.cov, abs=1e-10)

    def test_radar_second_channel_drives_closing(self):
        flt = DrivingStateEstimator()
        est = flt.reset()
        fast = flt.step(est, [radar_measurement(50.0, 9.0)])
        slow = flt.step(est, [radar_measurement(50.0, 1.0)])
        assert fast.mean[STATE_CLOSING] > slow.mean[STATE_CLOSING]

    def test_repeated_steps_tighten_gap_variance(self):
        flt = DrivingStateEstimator()
        est = flt.reset()
        for _ in range(25):
            est = flt.step(est, [radar_measurement(60.0, 4.0)],
                           odometry_speed=12.0)
        assert est.cov[STATE_GAP, STATE_GAP] < 1.0
        assert abs(est.mean[STATE_GAP] - 60.0) < 2.0
