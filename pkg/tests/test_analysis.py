import numpy as np
import pytest

from cftwlas import (
    AnchorSet,
    ConfigurationError,
    DegenerateGeometryError,
    NoiseSpec,
    UdState,
    build_square_scenario,
    crlb,
    error_stats,
    estimate,
    flops_cftwlas,
    flops_iterative_per_iter,
    forward_model,
    jacobian,
    predict_measurements,
    sample_ud_state,
)
from cftwlas.analysis import BlockValues, CrlbResult

ANCHORS = build_square_scenario(800.0, 8)


def finite_difference_jacobian(state, anchors, step=1e-3):
    """Independent oracle: central differences of the measurement function."""
    theta = state.as_vector()
    cols = []
    for j in range(theta.size):
        hi = theta.copy()
        lo = theta.copy()
        hi[j] += step
        lo[j] -= step
        cols.append(
            (
                predict_measurements(UdState.from_vector(hi), anchors)
                - predict_measurements(UdState.from_vector(lo), anchors)
            )
            / (2.0 * step)
        )
    return np.column_stack(cols)


class TestJacobian:
    def test_unit_direction_row(self):
        anchors = AnchorSet([[1.0, 0.0], [0.0, 1.0]], [0.01, 0.02])
        state = UdState([0.0, 0.0], [0.0, 0.0], 0.0, 0.0)
        jac = jacobian(state, anchors)
        np.testing.assert_allclose(jac[0], [-1, 0, 0, 0, -1, 0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            ud = sample_ud_state(rng, 500.0, center=ANCHORS.center)
            jac = jacobian(ud, ANCHORS)
            fd = finite_difference_jacobian(ud, ANCHORS)
            rel = np.abs(jac - fd) / np.maximum(1.0, np.abs(fd))
            worst = max(worst, rel.max())
        assert worst <= 1e-5

    def test_zero_velocity_unifies_direction_vectors(self):
        state = UdState([300.0, 200.0], [0.0, 0.0], 100.0, 10.0)
        jac = jacobian(state, ANCHORS)
        m = ANCHORS.count
        np.testing.assert_allclose(jac[:m, :2], jac[m:, :2])

    def test_response_rows_carry_schedule(self):
        state = UdState([300.0, 200.0], [0.0, 0.0], 0.0, 0.0)
        jac = jacobian(state, ANCHORS)
        m = ANCHORS.count
        np.testing.assert_allclose(jac[m:, 5], ANCHORS.schedule)
        np.testing.assert_allclose(jac[m:, 4], np.ones(m))
        np.testing.assert_allclose(jac[:m, 4], -np.ones(m))

    def test_on_anchor_raises(self):
        state = UdState(ANCHORS.positions[2], [0.0, 0.0], 0.0, 0.0)
        with pytest.raises(Exception):
            jacobian(state, ANCHORS)


class TestCrlb:
    def _state_noise(self, seed=1, snr=30.0):
        from cftwlas import noise_for_snr

        rng = np.random.default_rng(seed)
        ud = sample_ud_state(rng, 500.0, center=ANCHORS.center)
        return ud, noise_for_snr(ud, ANCHORS, snr)

    def test_inverse_identity(self):
        ud, noise = self._state_noise()
        result = crlb(ud, ANCHORS, noise)
        np.testing.assert_allclose(
            result.crlb @ result.fisher, np.eye(6), atol=1e-8
        )

    def test_fisher_symmetric(self):
        ud, noise = self._state_noise(2)
        result = crlb(ud, ANCHORS, noise)
        asym = np.abs(result.fisher - result.fisher.T).max()
        assert asym <= 1e-12 * np.abs(result.fisher).max()

    def test_noise_scaling_scales_bound(self):
        ud, noise = self._state_noise(3)
        base = crlb(ud, ANCHORS, noise)
        k = 2.5
        scaled = crlb(
            ud, ANCHORS,
            NoiseSpec(k * noise.sigma_request, k * noise.sigma_response),
        )
        np.testing.assert_allclose(scaled.crlb, k**2 * base.crlb, rtol=1e-9)
        assert scaled.blocks.pos == pytest.approx(k**2 * base.blocks.pos)

    def test_rigid_motion_invariance(self):
        ud, noise = self._state_noise(4)
        base = crlb(ud, ANCHORS, noise)
        shift = np.array([500.0, -800.0])
        moved = crlb(
            UdState(ud.pos + shift, ud.vel, ud.offset, ud.drift),
            AnchorSet(ANCHORS.positions + shift, ANCHORS.schedule),
            noise,
        )
        np.testing.assert_allclose(moved.crlb, base.crlb, rtol=1e-9, atol=1e-12)
        th = 1.1
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        big = np.eye(6)
        big[:2, :2] = rot
        big[2:4, 2:4] = rot
        rotated = crlb(
            UdState(rot @ ud.pos, rot @ ud.vel, ud.offset, ud.drift),
            AnchorSet(ANCHORS.positions @ rot.T, ANCHORS.schedule),
            noise,
        )
        np.testing.assert_allclose(
            rotated.crlb, big @ base.crlb @ big.T, rtol=1e-8, atol=1e-9
        )
        assert rotated.blocks.offset == pytest.approx(base.blocks.offset)
        assert rotated.blocks.drift == pytest.approx(base.blocks.drift)

    def test_block_traces_consistent_with_matrix(self):
        ud, noise = self._state_noise(5)
        result = crlb(ud, ANCHORS, noise)
        assert result.blocks.pos == pytest.approx(np.trace(result.crlb[:2, :2]))
        assert result.blocks.vel == pytest.approx(np.trace(result.crlb[2:4, 2:4]))
        assert result.blocks.offset == pytest.approx(result.crlb[4, 4])
        assert result.blocks.drift == pytest.approx(result.crlb[5, 5])

    def test_center_of_square_fisher_is_usable_or_degenerate(self):
        # At the 4-anchor center the linearized builder degenerates, but the
        # information matrix itself can stay invertible; this only checks the
        # call never returns garbage.
        anchors = build_square_scenario(800.0, 4)
        ud = UdState([400.0, 400.0], [0.0, 0.0], 100.0, 10.0)
        noise = NoiseSpec(np.ones(4), 1.0)
        try:
            result = crlb(ud, anchors, noise)
        except DegenerateGeometryError:
            return
        assert np.isfinite(result.crlb).all()


class TestFlopModels:
    def test_published_operating_point(self):
        assert flops_cftwlas(2, 8) == 5713
        assert flops_iterative_per_iter(2, 8) == 1976

    def test_three_dimensional_point(self):
        assert flops_cftwlas(3, 8) == 9261

    def test_returns_int(self):
        assert isinstance(flops_cftwlas(2, 8), int)
        assert isinstance(flops_iterative_per_iter(3, 5), int)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            flops_cftwlas(0, 8)
        with pytest.raises(ConfigurationError):
            flops_iterative_per_iter(2, 3)


def _fake_crlb(pos_trace):
    blocks = BlockValues(pos=pos_trace, vel=1.0, offset=1.0, drift=1.0)
    return CrlbResult(fisher=np.eye(6), crlb=np.eye(6), blocks=blocks)


class TestErrorStats:
    def test_all_zero_errors(self):
        truth = UdState([1.0, 2.0], [3.0, 4.0], 5.0, 6.0)
        runs = [(truth, truth, _fake_crlb(4.0))] * 5
        stats = error_stats(runs)
        assert stats.refined_rmse.pos == 0.0
        assert stats.large_error_rate == 0.0
        assert stats.failure_rate == 0.0
        assert stats.count == 5

    def test_boundary_error_not_counted_large(self):
        # Error exactly at three sigma stays inside (strict inequality).
        truth = UdState([0.0, 0.0], [0.0, 0.0], 0.0, 0.0)
        bound = _fake_crlb(pos_trace=4.0)  # sqrt = 2, threshold = 6
        exactly = UdState([6.0, 0.0], [0.0, 0.0], 0.0, 0.0)
        just_over = UdState([6.0 + 1e-9, 0.0], [0.0, 0.0], 0.0, 0.0)
        stats = error_stats([(exactly, truth, bound)])
        assert stats.large_error_rate == 0.0
        stats = error_stats([(just_over, truth, bound)])
        assert stats.large_error_rate == 1.0

    def test_reports_raw_and_refined_separately(self):
        rng = np.random.default_rng(6)
        from cftwlas import add_noise, noise_for_snr

        runs = []
        for _ in range(20):
            ud = sample_ud_state(rng, 500.0, center=ANCHORS.center)
            noise = noise_for_snr(ud, ANCHORS, 30.0)
            meas = add_noise(forward_model(ud, ANCHORS), noise, rng)
            report = estimate(meas, ANCHORS, noise)
            runs.append((report, ud, crlb(ud, ANCHORS, noise)))
        stats = error_stats(runs)
        assert stats.raw_rmse is not None
        assert stats.refined_rmse.pos <= stats.raw_rmse.pos
        assert 0.0 <= stats.large_error_rate <= 1.0

    def test_accepts_bare_states(self):
        truth = UdState([0.0, 0.0], [0.0, 0.0], 0.0, 0.0)
        est = UdState([1.0, 0.0], [0.0, 0.0], 0.0, 0.0)
        stats = error_stats([(est, truth, _fake_crlb(100.0))])
        assert stats.raw_rmse is None
        assert stats.refined_rmse.pos == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            error_stats([])
