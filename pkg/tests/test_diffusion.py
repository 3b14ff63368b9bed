"""Tests for the reflected-diffusion simulators and cost estimators."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pss_lab import (
    DiffusionSpec,
    Rbm,
    ReflectedPath,
    Switched,
    TailBoundExceeded,
    WcpCoefficients,
    cost_dual,
    discounted_cost,
    estimate_cost,
    estimate_terminal,
    occupation_near,
    simulate,
    skorokhod_map,
    value_single,
)
from pss_lab._rng import philox_stream

# dual-mode reference instance shared with the control-problem tests
REF_ZSTAR = 0.4287512764912118
REF_V0 = 0.52093912518181125
REF_KIND = Switched(
    b_low=0.0,
    sigma_low=math.sqrt(0.7),
    b_high=-0.4,
    sigma_high=math.sqrt(1.3),
    zstar=REF_ZSTAR,
)


def coeffs_of(b1, s1sq, b2, s2sq, gamma=1.0):
    return WcpCoefficients(
        b=np.array([b1, b2]),
        sigma=np.sqrt([s1sq, s2sq]),
        sigma_A=np.array([1.0, 1.0]),
        sigma_S=np.ones((2, 2)),
        gamma=gamma,
    )


def _reflect_loop(psi):
    """Prefix-supremum reflection, written as a plain loop."""
    eta = 0.0
    etas = []
    for p in psi:
        eta = max(eta, -float(p))
        etas.append(eta)
    etas = np.array(etas)
    return np.asarray(psi, dtype=float) + etas, etas


finite_paths = st.lists(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
    min_size=1,
    max_size=200,
)


class TestSkorokhodMap:
    def test_nonnegative_ramp_passes_through(self):
        psi = np.linspace(0.0, 3.0, 50)
        phi, eta = skorokhod_map(psi)
        assert np.array_equal(phi, psi)
        assert np.array_equal(eta, np.zeros(50))

    def test_descending_ramp_is_pinned_at_zero(self):
        t = np.linspace(0.0, 3.0, 50)
        phi, eta = skorokhod_map(-t)
        assert np.array_equal(eta, t)
        assert np.all(phi == 0.0)

    @given(finite_paths)
    @settings(max_examples=200, deadline=None)
    def test_matches_loop_oracle_exactly(self, vals):
        psi = np.array(vals)
        phi, eta = skorokhod_map(psi)
        phi_o, eta_o = _reflect_loop(psi)
        assert np.array_equal(phi, phi_o)
        assert np.array_equal(eta, eta_o)

    @given(finite_paths)
    @settings(max_examples=200, deadline=None)
    def test_map_invariants(self, vals):
        psi = np.array(vals)
        phi, eta = skorokhod_map(psi)
        assert np.all(phi >= 0.0)
        assert eta[0] == max(0.0, -psi[0])
        assert np.all(np.diff(eta) >= 0.0)
        # the boundary term moves only while the reflected path sits at 0
        if eta[0] > 0.0:
            assert phi[0] == 0.0
        grows = np.diff(eta) > 0.0
        assert np.all(phi[1:][grows] == 0.0)


class TestSpecs:
    def test_kind_validation(self):
        with pytest.raises(ValueError):
            Rbm(b=0.0, sigma=-1.0)
        with pytest.raises(ValueError):
            Switched(b_low=0.0, sigma_low=0.0, b_high=0.0, sigma_high=1.0, zstar=1.0)
        with pytest.raises(ValueError):
            Switched(b_low=0.0, sigma_low=1.0, b_high=0.0, sigma_high=1.0, zstar=0.0)

    def test_spec_validation(self):
        kind = Rbm(b=0.0, sigma=1.0)
        with pytest.raises(ValueError):
            DiffusionSpec(kind=kind, dt=0.0)
        with pytest.raises(ValueError):
            DiffusionSpec(kind=kind, gamma=0.0)
        with pytest.raises(ValueError):
            DiffusionSpec(kind=kind, z0=-0.1)
        with pytest.raises(ValueError):
            DiffusionSpec(kind=kind, scheme="euler")

    def test_default_horizon_scales_with_discount(self):
        spec = DiffusionSpec(kind=Rbm(b=0.0, sigma=1.0), gamma=4.0, dt=0.01)
        assert spec.horizon == pytest.approx(10.0)
        assert spec.n_steps == 1000

    def test_n_steps_rounds(self):
        spec = DiffusionSpec(kind=Rbm(b=0.0, sigma=1.0), dt=0.3, horizon=1.0)
        assert spec.n_steps == 3


class TestSimulate:
    def test_fluid_from_zero_sticks_at_boundary(self):
        # sigma = 0 and b < 0: the state stays at 0, the boundary term
        # absorbs the whole inflow |b| t
        for scheme in ("bridge", "projection"):
            spec = DiffusionSpec(
                kind=Rbm(b=-0.5, sigma=0.0), dt=1e-3, horizon=2.0, scheme=scheme
            )
            p = simulate(spec, 3)
            assert np.all(p.z == 0.0)
            assert np.allclose(p.l, 0.5 * p.times, atol=1e-12)

    def test_fluid_drains_then_sticks(self):
        spec = DiffusionSpec(
            kind=Rbm(b=-0.5, sigma=0.0), z0=1.0, dt=1e-3, horizon=4.0
        )
        p = simulate(spec, 3)
        assert np.allclose(p.z, np.maximum(0.0, 1.0 - 0.5 * p.times), atol=1e-9)
        assert np.allclose(p.l, np.maximum(0.0, 0.5 * p.times - 1.0), atol=1e-9)

    def test_projection_equals_skorokhod_map_of_free_path(self):
        # replay the same draws through a plain loop and through the map
        spec = DiffusionSpec(
            kind=REF_KIND, z0=0.3, dt=2e-3, horizon=4.0, scheme="projection"
        )
        seed = 91
        p = simulate(spec, seed)
        n = spec.n_steps
        xi = philox_stream(seed, "path").standard_normal(n)

        psi_seq = np.empty(n + 1)
        psi_seq[0] = spec.z0
        psi, eta = spec.z0, 0.0
        z_prev = spec.z0
        sdt = math.sqrt(spec.dt)
        for j in range(n):
            if z_prev <= REF_KIND.zstar:
                b, sig = REF_KIND.b_low, REF_KIND.sigma_low
            else:
                b, sig = REF_KIND.b_high, REF_KIND.sigma_high
            psi += b * spec.dt + sig * sdt * xi[j]
            psi_seq[j + 1] = psi
            eta = max(eta, -psi)
            z_prev = psi + eta

        phi, eta_arr = skorokhod_map(psi_seq)
        assert np.array_equal(p.z, phi)
        assert np.array_equal(p.l, eta_arr)

    def test_projection_boundary_term_moves_only_at_zero(self):
        spec = DiffusionSpec(
            kind=Rbm(b=-0.2, sigma=1.0), dt=1e-3, horizon=3.0, scheme="projection"
        )
        p = simulate(spec, 19)
        grows = np.diff(p.l) > 0.0
        assert grows.any()
        assert np.all(p.z[1:][grows] == 0.0)

    def test_bridge_boundary_term_can_move_off_zero(self):
        # the within-step minimum can dip below 0 while the endpoint is
        # positive, so grid-level complementarity is not expected here
        spec = DiffusionSpec(kind=Rbm(b=-0.2, sigma=1.0), dt=1e-3, horizon=3.0)
        p = simulate(spec, 19)
        moved_off_zero = (np.diff(p.l) > 0.0) & (p.z[1:] > 0.0)
        assert moved_off_zero.any()

    @pytest.mark.parametrize("scheme", ["bridge", "projection"])
    def test_path_invariants(self, scheme):
        spec = DiffusionSpec(kind=REF_KIND, dt=1e-3, horizon=2.0, scheme=scheme)
        p = simulate(spec, 23)
        assert p.times.shape == p.z.shape == p.l.shape == (spec.n_steps + 1,)
        assert np.all(p.z >= 0.0)
        assert p.l[0] == 0.0
        assert np.all(np.diff(p.l) >= 0.0)
        assert p.times[-1] == pytest.approx(spec.horizon)
        assert p.dt == pytest.approx(spec.dt)

    def test_seed_determinism(self):
        spec = DiffusionSpec(kind=REF_KIND, dt=1e-2, horizon=1.0)
        a = simulate(spec, 5)
        b = simulate(spec, 5)
        c = simulate(spec, 6)
        assert np.array_equal(a.z, b.z) and np.array_equal(a.l, b.l)
        assert not np.array_equal(a.z, c.z)


class TestDiscountedCost:
    def test_constant_path_closed_form(self):
        gamma, c, T = 0.8, 0.5, 30.0
        times = np.linspace(0.0, T, 30001)
        p = ReflectedPath(times=times, z=np.full_like(times, c), l=np.zeros_like(times))
        res = discounted_cost([p], gamma=gamma)
        # trapezoid error on the exponential is (gamma dt)^2 / 12 relative
        exact = c * (1.0 - math.exp(-gamma * T)) / gamma
        assert res.estimate == pytest.approx(exact, rel=2e-7)
        assert res.std_error == 0.0
        assert res.tail_bound < 1e-9

    def test_short_horizon_trips_tail_bound(self):
        times = np.linspace(0.0, 5.0, 501)
        p = ReflectedPath(
            times=times, z=np.ones_like(times), l=np.zeros_like(times)
        )
        with pytest.raises(TailBoundExceeded):
            discounted_cost([p], gamma=1.0)
        res = discounted_cost([p], gamma=1.0, tail_tol=1e-2)
        assert res.tail_bound == pytest.approx(math.exp(-5.0))

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            discounted_cost([], gamma=1.0)

    def test_agrees_with_streaming_estimator(self):
        spec = DiffusionSpec(kind=Rbm(b=-0.5, sigma=1.0), dt=0.01, horizon=14.0, gamma=2.0)
        paths = [simulate(spec, 5000 + i) for i in range(200)]
        by_paths = discounted_cost(paths, gamma=2.0)
        streamed = estimate_cost(spec, 4000, 77)
        gap = abs(by_paths.estimate - streamed.estimate)
        assert gap <= 3.5 * math.hypot(by_paths.std_error, streamed.std_error)


class TestMoments:
    def test_bridge_terminal_matches_folded_normal(self):
        # from 0 with b = 0 the reflected state at time 1 is |N(0, 1)|;
        # the bridge transition is exact in law for constant coefficients
        spec = DiffusionSpec(kind=Rbm(b=0.0, sigma=1.0), dt=1e-3, horizon=1.0)
        mean, se = estimate_terminal(spec, 20000, 7)
        assert abs(mean - math.sqrt(2.0 / math.pi)) <= 3.5 * se

    def test_projection_terminal_shows_boundary_bias(self):
        # the grid-only boundary check loses about 0.5826 sigma sqrt(dt)
        spec = DiffusionSpec(
            kind=Rbm(b=0.0, sigma=1.0), dt=1e-3, horizon=1.0, scheme="projection"
        )
        mean, se = estimate_terminal(spec, 20000, 7)
        target = math.sqrt(2.0 / math.pi)
        assert mean + 3.0 * se < target
        assert abs(mean - (target - 0.5826 * math.sqrt(1e-3))) <= 3.5 * se

    def test_rbm_cost_matches_single_mode_value(self):
        coeffs = coeffs_of(0.5, 1.0, -0.3, 1.44, gamma=2.0)
        target = value_single(0.0, coeffs)
        spec = DiffusionSpec(kind=Rbm(b=-0.3, sigma=1.2), dt=5e-3, horizon=20.0, gamma=2.0)
        res = estimate_cost(spec, 20000, 11)
        assert abs(res.estimate - target) <= 3.5 * res.std_error
        assert res.tail_bound < 1e-9

    def test_switched_cost_matches_threshold_value(self):
        coeffs = coeffs_of(0.0, 0.7, -0.4, 1.3, gamma=1.0)
        assert cost_dual(0.0, REF_ZSTAR, coeffs) == pytest.approx(REF_V0, rel=1e-12)
        spec = DiffusionSpec(kind=REF_KIND, dt=1e-3, horizon=40.0, gamma=1.0)
        res = estimate_cost(spec, 4000, 12)
        assert abs(res.estimate - REF_V0) <= 3.5 * res.std_error


class TestEstimatorMechanics:
    SPEC = DiffusionSpec(kind=Rbm(b=-0.5, sigma=1.0), dt=0.01, horizon=12.0, gamma=2.0)

    def test_ragged_batches_run(self):
        res = estimate_cost(self.SPEC, 47, 3, batch_size=20)
        assert math.isfinite(res.estimate) and res.std_error > 0.0

    def test_single_path_has_zero_se(self):
        res = estimate_cost(self.SPEC, 1, 3)
        assert res.std_error == 0.0

    def test_reruns_reproduce_exactly(self):
        a = estimate_cost(self.SPEC, 500, 9)
        b = estimate_cost(self.SPEC, 500, 9)
        assert a == b
        c = estimate_cost(self.SPEC, 500, 10)
        assert c.estimate != a.estimate

    def test_terminal_reruns_reproduce_exactly(self):
        a = estimate_terminal(self.SPEC, 500, 9)
        assert a == estimate_terminal(self.SPEC, 500, 9)


class TestOccupation:
    def test_counts_grid_points_in_band(self):
        times = np.linspace(0.0, 1.0, 11)
        z = np.array([0.0, 0.2, 0.5, 0.5, 0.45, 1.0, 2.0, 0.5, 0.49, 0.51, 3.0])
        p = ReflectedPath(times=times, z=z, l=np.zeros_like(z))
        assert occupation_near(p, 0.5, 0.06) == pytest.approx(0.6)
        assert occupation_near(p, 10.0, 0.5) == 0.0

    def test_band_monotone_in_width(self):
        spec = DiffusionSpec(kind=REF_KIND, dt=1e-3, horizon=4.0)
        p = simulate(spec, 31)
        narrow = occupation_near(p, REF_ZSTAR, 0.05)
        wide = occupation_near(p, REF_ZSTAR, 0.2)
        assert 0.0 <= narrow <= wide <= p.times[-1] + p.dt

    def test_threshold_band_occupation_stable_in_dt(self):
        # the skeleton law is dt-exact per mode, so band occupation should
        # only move through the switching discretization and sample noise
        means = {}
        for dt in (1e-3, 2e-3):
            spec = DiffusionSpec(kind=REF_KIND, dt=dt, horizon=8.0)
            vals = [
                occupation_near(simulate(spec, 1000 + i), REF_ZSTAR, 0.15)
                for i in range(24)
            ]
            means[dt] = float(np.mean(vals))
        gap = abs(means[1e-3] - means[2e-3])
        assert gap <= 0.4 * 0.5 * (means[1e-3] + means[2e-3])
