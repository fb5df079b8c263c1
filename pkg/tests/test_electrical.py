"""Detection stage under filtered Gaussian noise.

The miss probability is checked against direct sampling of the blip
geometry, the no-blip maximum CDF against brute-force trace maxima, and
the with-blip CDF against an independent integration of the same blip
marginal, so the quadrature machinery is never its own referee.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtr

from spinshot import electrical as el
from spinshot import filters
from spinshot.electrical import ElectricalRegime, FlatVisibilityWarning
from spinshot.models import (
    DetectorModel,
    DomainError,
    ReadoutPlan,
    TunnelModel,
)


def _noise_rms(det):
    fm = filters.bessel_filter(det.filter_cutoff, det.filter_order)
    return filters.noise_sigma(fm, det.noise_psd)


class TestPMiss:
    def test_fast_sampling_misses_nothing(self):
        assert el.p_miss(1e-9, 1e-3, 1e-3) < 1e-6

    def test_equal_rate_closed_form(self):
        # R1 = R0 = 1 analytic limit: 1 + (1/2)/(1 - sqrt(e)).
        want = 1.0 + 0.5 / (1.0 - math.exp(0.5))
        assert el.p_miss(1.0, 1.0, 1.0) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(0.2293, abs=1e-4)

    def test_matches_blip_geometry_sampling(self):
        # Direct simulation of the miss event: a blip whose start phase is
        # exponential within the effective half-period and whose length
        # ends before the next tick is never sampled.
        rng = np.random.default_rng(42)
        n = 400_000
        for t_s, t1, t0 in [(1.0, 1.0, 1.0), (0.5, 1.3, 0.4), (1.0, 0.25, 2.0)]:
            g = 0.5 * t_s
            wait = rng.exponential(t1, n)
            blip = rng.exponential(t0, n)
            hit = (wait % g) + blip <= g
            p_hat = hit.mean()
            sigma = math.sqrt(p_hat * (1 - p_hat) / n)
            assert el.p_miss(t_s, t1, t0) == pytest.approx(p_hat, abs=4 * sigma)

    def test_twelve_samples_per_load_time_is_enough(self):
        # The sampling-rate rule of thumb for the percent-level regime.
        t_in0 = 1e-3
        p = el.p_miss(t_in0 / 12.0, t_in0, t_in0)
        assert p < 0.021

    def test_removable_equal_rate_point_is_continuous(self):
        base = el.p_miss(1.0, 1.0, 1.0)
        assert el.p_miss(1.0, 1.0 + 1e-9, 1.0) == pytest.approx(base, abs=1e-8)

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, 0, 1), (1, 1, 0), (-1, 1, 1)])
    def test_rejects_nonpositive_times(self, args):
        with pytest.raises(DomainError):
            el.p_miss(*args)


class TestNoBlipCdf:
    def test_single_sample_median(self, watson_dm):
        _, det, _ = watson_dm
        assert el.c0(det.mu0, det, 1.0) == pytest.approx(0.5)

    def test_independence_power_law(self, watson_dm):
        _, det, _ = watson_dm
        assert el.c0(det.mu0, det, 100.0) == pytest.approx(0.5**100, rel=1e-9)

    def test_fractional_window_interpolates(self, watson_dm):
        _, det, _ = watson_dm
        x = det.mu0 + _noise_rms(det)
        lo, mid, hi = (el.c0(x, det, n) for n in (2.0, 2.5, 3.0))
        assert hi < mid < lo

    def test_matches_brute_force_trace_maxima(self, watson_dm):
        _, det, _ = watson_dm
        sigma = _noise_rms(det)
        rng = np.random.default_rng(5)
        n_r = 25
        maxima = np.sort(
            rng.normal(det.mu0, sigma, size=(40_000, n_r)).max(axis=1)
        )
        ecdf = np.arange(1, maxima.size + 1) / maxima.size
        model = el.c0(maxima, det, float(n_r))
        assert np.max(np.abs(model - ecdf)) < 0.01

    def test_rejects_sub_unit_window(self, watson_dm):
        _, det, _ = watson_dm
        with pytest.raises(DomainError):
            el.c0(det.mu0, det, 0.5)


class TestWithBlipCdf:
    def test_cdf_limits(self, broome_l):
        tm, det, plan = broome_l
        sigma = _noise_rms(det)
        assert el.c1(det.mu0 - 12 * sigma, det, tm, plan) < 1e-9
        assert el.c1(det.mu1 + 12 * sigma, det, tm, plan) == pytest.approx(
            1.0, abs=1e-9
        )

    def test_monotone_in_threshold(self, broome_l):
        tm, det, plan = broome_l
        grid = np.linspace(det.mu0 - 3, det.mu1 + 3, 301)
        vals = el.c1(grid, det, tm, plan)
        assert np.all(np.diff(vals) >= -1e-12)

    def test_vanishing_signal_collapses_onto_noise_cdf(self, broome_l):
        tm, det, _ = broome_l
        sigma = _noise_rms(det)
        tiny = DetectorModel(
            mu0=det.mu0,
            mu1=det.mu0 + 1e-9 * sigma,
            noise_psd=det.noise_psd,
            filter_cutoff=det.filter_cutoff,
            sample_rate=det.sample_rate,
        )
        plan = ReadoutPlan(readout_time=10.5e-3, threshold=det.mu0)
        grid = np.linspace(det.mu0 - 4 * sigma, det.mu0 + 4 * sigma, 41)
        n_raw = plan.samples(tiny)
        f_s = 2.0 * tiny.filter_cutoff / tiny.sample_rate
        n_eff, _ = filters.correlation_correct(n_raw, 1.0, f_s)
        with pytest.warns(FlatVisibilityWarning):
            curves = el.electrical_curves(tiny, tm, plan, num=41)
        assert np.max(np.abs(el.c1(grid, tiny, tm, plan) - el.c0(grid, tiny, n_eff))) < 1e-6
        assert curves.regime == ElectricalRegime.NOISE_LIMITED

    def test_quadrature_matches_independent_integration(self):
        # Small window, no correlation correction: integrate the blip
        # marginal with scipy.quad and compare against the panel scheme.
        det = DetectorModel(
            mu0=0.0, mu1=8.0, noise_psd=0.05, filter_cutoff=500.0, sample_rate=1000.0
        )
        tm = TunnelModel(t_out1=8e-3, t_in0=3e-3, t_out0=10.0, t1_relax=10.0)
        plan = ReadoutPlan(readout_time=6e-3, threshold=4.0)
        n = plan.samples(det)
        assert n == 6.0
        sigma = _noise_rms(det)
        n_w = tm.t_out1 * det.sample_rate
        n_b = tm.t_in0 * det.sample_rate
        m_c = det.filter_cutoff / det.sample_rate

        def reference(x):
            def integrand(u):
                w = el._kernel_weight(np.array([u]), n, n_w, n_b)[0]
                mu_eff = det.mu0 + det.delta_mu * el._pulse_gain(
                    np.array([u]), m_c, det.filter_order
                )[0]
                frac = u / n
                mix = frac * ndtr((x - mu_eff) / sigma) + (1 - frac) * ndtr(
                    (x - det.mu0) / sigma
                )
                return w * mix**n

            val, err = quad(integrand, 1.0, n - 1.0, limit=200, epsabs=1e-12)
            assert err < 1e-9
            return val

        for x in (1.0, 3.0, 4.5, 6.0, 7.5):
            assert el.c1(x, det, tm, plan) == pytest.approx(
                reference(x), abs=1e-3
            )

    def test_discrete_noise_enumeration(self):
        # Three-point noise law keeps every outcome enumerable: midpoint
        # summation over the blip marginal must agree with the kernel
        # evaluated on the same statistics.  The atoms get a sigma/10
        # width so the panel quadrature sees a smooth integrand.
        det = DetectorModel(
            mu0=0.0, mu1=8.0, noise_psd=0.05, filter_cutoff=500.0, sample_rate=1000.0
        )
        tm = TunnelModel(t_out1=8e-3, t_in0=3e-3, t_out0=10.0, t1_relax=10.0)
        plan = ReadoutPlan(readout_time=6e-3, threshold=4.0)
        n = plan.samples(det)
        sigma = _noise_rms(det)
        spread = sigma * math.sqrt(1.5)
        width = sigma / 10.0

        def atom_cdf(x, mu):
            return (
                ndtr((x - mu + spread) / width)
                + ndtr((x - mu) / width)
                + ndtr((x - mu - spread) / width)
            ) / 3.0

        f0 = lambda x: atom_cdf(x, det.mu0)
        f1 = lambda x, mu: atom_cdf(x, mu)
        kern = el._build_kernel(det, tm, plan, el._probe_grid(det), cdf_pair=(f0, f1))

        n_w = tm.t_out1 * det.sample_rate
        n_b = tm.t_in0 * det.sample_rate
        m_c = det.filter_cutoff / det.sample_rate
        u_edges = np.linspace(1.0, n - 1.0, 20001)
        u_mid = 0.5 * (u_edges[:-1] + u_edges[1:])
        du = np.diff(u_edges)
        w = el._kernel_weight(u_mid, n, n_w, n_b) * du
        mu_eff = det.mu0 + det.delta_mu * el._pulse_gain(u_mid, m_c, det.filter_order)

        for x in (-0.1, 1.9, 4.0, 6.1, 8.2):
            mix = (u_mid / n) * f1(np.array([x]), mu_eff) + (1 - u_mid / n) * f0(
                np.array([x])
            )
            ref = float(np.sum(w * mix**n))
            got = float(kern.eval(np.array([x]))[0])
            assert got == pytest.approx(ref, abs=1e-3)

    def test_watson_minus_donor_visibility(self, watson_dm):
        tm, det, plan = watson_dm
        assert el.v_e(plan.threshold, det, tm, plan) == pytest.approx(
            0.966, abs=0.005
        )


class TestVisibilityAndThreshold:
    def test_well_separated_levels_read_almost_perfectly(self):
        # Long window: the residual is the vanishing chance that a blip
        # starts in the last couple of samples and gets censored short.
        det = DetectorModel(
            mu0=0.0, mu1=20.0, noise_psd=0.01, filter_cutoff=5000.0, sample_rate=10000.0
        )
        tm = TunnelModel(t_out1=10.0, t_in0=1.0, t_out0=100.0, t1_relax=100.0)
        plan = ReadoutPlan(readout_time=0.1, threshold=10.0)
        x = el.x_opt(det, tm, plan)
        assert el.v_e(x, det, tm, plan) > 0.999

    def test_visibility_bounded_by_miss_complement(self, broome_l, watson_dm):
        for tm, det, plan in (broome_l, watson_dm):
            curves = el.electrical_curves(det, tm, plan, num=401)
            assert np.all(curves.v_e <= 1.0 - curves.p_miss + 1e-12)

    def test_no_blip_cdf_dominates(self, broome_l, watson_dm):
        for tm, det, plan in (broome_l, watson_dm):
            curves = el.electrical_curves(det, tm, plan, num=401)
            assert np.all(curves.c0 - curves.c1 >= -1e-12)

    def test_optimum_beats_the_grid(self, broome_l):
        tm, det, plan = broome_l
        curves = el.electrical_curves(det, tm, plan, num=801)
        best = el.v_e(curves.x_opt, det, tm, plan)
        assert best >= np.max(curves.v_e) - 1e-9
        assert det.mu0 < curves.x_opt < det.mu1

    def test_state_fidelities_recompose_into_visibility(self, watson_dm):
        tm, det, plan = watson_dm
        fe0, fe1, miss = el.state_fidelities(plan.threshold, det, tm, plan)
        assert 0.0 < miss < 1.0
        assert fe0 + fe1 - 1.0 == pytest.approx(
            float(el.v_e(plan.threshold, det, tm, plan)), abs=1e-12
        )

    def test_indistinguishable_states_warn(self, broome_l):
        tm, det, _ = broome_l
        sigma = _noise_rms(det)
        flat = DetectorModel(
            mu0=det.mu0,
            mu1=det.mu0 + 1e-5 * sigma,
            noise_psd=det.noise_psd,
            filter_cutoff=det.filter_cutoff,
            sample_rate=det.sample_rate,
        )
        with pytest.warns(FlatVisibilityWarning):
            el.x_opt(flat, tm, ReadoutPlan(10.5e-3, det.mu0))


class TestCurves:
    def test_cdf_shape_contract(self, watson_d0):
        tm, det, plan = watson_d0
        curves = el.electrical_curves(det, tm, plan, num=2001)
        for cdf in (curves.c0, curves.c1):
            assert np.all(np.diff(cdf) >= -1e-12)
            assert cdf[0] < 1e-6
            assert cdf[-1] > 1.0 - 1e-6
        for dens in (curves.p_e0, curves.p_e1):
            assert np.all(dens >= 0.0)
            assert np.trapezoid(dens, curves.x_grid) == pytest.approx(1.0, abs=1e-3)
        assert np.allclose(
            curves.v_e, (1.0 - curves.p_miss) * (curves.c0 - curves.c1), atol=1e-12
        )

    def test_d_prime_quadrature_average(self, broome_l):
        _, det, _ = broome_l
        sigma = _noise_rms(det)
        assert el.d_prime(det) == pytest.approx(det.delta_mu / sigma)
        mixed = el.d_prime(det, sigma0=sigma, sigma1=3.0 * sigma)
        assert mixed == pytest.approx(
            det.delta_mu / math.sqrt(0.5 * (sigma**2 + 9 * sigma**2))
        )


class TestRegimeClassification:
    def test_healthy_operating_point(self, watson_d0):
        tm, det, plan = watson_d0
        assert el.electrical_curves(det, tm, plan).regime == ElectricalRegime.OPTIMAL

    def test_undersampled_fast_tunneling(self):
        det = DetectorModel(
            mu0=0.0, mu1=40.0, noise_psd=0.01, filter_cutoff=5000.0, sample_rate=10000.0
        )
        tm = TunnelModel(t_out1=2e-3, t_in0=4e-4, t_out0=10.0, t1_relax=10.0)
        curves = el.electrical_curves(det, tm, ReadoutPlan(20e-3, 8.0))
        assert curves.p_miss > 0.05
        assert curves.regime == ElectricalRegime.SAMPLE_RATE_LIMITED

    def test_unit_snr_is_noise_limited(self):
        det = DetectorModel(
            mu0=0.0, mu1=1.0, noise_psd=0.01, filter_cutoff=5000.0, sample_rate=10000.0
        )
        tm = TunnelModel(t_out1=5e-3, t_in0=5e-3, t_out0=10.0, t1_relax=10.0)
        curves = el.electrical_curves(det, tm, ReadoutPlan(20e-3, 0.5))
        assert el.d_prime(det) == pytest.approx(1.0)
        assert curves.regime == ElectricalRegime.NOISE_LIMITED

    def test_blips_clipped_by_slow_filter(self):
        det = DetectorModel(
            mu0=0.0, mu1=6.0, noise_psd=0.05, filter_cutoff=200.0, sample_rate=1000.0
        )
        tm = TunnelModel(t_out1=50e-3, t_in0=2e-3, t_out0=10.0, t1_relax=10.0)
        curves = el.electrical_curves(det, tm, ReadoutPlan(100e-3, 2.0))
        assert det.filter_cutoff * tm.t_in0 < 1.0
        assert curves.regime == ElectricalRegime.FILTER_LIMITED
