"""Core value types: fidelity composition, the Zeeman ratio and the
validation contracts of the immutable model records."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import constants

from spinshot.models import (
    MU_B_OVER_KB,
    DetectorModel,
    DomainError,
    FidelityReport,
    ReadoutPlan,
    TunnelModel,
    ZeemanParams,
    compose_fidelity,
    zeeman_to_ratio,
)

probability = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TestComposeFidelity:
    def test_perfect_stages_give_perfect_readout(self):
        assert compose_fidelity((1.0, 1.0), (1.0, 1.0)) == (1.0, 1.0, 1.0)

    def test_coin_flip_stages_give_coin_flip(self):
        f0, f1, fm = compose_fidelity((0.5, 0.5), (0.5, 0.5))
        assert f0 == pytest.approx(0.5)
        assert f1 == pytest.approx(0.5)
        assert fm == pytest.approx(0.5)

    def test_mean_is_mean_of_state_fidelities(self):
        f0, f1, fm = compose_fidelity((0.9, 0.8), (0.95, 0.7))
        assert fm == pytest.approx(0.5 * (f0 + f1))

    @pytest.mark.parametrize("bad", [-0.1, 1.1, float("nan"), float("inf")])
    @pytest.mark.parametrize("slot", range(4))
    def test_rejects_non_probabilities(self, bad, slot):
        args = [1.0, 1.0, 1.0, 1.0]
        args[slot] = bad
        with pytest.raises(DomainError):
            compose_fidelity((args[0], args[1]), (args[2], args[3]))

    @given(probability, probability, probability, probability)
    def test_outputs_are_probabilities(self, a, b, c, d):
        f0, f1, fm = compose_fidelity((a, b), (c, d))
        for v in (f0, f1, fm):
            assert -1e-12 <= v <= 1.0 + 1e-12

    @given(probability, probability, probability, probability)
    def test_label_swap_symmetry(self, a, b, c, d):
        # Relabeling both stages swaps the state fidelities and fixes the mean.
        f0, f1, fm = compose_fidelity((a, b), (c, d))
        g0, g1, gm = compose_fidelity((b, a), (d, c))
        assert g0 == pytest.approx(f1, abs=1e-12)
        assert g1 == pytest.approx(f0, abs=1e-12)
        assert gm == pytest.approx(fm, abs=1e-12)

    def test_monotone_when_stages_better_than_chance(self):
        rng = np.random.default_rng(20260822)
        for _ in range(300):
            base = rng.uniform(0.5, 1.0, size=4)
            _, _, fm = compose_fidelity((base[0], base[1]), (base[2], base[3]))
            slot = rng.integers(0, 4)
            bumped = base.copy()
            bumped[slot] = min(1.0, bumped[slot] + rng.uniform(0.0, 0.3))
            _, _, fm2 = compose_fidelity((bumped[0], bumped[1]), (bumped[2], bumped[3]))
            assert fm2 >= fm - 1e-12


class TestZeemanRatio:
    def test_zero_field_gives_zero(self):
        assert zeeman_to_ratio(ZeemanParams(0.0, 2.0, 0.1)) == 0.0

    def test_unit_ratio_point(self):
        # g = 2 at 1 T and 1.343 K puts the splitting right at k_B T.
        r = zeeman_to_ratio(ZeemanParams(1.0, 2.0, 1.343))
        assert r == pytest.approx(1.0, abs=2e-3)

    def test_known_dilution_fridge_point(self):
        r = zeeman_to_ratio(ZeemanParams(2.5, 2.0, 0.2))
        assert r == pytest.approx(16.8, abs=0.05)

    def test_constant_matches_codata(self):
        # mu_B / k_B in kelvin per tesla, from scipy's CODATA tables.
        ref = constants.value("Bohr magneton") / constants.value(
            "Boltzmann constant"
        )
        assert MU_B_OVER_KB == pytest.approx(ref, rel=1e-6)

    def test_linear_in_field_and_g(self):
        base = zeeman_to_ratio(ZeemanParams(1.2, 1.1, 0.3))
        assert zeeman_to_ratio(ZeemanParams(2.4, 1.1, 0.3)) == pytest.approx(
            2 * base
        )
        assert zeeman_to_ratio(ZeemanParams(1.2, 2.2, 0.3)) == pytest.approx(
            2 * base
        )

    @pytest.mark.parametrize(
        "b, g, t", [(-1.0, 2.0, 0.1), (1.0, -2.0, 0.1), (1.0, 2.0, 0.0), (1.0, 2.0, -0.1)]
    )
    def test_rejects_unphysical_inputs(self, b, g, t):
        with pytest.raises(DomainError):
            ZeemanParams(b, g, t)


class TestTunnelModel:
    def test_partial_model_is_legal(self):
        m = TunnelModel(t_out1=1e-3, t1_relax=1.0)
        assert m.t_in0 is None
        assert m.t_out0 is None

    def test_require_names_all_missing_fields(self):
        m = TunnelModel(t_out1=1e-3, t1_relax=1.0)
        with pytest.raises(DomainError, match="t_in0"):
            m.require("t_in0", "t_out1")

    def test_infinite_relaxation_is_a_legal_sentinel(self):
        m = TunnelModel(t_out1=1e-3, t1_relax=math.inf)
        assert math.isinf(m.t1_relax)

    @pytest.mark.parametrize("field", ["t_in0", "t_out0", "t_in1", "t_out1"])
    @pytest.mark.parametrize("bad", [0.0, -1e-3, float("inf"), float("nan")])
    def test_rejects_nonpositive_tunnel_times(self, field, bad):
        kwargs = {"t_out1": 1e-3, "t1_relax": 1.0, field: bad}
        with pytest.raises(DomainError):
            TunnelModel(**kwargs)

    def test_updated_returns_new_value(self):
        m = TunnelModel(t_out1=1e-3, t1_relax=1.0)
        m2 = m.updated(t_out0=0.5)
        assert m.t_out0 is None
        assert m2.t_out0 == 0.5
        assert m2.t_out1 == m.t_out1

    def test_negative_splitting_rejected(self):
        with pytest.raises(DomainError):
            TunnelModel(t_out1=1e-3, t1_relax=1.0, ez_over_kbt=-1.0)


class TestDetectorModel:
    def test_levels_must_be_ordered(self):
        with pytest.raises(DomainError, match="mu1"):
            DetectorModel(
                mu0=1.0, mu1=1.0, noise_psd=0.1, filter_cutoff=1e3, sample_rate=5e3
            )

    def test_derived_quantities(self):
        det = DetectorModel(
            mu0=-1.0, mu1=3.0, noise_psd=0.1, filter_cutoff=1e3, sample_rate=5e3
        )
        assert det.delta_mu == 4.0
        assert det.sample_time == pytest.approx(2e-4)
        assert det.filter_order == 8

    def test_filter_order_must_be_integral(self):
        with pytest.raises(DomainError):
            DetectorModel(
                mu0=0.0,
                mu1=1.0,
                noise_psd=0.1,
                filter_cutoff=1e3,
                sample_rate=5e3,
                filter_order=0,
            )


class TestReadoutPlan:
    def test_window_must_hold_two_samples(self):
        det = DetectorModel(
            mu0=0.0, mu1=1.0, noise_psd=0.1, filter_cutoff=1e3, sample_rate=5e3
        )
        plan = ReadoutPlan(readout_time=1e-4, threshold=0.5)
        with pytest.raises(DomainError, match="samples"):
            plan.samples(det)
        assert ReadoutPlan(2.0, 0.5).samples(det) == pytest.approx(1e4)

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(DomainError):
            ReadoutPlan(readout_time=0.0, threshold=0.5)


class TestFidelityReport:
    def test_from_components_stores_consistent_composition(self):
        rep = FidelityReport.from_components(
            f_stc0=0.98, f_stc1=0.95, f_e0=0.99, f_e1=0.97, p_miss=0.01
        )
        f0, f1, fm = compose_fidelity((0.98, 0.95), (0.99, 0.97))
        assert rep.f0 == pytest.approx(f0)
        assert rep.f1 == pytest.approx(f1)
        assert rep.f_m == pytest.approx(fm)
        assert rep.v_stc == pytest.approx(0.93)

    def test_tampered_mean_is_rejected(self):
        rep = FidelityReport.from_components(
            f_stc0=0.98, f_stc1=0.95, f_e0=0.99, f_e1=0.97, p_miss=0.01
        )
        with pytest.raises(DomainError, match="f_m"):
            FidelityReport(
                f_stc0=rep.f_stc0,
                f_stc1=rep.f_stc1,
                v_stc=rep.v_stc,
                f_e0=rep.f_e0,
                f_e1=rep.f_e1,
                v_e=rep.v_e,
                f0=rep.f0,
                f1=rep.f1,
                f_m=rep.f_m + 1e-6,
                p_miss=rep.p_miss,
            )

    def test_explicit_visibility_override_is_kept(self):
        rep = FidelityReport.from_components(
            f_stc0=0.98, f_stc1=0.95, f_e0=0.99, f_e1=0.97, p_miss=0.02, v_e=0.9
        )
        assert rep.v_e == 0.9
