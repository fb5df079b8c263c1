"""Measurement-ordering tests: penalties, search, sequential reports."""

import itertools
import math

import numpy as np
import pytest

from spinshot import electrical, fidelity, sequencer, stc
from spinshot.models import DomainError, ReadoutPlan
from spinshot.sequencer import (
    QubitSchedule,
    best_order,
    lambdas,
    make_schedule,
    schedule_from_models,
    sequential_fidelity,
)

# the worked 3-qubit instance: (measure time, relax time) per qubit id
THREE = [(3.0, 5.0), (1.0, 2.0), (2.0, 10.0)]

# every ordering of THREE with its mean penalty, best first
THREE_RANKING = [
    ((1, 0, 2), 0.8297),
    ((1, 2, 0), 0.8179),
    ((2, 1, 0), 0.6389),
    ((0, 1, 2), 0.6311),
    ((0, 2, 1), 0.6076),
    ((2, 0, 1), 0.5841),
]


def _brute_best(qubits, objective="mean", weights=None):
    t_m = np.array([q[0] for q in qubits])
    t1 = np.array([q[1] for q in qubits])
    w = None if weights is None else np.asarray(weights, dtype=float)
    best = None
    for perm in itertools.permutations(range(len(qubits))):
        lam = sequencer._lambda_values(t_m, t1, perm)
        val = sequencer._objective_of(lam, perm, objective, w)
        if best is None or val > best[1] + 1e-15:
            best = (perm, val)
    return best


class TestPenalties:
    def test_worked_example_good_order(self):
        sch = make_schedule(THREE, (1, 0, 2))
        assert lambdas(sch) == pytest.approx((1.0, 0.8187, 0.6703), abs=5e-5)

    def test_worked_example_naive_order(self):
        sch = make_schedule(THREE, (0, 1, 2))
        assert lambdas(sch) == pytest.approx((1.0, 0.2231, 0.6703), abs=5e-5)

    def test_single_qubit(self):
        sch = best_order([(2.5, 0.3)])
        assert sch.lams == (1.0,)
        assert sch.order == (0,)
        assert sch.score == 1.0

    def test_first_position_pays_nothing(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            qubits = [(rng.uniform(0.1, 3), rng.uniform(0.1, 3)) for _ in range(5)]
            order = tuple(rng.permutation(5))
            assert make_schedule(qubits, order).lams[0] == 1.0

    def test_penalty_ignores_later_qubits(self):
        # appending a qubit must not touch the penalties already accrued
        base = make_schedule(THREE, (1, 0, 2))
        extended = make_schedule(THREE + [(7.0, 0.4)], (1, 0, 2, 3))
        assert extended.lams[:3] == base.lams

    def test_infinite_relax_time_never_decays(self):
        sch = make_schedule([(5.0, math.inf), (1.0, math.inf)], (0, 1))
        assert sch.lams == (1.0, 1.0)
        assert sch.score == 1.0


class TestBestOrderSmall:
    def test_worked_instance_optimum(self):
        sch = best_order(THREE)
        assert sch.order == (1, 0, 2)
        assert sch.score == pytest.approx(0.8297, abs=5e-5)
        assert sch.objective_value == sch.score

    def test_worked_instance_full_ranking(self):
        sch = best_order(THREE)
        assert sch.ranking is not None and len(sch.ranking) == 6
        for (got_perm, got_val), (want_perm, want_val) in zip(
            sch.ranking, THREE_RANKING
        ):
            assert got_perm == want_perm
            # quoted scores are truncated, not rounded, so allow 1e-4
            assert got_val == pytest.approx(want_val, abs=1e-4)

    def test_identical_qubits_tie_lexicographically(self):
        sch = best_order([(1.5, 0.8)] * 4)
        assert sch.order == (0, 1, 2, 3)
        vals = [v for _, v in sch.ranking]
        assert max(vals) - min(vals) < 1e-15

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_brute_force_at_four(self, seed):
        rng = np.random.default_rng(500 + seed)
        qubits = [
            (10.0 ** rng.uniform(-2, 1), 10.0 ** rng.uniform(-2, 1))
            for _ in range(4)
        ]
        sch = best_order(qubits)
        perm, val = _brute_best(qubits)
        assert sch.order == perm
        assert sch.objective_value == pytest.approx(val, rel=1e-12)

    def test_ranking_absent_beyond_six(self):
        rng = np.random.default_rng(3)
        qubits = [(rng.uniform(0.1, 2), rng.uniform(0.1, 2)) for _ in range(7)]
        assert best_order(qubits).ranking is None

    def test_rescaling_leaves_schedule_alone(self):
        rng = np.random.default_rng(21)
        qubits = [(rng.uniform(0.1, 2), rng.uniform(0.1, 2)) for _ in range(5)]
        ref = best_order(qubits)
        for c in (1e-3, 7.3, 1e3):
            scaled = best_order([(c * t, c * t1) for t, t1 in qubits])
            assert scaled.order == ref.order
            assert scaled.lams == pytest.approx(ref.lams, abs=1e-12)
            assert scaled.score == pytest.approx(ref.score, abs=1e-12)


class TestBestOrderLarge:
    @pytest.mark.parametrize("seed", range(12))
    def test_heuristic_stays_near_exhaustive_at_seven(self, seed):
        # the local search is not guaranteed optimal; on this seed set it
        # lands exactly on the optimum 10 times and within 6% twice
        rng = np.random.default_rng(31000 + seed)
        qubits = [
            (10.0 ** rng.uniform(-3, 0), 10.0 ** rng.uniform(-2.5, 0.5))
            for _ in range(7)
        ]
        t_m = np.array([q[0] for q in qubits])
        t1 = np.array([q[1] for q in qubits])
        exact = best_order(qubits).objective_value
        order = sequencer._two_swap(
            sequencer._greedy_order(t_m, t1, "mean", None), t_m, t1, "mean", None
        )
        heur = sequencer._objective_of(
            sequencer._lambda_values(t_m, t1, order), order, "mean", None
        )
        assert heur <= exact + 1e-12
        assert heur >= 0.94 * exact

    def test_twelve_qubits_beats_random_orders(self):
        rng = np.random.default_rng(4242)
        qubits = [
            (10.0 ** rng.uniform(-3, 0), 10.0 ** rng.uniform(-2.5, 0.5))
            for _ in range(12)
        ]
        sch = best_order(qubits)
        assert sch.ranking is None
        assert 0.0 < sch.score <= 1.0
        t_m = np.array([q[0] for q in qubits])
        t1 = np.array([q[1] for q in qubits])
        for s in range(50):
            perm = np.random.default_rng(s).permutation(12)
            val = sequencer._objective_of(
                sequencer._lambda_values(t_m, t1, perm), perm, "mean", None
            )
            assert sch.objective_value >= val


class TestObjectives:
    def test_min_qubit_protects_the_worst(self):
        # short relaxer last would be wiped out; min-qubit refuses that
        qubits = [(4.0, 50.0), (4.0, 0.5), (4.0, 50.0)]
        sch = best_order(qubits, objective="min-qubit")
        perm, val = _brute_best(qubits, objective="min-qubit")
        assert sch.objective_value == pytest.approx(val, rel=1e-12)
        assert sch.order[0] == 1

    def test_weighted_pulls_heavy_qubit_forward(self):
        qubits = [(2.0, 1.0), (2.0, 1.0)]
        heavy_second = best_order(qubits, objective="weighted", weights=[1.0, 50.0])
        assert heavy_second.order[0] == 1
        heavy_first = best_order(qubits, objective="weighted", weights=[50.0, 1.0])
        assert heavy_first.order[0] == 0

    def test_weighted_matches_brute_force(self):
        rng = np.random.default_rng(99)
        qubits = [(rng.uniform(0.5, 2), rng.uniform(0.2, 3)) for _ in range(5)]
        weights = rng.uniform(0.1, 5, size=5)
        sch = best_order(qubits, objective="weighted", weights=weights)
        perm, val = _brute_best(qubits, objective="weighted", weights=weights)
        assert sch.objective_value == pytest.approx(val, rel=1e-12)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(objective="median"),
            dict(objective="weighted"),
            dict(objective="mean", weights=[1.0, 1.0, 1.0]),
            dict(objective="weighted", weights=[1.0, -1.0, 1.0]),
            dict(objective="weighted", weights=[0.0, 0.0, 0.0]),
            dict(objective="weighted", weights=[1.0, 2.0]),
        ],
    )
    def test_objective_misuse_rejected(self, kwargs):
        with pytest.raises(DomainError):
            best_order(THREE, **kwargs)


class TestScheduleValidation:
    def test_order_must_be_permutation(self):
        with pytest.raises(DomainError):
            make_schedule(THREE, (0, 0, 2))

    def test_no_qubits_rejected(self):
        with pytest.raises(DomainError):
            best_order([])

    def test_nonpositive_times_rejected(self):
        with pytest.raises(DomainError):
            best_order([(0.0, 1.0)])
        with pytest.raises(DomainError):
            best_order([(1.0, -2.0)])

    def test_tampered_penalties_rejected(self):
        sch = make_schedule(THREE, (1, 0, 2))
        bad = dict(
            measure_times=sch.measure_times,
            relax_times=sch.relax_times,
            order=sch.order,
            lams=(1.0, 0.9, sch.lams[2]),
            score=sch.score,
            objective="mean",
            objective_value=sch.objective_value,
        )
        with pytest.raises(DomainError):
            QubitSchedule(**bad)


class TestSequentialFidelity:
    def test_first_position_is_the_single_qubit_answer(self, broome_l):
        tm, det, plan = broome_l
        qubits = [(tm, det)]
        sch = make_schedule([(plan.readout_time, tm.t1_relax)], (0,))
        (rep,) = sequential_fidelity(qubits, sch)
        x = electrical.x_opt(det, tm, ReadoutPlan(plan.readout_time, det.mu0))
        solo = fidelity.evaluate(tm, det, ReadoutPlan(plan.readout_time, x))
        assert rep.f_m == pytest.approx(solo.f_m, rel=1e-12)

    def test_unit_wait_scales_by_inverse_e(self, broome_l):
        tm, det, plan = broome_l
        # first slot long enough that the second waits exactly T1
        sch = make_schedule(
            [(tm.t1_relax, tm.t1_relax), (plan.readout_time, tm.t1_relax)], (0, 1)
        )
        reports = sequential_fidelity([(tm, det), (tm, det)], sch)
        bare = float(stc.f_stc1(plan.readout_time, tm))
        assert reports[1].f_stc1 == pytest.approx(math.exp(-1.0) * bare, rel=1e-9)

    def test_clones_degrade_with_position(self, broome_l):
        tm, det, plan = broome_l
        qubits = [(tm, det)] * 3
        sch = make_schedule([(plan.readout_time, tm.t1_relax)] * 3, (0, 1, 2))
        reports = sequential_fidelity(qubits, sch)
        f_ms = [r.f_m for r in reports]
        assert f_ms[0] > f_ms[1] > f_ms[2]

    def test_count_mismatch_rejected(self, broome_l):
        tm, det, plan = broome_l
        sch = make_schedule([(plan.readout_time, tm.t1_relax)] * 2, (0, 1))
        with pytest.raises(DomainError):
            sequential_fidelity([(tm, det)], sch)


class TestScheduleFromModels:
    def test_uses_per_qubit_analytic_times(self, broome_l, watson_dm):
        tm_b, det_b, _ = broome_l
        tm_w, det_w, _ = watson_dm
        sch = schedule_from_models([(tm_b, det_b), (tm_w, det_w)])
        want = best_order(
            [(stc.t_opt(tm_b), tm_b.t1_relax), (stc.t_opt(tm_w), tm_w.t1_relax)]
        )
        assert sch.order == want.order
        assert sch.measure_times == pytest.approx(
            (stc.t_opt(tm_b), stc.t_opt(tm_w)), rel=1e-12
        )
