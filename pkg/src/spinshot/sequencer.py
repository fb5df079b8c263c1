"""Ordering of sequential multi-qubit readout.

While one qubit is read out the others wait and relax, so each later
qubit pays an exponential penalty on its excited-state mapping
fidelity.  This module scores orderings by those penalties and searches
for the best one.  Tunneling of waiting qubits is assumed frozen; only
relaxation acts during the wait.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from . import electrical, stc
from .models import (
    DetectorModel,
    DomainError,
    FidelityReport,
    ReadoutPlan,
    TunnelModel,
)

__all__ = [
    "QubitSchedule",
    "make_schedule",
    "lambdas",
    "best_order",
    "sequential_fidelity",
    "schedule_from_models",
]

_OBJECTIVES = ("mean", "weighted", "min-qubit")

# Factorial search is exact but explodes; beyond this many qubits the
# local-search heuristic takes over.
_EXHAUSTIVE_LIMIT = 10

# Full rankings are only reported while N! stays readable.
_RANKING_LIMIT = 6

_CHUNK = 40320  # permutations scored per vectorized batch


@dataclass(frozen=True)
class QubitSchedule:
    """One measurement ordering with its relaxation penalties.

    ``measure_times`` and ``relax_times`` are indexed by original qubit
    id; ``order`` lists qubit ids in measurement sequence; ``lams`` is
    the penalty per *position* (first entry always 1).  ``score`` is
    the plain mean of the penalties; ``objective_value`` is the figure
    the search maximized, which coincides with ``score`` for the mean
    objective.  ``ranking`` holds every ordering with its objective
    value, best first, when the instance was small enough to enumerate.
    """

    measure_times: Tuple[float, ...]
    relax_times: Tuple[float, ...]
    order: Tuple[int, ...]
    lams: Tuple[float, ...]
    score: float
    objective: str
    objective_value: float
    weights: Optional[Tuple[float, ...]] = None
    ranking: Optional[Tuple[Tuple[Tuple[int, ...], float], ...]] = None

    def __post_init__(self) -> None:
        n = len(self.measure_times)
        if n == 0:
            raise DomainError("schedule needs at least one qubit")
        if sorted(self.order) != list(range(n)):
            raise DomainError("order must be a permutation of qubit ids")
        if len(self.relax_times) != n or len(self.lams) != n:
            raise DomainError("schedule arrays disagree on qubit count")
        expected = _lambda_values(
            np.asarray(self.measure_times), np.asarray(self.relax_times), self.order
        )
        if self.lams[0] != 1.0 or np.max(np.abs(np.asarray(self.lams) - expected)) > 1e-12:
            raise DomainError("stored penalties disagree with the ordering")
        if not (0.0 < self.score <= 1.0):
            raise DomainError("score must lie in (0, 1]")


def _validated(
    qubits: Sequence[Tuple[float, float]]
) -> Tuple[np.ndarray, np.ndarray]:
    t_m = np.asarray([q[0] for q in qubits], dtype=float)
    t1 = np.asarray([q[1] for q in qubits], dtype=float)
    if t_m.size == 0:
        raise DomainError("need at least one qubit")
    if np.any(~np.isfinite(t_m)) or np.any(t_m <= 0):
        raise DomainError("measure times must be positive and finite")
    if np.any(t1 <= 0):  # infinite relax time is fine, it just means no decay
        raise DomainError("relax times must be positive")
    return t_m, t1


def _lambda_values(
    t_m: np.ndarray, t1: np.ndarray, order: Sequence[int]
) -> np.ndarray:
    idx = np.asarray(order, dtype=int)
    waits = np.concatenate(([0.0], np.cumsum(t_m[idx])[:-1]))
    with np.errstate(over="ignore"):
        ratio = np.where(np.isinf(t1[idx]), 0.0, waits / t1[idx])
    return np.exp(-ratio)


def lambdas(schedule: QubitSchedule) -> Tuple[float, ...]:
    """Relaxation penalty per measurement position."""
    return schedule.lams


def _objective_of(
    lams: np.ndarray,
    order: Sequence[int],
    objective: str,
    weights: Optional[np.ndarray],
) -> float:
    if objective == "mean":
        return float(lams.mean())
    if objective == "min-qubit":
        return float(lams.min())
    w = weights[np.asarray(order, dtype=int)]
    return float((w * lams).sum() / w.sum())


def make_schedule(
    qubits: Sequence[Tuple[float, float]],
    order: Sequence[int],
    objective: str = "mean",
    weights: Optional[Sequence[float]] = None,
    ranking: Optional[Tuple[Tuple[Tuple[int, ...], float], ...]] = None,
) -> QubitSchedule:
    """Assemble and validate a schedule for an explicit ordering."""
    t_m, t1 = _validated(qubits)
    w = _check_objective(objective, weights, t_m.size)
    lams = _lambda_values(t_m, t1, order)
    return QubitSchedule(
        measure_times=tuple(t_m),
        relax_times=tuple(t1),
        order=tuple(int(i) for i in order),
        lams=tuple(lams),
        score=float(lams.mean()),
        objective=objective,
        objective_value=_objective_of(lams, order, objective, w),
        weights=None if w is None else tuple(w),
        ranking=ranking,
    )


def _check_objective(
    objective: str, weights: Optional[Sequence[float]], n: int
) -> Optional[np.ndarray]:
    if objective not in _OBJECTIVES:
        raise DomainError(f"objective must be one of {_OBJECTIVES}")
    if objective != "weighted":
        if weights is not None:
            raise DomainError("weights only apply to the weighted objective")
        return None
    if weights is None:
        raise DomainError("weighted objective needs weights")
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(~np.isfinite(w)) or np.any(w < 0) or w.sum() == 0:
        raise DomainError("weights must be nonnegative, finite, not all zero")
    return w


def _score_batch(
    perms: np.ndarray,
    t_m: np.ndarray,
    t1: np.ndarray,
    objective: str,
    weights: Optional[np.ndarray],
) -> np.ndarray:
    tm_p = t_m[perms]
    waits = np.cumsum(tm_p, axis=1) - tm_p
    t1_p = t1[perms]
    with np.errstate(over="ignore"):
        ratio = np.where(np.isinf(t1_p), 0.0, waits / t1_p)
    lam = np.exp(-ratio)
    if objective == "mean":
        return lam.mean(axis=1)
    if objective == "min-qubit":
        return lam.min(axis=1)
    w_p = weights[perms]
    return (w_p * lam).sum(axis=1) / w_p.sum(axis=1)


def best_order(
    qubits: Sequence[Tuple[float, float]],
    objective: str = "mean",
    weights: Optional[Sequence[float]] = None,
) -> QubitSchedule:
    """Ordering that maximizes the chosen penalty objective.

    ``qubits`` is a sequence of (measure time, relax time) pairs.  Up
    to 10 qubits every permutation is scored; the first permutation in
    lexicographic id order wins ties, so the result is deterministic.
    For up to 6 qubits the returned schedule also carries the complete
    ranking.  Larger instances use greedy insertion polished by
    pairwise swaps, which is a heuristic rather than a guarantee.
    """
    t_m, t1 = _validated(qubits)
    n = t_m.size
    w = _check_objective(objective, weights, n)

    if n <= _EXHAUSTIVE_LIMIT:
        best_perm: Optional[Tuple[int, ...]] = None
        best_val = -np.inf
        collected = []
        perm_iter = itertools.permutations(range(n))
        while True:
            block = list(itertools.islice(perm_iter, _CHUNK))
            if not block:
                break
            vals = _score_batch(np.array(block, dtype=int), t_m, t1, objective, w)
            if n <= _RANKING_LIMIT:
                collected.extend(zip(block, vals))
            k = int(np.argmax(vals))
            # strict inequality keeps the lexicographically first tie
            if vals[k] > best_val:
                best_val = float(vals[k])
                best_perm = block[k]
        ranking = None
        if n <= _RANKING_LIMIT:
            ranking = tuple(
                (tuple(p), float(v))
                for p, v in sorted(collected, key=lambda e: (-e[1], e[0]))
            )
        return make_schedule(qubits, best_perm, objective, weights, ranking)

    order = _greedy_order(t_m, t1, objective, w)
    order = _two_swap(order, t_m, t1, objective, w)
    return make_schedule(qubits, order, objective, weights, None)


def _greedy_order(
    t_m: np.ndarray,
    t1: np.ndarray,
    objective: str,
    weights: Optional[np.ndarray],
) -> Tuple[int, ...]:
    order: list = []
    for q in range(t_m.size):
        best_pos, best_val = 0, -np.inf
        for pos in range(len(order) + 1):
            trial = order[:pos] + [q] + order[pos:]
            lam = _lambda_values(t_m, t1, trial)
            val = _objective_of(lam, trial, objective, weights)
            if val > best_val:
                best_pos, best_val = pos, val
        order.insert(best_pos, q)
    return tuple(order)


def _two_swap(
    order: Tuple[int, ...],
    t_m: np.ndarray,
    t1: np.ndarray,
    objective: str,
    weights: Optional[np.ndarray],
    max_passes: int = 50,
) -> Tuple[int, ...]:
    cur = list(order)
    cur_val = _objective_of(
        _lambda_values(t_m, t1, cur), cur, objective, weights
    )
    for _ in range(max_passes):
        improved = False
        for i in range(len(cur) - 1):
            for j in range(i + 1, len(cur)):
                trial = cur.copy()
                trial[i], trial[j] = trial[j], trial[i]
                val = _objective_of(
                    _lambda_values(t_m, t1, trial), trial, objective, weights
                )
                if val > cur_val + 1e-15:
                    cur, cur_val = trial, val
                    improved = True
        if not improved:
            break
    return tuple(cur)


def schedule_from_models(
    qubits: Sequence[Tuple[TunnelModel, DetectorModel]],
    objective: str = "mean",
    weights: Optional[Sequence[float]] = None,
) -> QubitSchedule:
    """Best ordering when each qubit reads out at its own analytic
    optimum; the per-qubit optimal time is unaffected by the waiting
    penalty, which only rescales the excited-state curve."""
    pairs = [(stc.t_opt(tm), tm.t1_relax) for tm, _ in qubits]
    return best_order(pairs, objective, weights)


def sequential_fidelity(
    qubits: Sequence[Tuple[TunnelModel, DetectorModel]],
    schedule: QubitSchedule,
) -> Tuple[FidelityReport, ...]:
    """Per-position fidelity reports under a measurement ordering.

    Entry ``k`` describes qubit ``schedule.order[k]``: it is read out
    for its scheduled measure time at the visibility-optimal threshold,
    with its excited-state mapping fidelity scaled by the accumulated
    relaxation penalty.  The first entry reduces to the single-qubit
    evaluation.
    """
    if len(qubits) != len(schedule.measure_times):
        raise DomainError("schedule and qubit list disagree on count")
    reports = []
    for pos, q in enumerate(schedule.order):
        tm, det = qubits[q]
        t_r = schedule.measure_times[q]
        plan = ReadoutPlan(t_r, det.mu0)
        x = electrical.x_opt(det, tm, plan)
        fs0 = float(stc.f_stc0(t_r, tm))
        fs1 = schedule.lams[pos] * float(stc.f_stc1(t_r, tm))
        fe0, fe1, miss = electrical.state_fidelities(x, det, tm, plan)
        reports.append(
            FidelityReport.from_components(
                f_stc0=fs0, f_stc1=fs1, f_e0=fe0, f_e1=fe1, p_miss=miss,
                t_opt=t_r, x_opt=x,
            )
        )
    return tuple(reports)
