"""Joint readout-fidelity pipeline.

Ties the state-mapping stage to the detection stage: single-point
evaluation, operating-point optimization, detector phase diagrams over
(sample rate, cutoff), and feasibility boundaries for reaching a target
mean fidelity at a given level splitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from dataclasses import replace as _replace
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from . import electrical, stc
from .models import (
    DetectorModel,
    DomainError,
    FidelityReport,
    InfeasibleTargetError,
    QuadratureError,
    ReadoutPlan,
    TunnelModel,
)

__all__ = [
    "SweepGrid",
    "DesignCurve",
    "evaluate",
    "optimize",
    "phase_diagram",
    "design_curve",
]

# Fractions of the analytic readout time probed by the refinement pass.
_T_BRACKET = (0.8, 0.9, 1.1, 1.2)

# Relative width at which the boundary bisection stops.
_BOUNDARY_RTOL = 5e-3

# Boundary values within this fraction of the high-D' limit count as
# the flat part of the feasibility curve.
_PLATEAU_RTOL = 0.15

_MIN_AXIS_POINTS = 8


def evaluate(
    tm: TunnelModel, det: DetectorModel, plan: ReadoutPlan
) -> FidelityReport:
    """Full fidelity breakdown at one operating point.

    The mapping fidelities depend only on the readout time; the
    detection fidelities and the miss probability come from the filtered
    maximum statistics at the plan's threshold.
    """
    fs0 = float(stc.f_stc0(plan.readout_time, tm))
    fs1 = float(stc.f_stc1(plan.readout_time, tm))
    fe0, fe1, miss = electrical.state_fidelities(plan.threshold, det, tm, plan)
    return FidelityReport.from_components(
        f_stc0=fs0, f_stc1=fs1, f_e0=fe0, f_e1=fe1, p_miss=miss
    )


def _scored_point(
    tm: TunnelModel, det: DetectorModel, t: float, x: float
) -> Tuple[float, float, float, FidelityReport]:
    rep = evaluate(tm, det, ReadoutPlan(t, x))
    return rep.f_m, t, x, rep


def _scored_time(
    tm: TunnelModel, det: DetectorModel, t: float
) -> Tuple[float, float, float, FidelityReport]:
    x = electrical.x_opt(det, tm, ReadoutPlan(t, det.mu0))
    return _scored_point(tm, det, t, x)


def optimize(
    tm: TunnelModel,
    det: DetectorModel,
    candidates: Optional[Iterable[Tuple[float, float]]] = None,
    refine: bool = True,
) -> Tuple[float, float, FidelityReport]:
    """Sequentially optimized (readout time, threshold) and its report.

    The readout time is the analytic visibility optimum of the mapping
    stage; the threshold is then optimized against the detection stage
    at that time.  Detection feeds back on the time only weakly
    (through the sample count), so with ``refine`` a bracket of times
    within +-20% of the seed, each with its own threshold search, is
    also scored and the best improvement found there is stored in the
    report's ``error_fm`` as an upper bound on what joint optimization
    could still add.  The returned point stays the sequential one.

    ``candidates`` may carry extra (t, x) pairs, e.g. the operating
    point actually used in an experiment; if one of them outscores the
    sequential optimum it is returned instead, so the result is never
    worse than any candidate.
    """
    t_seed = stc.t_opt(tm)
    best = _scored_time(tm, det, t_seed)

    gap = 0.0
    if refine:
        for frac in _T_BRACKET:
            f_m_alt = _scored_time(tm, det, t_seed * frac)[0]
            gap = max(gap, f_m_alt - best[0])

    if candidates is not None:
        for t_c, x_c in candidates:
            e = _scored_point(tm, det, float(t_c), float(x_c))
            if e[0] > best[0]:
                best = e

    f_m, t_best, x_best, rep = best
    rep = _replace(rep, t_opt=t_best, x_opt=x_best, error_fm=gap if refine else None)
    return t_best, x_best, rep


@dataclass(frozen=True)
class SweepGrid:
    """Optimized mean fidelity over a (sample rate, cutoff) lattice.

    ``f_m`` is indexed [sample-rate, cutoff]; cells whose evaluation
    failed hold NaN.  ``sub_nyquist`` marks cells where the digitizer
    runs below twice the cutoff, i.e. the side of the reference line
    ``sample rate = 2 * cutoff`` where neighboring samples correlate.
    """

    gamma_s: np.ndarray
    f_c: np.ndarray
    f_m: np.ndarray
    argmax: Tuple[int, int]
    sub_nyquist: np.ndarray
    nyquist_in_range: bool

    def __post_init__(self) -> None:
        if self.f_m.shape != (self.gamma_s.size, self.f_c.size):
            raise DomainError("grid shape does not match its axes")
        vals = self.f_m[np.isfinite(self.f_m)]
        if vals.size and (vals.min() < -1e-9 or vals.max() > 1.0 + 1e-9):
            raise DomainError("grid holds values outside [0, 1]")
        i, j = self.argmax
        if not np.isfinite(self.f_m[i, j]) or (
            vals.size and self.f_m[i, j] < vals.max() - 1e-12
        ):
            raise DomainError("argmax cell does not attain the grid maximum")

    def cell(self, gamma_s: float, f_c: float) -> float:
        """Value of the cell nearest to the requested coordinates."""
        i = int(np.argmin(np.abs(self.gamma_s - gamma_s)))
        j = int(np.argmin(np.abs(self.f_c - f_c)))
        return float(self.f_m[i, j])


def _axis(values: Union[Sequence[float], np.ndarray], resolution: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise DomainError(f"{name} must be a (lo, hi) pair or a 1-d array")
    if arr.size == 2:
        lo, hi = float(arr[0]), float(arr[1])
        if not (0.0 < lo < hi) or not math.isfinite(hi):
            raise DomainError(f"{name} range must satisfy 0 < lo < hi")
        arr = np.geomspace(lo, hi, resolution)
    else:
        arr = np.sort(arr)
        if arr[0] <= 0 or not np.all(np.isfinite(arr)):
            raise DomainError(f"{name} values must be positive and finite")
    if arr.size < _MIN_AXIS_POINTS:
        raise DomainError(
            f"{name} axis has {arr.size} points; need at least {_MIN_AXIS_POINTS}"
        )
    return arr


def phase_diagram(
    tm: TunnelModel,
    det: DetectorModel,
    gamma_s: Union[Sequence[float], np.ndarray],
    f_c: Union[Sequence[float], np.ndarray],
    resolution: int = _MIN_AXIS_POINTS,
) -> SweepGrid:
    """Optimized mean fidelity as the digitizer rate and cutoff vary.

    Each axis is a (lo, hi) pair expanded geometrically to
    ``resolution`` points, or an explicit array with at least 8 points.
    Every cell re-optimizes its own operating point: the analytic
    readout time (which the detector does not shift) plus a fresh
    threshold search against that cell's filter and rate.  A cell whose
    configuration is unusable (window too short, degenerate statistics,
    quadrature breakdown) is stored as NaN rather than aborting the
    sweep; cells are independent, so the result does not depend on
    evaluation order.
    """
    gs = _axis(gamma_s, resolution, "gamma_s")
    fc = _axis(f_c, resolution, "f_c")
    t_star = stc.t_opt(tm)

    grid = np.full((gs.size, fc.size), np.nan)
    for i, g in enumerate(gs):
        for j, f in enumerate(fc):
            cell_det = _replace(det, filter_cutoff=float(f), sample_rate=float(g))
            try:
                x = electrical.x_opt(cell_det, tm, ReadoutPlan(t_star, cell_det.mu0))
                rep = evaluate(tm, cell_det, ReadoutPlan(t_star, x))
            except (DomainError, QuadratureError):
                continue
            grid[i, j] = rep.f_m

    if not np.any(np.isfinite(grid)):
        raise DomainError("every cell of the sweep failed; check the model")
    flat = np.nanargmax(grid)
    argmax = (int(flat // fc.size), int(flat % fc.size))
    sub_nyquist = gs[:, None] < 2.0 * fc[None, :]
    nyquist_in_range = bool(
        gs.min() <= 2.0 * fc.max() and gs.max() >= 2.0 * fc.min()
    )
    return SweepGrid(
        gamma_s=gs,
        f_c=fc,
        f_m=grid,
        argmax=argmax,
        sub_nyquist=sub_nyquist,
        nyquist_in_range=nyquist_in_range,
    )


@dataclass(frozen=True)
class DesignCurve:
    """Feasibility boundary for a target mean fidelity.

    For each separation ``d_prime`` the boundary holds the smallest
    escape-time/cutoff product that still reaches the target; its
    reciprocal ``gamma_norm`` is the fastest admissible escape rate in
    units of the cutoff.  ``plateau`` marks points where the boundary
    has flattened onto its high-separation limit.
    """

    d_prime: np.ndarray
    boundary: np.ndarray
    gamma_norm: np.ndarray
    target_fm: float
    ez_over_kbt: float
    plateau: np.ndarray

    def __post_init__(self) -> None:
        n = self.d_prime.size
        if self.boundary.shape != (n,) or self.gamma_norm.shape != (n,):
            raise DomainError("curve arrays must share one length")
        if np.any(~np.isfinite(self.boundary)) or np.any(self.boundary < 0):
            raise DomainError("boundary must be finite and nonnegative")


def _design_point_fm(k: float, ez: float, det: DetectorModel) -> float:
    # One-parameter family: escape and reload share the time scale k,
    # the dark channel follows from zero detuning, and relaxation is
    # pushed out to 1e4 k so it cannot bind.
    tmk = TunnelModel(
        t_in0=k,
        t_out0=k * math.exp(0.5 * ez),
        t_out1=k,
        t1_relax=1e4 * k,
        ez_over_kbt=ez,
    )
    t_star = stc.t_opt(tmk)
    x = electrical.x_opt(det, tmk, ReadoutPlan(t_star, det.mu0))
    return evaluate(tmk, det, ReadoutPlan(t_star, x)).f_m


def design_curve(
    ez_over_kbt: float,
    target_fm: float = 0.99,
    d_prime: Union[Sequence[float], np.ndarray] = (3.0, 8.0),
    num: int = 11,
) -> DesignCurve:
    """Slowest-tunneling boundary that still reaches ``target_fm``.

    Works in detector-normalized units: unit level separation, unit
    cutoff, digitizer at twice the cutoff, and the noise density set so
    each ``d_prime`` value is the filtered level separation over the
    RMS noise.  At every separation the escape time is bisected to 0.5%
    for the smallest value whose fully optimized mean fidelity clears
    the target.  Longer escape times only help (more samples per blip
    at fixed bandwidth), so the feasible set is one-sided and the
    boundary is well defined.
    """
    if not (isinstance(ez_over_kbt, (int, float)) and ez_over_kbt > 0):
        raise DomainError("ez_over_kbt must be > 0")
    if not (0.0 < target_fm < 1.0):
        raise DomainError("target_fm must lie strictly inside (0, 1)")
    dp = np.asarray(d_prime, dtype=float)
    if dp.size == 2:
        lo, hi = float(dp[0]), float(dp[1])
        if not (0.0 < lo < hi):
            raise DomainError("d_prime range must satisfy 0 < lo < hi")
        dp = np.linspace(lo, hi, num)
    if np.any(dp <= 0):
        raise DomainError("d_prime values must be positive")

    boundary = np.empty(dp.size)
    for idx, d in enumerate(dp):
        sigma_target = 1.0 / float(d)
        det = DetectorModel(
            mu0=0.0,
            mu1=1.0,
            noise_psd=sigma_target / math.sqrt(2.0),
            filter_cutoff=1.0,
            sample_rate=2.0,
        )
        boundary[idx] = _bisect_boundary(float(ez_over_kbt), target_fm, det, d)

    plateau = np.zeros(dp.size, dtype=bool)
    if dp.size >= 3:
        ref = boundary[np.argmax(dp)]
        plateau = np.abs(boundary - ref) <= _PLATEAU_RTOL * ref
    return DesignCurve(
        d_prime=dp,
        boundary=boundary,
        gamma_norm=1.0 / boundary,
        target_fm=target_fm,
        ez_over_kbt=float(ez_over_kbt),
        plateau=plateau,
    )


def _bisect_boundary(
    ez: float, target: float, det: DetectorModel, d: float
) -> float:
    # In normalized units the escape time equals the boundary product
    # directly (cutoff is 1).  Geometric doubling finds a feasible
    # bracket; failure to find one within 2^26 means the asymptotic
    # fidelity of this separation sits below the target.
    k = 32.0
    if _design_point_fm(k, ez, det) >= target:
        hi = k
        lo = k / 2.0
        while lo > 2.0 ** -10 and _design_point_fm(lo, ez, det) >= target:
            hi = lo
            lo /= 2.0
        if _design_point_fm(lo, ez, det) >= target:
            return lo  # target met down to the probe floor
    else:
        lo = k
        hi = k * 2.0
        while hi <= 2.0 ** 26 and _design_point_fm(hi, ez, det) < target:
            lo = hi
            hi *= 2.0
        if hi > 2.0 ** 26:
            raise InfeasibleTargetError(
                f"no escape time reaches mean fidelity {target} at "
                f"separation d'={d:g} and splitting {ez:g} kT"
            )
    while hi / lo > 1.0 + _BOUNDARY_RTOL:
        mid = math.sqrt(lo * hi)
        if _design_point_fm(mid, ez, det) >= target:
            hi = mid
        else:
            lo = mid
    return hi
