"""State-to-charge conversion stage.

Maps the spin state onto dot occupancy through the four tunnel processes
and relaxation: survival probabilities for both states, their visibility,
the optimal readout duration, and Fermi-statistics bookkeeping that fills
in tunnel times that were never measured directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, Optional, Union

import numpy as np
from scipy.optimize import brentq

from .models import (
    DegenerateModelError,
    DomainError,
    InsufficientDataError,
    TunnelModel,
)

__all__ = [
    "StcRegime",
    "StcCurves",
    "f_stc0",
    "f_stc1",
    "v_stc",
    "t_opt",
    "detuning_ratio",
    "infer_detuning",
    "complete_tunnel_times",
    "classify_stc_regime",
    "stc_curves",
]

ArrayLike = Union[float, np.ndarray]

# Classification thresholds for the advisory regime flags: the escape-time
# contrast below which the dark channel eats visibility, and the minimum
# relaxation headroom over the blip time.
ESCAPE_CONTRAST_FLOOR = 800.0
RELAXATION_HEADROOM = 100.0


class StcRegime(Enum):
    OPTIMAL = "optimal"
    READOUT_TIME_LIMITED = "readout-time-limited"
    T1_LIMITED = "t1-limited"


def _times(m: TunnelModel) -> tuple:
    m.require("t_out0")
    return m.t_out0, m.t_out1, m.t1_relax


def _validate_t(t: ArrayLike) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError("readout time must be finite and >= 0")
    return arr


def _phi(a: np.ndarray) -> np.ndarray:
    # (1 - exp(-a)) / a, continued through a = 0.  The cutover keeps full
    # double precision: the cubic series truncation error at 1e-5 is ~4e-23.
    a = np.asarray(a, dtype=float)
    small = np.abs(a) < 1e-5
    safe = np.where(small, 1.0, a)
    direct = -np.expm1(-safe) / safe
    series = 1.0 - a / 2.0 + a * a / 6.0 - a * a * a / 24.0
    return np.where(small, series, direct)


def f_stc0(t: ArrayLike, m: TunnelModel) -> ArrayLike:
    """Probability that the lower spin state produces no detector blip up
    to time ``t``: a bare exponential in the dark escape time."""
    m.require("t_out0")
    arr = _validate_t(t)
    out = np.exp(-arr / m.t_out0)
    return float(out) if np.isscalar(t) or arr.ndim == 0 else out


def f_stc1(t: ArrayLike, m: TunnelModel) -> ArrayLike:
    """Probability that the upper spin state has produced a blip by time ``t``.

    Competition between escape (time ``t_out1``), relaxation (``t1_relax``)
    and the dark channel (``t_out0``).  Evaluated in a rearranged form,

        1 - exp(-k t) - (t / T1) * phi(a) * exp(-t / t_out0),

    with ``k = 1/t_out1 + 1/t1_relax`` and
    ``a = t * D / (t_out0 * t_out1 * T1)`` where
    ``D = T1 (t_out0 - t_out1) + t_out0 t_out1``.  This is algebraically
    identical to the textbook ratio-of-differences expression but stays
    finite through ``t_out0 == t_out1`` and through ``D -> 0``, and it
    reduces to ``1 - exp(-t/t_out1)`` when relaxation is switched off.
    """
    t0, t1, T1 = _times(m)
    arr = _validate_t(t)
    if math.isinf(T1):
        out = -np.expm1(-arr / t1)
    else:
        k = 1.0 / t1 + 1.0 / T1
        d2 = T1 * (t0 - t1) + t0 * t1
        a = arr * d2 / (t0 * t1 * T1)
        out = -np.expm1(-k * arr) - (arr / T1) * _phi(a) * np.exp(-arr / t0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.isscalar(t) or arr.ndim == 0 else out


def v_stc(t: ArrayLike, m: TunnelModel) -> ArrayLike:
    """Visibility of the state-to-charge map, ``f_stc0 + f_stc1 - 1``."""
    return f_stc0(t, m) + f_stc1(t, m) - 1.0


def t_opt(m: TunnelModel) -> float:
    """Readout duration that maximizes the state-to-charge visibility.

    Closed form from setting the visibility derivative to zero.  Requires
    the dark escape to be slower than the blip escape; otherwise the
    visibility has no interior maximum and the model is degenerate.
    """
    t0, t1, T1 = _times(m)
    if t0 <= t1:
        raise DegenerateModelError(
            f"no interior optimum: t_out0={t0!r} must exceed t_out1={t1!r}"
        )
    if math.isinf(T1):
        return t0 * t1 / (t0 - t1) * math.log(t0 / t1)
    d2 = T1 * (t0 - t1) + t0 * t1
    return (T1 * t0 * t1 / d2) * math.log(t0 * (T1 + t1) / (T1 * t1))


def detuning_ratio(epsilon_sr: float, ez_over_kbt: float) -> float:
    """Forward map: blip-escape time over dark-load time as a function of
    level detuning, both energies in thermal units.

    With the two levels sitting at ``epsilon_sr +/- ez_over_kbt / 2``
    relative to the reservoir chemical potential, occupation statistics
    give ``r = (1 + u z) / (u (u + z))`` for ``u = exp(epsilon_sr)`` and
    ``z = exp(ez_over_kbt / 2)``; evaluated in log space so very large
    splittings do not overflow.
    """
    if ez_over_kbt < 0:
        raise DomainError("ez_over_kbt must be >= 0")
    h = 0.5 * ez_over_kbt
    e = float(epsilon_sr)
    log_r = np.logaddexp(0.0, e + h) - e - np.logaddexp(e, h)
    return float(np.exp(log_r))


def infer_detuning(r_t: float, ez_over_kbt: float) -> float:
    """Invert :func:`detuning_ratio`: recover the level detuning (thermal
    units) from the measured ratio t_out1 / t_in0.

    The ratio is strictly decreasing in the detuning, so the inverse is
    unique.  For moderate splittings the quadratic in ``exp(detuning)`` is
    solved in closed form with the numerically stable root; for very large
    splittings the closed form loses precision and a bracketed root solve
    on the log of the forward map takes over.
    """
    if not (isinstance(r_t, (int, float)) and r_t > 0 and math.isfinite(r_t)):
        raise DomainError(f"r_t must be positive and finite, got {r_t!r}")
    if ez_over_kbt < 0:
        raise DomainError("ez_over_kbt must be >= 0")

    if ez_over_kbt <= 50.0:
        z = math.exp(0.5 * ez_over_kbt)
        # u solves r*u^2 + u*z*(r-1) - 1 = 0; pick the form of the positive
        # root that avoids subtracting nearly equal magnitudes.
        b = z * (r_t - 1.0)
        if abs(b) < 1e150:
            disc = math.sqrt(b * b + 4.0 * r_t)
            u = 2.0 / (b + disc) if b >= 0 else (-b + disc) / (2.0 * r_t)
            return math.log(u)
        # fall through to the log-domain solve for extreme ratios

    h = 0.5 * ez_over_kbt
    if r_t == 1.0:
        # symmetric representative; between the levels the ratio pins to 1
        # with exponentially small corrections, so zero detuning is the
        # canonical preimage
        return 0.0
    span = h + abs(math.log(r_t)) + 60.0
    target = math.log(r_t)

    def g(e: float) -> float:
        return (np.logaddexp(0.0, e + h) - e - np.logaddexp(e, h)) - target

    return float(brentq(g, -span, span, xtol=1e-12, rtol=8.9e-16))


def complete_tunnel_times(
    partial: TunnelModel,
    ez_over_kbt: Optional[float] = None,
    epsilon_sr: float = 0.0,
) -> TunnelModel:
    """Fill unmeasured tunnel times from occupation statistics.

    Needs the measured blip-escape time and the splitting ratio; the level
    detuning defaults to zero (dot levels straddling the reservoir
    chemical potential symmetrically).  Same-level load/escape pairs obey
    detailed balance exactly; the cross-level escape ratio carries the
    occupation-factor correction.  Fields already present are returned
    untouched.
    """
    ez = ez_over_kbt if ez_over_kbt is not None else partial.ez_over_kbt
    if ez is None:
        raise InsufficientDataError("splitting ratio ez_over_kbt is required")
    if ez < 0 or ez > 1000.0:
        raise DomainError(f"ez_over_kbt={ez!r} outside the representable range")
    if partial.t_out1 is None:
        raise InsufficientDataError("measured t_out1 anchors the completion")
    if not math.isfinite(epsilon_sr):
        raise DomainError("epsilon_sr must be finite")

    h = 0.5 * ez
    e = float(epsilon_sr)

    t_out0 = partial.t_out0
    if t_out0 is None:
        log_ratio = h + np.logaddexp(e, h) - np.logaddexp(0.0, e + h)
        if log_ratio + math.log(partial.t_out1) > 700.0:
            raise DomainError("completed t_out0 overflows; splitting too large")
        t_out0 = partial.t_out1 * math.exp(float(log_ratio))

    t_in0 = partial.t_in0
    if t_in0 is None:
        t_in0 = t_out0 * math.exp(e - h)

    t_in1 = partial.t_in1
    if t_in1 is None:
        if e + h + math.log(partial.t_out1) > 700.0:
            raise DomainError("completed t_in1 overflows; splitting too large")
        t_in1 = partial.t_out1 * math.exp(e + h)

    return partial.updated(
        t_in0=t_in0, t_out0=t_out0, t_in1=t_in1, ez_over_kbt=ez
    )


def classify_stc_regime(m: TunnelModel) -> FrozenSet[StcRegime]:
    """Advisory flags naming what limits the state-to-charge visibility.

    Reports every tripped limit; an empty trip set collapses to the
    optimal flag.  Thresholds are the conventional rules of thumb: escape
    contrast below 800 or relaxation shorter than 100 blip times.
    """
    t0, t1, T1 = _times(m)
    flags = set()
    if t0 / t1 < ESCAPE_CONTRAST_FLOOR:
        flags.add(StcRegime.READOUT_TIME_LIMITED)
    if T1 < RELAXATION_HEADROOM * t1:
        flags.add(StcRegime.T1_LIMITED)
    if not flags:
        flags.add(StcRegime.OPTIMAL)
    return frozenset(flags)


@dataclass(frozen=True)
class StcCurves:
    """Sampled state-to-charge curves on a time grid, with the analytic
    optimum and the regime flags alongside."""

    times: np.ndarray
    f_stc0: np.ndarray
    f_stc1: np.ndarray
    v_stc: np.ndarray
    t_opt: float
    regime: FrozenSet[StcRegime]


def stc_curves(
    m: TunnelModel, t_max: Optional[float] = None, num: int = 400
) -> StcCurves:
    """Evaluate both survival curves and the visibility on a linear grid.

    The grid spans zero to ``t_max`` (default: three times the analytic
    optimum, which brackets the visibility peak comfortably).
    """
    if num < 2:
        raise DomainError("num must be >= 2")
    topt = t_opt(m)
    if t_max is None:
        t_max = 3.0 * topt
    if t_max <= 0:
        raise DomainError("t_max must be positive")
    times = np.linspace(0.0, float(t_max), int(num))
    c0 = f_stc0(times, m)
    c1 = f_stc1(times, m)
    return StcCurves(
        times=times,
        f_stc0=c0,
        f_stc1=c1,
        v_stc=c0 + c1 - 1.0,
        t_opt=topt,
        regime=classify_stc_regime(m),
    )
