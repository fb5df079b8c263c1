"""Shared domain types for single-shot spin readout fidelity analysis.

Unit conventions, used consistently across the package: times in seconds,
rates and frequencies in hertz, temperatures in kelvin, magnetic field in
tesla.  Detector response (levels, thresholds, noise density) is in
whatever unit the experiment reports, nA, pA or mV all work; the math
never converts detector units, it only forms ratios.  Qubit energy
splitting enters every formula through the dimensionless ratio
E_Z / k_B T, so that is what gets stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Tuple

__all__ = [
    "MU_B_OVER_KB",
    "DomainError",
    "DegenerateModelError",
    "InsufficientDataError",
    "QuadratureError",
    "InfeasibleTargetError",
    "TunnelModel",
    "ZeemanParams",
    "DetectorModel",
    "ReadoutPlan",
    "FidelityReport",
    "compose_fidelity",
    "zeeman_to_ratio",
]

# Bohr magneton / Boltzmann constant in kelvin per tesla, CODATA 2018:
# (9.274 010 0783e-24 J/T) / (1.380 649e-23 J/K).
MU_B_OVER_KB = 0.6717138156


class DomainError(ValueError):
    """An argument lies outside the physically meaningful domain."""


class DegenerateModelError(DomainError):
    """The model admits no interior optimum.

    Raised when the empty-dot time constant does not exceed the excited
    tunnel-out time, so the visibility has no maximum at finite time.
    """


class InsufficientDataError(DomainError):
    """A required quantity is missing and cannot be derived from the rest."""


class QuadratureError(RuntimeError):
    """Adaptive integration failed to reach the requested accuracy."""


class InfeasibleTargetError(RuntimeError):
    """No value in the searched range reaches the requested target."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise DomainError(msg)


def _positive_finite(value: Optional[float], name: str) -> None:
    if value is None:
        return
    _check(
        isinstance(value, (int, float)) and math.isfinite(value) and value > 0,
        f"{name} must be positive and finite, got {value!r}",
    )


@dataclass(frozen=True, kw_only=True)
class TunnelModel:
    """Tunnel times and relaxation time of one qubit coupled to a reservoir.

    Parameters
    ----------
    t_in0:
        Mean time for an electron to load into the lower spin level, seconds.
    t_out0:
        Mean time for the lower level to empty into the reservoir, seconds.
        This is the slow "dark" escape channel during readout.
    t_in1:
        Mean load time of the upper level, seconds.  Rarely measured; leave
        ``None`` and fill it with :func:`spinshot.stc.complete_tunnel_times`.
    t_out1:
        Mean escape time of the upper level, seconds.  Sets the blip rate.
    t1_relax:
        Relaxation time of the upper level, seconds.  ``math.inf`` is
        accepted and means relaxation is switched off.
    ez_over_kbt:
        Level splitting divided by thermal energy, dimensionless.

    Only ``t_out1`` and ``t1_relax`` are mandatory; a partially known model
    is a legal value and operations that need a missing field raise
    :class:`InsufficientDataError` when they first touch it.
    """

    t_in0: Optional[float] = None
    t_out0: Optional[float] = None
    t_in1: Optional[float] = None
    t_out1: float
    t1_relax: float
    ez_over_kbt: Optional[float] = None

    def __post_init__(self) -> None:
        _positive_finite(self.t_in0, "t_in0")
        _positive_finite(self.t_out0, "t_out0")
        _positive_finite(self.t_in1, "t_in1")
        _positive_finite(self.t_out1, "t_out1")
        # t1_relax may be infinite (sentinel for "no relaxation").
        _check(
            isinstance(self.t1_relax, (int, float)) and self.t1_relax > 0,
            f"t1_relax must be positive, got {self.t1_relax!r}",
        )
        if self.ez_over_kbt is not None:
            _check(
                math.isfinite(self.ez_over_kbt) and self.ez_over_kbt >= 0,
                f"ez_over_kbt must be finite and >= 0, got {self.ez_over_kbt!r}",
            )

    def require(self, *names: str) -> None:
        """Raise :class:`InsufficientDataError` if any named field is None."""
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise InsufficientDataError(
                "tunnel model is missing " + ", ".join(missing)
            )

    def updated(self, **changes: float) -> "TunnelModel":
        return replace(self, **changes)


@dataclass(frozen=True)
class ZeemanParams:
    """Field, g-factor and electron temperature; convenience container
    for computing the splitting-to-thermal-energy ratio."""

    b_field: float
    g_factor: float
    temperature: float

    def __post_init__(self) -> None:
        _check(self.b_field >= 0, "b_field must be >= 0")
        _check(self.g_factor >= 0, "g_factor must be >= 0")
        _check(self.temperature > 0, "temperature must be > 0")


@dataclass(frozen=True, kw_only=True)
class DetectorModel:
    """Charge-sensor response and acquisition settings.

    ``mu0`` and ``mu1`` are the filtered sensor levels with the dot
    occupied and empty, ``noise_psd`` the white amplitude spectral density
    in detector-units per sqrt(Hz), ``filter_cutoff`` the low-pass cutoff
    in Hz, ``sample_rate`` the digitizer rate in Hz and ``filter_order``
    the order of the low-pass chain (8 models the usual two cascaded
    4th-order sections).
    """

    mu0: float
    mu1: float
    noise_psd: float
    filter_cutoff: float
    sample_rate: float
    filter_order: int = 8

    def __post_init__(self) -> None:
        _check(math.isfinite(self.mu0), "mu0 must be finite")
        _check(math.isfinite(self.mu1), "mu1 must be finite")
        _check(self.mu1 > self.mu0, "mu1 must exceed mu0")
        _positive_finite(self.noise_psd, "noise_psd")
        _positive_finite(self.filter_cutoff, "filter_cutoff")
        _positive_finite(self.sample_rate, "sample_rate")
        _check(
            isinstance(self.filter_order, int) and self.filter_order >= 1,
            "filter_order must be an integer >= 1",
        )

    @property
    def sample_time(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def delta_mu(self) -> float:
        return self.mu1 - self.mu0


@dataclass(frozen=True)
class ReadoutPlan:
    """A candidate or optimized operating point: how long to watch the
    detector and where to put the peak-detection threshold."""

    readout_time: float
    threshold: float

    def __post_init__(self) -> None:
        _positive_finite(self.readout_time, "readout_time")
        _check(math.isfinite(self.threshold), "threshold must be finite")

    def samples(self, det: DetectorModel) -> float:
        """Raw number of digitizer samples in the readout window."""
        n = self.readout_time * det.sample_rate
        if n < 2.0:
            raise DomainError(
                f"readout window holds only {n:.3g} samples; need at least 2"
            )
        return n


@dataclass(frozen=True, kw_only=True)
class FidelityReport:
    """Full breakdown of a fidelity evaluation at one operating point.

    The state-mapping pair (``f_stc0``, ``f_stc1``) and the detection pair
    (``f_e0``, ``f_e1``) are the independent stages; ``f0``/``f1``/``f_m``
    are their stored composition and are validated on construction.
    """

    f_stc0: float
    f_stc1: float
    v_stc: float
    f_e0: float
    f_e1: float
    v_e: float
    f0: float
    f1: float
    f_m: float
    p_miss: float
    t_opt: Optional[float] = None
    x_opt: Optional[float] = None
    error_fm: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("f_stc0", "f_stc1", "f_e0", "f_e1", "f0", "f1", "f_m", "p_miss"):
            v = getattr(self, name)
            _check(-1e-12 <= v <= 1.0 + 1e-12, f"{name}={v!r} is not a probability")
        c0, c1, cm = compose_fidelity(
            (self.f_stc0, self.f_stc1), (self.f_e0, self.f_e1)
        )
        for got, want, name in ((self.f0, c0, "f0"), (self.f1, c1, "f1"), (self.f_m, cm, "f_m")):
            _check(
                abs(got - want) <= 1e-9,
                f"{name}={got!r} is inconsistent with the stored stage fidelities",
            )

    @classmethod
    def from_components(
        cls,
        *,
        f_stc0: float,
        f_stc1: float,
        f_e0: float,
        f_e1: float,
        p_miss: float,
        v_e: Optional[float] = None,
        t_opt: Optional[float] = None,
        x_opt: Optional[float] = None,
        error_fm: Optional[float] = None,
    ) -> "FidelityReport":
        f0, f1, f_m = compose_fidelity((f_stc0, f_stc1), (f_e0, f_e1))
        return cls(
            f_stc0=f_stc0,
            f_stc1=f_stc1,
            v_stc=f_stc0 + f_stc1 - 1.0,
            f_e0=f_e0,
            f_e1=f_e1,
            v_e=(f_e0 + f_e1 - 1.0) if v_e is None else v_e,
            f0=f0,
            f1=f1,
            f_m=f_m,
            p_miss=p_miss,
            t_opt=t_opt,
            x_opt=x_opt,
            error_fm=error_fm,
        )


def compose_fidelity(
    stc: Tuple[float, float], electrical: Tuple[float, float]
) -> Tuple[float, float, float]:
    """Combine state-mapping and detection fidelities into state and mean
    readout fidelities.

    A readout of state 0 succeeds either when the mapping is faithful and
    the detector agrees, or when both stages fail and the errors cancel;
    same for state 1 with the roles swapped.  Returns ``(f0, f1, f_m)``
    with ``f_m`` the unweighted mean of the two.
    """
    f_stc0, f_stc1 = stc
    f_e0, f_e1 = electrical
    for name, v in (
        ("f_stc0", f_stc0),
        ("f_stc1", f_stc1),
        ("f_e0", f_e0),
        ("f_e1", f_e1),
    ):
        if not (isinstance(v, (int, float)) and 0.0 - 1e-12 <= v <= 1.0 + 1e-12):
            raise DomainError(f"{name}={v!r} is not a probability in [0, 1]")
    f0 = f_stc0 * f_e0 + (1.0 - f_stc0) * (1.0 - f_e1)
    f1 = f_stc1 * f_e1 + (1.0 - f_stc1) * (1.0 - f_e0)
    f_m = 0.5 * (f0 + f1)
    return f0, f1, f_m


def zeeman_to_ratio(z: ZeemanParams) -> float:
    """Level splitting over thermal energy, g * mu_B * B / (k_B * T)."""
    if z.temperature <= 0:
        raise DomainError("temperature must be > 0")
    return z.g_factor * MU_B_OVER_KB * z.b_field / z.temperature
