"""Low-pass Bessel filter model of the acquisition chain.

Everything downstream needs four things from the filter: the amplitude
gain versus frequency, how much a rectangular detector excursion of a
given length is attenuated, the RMS noise passed by the cutoff, and the
sample-correlation correction that applies when the digitizer runs
faster than the filter bandwidth.  The continuous-time math is derived
from the reverse Bessel polynomial of the chosen order; nothing here is
fitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from types import SimpleNamespace
from typing import Tuple, Union

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.signal import bilinear_zpk, zpk2sos

from .models import DomainError

__all__ = [
    "FilterModel",
    "bessel_filter",
    "reverse_bessel_coefficients",
    "gain",
    "blip_attenuation",
    "noise_sigma",
    "correlation_correct",
    "digital_sos",
    "impulse_l2_norm",
]

ArrayLike = Union[float, np.ndarray]

# Pulse lengths (in cutoff periods) outside this window use the analytic
# short- and long-pulse limits instead of the tabulated response.
_U_LO = 1e-3
_U_HI = 30.0


def reverse_bessel_coefficients(order: int) -> Tuple[int, ...]:
    """Ascending-power integer coefficients of the reverse Bessel
    polynomial, built by the two-term recurrence."""
    if not isinstance(order, int) or order < 1:
        raise DomainError("order must be an integer >= 1")
    prev = [1]          # order 0
    cur = [1, 1]        # order 1
    if order == 0:
        return (1,)
    for n in range(2, order + 1):
        nxt = [0] * (n + 1)
        for k, c in enumerate(cur):
            nxt[k] += (2 * n - 1) * c
        for k, c in enumerate(prev):
            nxt[k + 2] += c
        prev, cur = cur, nxt
    return tuple(cur) if order > 1 else (1, 1)


def _abs_theta_sq(coeffs: np.ndarray, w: ArrayLike) -> np.ndarray:
    # |theta(i w)|^2 for real w via even/odd coefficient split.
    w = np.asarray(w, dtype=float)
    even = coeffs[0::2] * (-1.0) ** np.arange(len(coeffs[0::2]))
    odd = coeffs[1::2] * (-1.0) ** np.arange(len(coeffs[1::2]))
    w2 = w * w
    re = np.polynomial.polynomial.polyval(w2, even)
    im = w * np.polynomial.polynomial.polyval(w2, odd)
    return re * re + im * im


@lru_cache(maxsize=8)
def _prototype(order: int) -> SimpleNamespace:
    """One-time continuous-time analysis of the normalized prototype:
    poles, half-power frequency, step response, overshoot, and the pulse
    peak-response table."""
    coeffs = np.array(reverse_bessel_coefficients(order), dtype=float)
    theta0 = coeffs[0]

    # Half-power frequency of the raw polynomial; bracket by doubling.
    def half_power(w: float) -> float:
        return float(_abs_theta_sq(coeffs, w)) - 2.0 * theta0 * theta0

    hi = 1.0
    while half_power(hi) < 0:
        hi *= 2.0
    w3 = brentq(half_power, hi / 2.0 if hi > 1.0 else 0.0, hi, xtol=1e-14, rtol=8.9e-16)

    poles = np.roots(coeffs[::-1])
    dtheta = np.polynomial.polynomial.polyval(poles, np.polynomial.polynomial.polyder(coeffs))
    residues = theta0 / (poles * dtheta)

    def step(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = 1.0 + np.real(np.exp(np.multiply.outer(t, poles)) @ residues)
        return np.where(t <= 0.0, 0.0, out)

    def impulse(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.real(np.exp(np.multiply.outer(t, poles)) @ (residues * poles))
        return np.where(t < 0.0, 0.0, out)

    ts = np.linspace(0.0, 60.0, 120001)
    ys = step(ts)
    overshoot = float(np.max(ys))
    h_peak = float(np.max(impulse(ts)))

    # Peak of the response to a unit rectangular pulse of duration tau,
    # step(t) - step(t - tau), tabulated against u = tau * f_c.
    u_grid = np.geomspace(_U_LO, _U_HI, 481)
    peaks = np.empty_like(u_grid)
    for i, u in enumerate(u_grid):
        tau = 2.0 * math.pi * u / w3
        tg = np.linspace(0.0, tau + 10.0, 4001)
        d = step(tg) - step(tg - tau)
        j = int(np.argmax(d))
        lo = tg[max(j - 1, 0)]
        hi_t = tg[min(j + 1, len(tg) - 1)]
        tf = np.linspace(lo, hi_t, 201)
        df = step(tf) - step(tf - tau)
        peaks[i] = float(np.max(df))
    # Running max irons out sub-1e-4 ripple so the tabulated response is
    # nondecreasing, which the attenuation contract promises.
    peaks = np.minimum(np.maximum.accumulate(peaks), overshoot)
    pulse_peak = PchipInterpolator(np.log(u_grid), peaks, extrapolate=False)

    return SimpleNamespace(
        coeffs=coeffs,
        theta0=theta0,
        w3=float(w3),
        poles=poles,
        residues=residues,
        overshoot=overshoot,
        h_peak=h_peak,
        pulse_peak=pulse_peak,
        step=step,
    )


@dataclass(frozen=True)
class FilterModel:
    """An order-q low-pass Bessel response with its half-power point
    pinned at ``cutoff`` hertz."""

    order: int
    cutoff: float
    overshoot: float
    coefficients: Tuple[int, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.order, int) or self.order < 1:
            raise DomainError("order must be an integer >= 1")
        if not (self.cutoff > 0 and math.isfinite(self.cutoff)):
            raise DomainError("cutoff must be positive and finite")
        proto = _prototype(self.order)
        if tuple(self.coefficients) != reverse_bessel_coefficients(self.order):
            raise DomainError("coefficients do not match the stated order")
        if abs(self.overshoot - proto.overshoot) > 2e-4:
            raise DomainError("overshoot inconsistent with the stated order")


def bessel_filter(cutoff: float, order: int = 8) -> FilterModel:
    proto = _prototype(order)
    return FilterModel(
        order=order,
        cutoff=float(cutoff),
        overshoot=proto.overshoot,
        coefficients=reverse_bessel_coefficients(order),
    )


def gain(f: ArrayLike, fm: FilterModel) -> ArrayLike:
    """Amplitude transmission at frequency ``f`` hertz; 1 at DC, half
    power at the cutoff, strictly falling beyond."""
    proto = _prototype(fm.order)
    arr = np.asarray(f, dtype=float)
    if np.any(arr < 0):
        raise DomainError("frequency must be >= 0")
    w = proto.w3 * arr / fm.cutoff
    out = proto.theta0 / np.sqrt(_abs_theta_sq(proto.coeffs, w))
    return float(out) if np.isscalar(f) or arr.ndim == 0 else out


def blip_attenuation(n: ArrayLike, m_c: float, fm: FilterModel) -> ArrayLike:
    """Peak amplitude reaching the digitizer for a rectangular detector
    excursion ``n`` samples long, relative to its true height.

    ``m_c`` is cutoff over sample rate, so ``n * m_c`` is the excursion
    length in cutoff periods.  Evaluated from the prototype's exact pulse
    response: linear in length for very short excursions, saturating at
    the step-response overshoot for long ones.
    """
    if not (m_c > 0 and math.isfinite(m_c)):
        raise DomainError("m_c must be positive and finite")
    proto = _prototype(fm.order)
    arr = np.asarray(n, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("blip length must be positive")
    u = arr * m_c
    slope = 2.0 * math.pi / proto.w3 * proto.h_peak
    with np.errstate(invalid="ignore"):
        mid = proto.pulse_peak(np.log(np.clip(u, _U_LO, _U_HI)))
    out = np.where(u < _U_LO, slope * u, np.where(u > _U_HI, proto.overshoot, mid))
    out = np.clip(out, 0.0, proto.overshoot)
    return float(out) if np.isscalar(n) or arr.ndim == 0 else out


def noise_sigma(fm: FilterModel, a_n: float) -> float:
    """RMS detector noise after the filter for white input density
    ``a_n`` per root hertz: a_n * sqrt(2 * cutoff)."""
    if not (a_n > 0 and math.isfinite(a_n)):
        raise DomainError("a_n must be positive and finite")
    return a_n * math.sqrt(2.0 * fm.cutoff)


def correlation_correct(
    n_r: float, r_s: float, f_s: float
) -> Tuple[float, float]:
    """Shrink the effective sample count and rate ratio when neighboring
    samples are correlated because the filter passes less than the
    Nyquist band.

    ``f_s`` is twice the cutoff over the sample rate.  Below 1 both
    quantities scale by ``2 f_s / (f_s + 1)``; at or above 1 the samples
    are treated as independent and the inputs pass through.
    """
    if not (f_s > 0 and math.isfinite(f_s)):
        raise DomainError("f_s must be positive and finite")
    if f_s >= 1.0:
        return n_r, r_s
    c = 2.0 * f_s / (f_s + 1.0)
    return c * n_r, c * r_s


def digital_sos(fm: FilterModel, fs: float) -> np.ndarray:
    """Discrete-time realization at sample rate ``fs`` for trace
    simulation: the analog prototype scaled to the prewarped cutoff, then
    bilinear-transformed, as cascaded second-order sections."""
    if not (fs > 0 and math.isfinite(fs)):
        raise DomainError("fs must be positive and finite")
    if fs <= 2.0 * fm.cutoff:
        raise DomainError("fs must exceed twice the cutoff")
    proto = _prototype(fm.order)
    warped = 2.0 * fs * math.tan(math.pi * fm.cutoff / fs)
    scale = warped / proto.w3
    poles = proto.poles * scale
    k = float(np.real(np.prod(-poles)))
    z, p, kd = bilinear_zpk([], poles, k, fs)
    return zpk2sos(z, p, kd)


def impulse_l2_norm(sos: np.ndarray, length: int = 1 << 16) -> float:
    """Energy norm of the discrete filter's impulse response; white noise
    of unit per-sample deviation leaves the filter with this RMS."""
    from scipy.signal import sosfilt

    x = np.zeros(int(length))
    x[0] = 1.0
    h = sosfilt(sos, x)
    return float(np.sqrt(np.sum(h * h)))
