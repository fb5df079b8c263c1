"""Detection stage under white Gaussian noise.

Given the state-to-charge outcome, what the digitizer records is a
filtered, noisy trace whose maximum is compared against a threshold.
This module carries the probability that a blip falls between samples
entirely, the distribution of the trace maximum with and without a blip,
the electrical visibility that follows, and the threshold that
maximizes it.

Blip geometry convention used throughout: the wait before the excursion
is exponential with the escape time of the upper state, and the
excursion itself lasts an exponential time set by the reload time of the
lower state.  When the filter passes less than the Nyquist band the
whole geometry is laid out in correlation-corrected samples (window
count, mixture fractions and the trial exponent all shrink together)
while the two exponential scales stay in raw samples; this is the
published calibration and it is what the table comparisons pin down.
The in-window pulse transmission uses the filter gain at the excursion's
reciprocal duration on the delay-normalized frequency axis, again
following the published calibration, which is deliberately gentler than
the exact rectangular-pulse peak response exposed by the filter module.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.special import ndtr

from .filters import (
    _abs_theta_sq,
    bessel_filter,
    correlation_correct,
    noise_sigma,
    reverse_bessel_coefficients,
)
from .models import (
    DetectorModel,
    DomainError,
    QuadratureError,
    ReadoutPlan,
    TunnelModel,
)

__all__ = [
    "ElectricalRegime",
    "ElectricalCurves",
    "FlatVisibilityWarning",
    "d_prime",
    "p_miss",
    "c0",
    "c1",
    "v_e",
    "x_opt",
    "electrical_curves",
    "classify_electrical_regime",
]

ArrayLike = Union[float, np.ndarray]

QUAD_REL_TOL = 1e-6
QUAD_ABS_TOL = 1e-9
_MAX_DOUBLINGS = 5

# Regime heuristics: separation below which the detector itself is the
# problem, the miss probability that marks under-sampling, and the rise
# width ratio separating a stretched blip distribution from plain noise
# overlap.
_SEPARATION_FLOOR = 0.9
_MISS_TOLERANCE = 0.05
_TAIL_WIDTH_RATIO = 3.0


class FlatVisibilityWarning(UserWarning):
    """The two states are electrically indistinguishable at every
    threshold on the searched grid."""


class ElectricalRegime(Enum):
    OPTIMAL = "optimal"
    SAMPLE_RATE_LIMITED = "sample-rate-limited"
    NOISE_LIMITED = "noise-limited"
    FILTER_LIMITED = "filter-limited"


def d_prime(
    det: DetectorModel,
    sigma0: Optional[float] = None,
    sigma1: Optional[float] = None,
) -> float:
    """Separation of the two sensor levels in units of the RMS noise,
    with both state deviations averaged in quadrature."""
    base = noise_sigma(bessel_filter(det.filter_cutoff, det.filter_order), det.noise_psd)
    s0 = base if sigma0 is None else float(sigma0)
    s1 = base if sigma1 is None else float(sigma1)
    if s0 <= 0 or s1 <= 0:
        raise DomainError("state deviations must be positive")
    return (det.mu1 - det.mu0) / math.sqrt(0.5 * (s0 * s0 + s1 * s1))


def _psi(y: float) -> float:
    # expm1(y)/y continued through zero; series keeps full precision.
    if abs(y) < 1e-5:
        return 1.0 + y / 2.0 + y * y / 6.0 + y * y * y / 24.0
    return math.expm1(y) / y


def p_miss(t_s: float, t_out1: float, t_in0: float) -> float:
    """Probability that the blip leaves no usable signature because the
    escape and the reload both happen within the sampling granularity.

    ``t_s`` is the sample period; pass the correlation-corrected period
    when the filter runs below the Nyquist band, since correlated
    neighbors make the granularity effectively coarser.
    """
    for name, v in (("t_s", t_s), ("t_out1", t_out1), ("t_in0", t_in0)):
        if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
            raise DomainError(f"{name} must be positive and finite, got {v!r}")
    r1 = t_s / t_out1
    r0 = t_s / t_in0
    kept = _psi(0.5 * (r1 - r0)) / _psi(0.5 * r1)
    return min(max(1.0 - kept, 0.0), 1.0)


def c0(x: ArrayLike, det: DetectorModel, n_r: float) -> ArrayLike:
    """Chance that the maximum of ``n_r`` effectively independent noise
    samples around the low level stays at or below ``x``."""
    if not (n_r >= 1 and math.isfinite(n_r)):
        raise DomainError("n_r must be >= 1 and finite")
    sigma = noise_sigma(bessel_filter(det.filter_cutoff, det.filter_order), det.noise_psd)
    arr = np.asarray(x, dtype=float)
    out = np.power(ndtr((arr - det.mu0) / sigma), n_r)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


@dataclass(frozen=True)
class _BlipKernel:
    """Converged quadrature state for the with-blip maximum CDF: node
    positions in blip-length space, combined weights, and the attenuated
    level at each node.  Lengths and the trial count are in
    correlation-corrected samples."""

    nodes: np.ndarray
    weights: np.ndarray
    mu_eff: np.ndarray
    n_raw: float
    n_eff: float
    mu0: float
    sigma: float
    cdf_pair: Optional[Tuple[Callable, Callable]]

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        frac = (self.nodes / self.n_eff)[:, None]
        if self.cdf_pair is None:
            p0 = ndtr((x[None, :] - self.mu0) / self.sigma)
            p1 = ndtr((x[None, :] - self.mu_eff[:, None]) / self.sigma)
        else:
            f0, f1 = self.cdf_pair
            p0 = f0(x[None, :] * np.ones_like(self.nodes)[:, None])
            p1 = f1(x[None, :], self.mu_eff[:, None])
        mix = frac * p1 + (1.0 - frac) * p0
        s = np.power(np.clip(mix, 0.0, 1.0), self.n_eff)
        return self.weights @ s


def _wait_blip_scales(det: DetectorModel, tm: TunnelModel) -> Tuple[float, float]:
    # Raw-sample scales; the correlation correction does not touch these.
    tm.require("t_in0")
    n_w = tm.t_out1 * det.sample_rate
    n_b = tm.t_in0 * det.sample_rate
    return n_w, n_b


def _kernel_weight(u: np.ndarray, n_geo: float, n_w: float, n_b: float) -> np.ndarray:
    # Density over observed blip length u in [1, n_geo - 1]: either the
    # excursion ends inside the window (full length drawn, start anywhere
    # early enough) or it runs into the end of the window (start pinned,
    # true length censored).  n_geo is the corrected window count; the
    # wait start is normalized to land inside [1, n_geo - 1].
    wait_norm = -math.expm1((2.0 - n_geo) / n_w)
    blip_pdf = np.exp((1.0 - u) / n_b) / n_b
    blip_surv = np.exp((1.0 - u) / n_b)
    start_cdf = -np.expm1((1.0 - (n_geo - u)) / n_w) / wait_norm
    start_pdf = np.exp((1.0 - (n_geo - u)) / n_w) / (n_w * wait_norm)
    return blip_pdf * start_cdf + start_pdf * blip_surv


def _pulse_gain(u: np.ndarray, m_eff: float, order: int) -> np.ndarray:
    # Transmission of an excursion lasting u corrected samples: the
    # filter magnitude at the excursion's reciprocal duration in angular
    # units, on the phase-matched frequency axis whose high-frequency
    # asymptote coincides with a Butterworth filter at the nominal
    # cutoff.  That axis compresses the passband by the asymptote
    # constant (the order-th root of the polynomial's constant term), so
    # short excursions are attenuated much harder than the half-power
    # calibration would suggest.  This is the calibration behind the
    # published table comparisons and it differs from the exact
    # rectangular-pulse peak response in the filter module.
    coeffs = np.asarray(reverse_bessel_coefficients(order), dtype=float)
    butter_scale = coeffs[0] ** (1.0 / order)
    w = butter_scale / (2.0 * math.pi * np.asarray(u, dtype=float) * m_eff)
    return coeffs[0] / np.sqrt(_abs_theta_sq(coeffs, w))


def _gl_panels(edges: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    xs, ws = np.polynomial.legendre.leggauss(order)
    a = edges[:-1][:, None]
    b = edges[1:][:, None]
    nodes = 0.5 * (b - a) * xs[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * ws[None, :] * np.ones_like(nodes)
    return nodes.ravel(), weights.ravel()


def _panel_edges(n_geo: float, n_w: float, n_b: float, u_a: float, splits: int) -> np.ndarray:
    length = n_geo - 2.0
    s0 = min(n_b, n_w, u_a, length) / 16.0
    k = max(int(math.ceil(math.log2(length / s0))), 1)
    geo = s0 * 2.0 ** np.arange(k + 1)
    rel = np.concatenate(([0.0], np.minimum(geo, length)))
    rel = np.unique(rel)
    if splits > 1:
        fine = np.concatenate(
            [np.linspace(rel[i], rel[i + 1], splits + 1) for i in range(len(rel) - 1)]
        )
        rel = np.unique(fine)
    return 1.0 + rel


def _build_kernel(
    det: DetectorModel,
    tm: TunnelModel,
    plan: ReadoutPlan,
    x_probe: np.ndarray,
    cdf_pair: Optional[Tuple[Callable, Callable]] = None,
) -> _BlipKernel:
    n_raw = plan.samples(det)
    if n_raw <= 2.0:
        raise DomainError("readout window must span more than two samples")
    n_w, n_b = _wait_blip_scales(det, tm)
    m_c = det.filter_cutoff / det.sample_rate
    f_s = 2.0 * det.filter_cutoff / det.sample_rate
    n_eff, m_eff = correlation_correct(n_raw, m_c, f_s)
    if n_eff <= 2.0:
        raise DomainError(
            "correlation-corrected window must span more than two samples"
        )
    fm = bessel_filter(det.filter_cutoff, det.filter_order)
    sigma = noise_sigma(fm, det.noise_psd)
    # Scale on which the pulse transmission varies, for panel seeding.
    u_a = 1.0 / (2.0 * math.pi * m_eff)

    def assemble(splits: int) -> _BlipKernel:
        edges = _panel_edges(n_eff, n_w, n_b, u_a, splits)
        nodes, gl_w = _gl_panels(edges, 12)
        kw = _kernel_weight(nodes, n_eff, n_w, n_b)
        mu_eff = det.mu0 + (det.mu1 - det.mu0) * _pulse_gain(
            nodes, m_eff, det.filter_order
        )
        return _BlipKernel(
            nodes=nodes,
            weights=gl_w * kw,
            mu_eff=np.asarray(mu_eff),
            n_raw=n_raw,
            n_eff=n_eff,
            mu0=det.mu0,
            sigma=sigma,
            cdf_pair=cdf_pair,
        )

    splits = 1
    kern = assemble(splits)
    ref = kern.eval(x_probe)
    for _ in range(_MAX_DOUBLINGS):
        splits *= 2
        finer = assemble(splits)
        val = finer.eval(x_probe)
        err = float(np.max(np.abs(val - ref)))
        scale = float(np.max(np.abs(val)))
        if err <= max(QUAD_ABS_TOL, QUAD_REL_TOL * max(scale, 1.0)):
            return finer
        kern, ref = finer, val
    raise QuadratureError(
        f"blip quadrature did not converge: last error {err:.3g}"
    )


def _probe_grid(det: DetectorModel, num: int = 257) -> np.ndarray:
    sigma = noise_sigma(bessel_filter(det.filter_cutoff, det.filter_order), det.noise_psd)
    return np.linspace(det.mu0 - 6.0 * sigma, det.mu1 + 6.0 * sigma, num)


def c1(
    x: ArrayLike,
    det: DetectorModel,
    tm: TunnelModel,
    plan: ReadoutPlan,
) -> ArrayLike:
    """Chance that the trace maximum stays at or below ``x`` when a blip
    of random arrival, length and filtered height is present.

    Marginalizes the single-sample mixture model over the blip geometry
    by adaptive panel quadrature; raises if refinement stalls before the
    requested accuracy.
    """
    kern = _build_kernel(det, tm, plan, _probe_grid(det))
    arr = np.asarray(x, dtype=float)
    out = kern.eval(np.atleast_1d(arr))
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.isscalar(x) or arr.ndim == 0 else out


def _corrected_pmiss(det: DetectorModel, tm: TunnelModel) -> float:
    tm.require("t_in0")
    f_s = 2.0 * det.filter_cutoff / det.sample_rate
    t_s_eff, _ = correlation_correct(det.sample_time, 1.0, f_s)
    return p_miss(t_s_eff, tm.t_out1, tm.t_in0)


def state_fidelities(
    x: float,
    det: DetectorModel,
    tm: TunnelModel,
    plan: ReadoutPlan,
) -> Tuple[float, float, float]:
    """Detection fidelity for each charge outcome at threshold ``x``,
    plus the miss probability: (no-blip correct, with-blip correct,
    miss).  The with-blip figure already folds the missed-blip branch
    back onto the no-blip statistics."""
    kern = _build_kernel(det, tm, plan, _probe_grid(det))
    miss = _corrected_pmiss(det, tm)
    lo = float(c0(np.array([x]), det, kern.n_eff)[0])
    hi = float(np.clip(kern.eval(np.array([float(x)])), 0.0, 1.0)[0])
    fe0 = lo
    fe1 = (1.0 - miss) * (1.0 - hi) + miss * (1.0 - lo)
    return fe0, fe1, miss


def v_e(
    x: ArrayLike,
    det: DetectorModel,
    tm: TunnelModel,
    plan: ReadoutPlan,
) -> ArrayLike:
    """Electrical visibility at threshold ``x``: the miss-weighted gap
    between the no-blip and with-blip maximum CDFs."""
    kern = _build_kernel(det, tm, plan, _probe_grid(det))
    miss = _corrected_pmiss(det, tm)
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    low = c0(arr, det, kern.n_eff)
    high = np.clip(kern.eval(arr), 0.0, 1.0)
    out = (1.0 - miss) * (low - high)
    return float(out[0]) if np.isscalar(x) or np.asarray(x).ndim == 0 else out


def _separation_argmax(
    kern: _BlipKernel, det: DetectorModel, grid: np.ndarray
) -> Tuple[float, float]:
    low = c0(grid, det, kern.n_eff)
    high = np.clip(kern.eval(grid), 0.0, 1.0)
    sep = low - high
    j = int(np.argmax(sep))
    if sep[j] < 1e-3:
        warnings.warn(
            "electrical visibility below 1e-3 everywhere on the grid; "
            "the states are effectively indistinguishable",
            FlatVisibilityWarning,
            stacklevel=3,
        )
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, len(grid) - 1)]

    def neg(xq: float) -> float:
        return -(float(c0(xq, det, kern.n_eff)) - float(kern.eval(np.array([xq]))[0]))

    # golden-section refinement inside the bracketing grid cell
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c_ = b - inv * (b - a)
    d_ = a + inv * (b - a)
    fc, fd = neg(c_), neg(d_)
    for _ in range(60):
        if b - a < 1e-12 * max(1.0, abs(b)):
            break
        if fc < fd:
            b, d_, fd = d_, c_, fc
            c_ = b - inv * (b - a)
            fc = neg(c_)
        else:
            a, c_, fc = c_, d_, fd
            d_ = a + inv * (b - a)
            fd = neg(d_)
    xbest = 0.5 * (a + b)
    return xbest, -neg(xbest)


def x_opt(det: DetectorModel, tm: TunnelModel, plan: ReadoutPlan) -> float:
    """Threshold maximizing the electrical visibility, located on a dense
    level grid and polished by golden-section search."""
    kern = _build_kernel(det, tm, plan, _probe_grid(det))
    grid = _probe_grid(det, num=2001)
    xbest, _ = _separation_argmax(kern, det, grid)
    return xbest


@dataclass(frozen=True)
class ElectricalCurves:
    """Detection-stage curves on a threshold grid with the optimum,
    the miss probability and the advisory regime attached."""

    x_grid: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    f_e0: np.ndarray
    f_e1: np.ndarray
    v_e: np.ndarray
    p_e0: np.ndarray
    p_e1: np.ndarray
    x_opt: float
    p_miss: float
    regime: ElectricalRegime


def electrical_curves(
    det: DetectorModel,
    tm: TunnelModel,
    plan: ReadoutPlan,
    num: int = 2001,
) -> ElectricalCurves:
    """Evaluate both maximum CDFs, the state detection fidelities, their
    densities and the visibility across the threshold range."""
    kern = _build_kernel(det, tm, plan, _probe_grid(det))
    grid = _probe_grid(det, num=num)
    low = c0(grid, det, kern.n_eff)
    high = np.clip(kern.eval(grid), 0.0, 1.0)
    miss = _corrected_pmiss(det, tm)
    vis = (1.0 - miss) * (low - high)
    f_e1 = (1.0 - miss) * (1.0 - high) + miss * (1.0 - low)
    p_e0 = np.clip(np.gradient(low, grid), 0.0, None)
    p_e1 = np.clip((1.0 - miss) * np.gradient(high, grid) + miss * np.gradient(low, grid), 0.0, None)
    xbest, _ = _separation_argmax(kern, det, grid)
    curves = ElectricalCurves(
        x_grid=grid,
        c0=low,
        c1=high,
        f_e0=low,
        f_e1=f_e1,
        v_e=vis,
        p_e0=p_e0,
        p_e1=p_e1,
        x_opt=xbest,
        p_miss=miss,
        regime=ElectricalRegime.OPTIMAL,
    )
    return ElectricalCurves(
        **{**curves.__dict__, "regime": classify_electrical_regime(curves)}
    )


def _rise_width(grid: np.ndarray, cdf: np.ndarray) -> float:
    # x-distance between the 10% and 90% crossings of a nondecreasing curve
    lo = float(np.interp(0.1, cdf, grid))
    hi = float(np.interp(0.9, cdf, grid))
    return max(hi - lo, 0.0)


def classify_electrical_regime(curves: ElectricalCurves) -> ElectricalRegime:
    """Name the binding detection limit from the curve shapes alone.

    Poor separation points at the detector: a with-blip distribution
    smeared far wider than the noise floor means the filter is clipping
    blips, a comparable width means plain noise overlap.  Good separation
    with a large miss probability means the sampling is too slow.
    """
    sep = float(np.max(curves.c0 - curves.c1))
    if sep < _SEPARATION_FLOOR:
        w0 = _rise_width(curves.x_grid, curves.c0)
        w1 = _rise_width(curves.x_grid, curves.c1)
        if w0 > 0 and w1 > _TAIL_WIDTH_RATIO * w0:
            return ElectricalRegime.FILTER_LIMITED
        return ElectricalRegime.NOISE_LIMITED
    if curves.p_miss > _MISS_TOLERANCE:
        return ElectricalRegime.SAMPLE_RATE_LIMITED
    return ElectricalRegime.OPTIMAL
