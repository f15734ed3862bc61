"""Pupil-diameter preprocessing and per-window pupillometry features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, ValidationError
from .signal import (
    DEFAULT_MAX_GAP_S,
    SampledSignal,
    clip_range,
    design_butterworth_lowpass,
    filter_zero_phase,
    resample_uniform,
)

PUPIL_MIN_MM = 1.5
PUPIL_MAX_MM = 9.0
PUPIL_RATE_HZ = 100.0

# Symlet-16 decomposition low-pass taps (32 coefficients), as tabulated in
# PyWavelets 1.x ``pywt.Wavelet("sym16").dec_lo``.
SYM16_DEC_LO = np.array([
    6.230006701220761e-06, -3.113556407621969e-06, -0.00010943147929529757,
    2.8078582128442894e-05, 0.0008523547108047095, -0.0001084456223089688,
    -0.0038809122526038786, 0.0007182119788317892, 0.012666731659857348,
    -0.0031265171722710075, -0.031051202843553064, 0.004869274404904607,
    0.032333091610663785, -0.06698304907021778, -0.034574228416972504,
    0.39712293362064416, 0.7565249878756971, 0.47534280601152273,
    -0.054040601387606135, -0.15959219218520598, 0.03072113906330156,
    0.07803785290341991, -0.003510275068374009, -0.024952758046290123,
    0.001359844742484172, 0.0069377611308027096, -0.00022211647621176323,
    -0.0013387206066921965, 3.656592483348223e-05, 0.00016545679579108483,
    -5.396483179315242e-06, -1.0797982104319795e-05,
])


def quadrature_mirror(lo: np.ndarray) -> np.ndarray:
    """High-pass analysis filter paired with an orthogonal low-pass."""
    k = np.arange(lo.size)
    return (-1.0) ** (k + 1) * lo[::-1]


SYM16_DEC_HI = quadrature_mirror(SYM16_DEC_LO)


@dataclass(frozen=True)
class PupilTrace:
    signal: SampledSignal

    @property
    def gap_report(self) -> tuple:
        return self.signal.gaps


@dataclass(frozen=True)
class PupilFeatures:
    pupil_mean: float
    pupil_std: float
    ipa: float
    pd_auc: float
    pd_roc: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def preprocess_pupil(
    raw,
    clip_mm=(PUPIL_MIN_MM, PUPIL_MAX_MM),
    rate_hz: float = PUPIL_RATE_HZ,
    filter_order: int = 5,
    cutoff_hz: float = 4.0,
    filter_enabled: bool = True,
    max_gap_s: float = DEFAULT_MAX_GAP_S,
) -> PupilTrace:
    """Clip to the physiological range, resample to 100 Hz, then low-pass."""
    if raw.kind != "pupil_diameter_mm":
        raise ValidationError(f"expected a pupil channel, got {raw.kind}")
    series = raw.to_series()
    if len(series) == 0:
        raise DegenerateSignalError("pupil channel has no present samples")
    clipped = clip_range(series, *clip_mm)
    if len(clipped) < 2:
        raise DegenerateSignalError("fewer than 2 in-range pupil samples")
    sig = resample_uniform(clipped, rate_hz, max_gap_s)
    if filter_enabled:
        sig = filter_zero_phase(sig, design_butterworth_lowpass(filter_order, cutoff_hz, rate_hz))
    return PupilTrace(sig)


def extract_pupil_basic(window: SampledSignal, auc_baseline: bool = False):
    """Return ``(pupil_mean, pupil_std, pd_auc, pd_roc)`` for one window.

    ``pd_auc`` is the trapezoidal integral of diameter over time (mm*s);
    with ``auc_baseline`` the window minimum is subtracted first.
    ``pd_roc`` is the least-squares slope of diameter against time (mm/s).
    """
    x = window.values
    if x.size < 2:
        raise DegenerateSignalError("pupil window needs at least 2 samples")
    dt = 1.0 / window.rate_hz
    mean = float(np.mean(x))
    std = float(np.std(x, ddof=1))
    y = x - x.min() if auc_baseline else x
    auc = float(dt * (y.sum() - 0.5 * (y[0] + y[-1])))
    # Slope on sample index; origin-free so time shifts cannot perturb it.
    k = np.arange(x.size) - (x.size - 1) / 2.0
    roc = float(np.dot(k, x - mean) / np.dot(k, k) / dt)
    return mean, std, auc, roc


def dwt_details(x: np.ndarray, level: int, lo: np.ndarray = SYM16_DEC_LO) -> np.ndarray:
    """Detail coefficients at ``level`` from an undecimated-edge DWT.

    Only coefficients whose support lies fully inside the signal are kept,
    so no boundary extension artefacts enter the result.
    """
    hi = quadrature_mirror(lo)
    approx = np.asarray(x, dtype=float)
    for j in range(level):
        if approx.size < lo.size:
            raise DegenerateSignalError("signal too short for wavelet decomposition")
        detail = np.convolve(approx, hi, mode="valid")[1::2]
        approx = np.convolve(approx, lo, mode="valid")[1::2]
    return detail


def modulus_maxima(c: np.ndarray) -> np.ndarray:
    """Indices whose magnitude strictly exceeds both neighbours."""
    a = np.abs(c)
    inner = (a[1:-1] > a[:-2]) & (a[1:-1] > a[2:])
    return np.flatnonzero(inner) + 1


def universal_threshold(c: np.ndarray) -> float:
    mad = np.median(np.abs(c - np.median(c)))
    return float(mad / 0.6745 * math.sqrt(2.0 * math.log(c.size)))


def compute_ipa(
    window: SampledSignal,
    level: int = 2,
    lo: np.ndarray = SYM16_DEC_LO,
    rel_floor: float = 1e-10,
) -> float:
    """Index of Pupillary Activity in events per second.

    Counts modulus maxima of the level-``level`` detail coefficients that
    survive a hard universal threshold. ``rel_floor`` (relative to the
    window's peak-to-peak range) keeps round-off ripple on smooth windows
    from registering as events.
    """
    x = window.values
    if x.size < 4 * lo.size:
        raise DegenerateSignalError(
            f"IPA window of {x.size} samples shorter than {4 * lo.size}"
        )
    x = x - x.mean()
    c = dwt_details(x, level, lo)
    peaks = modulus_maxima(c)
    lam = max(universal_threshold(c), rel_floor * float(np.ptp(x)))
    events = int(np.count_nonzero(np.abs(c[peaks]) > lam))
    return events / ((x.size - 1) / window.rate_hz)


def pupil_features(window: SampledSignal, auc_baseline: bool = False) -> PupilFeatures:
    mean, std, auc, roc = extract_pupil_basic(window, auc_baseline)
    return PupilFeatures(mean, std, compute_ipa(window), auc, roc)
