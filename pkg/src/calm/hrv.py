"""ECG preprocessing, R-peak detection and heart-rate-variability features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks, welch

from .errors import DegenerateSignalError, DetectionError, ValidationError
from .signal import (
    DEFAULT_MAX_GAP_S,
    SampledSignal,
    clip_range,
    design_butterworth_highpass,
    design_butterworth_lowpass,
    filter_zero_phase,
    resample_uniform,
)

DEVICE_RATE_HZ = {"biopac": 1000.0, "polar": 120.0}
ECG_CLIP_MV = (300.0, 1000.0)
SESSION_S = 180.0
MIN_RECORDING_S = 60.0
RR_BOUNDS_MS = (300.0, 2000.0)
LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.40)
HF_FLOOR = 1e-12


@dataclass(frozen=True)
class EcgSignal:
    signal: SampledSignal
    device: str

    def __post_init__(self):
        if self.device not in DEVICE_RATE_HZ:
            raise ValidationError(f"unknown ECG device {self.device!r}")


@dataclass(frozen=True)
class RRSeries:
    """Inter-beat intervals.

    ``interval_times_s[i]`` is the time of the beat closing interval ``i``.
    ``beat_times_s`` keeps every detected beat, so when ``rejected > 0`` the
    intervals are no longer plain successive differences of it.
    """

    beat_times_s: np.ndarray
    intervals_ms: np.ndarray
    interval_times_s: np.ndarray
    rejected: int = 0

    def __len__(self) -> int:
        return self.intervals_ms.size


@dataclass(frozen=True)
class HrvFeatures:
    rmssd: float
    sdnn: float
    pnn50: float
    mean_rr: float
    median_rr: float
    resp_rate: float
    hf_power: float
    lf_hf: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DetectorConfig:
    band_hz: tuple = (5.0, 15.0)
    band_order: int = 2
    integration_s: float = 0.150
    refractory_s: float = 0.200
    refine_s: float = 0.050
    learning_s: float = 2.0
    searchback_factor: float = 1.66
    twave_window_s: float = 0.360


def preprocess_ecg(
    raw,
    device: str,
    rate_hz: float | None = None,
    clip_mv=ECG_CLIP_MV,
    session_s: float = SESSION_S,
    max_gap_s: float = DEFAULT_MAX_GAP_S,
) -> EcgSignal:
    """Clip (biopac only), resample to the device rate, truncate to ``session_s``."""
    if raw.kind != "ecg_mv":
        raise ValidationError(f"expected an ECG channel, got {raw.kind}")
    if device not in DEVICE_RATE_HZ:
        raise ValidationError(f"unknown ECG device {device!r}")
    rate = DEVICE_RATE_HZ[device] if rate_hz is None else rate_hz
    series = raw.to_series()
    if len(series) < 2:
        raise DegenerateSignalError("ECG channel has fewer than 2 samples")
    if device == "biopac":
        series = clip_range(series, *clip_mv)
    sig = resample_uniform(series, rate, max_gap_s)
    if sig.values.size / rate < MIN_RECORDING_S:
        raise DegenerateSignalError(
            f"ECG recording of {sig.values.size / rate:.1f} s shorter than {MIN_RECORDING_S} s"
        )
    n = int(round(session_s * rate))
    if sig.values.size > n:
        gaps = tuple(g for g in sig.gaps if g[0] < sig.start_s + session_s)
        sig = SampledSignal(sig.values[:n], rate, sig.start_s, gaps)
    return EcgSignal(sig, device)


def _bandpass(sig: SampledSignal, cfg: DetectorConfig) -> np.ndarray:
    lo, hi = cfg.band_hz
    y = filter_zero_phase(sig, design_butterworth_lowpass(cfg.band_order, hi, sig.rate_hz))
    y = filter_zero_phase(y, design_butterworth_highpass(cfg.band_order, lo, sig.rate_hz))
    return y.values


def _parabolic_offset(y_prev: float, y0: float, y_next: float) -> float:
    denom = y_prev - 2.0 * y0 + y_next
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (y_prev - y_next) / denom, -0.5, 0.5))


def detect_r_peaks(ecg: EcgSignal, config: DetectorConfig | None = None) -> np.ndarray:
    """Beat times (s) from a Pan-Tompkins-style detector.

    Band-pass, five-point derivative, squaring and moving-window integration
    feed an adaptive dual threshold with search-back; accepted peaks are then
    moved to the raw-signal maximum nearby, with parabolic sub-sample
    interpolation.
    """
    cfg = config or DetectorConfig()
    sig = ecg.signal
    fs = sig.rate_hz
    x = sig.values
    if x.size / fs < 10.0:
        raise DegenerateSignalError("R-peak detection needs at least 10 s of signal")
    if np.ptp(x) == 0:
        raise DetectionError("flat-line ECG: no beats detected")

    filtered = _bandpass(sig, cfg)
    kernel = np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * (fs / 8.0)
    deriv = np.convolve(filtered, kernel, mode="same")
    squared = deriv * deriv
    width = max(1, int(round(cfg.integration_s * fs)))
    mwi = np.convolve(squared, np.ones(width) / width, mode="same")

    refractory = max(1, int(round(cfg.refractory_s * fs)))
    cand, _ = find_peaks(mwi, distance=refractory)
    if cand.size < 2:
        raise DetectionError(f"only {cand.size} candidate peaks found")

    learn = int(cfg.learning_s * fs)
    spki = 0.25 * mwi[:learn].max()
    npki = 0.5 * mwi[:learn].mean()
    beats: list[int] = []
    slopes: list[float] = []
    noise: list[int] = []
    rr_recent: list[int] = []
    twave = int(round(cfg.twave_window_s * fs))

    def slope_at(i: int) -> float:
        lo_i, hi_i = max(0, i - width), min(x.size, i + 1)
        return float(np.abs(deriv[lo_i:hi_i]).max())

    def accept(i: int, weight: float):
        nonlocal spki
        if beats:
            rr_recent.append(i - beats[-1])
            del rr_recent[:-8]
        beats.append(i)
        slopes.append(slope_at(i))
        spki = weight * mwi[i] + (1 - weight) * spki

    for i in cand:
        thr1 = npki + 0.25 * (spki - npki)
        thr2 = 0.5 * thr1
        if beats and rr_recent:
            mean_rr = float(np.mean(rr_recent))
            if i - beats[-1] > cfg.searchback_factor * mean_rr:
                # Search back for a missed beat among rejected candidates.
                pool = [j for j in noise if beats[-1] + refractory < j < i - refractory and mwi[j] > thr2]
                if pool:
                    best = max(pool, key=lambda j: mwi[j])
                    accept(best, 0.25)
                    noise.remove(best)
        if mwi[i] > thr1:
            if beats and i - beats[-1] < twave and slope_at(i) < 0.5 * slopes[-1]:
                npki = 0.125 * mwi[i] + 0.875 * npki
                noise.append(i)
                continue
            accept(i, 0.125)
        else:
            npki = 0.125 * mwi[i] + 0.875 * npki
            noise.append(i)

    if len(beats) < 2:
        raise DetectionError(f"only {len(beats)} beats detected")

    half = max(1, int(round(cfg.refine_s * fs)))
    times = []
    for b in sorted(beats):
        lo_i, hi_i = max(0, b - half), min(x.size, b + half + 1)
        k = lo_i + int(np.argmax(x[lo_i:hi_i]))
        off = 0.0
        if 0 < k < x.size - 1:
            off = _parabolic_offset(x[k - 1], x[k], x[k + 1])
        times.append(sig.start_s + (k + off) / fs)
    times = np.asarray(times)
    keep = np.concatenate([[True], np.diff(times) > cfg.refractory_s])
    times = times[keep]
    if times.size < 2:
        raise DetectionError(f"only {times.size} beats detected")
    return times


def rr_from_peaks(beat_times_s, bounds_ms=RR_BOUNDS_MS) -> RRSeries:
    """Successive intervals in ms, dropping those outside ``bounds_ms``."""
    beats = np.asarray(beat_times_s, dtype=float)
    if beats.size < 3:
        raise DegenerateSignalError(f"need at least 3 beats, got {beats.size}")
    rr = 1000.0 * np.diff(beats)
    ok = (rr >= bounds_ms[0]) & (rr <= bounds_ms[1])
    if np.count_nonzero(ok) < 2:
        raise DegenerateSignalError("fewer than 2 RR intervals survive artifact rejection")
    return RRSeries(beats, rr[ok], beats[1:][ok], int(np.count_nonzero(~ok)))


def hrv_time_features(rr: RRSeries):
    """Return ``(rmssd, sdnn, pnn50, mean_rr, median_rr)``, all in ms except pnn50 (%)."""
    x = np.asarray(rr.intervals_ms, dtype=float)
    if x.size < 3:
        raise DegenerateSignalError(f"time-domain HRV needs 3 intervals, got {x.size}")
    d = np.diff(x)
    rmssd = float(np.sqrt(np.mean(d * d)))
    sdnn = float(np.std(x, ddof=1))
    pnn50 = float(100.0 * np.count_nonzero(np.abs(d) > 50.0) / d.size)
    return rmssd, sdnn, pnn50, float(np.mean(x)), float(np.median(x))


@dataclass(frozen=True)
class FrequencyFeatures:
    hf_power: float
    lf_power: float
    lf_hf: float
    saturated: bool


def tachogram(rr: RRSeries, rate_hz: float = 4.0):
    """Interval series interpolated onto a uniform grid; returns ``(t, values)``."""
    t = rr.interval_times_s
    grid = t[0] + np.arange(int(math.floor((t[-1] - t[0]) * rate_hz + 1e-9)) + 1) / rate_hz
    return grid, np.interp(grid, t, rr.intervals_ms)


def _band_power(f, p, band) -> float:
    df = f[1] - f[0]
    sel = (f >= band[0]) & (f < band[1])
    return float(p[sel].sum() * df)


def hrv_freq_features(
    rr: RRSeries,
    rate_hz: float = 4.0,
    segment_s: float = 60.0,
    lf_band=LF_BAND,
    hf_band=HF_BAND,
) -> FrequencyFeatures:
    """Welch (Hann, 50% overlap) band powers of the mean-removed tachogram.

    When HF power is below ``HF_FLOOR`` the ratio is undefined: ``lf_hf`` is
    NaN and ``saturated`` is set.
    """
    t = rr.interval_times_s
    if t.size < 2 or t[-1] - t[0] < 30.0:
        raise DegenerateSignalError("frequency-domain HRV needs at least 30 s of intervals")
    _, x = tachogram(rr, rate_hz)
    x = x - x.mean()
    nper = min(x.size, int(round(segment_s * rate_hz)))
    f, p = welch(x, fs=rate_hz, window="hann", nperseg=nper, noverlap=nper // 2, detrend=False)
    hf = _band_power(f, p, hf_band)
    lf = _band_power(f, p, lf_band)
    if hf < HF_FLOOR:
        return FrequencyFeatures(hf, lf, float("nan"), True)
    return FrequencyFeatures(hf, lf, lf / hf, False)


def peak_amplitudes(ecg: EcgSignal, beat_times_s) -> np.ndarray:
    """Raw ECG amplitude at each beat, from a parabola through the 3 nearest samples."""
    sig = ecg.signal
    x = sig.values
    pos = (np.asarray(beat_times_s) - sig.start_s) * sig.rate_hz
    k = np.clip(np.rint(pos).astype(int), 1, x.size - 2)
    u = pos - k
    a = 0.5 * (x[k - 1] - 2 * x[k] + x[k + 1])
    b = 0.5 * (x[k + 1] - x[k - 1])
    return x[k] + b * u + a * u * u


def respiration_rate(
    ecg: EcgSignal,
    beat_times_s,
    band_hz=(0.1, 0.5),
    rate_hz: float = 4.0,
    peak_ratio: float = 10.0,
) -> float:
    """ECG-derived respiration rate in breaths/min, NaN when no clear peak.

    The R-amplitude series is interpolated to ``rate_hz``, band-limited and
    its periodogram searched for a maximum inside ``band_hz``. A peak counts
    only if it exceeds ``peak_ratio`` times the in-band median power.
    """
    beats = np.asarray(beat_times_s, dtype=float)
    if beats.size < 3 or beats[-1] - beats[0] < 30.0:
        raise DegenerateSignalError("respiration rate needs at least 30 s of beats")
    amp = peak_amplitudes(ecg, beats)
    grid = beats[0] + np.arange(int(math.floor((beats[-1] - beats[0]) * rate_hz)) + 1) / rate_hz
    y = np.interp(grid, beats, amp)
    y = y - y.mean()
    scale = max(1.0, float(np.abs(amp).max()))
    if np.sqrt(np.mean(y * y)) < 1e-9 * scale:
        return float("nan")
    s = SampledSignal(y, rate_hz)
    s = filter_zero_phase(s, design_butterworth_highpass(2, band_hz[0], rate_hz))
    s = filter_zero_phase(s, design_butterworth_lowpass(2, band_hz[1], rate_hz))
    y = s.values * np.hanning(s.values.size)
    nfft = max(4096, 1 << (y.size - 1).bit_length())
    p = np.abs(np.fft.rfft(y, nfft)) ** 2
    f = np.fft.rfftfreq(nfft, 1.0 / rate_hz)
    sel = (f >= band_hz[0]) & (f <= band_hz[1])
    band_p = p[sel]
    i = int(np.argmax(band_p))
    if band_p[i] <= peak_ratio * np.median(band_p):
        return float("nan")
    return float(60.0 * f[sel][i])


def window_hrv_features(ecg: EcgSignal, beat_times_s, start_s: float, length_s: float) -> HrvFeatures:
    """All eight HRV features over beats inside ``[start_s, start_s + length_s]``.

    Features whose preconditions fail on this window are NaN.
    """
    beats = np.asarray(beat_times_s)
    inside = beats[(beats >= start_s) & (beats <= start_s + length_s)]
    nan = float("nan")
    rmssd = sdnn = pnn50 = mean_rr = median_rr = resp = hf = lfhf = nan
    try:
        rr = rr_from_peaks(inside)
    except DegenerateSignalError:
        return HrvFeatures(nan, nan, nan, nan, nan, nan, nan, nan)
    if len(rr) >= 3:
        rmssd, sdnn, pnn50, mean_rr, median_rr = hrv_time_features(rr)
    try:
        freq = hrv_freq_features(rr)
        hf, lfhf = freq.hf_power, freq.lf_hf
    except DegenerateSignalError:
        pass
    try:
        resp = respiration_rate(ecg, inside)
    except DegenerateSignalError:
        pass
    return HrvFeatures(rmssd, sdnn, pnn50, mean_rr, median_rr, resp, hf, lfhf)
