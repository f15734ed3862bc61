"""Generic 1-D signal operations.

Range clipping, linear resampling onto a uniform grid, Butterworth design as
a cascade of biquads, forward-backward filtering and sliding windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import sosfilt, sosfilt_zi

from .errors import DegenerateSignalError, DesignError, ValidationError

DEFAULT_MAX_GAP_S = 1.0


@dataclass(frozen=True)
class IrregularSeries:
    """Timestamped samples with strictly ascending times."""

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValidationError("timestamps and values must be 1-D and equally long")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValidationError("timestamps must be strictly ascending")
        if not np.all(np.isfinite(v)):
            raise ValidationError("irregular series values must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class SampledSignal:
    """Uniformly sampled signal.

    ``gaps`` lists ``(start_s, end_s)`` intervals that were bridged by
    interpolation across more than the allowed gap.
    """

    values: np.ndarray
    rate_hz: float
    start_s: float = 0.0
    gaps: tuple = field(default=())

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValidationError("rate_hz must be positive")
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValidationError("sampled signal values must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def duration_s(self) -> float:
        """Span from the first to the last sample."""
        return (self.values.size - 1) / self.rate_hz

    @property
    def times(self) -> np.ndarray:
        return self.start_s + np.arange(self.values.size) / self.rate_hz


@dataclass(frozen=True)
class FilterCoefficients:
    """Cascade of second-order sections, each ``(b0, b1, b2, a1, a2)``."""

    sections: np.ndarray
    order: int
    dc_gain: float

    def sos(self) -> np.ndarray:
        """Sections in the ``[b0, b1, b2, 1, a1, a2]`` layout used by scipy."""
        s = np.asarray(self.sections, dtype=float)
        return np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]])

    def poles(self) -> np.ndarray:
        out = []
        for _, _, _, a1, a2 in self.sections:
            out.extend(np.roots([1.0, a1, a2]) if a2 != 0 else [-a1])
        return np.asarray(out, dtype=complex)

    def response(self, freqs_hz, rate_hz: float) -> np.ndarray:
        """Complex frequency response evaluated on the unit circle."""
        z = np.exp(2j * np.pi * np.asarray(freqs_hz, dtype=float) / rate_hz)
        zi = 1.0 / z
        h = np.ones_like(z)
        for b0, b1, b2, a1, a2 in self.sections:
            h = h * (b0 + b1 * zi + b2 * zi**2) / (1.0 + a1 * zi + a2 * zi**2)
        return h


@dataclass(frozen=True)
class WindowSpec:
    length_s: float
    step_s: float

    def __post_init__(self):
        if not (self.length_s > 0 and 0 < self.step_s <= self.length_s):
            raise ValidationError(
                f"window spec requires 0 < step <= length, got length={self.length_s}, step={self.step_s}"
            )


def clip_range(series: IrregularSeries, lo: float, hi: float) -> IrregularSeries:
    """Drop samples whose value lies outside ``[lo, hi]``."""
    if not lo < hi:
        raise ValidationError(f"clip bounds must satisfy lo < hi, got [{lo}, {hi}]")
    keep = (series.values >= lo) & (series.values <= hi)
    if not keep.any():
        raise DegenerateSignalError(f"no samples left inside [{lo}, {hi}]")
    return IrregularSeries(series.t[keep], series.values[keep])


def resample_uniform(
    series: IrregularSeries, rate_hz: float, max_gap_s: float = DEFAULT_MAX_GAP_S
) -> SampledSignal:
    """Linearly interpolate onto a uniform grid spanning first..last timestamp.

    Gaps in the input longer than ``max_gap_s`` are still bridged, but are
    reported in ``SampledSignal.gaps`` so that callers can reject windows.
    """
    if len(series) < 2:
        raise DegenerateSignalError("resampling needs at least 2 points")
    t0, t1 = series.t[0], series.t[-1]
    n = int(math.floor((t1 - t0) * rate_hz + 1e-9)) + 1
    grid = t0 + np.arange(n) / rate_hz
    values = np.interp(grid, series.t, series.values)
    dt = np.diff(series.t)
    big = np.flatnonzero(dt > max_gap_s)
    gaps = tuple((float(series.t[i]), float(series.t[i + 1])) for i in big)
    return SampledSignal(values, rate_hz, float(t0), gaps)


def _butter_prototype_poles(order: int) -> np.ndarray:
    k = np.arange(order)
    return np.exp(1j * np.pi * (2 * k + order + 1) / (2 * order))


def _check_design(order: int, cutoff_hz: float, rate_hz: float) -> None:
    if order < 1 or int(order) != order:
        raise DesignError(f"filter order must be a positive integer, got {order}")
    if not 0 < cutoff_hz < rate_hz / 2:
        raise DesignError(
            f"cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({rate_hz / 2} Hz)"
        )


def _bilinear_sections(analog_poles, zero_at: float, fs: float, ref_z: float) -> np.ndarray:
    # Conjugate pairs become biquads; a lone real pole becomes a first-order section.
    fs2 = 2.0 * fs
    zpoles = (fs2 + analog_poles) / (fs2 - analog_poles)
    upper = sorted((p for p in zpoles if p.imag > 1e-12), key=lambda p: -abs(p))
    real = [p.real for p in zpoles if abs(p.imag) <= 1e-12]
    sections = []
    for p in upper:
        b = np.array([1.0, -2.0 * zero_at, 1.0])
        a = np.array([1.0, -2.0 * p.real, abs(p) ** 2])
        sections.append((b, a))
    for p in real:
        sections.append((np.array([1.0, -zero_at, 0.0]), np.array([1.0, -p, 0.0])))
    out = []
    for b, a in sections:
        zi = 1.0 / ref_z
        gain = (b[0] + b[1] * zi + b[2] * zi**2) / (a[0] + a[1] * zi + a[2] * zi**2)
        b = b / gain.real
        out.append([b[0], b[1], b[2], a[1], a[2]])
    return np.asarray(out)


def design_butterworth_lowpass(order: int, cutoff_hz: float, rate_hz: float) -> FilterCoefficients:
    """Digital Butterworth low-pass via the prewarped bilinear transform."""
    _check_design(order, cutoff_hz, rate_hz)
    warped = 2.0 * rate_hz * math.tan(math.pi * cutoff_hz / rate_hz)
    poles = warped * _butter_prototype_poles(order)
    sections = _bilinear_sections(poles, zero_at=-1.0, fs=rate_hz, ref_z=1.0)
    dc = float(np.prod(sections[:, :3].sum(axis=1) / (1.0 + sections[:, 3] + sections[:, 4])))
    return FilterCoefficients(sections, int(order), dc)


def design_butterworth_highpass(order: int, cutoff_hz: float, rate_hz: float) -> FilterCoefficients:
    """High-pass counterpart; unit gain at Nyquist, zeros at DC."""
    _check_design(order, cutoff_hz, rate_hz)
    warped = 2.0 * rate_hz * math.tan(math.pi * cutoff_hz / rate_hz)
    poles = warped / _butter_prototype_poles(order)
    sections = _bilinear_sections(poles, zero_at=1.0, fs=rate_hz, ref_z=-1.0)
    nyq = sections[:, 0] - sections[:, 1] + sections[:, 2]
    nyq = nyq / (1.0 - sections[:, 3] + sections[:, 4])
    return FilterCoefficients(sections, int(order), float(np.prod(nyq)))


def filter_zero_phase(signal: SampledSignal, coeffs: FilterCoefficients) -> SampledSignal:
    """Forward-backward filtering with odd-reflection edge padding of 3*order samples."""
    x = signal.values
    pad = 3 * coeffs.order
    if x.size <= pad:
        raise DegenerateSignalError(
            f"signal of {x.size} samples too short for zero-phase filtering (needs > {pad})"
        )
    ext = np.concatenate([2 * x[0] - x[pad:0:-1], x, 2 * x[-1] - x[-2 : -pad - 2 : -1]])
    sos = coeffs.sos()
    zi = sosfilt_zi(sos)
    y, _ = sosfilt(sos, ext, zi=zi * ext[0])
    y = y[::-1]
    y, _ = sosfilt(sos, y, zi=zi * y[0])
    y = y[::-1][pad:-pad]
    return SampledSignal(y, signal.rate_hz, signal.start_s, signal.gaps)


def window_count(duration_s: float, spec: WindowSpec) -> int:
    """Number of full windows that fit in ``duration_s``; 0 when none fit."""
    if duration_s + 1e-9 < spec.length_s:
        return 0
    return int(math.floor((duration_s - spec.length_s) / spec.step_s + 1e-9)) + 1


def sliding_windows(signal: SampledSignal, spec: WindowSpec) -> list[SampledSignal]:
    """Closed windows ``[start, start + length]`` at starts 0, step, 2*step, ...

    Each returned window shares memory with ``signal`` and carries its own
    absolute ``start_s``.
    """
    n_len = int(round(spec.length_s * signal.rate_hz))
    n_step = int(round(spec.step_s * signal.rate_hz))
    if n_step < 1 or signal.values.size < n_len + 1:
        raise DegenerateSignalError(
            f"signal of {signal.duration_s:.3f} s shorter than one {spec.length_s} s window"
        )
    count = (signal.values.size - 1 - n_len) // n_step + 1
    windows = []
    for k in range(count):
        i0 = k * n_step
        windows.append(
            SampledSignal(
                signal.values[i0 : i0 + n_len + 1],
                signal.rate_hz,
                signal.start_s + i0 / signal.rate_hz,
            )
        )
    return windows
