"""Synthetic ECG, pupil traces and whole studies with exported ground truth.

Everything is a pure function of its configuration and seed: each session
draws from its own ``SeedSequence`` keyed by (seed, participant, task, light,
stream), so regenerating any piece reproduces it exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hrv import DEVICE_RATE_HZ, EcgSignal
from .ingest import (
    LIGHTS,
    TASKS,
    RawChannel,
    SessionManifest,
    atomic_write_text,
    format_float,
    write_channel,
    write_manifest,
)
from .signal import IrregularSeries, SampledSignal, design_butterworth_lowpass, filter_zero_phase

ECG_BASELINE_MV = 500.0
QRS_AMPLITUDE_MV = 1.0
QRS_WIDTH_S = 0.080
BURST_FREQ_HZ = 15.0
BURST_RATE_HZ = 0.5
BURST_LENGTH_S = 0.4

_STREAM_RR, _STREAM_ECG, _STREAM_PUPIL, _STREAM_PARTICIPANT = 1, 2, 3, 4


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def synth_ecg(
    rr_plan_ms,
    rate_hz: float = 1000.0,
    r_amplitude_mod=None,
    snr_db: float = math.inf,
    seed: int = 0,
    duration_s: float | None = None,
    device: str | None = None,
):
    """Gaussian-QRS ECG with beats at the cumulative RR times.

    ``r_amplitude_mod`` is ``(freq_hz, depth)``: beat ``k`` has amplitude
    ``A * (1 + depth * sin(2 pi f t_k))``. Noise is white with power set by
    ``snr_db`` relative to the QRS component (baseline excluded).

    Returns ``(EcgSignal, beat_times_s)``.
    """
    rr = np.asarray(rr_plan_ms, dtype=float)
    if np.any((rr < 300) | (rr > 2000)):
        raise ValueError("RR plan values must lie in [300, 2000] ms")
    beats = np.cumsum(rr) / 1000.0
    if duration_s is None:
        duration_s = float(beats[-1])
    beats = beats[beats <= duration_s]
    n = int(math.floor(duration_s * rate_hz + 1e-9)) + 1
    t = np.arange(n) / rate_hz
    qrs = np.zeros(n)
    sigma = QRS_WIDTH_S / 6.0
    reach = int(math.ceil(5 * sigma * rate_hz))
    for tb in beats:
        amp = QRS_AMPLITUDE_MV
        if r_amplitude_mod is not None:
            f, depth = r_amplitude_mod
            amp *= 1.0 + depth * math.sin(2 * math.pi * f * tb)
        c = int(round(tb * rate_hz))
        lo, hi = max(0, c - reach), min(n, c + reach + 1)
        qrs[lo:hi] += amp * np.exp(-0.5 * ((t[lo:hi] - tb) / sigma) ** 2)
    if math.isfinite(snr_db):
        noise_sd = math.sqrt(np.mean(qrs * qrs)) / 10 ** (snr_db / 20.0)
        qrs = qrs + _rng(seed, _STREAM_ECG).normal(0.0, noise_sd, n)
    if device is None:
        device = "polar" if rate_hz == DEVICE_RATE_HZ["polar"] else "biopac"
    return EcgSignal(SampledSignal(ECG_BASELINE_MV + qrs, rate_hz), device), beats


def _pupil_samples(duration_s, base_mm, cl_delta_mm, hf_activity, blink_rate_hz, noise_sd_mm, seed, rate_hz):
    rng = _rng(seed, _STREAM_PUPIL)
    n = int(math.floor(duration_s * rate_hz + 1e-9)) + 1
    t = np.arange(n) / rate_hz
    # All draws happen regardless of parameter values so that traces differing
    # only in one parameter share their random components.
    white = rng.normal(size=n)
    n_bursts = rng.poisson(BURST_RATE_HZ * duration_s)
    burst_t = rng.uniform(0, duration_s, n_bursts)
    n_blinks = rng.poisson(blink_rate_hz * duration_s)
    blink_t = np.sort(rng.uniform(0, duration_s, n_blinks))
    blink_d = rng.uniform(0.1, 0.3, n_blinks)

    x = np.full(n, base_mm + cl_delta_mm)
    if noise_sd_mm > 0:
        lp = filter_zero_phase(SampledSignal(white, rate_hz), design_butterworth_lowpass(2, 1.0, rate_hz))
        x += noise_sd_mm * lp.values / np.std(lp.values)
    if hf_activity > 0:
        half = BURST_LENGTH_S / 2
        for tb in burst_t:
            sel = np.abs(t - tb) < half
            env = np.cos(np.pi * (t[sel] - tb) / BURST_LENGTH_S) ** 2
            x[sel] += hf_activity * env * np.sin(2 * np.pi * BURST_FREQ_HZ * (t[sel] - tb))
    missing = np.zeros(n, dtype=bool)
    for tb, d in zip(blink_t, blink_d):
        missing |= (t >= tb) & (t < tb + d)
    x[missing] = np.nan
    edges = np.diff(np.concatenate([[0], missing.astype(int), [0]]))
    truth = {
        "base_mm": base_mm,
        "cl_delta_mm": cl_delta_mm,
        "hf_activity": hf_activity,
        "noise_sd_mm": noise_sd_mm,
        "blink_rate_hz": blink_rate_hz,
        "n_gaps": int(np.count_nonzero(edges == 1)),
        "mean_mm": float(np.nanmean(x)),
    }
    return t, x, truth


def synth_pupil(
    duration_s: float,
    base_mm: float,
    cl_delta_mm: float = 0.0,
    hf_activity: float = 0.0,
    blink_rate_hz: float = 0.0,
    noise_sd_mm: float = 0.0,
    seed: int = 0,
    rate_hz: float = 60.0,
):
    """Pupil trace: level plus 1 Hz band-limited noise plus 15 Hz bursts.

    Blinks remove 100-300 ms stretches at Poisson times. Returns the present
    samples as an ``IrregularSeries`` together with a truth dict.
    """
    if not 1.5 <= base_mm + cl_delta_mm <= 9.0:
        raise ValueError("base + delta must lie within [1.5, 9] mm")
    t, x, truth = _pupil_samples(duration_s, base_mm, cl_delta_mm, hf_activity,
                                 blink_rate_hz, noise_sd_mm, seed, rate_hz)
    keep = ~np.isnan(x)
    return IrregularSeries(t[keep], x[keep]), truth


@dataclass(frozen=True)
class StudyConfig:
    n_participants: int = 10
    session_s: float = 180.0
    seed: int = 0
    ecg_devices: tuple = ("polar",)
    pupil_rate_hz: float = 60.0
    rr_base_ms: dict = field(default_factory=lambda: {"rest": 860.0, "cl1": 790.0, "cl2": 730.0})
    rr_mod_hz: dict = field(default_factory=lambda: {"rest": 0.25, "cl1": 0.25, "cl2": 0.10})
    rr_mod_depth_ms: dict = field(default_factory=lambda: {"rest": 40.0, "cl1": 30.0, "cl2": 20.0})
    rr_jitter_ms: float = 12.0
    participant_rr_sd_ms: float = 20.0
    resp_hz: dict = field(default_factory=lambda: {"rest": 0.25, "cl1": 0.30, "cl2": 0.35})
    resp_depth: float = 0.1
    pupil_base_mm: dict = field(default_factory=lambda: {"light": 3.0, "dark": 5.5})
    pupil_cl_delta_mm: dict = field(default_factory=lambda: {"rest": 0.0, "cl1": 0.3, "cl2": 0.6})
    participant_pupil_sd_mm: float = 0.1
    hf_activity: dict = field(default_factory=lambda: {"rest": 0.0, "cl1": 0.05, "cl2": 0.1})
    blink_rate_hz: float = 0.3
    ecg_snr_db: float = 20.0
    pupil_noise_sd_mm: float = 0.1

    def __post_init__(self):
        if self.n_participants < 1 or self.session_s <= 0:
            raise ValueError("n_participants and session_s must be positive")
        for base in self.pupil_base_mm.values():
            if not 1.5 <= base <= 9.0:
                raise ValueError(f"pupil base {base} mm outside [1.5, 9]")
        for dev in self.ecg_devices:
            if dev not in DEVICE_RATE_HZ:
                raise ValueError(f"unknown ECG device {dev!r}")


def session_id(participant: int, task: str, light: str) -> str:
    return f"p{participant + 1:02d}_{task}_{light}"


def participant_offsets(config: StudyConfig, participant: int):
    """``(rr_offset_ms, pupil_offset_mm)`` for one participant."""
    rng = _rng(config.seed, participant, _STREAM_PARTICIPANT)
    return (float(rng.normal(0, config.participant_rr_sd_ms)),
            float(rng.normal(0, config.participant_pupil_sd_mm)))


def session_rr_plan(config: StudyConfig, participant: int, task: str, light: str) -> np.ndarray:
    """RR intervals (ms) covering the session plus a 2 s margin."""
    ti, li = TASKS.index(task), LIGHTS.index(light)
    rng = _rng(config.seed, participant, ti, li, _STREAM_RR)
    base = config.rr_base_ms[task] + participant_offsets(config, participant)[0]
    f, depth = config.rr_mod_hz[task], config.rr_mod_depth_ms[task]
    plan, t = [], 0.0
    while t < config.session_s + 2.0:
        rr = base + depth * math.sin(2 * math.pi * f * t) + config.rr_jitter_ms * rng.normal()
        rr = min(max(rr, 300.0), 2000.0)
        plan.append(rr)
        t += rr / 1000.0
    return np.asarray(plan)


def plan_statistics(rr_ms) -> dict:
    """Reference RR statistics by direct summation."""
    x = [float(v) for v in rr_ms]
    n = len(x)
    mean = sum(x) / n
    sdnn = math.sqrt(sum((v - mean) ** 2 for v in x) / (n - 1))
    diffs = [x[i + 1] - x[i] for i in range(n - 1)]
    rmssd = math.sqrt(sum(d * d for d in diffs) / len(diffs))
    pnn50 = 100.0 * sum(1 for d in diffs if abs(d) > 50.0) / len(diffs)
    s = sorted(x)
    median = s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])
    return {"rr_mean_ms": mean, "rr_sdnn_ms": sdnn, "rr_rmssd_ms": rmssd,
            "rr_pnn50": pnn50, "rr_median_ms": median}


TRUTH_HEADER = [
    "session_id", "participant_id", "task", "light", "pupil_base_mm", "pupil_cl_delta_mm",
    "hf_activity", "pupil_mean_mm", "n_gaps", "resp_hz",
    "rr_mean_ms", "rr_sdnn_ms", "rr_rmssd_ms", "rr_pnn50", "rr_median_ms",
]


def synth_study(config: StudyConfig, out_dir) -> Path:
    """Write ``manifest.csv``, ``channels/*.csv`` and ``truth.csv`` under ``out_dir``."""
    out = Path(out_dir)
    chan_dir = out / "channels"
    manifests, truth_rows = [], []
    for p in range(config.n_participants):
        rr_off, pupil_off = participant_offsets(config, p)
        pid = f"p{p + 1:02d}"
        for ti, task in enumerate(TASKS):
            for li, light in enumerate(LIGHTS):
                sid = session_id(p, task, light)
                base = config.pupil_base_mm[light] + pupil_off
                delta = config.pupil_cl_delta_mm[task]
                t, x, ptruth = _pupil_samples(
                    config.session_s, base, delta, config.hf_activity[task], config.blink_rate_hz,
                    config.pupil_noise_sd_mm, _seed_of(config, p, ti, li), config.pupil_rate_hz,
                )
                ppath = chan_dir / f"{sid}_tobii.csv"
                write_channel(RawChannel("pupil_diameter_mm", t, x), ppath)
                manifests.append(SessionManifest(pid, sid, "tobii", task, light, config.pupil_rate_hz, ppath))

                plan = session_rr_plan(config, p, task, light)
                for dev in config.ecg_devices:
                    rate = DEVICE_RATE_HZ[dev]
                    ecg, _ = synth_ecg(
                        plan, rate, (config.resp_hz[task], config.resp_depth), config.ecg_snr_db,
                        seed=_seed_of(config, p, ti, li), duration_s=config.session_s + 1.0, device=dev,
                    )
                    epath = chan_dir / f"{sid}_{dev}.csv"
                    write_channel(RawChannel("ecg_mv", ecg.signal.times, ecg.signal.values), epath)
                    manifests.append(SessionManifest(pid, sid, dev, task, light, rate, epath))

                stats = plan_statistics(plan)
                truth_rows.append([
                    sid, pid, task, light, base, delta, config.hf_activity[task], ptruth["mean_mm"],
                    ptruth["n_gaps"], config.resp_hz[task], stats["rr_mean_ms"], stats["rr_sdnn_ms"],
                    stats["rr_rmssd_ms"], stats["rr_pnn50"], stats["rr_median_ms"],
                ])
    write_manifest(manifests, out / "manifest.csv", relative_to=out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRUTH_HEADER)
    for row in truth_rows:
        w.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    atomic_write_text(out / "truth.csv", buf.getvalue())
    return out


def _seed_of(config: StudyConfig, p: int, ti: int, li: int) -> int:
    # Per-session integer seed derived from the master seed.
    return int(np.random.SeedSequence([config.seed, p, ti, li]).generate_state(1, np.uint64)[0])
