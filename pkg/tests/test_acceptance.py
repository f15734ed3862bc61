"""Acceptance criteria 1-11, each with its runtime bound.

Every test records one ``PASS``/``FAIL criterion N`` line; the lines are
printed immediately and again in the terminal summary.
"""

import contextlib
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from calm.config import resolve_config
from calm.eval import PredictionRecord, accuracy_and_confusion, expected_calibration_error, welch_t_test
from calm.hrv import RRSeries, detect_r_peaks, hrv_freq_features, hrv_time_features, rr_from_peaks, tachogram
from calm.models import MLPConfig, RFConfig, predict, rf_predict, train_mlp, train_random_forest
from calm.models.mlp import init_mlp, loss_and_grads
from calm.models.serialize import dumps_model
from calm.pipeline import features_from_manifest, run_scenarios
from calm.signal import SampledSignal, design_butterworth_lowpass, filter_zero_phase
from calm.synth import synth_ecg, synth_study


@pytest.fixture
def criterion(request):
    @contextlib.contextmanager
    def run(n, limit_s):
        t0 = time.perf_counter()
        status, note = "FAIL", ""
        try:
            yield
            elapsed = time.perf_counter() - t0
            note = f"{elapsed:.2f} s (limit {limit_s} s)"
            assert elapsed < limit_s, f"criterion {n} took {elapsed:.1f} s, limit {limit_s} s"
            status = "PASS"
        finally:
            line = f"{status} criterion {n}" + (f": {note}" if note else "")
            if not hasattr(request.config, "calm_acceptance"):
                request.config.calm_acceptance = []
            request.config.calm_acceptance.append(line)
            print(line, flush=True)
    return run


def _rr(intervals_ms):
    x = np.asarray(intervals_ms, dtype=float)
    beats = np.concatenate([[0.0], np.cumsum(x) / 1000.0])
    return RRSeries(beats, x, beats[1:])


# -- 1 ----------------------------------------------------------------------------------------

def _cascade_response(sos, f, fs):
    # H(z) = prod (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2), evaluated directly.
    z1 = np.exp(-2j * np.pi * f / fs)
    h = 1.0 + 0j
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 * z1 + b2 * z1 ** 2) / (a0 + a1 * z1 + a2 * z1 ** 2)
    return h


def test_criterion_01_filter(criterion):
    with criterion(1, 1.0):
        c = design_butterworth_lowpass(5, 4.0, 100.0)
        sos = c.sos()
        db = lambda f: 20 * math.log10(abs(_cascade_response(sos, f, 100.0)))
        assert db(4.0) == pytest.approx(-3.01, abs=0.05)
        assert db(8.0) <= -28.0
        assert abs(c.response([4.0], 100.0)[0]) == pytest.approx(abs(_cascade_response(sos, 4.0, 100.0)), abs=1e-12)
        t = np.arange(3000) / 100.0
        x = np.sin(2 * np.pi * 1.0 * t)
        y = filter_zero_phase(SampledSignal(x, 100.0), c).values
        mid = slice(500, 2500)
        lags = np.arange(-50, 51)
        xc = [np.dot(x[mid], np.roll(y, -k)[mid]) for k in lags]
        assert lags[int(np.argmax(xc))] == 0


# -- 2 ----------------------------------------------------------------------------------------

def _brute_time(x):
    n = len(x)
    mean = 0.0
    for v in x:
        mean += v
    mean /= n
    ss = 0.0
    for v in x:
        ss += (v - mean) ** 2
    sdnn = math.sqrt(ss / (n - 1))
    sq, big = 0.0, 0
    for i in range(n - 1):
        d = x[i + 1] - x[i]
        sq += d * d
        big += abs(d) > 50.0
    rmssd = math.sqrt(sq / (n - 1))
    s = sorted(x)
    med = s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2
    return rmssd, sdnn, 100.0 * big / (n - 1), mean, med


def test_criterion_02_hrv_oracle(criterion):
    rng = np.random.default_rng(2)
    with criterion(2, 5.0):
        for _ in range(1000):
            n = int(rng.integers(3, 300))
            x = rng.uniform(300.0, 2000.0, n) if rng.random() < 0.5 else 800 + rng.normal(0, 60, n)
            ours = hrv_time_features(_rr(x))
            ref = _brute_time([float(v) for v in x])
            for a, b in zip(ours, ref):
                assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


# -- 3 ----------------------------------------------------------------------------------------

def test_criterion_03_detection_chain(criterion):
    rng = np.random.default_rng(3)
    t, plan = 0.0, []
    while t < 182:
        rr = 820 + 50 * math.sin(2 * math.pi * 0.15 * t) + 20 * rng.normal()
        plan.append(rr)
        t += rr / 1000
    with criterion(3, 10.0):
        ecg, truth = synth_ecg(plan, 1000.0, snr_db=20.0, seed=5, duration_s=180.0)
        found = np.sort(detect_r_peaks(ecg))
        j = hits = 0
        for tb in truth:
            while j < found.size and found[j] < tb - 0.010:
                j += 1
            if j < found.size and abs(found[j] - tb) <= 0.010:
                hits += 1
                j += 1
        assert hits >= 0.99 * truth.size
        rmssd, sdnn, *_ = hrv_time_features(rr_from_peaks(found))
        ref = _brute_time(list(np.diff(truth) * 1000.0))
        assert rmssd == pytest.approx(ref[0], rel=0.05)
        assert sdnn == pytest.approx(ref[1], rel=0.05)


# -- 4 ----------------------------------------------------------------------------------------

def _sine_rr(freq, amp=50.0, dur=180.0):
    t, out = 0.0, []
    while t < dur:
        rr = 800 + amp * math.sin(2 * math.pi * freq * t)
        out.append(rr)
        t += rr / 1000
    return _rr(out)


def _peak_hz(rr):
    # Modulation is in beat time, so the tachogram peak sits at the modulation frequency.
    _, v = tachogram(rr)
    v = v - v.mean()
    f = np.fft.rfftfreq(v.size, 0.25)
    return f[1:][np.argmax(np.abs(np.fft.rfft(v))[1:])], f[1]


def test_criterion_04_band_discrimination(criterion):
    with criterion(4, 5.0):
        for freq, hf in ((0.30, True), (0.10, False)):
            rr = _sine_rr(freq)
            peak, res = _peak_hz(rr)
            assert abs(peak - freq) <= res
            f = hrv_freq_features(rr)
            if hf:
                assert f.lf_hf < 0.5
            else:
                assert f.lf_hf > 2


# -- 5 ----------------------------------------------------------------------------------------

def test_criterion_05_gradient_check(criterion):
    rng = np.random.default_rng(5)
    with criterion(5, 10.0):
        worst = 0.0
        for trial in range(3):
            m = init_mlp(6, 3, (8, 5), seed=trial)
            for i in range(m.n_hidden):
                m.params[f"gamma{i}"] = rng.uniform(0.5, 1.5, m.params[f"gamma{i}"].shape)
                m.params[f"beta{i}"] = rng.normal(0, 0.3, m.params[f"beta{i}"].shape)
            X = rng.normal(size=(10, 6))
            y = rng.integers(0, 3, 10)
            _, grads = loss_and_grads(m, X, y)
            eps = 1e-5
            for name, p in m.params.items():
                assert p.dtype == np.float64
                flat = p.reshape(-1)
                for k in range(flat.size):
                    old = flat[k]
                    flat[k] = old + eps
                    up = loss_and_grads(m, X, y)[0]
                    flat[k] = old - eps
                    down = loss_and_grads(m, X, y)[0]
                    flat[k] = old
                    num = (up - down) / (2 * eps)
                    ana = grads[name].reshape(-1)[k]
                    worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
        assert worst < 1e-4


# -- 6 ----------------------------------------------------------------------------------------

def _three_class(n=600, seed=6):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1, 2], n // 3)
    centers = np.array([[0, 0, 0, 0], [4, 0, 4, 0], [0, 4, 0, 4]], float)
    X = centers[y] + rng.normal(0, 0.7, (n, 4))
    perm = rng.permutation(n)
    return X[perm], np.array(["rest", "cl1", "cl2"], dtype=object)[y[perm]]


def test_criterion_06_classifiers(criterion):
    X, y = _three_class()
    tr, va, te = slice(0, 420), slice(420, 480), slice(480, 600)
    with criterion(6, 30.0):
        rf = train_random_forest(X[tr], y[tr], RFConfig(n_trees=100), seed=11)
        assert np.mean(rf_predict(rf, X[te])[0] == y[te]) >= 0.95
        again = train_random_forest(X[tr], y[tr], RFConfig(n_trees=100), seed=11)
        assert dumps_model(rf) == dumps_model(again)
        mlp = train_mlp(X[tr], y[tr], MLPConfig(), 11, X[va], y[va])
        assert np.mean(predict(mlp, X[te])[0] == y[te]) >= 0.95


# -- 7 ----------------------------------------------------------------------------------------

def _brute_ece(p, correct, m):
    n = len(p)
    count = [0] * m
    conf = [0.0] * m
    hit = [0] * m
    for pi, ci in zip(p, correct):
        b = 0
        while not (b / m < pi <= (b + 1) / m):
            b += 1
        count[b] += 1
        conf[b] += pi
        hit[b] += ci
    return sum(count[b] / n * abs(hit[b] / count[b] - conf[b] / count[b]) for b in range(m) if count[b])


def test_criterion_07_ece(criterion):
    rng = np.random.default_rng(7)
    with criterion(7, 5.0):
        for _ in range(10_000):
            n = int(rng.integers(1, 40))
            m = int(rng.integers(1, 16))
            p = rng.uniform(0.0, 1.0, n)
            p[p == 0.0] = 1.0
            edge = rng.random(n) < 0.15
            p[edge] = rng.integers(1, m + 1, n)[edge] / m
            y = rng.integers(0, 3, n)
            y_hat = np.where(rng.random(n) < 0.6, y, rng.integers(0, 3, n))
            recs = [PredictionRecord(int(a), int(b), float(c)) for a, b, c in zip(y, y_hat, p)]
            ref = _brute_ece([float(v) for v in p], [int(a == b) for a, b in zip(y, y_hat)], m)
            assert abs(expected_calibration_error(recs, m) - ref) <= 1e-12
        for _ in range(100):
            n = int(rng.integers(1, 60))
            recs = [PredictionRecord(int(a), int(b), float(c)) for a, b, c in
                    zip(rng.integers(0, 2, n), rng.integers(0, 2, n), rng.uniform(0.01, 1.0, n))]
            acc, _ = accuracy_and_confusion(recs, [0, 1])
            conf = float(np.mean([r.p_hat for r in recs]))
            assert expected_calibration_error(recs, 1) == abs(acc - conf)


# -- 8 ----------------------------------------------------------------------------------------

def test_criterion_08_welch(criterion):
    rng = np.random.default_rng(8)
    with criterion(8, 5.0):
        r = welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
        assert r.t == pytest.approx(-1.0, abs=1e-12)
        assert r.df == pytest.approx(8.0, abs=1e-12)
        assert abs(r.p - 0.3466) <= 0.001
        for _ in range(100):
            a = rng.normal(rng.normal(0, 1), rng.uniform(0.3, 3), int(rng.integers(2, 40)))
            b = rng.normal(rng.normal(0, 1), rng.uniform(0.3, 3), int(rng.integers(2, 40)))
            assert abs(welch_t_test(a, b).p - stats.ttest_ind(a, b, equal_var=False).pvalue) <= 1e-3


# -- 9 ----------------------------------------------------------------------------------------

def test_criterion_09_lighting_shift(criterion, tmp_path):
    with criterion(9, 180.0):
        acc = {}
        for seed in range(5):
            cfg = resolve_config(None, {"run.seed": seed, "scenarios.sensors": "pupil_only,multimodal"}, env={})
            study = cfg.study_config()
            assert study.pupil_base_mm["dark"] - study.pupil_base_mm["light"] >= 1.5
            out = synth_study(study, tmp_path / f"s{seed}")
            matrix = features_from_manifest(out / "manifest.csv", cfg)
            for r in run_scenarios(matrix, cfg):
                acc.setdefault((r.sensors, r.scenario), []).append(r.accuracy_mean)
        mean = {k: float(np.mean(v)) for k, v in acc.items()}
        for k, v in sorted(mean.items()):
            print(f"  {k[0]:<11} {k[1]:<12} {v:.3f}")
        pupil_drop = mean["pupil_only", "Light-Light"] - mean["pupil_only", "Light-Dark"]
        multi_drop = mean["multimodal", "Light-Light"] - mean["multimodal", "Light-Dark"]
        assert pupil_drop >= 0.20
        for scen in ("Light-Light", "Light-Dark", "All-Light", "All-Dark", "All-All"):
            assert mean["multimodal", scen] >= mean["pupil_only", scen]
        assert multi_drop <= pupil_drop / 2


# -- 10, 11 -----------------------------------------------------------------------------------

def _calm(*args):
    env = dict(os.environ)
    env.pop("CALM_SEED", None)
    proc = subprocess.run([sys.executable, "-m", "calm.cli", *map(str, args)], capture_output=True, text=True,
                          env=env)
    assert proc.returncode == 0, proc.stderr
    return proc


def test_criterion_10_ablation_harness(criterion, tmp_path):
    with criterion(10, 120.0):
        _calm("synth", "--out", tmp_path / "study", "--seed", 10)
        man = tmp_path / "study" / "manifest.csv"
        _calm("scenarios", "--manifest", man, "--out", tmp_path / "w30", "--window-s", 30)
        _calm("scenarios", "--manifest", man, "--out", tmp_path / "nf", "--no-filter")
        labels = []
        for d in ("w30", "nf"):
            lines = (tmp_path / d / "metrics.csv").read_text().splitlines()
            assert len(lines) == 16
            labels.append({line.split(",")[0] for line in lines[1:]})
        assert labels == [{"w30-s20-filter"}, {"w60-s50-nofilter"}]


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_11_determinism(criterion, tmp_path):
    with criterion(11, 300.0):
        for run in ("a", "b"):
            root = tmp_path / run
            _calm("synth", "--out", root / "study", "--seed", 11)
            _calm("features", "--manifest", root / "study" / "manifest.csv", "--out", root / "features",
                  "--seed", 11)
            _calm("scenarios", "--features", root / "features" / "features.csv", "--out", root / "scenarios",
                  "--seed", 11)
            _calm("report", "--results", root / "scenarios" / "results.json", "--out", root / "report",
                  "--seed", 11)
        a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
        assert len(a) > 100
        assert a.keys() == b.keys()
        assert [k for k in a if a[k] != b[k]] == []
