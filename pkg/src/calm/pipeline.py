"""End-to-end orchestration: manifest -> window features -> scenario results."""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import (
    FEATURES,
    FeatureMatrix,
    ScenarioSpec,
    WindowFeatures,
    assemble_features,
    impute_train_mean,
    map_labels,
    scenario_select,
    split_dataset,
)
from .errors import DataError, DegenerateSignalError, DetectionError, ValidationError
from .eval import (
    EvaluationReport,
    PredictionRecord,
    build_report,
    records_from_arrays,
    welch_t_test,
)
from .hrv import detect_r_peaks, preprocess_ecg, window_hrv_features
from .ingest import atomic_write_text, load_channel, load_manifest
from .models import MLPConfig, RFConfig, predict, rf_feature_importance, train_mlp, train_random_forest
from .models.forest import RandomForestModel
from .pupil import preprocess_pupil, pupil_features
from .signal import WindowSpec, sliding_windows, window_count

log = logging.getLogger(__name__)


def window_spec(cfg: RunConfig) -> WindowSpec:
    return WindowSpec(cfg["window.length_s"], cfg.step_s)


def _overlaps(gaps, a: float, b: float) -> bool:
    return any(g0 < b and g1 > a for g0, g1 in gaps)


def pupil_session_windows(manifest, cfg: RunConfig) -> list[WindowFeatures]:
    """Per-window pupil features of one tobii session."""
    trace = preprocess_pupil(
        load_channel(manifest),
        (cfg["pupil.clip_min_mm"], cfg["pupil.clip_max_mm"]),
        cfg["pupil.rate_hz"],
        cfg["filter.order"],
        cfg["filter.cutoff_hz"],
        cfg["filter.enabled"],
        cfg["pupil.max_gap_s"],
    )
    sig = trace.signal
    out = []
    for w in sliding_windows(sig, window_spec(cfg)):
        if cfg["pupil.reject_gap_windows"] and _overlaps(sig.gaps, w.start_s, w.start_s + w.duration_s):
            continue
        feats = pupil_features(w, cfg["pupil.auc_baseline"]).as_dict()
        out.append(WindowFeatures(manifest.participant_id, manifest.session_id, manifest.device, manifest.task,
                                  manifest.light, round(w.start_s - sig.start_s, 6), feats))
    return out


def hrv_session_windows(manifest, cfg: RunConfig) -> list[WindowFeatures]:
    """Per-window HRV features of one ECG session (beats detected once per session)."""
    ecg = preprocess_ecg(
        load_channel(manifest),
        manifest.device,
        clip_mv=(cfg["ecg.clip_min_mv"], cfg["ecg.clip_max_mv"]),
        session_s=cfg["ecg.session_s"],
    )
    beats = detect_r_peaks(ecg)
    spec = window_spec(cfg)
    sig = ecg.signal
    out = []
    for k in range(window_count(sig.duration_s, spec)):
        offset = round(k * spec.step_s, 6)
        feats = window_hrv_features(ecg, beats, sig.start_s + offset, spec.length_s).as_dict()
        out.append(WindowFeatures(manifest.participant_id, manifest.session_id, manifest.device, manifest.task,
                                  manifest.light, offset, feats))
    return out


def _session_job(args):
    manifest, cfg = args
    fn = pupil_session_windows if manifest.kind == "pupil_diameter_mm" else hrv_session_windows
    try:
        return manifest.kind, fn(manifest, cfg)
    except (DegenerateSignalError, DetectionError) as exc:
        log.warning("skipping %s/%s: %s", manifest.session_id, manifest.device, exc)
        return manifest.kind, []


def extract_features(manifests, cfg: RunConfig) -> FeatureMatrix:
    """Window features for every session in ``manifests``.

    Sessions are processed independently (in parallel when ``run.jobs > 1``);
    results are merged in manifest order so the output does not depend on
    scheduling.
    """
    manifests = list(manifests)
    if not manifests:
        raise DataError("manifest lists no sessions")
    jobs = [(m, cfg) for m in manifests]
    if cfg["run.jobs"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["run.jobs"]) as pool:
            results = list(pool.map(_session_job, jobs))
    else:
        results = [_session_job(j) for j in jobs]
    pupil = [w for kind, ws in results if kind == "pupil_diameter_mm" for w in ws]
    hrv = [w for kind, ws in results if kind == "ecg_mv" for w in ws]
    if pupil and hrv:
        mode = "multimodal"
    elif pupil:
        mode = "pupil_only"
    else:
        mode = "hrv_only"
    matrix = assemble_features(pupil, hrv, mode)
    log.info("assembled %d windows (%s, %d dropped)", len(matrix), mode, matrix.dropped)
    return matrix


def features_from_manifest(path, cfg: RunConfig) -> FeatureMatrix:
    return extract_features(load_manifest(path), cfg)


def device_rows(matrix: FeatureMatrix, device: str) -> FeatureMatrix:
    """Rows carrying HRV from ``device``; all rows when none do (pupil-only data)."""
    mask = matrix.device == device
    if not mask.any():
        return matrix
    return matrix.take(np.flatnonzero(mask))


def rep_seed(seed: int, rep: int) -> int:
    """Independent seed for repetition ``rep``."""
    return int(np.random.SeedSequence([int(seed), 0xCA1, int(rep)]).generate_state(1, np.uint32)[0])


def rf_config(cfg: RunConfig) -> RFConfig:
    return RFConfig(cfg["rf.n_trees"], cfg["rf.max_depth"], cfg["rf.min_samples_leaf"], cfg["rf.max_features"])


def mlp_config(cfg: RunConfig) -> MLPConfig:
    return MLPConfig(cfg["mlp.hidden"], cfg["mlp.learning_rate"], cfg["mlp.batch_size"],
                     cfg["mlp.max_epochs"], cfg["mlp.patience"])


def fit_classifier(cfg: RunConfig, X_tr, y_tr, X_val, y_val, seed, names, classes):
    if cfg["classifier.type"] == "rf":
        return train_random_forest(X_tr, y_tr, rf_config(cfg), seed, names, classes)
    return train_mlp(X_tr, y_tr, mlp_config(cfg), seed, X_val, y_val, names, classes)


def prepared_matrix(matrix: FeatureMatrix, cfg: RunConfig) -> FeatureMatrix:
    return map_labels(device_rows(matrix, cfg["ecg.hrv_device"]), cfg["labels.scheme"])


def run_cell(matrix: FeatureMatrix, split, spec: ScenarioSpec, cfg: RunConfig, seed: int):
    """Train and test one classifier; returns ``(model, records, test_rows)``."""
    rows = scenario_select(matrix, split, spec)
    X_tr, X_val, X_te = impute_train_mean(matrix.X[rows.train], matrix.X[rows.val], matrix.X[rows.test])
    model = fit_classifier(cfg, X_tr, matrix.labels[rows.train], X_val, matrix.labels[rows.val], seed,
                           matrix.feature_names, matrix.classes)
    y_hat, conf = predict(model, X_te)
    return model, records_from_arrays(matrix.labels[rows.test], y_hat, conf), rows.test


def run_scenarios(matrix: FeatureMatrix, cfg: RunConfig, scenarios=None, sensors=None,
                  repetitions=None) -> list[EvaluationReport]:
    """Every (sensors, scenario) cell over ``repetitions`` independent splits.

    A repetition uses the same split for every cell, so cells are compared on
    identical test windows.
    """
    matrix = prepared_matrix(matrix, cfg)
    scenarios = [ScenarioSpec.parse(s) for s in (scenarios or cfg["scenarios.list"])]
    sensors = list(sensors or cfg["scenarios.sensors"])
    reps = repetitions or cfg["eval.repetitions"]
    seeds = [rep_seed(cfg["run.seed"], r) for r in range(reps)]
    splits = [split_dataset(matrix, cfg["split.ratios"], s, cfg["split.stratify"], cfg["split.by"]) for s in seeds]
    reports = []
    for mode in sensors:
        sub = matrix.select_mode(mode)
        for spec in scenarios:
            rep_records, imps = [], []
            for seed, split in zip(seeds, splits):
                model, recs, _ = run_cell(sub, split, spec, cfg, seed)
                rep_records.append(recs)
                if isinstance(model, RandomForestModel):
                    imps.append(rf_feature_importance(model))
            importances = None
            if imps:
                mean_imp = np.mean(imps, axis=0)
                importances = {n: float(v) for n, v in zip(sub.feature_names, mean_imp)}
            report = build_report(mode, spec.name, sub.classes, rep_records, cfg["eval.ece_bins"],
                                  cfg["classifier.type"], cfg.run_label, importances)
            reports.append(with_records(report, rep_records))
            log.info("%s %s %s: acc %.3f", cfg.run_label, mode, spec.name, reports[-1].accuracy_mean)
    return reports


# -- results file ---------------------------------------------------------------------------

def reports_to_json(reports) -> str:
    doc = []
    for r in reports:
        doc.append({
            "sensors": r.sensors, "scenario": r.scenario, "classes": list(r.classes),
            "classifier": r.classifier, "run_label": r.run_label, "n_bins": r.n_bins,
            "importances": None if r.importances is None else [[k, v] for k, v in r.importances.items()],
            "records": [[[p.y, p.y_hat, p.p_hat] for p in recs] for recs in r.extra.get("records", [])],
        })
    return json.dumps({"format_version": 1, "reports": doc}, indent=1, sort_keys=True) + "\n"


def reports_from_json(text: str) -> list[EvaluationReport]:
    doc = json.loads(text)
    if doc.get("format_version") != 1:
        raise ValidationError("unsupported results format")
    out = []
    for d in doc["reports"]:
        reps = [[PredictionRecord(y, yh, p) for y, yh, p in recs] for recs in d["records"]]
        imps = None if d["importances"] is None else {k: v for k, v in d["importances"]}
        out.append(with_records(build_report(d["sensors"], d["scenario"], d["classes"], reps, d["n_bins"],
                                             d["classifier"], d["run_label"], imps), reps))
    return out


def with_records(report: EvaluationReport, rep_records) -> EvaluationReport:
    report.extra["records"] = rep_records
    return report


def write_results(reports, path) -> None:
    atomic_write_text(path, reports_to_json(reports))


def read_results(path) -> list[EvaluationReport]:
    return reports_from_json(Path(path).read_text(encoding="utf-8"))


# -- statistics -----------------------------------------------------------------------------

STATS_HEADER = ["feature", "group_by", "group_a", "group_b", "n_a", "n_b", "mean_a", "mean_b", "t", "df", "p",
                "degenerate"]


def group_tests(matrix: FeatureMatrix, features, group_by) -> list[list]:
    """Welch t-tests between every pair of groups of every feature.

    ``group_by`` is ``light`` or ``task``; missing values are excluded.
    """
    rows = []
    pos = {n: i for i, n in enumerate(matrix.feature_names)}
    for feat in features:
        if feat not in FEATURES:
            raise ValidationError(f"unknown feature {feat!r}")
        if feat not in pos:
            continue
        col = matrix.X[:, pos[feat]]
        for g in group_by:
            if g not in ("light", "task"):
                raise ValidationError(f"cannot group by {g!r}")
            labels = getattr(matrix, g)
            order = ("light", "dark") if g == "light" else ("rest", "cl1", "cl2")
            present = [v for v in order if np.any(labels == v)]
            for a, b in itertools.combinations(present, 2):
                xa = col[(labels == a) & ~np.isnan(col)]
                xb = col[(labels == b) & ~np.isnan(col)]
                if xa.size < 2 or xb.size < 2:
                    log.warning("too few %s values to compare %s vs %s", feat, a, b)
                    continue
                res = welch_t_test(xa, xb)
                rows.append([feat, g, a, b, int(xa.size), int(xb.size), float(xa.mean()), float(xb.mean()),
                             res.t, res.df, res.p, "yes" if res.degenerate else "no"])
    return rows
