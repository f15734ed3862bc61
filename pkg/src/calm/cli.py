"""Command-line interface: ``calm <command> [options]``.

Exit status is 0 on success, 1 on a data or runtime failure and 2 on a
usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import resolve_config
from .dataset import ScenarioSpec, impute_train_mean, read_features_csv, scenario_select, split_dataset, write_features_csv
from .errors import CalmError, ConfigError
from .eval import _csv_text, build_report, emit_distributions, emit_report, feature_distribution_summary, records_from_arrays
from .ingest import atomic_write_text
from .models import RandomForestModel, load_model, predict, save_model
from .models.serialize import MODEL_SUFFIX
from .pipeline import (
    STATS_HEADER,
    features_from_manifest,
    fit_classifier,
    group_tests,
    prepared_matrix,
    read_results,
    rep_seed,
    run_cell,
    run_scenarios,
    with_records,
    write_results,
)
from .synth import synth_study

log = logging.getLogger("calm")


def _overrides(args) -> dict:
    o = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        o[key.strip()] = val.strip()
    flag_keys = {
        "seed": "run.seed", "jobs": "run.jobs", "window_s": "window.length_s", "step_s": "window.step_s",
        "classifier": "classifier.type", "repetitions": "eval.repetitions", "labels": "labels.scheme",
        "split_by": "split.by", "hrv_device": "ecg.hrv_device", "ece_bins": "eval.ece_bins",
        "participants": "synth.n_participants",
    }
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            o[key] = v
    if getattr(args, "no_filter", False):
        o["filter.enabled"] = False
    return o


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides config and CALM_SEED)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _inputs(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", type=Path, help="session manifest CSV (features are extracted)")
    src.add_argument("--features", type=Path, help="features CSV written by 'calm features'")
    _feature_flags(p)
    p.add_argument("--classifier", choices=("rf", "mlp"))
    p.add_argument("--labels", choices=("three_class", "binary"))
    p.add_argument("--split-by", choices=("window", "participant"))
    p.add_argument("--repetitions", type=int)
    p.add_argument("--ece-bins", type=int)


def _feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window-s", type=float, help="window length in seconds")
    p.add_argument("--step-s", type=float, help="window step in seconds")
    p.add_argument("--no-filter", action="store_true", help="skip the pupil low-pass filter")
    p.add_argument("--hrv-device", choices=("polar", "biopac"))
    p.add_argument("--jobs", type=int, help="parallel session workers")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="calm", description="Cognitive-load pipeline for pupil and ECG recordings.")
    ap.add_argument("--version", action="version", version=f"calm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic study (manifest, channels, truth)")
    _common(p)
    p.add_argument("--participants", type=int)

    p = sub.add_parser("features", help="extract window features from a manifest")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    _feature_flags(p)

    for name, text in (
        ("train", "train a classifier and save a model file"),
        ("evaluate", "evaluate one split and write report files"),
        ("scenarios", "run every sensors x lighting scenario"),
        ("stats", "Welch t-tests and feature distributions"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        _inputs(p)
        if name in ("evaluate", "train"):
            p.add_argument("--scenario", help="train-test lighting, e.g. light-dark")
            p.add_argument("--sensors", choices=("pupil_only", "hrv_only", "multimodal"))
        if name == "evaluate":
            p.add_argument("--model", type=Path, help="evaluate a saved model instead of training")

    p = sub.add_parser("report", help="regenerate report files from results.json")
    _common(p)
    p.add_argument("--results", type=Path, required=True)
    return ap


def _matrix(args, cfg):
    if getattr(args, "features", None) is not None:
        return read_features_csv(args.features)
    return features_from_manifest(args.manifest, cfg)


def _emit(reports, out, cfg, distributions=None):
    emit_report(reports, out, cfg["report.formats"], distributions)


def cmd_synth(args, cfg) -> None:
    synth_study(cfg.study_config(), args.out)


def cmd_features(args, cfg) -> None:
    matrix = features_from_manifest(args.manifest, cfg)
    write_features_csv(matrix, args.out / "features.csv")
    log.info("wrote %d windows", len(matrix))


def _one_split(args, cfg):
    matrix = prepared_matrix(_matrix(args, cfg), cfg)
    # without --sensors, use the richest configured sensor set
    sensors = args.sensors or cfg["scenarios.sensors"][-1]
    spec = ScenarioSpec.parse(args.scenario or cfg["scenarios.evaluate"])
    seed = rep_seed(cfg["run.seed"], 0)
    split = split_dataset(matrix, cfg["split.ratios"], seed, cfg["split.stratify"], cfg["split.by"])
    return matrix.select_mode(sensors), sensors, spec, split, seed


def cmd_train(args, cfg) -> None:
    sub, _, spec, split, seed = _one_split(args, cfg)
    rows = scenario_select(sub, split, spec)
    X_tr, X_val = impute_train_mean(sub.X[rows.train], sub.X[rows.val])
    model = fit_classifier(cfg, X_tr, sub.labels[rows.train], X_val, sub.labels[rows.val], seed,
                           sub.feature_names, sub.classes)
    save_model(model, args.out / f"model{MODEL_SUFFIX}")


def cmd_evaluate(args, cfg) -> None:
    sub, sensors, spec, split, seed = _one_split(args, cfg)
    if args.model is not None:
        model = load_model(args.model)
        sub = sub.select_features(model.feature_names) if sub.feature_names != model.feature_names else sub
        rows = scenario_select(sub, split, spec)
        _, X_te = impute_train_mean(sub.X[rows.train], sub.X[rows.test])
        y_hat, conf = predict(model, X_te, sub.feature_names)
        recs = records_from_arrays(sub.labels[rows.test], y_hat, conf)
        classes = list(model.classes)
        classifier = "rf" if isinstance(model, RandomForestModel) else "mlp"
    else:
        _, recs, _ = run_cell(sub, split, spec, cfg, seed)
        classes, classifier = sub.classes, cfg["classifier.type"]
    report = with_records(build_report(sensors, spec.name, classes, [recs], cfg["eval.ece_bins"],
                                       classifier, cfg.run_label), [recs])
    write_results([report], args.out / "results.json")
    _emit([report], args.out, cfg)


def cmd_scenarios(args, cfg) -> None:
    reports = run_scenarios(_matrix(args, cfg), cfg)
    write_results(reports, args.out / "results.json")
    _emit(reports, args.out, cfg)


def cmd_stats(args, cfg) -> None:
    matrix = prepared_matrix(_matrix(args, cfg), cfg)
    rows = group_tests(matrix, cfg["stats.features"], cfg["stats.group_by"])
    atomic_write_text(args.out / "stats.csv", _csv_text(STATS_HEADER, rows))
    dists = {g: feature_distribution_summary(matrix, g) for g in cfg["stats.group_by"]}
    emit_distributions(dists, args.out, cfg["report.formats"])


def cmd_report(args, cfg) -> None:
    _emit(read_results(args.results), args.out, cfg)


COMMANDS = {
    "synth": cmd_synth, "features": cmd_features, "train": cmd_train, "evaluate": cmd_evaluate,
    "scenarios": cmd_scenarios, "stats": cmd_stats, "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"calm: config error: {exc}", file=sys.stderr)
        return 2
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        cfg.write(args.out / "resolved_config.ini")
        with np.errstate(all="ignore"):
            COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"calm: config error: {exc}", file=sys.stderr)
        return 2
    except (CalmError, OSError, ValueError) as exc:
        print(f"calm: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
