"""Run configuration: INI file plus command-line overrides.

Precedence, lowest first: built-in defaults, the ``CALM_SEED`` environment
variable (seed only), the config file, explicit flags. Every key must be
declared in ``SCHEMA``; anything else is rejected.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import fields

from .errors import ConfigError
from .ingest import atomic_write_text
from .synth import StudyConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none") else int(s)


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _strs(s: str) -> tuple:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


SCHEMA = {
    "run": {"seed": (int, 0), "jobs": (int, 1)},
    "window": {"length_s": (float, 60.0), "step_s": (_opt_float, None)},
    "filter": {"enabled": (_bool, True), "order": (int, 5), "cutoff_hz": (float, 4.0)},
    "pupil": {
        "clip_min_mm": (float, 1.5), "clip_max_mm": (float, 9.0), "rate_hz": (float, 100.0),
        "max_gap_s": (float, 1.0), "reject_gap_windows": (_bool, False), "auc_baseline": (_bool, False),
    },
    "ecg": {
        "clip_min_mv": (float, 300.0), "clip_max_mv": (float, 1000.0), "session_s": (float, 180.0),
        "hrv_device": (str, "polar"),
    },
    "split": {"ratios": (_floats, (0.7, 0.1, 0.2)), "by": (str, "window"), "stratify": (_bool, True)},
    "labels": {"scheme": (str, "three_class")},
    "classifier": {"type": (str, "rf")},
    "rf": {
        "n_trees": (int, 100), "max_depth": (_opt_int, None), "min_samples_leaf": (int, 1),
        "max_features": (_opt_int, None),
    },
    "mlp": {
        "hidden": (_ints, (256, 128, 64)), "learning_rate": (float, 1e-3), "batch_size": (int, 32),
        "max_epochs": (int, 200), "patience": (int, 20),
    },
    "scenarios": {
        "list": (_strs, ("light-light", "light-dark", "all-light", "all-dark", "all-all")),
        "sensors": (_strs, ("pupil_only", "hrv_only", "multimodal")),
        "evaluate": (str, "all-all"),
    },
    "eval": {"ece_bins": (int, 10), "repetitions": (int, 5)},
    "stats": {
        "features": (_strs, ("pupil_mean", "rmssd")),
        "group_by": (_strs, ("light", "task")),
    },
    "report": {"formats": (_strs, ("csv", "svg"))},
}


def _synth_schema() -> dict:
    # Flattened StudyConfig: dict-valued fields become <field>_<key>.
    out = {}
    proto = StudyConfig()
    for f in fields(StudyConfig):
        if f.name == "seed":
            continue
        v = getattr(proto, f.name)
        if isinstance(v, dict):
            for k, sub in v.items():
                out[f"{f.name}_{k}"] = (float, float(sub))
        elif isinstance(v, tuple):
            out[f.name] = (_strs, v)
        elif isinstance(v, int):
            out[f.name] = (int, v)
        else:
            out[f.name] = (float, float(v))
    return out


SCHEMA["synth"] = _synth_schema()


class RunConfig:
    """Resolved configuration; read values with ``cfg["section.key"]``."""

    def __init__(self, values: dict):
        self._v = values

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self._v[sec][key]

    def as_dict(self) -> dict:
        return {s: dict(kv) for s, kv in self._v.items()}

    @property
    def step_s(self) -> float:
        step = self["window.step_s"]
        # Default keeps a 10 s overlap between consecutive windows.
        return step if step is not None else max(self["window.length_s"] - 10.0, self["window.length_s"] / 2)

    @property
    def run_label(self) -> str:
        filt = "filter" if self["filter.enabled"] else "nofilter"
        return f"w{self['window.length_s']:g}-s{self.step_s:g}-{filt}"

    def study_config(self) -> StudyConfig:
        kw = {}
        proto = StudyConfig()
        for f in fields(StudyConfig):
            if f.name == "seed":
                kw["seed"] = self["run.seed"]
                continue
            v = getattr(proto, f.name)
            if isinstance(v, dict):
                kw[f.name] = {k: self[f"synth.{f.name}_{k}"] for k in v}
            else:
                kw[f.name] = self[f"synth.{f.name}"]
        return StudyConfig(**kw)

    def to_ini(self) -> str:
        buf = io.StringIO()
        for sec, keys in SCHEMA.items():
            buf.write(f"[{sec}]\n")
            for key in keys:
                buf.write(f"{key} = {_fmt(self._v[sec][key])}\n")
            buf.write("\n")
        return buf.getvalue()

    def write(self, path) -> None:
        atomic_write_text(path, self.to_ini())


def _parse(dotted: str, raw: str):
    sec, _, key = dotted.partition(".")
    if sec not in SCHEMA or key not in SCHEMA[sec]:
        raise ConfigError(f"unknown config key {dotted!r}")
    conv = SCHEMA[sec][key][0]
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {dotted}: {raw!r} ({exc})") from None


def resolve_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Merge defaults, ``CALM_SEED``, the INI file at ``path`` and ``overrides``.

    ``overrides`` maps dotted keys to either strings (parsed) or typed values.
    """
    env = os.environ if env is None else env
    values = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    if env.get("CALM_SEED"):
        values["run"]["seed"] = _parse("run.seed", env["CALM_SEED"])
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, strict=True)
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                values.setdefault(sec, {})[key] = _parse(f"{sec}.{key}", raw)
    for dotted, v in (overrides or {}).items():
        # typed overrides go through the same parser so validation is uniform
        parsed = _parse(dotted, v if isinstance(v, str) else _fmt(v))
        sec, key = dotted.split(".", 1)
        values[sec][key] = parsed
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    checks = [
        (cfg["window.length_s"] > 0, "window.length_s must be positive"),
        (0 < cfg.step_s <= cfg["window.length_s"], "window.step_s must satisfy 0 < step <= length"),
        (len(cfg["split.ratios"]) == 3 and abs(sum(cfg["split.ratios"]) - 1) < 1e-9,
         "split.ratios must be three numbers summing to 1"),
        (cfg["split.by"] in ("window", "participant"), "split.by must be window|participant"),
        (cfg["labels.scheme"] in ("three_class", "binary"), "labels.scheme must be three_class|binary"),
        (cfg["classifier.type"] in ("rf", "mlp"), "classifier.type must be rf|mlp"),
        (cfg["ecg.hrv_device"] in ("polar", "biopac"), "ecg.hrv_device must be polar|biopac"),
        (cfg["eval.ece_bins"] >= 1 and cfg["eval.repetitions"] >= 1, "eval counts must be positive"),
        (cfg["run.jobs"] >= 1, "run.jobs must be positive"),
        (all(s in ("pupil_only", "hrv_only", "multimodal") for s in cfg["scenarios.sensors"]),
         "scenarios.sensors entries must be pupil_only|hrv_only|multimodal"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
