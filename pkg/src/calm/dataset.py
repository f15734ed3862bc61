"""Feature matrices, stratified splits and light-condition scenarios."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import AssemblyError, ParseError, ScenarioError, ValidationError
from .ingest import atomic_write_text, format_float

log = logging.getLogger(__name__)

FEATURE_SCHEMA_VERSION = 1
PUPIL_FEATURES = ["pupil_mean", "pupil_std", "ipa", "pd_auc", "pd_roc"]
HRV_FEATURES = ["rmssd", "sdnn", "pnn50", "mean_rr", "median_rr", "resp_rate", "hf_power", "lf_hf"]
FEATURES = PUPIL_FEATURES + HRV_FEATURES
META_COLUMNS = ["participant_id", "session_id", "device", "window_start_s", "task", "light"]
MODES = ("pupil_only", "hrv_only", "multimodal")
MODE_FEATURES = {"pupil_only": PUPIL_FEATURES, "hrv_only": HRV_FEATURES, "multimodal": FEATURES}


@dataclass(frozen=True)
class WindowFeatures:
    """Features of one window of one session and one device."""

    participant_id: str
    session_id: str
    device: str
    task: str
    light: str
    window_start_s: float
    features: dict


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows of windows; ``X`` columns follow ``feature_names`` (NaN = missing)."""

    feature_names: list
    X: np.ndarray
    participant_id: np.ndarray
    session_id: np.ndarray
    device: np.ndarray
    window_start_s: np.ndarray
    task: np.ndarray
    light: np.ndarray
    labels: np.ndarray
    dropped: int = 0

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def classes(self) -> list:
        return sorted(set(self.labels.tolist()), key=_label_order)

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=int)
        return replace(
            self,
            X=self.X[idx],
            participant_id=self.participant_id[idx],
            session_id=self.session_id[idx],
            device=self.device[idx],
            window_start_s=self.window_start_s[idx],
            task=self.task[idx],
            light=self.light[idx],
            labels=self.labels[idx],
        )

    def select_features(self, names) -> "FeatureMatrix":
        cols = [self.feature_names.index(n) for n in names]
        return replace(self, feature_names=list(names), X=self.X[:, cols])

    def select_mode(self, mode: str) -> "FeatureMatrix":
        return self.select_features(MODE_FEATURES[mode])


_LABEL_RANK = {"rest": 0, "cl1": 1, "cl2": 2, "load": 3}


def _label_order(label):
    return (_LABEL_RANK.get(label, 99), label)


def assemble_features(pupil_windows, hrv_windows, mode: str = "multimodal") -> FeatureMatrix:
    """Join per-window pupil and HRV features on ``(session_id, window_start_s)``.

    Windows present in only one modality are dropped in multimodal mode; the
    count is reported in ``FeatureMatrix.dropped``.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    pupil_windows = list(pupil_windows or [])
    hrv_windows = list(hrv_windows or [])
    rows, dropped = [], 0
    if mode == "pupil_only":
        rows = [(w, w.features) for w in pupil_windows]
    elif mode == "hrv_only":
        rows = [(w, w.features) for w in hrv_windows]
    else:
        key = lambda w: (w.session_id, round(w.window_start_s, 6))
        pupil_by_key = {key(w): w for w in pupil_windows}
        matched = set()
        for h in hrv_windows:
            p = pupil_by_key.get(key(h))
            if p is None:
                dropped += 1
                continue
            matched.add(key(h))
            rows.append((h, {**p.features, **h.features}))
        dropped += sum(1 for k in pupil_by_key if k not in matched)
    if not rows:
        raise AssemblyError(f"no rows assembled in {mode} mode")
    if dropped:
        log.warning("dropped %d unmatched windows during assembly", dropped)
    names = MODE_FEATURES[mode]
    X = np.array([[float(f.get(n, np.nan)) for n in names] for _, f in rows], dtype=float).reshape(len(rows), len(names))
    col = lambda attr: np.array([getattr(w, attr) for w, _ in rows], dtype=object)
    task = col("task")
    return FeatureMatrix(
        list(names), X, col("participant_id"), col("session_id"), col("device"),
        np.array([w.window_start_s for w, _ in rows], dtype=float), task, col("light"), task.copy(), dropped,
    )


def write_features_csv(matrix: FeatureMatrix, path) -> None:
    """Canonical features CSV: metadata columns then all 13 features (blank = missing)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(META_COLUMNS + FEATURES)
    pos = {n: i for i, n in enumerate(matrix.feature_names)}
    for r in range(len(matrix)):
        feats = [format_float(matrix.X[r, pos[n]]) if n in pos else "" for n in FEATURES]
        w.writerow([matrix.participant_id[r], matrix.session_id[r], matrix.device[r],
                    format_float(matrix.window_start_s[r]), matrix.task[r], matrix.light[r]] + feats)
    atomic_write_text(path, buf.getvalue())


def read_features_csv(path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header != META_COLUMNS + FEATURES:
            raise ParseError(f"{path}: unexpected features header")
        recs = list(reader)
    if not recs:
        raise AssemblyError(f"{path}: no feature rows")
    meta = list(zip(*[r[:6] for r in recs]))
    X = np.array([[float(v) if v else np.nan for v in r[6:]] for r in recs], dtype=float)
    obj = lambda i: np.array(meta[i], dtype=object)
    return FeatureMatrix(list(FEATURES), X, obj(0), obj(1), obj(2),
                         np.array([float(v) for v in meta[3]]), obj(4), obj(5), obj(4).copy())


def map_labels(matrix: FeatureMatrix, scheme: str = "three_class") -> FeatureMatrix:
    """``binary`` folds cl1 and cl2 into ``load``; ``three_class`` is the identity."""
    if scheme == "three_class":
        return matrix
    if scheme != "binary":
        raise ValidationError(f"unknown label scheme {scheme!r}")
    labels = np.array(["rest" if t == "rest" else "load" for t in matrix.task], dtype=object)
    return replace(matrix, labels=labels)


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    stratified: bool = True


def split_rng(seed: int, tag: int = 0) -> np.random.Generator:
    """PCG64 stream keyed by ``(seed, tag)``; identical on every platform."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(tag)])))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _largest_remainder(sizes, ratio: float, total: int) -> list[int]:
    ideal = [n * ratio for n in sizes]
    quota = [int(math.floor(v + 1e-9)) for v in ideal]
    order = sorted(range(len(sizes)), key=lambda i: (-(ideal[i] - quota[i]), i))
    for i in order[: max(0, total - sum(quota))]:
        quota[i] += 1
    return quota


def split_dataset(
    matrix: FeatureMatrix,
    ratios=(0.7, 0.1, 0.2),
    seed: int = 0,
    stratify: bool = True,
    by: str = "window",
) -> DatasetSplit:
    """Shuffled train/val/test split; stratified by label where possible.

    With ``by="participant"`` whole participants are assigned to one side.
    """
    n = len(matrix)
    if n < 10:
        raise ValidationError(f"need at least 10 rows to split, got {n}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError("split ratios must sum to 1")
    rng = split_rng(seed)
    if by == "participant":
        return _split_by_participant(matrix, ratios, seed, rng)
    if by != "window":
        raise ValidationError(f"unknown split unit {by!r}")
    _, r_val, r_test = ratios
    n_test, n_val = _round_half_up(n * r_test), _round_half_up(n * r_val)
    groups = [np.arange(n)]
    if stratify:
        classes = matrix.classes
        counts = [int(np.count_nonzero(matrix.labels == c)) for c in classes]
        if min(counts) < 3:
            log.warning("class with fewer than 3 rows; falling back to an unstratified split")
            stratify = False
        else:
            groups = [np.flatnonzero(matrix.labels == c) for c in classes]
    sizes = [g.size for g in groups]
    test_q = _largest_remainder(sizes, r_test, n_test)
    val_q = _largest_remainder(sizes, r_val, n_val)
    train, val, test = [], [], []
    for g, nt, nv in zip(groups, test_q, val_q):
        perm = g[rng.permutation(g.size)]
        test.append(perm[:nt])
        val.append(perm[nt : nt + nv])
        train.append(perm[nt + nv :])
    cat = lambda parts: np.sort(np.concatenate(parts))
    return DatasetSplit(cat(train), cat(val), cat(test), seed, stratify)


def _split_by_participant(matrix, ratios, seed, rng) -> DatasetSplit:
    people = sorted(set(matrix.participant_id.tolist()))
    order = [people[i] for i in rng.permutation(len(people))]
    k = len(order)
    n_test = max(1, _round_half_up(k * ratios[2]))
    n_val = _round_half_up(k * ratios[1])
    test_p, val_p = set(order[:n_test]), set(order[n_test : n_test + n_val])
    pid = matrix.participant_id
    test = np.flatnonzero([p in test_p for p in pid])
    val = np.flatnonzero([p in val_p for p in pid])
    train = np.flatnonzero([p not in test_p and p not in val_p for p in pid])
    return DatasetSplit(train, val, test, seed, False)


@dataclass(frozen=True)
class ScenarioSpec:
    train_light: str
    test_light: str

    def __post_init__(self):
        if self.train_light not in ("light", "all"):
            raise ValidationError(f"train_light must be light|all, got {self.train_light!r}")
        if self.test_light not in ("light", "dark", "all"):
            raise ValidationError(f"test_light must be light|dark|all, got {self.test_light!r}")

    @property
    def name(self) -> str:
        return f"{self.train_light.capitalize()}-{self.test_light.capitalize()}"

    @classmethod
    def parse(cls, text: str) -> "ScenarioSpec":
        a, _, b = text.strip().lower().partition("-")
        return cls(a, b)


TABLE_SCENARIOS = [
    ScenarioSpec("light", "light"),
    ScenarioSpec("light", "dark"),
    ScenarioSpec("all", "light"),
    ScenarioSpec("all", "dark"),
    ScenarioSpec("all", "all"),
]


@dataclass(frozen=True)
class ScenarioRows:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def scenario_select(matrix: FeatureMatrix, split: DatasetSplit, spec: ScenarioSpec) -> ScenarioRows:
    """Filter each side of ``split`` by light condition; rows never change side."""

    def keep(idx, light):
        if light == "all":
            return idx
        return idx[matrix.light[idx] == light]

    rows = ScenarioRows(keep(split.train, spec.train_light), keep(split.val, spec.train_light),
                        keep(split.test, spec.test_light))
    if rows.train.size == 0 or rows.test.size == 0:
        raise ScenarioError(f"scenario {spec.name} leaves an empty train or test side")
    return rows


def impute_train_mean(train: np.ndarray, *others: np.ndarray):
    """Replace NaNs with training-column means (0 for all-missing columns)."""
    with np.errstate(invalid="ignore"):
        counts = np.sum(~np.isnan(train), axis=0)
        means = np.where(counts > 0, np.nansum(train, axis=0) / np.maximum(counts, 1), 0.0)
    fill = lambda a: np.where(np.isnan(a), means, a)
    return (fill(train),) + tuple(fill(o) for o in others)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale
