"""Evaluation metrics, statistical tests and report files."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc

from .ingest import atomic_write_text, format_float

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionRecord:
    y: object
    y_hat: object
    p_hat: float

    def __post_init__(self):
        if not 0.0 < self.p_hat <= 1.0:
            raise ValueError(f"confidence must lie in (0, 1], got {self.p_hat}")


def records_from_arrays(y, y_hat, p_hat) -> list[PredictionRecord]:
    return [PredictionRecord(a, b, float(c)) for a, b, c in zip(y, y_hat, p_hat)]


def _arrays(records):
    y = np.array([r.y for r in records], dtype=object)
    y_hat = np.array([r.y_hat for r in records], dtype=object)
    p = np.array([r.p_hat for r in records], dtype=float)
    return y, y_hat, p


def accuracy_and_confusion(records, classes=None):
    """``(accuracy, confusion)`` with ``confusion[i][j] = #(y = class i, y_hat = class j)``."""
    if not records:
        raise ValueError("need at least one record")
    y, y_hat, _ = _arrays(records)
    if classes is None:
        classes = sorted(set(y.tolist()) | set(y_hat.tolist()), key=str)
    pos = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for a, b in zip(y, y_hat):
        cm[pos[a], pos[b]] += 1
    return float(np.trace(cm) / len(records)), cm


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float


def reliability_bins(records, n_bins: int = 10) -> list[ReliabilityBin]:
    """Equal-width bins ``(b/M, (b+1)/M]``; empty bins carry NaN statistics."""
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    y, y_hat, p = _arrays(records)
    correct = (y == y_hat).astype(float)
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.clip(np.searchsorted(edges, p, side="left") - 1, 0, n_bins - 1)
    out = []
    for b in range(n_bins):
        sel = idx == b
        k = int(np.count_nonzero(sel))
        conf = float(p[sel].mean()) if k else math.nan
        acc = float(correct[sel].mean()) if k else math.nan
        out.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]), k, conf, acc))
    return out


def ece_from_bins(bins) -> float:
    total = sum(b.count for b in bins)
    return sum(b.count / total * abs(b.accuracy - b.mean_confidence) for b in bins if b.count)


def expected_calibration_error(records, n_bins: int = 10) -> float:
    """Sum over non-empty bins of ``(n_b / N) * |accuracy_b - mean confidence_b|``."""
    if not records:
        raise ValueError("need at least one record")
    return ece_from_bins(reliability_bins(records, n_bins))


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float
    degenerate: bool = False


def student_t_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability via the regularised incomplete beta function."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_t_test(sample_a, sample_b) -> WelchResult:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite degrees of freedom.

    If both samples have zero variance and equal means the result is
    ``t = 0, p = 1`` with ``degenerate`` set.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        if ma == mb:
            return WelchResult(0.0, math.nan, 1.0, True)
        return WelchResult(math.copysign(math.inf, ma - mb), math.nan, 0.0, True)
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    return WelchResult(float(t), float(df), student_t_two_sided(t, df))


def feature_distribution_summary(matrix, group_by: str = "light", features=None, n_hist: int = 50) -> dict:
    """Per feature and group: five-number summary, mean, std and a density histogram.

    Histogram edges span the pooled (all groups) range of each feature.
    """
    groups = np.asarray(getattr(matrix, group_by))
    names = list(features or matrix.feature_names)
    out = {}
    for name in names:
        col = matrix.X[:, matrix.feature_names.index(name)]
        pooled = col[~np.isnan(col)]
        if pooled.size == 0:
            continue
        lo, hi = float(pooled.min()), float(pooled.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, n_hist + 1)
        per = {}
        for g in sorted(set(groups.tolist()), key=str):
            v = col[(groups == g) & ~np.isnan(col)]
            if v.size == 0:
                log.warning("feature %s: group %s is empty, omitted", name, g)
                continue
            q = np.percentile(v, [0, 25, 50, 75, 100])
            hist, _ = np.histogram(v, bins=edges, density=True)
            per[g] = {
                "n": int(v.size), "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
                "q3": float(q[3]), "max": float(q[4]), "mean": float(v.mean()),
                "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                "hist": hist.tolist(), "edges": edges.tolist(),
            }
        out[name] = per
    return out


@dataclass
class EvaluationReport:
    """Results of one (sensors, scenario) cell, pooled over repetitions."""

    sensors: str
    scenario: str
    classes: list
    accuracies: list
    eces: list
    confusion: np.ndarray
    bins: list
    ece: float
    classifier: str = "rf"
    run_label: str = ""
    n_bins: int = 10
    importances: dict | None = None
    n_test: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def accuracy_mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def accuracy_std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0


def build_report(sensors, scenario, classes, rep_records, n_bins=10, classifier="rf",
                 run_label="", importances=None) -> EvaluationReport:
    """Aggregate per-repetition record lists into one report."""
    pooled = [r for recs in rep_records for r in recs]
    accs, eces = [], []
    for recs in rep_records:
        acc, _ = accuracy_and_confusion(recs, classes)
        accs.append(acc)
        eces.append(expected_calibration_error(recs, n_bins))
    _, cm = accuracy_and_confusion(pooled, classes)
    bins = reliability_bins(pooled, n_bins)
    return EvaluationReport(sensors, scenario, list(classes), accs, eces, cm, bins, ece_from_bins(bins),
                            classifier, run_label, n_bins, importances, len(pooled))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


METRICS_HEADER = ["run_label", "classifier", "sensors", "scenario", "train", "test", "accuracy_mean",
                  "accuracy_std", "ece", "ece_mean", "ece_std", "n_reps", "n_test", "ece_bins"]


def emit_report(reports, out_dir, formats=("csv",), distributions=None) -> list[Path]:
    """Write CSV tables (and optionally SVG charts) for a list of reports."""
    out = Path(out_dir)
    written = []

    def put(name, text):
        atomic_write_text(out / name, text)
        written.append(out / name)

    if "csv" in formats:
        rows = []
        for r in reports:
            train, _, test = r.scenario.partition("-")
            rows.append([r.run_label, r.classifier, r.sensors, r.scenario, train, test, r.accuracy_mean, r.accuracy_std,
                         r.ece, float(np.mean(r.eces)),
                         float(np.std(r.eces, ddof=1)) if len(r.eces) > 1 else 0.0,
                         len(r.accuracies), r.n_test, r.n_bins])
        put("metrics.csv", _csv_text(METRICS_HEADER, rows))
        for r in reports:
            cm_rows = [[c] + [int(v) for v in r.confusion[i]] for i, c in enumerate(r.classes)]
            put(f"confusion_{_slug(r)}.csv", _csv_text(["true\\pred"] + list(r.classes), cm_rows))
        bin_rows = [
            [r.run_label, r.classifier, r.sensors, r.scenario, i, b.lower, b.upper, b.count,
             b.mean_confidence, b.accuracy, r.ece]
            for r in reports for i, b in enumerate(r.bins)
        ]
        put("reliability_bins.csv", _csv_text(
            ["run_label", "classifier", "sensors", "scenario", "bin", "lower", "upper", "count",
             "mean_confidence", "accuracy", "ece"], bin_rows))
        imp_rows = [
            [r.run_label, r.classifier, r.sensors, r.scenario, name, float(v)]
            for r in reports if r.importances for name, v in r.importances.items()
        ]
        put("importance.csv", _csv_text(
            ["run_label", "classifier", "sensors", "scenario", "feature", "importance"], imp_rows))
    if "svg" in formats:
        put("metrics.svg", accuracy_svg(reports))
    return written + emit_distributions(distributions or {}, out, formats)


DISTRIBUTIONS_HEADER = ["group_by", "feature", "group", "n", "min", "q1", "median", "q3", "max", "mean", "std"]


def emit_distributions(distributions: dict, out_dir, formats=("csv",)) -> list[Path]:
    """``distributions.csv`` (and SVG) from ``{group_by: feature_distribution_summary(...)}``."""
    out = Path(out_dir)
    written = []
    if "csv" in formats:
        rows = []
        for group_by, summary in distributions.items():
            for feat, groups in summary.items():
                for g, s in groups.items():
                    rows.append([group_by, feat, g, s["n"], s["min"], s["q1"], s["median"], s["q3"],
                                 s["max"], s["mean"], s["std"]])
        atomic_write_text(out / "distributions.csv", _csv_text(DISTRIBUTIONS_HEADER, rows))
        written.append(out / "distributions.csv")
    if "svg" in formats and distributions:
        atomic_write_text(out / "distributions.svg", distribution_svg(distributions))
        written.append(out / "distributions.svg")
    return written


def _slug(r: EvaluationReport) -> str:
    parts = [r.run_label, r.classifier, r.sensors, r.scenario]
    return "_".join(p for p in parts if p).replace("/", "-")


def accuracy_svg(reports, width: int = 720, bar_h: int = 16) -> str:
    """Horizontal bar chart of mean accuracy with a +-std whisker per report."""
    pad_l, pad_t = 260, 20
    height = pad_t * 2 + bar_h * 1.5 * len(reports)
    scale = width - pad_l - 20
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{int(height)}" '
             f'font-family="sans-serif" font-size="11">']
    for i, r in enumerate(reports):
        y = pad_t + i * bar_h * 1.5
        w = r.accuracy_mean * scale
        sd = r.accuracy_std * scale
        label = f"{r.run_label} {r.classifier} {r.sensors} {r.scenario}".strip()
        parts.append(f'<text x="{pad_l - 6}" y="{y + bar_h * 0.75:.1f}" text-anchor="end">{label}</text>')
        parts.append(f'<rect x="{pad_l}" y="{y:.1f}" width="{w:.1f}" height="{bar_h}" fill="#4a7fb5"/>')
        parts.append(f'<line x1="{pad_l + w - sd:.1f}" x2="{pad_l + w + sd:.1f}" y1="{y + bar_h / 2:.1f}" '
                     f'y2="{y + bar_h / 2:.1f}" stroke="black"/>')
        parts.append(f'<text x="{pad_l + w + sd + 4:.1f}" y="{y + bar_h * 0.75:.1f}">'
                     f'{100 * r.accuracy_mean:.1f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def distribution_svg(distributions, width: int = 720, row_h: int = 18) -> str:
    """Box plots (whiskers at min/max) per feature and group, each feature on its own scale."""
    rows = [(gb, f, g, s) for gb, summ in distributions.items() for f, groups in summ.items()
            for g, s in groups.items()]
    pad_l = 220
    scale = width - pad_l - 20
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{20 + row_h * len(rows)}" '
             f'font-family="sans-serif" font-size="11">']
    for i, (gb, f, g, s) in enumerate(rows):
        lo, hi = s["edges"][0], s["edges"][-1]
        x = lambda v: pad_l + (v - lo) / (hi - lo) * scale
        y = 10 + i * row_h
        parts.append(f'<text x="{pad_l - 6}" y="{y + 12}" text-anchor="end">{f} {gb}={g}</text>')
        parts.append(f'<line x1="{x(s["min"]):.1f}" x2="{x(s["max"]):.1f}" y1="{y + 8}" y2="{y + 8}" stroke="black"/>')
        parts.append(f'<rect x="{x(s["q1"]):.1f}" y="{y + 2}" width="{max(x(s["q3"]) - x(s["q1"]), 0.5):.1f}" '
                     f'height="12" fill="#9cc3e6" stroke="black"/>')
        parts.append(f'<line x1="{x(s["median"]):.1f}" x2="{x(s["median"]):.1f}" y1="{y + 2}" y2="{y + 14}" '
                     f'stroke="#b5402a" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
