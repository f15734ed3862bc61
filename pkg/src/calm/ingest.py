"""Loading of recorded sessions: a manifest CSV plus one CSV per channel.

Manifest header::

    participant_id,session_id,device,task,light,nominal_rate_hz,path

Channel header::

    timestamp_s,value

Empty value cells mark missing samples (blinks, packet loss) and are kept as
NaN. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError, ValidationError
from .signal import IrregularSeries

MANIFEST_HEADER = ["participant_id", "session_id", "device", "task", "light", "nominal_rate_hz", "path"]
CHANNEL_HEADER = ["timestamp_s", "value"]

DEVICES = ("tobii", "biopac", "polar")
TASKS = ("rest", "cl1", "cl2")
LIGHTS = ("light", "dark")
CHANNEL_KIND = {"tobii": "pupil_diameter_mm", "biopac": "ecg_mv", "polar": "ecg_mv"}


@dataclass(frozen=True)
class SessionManifest:
    participant_id: str
    session_id: str
    device: str
    task: str
    light: str
    nominal_rate_hz: float
    path: Path

    def __post_init__(self):
        for name, allowed in (("device", DEVICES), ("task", TASKS), ("light", LIGHTS)):
            value = getattr(self, name)
            if value not in allowed:
                raise ValidationError(f"{name}={value!r} not in {allowed}")
        if not self.nominal_rate_hz > 0:
            raise ValidationError(f"nominal_rate_hz must be positive, got {self.nominal_rate_hz}")

    @property
    def kind(self) -> str:
        return CHANNEL_KIND[self.device]


@dataclass(frozen=True)
class RawChannel:
    """Channel as recorded. Missing samples are NaN in ``values``."""

    kind: str
    timestamps_s: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in ("pupil_diameter_mm", "ecg_mv"):
            raise ValidationError(f"unknown channel kind {self.kind!r}")
        if self.timestamps_s.shape != self.values.shape:
            raise DataError("timestamps and values differ in length")
        if self.timestamps_s.size > 1 and not np.all(np.diff(self.timestamps_s) > 0):
            raise DataError("timestamps must be strictly ascending")
        if np.any(np.isinf(self.values)):
            raise DataError("channel values must be finite or missing")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def to_series(self) -> IrregularSeries:
        """Present samples only; missing markers become gaps in time."""
        keep = ~self.missing
        return IrregularSeries(self.timestamps_s[keep], self.values[keep])


def _data_lines(handle):
    # Yields (line_number, text) for non-comment lines.
    for lineno, line in enumerate(handle, start=1):
        if line.lstrip().startswith("#") or not line.strip():
            continue
        yield lineno, line


def _read_rows(path: Path, header: list[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise DataError(f"{path}: empty file")
    head_no, head = lines[0]
    found = next(csv.reader([head]))
    if [h.strip() for h in found] != header:
        raise ParseError(f"{path}:{head_no}: expected header {','.join(header)}, got {head.strip()}")
    for lineno, text in lines[1:]:
        row = next(csv.reader([text]))
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        yield lineno, row


def load_manifest(path) -> list[SessionManifest]:
    """Parse a manifest CSV. Relative channel paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    out = []
    for lineno, row in _read_rows(path, MANIFEST_HEADER):
        pid, sid, device, task, light, rate, rel = (c.strip() for c in row)
        try:
            rate_f = float(rate)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: nominal_rate_hz {rate!r} is not a number") from None
        chan = Path(rel)
        if not chan.is_absolute():
            chan = base / chan
        try:
            out.append(SessionManifest(pid, sid, device, task, light, rate_f, chan))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return out


def write_manifest(manifests, path, relative_to=None) -> None:
    """Write manifests back out; paths are made relative to ``relative_to`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for m in manifests:
        p = Path(m.path)
        if relative_to is not None:
            p = Path(os.path.relpath(p, relative_to))
        w.writerow([m.participant_id, m.session_id, m.device, m.task, m.light,
                    repr(float(m.nominal_rate_hz)), p.as_posix()])
    atomic_write_text(path, buf.getvalue())


def load_channel(manifest: SessionManifest) -> RawChannel:
    """Read the channel file a manifest row points to."""
    if not Path(manifest.path).exists():
        raise DataError(f"channel file {manifest.path} does not exist")
    ts, vals = [], []
    for lineno, (t, v) in _read_rows(Path(manifest.path), CHANNEL_HEADER):
        try:
            ts.append(float(t))
            vals.append(float(v) if v.strip() else np.nan)
        except ValueError:
            raise ParseError(f"{manifest.path}:{lineno}: non-numeric field") from None
    if not ts:
        raise DataError(f"{manifest.path}: no samples")
    t = np.asarray(ts)
    if t.size > 1 and not np.all(np.diff(t) > 0):
        bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
        raise DataError(f"{manifest.path}: timestamps not strictly ascending at sample {bad}")
    return RawChannel(manifest.kind, t, np.asarray(vals))


def format_float(x: float) -> str:
    """Shortest round-trip decimal; empty string for missing."""
    return "" if x is None or np.isnan(x) else repr(float(x))


def write_channel(channel: RawChannel, path) -> None:
    lines = ["timestamp_s,value"]
    lines += [f"{format_float(t)},{format_float(v)}" for t, v in zip(channel.timestamps_s, channel.values)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
