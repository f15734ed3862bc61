import numpy as np
import pytest

from calm.errors import DataError, ParseError, ValidationError
from calm.ingest import (
    MANIFEST_HEADER,
    RawChannel,
    SessionManifest,
    load_channel,
    load_manifest,
    write_channel,
    write_manifest,
)

HEADER = ",".join(MANIFEST_HEADER)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_single_row_manifest(tmp_path):
    m = _write(tmp_path / "m.csv", f"{HEADER}\np01,s1,tobii,rest,light,60,ch/a.csv\n")
    rows = load_manifest(m)
    assert len(rows) == 1
    assert rows[0].kind == "pupil_diameter_mm"
    assert rows[0].path == tmp_path / "ch" / "a.csv"


def test_comments_and_blank_lines_skipped(tmp_path):
    m = _write(tmp_path / "m.csv", f"# study export\n{HEADER}\n\np01,s1,polar,cl1,dark,120,a.csv\n# end\n")
    assert [r.device for r in load_manifest(m)] == ["polar"]


def test_unknown_task_is_validation_error_with_line(tmp_path):
    m = _write(tmp_path / "m.csv", f"{HEADER}\np01,s1,tobii,rest,light,60,a.csv\np01,s2,tobii,cl3,light,60,b.csv\n")
    with pytest.raises(ValidationError, match=":3:"):
        load_manifest(m)


def test_malformed_row_names_line(tmp_path):
    m = _write(tmp_path / "m.csv", f"{HEADER}\np01,s1,tobii,rest\n")
    with pytest.raises(ParseError, match=":2:"):
        load_manifest(m)
    bad_rate = _write(tmp_path / "r.csv", f"{HEADER}\np01,s1,tobii,rest,light,fast,a.csv\n")
    with pytest.raises(ParseError, match=":2:"):
        load_manifest(bad_rate)


def test_bad_header_and_empty_file(tmp_path):
    with pytest.raises(ParseError):
        load_manifest(_write(tmp_path / "h.csv", "a,b,c\n"))
    with pytest.raises(DataError):
        load_manifest(_write(tmp_path / "e.csv", ""))


def test_full_scale_manifest_round_trip(tmp_path):
    rows = []
    for p in range(10):
        for task in ("rest", "cl1", "cl2"):
            for light in ("light", "dark"):
                for dev, rate in (("tobii", 60.0), ("biopac", 1000.0), ("polar", 120.0)):
                    sid = f"p{p:02d}_{task}_{light}"
                    rows.append(SessionManifest(f"p{p:02d}", sid, dev, task, light, rate,
                                                tmp_path / "ch" / f"{sid}_{dev}.csv"))
    write_manifest(rows, tmp_path / "m.csv", relative_to=tmp_path)
    back = load_manifest(tmp_path / "m.csv")
    assert len(back) == 180
    assert back == rows


def _manifest(tmp_path, device="tobii"):
    return SessionManifest("p01", "s1", device, "rest", "light", 60.0, tmp_path / "c.csv")


def test_load_channel_with_missing_values(tmp_path):
    _write(tmp_path / "c.csv", "timestamp_s,value\n0.0,3.0\n0.1,\n0.2,3.2\n")
    ch = load_channel(_manifest(tmp_path))
    assert ch.kind == "pupil_diameter_mm"
    assert ch.values.size == 3
    assert ch.missing.tolist() == [False, True, False]
    assert len(ch.to_series()) == 2


def test_load_channel_errors(tmp_path):
    _write(tmp_path / "c.csv", "timestamp_s,value\n0.0,3.0\n0.0,3.1\n")
    with pytest.raises(DataError):
        load_channel(_manifest(tmp_path))
    _write(tmp_path / "c.csv", "timestamp_s,value\n")
    with pytest.raises(DataError):
        load_channel(_manifest(tmp_path))
    _write(tmp_path / "c.csv", "timestamp_s,value\n0.0,abc\n")
    with pytest.raises(ParseError):
        load_channel(_manifest(tmp_path))
    with pytest.raises(DataError):
        load_channel(SessionManifest("p", "s", "tobii", "rest", "light", 60.0, tmp_path / "none.csv"))


def test_channel_round_trip_three_minutes(tmp_path):
    t = np.arange(180_000) / 1000.0
    v = 500.0 + np.sin(t)
    write_channel(RawChannel("ecg_mv", t, v), tmp_path / "c.csv")
    ch = load_channel(_manifest(tmp_path, "biopac"))
    assert ch.kind == "ecg_mv"
    assert abs(ch.values.size - 180_000) <= 1
    np.testing.assert_array_equal(ch.values, v)
    np.testing.assert_array_equal(ch.timestamps_s, t)


def test_manifest_rejects_bad_rate():
    with pytest.raises(ValidationError):
        SessionManifest("p", "s", "tobii", "rest", "light", 0.0, "x.csv")
