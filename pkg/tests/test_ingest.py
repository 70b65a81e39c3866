import io
import logging

import numpy as np
import pytest

from ctxrec.core import DataFormatError
from ctxrec.ingest import (BINARY_FILE, WORKSPACE, SourceFormat, binarize, binary_lines, detect_format,
                           prepare_workspace, read_ratings, transform_compact_to_binary, transform_loose_to_binary)

from _oracles import LOOSE_EXAMPLE, LOOSE_HEADER, COMPACT_EXAMPLE, COMPACT_HEADER, BINARY_EXAMPLE, BINARY_HEADER


@pytest.mark.parametrize("header, fmt", [
    ("UserID,ItemID,Rating,Context,Condition", SourceFormat.LOOSE),
    ("UserID,ItemID,Rating,Time,Location", SourceFormat.COMPACT),
    ("UserID,ItemID,Rating,Time:Weekend,Time:Weekday,Location:Home,Location:Work", SourceFormat.BINARY),
    ("u,i,r,context,CONDITION", SourceFormat.LOOSE),
])
def test_detect_format(header, fmt):
    assert detect_format(header.split(",")) is fmt


def test_detect_format_too_few_columns():
    with pytest.raises(DataFormatError, match="malformed header"):
        detect_format(["u", "i"])


def test_detect_format_loose_names_wrong_arity():
    with pytest.raises(DataFormatError):
        detect_format(["u", "i", "r", "Context", "Condition", "Extra"])


def _permuted_rows(table):
    """Binary rows of ``table`` with columns reordered to match the reference binary header."""
    lines = [line.split(",") for line in binary_lines(table)]
    head = lines[0]
    order = [0, 1, 2] + [head.index(c) for c in BINARY_HEADER[3:]]
    return [[row[k] for k in order] for row in lines[1:]]


def test_compact_to_binary_reproduces_table2():
    t = transform_compact_to_binary(COMPACT_EXAMPLE, COMPACT_HEADER)
    assert _permuted_rows(t) == BINARY_EXAMPLE


def test_compact_column_order_is_first_appearance():
    t = transform_compact_to_binary(COMPACT_EXAMPLE, COMPACT_HEADER)
    assert binary_lines(t)[0] == "user,item,rating,Time:Weekend,Time:Weekday,Location:Work,Location:Home"


def test_compact_header_only():
    t = transform_compact_to_binary([], COMPACT_HEADER)
    assert len(t) == 0
    assert t.schema.num_conditions == 2  # only the implied na of each dimension


def test_compact_empty_cell_is_na():
    t = transform_compact_to_binary([["U1", "T1", "3", "", "Home"]], COMPACT_HEADER)
    assert t.situation(0).describe(t.schema) == {"Time": "na", "Location": "Home"}
    back = read_ratings(io.StringIO("\n".join(binary_lines(t)) + "\n"))
    assert back.situation(0).describe(back.schema) == {"Time": "na", "Location": "Home"}


def test_compact_arity_error_has_line_number():
    with pytest.raises(DataFormatError, match="line 3"):
        transform_compact_to_binary([COMPACT_EXAMPLE[0], ["U1", "T1", "3", "Weekend"]], COMPACT_HEADER)


def test_compact_non_numeric_rating():
    with pytest.raises(DataFormatError, match="line 2: non-numeric rating"):
        transform_compact_to_binary([["U1", "T1", "good", "Weekend", "Home"]], COMPACT_HEADER)


def test_loose_to_binary_two_profiles():
    t = transform_loose_to_binary(LOOSE_EXAMPLE, LOOSE_HEADER)
    assert len(t) == 2
    got = [(t.user_ids[r.user], t.item_ids[r.item], r.rating, r.situation.describe(t.schema)) for r in t]
    assert got == [("U1", "T1", 3.0, {"Time": "Weekend", "Location": "Work"}),
                   ("U2", "T2", 4.0, {"Time": "Weekday", "Location": "Home"})]


def test_loose_single_row_missing_dimension_is_na():
    rows = [["U1", "T1", "5", "Time", "Weekend"], ["U2", "T1", "4", "Location", "Home"]]
    t = transform_loose_to_binary(rows, LOOSE_HEADER)
    assert t.situation(0).describe(t.schema) == {"Time": "Weekend", "Location": "na"}


def test_loose_conflicting_condition():
    rows = [["U1", "T1", "3", "Time", "Weekend"], ["U1", "T1", "3", "Time", "Weekday"]]
    with pytest.raises(DataFormatError, match="conflicting condition: Time"):
        transform_loose_to_binary(rows, LOOSE_HEADER)


def test_loose_non_numeric_rating():
    with pytest.raises(DataFormatError, match="non-numeric rating"):
        transform_loose_to_binary([["U1", "T1", "x", "Time", "Weekend"]], LOOSE_HEADER)


def test_loose_groups_only_consecutive_runs():
    rows = [["U1", "T1", "3", "Time", "Weekend"], ["U2", "T2", "4", "Time", "Weekday"],
            ["U1", "T1", "3", "Time", "Weekday"]]
    assert len(transform_loose_to_binary(rows, LOOSE_HEADER)) == 3


def test_loose_never_increases_row_count():
    rng = np.random.default_rng(3)
    rows = [[f"U{rng.integers(3)}", f"T{rng.integers(3)}", str(rng.integers(1, 6)),
             ["Time", "Location"][rng.integers(2)], f"c{rng.integers(2)}"] for _ in range(50)]
    # drop rows that would repeat a dimension inside their run
    kept = []
    for r in rows:
        if kept and kept[-1][:3] == r[:3] and kept[-1][3] == r[3]:
            continue
        kept.append(r)
    t = transform_loose_to_binary(kept, LOOSE_HEADER)
    assert len(t) <= len(kept)


def test_binarize_threshold_3(example_table):
    assert binarize(example_table, 3).ratings.tolist() == [0, 1, 1, 0]
    assert binarize(example_table, 3).binarized


def test_binarize_negative_is_identity(example_table):
    assert binarize(example_table, -1) is example_table


def test_binarize_zero_on_positive(example_table):
    assert binarize(example_table, 0).ratings.tolist() == [1, 1, 1, 1]


def test_read_binary_table2():
    text = "\n".join(",".join(r) for r in [BINARY_HEADER] + BINARY_EXAMPLE)
    t = read_ratings(io.StringIO(text))
    assert t.ratings.tolist() == [3, 4, 4, 2]
    assert t.situation(2).describe(t.schema) == {"Time": "Weekend", "Location": "Home"}


def test_read_binary_ambiguous_row_has_line_number():
    text = "u,i,r,Time:Weekend,Time:Weekday\nU1,T1,3,1,1\n"
    with pytest.raises(DataFormatError, match="line 2: ambiguous situation: Time"):
        read_ratings(io.StringIO(text))


def _write_compact(path, rows=COMPACT_EXAMPLE):
    path.write_text("\n".join(",".join(r) for r in [COMPACT_HEADER] + rows) + "\n")
    return path


def test_prepare_workspace_fresh(tmp_path):
    data = _write_compact(tmp_path / "ratings.txt")
    t = prepare_workspace(data, 1)
    cached = tmp_path / WORKSPACE / BINARY_FILE
    assert cached.is_file()
    assert len(t) == 4
    assert cached.read_text().splitlines() == binary_lines(t)


def test_prepare_workspace_uses_cache(tmp_path):
    data = _write_compact(tmp_path / "ratings.txt")
    prepare_workspace(data, 1)
    data.write_text("garbage that would not parse\n")
    assert len(prepare_workspace(data, -1)) == 4


def test_prepare_workspace_cache_miss_falls_back(tmp_path, caplog):
    data = _write_compact(tmp_path / "ratings.txt")
    with caplog.at_level(logging.WARNING):
        t = prepare_workspace(data, -1)
    assert len(t) == 4
    assert (tmp_path / WORKSPACE / BINARY_FILE).is_file()
    assert "no cached binary" in caplog.text


def test_prepare_workspace_missing_file(tmp_path):
    with pytest.raises(DataFormatError, match="not found"):
        prepare_workspace(tmp_path / "nope.txt")


def test_prepare_workspace_reports_path_and_line(tmp_path):
    data = _write_compact(tmp_path / "ratings.txt", COMPACT_EXAMPLE + [["U9", "T9", "bad", "Weekend", "Home"]])
    with pytest.raises(DataFormatError, match=r"ratings.txt: line 6"):
        prepare_workspace(data, 1)


def test_transform_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    prepare_workspace(_write_compact(a / "r.txt"), 1)
    prepare_workspace(_write_compact(b / "r.txt"), 1)
    assert (a / WORKSPACE / BINARY_FILE).read_bytes() == (b / WORKSPACE / BINARY_FILE).read_bytes()


def test_compact_preserves_row_count():
    rng = np.random.default_rng(0)
    rows = [[f"U{rng.integers(5)}", f"T{rng.integers(5)}", str(rng.integers(1, 6)),
             ["Weekend", "Weekday", ""][rng.integers(3)], ["Home", "Work", "NA"][rng.integers(3)]]
            for _ in range(60)]
    assert len(transform_compact_to_binary(rows, COMPACT_HEADER)) == 60
