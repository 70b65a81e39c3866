"""Reading loose/compact/binary rating files and the workspace cache."""

from __future__ import annotations

import csv
import enum
import io
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (NA, ContextSchema, DataFormatError, RatingTable, format_rating, is_na,
                   situation_of)

log = logging.getLogger(__name__)

WORKSPACE = "CARSKit.Workspace"
BINARY_FILE = "ratings_binary.txt"


class SourceFormat(enum.Enum):
    LOOSE = "loose"
    COMPACT = "compact"
    BINARY = "binary"


def detect_format(header: Sequence[str]) -> SourceFormat:
    cols = [c.strip() for c in header]
    if len(cols) < 3:
        raise DataFormatError("malformed header: need at least user, item and rating columns")
    rest = cols[3:]
    if any(":" in c for c in rest):
        return SourceFormat.BINARY
    lowered = [c.lower() for c in rest]
    if lowered == ["context", "condition"]:
        return SourceFormat.LOOSE
    if "context" in lowered or "condition" in lowered:
        raise DataFormatError(
            "malformed header: loose format needs exactly user,item,rating,Context,Condition")
    return SourceFormat.COMPACT


class _Interner:
    def __init__(self):
        self.ids: list[str] = []
        self._index: dict[str, int] = {}

    def __call__(self, key: str) -> int:
        idx = self._index.get(key)
        if idx is None:
            idx = self._index[key] = len(self.ids)
            self.ids.append(key)
        return idx


def _rating(cell: str, lineno: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataFormatError(f"line {lineno}: non-numeric rating {cell!r}") from None
    if not np.isfinite(value):
        raise DataFormatError(f"line {lineno}: non-finite rating {cell!r}")
    return value


def _numbered(rows: Iterable[Sequence[str]], start: int = 2):
    """Attach 1-based file line numbers (the header is line 1), skipping blank lines."""
    for lineno, row in enumerate(rows, start):
        cells = [c.strip() for c in row]
        if not cells or all(c == "" for c in cells):
            continue
        yield lineno, cells


class _Builder:
    """Accumulates rows with per-dimension condition names in appearance order."""

    def __init__(self, dimensions: Sequence[str]):
        self.dimensions = list(dimensions)
        self.observed: list[list[str]] = [[] for _ in dimensions]
        self.users, self.items = _Interner(), _Interner()
        self.u: list[int] = []
        self.i: list[int] = []
        self.r: list[float] = []
        self.ctx: list[list[str]] = []

    def add_dimension(self, name: str) -> int:
        for d, dim in enumerate(self.dimensions):
            if dim.lower() == name.lower():
                return d
        self.dimensions.append(name)
        self.observed.append([])
        for c in self.ctx:
            c.append(NA)
        return len(self.dimensions) - 1

    def add(self, user: str, item: str, rating: float, conds: Sequence[str]):
        conds = [NA if (c == "" or is_na(c)) else c for c in conds]
        conds += [NA] * (len(self.dimensions) - len(conds))
        for d, c in enumerate(conds):
            if c != NA and c not in self.observed[d]:
                self.observed[d].append(c)
        self.u.append(self.users(user))
        self.i.append(self.items(item))
        self.r.append(rating)
        self.ctx.append(list(conds))

    def table(self) -> RatingTable:
        schema = ContextSchema.from_observed(self.dimensions, self.observed)
        contexts = np.zeros((len(self.r), len(self.dimensions)), dtype=np.int64)
        for d, dim in enumerate(self.dimensions):
            for k, c in enumerate(self.ctx):
                contexts[k, d] = schema.index(dim, c[d])
        return RatingTable.build(schema, self.users.ids, self.items.ids, self.u, self.i, self.r, contexts)


def transform_compact_to_binary(rows: Iterable[Sequence[str]], header: Sequence[str]) -> RatingTable:
    """One binary row per compact row; the cell under each dimension column is its condition."""
    header = [c.strip() for c in header]
    if detect_format(header) is not SourceFormat.COMPACT:
        raise DataFormatError("header is not in compact format")
    b = _Builder(header[3:])
    ContextSchema.from_observed(b.dimensions, b.observed)  # duplicate dimension check
    for lineno, cells in _numbered(rows):
        if len(cells) != len(header):
            raise DataFormatError(f"line {lineno}: expected {len(header)} cells, got {len(cells)}")
        b.add(cells[0], cells[1], _rating(cells[2], lineno), cells[3:])
    return b.table()


def transform_loose_to_binary(rows: Iterable[Sequence[str]], header: Sequence[str]) -> RatingTable:
    """Merge consecutive rows sharing (user, item, rating) into one contextual rating."""
    if detect_format(header) is not SourceFormat.LOOSE:
        raise DataFormatError("header is not in loose format")
    b = _Builder([])
    groups: list[tuple[tuple[str, str, float], dict[int, str]]] = []
    for lineno, cells in _numbered(rows):
        if len(cells) != 5:
            raise DataFormatError(f"line {lineno}: expected 5 cells, got {len(cells)}")
        user, item, raw, dim, cond = cells
        key = (user, item, _rating(raw, lineno))
        if not dim:
            raise DataFormatError(f"line {lineno}: empty context dimension")
        d = b.add_dimension(dim)
        cond = NA if (cond == "" or is_na(cond)) else cond
        if not groups or groups[-1][0] != key:
            groups.append((key, {}))
        assigned = groups[-1][1]
        if d in assigned and assigned[d] != cond:
            raise DataFormatError(f"line {lineno}: conflicting condition: {b.dimensions[d]}")
        assigned[d] = cond
    for (user, item, rating), assigned in groups:
        b.add(user, item, rating, [assigned.get(d, NA) for d in range(len(b.dimensions))])
    return b.table()


def _read_binary(rows: Iterable[Sequence[str]], header: Sequence[str]) -> RatingTable:
    header = [c.strip() for c in header]
    dims: list[str] = []
    observed: list[list[str]] = []
    for col in header[3:]:
        dim, sep, cond = col.partition(":")
        if not sep or not dim:
            raise DataFormatError(f"malformed binary column: {col!r}")
        d = next((k for k, x in enumerate(dims) if x.lower() == dim.lower()), None)
        if d is None:
            dims.append(dim)
            observed.append([])
            d = len(dims) - 1
        if not is_na(cond):
            if cond in observed[d]:
                raise DataFormatError(f"duplicate binary column: {col!r}")
            observed[d].append(cond)
    schema = ContextSchema.from_observed(dims, observed)
    users, items = _Interner(), _Interner()
    u, i, r, ctx = [], [], [], []
    columns = header[3:]
    for lineno, cells in _numbered(rows):
        if len(cells) != len(header):
            raise DataFormatError(f"line {lineno}: expected {len(header)} cells, got {len(cells)}")
        try:
            sit = situation_of(dict(zip(columns, cells[3:])), schema)
        except DataFormatError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
        u.append(users(cells[0]))
        i.append(items(cells[1]))
        r.append(_rating(cells[2], lineno))
        ctx.append(sit.active)
    contexts = np.asarray(ctx, dtype=np.int64).reshape(len(r), len(dims))
    return RatingTable.build(schema, users.ids, items.ids, u, i, r, contexts)


def read_ratings(source: str | Path | io.TextIOBase) -> RatingTable:
    """Read any of the three formats, detected from the header row."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                return read_ratings(fh)
        except DataFormatError as exc:
            raise DataFormatError(f"{path}: {exc}") from None
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        raise DataFormatError("malformed header: file is empty")
    fmt = detect_format(header)
    if fmt is SourceFormat.BINARY:
        return _read_binary(reader, header)
    if fmt is SourceFormat.LOOSE:
        return transform_loose_to_binary(reader, header)
    return transform_compact_to_binary(reader, header)


def binary_lines(table: RatingTable) -> list[str]:
    columns = table.schema.binary_columns()
    lines = [",".join(["user", "item", "rating"] + [name for _, name in columns])]
    for k in range(len(table)):
        active = set(table.contexts[k].tolist())
        cells = [table.user_ids[table.users[k]], table.item_ids[table.items[k]],
                 format_rating(table.ratings[k])]
        cells += ["1" if g in active else "0" for g, _ in columns]
        lines.append(",".join(cells))
    return lines


def write_binary(table: RatingTable, path: str | Path) -> None:
    Path(path).write_text("\n".join(binary_lines(table)) + "\n", encoding="utf-8")


def binarize(table: RatingTable, threshold: float) -> RatingTable:
    """Ratings strictly above ``threshold`` become 1, the rest 0.  Negative threshold: no-op."""
    if threshold < 0:
        return table
    return table.with_ratings((table.ratings > threshold).astype(np.float64), (0.0, 1.0), True)


def prepare_workspace(data_path: str | Path, data_transformation: int = 1,
                      folder: str = WORKSPACE) -> RatingTable:
    """Load ratings through the workspace cache next to ``data_path``."""
    data_path = Path(data_path)
    if not data_path.is_file():
        raise DataFormatError(f"{data_path}: rating file not found")
    workspace = data_path.parent / folder
    workspace.mkdir(exist_ok=True)
    cached = workspace / BINARY_FILE
    if data_transformation <= 0:
        if cached.is_file():
            return read_ratings(cached)
        log.warning("no cached binary data in %s; transforming %s", workspace, data_path)
    table = read_ratings(data_path)
    write_binary(table, cached)
    return table
