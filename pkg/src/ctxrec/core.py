"""Domain types for contextual rating data.

A rating table stores every contextual rating as (user, item, rating) plus one
active condition per context dimension.  Conditions are addressed by a global
index: dimension ``d`` owns the contiguous block
``[schema.offsets[d], schema.offsets[d] + len(schema.conditions[d]))`` and the
first slot of every block is the implicit ``"na"`` (unknown) condition.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

NA = "na"


class CarsError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(CarsError, ValueError):
    """Malformed or inconsistent rating data."""


class UnknownConditionError(CarsError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown condition"


def is_na(name: str) -> bool:
    return name.strip().lower() == NA


@dataclass(frozen=True)
class ContextSchema:
    """Context dimensions and their conditions, in first-appearance order."""

    dimensions: tuple[str, ...] = ()
    conditions: tuple[tuple[str, ...], ...] = ()
    offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.dimensions) != len(self.conditions):
            raise DataFormatError("dimension/condition list length mismatch")
        seen = set()
        for dim in self.dimensions:
            key = dim.lower()
            if key in seen:
                raise DataFormatError(f"duplicate dimension: {dim}")
            seen.add(key)
        offsets, lookup, pos = [], {}, 0
        for dim, conds in zip(self.dimensions, self.conditions):
            if not conds or conds[0] != NA or sum(c == NA for c in conds) != 1:
                raise DataFormatError(f"dimension {dim} must contain 'na' exactly once, first")
            if len(set(conds)) != len(conds):
                raise DataFormatError(f"duplicate condition in dimension {dim}")
            offsets.append(pos)
            for j, cond in enumerate(conds):
                lookup[(dim.lower(), cond)] = pos + j
            pos += len(conds)
        object.__setattr__(self, "offsets", tuple(offsets))
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def from_observed(cls, dimensions: Sequence[str], observed: Sequence[Sequence[str]]) -> "ContextSchema":
        """Build a schema, prepending the implicit ``na`` to each dimension."""
        conds = []
        for names in observed:
            conds.append((NA,) + tuple(c for c in names if c != NA))
        return cls(tuple(dimensions), tuple(conds))

    @property
    def num_dimensions(self) -> int:
        return len(self.dimensions)

    @property
    def num_conditions(self) -> int:
        return sum(len(c) for c in self.conditions)

    def na_index(self, dim: int) -> int:
        return self.offsets[dim]

    @property
    def na_indices(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=np.int64)

    def dimension_of(self) -> np.ndarray:
        """Array mapping each global condition index to its dimension."""
        return np.repeat(np.arange(self.num_dimensions), [len(c) for c in self.conditions])

    def dimension_index(self, name: str) -> int:
        for d, dim in enumerate(self.dimensions):
            if dim.lower() == name.lower():
                return d
        raise UnknownConditionError(f"unknown dimension: {name}")

    def index(self, dimension: str, condition: str) -> int:
        """Global index of ``dimension:condition``."""
        if is_na(condition):
            condition = NA
        try:
            return self._lookup[(dimension.lower(), condition)]
        except KeyError:
            raise UnknownConditionError(f"unknown condition: {dimension}:{condition}") from None

    def name(self, index: int) -> tuple[str, str]:
        """Inverse of :meth:`index`."""
        if not 0 <= index < self.num_conditions:
            raise UnknownConditionError(f"unknown condition index: {index}")
        d = int(np.searchsorted(self.offsets, index, side="right")) - 1
        return self.dimensions[d], self.conditions[d][index - self.offsets[d]]

    def situation(self, assignment: Mapping[str, str] | None = None) -> "ContextSituation":
        """Situation from ``{dimension: condition}``; missing dimensions are ``na``."""
        assignment = dict(assignment or {})
        active = []
        for d, dim in enumerate(self.dimensions):
            cond = next((v for k, v in assignment.items() if k.lower() == dim.lower()), NA)
            active.append(self.index(dim, cond))
        extra = {k.lower() for k in assignment} - {d.lower() for d in self.dimensions}
        if extra:
            raise UnknownConditionError(f"unknown dimension: {sorted(extra)[0]}")
        return ContextSituation(tuple(active))

    def all_na(self) -> "ContextSituation":
        return ContextSituation(self.offsets)

    def validate(self, situation: "ContextSituation | Sequence[int]") -> tuple[int, ...]:
        """Return the active indices, raising if any is outside its dimension."""
        active = situation.active if isinstance(situation, ContextSituation) else tuple(situation)
        if len(active) != self.num_dimensions:
            raise UnknownConditionError(
                f"situation has {len(active)} conditions, schema has {self.num_dimensions} dimensions")
        for d, c in enumerate(active):
            lo = self.offsets[d]
            if not lo <= c < lo + len(self.conditions[d]):
                raise UnknownConditionError(f"unknown condition index {c} for dimension {self.dimensions[d]}")
        return tuple(int(c) for c in active)

    def binary_columns(self) -> list[tuple[int, str]]:
        """(global index, header name) for every written indicator column.

        ``na`` columns are implied on read and omitted, except for a dimension
        that has no other condition, which would otherwise vanish.
        """
        cols = []
        for d, dim in enumerate(self.dimensions):
            conds = self.conditions[d]
            start = 0 if len(conds) == 1 else 1
            for j in range(start, len(conds)):
                cols.append((self.offsets[d] + j, f"{dim}:{conds[j]}"))
        return cols


@dataclass(frozen=True)
class ContextSituation:
    """One active global condition index per dimension."""

    active: tuple[int, ...]

    def describe(self, schema: ContextSchema) -> dict[str, str]:
        return dict(schema.name(c) for c in self.active)


@dataclass(frozen=True)
class RatingTuple:
    user: int
    item: int
    rating: float
    situation: ContextSituation


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RatingTable:
    """Binary-format contextual rating table.

    ``contexts`` has shape ``(n, num_dimensions)`` and holds global condition
    indices.  Subsets keep the parent's id tables and rating scale so that
    train/test splits share one index space.
    """

    schema: ContextSchema
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    contexts: np.ndarray
    scale: tuple[float, float]
    binarized: bool = False

    def __post_init__(self):
        n = len(self.ratings)
        object.__setattr__(self, "users", _readonly(np.asarray(self.users, dtype=np.int64)))
        object.__setattr__(self, "items", _readonly(np.asarray(self.items, dtype=np.int64)))
        object.__setattr__(self, "ratings", _readonly(np.asarray(self.ratings, dtype=np.float64)))
        ctx = np.asarray(self.contexts, dtype=np.int64).reshape(n, self.schema.num_dimensions)
        object.__setattr__(self, "contexts", _readonly(ctx))
        if not (len(self.users) == len(self.items) == n):
            raise DataFormatError("column length mismatch")

    @classmethod
    def build(cls, schema, user_ids, item_ids, users, items, ratings, contexts, binarized=False):
        ratings = np.asarray(ratings, dtype=np.float64)
        scale = (float(ratings.min()), float(ratings.max())) if len(ratings) else (0.0, 0.0)
        return cls(schema, tuple(user_ids), tuple(item_ids), users, items, ratings, contexts, scale, binarized)

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def situation(self, row: int) -> ContextSituation:
        return ContextSituation(tuple(int(c) for c in self.contexts[row]))

    def __iter__(self) -> Iterator[RatingTuple]:
        for k in range(len(self)):
            yield RatingTuple(int(self.users[k]), int(self.items[k]), float(self.ratings[k]), self.situation(k))

    @property
    def rows(self) -> list[RatingTuple]:
        return list(self)

    def user_index(self, user_id: str) -> int:
        return self.user_ids.index(user_id)

    def item_index(self, item_id: str) -> int:
        return self.item_ids.index(item_id)

    def subset(self, indices) -> "RatingTable":
        idx = np.asarray(indices, dtype=np.int64)
        return RatingTable(self.schema, self.user_ids, self.item_ids, self.users[idx], self.items[idx],
                           self.ratings[idx], self.contexts[idx], self.scale, self.binarized)

    def with_ratings(self, ratings, scale, binarized) -> "RatingTable":
        return RatingTable(self.schema, self.user_ids, self.item_ids, self.users, self.items,
                           ratings, self.contexts, scale, binarized)

    def same_as(self, other: "RatingTable") -> bool:
        """Structural equality: schema, id tables, rows and scale."""
        return (self.schema == other.schema and self.user_ids == other.user_ids
                and self.item_ids == other.item_ids and self.scale == other.scale
                and self.binarized == other.binarized
                and np.array_equal(self.users, other.users) and np.array_equal(self.items, other.items)
                and np.array_equal(self.ratings, other.ratings)
                and np.array_equal(self.contexts, other.contexts))


@dataclass(frozen=True)
class DatasetStats:
    num_users: int
    num_items: int
    num_ratings: int
    num_dimensions: int
    num_conditions: int
    mean: float
    median: float
    mode: float
    scale: tuple[float, float]

    def format(self) -> str:
        lo, hi = self.scale
        return "\n".join([
            "Dataset statistics:",
            f"  users: {self.num_users}",
            f"  items: {self.num_items}",
            f"  ratings: {self.num_ratings}",
            f"  context dimensions: {self.num_dimensions}",
            f"  context conditions: {self.num_conditions}",
            f"  rating scale: [{format_rating(lo)}, {format_rating(hi)}]",
            f"  mean: {self.mean:.6f}",
            f"  median: {format_rating(self.median)}",
            f"  mode: {format_rating(self.mode)}",
        ])


def compute_stats(table: RatingTable) -> DatasetStats:
    if len(table) == 0:
        raise DataFormatError("empty dataset")
    r = table.ratings
    counts = Counter(r.tolist())
    top = max(counts.values())
    mode = min(v for v, c in counts.items() if c == top)
    return DatasetStats(
        num_users=len(np.unique(table.users)),
        num_items=len(np.unique(table.items)),
        num_ratings=len(table),
        num_dimensions=table.schema.num_dimensions,
        num_conditions=table.schema.num_conditions,
        mean=math.fsum(r.tolist()) / len(r),
        median=float(np.median(r)),
        mode=float(mode),
        scale=table.scale,
    )


def _indicator(value) -> int:
    s = str(value).strip()
    if s in ("0", "1"):
        return int(s)
    try:
        f = float(s)
    except ValueError:
        f = None
    if f in (0.0, 1.0):
        return int(f)
    raise DataFormatError(f"indicator cell must be 0 or 1, got {value!r}")


def situation_of(row: Mapping[str, object], schema: ContextSchema) -> ContextSituation:
    """Read the active condition of every dimension from one-hot cells.

    ``row`` maps ``"Dimension:condition"`` column names to 0/1 cells.  A
    dimension with no 1-cell is ``na``.
    """
    active = list(schema.offsets)
    hits = [0] * schema.num_dimensions
    for column, value in row.items():
        if not _indicator(value):
            continue
        dim, _, cond = column.partition(":")
        d = schema.dimension_index(dim)
        hits[d] += 1
        if hits[d] > 1:
            raise DataFormatError(f"ambiguous situation: {schema.dimensions[d]}")
        active[d] = schema.index(schema.dimensions[d], cond)
    return ContextSituation(tuple(active))


def format_rating(value: float) -> str:
    """Render a rating without trailing zeros (``3.0`` -> ``3``)."""
    v = float(value)
    if v.is_integer():
        return str(int(v))
    return repr(v)
