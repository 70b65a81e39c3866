"""Item, user and user-item splitting.

An entity (item or user) whose ratings differ significantly between
"condition c active" and "condition c not active" is replaced by two virtual
entities, one per side.  A traditional 2D recommender is then trained on the
split data and queries are routed to the virtual id matching the situation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ContextSchema, RatingTable
from .engine import HyperParams, Recommender, create, register

TRADITIONAL = ("globalavg", "useravg", "itemavg", "useritemavg", "userknn", "itemknn",
               "pmf", "biasedmf", "slim")


@dataclass(frozen=True)
class SplitCriterion:
    alpha: float = 0.05
    minlength: int = 2

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.minlength < 1:
            raise ValueError(f"minlength must be >= 1, got {self.minlength}")


@dataclass(frozen=True)
class Split:
    condition: int  # global condition index
    holds: int      # virtual id used when the condition is active
    fails: int      # virtual id used otherwise
    t: float


@dataclass(frozen=True)
class SplitMap:
    axis: str  # "item" or "user"
    num_original: int
    splits: dict[int, Split] = field(default_factory=dict)

    def route(self, entity: int, situation) -> int:
        s = self.splits.get(int(entity))
        if s is None:
            return int(entity)
        return s.holds if s.condition in tuple(situation) else s.fails

    def route_many(self, entities: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        out = np.array(entities, dtype=np.int64, copy=True)
        for entity, s in self.splits.items():
            rows = out == entity
            if rows.any():
                active = (contexts[rows] == s.condition).any(axis=1)
                out[rows] = np.where(active, s.holds, s.fails)
        return out

    def describe(self, schema: ContextSchema) -> dict[int, str]:
        return {e: "%s:%s" % schema.name(s.condition) for e, s in self.splits.items()}


def welch_t(a: np.ndarray, b: np.ndarray) -> float:
    """Welch's two-sample t statistic (sample variances, ddof=1).

    A single-observation side contributes zero variance.  With both
    variances zero the statistic is +-inf for different means and 0 for
    equal means.
    """
    ma, mb = float(np.mean(a)), float(np.mean(b))
    se2 = sum(np.var(x, ddof=1) / len(x) for x in (a, b) if len(x) > 1)
    if se2 <= 0:
        return 0.0 if ma == mb else math.copysign(math.inf, ma - mb)
    return (ma - mb) / math.sqrt(se2)


def two_sided_p(t: float) -> float:
    """Normal-approximation p-value."""
    return math.erfc(abs(t) / math.sqrt(2.0))


def choose_split(ratings: np.ndarray, contexts: np.ndarray, schema: ContextSchema,
                 crit: SplitCriterion) -> tuple[int, float] | None:
    """Best (condition, t) for one entity's ratings, or None.

    Candidates are the non-``na`` conditions in schema order; the largest |t|
    wins and earlier candidates win ties.
    """
    if len(ratings) < 2 * crit.minlength:
        return None
    best = None
    for d in range(schema.num_dimensions):
        col = contexts[:, d]
        for c in range(schema.offsets[d] + 1, schema.offsets[d] + len(schema.conditions[d])):
            mask = col == c
            n1 = int(mask.sum())
            if n1 < crit.minlength or len(ratings) - n1 < crit.minlength:
                continue
            t = welch_t(ratings[mask], ratings[~mask])
            if t == 0.0 or two_sided_p(t) >= crit.alpha:
                continue
            if best is None or abs(t) > abs(best[1]):
                best = (c, t)
    return best


def _split_axis(table: RatingTable, crit: SplitCriterion, axis: str) -> tuple[RatingTable, SplitMap]:
    """Split along one axis, keeping contexts (needed when chaining splits)."""
    entities = table.items if axis == "item" else table.users
    ids = list(table.item_ids if axis == "item" else table.user_ids)
    n_orig = len(ids)
    splits: dict[int, Split] = {}
    new = entities.copy()
    order = np.argsort(entities, kind="stable")
    bounds = np.searchsorted(entities[order], np.arange(n_orig + 1))
    for e in range(n_orig):
        rows = order[bounds[e]:bounds[e + 1]]
        if len(rows) == 0:
            continue
        chosen = choose_split(table.ratings[rows], table.contexts[rows], table.schema, crit)
        if chosen is None:
            continue
        c, t = chosen
        holds, fails = len(ids), len(ids) + 1
        dim, cond = table.schema.name(c)
        ids += [f"{ids[e]}|{dim}={cond}", f"{ids[e]}|{dim}!={cond}"]
        splits[e] = Split(c, holds, fails, t)
        active = (table.contexts[rows] == c).any(axis=1)
        new[rows] = np.where(active, holds, fails)
    if axis == "item":
        out = RatingTable(table.schema, table.user_ids, tuple(ids), table.users, new, table.ratings,
                          table.contexts, table.scale, table.binarized)
    else:
        out = RatingTable(table.schema, tuple(ids), table.item_ids, new, table.items, table.ratings,
                          table.contexts, table.scale, table.binarized)
    return out, SplitMap(axis, n_orig, splits)


def drop_context(table: RatingTable) -> RatingTable:
    """The same ratings as a context-free table (one row per input row)."""
    return RatingTable(ContextSchema(), table.user_ids, table.item_ids, table.users, table.items,
                       table.ratings, np.zeros((len(table), 0), dtype=np.int64), table.scale, table.binarized)


def item_split(table: RatingTable, crit: SplitCriterion | None = None) -> tuple[RatingTable, SplitMap]:
    split, m = _split_axis(table, crit or SplitCriterion(), "item")
    return drop_context(split), m


def user_split(table: RatingTable, crit: SplitCriterion | None = None) -> tuple[RatingTable, SplitMap]:
    split, m = _split_axis(table, crit or SplitCriterion(), "user")
    return drop_context(split), m


def ui_split(table: RatingTable, crit: SplitCriterion | None = None) -> tuple[RatingTable, SplitMap, SplitMap]:
    crit = crit or SplitCriterion()
    by_item, imap = _split_axis(table, crit, "item")
    by_both, umap = _split_axis(by_item, crit, "user")
    return drop_context(by_both), imap, umap


class SplittingRecommender(Recommender):
    """Split the training data, then delegate to a traditional recommender."""

    def __init__(self, hp: HyperParams | None = None, variant: str = "itemsplitting",
                 traditional: str = "biasedmf", minlength: int = 2, alpha: float = 0.05):
        super().__init__(hp)
        self.variant = self.name = variant.lower()
        if self.variant not in ("itemsplitting", "usersplitting", "uisplitting"):
            raise ValueError(f"unknown splitting variant {variant!r}")
        traditional = (traditional or "biasedmf").lower()
        if traditional not in TRADITIONAL:
            raise ValueError(f"traditional recommender {traditional!r} is not a 2D algorithm; "
                             f"choose from {', '.join(TRADITIONAL)}")
        self.traditional = traditional
        self.criterion = SplitCriterion(alpha, int(minlength))
        self.ranking_only = self.traditional == "slim"

    def _fit(self, train):
        self.item_map = self.user_map = None
        if self.variant == "itemsplitting":
            split, self.item_map = item_split(train, self.criterion)
        elif self.variant == "usersplitting":
            split, self.user_map = user_split(train, self.criterion)
        else:
            split, self.item_map, self.user_map = ui_split(train, self.criterion)
        self.split_table = split
        self.inner = create(self.traditional, self.hp).fit(split)

    def route(self, users, items, contexts):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if self.item_map is not None:
            items = self.item_map.route_many(items, contexts)
        if self.user_map is not None:
            users = self.user_map.route_many(users, contexts)
        return users, items

    def _score(self, users, items, contexts):
        u, i = self.route(users, items, contexts)
        return self.inner.score(u, i, np.zeros((len(u), 0), dtype=np.int64))


for _name in ("itemsplitting", "usersplitting", "uisplitting"):
    register(_name)(lambda hp, _v=_name, **kw: SplittingRecommender(hp, _v, **kw))
