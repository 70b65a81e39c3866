"""Evaluation protocols and metrics."""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .core import RatingTable
from .engine import HyperParams, TaskError, create

RATING_METRICS = ("MAE", "RMSE", "MPE")
RANKING_METRICS = ("Pre", "Rec", "MAP", "NDCG", "MRR")
MPE_DELTA = 1e-5


@dataclass(frozen=True)
class CrossValidation:
    k: int = 5
    seed: int = 1
    parallel: bool = False
    test_view: str = "all"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.test_view != "all":
            raise ValueError(f"unsupported test view: {self.test_view}")


@dataclass(frozen=True)
class GivenRatio:
    ratio: float = 0.8
    seed: int = 1

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ValueError(f"ratio must be in (0, 1), got {self.ratio}")


Protocol = CrossValidation | GivenRatio


@dataclass
class EvalReport:
    algorithm: str
    task: str
    metrics: dict[str, float]
    per_fold: list[dict[str, float]] = field(default_factory=list)
    params: str = ""


def kfold_split(table: RatingTable | int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle then round-robin assignment; returns sorted row indices per fold."""
    n = table if isinstance(table, int) else len(table)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % k
    return [np.flatnonzero(fold_of == f) for f in range(k)]


def ratio_split(table: RatingTable | int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """First ceil(ratio * n) rows of a seeded shuffle train, the rest test."""
    n = table if isinstance(table, int) else len(table)
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    perm = np.random.default_rng(seed).permutation(n)
    cut = math.ceil(ratio * n)
    if cut == 0 or cut == n:
        raise ValueError(f"ratio {ratio} on {n} rows leaves an empty train or test side")
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def _pairs(pairs) -> np.ndarray:
    arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("no prediction pairs")
    return arr


def mae(pairs) -> float:
    a = _pairs(pairs)
    return float(np.mean(np.abs(a[:, 0] - a[:, 1])))


def rmse(pairs) -> float:
    a = _pairs(pairs)
    return float(np.sqrt(np.mean((a[:, 0] - a[:, 1]) ** 2)))


def mpe(pairs, delta: float = MPE_DELTA) -> float:
    """Fraction of predictions off by more than ``delta``."""
    a = _pairs(pairs)
    return float(np.mean(np.abs(a[:, 0] - a[:, 1]) > delta))


def ranking_metrics(rec_lists: Mapping[Hashable, Sequence], relevant: Mapping[Hashable, Iterable],
                    n: int) -> dict[str, float]:
    """Precision/recall at ``n``, MAP, NDCG and MRR averaged over keys."""
    if n <= 0:
        raise ValueError(f"N must be positive, got {n}")
    totals = dict.fromkeys(RANKING_METRICS, 0.0)
    keys = list(relevant)
    if not keys:
        raise ValueError("no ranking queries")
    for key in keys:
        rel = set(relevant[key])
        if not rel:
            raise ValueError(f"empty relevant set for {key!r}")
        recs = list(rec_lists.get(key, []))[:n]
        hits = [p for p, item in enumerate(recs, 1) if item in rel]
        idcg = sum(1.0 / math.log2(p + 1) for p in range(1, min(n, len(rel)) + 1))
        totals["Pre"] += len(hits) / n
        totals["Rec"] += len(hits) / len(rel)
        totals["MAP"] += sum((h + 1) / p for h, p in enumerate(hits)) / len(rel)
        totals["NDCG"] += sum(1.0 / math.log2(p + 1) for p in hits) / idcg
        totals["MRR"] += 1.0 / hits[0] if hits else 0.0
    return {m: v / len(keys) for m, v in totals.items()}


def relevance_cutoff(table: RatingTable) -> float:
    """1 for binarized data, else the midpoint of the rating scale."""
    if table.binarized:
        return 1.0
    lo, hi = table.scale
    return (lo + hi) / 2.0


def _rating_fold(model, test: RatingTable, mpe_delta: float) -> dict[str, float]:
    pred = model.predict_batch(test.users, test.items, test.contexts)
    pairs = np.column_stack([test.ratings, pred])
    return {"MAE": mae(pairs), "RMSE": rmse(pairs), "MPE": mpe(pairs, mpe_delta)}


def _ranking_fold(model, train: RatingTable, test: RatingTable, top_n: int,
                  threshold: float | None) -> dict[str, float]:
    cutoff = relevance_cutoff(test) if threshold is None else threshold
    seen = defaultdict(set)
    for u, i, c in zip(train.users.tolist(), train.items.tolist(), map(tuple, train.contexts.tolist())):
        seen[(u, c)].add(i)
    relevant = defaultdict(set)
    for u, i, r, c in zip(test.users.tolist(), test.items.tolist(), test.ratings.tolist(),
                          map(tuple, test.contexts.tolist())):
        if threshold is not None and threshold < 0 or r >= cutoff:
            relevant[(u, c)].add(i)
    all_items = np.arange(train.num_items)
    recs = {}
    for (u, c) in sorted(relevant):
        cands = np.setdiff1d(all_items, np.fromiter(seen.get((u, c), ()), dtype=np.int64))
        if len(cands) == 0:
            recs[(u, c)] = []
            continue
        scores = model.score(np.full(len(cands), u), cands, [c])
        order = np.lexsort((cands, -scores))
        recs[(u, c)] = cands[order[:top_n]].tolist()
    if not relevant:
        return dict.fromkeys(RANKING_METRICS, 0.0)
    return ranking_metrics(recs, relevant, top_n)


def evaluate(algorithm: str, table: RatingTable, protocol: Protocol, task: str = "rating",
             hp: HyperParams | None = None, options: Mapping | None = None, *,
             relevance_threshold: float | None = None, mpe_delta: float = MPE_DELTA,
             params: str = "") -> EvalReport:
    """Fit on each training split and score its test split.

    ``relevance_threshold``: ``None`` uses :func:`relevance_cutoff`; a
    negative value makes every test item relevant.
    """
    hp = hp or HyperParams()
    options = dict(options or {})
    if task not in ("rating", "ranking"):
        raise ValueError(f"unknown task {task!r}")
    probe = create(algorithm, hp, **options)
    if task == "rating" and probe.ranking_only:
        raise TaskError(f"{algorithm}: ranking-only recommender")
    if isinstance(protocol, CrossValidation):
        folds = kfold_split(table, protocol.k, protocol.seed)
        everything = np.arange(len(table))
        splits = [(np.setdiff1d(everything, f), f) for f in folds]
        parallel = protocol.parallel
    else:
        splits = [ratio_split(table, protocol.ratio, protocol.seed)]
        parallel = False

    def run(split):
        train, test = table.subset(split[0]), table.subset(split[1])
        model = create(algorithm, hp, **options).fit(train)
        if task == "rating":
            return _rating_fold(model, test, mpe_delta)
        return _ranking_fold(model, train, test, hp.top_n, relevance_threshold)

    if parallel and len(splits) > 1:
        with ThreadPoolExecutor() as pool:
            per_fold = list(pool.map(run, splits))
    else:
        per_fold = [run(s) for s in splits]
    names = RATING_METRICS if task == "rating" else RANKING_METRICS
    metrics = {m: math.fsum(f[m] for f in per_fold) / len(per_fold) for m in names}
    return EvalReport(algorithm.lower(), task, metrics, per_fold, params)
