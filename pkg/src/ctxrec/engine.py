"""Generic recommender contract, hyperparameters and the shared SGD loop."""

from __future__ import annotations

import dataclasses
import importlib
import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core import CarsError, ContextSituation, RatingTable, UnknownConditionError

log = logging.getLogger(__name__)

EARLY_STOP_PATIENCE = 5
VALIDATION_FRACTION = 0.05


class UnknownAlgorithmError(CarsError, ValueError):
    pass


class TrainingDiverged(CarsError, FloatingPointError):
    pass


class TaskError(CarsError, ValueError):
    """The recommender cannot perform the requested task."""


@dataclass(frozen=True)
class HyperParams:
    num_factors: int = 10
    learn_rate: float = 0.01
    reg_user: float = 0.1
    reg_item: float = 0.1
    reg_context: float = 0.1
    l1_reg: float = 0.01
    l2_reg: float = 0.01
    num_iterations: int = 100
    early_stop_metric: str | None = None
    init_std: float = 0.01
    knn_k: int = 20
    knn_shrinkage: float = 10.0
    top_n: int = 10
    rand_seed: int = 1
    verbose: bool = False

    _positive = ("num_factors", "learn_rate", "knn_k", "top_n")
    _nonnegative = ("reg_user", "reg_item", "reg_context", "l1_reg", "l2_reg",
                    "num_iterations", "init_std", "knn_shrinkage")

    def __post_init__(self):
        for name in self._positive:
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"invalid hyperparameter {name}={value!r}: must be positive")
        for name in self._nonnegative:
            value = getattr(self, name)
            if not value >= 0 or not math.isfinite(value):
                raise ValueError(f"invalid hyperparameter {name}={value!r}: must be nonnegative")
        for name in ("num_factors", "num_iterations", "knn_k", "top_n", "rand_seed"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ValueError(f"invalid hyperparameter {name}: must be an integer")
        if self.early_stop_metric is not None and self.early_stop_metric.upper() not in ("RMSE", "MAE", "MPE"):
            raise ValueError(f"invalid hyperparameter early_stop_metric={self.early_stop_metric!r}")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)


def clamp(value, scale: tuple[float, float]):
    lo, hi = scale
    return np.clip(value, lo, hi)


class Recommender:
    """Base class.  Subclasses implement ``_fit`` and ``_score``.

    ``_score`` receives index arrays already sanitized by :meth:`_known`
    callers and returns raw (unclamped) scores.
    """

    name = ""
    ranking_only = False

    def __init__(self, hp: HyperParams | None = None):
        self.hp = hp or HyperParams()

    def fit(self, train: RatingTable) -> "Recommender":
        if len(train) == 0:
            raise ValueError("cannot fit on an empty table")
        self.schema = train.schema
        self.scale = train.scale
        self.num_users = train.num_users
        self.num_items = train.num_items
        self.user_seen = np.bincount(train.users, minlength=train.num_users) > 0
        self.item_seen = np.bincount(train.items, minlength=train.num_items) > 0
        self._fit(train)
        return self

    def _fit(self, train: RatingTable) -> None:
        raise NotImplementedError

    def _score(self, users: np.ndarray, items: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _known(self, users, items):
        """Clip indices into range; return them with seen-in-training masks."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        u_ok = (users >= 0) & (users < self.num_users)
        i_ok = (items >= 0) & (items < self.num_items)
        u = np.where(u_ok, users, 0)
        i = np.where(i_ok, items, 0)
        u_ok &= self.user_seen[u]
        i_ok &= self.item_seen[i]
        return u, i, u_ok, i_ok

    def score(self, users, items, contexts) -> np.ndarray:
        users = np.atleast_1d(np.asarray(users, dtype=np.int64))
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        n = max(len(users), len(items))
        users = np.broadcast_to(users, (n,))
        items = np.broadcast_to(items, (n,))
        nd = self.schema.num_dimensions
        if nd == 0:
            contexts = np.zeros((n, 0), dtype=np.int64)
        else:
            contexts = np.asarray(contexts, dtype=np.int64).reshape(-1, nd)
        if len(contexts) == 1 and n != 1:
            contexts = np.broadcast_to(contexts, (n, nd))
        return np.asarray(self._score(users, items, contexts), dtype=np.float64)

    def predict(self, user, item, situation) -> float:
        if self.ranking_only:
            raise TaskError(f"{self.name}: ranking-only recommender")
        active = self.schema.validate(situation)
        return float(clamp(self.score([user], [item], [active])[0], self.scale))

    def predict_batch(self, users, items, contexts) -> np.ndarray:
        if self.ranking_only:
            raise TaskError(f"{self.name}: ranking-only recommender")
        return clamp(self.score(users, items, contexts), self.scale)

    def rank(self, user, situation, candidates: Sequence[int], n: int) -> list[int]:
        return rank(self, user, situation, candidates, n)


_REGISTRY: dict[str, Callable[..., Recommender]] = {}
_MODULES = ("baselines", "splitting", "camf", "cslim", "cptf")


def register(*names: str):
    def deco(factory):
        for name in names:
            _REGISTRY[name.lower()] = factory
        return factory
    return deco


def algorithms() -> list[str]:
    for mod in _MODULES:
        importlib.import_module(f"{__package__}.{mod}")
    return sorted(_REGISTRY)


def create(algorithm: str, hp: HyperParams | None = None, **options) -> Recommender:
    names = algorithms()
    key = algorithm.strip().lower()
    if key not in _REGISTRY:
        raise UnknownAlgorithmError(f"unknown algorithm {algorithm!r}; valid: {', '.join(names)}")
    return _REGISTRY[key](hp or HyperParams(), **options)


def fit(algorithm: str, train: RatingTable, hp: HyperParams | None = None, **options) -> Recommender:
    """Train the named algorithm; ``options`` carry algorithm-specific settings."""
    return create(algorithm, hp, **options).fit(train)


def predict(model: Recommender, user: int, item: int, situation: ContextSituation | Sequence[int]) -> float:
    return model.predict(user, item, situation)


def rank(model: Recommender, user: int, situation, candidates: Sequence[int], n: int) -> list[int]:
    """Top-``n`` candidates by raw score, ties broken by ascending item index."""
    if n <= 0:
        raise ValueError(f"N must be positive, got {n}")
    cands = np.unique(np.asarray(list(candidates), dtype=np.int64))
    if len(cands) == 0:
        raise ValueError("empty candidate set")
    active = model.schema.validate(situation)
    scores = model.score(np.full(len(cands), user), cands, [active])
    order = np.lexsort((cands, -scores))
    return cands[order[:n]].tolist()


def early_stop_check(history: Sequence[float], patience: int = EARLY_STOP_PATIENCE) -> bool:
    """True once the best (lowest) value is ``patience`` or more evaluations old."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if not history:
        return False
    best = int(np.argmin(history))
    return len(history) - 1 - best >= patience


class TrainData(NamedTuple):
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    contexts: np.ndarray

    def take(self, idx) -> "TrainData":
        return TrainData(*(a[idx] for a in self))

    def __len__(self):
        return len(self.ratings)


def _validation_metric(name: str, actual, predicted) -> float:
    from .evaluation import mae, mpe, rmse
    pairs = list(zip(actual.tolist(), predicted.tolist()))
    return {"RMSE": rmse, "MAE": mae, "MPE": mpe}[name.upper()](pairs)


class SGDRecommender(Recommender):
    """Per-rating SGD with a bold-driver step size.

    After each epoch the objective is recomputed; if it went up the epoch is
    rolled back and the step halved, otherwise the step grows by 5%.  The
    accepted objective sequence is therefore non-increasing.
    """

    def _fit(self, train: RatingTable) -> None:
        hp = self.hp
        rng = np.random.default_rng(hp.rand_seed)
        data = self._prepare(train)
        val = None
        if hp.early_stop_metric and hp.num_iterations > 0 and len(data) >= 2:
            n_val = max(1, int(round(VALIDATION_FRACTION * len(data))))
            perm = rng.permutation(len(data))
            val = data.take(np.sort(perm[:n_val]))
            data = data.take(np.sort(perm[n_val:]))
        self.params = self._init_params(train, rng)
        with np.errstate(over="ignore", invalid="ignore"):
            self.loss_history = [self._objective(self.params, data)]
        self.lr_history = []
        val_history, best = [], None
        lr = hp.learn_rate
        for it in range(hp.num_iterations):
            snapshot = {k: v.copy() for k, v in self.params.items()}
            self._epoch(self.params, data, rng.permutation(len(data)), lr)
            for key, value in self.params.items():
                if not np.all(np.isfinite(value)):
                    raise TrainingDiverged(f"{self.name}: training diverged at iteration {it + 1} ({key})")
            with np.errstate(over="ignore", invalid="ignore"):
                loss = self._objective(self.params, data)
            self.lr_history.append(lr)
            # an overflowing (inf/nan) loss counts as an increase
            if not loss <= self.loss_history[-1]:
                self.params = snapshot
                lr *= 0.5
                loss = self.loss_history[-1]
            else:
                lr *= 1.05
            self.loss_history.append(loss)
            if hp.verbose:
                log.info("%s iter %d: loss=%.6f lr=%.5g", self.name, it + 1, loss, lr)
            if val is not None:
                pred = clamp(self._raw(self.params, val.users, val.items, val.contexts), self.scale)
                val_history.append(_validation_metric(hp.early_stop_metric, val.ratings, pred))
                if best is None or val_history[-1] < min(val_history[:-1]):
                    best = {k: v.copy() for k, v in self.params.items()}
                if early_stop_check(val_history, EARLY_STOP_PATIENCE):
                    self.params = best
                    break
        self.val_history = val_history
        self._finish(train)

    def _finish(self, train: RatingTable) -> None:
        pass

    # subclass hooks
    def _prepare(self, train: RatingTable) -> TrainData:
        return TrainData(train.users, train.items, train.ratings, train.contexts)

    def _init_params(self, train: RatingTable, rng: np.random.Generator) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _epoch(self, params, data: TrainData, order: np.ndarray, lr: float) -> None:
        raise NotImplementedError

    def _raw(self, params, users, items, contexts) -> np.ndarray:
        raise NotImplementedError

    def _objective(self, params, data: TrainData) -> float:
        raise NotImplementedError

    def _gradient(self, params, data: TrainData) -> dict[str, np.ndarray]:
        raise NotImplementedError
