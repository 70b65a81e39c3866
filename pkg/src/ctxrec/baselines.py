"""Non-contextual and context-average baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import RatingTable
from .engine import HyperParams, Recommender, SGDRecommender, TrainData, register


@dataclass(frozen=True)
class RatingMatrix:
    """Context-free (user, item, rating) entries, one per distinct pair."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    num_users: int
    num_items: int

    def __len__(self):
        return len(self.ratings)

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Ratings filled with 0 where missing, and the observed mask."""
        R = np.zeros((self.num_users, self.num_items))
        M = np.zeros((self.num_users, self.num_items), dtype=bool)
        R[self.users, self.items] = self.ratings
        M[self.users, self.items] = True
        return R, M


def collapse_context(table: RatingTable) -> RatingMatrix:
    """Average duplicate (user, item) ratings across situations.

    Entries are ordered by the first appearance of each pair.
    """
    if len(table) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return RatingMatrix(empty, empty, np.zeros(0), table.num_users, table.num_items)
    keys = table.users * table.num_items + table.items
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    sums = np.bincount(inverse, weights=table.ratings)
    counts = np.bincount(inverse)
    order = np.argsort(first, kind="stable")
    rows = first[order]
    return RatingMatrix(table.users[rows].copy(), table.items[rows].copy(), (sums / counts)[order],
                        table.num_users, table.num_items)


def _group_means(keys: np.ndarray, values: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(keys, minlength=size)
    sums = np.bincount(keys, weights=values, minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan), counts


AVERAGE_VARIANTS = ("globalavg", "useravg", "itemavg", "useritemavg",
                    "contextavg", "itemcontextavg", "usercontextavg")


class AveragesRecommender(Recommender):
    """Closed-form averages over the contextual rows.

    Empty cells fall back to the user/item components that exist and finally
    to the global mean.
    """

    def __init__(self, hp: HyperParams | None = None, variant: str = "globalavg"):
        super().__init__(hp)
        variant = variant.lower()
        if variant not in AVERAGE_VARIANTS:
            raise ValueError(f"unknown average variant {variant!r}")
        self.variant = self.name = variant

    def _fit(self, train: RatingTable) -> None:
        r = train.ratings
        self.mu = float(r.mean())
        self.user_mean, _ = _group_means(train.users, r, train.num_users)
        self.item_mean, _ = _group_means(train.items, r, train.num_items)
        ctx = [tuple(c) for c in train.contexts.tolist()]
        self.ctx_mean = self._cell_means(ctx, r)
        self.item_ctx_mean = self._cell_means([(i,) + c for i, c in zip(train.items.tolist(), ctx)], r)
        self.user_ctx_mean = self._cell_means([(u,) + c for u, c in zip(train.users.tolist(), ctx)], r)

    @staticmethod
    def _cell_means(keys, ratings) -> dict:
        sums: dict = {}
        for k, v in zip(keys, ratings.tolist()):
            s = sums.setdefault(k, [0.0, 0])
            s[0] += v
            s[1] += 1
        return {k: s / n for k, (s, n) in sums.items()}

    def _user_item(self, u, i, u_ok, i_ok):
        out = np.full(len(u), self.mu)
        out += np.where(u_ok, np.nan_to_num(self.user_mean[u] - self.mu), 0.0)
        out += np.where(i_ok, np.nan_to_num(self.item_mean[i] - self.mu), 0.0)
        return out

    def _score(self, users, items, contexts):
        u, i, u_ok, i_ok = self._known(users, items)
        v = self.variant
        if v == "globalavg":
            return np.full(len(u), self.mu)
        if v == "useritemavg":
            return self._user_item(u, i, u_ok, i_ok)
        user_part = np.where(u_ok, self.user_mean[u], self.mu)
        item_part = np.where(i_ok, self.item_mean[i], self.mu)
        if v == "useravg":
            return user_part
        if v == "itemavg":
            return item_part
        ctx = [tuple(c) for c in contexts.tolist()]
        if v == "contextavg":
            return np.array([self.ctx_mean.get(c, self.mu) for c in ctx])
        if v == "itemcontextavg":
            return np.array([self.item_ctx_mean.get((int(ii),) + c, fb) if ok else fb
                             for ii, ok, c, fb in zip(i, i_ok, ctx, item_part)])
        return np.array([self.user_ctx_mean.get((int(uu),) + c, fb) if ok else fb
                         for uu, ok, c, fb in zip(u, u_ok, ctx, user_part)])


for _variant in AVERAGE_VARIANTS:
    register(_variant)(lambda hp, _v=_variant, **kw: AveragesRecommender(hp, _v))


def pearson_similarity(R: np.ndarray, M: np.ndarray, shrinkage: float = 0.0) -> np.ndarray:
    """Row-row Pearson correlation over co-rated columns, shrunk by n/(n+shrinkage).

    Pairs with fewer than two co-rated columns or zero variance get 0; the
    diagonal is 0.
    """
    Mf = M.astype(np.float64)
    R = np.where(M, R, 0.0)
    n = Mf @ Mf.T
    sx = R @ Mf.T
    sy = sx.T
    sxx = (R * R) @ Mf.T
    syy = sxx.T
    sxy = R @ R.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = sxy - sx * sy / n
        vx = sxx - sx * sx / n
        vy = syy - sy * sy / n
        sim = cov / np.sqrt(vx * vy)
    tiny = 1e-12 * np.maximum(1.0, np.abs(sxx) + np.abs(syy))
    ok = (n >= 2) & (vx > tiny) & (vy > tiny)
    sim = np.where(ok, np.clip(sim, -1.0, 1.0), 0.0)
    if shrinkage > 0:
        sim *= n / (n + shrinkage)
    np.fill_diagonal(sim, 0.0)
    return sim


class KnnRecommender(Recommender):
    """User- or item-based neighbourhood model on the collapsed matrix."""

    def __init__(self, hp: HyperParams | None = None, variant: str = "userknn"):
        super().__init__(hp)
        self.variant = self.name = variant.lower()
        if self.variant not in ("userknn", "itemknn"):
            raise ValueError(f"unknown knn variant {variant!r}")

    def _fit(self, train: RatingTable) -> None:
        R, M = collapse_context(train).dense()
        if self.variant == "itemknn":
            R, M = R.T.copy(), M.T.copy()
        self.R, self.M = R, M
        with np.errstate(invalid="ignore", divide="ignore"):
            self.means = np.where(M.any(1), R.sum(1) / np.maximum(M.sum(1), 1), np.nan)
        self.sim = pearson_similarity(R, M, self.hp.knn_shrinkage)
        self.fallback = AveragesRecommender(self.hp, "useritemavg").fit(train)

    def neighbours(self, a: int, b: int) -> np.ndarray:
        """Top-k positive-similarity rows of ``a`` that rated column ``b``."""
        cand = np.flatnonzero(self.M[:, b] & (self.sim[a] > 0))
        cand = cand[cand != a]
        order = np.lexsort((cand, -self.sim[a, cand]))
        return cand[order[: self.hp.knn_k]]

    def _score(self, users, items, contexts):
        u, i, u_ok, i_ok = self._known(users, items)
        out = self.fallback._score(users, items, contexts)
        rows, cols = (u, i) if self.variant == "userknn" else (i, u)
        for k in np.flatnonzero(u_ok & i_ok):
            a, b = int(rows[k]), int(cols[k])
            nb = self.neighbours(a, b)
            if len(nb) == 0:
                continue
            s = self.sim[a, nb]
            out[k] = self.means[a] + np.sum(s * (self.R[nb, b] - self.means[nb])) / np.sum(np.abs(s))
        return out


register("userknn")(lambda hp, **kw: KnnRecommender(hp, "userknn"))
register("itemknn")(lambda hp, **kw: KnnRecommender(hp, "itemknn"))


class MfRecommender(SGDRecommender):
    """PMF (``p.q``) or BiasedMF (``mu + b_u + b_i + p.q``) on the collapsed matrix."""

    def __init__(self, hp: HyperParams | None = None, variant: str = "biasedmf"):
        super().__init__(hp)
        self.variant = self.name = variant.lower()
        if self.variant not in ("pmf", "biasedmf"):
            raise ValueError(f"unknown mf variant {variant!r}")
        self.use_bias = self.variant == "biasedmf"

    def _prepare(self, train):
        m = collapse_context(train)
        return TrainData(m.users, m.items, m.ratings, np.zeros((len(m), 0), dtype=np.int64))

    def _init_params(self, train, rng):
        f, std = self.hp.num_factors, self.hp.init_std
        data = self._prepare(train)
        return {
            "mu": np.array([data.ratings.mean() if self.use_bias else 0.0]),
            "P": rng.normal(0.0, std, (train.num_users, f)),
            "Q": rng.normal(0.0, std, (train.num_items, f)),
            "bu": np.zeros(train.num_users),
            "bi": np.zeros(train.num_items),
        }

    def _epoch(self, params, data, order, lr):
        hp = self.hp
        _kernels.mf_epoch(data.users, data.items, data.ratings, order, params["mu"][0], params["bu"],
                          params["bi"], params["P"], params["Q"], lr, hp.reg_user, hp.reg_item, self.use_bias)

    def _raw(self, params, users, items, contexts):
        u, i = users, items
        dot = np.einsum("nk,nk->n", params["P"][u], params["Q"][i])
        if not self.use_bias:
            return dot
        return params["mu"][0] + params["bu"][u] + params["bi"][i] + dot

    def _objective(self, params, data):
        u, i = data.users, data.items
        e = data.ratings - self._raw(params, u, i, None)
        reg = np.sum(params["P"][u] ** 2) * self.hp.reg_user + np.sum(params["Q"][i] ** 2) * self.hp.reg_item
        if self.use_bias:
            reg += self.hp.reg_user * np.sum(params["bu"][u] ** 2) + self.hp.reg_item * np.sum(params["bi"][i] ** 2)
        return float(0.5 * np.sum(e * e) + 0.5 * reg)

    def _gradient(self, params, data):
        hp = self.hp
        u, i = data.users, data.items
        e = data.ratings - self._raw(params, u, i, None)
        P, Q = params["P"], params["Q"]
        grad = {k: np.zeros_like(v) for k, v in params.items()}
        np.add.at(grad["P"], u, -e[:, None] * Q[i] + hp.reg_user * P[u])
        np.add.at(grad["Q"], i, -e[:, None] * P[u] + hp.reg_item * Q[i])
        if self.use_bias:
            np.add.at(grad["bu"], u, -e + hp.reg_user * params["bu"][u])
            np.add.at(grad["bi"], i, -e + hp.reg_item * params["bi"][i])
        return grad

    def _score(self, users, items, contexts):
        u, i, u_ok, i_ok = self._known(users, items)
        p = self.params
        out = np.full(len(u), p["mu"][0])
        if self.use_bias:
            out += np.where(u_ok, p["bu"][u], 0.0) + np.where(i_ok, p["bi"][i], 0.0)
        out += np.where(u_ok & i_ok, np.einsum("nk,nk->n", p["P"][u], p["Q"][i]), 0.0)
        return out


register("pmf")(lambda hp, **kw: MfRecommender(hp, "pmf"))
register("biasedmf")(lambda hp, **kw: MfRecommender(hp, "biasedmf"))


def linear_scores(X: np.ndarray, W: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Row-wise ``X[t] . W[:, items[t]]``; shared by SLIM and CSLIM scoring."""
    return np.einsum("nj,nj->n", X, W[:, items].T)


def slim_objective(R: np.ndarray, W: np.ndarray, l1: float, l2: float) -> float:
    res = R - R @ W
    return float(0.5 * np.sum(res * res) + l1 * np.sum(np.abs(W)) + 0.5 * l2 * np.sum(W * W))


def fit_slim_weights(R: np.ndarray, l1: float, l2: float, sweeps: int, tol: float = 0.0):
    """Column-wise nonnegative elastic net by cyclic coordinate descent.

    Returns ``W`` and the objective after every sweep (first entry: ``W = 0``).
    """
    n = R.shape[1]
    G = R.T @ R
    W = np.zeros((n, n))
    history = [slim_objective(R, W, l1, l2)]
    for _ in range(sweeps):
        before = W.copy()
        for i in range(n):
            col = np.ascontiguousarray(W[:, i])
            _kernels.cd_sweep(G, np.ascontiguousarray(G[:, i]), col, l1, l2, i)
            W[:, i] = col
        history.append(slim_objective(R, W, l1, l2))
        if np.max(np.abs(W - before), initial=0.0) <= tol:
            break
    return W, history


class SlimRecommender(Recommender):
    """Item-item sparse linear model; ``score(u, i) = sum_j R[u, j] W[j, i]``."""

    name = "slim"
    ranking_only = True

    def _fit(self, train):
        self.R, _ = collapse_context(train).dense()
        self.W, self.objective_history = fit_slim_weights(
            self.R, self.hp.l1_reg, self.hp.l2_reg, self.hp.num_iterations, tol=1e-12)

    def _score(self, users, items, contexts):
        u, i, u_ok, i_ok = self._known(users, items)
        return np.where(u_ok & i_ok, linear_scores(self.R[u], self.W, i), 0.0)


register("slim")(lambda hp, **kw: SlimRecommender(hp))
