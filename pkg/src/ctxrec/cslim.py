"""Contextual SLIM (top-N only).

For a contextual rating (u, i, c) the model scores

    score = sum_{j in I_u, j != i} (R[u, j] + D_j(c)) * W[j, i]

with ``D_j(c)`` the summed deviations of the active conditions: ``dev[c]``
(C), ``dev[j, c]`` (CI), ``dev[u, c]`` (CU) or both of the latter (CUCI).
Training minimizes

    sum_t (r_t - score_t)^2 + l1 |W|_1 + l2/2 |W|^2 + reg_context |dev|^2

with W >= 0 and diag(W) = 0, alternating one deviation descent step with one
coordinate-descent pass over every column of W.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .baselines import collapse_context, linear_scores
from .engine import HyperParams, Recommender, TrainingDiverged, register

VARIANTS = {"cslim_c": (1, 0, 0), "cslim_ci": (0, 1, 0), "cslim_cu": (0, 0, 1), "cslim_cuci": (0, 1, 1)}


class CslimRecommender(Recommender):
    ranking_only = True

    def __init__(self, hp: HyperParams | None = None, variant: str = "cslim_c"):
        super().__init__(hp)
        self.variant = self.name = variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown CSLIM variant {variant!r}")
        self.use_c, self.use_i, self.use_u = VARIANTS[self.variant]

    # -- parameter plumbing -------------------------------------------------
    def init_deviations(self, num_users: int, num_items: int, num_conditions: int) -> dict:
        devs = {}
        if self.use_c:
            devs["dev_c"] = np.zeros(num_conditions)
        if self.use_i:
            devs["dev_i"] = np.zeros((num_items, num_conditions))
        if self.use_u:
            devs["dev_u"] = np.zeros((num_users, num_conditions))
        return devs

    def design(self, devs, users, items, contexts) -> np.ndarray:
        """Rows ``X[t, j] = M[u, j] (R[u, j] + D_j(c_t))`` with ``X[t, i_t] = 0``."""
        M = self.M[users]
        X = self.R[users].copy()
        shift = np.zeros(len(users))
        for d in range(contexts.shape[1]):
            c = contexts[:, d]
            if self.use_c:
                shift += devs["dev_c"][c]
            if self.use_u:
                shift += devs["dev_u"][users, c]
            if self.use_i:
                X += M * devs["dev_i"].T[c]
        X += M * shift[:, None]
        X[np.arange(len(users)), items] = 0.0
        return X

    def objective(self, W, devs, data) -> float:
        u, i, r, ctx = data
        e = r - linear_scores(self.design(devs, u, i, ctx), W, i)
        dev_sq = sum(float(np.sum(v * v)) for v in devs.values())
        hp = self.hp
        return float(np.sum(e * e) + hp.l1_reg * np.sum(np.abs(W)) + 0.5 * hp.l2_reg * np.sum(W * W)
                     + hp.reg_context * dev_sq)

    def gradient(self, W, devs, data) -> dict:
        """Gradient of :meth:`objective`; the L1 term uses sign(W)."""
        hp = self.hp
        u, i, r, ctx = data
        X = self.design(devs, u, i, ctx)
        e = r - linear_scores(X, W, i)
        grad = {"W": np.zeros_like(W)}
        np.add.at(grad["W"].T, i, -2.0 * e[:, None] * X)
        grad["W"] += hp.l1_reg * np.sign(W) + hp.l2_reg * W
        # d score / d shift = sum of W[j, i] over the profile (i excluded)
        Mx = self.M[u].astype(np.float64)
        Mx[np.arange(len(u)), i] = 0.0
        Wcols = W[:, i].T
        s = np.sum(Mx * Wcols, axis=1)
        for key, v in devs.items():
            g = 2.0 * hp.reg_context * v
            for d in range(ctx.shape[1]):
                c = ctx[:, d]
                if key == "dev_c":
                    np.add.at(g, c, -2.0 * e * s)
                elif key == "dev_u":
                    np.add.at(g, (u, c), -2.0 * e * s)
                else:
                    np.add.at(g.T, c, -2.0 * e[:, None] * Mx * Wcols)
            grad[key] = g
        return grad

    # -- training -----------------------------------------------------------
    def _fit(self, train):
        hp = self.hp
        R, M = collapse_context(train).dense()
        self.R, self.M = R, M.astype(np.float64)
        data = (train.users, train.items, train.ratings, train.contexts)
        self.W = np.zeros((train.num_items, train.num_items))
        self.devs = self.init_deviations(train.num_users, train.num_items, train.schema.num_conditions)
        self.objective_history = [self.objective(self.W, self.devs, data)]
        for sweep in range(hp.num_iterations):
            self._deviation_step(data)
            self._w_pass(data)
            if not np.all(np.isfinite(self.W)) or not all(np.all(np.isfinite(v)) for v in self.devs.values()):
                raise TrainingDiverged(f"{self.name}: training diverged at iteration {sweep + 1}")
            self.objective_history.append(self.objective(self.W, self.devs, data))
            if abs(self.objective_history[-2] - self.objective_history[-1]) <= 1e-12 * max(
                    1.0, abs(self.objective_history[-1])):
                break

    def _deviation_step(self, data):
        """Steepest descent with exact line search; the objective is quadratic in the deviations."""
        if not self.devs:
            return
        J0 = self.objective(self.W, self.devs, data)
        g = {k: v for k, v in self.gradient(self.W, self.devs, data).items() if k != "W"}
        gg = sum(float(np.sum(v * v)) for v in g.values())
        if gg == 0.0:
            return
        probe = 1.0 / np.sqrt(gg)
        J1 = self.objective(self.W, {k: self.devs[k] - probe * g[k] for k in g}, data)
        curv = 2.0 * (J1 - J0 + probe * gg) / probe ** 2
        if curv <= 0:
            return
        step = gg / curv
        trial = {k: self.devs[k] - step * g[k] for k in g}
        if self.objective(self.W, trial, data) < J0:
            self.devs = trial

    def _w_pass(self, data):
        u, i, r, ctx = data
        hp = self.hp
        X = self.design(self.devs, u, i, ctx)
        for col in np.unique(i):
            rows = i == col
            Xc = X[rows]
            G = Xc.T @ Xc
            b = Xc.T @ r[rows]
            w = np.ascontiguousarray(self.W[:, col])
            # objective / 2 puts the column problem in the solver's canonical form
            _kernels.cd_sweep(G, b, w, 0.5 * hp.l1_reg, 0.5 * hp.l2_reg, int(col))
            self.W[:, col] = w

    # -- scoring ------------------------------------------------------------
    def _score(self, users, items, contexts):
        u, i, u_ok, i_ok = self._known(users, items)
        X = self.design(self.devs, u, i, contexts)
        return np.where(u_ok & i_ok, linear_scores(X, self.W, i), 0.0)


for _name in VARIANTS:
    register(_name)(lambda hp, _v=_name, **kw: CslimRecommender(hp, _v))
