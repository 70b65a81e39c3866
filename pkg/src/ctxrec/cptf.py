"""CP tensor factorization over (user, item, dimension_1, ..., dimension_D).

``score = sum_k P[u, k] * Q[i, k] * prod_d Z[c_d, k]`` where ``Z`` stacks one
factor row per global condition (``na`` included).  No bias terms.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .engine import SGDRecommender, register


def cp_score(P, Q, Z, users, items, contexts) -> np.ndarray:
    prod = P[users] * Q[items]
    for d in range(contexts.shape[1]):
        prod = prod * Z[contexts[:, d]]
    return prod.sum(axis=1)


class CptfRecommender(SGDRecommender):
    name = "cptf"

    def _init_params(self, train, rng):
        f, std = self.hp.num_factors, self.hp.init_std
        return {
            "P": rng.normal(0.0, std, (train.num_users, f)),
            "Q": rng.normal(0.0, std, (train.num_items, f)),
            # near 1 so training starts close to plain MF; zeros would kill every gradient
            "Z": 1.0 + rng.normal(0.0, std, (train.schema.num_conditions, f)),
        }

    def _epoch(self, params, data, order, lr):
        hp = self.hp
        _kernels.cptf_epoch(data.users, data.items, data.ratings, data.contexts, order, params["P"],
                            params["Q"], params["Z"], lr, hp.reg_user, hp.reg_item, hp.reg_context)

    def _raw(self, params, users, items, contexts):
        return cp_score(params["P"], params["Q"], params["Z"], users, items, contexts)

    def _objective(self, params, data):
        hp = self.hp
        u, i, ctx = data.users, data.items, data.contexts
        e = data.ratings - self._raw(params, u, i, ctx)
        reg = hp.reg_user * np.sum(params["P"][u] ** 2) + hp.reg_item * np.sum(params["Q"][i] ** 2)
        reg += hp.reg_context * np.sum(params["Z"][ctx] ** 2)
        return float(0.5 * np.sum(e * e) + 0.5 * reg)

    def _gradient(self, params, data):
        hp = self.hp
        P, Q, Z = params["P"], params["Q"], params["Z"]
        u, i, ctx = data.users, data.items, data.contexts
        e = data.ratings - self._raw(params, u, i, ctx)
        zs = [Z[ctx[:, d]] for d in range(ctx.shape[1])]
        zprod = np.prod(zs, axis=0) if zs else np.ones_like(P[u])
        grad = {k: np.zeros_like(v) for k, v in params.items()}
        np.add.at(grad["P"], u, -e[:, None] * Q[i] * zprod + hp.reg_user * P[u])
        np.add.at(grad["Q"], i, -e[:, None] * P[u] * zprod + hp.reg_item * Q[i])
        for d in range(ctx.shape[1]):
            others = np.prod([z for k, z in enumerate(zs) if k != d], axis=0) if len(zs) > 1 else 1.0
            np.add.at(grad["Z"], ctx[:, d], -e[:, None] * P[u] * Q[i] * others + hp.reg_context * zs[d])
        return grad

    def _score(self, users, items, contexts):
        u, i, u_ok, i_ok = self._known(users, items)
        return np.where(u_ok & i_ok, self._raw(self.params, u, i, contexts), 0.0)


register("cptf")(lambda hp, **kw: CptfRecommender(hp))
