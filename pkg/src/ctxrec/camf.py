"""Context-aware matrix factorization.

Deviation variants add per-condition rating deviations to a biased MF score:

    score = mu + b_u + b_i + p_u.q_i + sum over active conditions c of
            dev[c] (C) | dev[i, c] (CI) | dev[u, c] (CU) | dev[u, c] + dev[i, c] (CUCI)

Similarity variants multiply the biased MF score by a situation similarity
``gamma`` in (0, 1], the product over dimensions of the active condition's
similarity to that dimension's ``na`` anchor (ICS: a learned scalar, LCS:
``(1 + cos) / 2`` of latent vectors, MCS: ``1 / (1 + total axis distance)``).
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .engine import HyperParams, SGDRecommender, register

DEVIATION_VARIANTS = {"camf_c": (1, 0, 0), "camf_ci": (0, 1, 0), "camf_cu": (0, 0, 1), "camf_cuci": (0, 1, 1)}
SIMILARITY_VARIANTS = ("camf_ics", "camf_lcs", "camf_mcs")
ICS_FLOOR = 1e-3


def _backbone_init(train, hp, rng):
    f, std = hp.num_factors, hp.init_std
    return {
        "mu": np.array([train.ratings.mean()]),
        "P": rng.normal(0.0, std, (train.num_users, f)),
        "Q": rng.normal(0.0, std, (train.num_items, f)),
        "bu": np.zeros(train.num_users),
        "bi": np.zeros(train.num_items),
    }


def _backbone_raw(params, u, i):
    return (params["mu"][0] + params["bu"][u] + params["bi"][i]
            + np.einsum("nk,nk->n", params["P"][u], params["Q"][i]))


def _backbone_reg(params, hp, u, i):
    return (hp.reg_user * (np.sum(params["bu"][u] ** 2) + np.sum(params["P"][u] ** 2))
            + hp.reg_item * (np.sum(params["bi"][i] ** 2) + np.sum(params["Q"][i] ** 2)))


def _backbone_grad(grad, params, hp, u, i, g):
    """Accumulate gradients for a score ``s = gamma * backbone`` with ``g = -e * gamma``."""
    np.add.at(grad["bu"], u, g + hp.reg_user * params["bu"][u])
    np.add.at(grad["bi"], i, g + hp.reg_item * params["bi"][i])
    np.add.at(grad["P"], u, g[:, None] * params["Q"][i] + hp.reg_user * params["P"][u])
    np.add.at(grad["Q"], i, g[:, None] * params["P"][u] + hp.reg_item * params["Q"][i])


def _backbone_cold(params, u, i, u_ok, i_ok):
    out = np.full(len(u), params["mu"][0])
    out += np.where(u_ok, params["bu"][u], 0.0) + np.where(i_ok, params["bi"][i], 0.0)
    out += np.where(u_ok & i_ok, np.einsum("nk,nk->n", params["P"][u], params["Q"][i]), 0.0)
    return out


class CamfRecommender(SGDRecommender):
    def __init__(self, hp: HyperParams | None = None, variant: str = "camf_c",
                 learn_deviations: bool = True):
        super().__init__(hp)
        self.variant = self.name = variant.lower()
        if self.variant not in DEVIATION_VARIANTS:
            raise ValueError(f"unknown CAMF variant {variant!r}")
        self.use_c, self.use_i, self.use_u = DEVIATION_VARIANTS[self.variant]
        self.learn_deviations = learn_deviations

    def _init_params(self, train, rng):
        params = _backbone_init(train, self.hp, rng)
        C = train.schema.num_conditions
        params["dev_c"] = np.zeros(C if self.use_c else 1)
        params["dev_i"] = np.zeros((train.num_items, C) if self.use_i else (1, 1))
        params["dev_u"] = np.zeros((train.num_users, C) if self.use_u else (1, 1))
        return params

    def _epoch(self, params, data, order, lr):
        hp = self.hp
        _kernels.camf_epoch(data.users, data.items, data.ratings, data.contexts, order, params["mu"][0],
                            params["bu"], params["bi"], params["P"], params["Q"], params["dev_c"],
                            params["dev_i"], params["dev_u"], self.use_c, self.use_i, self.use_u,
                            self.learn_deviations, lr, hp.reg_user, hp.reg_item, hp.reg_context)

    def _deviation(self, params, u, i, contexts, u_ok=True, i_ok=True):
        dev = np.zeros(len(u))
        for d in range(contexts.shape[1]):
            c = contexts[:, d]
            if self.use_c:
                dev += params["dev_c"][c]
            if self.use_i:
                dev += np.where(i_ok, params["dev_i"][i, c], 0.0)
            if self.use_u:
                dev += np.where(u_ok, params["dev_u"][u, c], 0.0)
        return dev

    def _raw(self, params, users, items, contexts):
        return _backbone_raw(params, users, items) + self._deviation(params, users, items, contexts)

    def _objective(self, params, data):
        hp = self.hp
        u, i, ctx = data.users, data.items, data.contexts
        e = data.ratings - self._raw(params, u, i, ctx)
        reg = _backbone_reg(params, hp, u, i)
        for d in range(ctx.shape[1]):
            c = ctx[:, d]
            if self.use_c:
                reg += hp.reg_context * np.sum(params["dev_c"][c] ** 2)
            if self.use_i:
                reg += hp.reg_context * np.sum(params["dev_i"][i, c] ** 2)
            if self.use_u:
                reg += hp.reg_context * np.sum(params["dev_u"][u, c] ** 2)
        return float(0.5 * np.sum(e * e) + 0.5 * reg)

    def _gradient(self, params, data):
        hp = self.hp
        u, i, ctx = data.users, data.items, data.contexts
        e = data.ratings - self._raw(params, u, i, ctx)
        grad = {k: np.zeros_like(v) for k, v in params.items()}
        _backbone_grad(grad, params, hp, u, i, -e)
        for d in range(ctx.shape[1]):
            c = ctx[:, d]
            if self.use_c:
                np.add.at(grad["dev_c"], c, -e + hp.reg_context * params["dev_c"][c])
            if self.use_i:
                np.add.at(grad["dev_i"], (i, c), -e + hp.reg_context * params["dev_i"][i, c])
            if self.use_u:
                np.add.at(grad["dev_u"], (u, c), -e + hp.reg_context * params["dev_u"][u, c])
        return grad

    def _score(self, users, items, contexts):
        u, i, u_ok, i_ok = self._known(users, items)
        return _backbone_cold(self.params, u, i, u_ok, i_ok) + self._deviation(self.params, u, i, contexts,
                                                                               u_ok, i_ok)

    def deviations(self) -> dict[str, float]:
        """CAMF_C deviations keyed by ``Dimension:condition``."""
        if not self.use_c:
            raise ValueError("per-condition deviations exist only for camf_c")
        return {"%s:%s" % self.schema.name(c): float(v) for c, v in enumerate(self.params["dev_c"])}


for _name in DEVIATION_VARIANTS:
    register(_name)(lambda hp, _v=_name, **kw: CamfRecommender(hp, _v, **kw))


class ContextSimRecommender(SGDRecommender):
    def __init__(self, hp: HyperParams | None = None, variant: str = "camf_ics"):
        super().__init__(hp)
        self.variant = self.name = variant.lower()
        if self.variant not in SIMILARITY_VARIANTS:
            raise ValueError(f"unknown similarity variant {variant!r}")

    def _init_params(self, train, rng):
        params = _backbone_init(train, self.hp, rng)
        self.na = train.schema.na_indices
        C = train.schema.num_conditions
        if self.variant == "camf_ics":
            params["sim"] = np.ones(C)
        elif self.variant == "camf_lcs":
            f = self.hp.num_factors
            params["V"] = np.full((C, f), 1.0 / np.sqrt(f)) + rng.normal(0.0, self.hp.init_std, (C, f))
        else:
            X = rng.normal(0.0, self.hp.init_std, C)
            X[self.na] = 0.0
            params["X"] = X
        return params

    def _epoch(self, params, data, order, lr):
        hp = self.hp
        args = (data.users, data.items, data.ratings, data.contexts, order, self.na, params["mu"][0],
                params["bu"], params["bi"], params["P"], params["Q"])
        if self.variant == "camf_ics":
            _kernels.ics_epoch(*args, params["sim"], lr, hp.reg_user, hp.reg_item, hp.reg_context, ICS_FLOOR)
        elif self.variant == "camf_lcs":
            _kernels.lcs_epoch(*args, params["V"], lr, hp.reg_user, hp.reg_item, hp.reg_context)
        else:
            _kernels.mcs_epoch(*args, params["X"], lr, hp.reg_user, hp.reg_item, hp.reg_context)

    def _lcs_terms(self, V, contexts):
        """Per dimension: (d, active mask, c, a, b, |a|, |b|, cos, g)."""
        terms = []
        for d in range(contexts.shape[1]):
            c = contexts[:, d]
            a, b = V[c], V[np.full(len(c), self.na[d])]
            na_, nb_ = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
            cos = np.einsum("nk,nk->n", a, b) / (na_ * nb_)
            active = c != self.na[d]
            g = np.where(active, 0.5 * (1.0 + cos), 1.0)
            terms.append((d, active, c, a, b, na_, nb_, cos, g))
        return terms

    def gamma(self, params, contexts) -> np.ndarray:
        n = len(contexts)
        if self.variant == "camf_ics":
            return np.prod(params["sim"][contexts], axis=1) if contexts.shape[1] else np.ones(n)
        if self.variant == "camf_lcs":
            out = np.ones(n)
            for t in self._lcs_terms(params["V"], contexts):
                out *= t[-1]
            return out
        X = params["X"]
        dist = np.abs(X[contexts] - X[self.na][None, :]).sum(axis=1)
        return 1.0 / (1.0 + dist)

    def _raw(self, params, users, items, contexts):
        return _backbone_raw(params, users, items) * self.gamma(params, contexts)

    def _context_reg(self, params, contexts):
        lam = self.hp.reg_context
        total = 0.0
        for d in range(contexts.shape[1]):
            c = contexts[:, d]
            c = c[c != self.na[d]]
            if self.variant == "camf_ics":
                total += np.sum((params["sim"][c] - 1.0) ** 2)
            elif self.variant == "camf_lcs":
                total += np.sum(params["V"][c] ** 2) + len(c) * np.sum(params["V"][self.na[d]] ** 2)
            else:
                total += np.sum(params["X"][c] ** 2)
        return lam * total

    def _objective(self, params, data):
        u, i, ctx = data.users, data.items, data.contexts
        e = data.ratings - self._raw(params, u, i, ctx)
        return float(0.5 * np.sum(e * e) + 0.5 * (_backbone_reg(params, self.hp, u, i)
                                                   + self._context_reg(params, ctx)))

    def _gradient(self, params, data):
        hp = self.hp
        lam = hp.reg_context
        u, i, ctx = data.users, data.items, data.contexts
        base = _backbone_raw(params, u, i)
        gam = self.gamma(params, ctx)
        e = data.ratings - base * gam
        grad = {k: np.zeros_like(v) for k, v in params.items()}
        _backbone_grad(grad, params, hp, u, i, -e * gam)
        w = -e * base * gam
        if self.variant == "camf_ics":
            s = params["sim"]
            for d in range(ctx.shape[1]):
                c = ctx[:, d]
                m = c != self.na[d]
                np.add.at(grad["sim"], c[m], w[m] / s[c[m]] + lam * (s[c[m]] - 1.0))
        elif self.variant == "camf_lcs":
            V = params["V"]
            for d, m, c, a, b, na_, nb_, cos, g in self._lcs_terms(V, ctx):
                ww = (w / g * 0.5)[m][:, None]
                nab = (na_ * nb_)[m][:, None]
                da = b[m] / nab - cos[m][:, None] * a[m] / (na_[m] ** 2)[:, None]
                db = a[m] / nab - cos[m][:, None] * b[m] / (nb_[m] ** 2)[:, None]
                np.add.at(grad["V"], c[m], ww * da + lam * a[m])
                grad["V"][self.na[d]] += np.sum(ww * db + lam * b[m], axis=0)
        else:
            X = params["X"]
            for d in range(ctx.shape[1]):
                c = ctx[:, d]
                m = c != self.na[d]
                sgn = np.sign(X[c[m]] - X[self.na[d]])
                np.add.at(grad["X"], c[m], -w[m] * gam[m] * sgn + lam * X[c[m]])
        return grad

    def _score(self, users, items, contexts):
        u, i, u_ok, i_ok = self._known(users, items)
        return _backbone_cold(self.params, u, i, u_ok, i_ok) * self.gamma(self.params, contexts)


for _name in SIMILARITY_VARIANTS:
    register(_name)(lambda hp, _v=_name, **kw: ContextSimRecommender(hp, _v))
