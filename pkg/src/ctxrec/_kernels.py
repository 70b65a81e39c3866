"""Per-rating SGD epochs, compiled with numba.

Every update is ``param += lr * (-d/dparam of one row's objective term)``,
where a row's term is ``0.5 * e**2`` plus ``0.5 * reg * param**2`` for each
parameter the row touches.  The numpy ``_gradient`` methods of the models sum
exactly these per-row terms, which the test suite cross-checks.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def mf_epoch(users, items, ratings, order, mu, bu, bi, P, Q, lr, reg_u, reg_i, use_bias):
    f = P.shape[1]
    for idx in order:
        u = users[idx]
        i = items[idx]
        dot = 0.0
        for k in range(f):
            dot += P[u, k] * Q[i, k]
        pred = mu + bu[u] + bi[i] + dot
        e = ratings[idx] - pred
        if use_bias:
            bu[u] += lr * (e - reg_u * bu[u])
            bi[i] += lr * (e - reg_i * bi[i])
        for k in range(f):
            pu = P[u, k]
            qi = Q[i, k]
            P[u, k] += lr * (e * qi - reg_u * pu)
            Q[i, k] += lr * (e * pu - reg_i * qi)


@njit(cache=True)
def camf_epoch(users, items, ratings, contexts, order, mu, bu, bi, P, Q, dev_c, dev_i, dev_u,
               use_c, use_i, use_u, learn_dev, lr, reg_u, reg_i, reg_c):
    f = P.shape[1]
    nd = contexts.shape[1]
    for idx in order:
        u = users[idx]
        i = items[idx]
        dot = 0.0
        for k in range(f):
            dot += P[u, k] * Q[i, k]
        dev = 0.0
        for d in range(nd):
            c = contexts[idx, d]
            if use_c:
                dev += dev_c[c]
            if use_i:
                dev += dev_i[i, c]
            if use_u:
                dev += dev_u[u, c]
        pred = mu + bu[u] + bi[i] + dot + dev
        e = ratings[idx] - pred
        bu[u] += lr * (e - reg_u * bu[u])
        bi[i] += lr * (e - reg_i * bi[i])
        for k in range(f):
            pu = P[u, k]
            qi = Q[i, k]
            P[u, k] += lr * (e * qi - reg_u * pu)
            Q[i, k] += lr * (e * pu - reg_i * qi)
        if learn_dev:
            for d in range(nd):
                c = contexts[idx, d]
                if use_c:
                    dev_c[c] += lr * (e - reg_c * dev_c[c])
                if use_i:
                    dev_i[i, c] += lr * (e - reg_c * dev_i[i, c])
                if use_u:
                    dev_u[u, c] += lr * (e - reg_c * dev_u[u, c])


@njit(cache=True)
def _backbone(u, i, mu, bu, bi, P, Q):
    dot = 0.0
    for k in range(P.shape[1]):
        dot += P[u, k] * Q[i, k]
    return mu + bu[u] + bi[i] + dot


@njit(cache=True)
def _backbone_step(u, i, g, bu, bi, P, Q, lr, reg_u, reg_i):
    # g = e * Gamma, the derivative of the row error w.r.t. the backbone score
    bu[u] += lr * (g - reg_u * bu[u])
    bi[i] += lr * (g - reg_i * bi[i])
    for k in range(P.shape[1]):
        pu = P[u, k]
        qi = Q[i, k]
        P[u, k] += lr * (g * qi - reg_u * pu)
        Q[i, k] += lr * (g * pu - reg_i * qi)


@njit(cache=True)
def ics_epoch(users, items, ratings, contexts, order, na, mu, bu, bi, P, Q, sim,
              lr, reg_u, reg_i, reg_c, lo):
    nd = contexts.shape[1]
    for idx in order:
        u = users[idx]
        i = items[idx]
        base = _backbone(u, i, mu, bu, bi, P, Q)
        gamma = 1.0
        for d in range(nd):
            gamma *= sim[contexts[idx, d]]
        e = ratings[idx] - base * gamma
        for d in range(nd):
            c = contexts[idx, d]
            if c != na[d]:
                s = sim[c]
                s += lr * (e * base * gamma / sim[c] - reg_c * (s - 1.0))
                sim[c] = min(1.0, max(lo, s))
        _backbone_step(u, i, e * gamma, bu, bi, P, Q, lr, reg_u, reg_i)


@njit(cache=True)
def lcs_epoch(users, items, ratings, contexts, order, na, mu, bu, bi, P, Q, V,
              lr, reg_u, reg_i, reg_c):
    nd = contexts.shape[1]
    h = V.shape[1]
    g = np.ones(nd)
    cosv = np.ones(nd)
    na_ = np.zeros(nd)
    nb_ = np.zeros(nd)
    ga = np.zeros((nd, h))
    gb = np.zeros((nd, h))
    for idx in order:
        u = users[idx]
        i = items[idx]
        base = _backbone(u, i, mu, bu, bi, P, Q)
        gamma = 1.0
        for d in range(nd):
            c = contexts[idx, d]
            g[d] = 1.0
            if c != na[d]:
                a = V[c]
                b = V[na[d]]
                ab = 0.0
                aa = 0.0
                bb = 0.0
                for k in range(h):
                    ab += a[k] * b[k]
                    aa += a[k] * a[k]
                    bb += b[k] * b[k]
                na_[d] = np.sqrt(aa)
                nb_[d] = np.sqrt(bb)
                cosv[d] = ab / (na_[d] * nb_[d])
                g[d] = 0.5 * (1.0 + cosv[d])
            gamma *= g[d]
        e = ratings[idx] - base * gamma
        for d in range(nd):
            c = contexts[idx, d]
            if c == na[d]:
                continue
            a = V[c]
            b = V[na[d]]
            w = e * base * gamma / g[d] * 0.5
            for k in range(h):
                dcos_a = b[k] / (na_[d] * nb_[d]) - cosv[d] * a[k] / (na_[d] * na_[d])
                dcos_b = a[k] / (na_[d] * nb_[d]) - cosv[d] * b[k] / (nb_[d] * nb_[d])
                ga[d, k] = w * dcos_a - reg_c * a[k]
                gb[d, k] = w * dcos_b - reg_c * b[k]
        for d in range(nd):
            c = contexts[idx, d]
            if c == na[d]:
                continue
            for k in range(h):
                V[c, k] += lr * ga[d, k]
                V[na[d], k] += lr * gb[d, k]
        _backbone_step(u, i, e * gamma, bu, bi, P, Q, lr, reg_u, reg_i)


@njit(cache=True)
def mcs_epoch(users, items, ratings, contexts, order, na, mu, bu, bi, P, Q, X,
              lr, reg_u, reg_i, reg_c):
    nd = contexts.shape[1]
    for idx in order:
        u = users[idx]
        i = items[idx]
        base = _backbone(u, i, mu, bu, bi, P, Q)
        dist = 0.0
        for d in range(nd):
            dist += abs(X[contexts[idx, d]] - X[na[d]])
        gamma = 1.0 / (1.0 + dist)
        e = ratings[idx] - base * gamma
        for d in range(nd):
            c = contexts[idx, d]
            if c != na[d]:
                diff = X[c] - X[na[d]]
                sgn = 1.0 if diff > 0 else (-1.0 if diff < 0 else 0.0)
                X[c] += lr * (-e * base * gamma * gamma * sgn - reg_c * X[c])
        _backbone_step(u, i, e * gamma, bu, bi, P, Q, lr, reg_u, reg_i)


@njit(cache=True)
def cptf_epoch(users, items, ratings, contexts, order, P, Q, Z, lr, reg_u, reg_i, reg_c):
    f = P.shape[1]
    nd = contexts.shape[1]
    zprod = np.ones(f)
    gz = np.zeros((nd, f))
    for idx in order:
        u = users[idx]
        i = items[idx]
        pred = 0.0
        for k in range(f):
            z = 1.0
            for d in range(nd):
                z *= Z[contexts[idx, d], k]
            zprod[k] = z
            pred += P[u, k] * Q[i, k] * z
        e = ratings[idx] - pred
        for d in range(nd):
            c = contexts[idx, d]
            for k in range(f):
                other = 1.0
                for d2 in range(nd):
                    if d2 != d:
                        other *= Z[contexts[idx, d2], k]
                gz[d, k] = e * P[u, k] * Q[i, k] * other - reg_c * Z[c, k]
        for k in range(f):
            pu = P[u, k]
            qi = Q[i, k]
            P[u, k] += lr * (e * qi * zprod[k] - reg_u * pu)
            Q[i, k] += lr * (e * pu * zprod[k] - reg_i * qi)
        for d in range(nd):
            c = contexts[idx, d]
            for k in range(f):
                Z[c, k] += lr * gz[d, k]


@njit(cache=True)
def cd_sweep(G, b, w, l1, l2, skip):
    """One cyclic coordinate-descent pass on
    ``0.5 w'Gw - b'w + l1 |w|_1 + 0.5 l2 |w|^2`` subject to ``w >= 0`` and
    ``w[skip] = 0``.  Each coordinate is minimized exactly."""
    n = len(w)
    for j in range(n):
        if j == skip:
            w[j] = 0.0
            continue
        s = 0.0
        for k in range(n):
            if k != j:
                s += G[j, k] * w[k]
        num = b[j] - s - l1
        den = G[j, j] + l2
        if num <= 0.0 or den <= 0.0:
            w[j] = 0.0
        else:
            w[j] = num / den
