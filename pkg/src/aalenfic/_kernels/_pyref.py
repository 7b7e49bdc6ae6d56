"""Pure-numpy reference implementation of the per-model Gram reduction.

Same contract as the compiled kernel in ``_core.pyx``; used as the fallback
when the extension is not built and as the ground truth in parity tests.
"""

import numpy as np

BACKEND = "python"


def _first_bad_interval(sub, req_idx, rcond_tol):
    # locate the first required interval whose Gram fails the pivot rule
    for pos, k in enumerate(req_idx):
        g = sub[pos]
        maxd = g.diagonal().max(initial=0.0)
        if not np.isfinite(maxd):
            return int(k)
        try:
            chol = np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            return int(k)
        if (chol.diagonal() ** 2 <= rcond_tol * maxd).any():
            return int(k)
    return -1


def model_profile(gram, lengths, risk_counts, ev_interval, ev_x, idx_i, idx_j,
                  need_all, rcond_tol):
    """Reduce the per-interval Gram stack for one candidate model.

    Returns ``(U, Z, D, P, bad)`` where, writing G_I for the at-risk Gram of
    the time-varying block and C for its cross block with the constant block:

    * ``U[e]``  = G_I(interval of event e)^{-1} x_I of the event subject,
    * ``Z[e]``  = projected constant-block row of the event subject,
    * ``D``     = integral over (0, tau] of the projected constant-block Gram,
    * ``P[k]``  = G_I(k)^{-1} C(k) per interval (zero where nobody is at risk),
    * ``bad``   = index of the first interval whose required inverse does not
      exist (-1 when everything succeeded; outputs are unusable otherwise).
    """
    L = gram.shape[0]
    E = ev_x.shape[0]
    ki, kj = idx_i.size, idx_j.size
    U = np.zeros((E, ki))
    Z = np.zeros((E, kj))
    D = np.zeros((kj, kj))
    P = np.zeros((L, ki, kj))
    active = risk_counts > 0

    if ki == 0:
        if kj:
            GJ = gram[:, idx_j][:, :, idx_j]
            D = np.einsum("k,kab->ab", lengths * active, GJ)
            Z[:] = ev_x[:, idx_j]
        return U, Z, D, P, -1

    GI = gram[:, idx_i][:, :, idx_i]
    if need_all:
        required = active.copy()
    else:
        required = np.zeros(L, dtype=bool)
        required[np.unique(ev_interval)] = True
        required &= active
    req_idx = np.flatnonzero(required)
    if req_idx.size == 0:
        return U, Z, D, P, -1
    sub = GI[req_idx]

    maxd = sub.diagonal(axis1=1, axis2=2).max(axis=1, initial=0.0)
    if not np.isfinite(sub).all():
        return U, Z, D, P, _first_bad_interval(sub, req_idx, rcond_tol)
    try:
        chol = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        return U, Z, D, P, _first_bad_interval(sub, req_idx, rcond_tol)
    pivots = chol.diagonal(axis1=1, axis2=2) ** 2
    if (pivots <= rcond_tol * maxd[:, None]).any():
        return U, Z, D, P, _first_bad_interval(sub, req_idx, rcond_tol)

    inv_l = np.linalg.inv(chol)
    inv_g = np.einsum("kma,kmb->kab", inv_l, inv_l)

    inv_full = np.zeros((L, ki, ki))
    inv_full[req_idx] = inv_g
    U[:] = np.einsum("eab,eb->ea", inv_full[ev_interval], ev_x[:, idx_i])

    if kj:
        C = gram[:, idx_i][:, :, idx_j]
        P[req_idx] = inv_g @ C[req_idx]
        GJ = gram[:, idx_j][:, :, idx_j]
        Q = GJ[req_idx] - np.einsum("kab,kac->kbc", C[req_idx], P[req_idx])
        D = np.einsum("k,kab->ab", lengths[req_idx], Q)
        Z[:] = ev_x[:, idx_j] - np.einsum(
            "eab,ea->eb", P[ev_interval], ev_x[:, idx_i]
        )
    return U, Z, D, P, -1
