"""Shared fixtures and independent oracle implementations.

The oracles build everything (risk sets, projections, normal equations)
directly from the raw arrays with their own code paths -- pseudo-inverse
projections on explicit n-by-k design matrices -- so they share nothing with
the package's Gram-cache machinery beyond numpy itself.
"""

import numpy as np
import pytest

from aalenfic import Dataset


@pytest.fixture
def toy_intercept():
    """Three subjects, all events at 1, 2, 3; single intercept column."""
    return Dataset(
        np.array([1.0, 2.0, 3.0]),
        np.array([1, 1, 1]),
        np.ones((3, 1)),
        ("intercept",),
        3.0,
    )


def random_dataset(rng, n=40, q=3, censor_frac=0.3, tau_quantile=0.7,
                   intercept=True):
    """Random right-censored data with τ inside the time range.

    τ sits at an inner quantile of the times so that enough subjects stay at
    risk through the window and random submodel Grams are invertible.
    """
    x = rng.normal(size=(n, q))
    if intercept:
        x[:, 0] = 1.0
    times = rng.exponential(scale=2.0, size=n)
    status = (rng.random(n) > censor_frac).astype(int)
    tau = float(np.quantile(times, tau_quantile))
    names = tuple(f"x{j}" for j in range(q))
    return Dataset(times, status, x, names, tau)


# --- independent oracles -------------------------------------------------


def nelson_aalen_oracle(times, status, tau):
    """(distinct event times <= tau, cumulative hazard) by direct counting."""
    times = np.asarray(times, dtype=float)
    status = np.asarray(status)
    eff_t = np.minimum(times, tau)
    eff_s = np.where(times <= tau, status, 0)
    ev = np.unique(eff_t[(eff_s == 1)])
    h = 0.0
    out = []
    for t in ev:
        at_risk = np.count_nonzero(eff_t >= t)
        d = np.count_nonzero((eff_t == t) & (eff_s == 1))
        h += d / at_risk
        out.append(h)
    return ev, np.array(out)


def kaplan_meier_oracle(times, status, tau, t):
    """Product-limit survival at time t by direct counting."""
    times = np.asarray(times, dtype=float)
    status = np.asarray(status)
    eff_t = np.minimum(times, tau)
    eff_s = np.where(times <= tau, status, 0)
    s = 1.0
    for u in np.unique(eff_t[(eff_s == 1) & (eff_t <= t)]):
        at_risk = np.count_nonzero(eff_t >= u)
        d = np.count_nonzero((eff_t == u) & (eff_s == 1))
        s *= 1.0 - d / at_risk
    return s


def _grid_breaks(ds):
    eff = np.minimum(ds.times, ds.tau)
    pts = np.unique(eff[eff > 0])
    breaks = np.concatenate(([0.0], pts))
    if pts.size == 0 or pts[-1] < ds.tau:
        breaks = np.concatenate((breaks, [ds.tau]))
    return breaks


def design_at(ds, s):
    """Explicit at-risk design matrix at time s, built from raw arrays."""
    at_risk = np.minimum(ds.times, ds.tau) >= s
    return ds.covariates * at_risk[:, None]


def stacked_alpha_oracle(ds, idx_i, idx_j):
    """Constant coefficients via explicit projections and normal equations.

    Builds n-by-k designs on every interval, projects the constant block off
    the time-varying block with a pseudo-inverse, discretizes the counting
    process on the grid, and solves the stacked normal equations densely.
    """
    idx_i = list(idx_i)
    idx_j = list(idx_j)
    breaks = _grid_breaks(ds)
    eff_t = np.minimum(ds.times, ds.tau)
    eff_s = np.where(ds.times <= ds.tau, ds.status, 0)
    kj = len(idx_j)
    d_mat = np.zeros((kj, kj))
    b_vec = np.zeros(kj)
    for k in range(len(breaks) - 1):
        right = breaks[k + 1]
        y = design_at(ds, right)
        y_j = y[:, idx_j]
        if idx_i:
            y_i = y[:, idx_i]
            y_tilde = y_j - y_i @ (np.linalg.pinv(y_i) @ y_j)
        else:
            y_tilde = y_j
        d_mat += (right - breaks[k]) * (y_tilde.T @ y_tilde)
        dn = ((eff_t == right) & (eff_s == 1)).astype(float)
        b_vec += y_tilde.T @ dn
    return np.linalg.solve(d_mat, b_vec)


def group_nelson_aalen(ds, group_col, group_val, tau):
    """Nelson-Aalen within one binary-covariate group (independent path)."""
    sel = ds.covariates[:, group_col] == group_val
    return nelson_aalen_oracle(ds.times[sel], ds.status[sel], tau)
