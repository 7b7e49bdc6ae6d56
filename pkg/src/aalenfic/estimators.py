"""Additive hazard estimators: the nonparametric full model and the
semiparametric variant where part of the covariates have constant effects.

For a candidate split of the covariates into a time-varying block I, a
constant block J, and an excluded block, the fit consists of

* cumulative-coefficient curves for the I block (a jump at every event time
  plus an absolutely continuous drift induced by the constant effects), and
* a constant coefficient vector ``alpha`` for the J block,

both obtained from least squares on the counting-process increments.  The
cumulative hazard prediction for a covariate vector x at time t is
``x_I' A_I(t) + x_J' alpha t`` and can be rewritten as a weighted sum of the
observed event indicators; those per-event weights drive every variance and
squared-bias estimate in :mod:`aalenfic.fic`.

All integrals are exact finite sums over the grid intervals: the at-risk
design is piecewise constant, so no quadrature is involved anywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .dataset import Dataset, TimeGrid
from .errors import (
    EmptyModelError,
    NonMonotoneHazardWarning,
    SingularDesignError,
    ValidationError,
)

RCOND_TOL = 1e-10


@dataclass(frozen=True)
class ModelSpec:
    """Disjoint split of the covariate indices (0-based).

    ``time_varying`` get nonparametric cumulative effects, ``constant`` get a
    single coefficient each, and everything else is excluded from the model.
    """

    q: int
    time_varying: tuple = ()
    constant: tuple = ()

    def __post_init__(self):
        tv = tuple(sorted(int(j) for j in self.time_varying))
        co = tuple(sorted(int(j) for j in self.constant))
        if self.q < 1:
            raise ValidationError("q must be at least 1")
        for j in tv + co:
            if not 0 <= j < self.q:
                raise ValidationError(f"covariate index {j} outside 0..{self.q - 1}")
        if len(set(tv)) != len(tv) or len(set(co)) != len(co):
            raise ValidationError("duplicate covariate index in model spec")
        if set(tv) & set(co):
            raise ValidationError("time-varying and constant blocks must be disjoint")
        object.__setattr__(self, "time_varying", tv)
        object.__setattr__(self, "constant", co)

    @classmethod
    def full(cls, q: int) -> "ModelSpec":
        return cls(q, tuple(range(q)), ())

    @property
    def excluded(self) -> tuple:
        used = set(self.time_varying) | set(self.constant)
        return tuple(j for j in range(self.q) if j not in used)

    @property
    def states(self) -> tuple:
        """Per-covariate state (0 time-varying, 1 constant, 2 excluded)."""
        out = [2] * self.q
        for j in self.time_varying:
            out[j] = 0
        for j in self.constant:
            out[j] = 1
        return tuple(out)

    @property
    def n_included(self) -> int:
        return len(self.time_varying) + len(self.constant)

    def describe(self) -> str:
        fmt = lambda idx: ",".join(str(j + 1) for j in idx)
        return f"I={{{fmt(self.time_varying)}}} J={{{fmt(self.constant)}}}"


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous pure-jump function, zero at time 0."""

    times: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.sizes, dtype=float)
        if t.shape != s.shape or t.ndim != 1:
            raise ValidationError("jump times and sizes must be 1-d and aligned")
        if t.size and np.any(np.diff(t) <= 0):
            raise ValidationError("jump times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "sizes", s)
        object.__setattr__(self, "_cum", np.concatenate(([0.0], np.cumsum(s))))

    def __call__(self, t):
        pos = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return self._cum[pos]


@dataclass(frozen=True)
class FocusPoint:
    """The quantity being targeted: cumulative hazard at (t, x).

    With ``t0`` set, the target is the increment between ``t0`` and ``t``
    instead (survival prospects for someone who already reached ``t0``).
    """

    t: float
    x: np.ndarray
    t0: float | None = None

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or not np.isfinite(x).all():
            raise ValidationError("focus covariate vector must be a finite 1-d vector")
        if not (np.isfinite(self.t) and self.t > 0):
            raise ValidationError("focus time must be positive")
        if self.t0 is not None and not (0.0 <= self.t0 < self.t):
            raise ValidationError("t0 must lie in [0, t)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))


@dataclass
class SemiparFit:
    """Fitted semiparametric additive hazard model.

    Stores the per-event and per-interval reductions needed to evaluate the
    cumulative-coefficient curves, hazard predictions, and the event weights
    that the focused criteria are built from.  Instances are immutable after
    construction and cheap to evaluate repeatedly.
    """

    spec: ModelSpec
    alpha: np.ndarray            # (kJ,) constant coefficients, per unit time
    grid: TimeGrid
    tau: float
    _u: np.ndarray               # (E, kI) inverse-Gram event contractions
    _z: np.ndarray               # (E, kJ) projected constant-block event rows
    _p: np.ndarray               # (L, kI, kJ) per-interval G_I^{-1} C
    _d_inv: np.ndarray           # (kJ, kJ) inverse integrated projected Gram
    _drift: np.ndarray = field(init=False)        # (L, kI) drift slopes
    _jump_prefix: np.ndarray = field(init=False)  # (E+1, kI)
    _drift_prefix: np.ndarray = field(init=False) # (L+1, kI)
    _eint_prefix: np.ndarray = field(init=False)  # (L+1, kI, kJ)

    def __post_init__(self):
        lengths = self.grid.lengths
        if self.k_constant:
            self._drift = -np.einsum("lab,b->la", self._p, self.alpha)
        else:
            self._drift = np.zeros((self.grid.n_intervals, self.k_varying))
        self._jump_prefix = np.vstack(
            [np.zeros(self.k_varying), np.cumsum(self._u, axis=0)]
        )
        self._drift_prefix = np.vstack(
            [np.zeros(self.k_varying), np.cumsum(lengths[:, None] * self._drift, axis=0)]
        )
        self._eint_prefix = np.concatenate(
            [
                np.zeros((1, self.k_varying, self.k_constant)),
                np.cumsum(lengths[:, None, None] * self._p, axis=0),
            ]
        )

    @property
    def q(self) -> int:
        return self.spec.q

    @property
    def k_varying(self) -> int:
        return len(self.spec.time_varying)

    @property
    def k_constant(self) -> int:
        return len(self.spec.constant)

    @property
    def idx_varying(self) -> np.ndarray:
        return np.asarray(self.spec.time_varying, dtype=np.int64)

    @property
    def idx_constant(self) -> np.ndarray:
        return np.asarray(self.spec.constant, dtype=np.int64)

    # -- evaluation ------------------------------------------------------

    def cumulative_at(self, t) -> np.ndarray:
        """Cumulative-coefficient values A_I(t), shape (..., kI)."""
        t = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.grid.event_times, t, side="right")
        jumps = self._jump_prefix[pos]
        k = np.clip(self.grid.interval_of(t), 0, self.grid.n_intervals - 1)
        drift = self._drift_prefix[k] + (
            (t - self.grid.breaks[k])[..., None] * self._drift[k]
        )
        return jumps + drift

    def _curve_integral_at(self, t) -> np.ndarray:
        """E(t) = integral over (0, t] of G_I^{-1} C, shape (..., kI, kJ)."""
        t = np.asarray(t, dtype=float)
        k = np.clip(self.grid.interval_of(t), 0, self.grid.n_intervals - 1)
        return self._eint_prefix[k] + (
            (t - self.grid.breaks[k])[..., None, None] * self._p[k]
        )

    def cumhaz_many(self, t, x) -> np.ndarray:
        """Predicted cumulative hazard for paired arrays of times and rows."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        out = np.zeros(t.shape)
        if self.k_varying:
            out += np.einsum("ab,ab->a", x[:, self.idx_varying], self.cumulative_at(t))
        if self.k_constant:
            out += (x[:, self.idx_constant] @ self.alpha) * t
        return out

    def weights_many(self, t, x) -> np.ndarray:
        """Event weights for each focus atom: shape (A, E).

        Row a holds, for every observed event, the coefficient with which
        that event's counting-process jump enters the prediction at
        ``(t[a], x[a])``.  Summing a row over events reproduces the
        prediction itself.
        """
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        E = self.grid.n_events
        w = np.zeros((t.size, E))
        mask = self.grid.event_times[None, :] <= t[:, None]
        if self.k_varying:
            w += (x[:, self.idx_varying] @ self._u.T) * mask
        if self.k_constant:
            lead = t[:, None] * x[:, self.idx_constant]
            if self.k_varying:
                lead = lead - np.einsum(
                    "aij,ai->aj", self._curve_integral_at(t), x[:, self.idx_varying]
                )
            w += (lead @ self._d_inv) @ self._z.T
        return w

    def jump_sizes_by_point(self) -> np.ndarray:
        """Aggregate per-event jumps into one row per grid point, (m, kI)."""
        out = np.zeros((self.grid.points.size, self.k_varying))
        np.add.at(out, self.grid.event_points, self._u)
        return out

    def coefficient_step(self, j: int) -> StepFunction:
        """Pure-jump part of the cumulative-coefficient curve of covariate j."""
        if j not in self.spec.time_varying:
            raise ValidationError(f"covariate {j} is not in the time-varying block")
        col = self.spec.time_varying.index(j)
        sizes = self.jump_sizes_by_point()[:, col]
        keep = np.zeros(self.grid.points.size, dtype=bool)
        keep[np.unique(self.grid.event_points)] = True
        return StepFunction(self.grid.points[keep], sizes[keep])

    def export_dict(self, names: Sequence[str]) -> dict:
        """JSON-ready summary: spec, constant coefficients, jump lists."""
        curves = {}
        for j in self.spec.time_varying:
            step = self.coefficient_step(j)
            curves[names[j]] = {
                "times": step.times.tolist(),
                "jumps": step.sizes.tolist(),
            }
        return {
            "time_varying": [j + 1 for j in self.spec.time_varying],
            "constant": [j + 1 for j in self.spec.constant],
            "alpha": {
                names[j]: float(a) for j, a in zip(self.spec.constant, self.alpha)
            },
            "tau": self.tau,
            "curves": curves,
        }


def _spd_inverse(mat: np.ndarray, rcond_tol: float = RCOND_TOL) -> np.ndarray | None:
    """Invert a symmetric PSD matrix via Cholesky with the shared pivot rule.

    Returns None when the matrix fails the rule (treated as singular).
    """
    maxd = mat.diagonal().max(initial=0.0)
    if not np.isfinite(mat).all():
        return None
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None
    if (chol.diagonal() ** 2 <= rcond_tol * maxd).any():
        return None
    inv_l = np.linalg.inv(chol)
    return inv_l.T @ inv_l


def fit_semiparametric(ds: Dataset, spec: ModelSpec, backend: str | None = None) -> SemiparFit:
    """Least-squares fit of the additive hazard model described by ``spec``.

    The constant coefficients solve the projected normal equations over the
    whole window; the time-varying curves accumulate an inverse-Gram jump at
    every event time and a drift correction on every interval.

    Raises
    ------
    EmptyModelError
        When the spec includes no covariates.
    SingularDesignError
        When a required at-risk Gram matrix (or the integrated projected
        Gram) is numerically singular.
    """
    if spec.q != ds.q:
        raise ValidationError(f"spec is for q={spec.q}, dataset has q={ds.q}")
    if not spec.time_varying and not spec.constant:
        raise EmptyModelError("model must include at least one covariate")
    grid, gram = ds.grid(), ds.gram()
    idx_i, idx_j = spec.time_varying, spec.constant
    ev_x = ds.covariates[grid.event_subjects]
    need_all = bool(idx_i) and bool(idx_j)
    U, Z, D, P, bad = _kernels.model_profile(
        gram.grams,
        grid.lengths,
        grid.risk_counts,
        grid.event_intervals,
        ev_x,
        np.asarray(idx_i, dtype=np.int64),
        np.asarray(idx_j, dtype=np.int64),
        need_all,
        RCOND_TOL,
        backend=backend,
    )
    if bad >= 0:
        raise SingularDesignError(
            "at-risk Gram matrix for the time-varying block is singular",
            time=float(grid.breaks[bad + 1]),
        )
    if idx_j:
        d_inv = _spd_inverse(D)
        if d_inv is None:
            raise SingularDesignError(
                "integrated projected Gram for the constant block is singular"
            )
        alpha = d_inv @ Z.sum(axis=0)
    else:
        d_inv = np.zeros((0, 0))
        alpha = np.zeros(0)
    return SemiparFit(spec, alpha, grid, ds.tau, U, Z, P, d_inv)


def fit_full(ds: Dataset, backend: str | None = None) -> SemiparFit:
    """Nonparametric fit with every covariate time-varying.

    Reduces to the Nelson-Aalen estimator for a single intercept column.
    """
    return fit_semiparametric(ds, ModelSpec.full(ds.q), backend=backend)


def _check_focus(fit: SemiparFit, focus: FocusPoint):
    if focus.x.size != fit.q:
        raise ValidationError(
            f"focus covariate vector has length {focus.x.size}, expected {fit.q}"
        )
    if focus.t > fit.tau:
        raise ValidationError(f"focus time {focus.t:g} beyond the window end {fit.tau:g}")


def weight_rows(fit: SemiparFit, focus: FocusPoint) -> np.ndarray:
    """Per-event weights K_i(t_i) for the given focus, shape (E,).

    The weights are reported for the observed events, in the order of
    ``fit.grid.event_subjects``; the counting process only charges those
    entries, and their sum equals ``cumhaz(fit, focus)``.
    """
    _check_focus(fit, focus)
    w = fit.weights_many(np.array([focus.t]), focus.x[None, :])[0]
    if focus.t0 is not None and focus.t0 > 0:
        w = w - fit.weights_many(np.array([focus.t0]), focus.x[None, :])[0]
    return w


def cumhaz(fit: SemiparFit, focus: FocusPoint) -> float:
    """Predicted cumulative hazard at the focus (or its increment from t0)."""
    _check_focus(fit, focus)
    value = float(fit.cumhaz_many(np.array([focus.t]), focus.x[None, :])[0])
    if focus.t0 is not None and focus.t0 > 0:
        value -= float(fit.cumhaz_many(np.array([focus.t0]), focus.x[None, :])[0])
    return value


def survival(fit: SemiparFit, focus: FocusPoint) -> float:
    """Product-integral survival estimate at the focus, clamped to [0, 1].

    Event-time jumps contribute discrete factors ``1 - dH`` and the
    absolutely continuous drift contributes an exponential factor.  Negative
    factors or out-of-range results are clamped and reported through
    :class:`NonMonotoneHazardWarning`.
    """
    _check_focus(fit, focus)
    t0 = focus.t0 if focus.t0 is not None else 0.0
    x_i = focus.x[fit.idx_varying]
    points = fit.grid.points
    dh = fit.jump_sizes_by_point() @ x_i if fit.k_varying else np.zeros(points.size)
    in_window = (points > t0) & (points <= focus.t)
    factors = 1.0 - dh[in_window]
    if (factors < 0).any():
        warnings.warn(
            "cumulative hazard jump above 1; survival factor clamped at 0",
            NonMonotoneHazardWarning,
            stacklevel=2,
        )
        factors = np.clip(factors, 0.0, None)

    def continuous_part(t):
        out = 0.0
        if fit.k_varying:
            k = int(np.clip(fit.grid.interval_of(t), 0, fit.grid.n_intervals - 1))
            drift = fit._drift_prefix[k] + (t - fit.grid.breaks[k]) * fit._drift[k]
            out += float(x_i @ drift)
        if fit.k_constant:
            out += float(focus.x[fit.idx_constant] @ fit.alpha) * t
        return out

    cont = continuous_part(focus.t) - continuous_part(t0)
    value = float(np.prod(factors) * np.exp(-cont))
    if value < 0.0 or value > 1.0:
        warnings.warn(
            f"survival estimate {value:g} clamped into [0, 1]",
            NonMonotoneHazardWarning,
            stacklevel=2,
        )
        value = min(max(value, 0.0), 1.0)
    return value
