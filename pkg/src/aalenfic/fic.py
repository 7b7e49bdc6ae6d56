"""Focused information criterion for one (model, focus) pair.

The criterion estimates the mean squared error of a candidate model's
cumulative-hazard prediction at the focus: a variance term built from the
per-event prediction weights, plus a squared-bias term measured against the
full model and debiased by the variance of the bias estimator itself.  The
squared-bias estimate may come out negative; the standard criterion truncates
it at zero while the starred variant keeps it as is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ValidationError
from .estimators import FocusPoint, SemiparFit, cumhaz, weight_rows


@dataclass(frozen=True)
class FicScore:
    """Focused criterion pieces for one candidate model at one focus.

    ``fic = v + max(0, sqb_raw)`` and ``fic_star = v + sqb_raw``; the raw
    squared-bias estimate is ``b**2 - tau2``.  For the full model every bias
    piece is exactly zero and both criteria equal the variance estimate.
    """

    v: float
    b: float
    tau2: float
    sqb_raw: float
    h_hat: float

    @property
    def sqb_plus(self) -> float:
        return max(0.0, self.sqb_raw)

    @property
    def fic(self) -> float:
        return self.v + self.sqb_plus

    @property
    def fic_star(self) -> float:
        return self.v + self.sqb_raw


def score_atoms(fit: SemiparFit, full: SemiparFit, times, xs) -> dict:
    """Variance/bias pieces for a batch of focus atoms, vectorized.

    Returns arrays keyed ``v``, ``b``, ``tau2``, ``sqb_raw``, ``h_sub``,
    ``h_full``, one entry per atom.  This is the single computation path
    behind both the pointwise and the weighted criterion, so a one-atom batch
    reproduces the pointwise score bit for bit.
    """
    times = np.asarray(times, dtype=float)
    xs = np.asarray(xs, dtype=float)
    w = fit.weights_many(times, xs)
    v = np.einsum("ae,ae->a", w, w)
    h_sub = fit.cumhaz_many(times, xs)
    if fit.spec == full.spec:
        zero = np.zeros(times.size)
        return {
            "v": v, "b": zero, "tau2": zero.copy(), "sqb_raw": zero.copy(),
            "h_sub": h_sub, "h_full": h_sub.copy(),
        }
    w_full = full.weights_many(times, xs)
    diff = w - w_full
    tau2 = np.einsum("ae,ae->a", diff, diff)
    h_full = full.cumhaz_many(times, xs)
    b = h_sub - h_full
    return {
        "v": v, "b": b, "tau2": tau2, "sqb_raw": b * b - tau2,
        "h_sub": h_sub, "h_full": h_full,
    }


def _check_pair(fit: SemiparFit, full: SemiparFit, ds: Dataset | None):
    if fit.grid is not full.grid:
        raise ValidationError("submodel and full model must share one dataset")
    if ds is not None and fit.grid is not ds.grid():
        raise ValidationError("fits were not computed on the given dataset")


def variance_estimate(weights: np.ndarray, ds: Dataset | None = None) -> float:
    """Variance estimate from per-event weights: the sum of their squares.

    The sum runs over every observed event in ``(0, tau]``; the part of each
    weight tied to the time-varying block vanishes past the focus time, while
    the constant-block part is supported on the whole window.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1:
        raise ValidationError("event weights must be a 1-d array")
    if ds is not None and weights.size != ds.grid().n_events:
        raise ValidationError("need one weight per observed event")
    return float(weights @ weights)


def bias_estimate(fit: SemiparFit, full: SemiparFit, focus: FocusPoint) -> float:
    """Signed difference between the submodel and full-model predictions."""
    _check_pair(fit, full, None)
    if fit.spec == full.spec:
        return 0.0
    return cumhaz(fit, focus) - cumhaz(full, focus)


def sqb_estimate(fit: SemiparFit, full: SemiparFit, focus: FocusPoint,
                 ds: Dataset | None = None) -> tuple:
    """Debiased squared-bias estimate ``(sqb_raw, tau2)``.

    ``tau2`` sums the squared per-event differences between the submodel
    weights and the full-model weights contracted with the focus vector;
    ``sqb_raw`` subtracts it from the squared bias and may be negative.
    """
    _check_pair(fit, full, ds)
    if fit.spec == full.spec:
        return 0.0, 0.0
    if focus.t0 is None:
        out = score_atoms(fit, full, [focus.t], focus.x[None, :])
        return float(out["sqb_raw"][0]), float(out["tau2"][0])
    w = weight_rows(fit, focus)
    w_full = weight_rows(full, focus)
    diff = w - w_full
    tau2 = float(diff @ diff)
    b = bias_estimate(fit, full, focus)
    return b * b - tau2, tau2


def fic_score(fit: SemiparFit, full: SemiparFit, focus: FocusPoint,
              ds: Dataset | None = None) -> FicScore:
    """Assemble the full :class:`FicScore` for one model and one focus."""
    _check_pair(fit, full, ds)
    if focus.t0 is None:
        out = score_atoms(fit, full, [focus.t], focus.x[None, :])
        return FicScore(
            v=float(out["v"][0]),
            b=float(out["b"][0]),
            tau2=float(out["tau2"][0]),
            sqb_raw=float(out["sqb_raw"][0]),
            h_hat=float(out["h_sub"][0]),
        )
    w = weight_rows(fit, focus)
    v = float(w @ w)
    h_hat = cumhaz(fit, focus)
    if fit.spec == full.spec:
        return FicScore(v=v, b=0.0, tau2=0.0, sqb_raw=0.0, h_hat=h_hat)
    b = bias_estimate(fit, full, focus)
    sqb_raw, tau2 = sqb_estimate(fit, full, focus, ds)
    return FicScore(v=v, b=b, tau2=tau2, sqb_raw=sqb_raw, h_hat=h_hat)
