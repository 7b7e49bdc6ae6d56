"""Candidate enumeration, criterion-based ranking, and model averaging.

Every covariate independently gets one of three states (time-varying effect,
constant effect, excluded), so ``q`` free covariates yield ``3**q``
candidates.  Protection rules pin chosen covariates to a state (or just
forbid exclusion) and shrink the list.  Ranking fits each candidate once
against a shared full-model fit and sorts ascending by the chosen criterion;
averaging combines the top models with softmin weights in the criterion.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import (
    EmptyModelError,
    EmptyRankingError,
    SingularDesignError,
    ValidationError,
)
from .estimators import FocusPoint, ModelSpec, fit_full, fit_semiparametric
from .fic import FicScore, fic_score
from .wfic import WeightMeasure, WficScore, wfic_score

RULE_KINDS = ("free", "time-varying", "constant", "either")
_RULE_OPTIONS = {
    "free": (0, 1, 2),
    "time-varying": (0,),
    "constant": (1,),
    "either": (0, 1),
}


@dataclass(frozen=True)
class ProtectionRule:
    """Per-covariate constraint on the enumeration.

    ``free`` allows all three states; ``time-varying`` and ``constant`` pin
    the covariate to that effect type; ``either`` keeps it in the model but
    leaves the effect type open.
    """

    states: tuple

    def __post_init__(self):
        states = tuple(self.states)
        for s in states:
            if s not in RULE_KINDS:
                raise ValidationError(f"unknown protection kind {s!r}")
        object.__setattr__(self, "states", states)

    @classmethod
    def free(cls, q: int) -> "ProtectionRule":
        return cls(("free",) * q)

    @classmethod
    def from_assignments(cls, q: int, assignments) -> "ProtectionRule":
        """Build from ``(index, kind)`` pairs; conflicting pairs are rejected."""
        states = ["free"] * q
        seen: dict = {}
        for j, kind in assignments:
            j = int(j)
            if not 0 <= j < q:
                raise ValidationError(f"protection index {j} outside 0..{q - 1}")
            if j in seen and seen[j] != kind:
                raise ValidationError(
                    f"contradictory protection for covariate {j}: "
                    f"{seen[j]!r} vs {kind!r}"
                )
            seen[j] = kind
            states[j] = kind
        return cls(tuple(states))


def enumerate_models(q: int, rules: ProtectionRule | None = None) -> list:
    """All candidate splits compatible with the protection rules.

    Deterministic order: lexicographic in the per-covariate state with
    time-varying < constant < excluded.
    """
    if q < 1:
        raise ValidationError("q must be at least 1")
    if rules is None:
        rules = ProtectionRule.free(q)
    if len(rules.states) != q:
        raise ValidationError("protection rule must cover every covariate")
    options = [_RULE_OPTIONS[s] for s in rules.states]
    out = []
    for states in itertools.product(*options):
        tv = tuple(j for j, s in enumerate(states) if s == 0)
        co = tuple(j for j, s in enumerate(states) if s == 1)
        out.append(ModelSpec(q, tv, co))
    return out


@dataclass(frozen=True)
class Criterion:
    """Which score orders the candidates: pointwise (truncated or raw) or
    weighted."""

    kind: str
    focus: FocusPoint | None = None
    measure: WeightMeasure | None = None

    def __post_init__(self):
        if self.kind not in ("fic", "fic_star", "wfic"):
            raise ValidationError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "wfic":
            if self.measure is None or self.focus is not None:
                raise ValidationError("wfic needs a weight measure and no focus")
        else:
            if self.focus is None or self.measure is not None:
                raise ValidationError(f"{self.kind} needs a focus point and no measure")

    @classmethod
    def fic(cls, focus: FocusPoint) -> "Criterion":
        return cls("fic", focus=focus)

    @classmethod
    def fic_star(cls, focus: FocusPoint) -> "Criterion":
        return cls("fic_star", focus=focus)

    @classmethod
    def wfic(cls, measure: WeightMeasure) -> "Criterion":
        return cls("wfic", measure=measure)

    def score(self, fit, full, ds: Dataset):
        if self.kind == "wfic":
            return wfic_score(fit, full, self.measure, ds)
        return fic_score(fit, full, self.focus, ds)

    def value_of(self, score) -> float:
        if self.kind == "fic":
            return score.fic
        if self.kind == "fic_star":
            return score.fic_star
        return score.wfic


@dataclass(frozen=True)
class RankedRow:
    """One scored candidate: spec, its score object, and summary numbers."""

    spec: ModelSpec
    score: "FicScore | WficScore"
    value: float

    @property
    def h(self) -> float:
        return self.score.h_hat if isinstance(self.score, FicScore) else self.score.h_mean

    @property
    def h_sd(self) -> float | None:
        return None if isinstance(self.score, FicScore) else self.score.h_sd


@dataclass(frozen=True)
class SkippedModel:
    spec: ModelSpec
    reason: str


@dataclass
class Ranking:
    """All scored candidates ascending by criterion, plus the full-model row.

    ``rows`` keeps every estimable candidate (the plot files need them all);
    ``table_rows`` cuts the list at ``top`` for table output.  The full-model
    reference row is always computed, mirroring the last line of the tables.
    """

    rows: list
    full_row: RankedRow
    criterion: Criterion
    skipped: list = field(default_factory=list)
    top: int = 10

    def table_rows(self) -> list:
        return self.rows[: self.top]

    @property
    def n_candidates(self) -> int:
        return len(self.rows) + len(self.skipped)


def _order_key(row: RankedRow):
    # ties: fewer included covariates first, then fewer nonparametric ones,
    # then the per-covariate states lexicographically
    spec = row.spec
    return (row.value, spec.n_included, len(spec.time_varying), spec.states)


def _score_chunk(args):
    ds, specs, criterion = args
    full = fit_full(ds)
    out = []
    for spec in specs:
        out.append(_score_one(ds, spec, criterion, full))
    return out


def _score_one(ds, spec, criterion, full):
    try:
        fit = fit_semiparametric(ds, spec)
        score = criterion.score(fit, full, ds)
    except (SingularDesignError, EmptyModelError) as exc:
        return SkippedModel(spec, str(exc))
    return RankedRow(spec, score, float(criterion.value_of(score)))


def rank(ds: Dataset, candidates, criterion: Criterion, top: int = 10,
         workers: int = 1) -> Ranking:
    """Fit and score every candidate, sorted ascending by the criterion.

    Candidates whose fit hits a singular design (or is empty) are excluded
    and recorded in ``skipped``; if nothing survives an
    :class:`EmptyRankingError` is raised.  Scoring across candidates is a
    parallel map over a shared immutable context, assembled by a
    deterministic sort, so results do not depend on ``workers``.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("need at least one candidate model")
    full = fit_full(ds)
    results: list
    if workers > 1 and len(candidates) > 1:
        chunk = max(8, (len(candidates) + 4 * workers - 1) // (4 * workers))
        batches = [
            (ds, candidates[i : i + chunk], criterion)
            for i in range(0, len(candidates), chunk)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for batch in pool.map(_score_chunk, batches) for r in batch]
    else:
        results = [_score_one(ds, spec, criterion, full) for spec in candidates]
    rows = sorted((r for r in results if isinstance(r, RankedRow)), key=_order_key)
    skipped = [r for r in results if isinstance(r, SkippedModel)]
    if not rows:
        raise EmptyRankingError("no candidate model could be fitted")
    full_score = criterion.score(full, full, ds)
    full_row = RankedRow(full.spec, full_score, float(criterion.value_of(full_score)))
    return Ranking(rows=rows, full_row=full_row, criterion=criterion,
                   skipped=skipped, top=top)


def softmin_weights(values: np.ndarray, lam: float) -> np.ndarray:
    """Normalized ``exp(-lam * value)`` weights, computed around the minimum."""
    values = np.asarray(values, dtype=float)
    raw = np.exp(-lam * (values - values.min()))
    return raw / raw.sum()


def default_lambda(values) -> float:
    """Scale-aware default spread: reciprocal of the median criterion value."""
    med = float(np.median(np.asarray(values, dtype=float)))
    return 1.0 / med if med > 0 else 0.0


@dataclass(frozen=True)
class AverageEstimate:
    """Softmin-weighted combination of the top models' focus estimates."""

    specs: tuple
    weights: np.ndarray
    values: np.ndarray
    h_values: np.ndarray
    estimate: float
    lam: float
    m: int


def model_average(ranking: Ranking, lam: float | None, m: int) -> AverageEstimate:
    """Combine the top ``m`` rows with weights decreasing in the criterion.

    ``lam = 0`` gives uniform weights; ``lam = None`` picks the scale-aware
    default.  All rows must be scored at a common focus for the combined
    estimate to mean anything.
    """
    if m < 1:
        raise ValidationError("m must be at least 1")
    if len(ranking.rows) < m:
        raise ValidationError(f"ranking has {len(ranking.rows)} rows, need {m}")
    rows = ranking.rows[:m]
    values = np.array([r.value for r in rows])
    if lam is None:
        lam = default_lambda(values)
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    weights = softmin_weights(values, lam)
    h_values = np.array([r.h for r in rows])
    return AverageEstimate(
        specs=tuple(r.spec for r in rows),
        weights=weights,
        values=values,
        h_values=h_values,
        estimate=float(weights @ h_values),
        lam=float(lam),
        m=m,
    )
