"""Bootstrap from the fitted full model: simulated datasets, re-run
selection pipelines, and quantile confidence intervals.

Each subject's lifetime is redrawn from its own fitted distribution
``F_i(t) = 1 - prod(1 - dH_i)``, decomposed exactly into discrete atoms at
the event times, exponential decay from the continuous drift between them,
and a residual mass past the window that realizes as "no event".  Censoring
comes either from known per-subject times or from the reverse product-limit
estimate of the censoring distribution.  The post-selection (or
model-averaged) estimator is recomputed on every replicate, selected subsets
and all, and the error quantiles against the original full-model estimate
give the confidence interval.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import (
    AalenFicError,
    DegenerateConditionalError,
    EmptyModelError,
    EmptyRankingError,
    SamplerClampWarning,
    SingularDesignError,
    ValidationError,
)
from .estimators import FocusPoint, SemiparFit, cumhaz, fit_full, fit_semiparametric
from .selector import Criterion, default_lambda, rank, softmin_weights


class FittedLifetimeSampler:
    """Per-subject lifetime distributions implied by a fitted model.

    For each subject the fitted cumulative hazard is split into jump factors
    at the grid points and exponential factors for the continuous drift
    inside each interval; per-step probabilities are clamped into [0, 1] and
    clamping beyond ``clamp_tol`` is reported as a :class:`SamplerClampWarning`.
    Draws invert the resulting survival curve exactly; the residual mass past
    the window realizes as ``+inf``.
    """

    def __init__(self, fit: SemiparFit, ds: Dataset, clamp_tol: float = 1e-6):
        if fit.grid is not ds.grid():
            raise ValidationError("fit was not computed on the given dataset")
        grid = fit.grid
        self.grid = grid
        self.n = ds.n
        n_points = grid.points.size
        L = grid.n_intervals

        x_i = ds.covariates[:, fit.idx_varying]
        jumps = x_i @ fit.jump_sizes_by_point().T if fit.k_varying else np.zeros((ds.n, n_points))
        rates = x_i @ fit._drift.T if fit.k_varying else np.zeros((ds.n, L))
        if fit.k_constant:
            rates = rates + (ds.covariates[:, fit.idx_constant] @ fit.alpha)[:, None]

        worst = max(
            float(np.maximum(jumps - 1.0, 0.0).max(initial=0.0)),
            float(np.maximum(-jumps, 0.0).max(initial=0.0)),
            float(np.maximum(-rates * grid.lengths, 0.0).max(initial=0.0)),
        )
        self.clamped_beyond_tol = worst > clamp_tol
        if self.clamped_beyond_tol:
            warnings.warn(
                f"fitted lifetime distribution clamped by up to {worst:.3g}",
                SamplerClampWarning,
                stacklevel=2,
            )
        jumps = np.clip(jumps, 0.0, 1.0)
        rates = np.maximum(rates, 0.0)

        cont_factor = np.exp(-rates * grid.lengths)
        jump_factor = np.ones((ds.n, L))
        jump_factor[:, :n_points] = 1.0 - jumps
        step = cont_factor * jump_factor
        after = np.cumprod(step, axis=1)                    # survival after interval k
        after_prev = np.concatenate([np.ones((ds.n, 1)), after[:, :-1]], axis=1)
        before = after_prev * cont_factor                   # just before the jump

        self._rates = rates
        self._before = before
        self._after = after
        self._after_prev = after_prev

    def survival_at(self, i: int, t: float) -> float:
        """Fitted survival of subject i at time t (right-continuous)."""
        grid = self.grid
        if t <= 0:
            return 1.0
        if t >= grid.breaks[-1]:
            return float(self._after[i, -1])
        k = int(np.searchsorted(grid.breaks, t, side="left")) - 1
        if t == grid.breaks[k + 1]:
            return float(self._after[i, k])
        return float(
            self._after_prev[i, k] * np.exp(-self._rates[i, k] * (t - grid.breaks[k]))
        )

    def mass_balance(self, i: int) -> dict:
        """Probability split of subject i's distribution: atoms at grid
        points, continuous mass inside intervals, residual past the window."""
        atoms = self._before[i] - self._after[i]
        cont = self._after_prev[i] - self._before[i]
        return {
            "jumps": float(atoms.sum()),
            "continuous": float(cont.sum()),
            "residual": float(self._after[i, -1]),
        }

    def _invert(self, i, u):
        """Map survival levels u (one draw each) to times; +inf past the window."""
        grid = self.grid
        after = self._after[i]
        below = after < u[:, None]
        hit = below.any(axis=1)
        k = np.where(hit, below.argmax(axis=1), 0)
        out = np.full(u.shape, np.inf)
        if not hit.any():
            return out
        before_k = self._before[i, k]
        prev_k = self._after_prev[i, k]
        at_jump = hit & (u <= before_k)
        out[at_jump] = grid.breaks[k[at_jump] + 1]
        in_cont = hit & ~at_jump
        if in_cont.any():
            kc = k[in_cont]
            rate = self._rates[i, kc]
            out[in_cont] = grid.breaks[kc] + np.log(prev_k[in_cont] / u[in_cont]) / rate
        return out

    def conditional_draws(self, i: int, t_min: float, size: int, rng) -> np.ndarray:
        """Draws from subject i's distribution conditioned on surviving past
        ``t_min``."""
        s0 = self.survival_at(i, t_min)
        if s0 <= 0.0:
            raise DegenerateConditionalError(
                f"subject {i} has no fitted survival mass past {t_min:g}"
            )
        u = s0 * (1.0 - rng.random(size))
        return self._invert(i, u)

    def unconditional_draws(self, rng) -> np.ndarray:
        """One lifetime draw per subject; vectorized across subjects."""
        u = 1.0 - rng.random(self.n)
        below = self._after < u[:, None]
        hit = below.any(axis=1)
        k = np.where(hit, below.argmax(axis=1), 0)
        rows = np.arange(self.n)
        out = np.full(self.n, np.inf)
        before_k = self._before[rows, k]
        prev_k = self._after_prev[rows, k]
        at_jump = hit & (u <= before_k)
        out[at_jump] = self.grid.breaks[k[at_jump] + 1]
        in_cont = hit & ~at_jump
        if in_cont.any():
            kc = k[in_cont]
            rate = self._rates[in_cont, kc]
            out[in_cont] = self.grid.breaks[kc] + np.log(prev_k[in_cont] / u[in_cont]) / rate
        return out


@dataclass(frozen=True)
class CensoringSampler:
    """Censoring-time generator: known per-subject times, or draws from the
    reverse product-limit estimate (residual mass never censors)."""

    support: np.ndarray | None = None
    masses: np.ndarray | None = None
    known: np.ndarray | None = None

    @classmethod
    def known_times(cls, times) -> "CensoringSampler":
        times = np.asarray(times, dtype=float)
        if (times <= 0).any():
            raise ValidationError("known censoring times must be positive")
        return cls(known=times)

    def draw(self, rng, n: int) -> np.ndarray:
        if self.known is not None:
            if self.known.size != n:
                raise ValidationError("known censoring times must cover every subject")
            return self.known.copy()
        out = np.full(n, np.inf)
        if self.support is None or self.support.size == 0:
            return out
        cum = np.cumsum(self.masses)
        u = rng.random(n)
        idx = np.searchsorted(cum, u, side="right")
        inside = idx < self.support.size
        out[inside] = self.support[idx[inside]]
        return out


def censoring_km(ds: Dataset) -> CensoringSampler:
    """Reverse product-limit estimate of the censoring distribution.

    Censorings play the role of events; the residual mass past the last
    support point maps to "never censored within the window".
    """
    eff_t = ds.effective_times()
    eff_c = 1 - ds.effective_status()
    times = np.unique(eff_t[eff_t > 0])
    support, masses = [], []
    surv = 1.0
    for t in times:
        at_risk = np.count_nonzero(eff_t >= t)
        d_cens = np.count_nonzero((eff_t == t) & (eff_c == 1))
        if d_cens == 0:
            continue
        mass = surv * d_cens / at_risk
        support.append(t)
        masses.append(mass)
        surv -= mass
    return CensoringSampler(
        support=np.asarray(support, dtype=float), masses=np.asarray(masses, dtype=float)
    )


def simulate_dataset(full: SemiparFit, ds: Dataset, censoring: CensoringSampler,
                     rng, _sampler: FittedLifetimeSampler | None = None) -> Dataset:
    """One bootstrap dataset: fitted lifetimes, fresh censoring, covariates kept.

    Lifetimes with all their mass past the window (residual draws) realize as
    censored at ``tau``.
    """
    sampler = _sampler if _sampler is not None else FittedLifetimeSampler(full, ds)
    t0 = sampler.unconditional_draws(rng)
    c = censoring.draw(rng, ds.n)
    status = ((t0 <= c) & np.isfinite(t0)).astype(np.int64)
    times = np.minimum(t0, c)
    times = np.where(np.isfinite(times), times, ds.tau)
    return Dataset(times, status, ds.covariates, ds.names, ds.tau)


@dataclass(frozen=True)
class PipelineConfig:
    """What gets re-run on every replicate: the candidate list, the ranking
    criterion, and the averaging pool (``top_m = 1`` is plain post-selection)."""

    candidates: tuple
    criterion: Criterion
    top_m: int = 1
    lam: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValidationError("pipeline needs at least one candidate")
        if self.top_m < 1:
            raise ValidationError("top_m must be at least 1")


def pipeline_estimate(ds: Dataset, pipeline: PipelineConfig, focus: FocusPoint):
    """Run selection (and averaging) once; return the estimate and top spec.

    The combined estimate always targets ``focus``, whatever the ranking
    criterion was; the top-``m`` fits are re-evaluated there.
    """
    ranking = rank(ds, pipeline.candidates, pipeline.criterion,
                   top=pipeline.top_m, workers=1)
    m = min(pipeline.top_m, len(ranking.rows))
    rows = ranking.rows[:m]
    values = np.array([r.value for r in rows])
    lam = pipeline.lam if pipeline.lam is not None else default_lambda(values)
    weights = softmin_weights(values, lam)
    h = np.array([
        cumhaz(fit_semiparametric(ds, row.spec), focus) for row in rows
    ])
    return float(weights @ h), rows[0].spec


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate errors, their quantiles, the interval, and diagnostics."""

    b: int
    b_effective: int
    errors: np.ndarray            # replicate H*_tilde - H_full, original scale
    quantile_low: float           # alpha quantile of the errors
    quantile_high: float          # 1 - alpha quantile
    interval: tuple               # (h_tilde - quantile_high, h_tilde - quantile_low)
    mse: float
    h_tilde: float
    h_full: float
    alpha: float
    selection_counts: dict
    reliability_warning: bool


def _replicate_batch(args):
    ds, pipeline, focus, h_full, censoring, seeds = args
    full = fit_full(ds)
    sampler = FittedLifetimeSampler(full, ds)
    out = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        sim = simulate_dataset(full, ds, censoring, rng, _sampler=sampler)
        try:
            h_star, top_spec = pipeline_estimate(sim, pipeline, focus)
        except (SingularDesignError, EmptyRankingError, EmptyModelError):
            out.append(None)
            continue
        out.append((h_star - h_full, top_spec.describe()))
    return out


def bootstrap_ci(ds: Dataset, pipeline: PipelineConfig, focus: FocusPoint,
                 b: int, alpha: float, rng_seed, censoring: CensoringSampler | None = None,
                 workers: int = 1, replicate_seeds=None) -> BootstrapResult:
    """Bootstrap interval for the post-selection / model-averaged estimator.

    ``b`` replicates re-run the whole pipeline on data simulated from the
    fitted full model; the ``alpha`` and ``1 - alpha`` quantiles of the
    replicate errors give an approximate ``1 - 2*alpha`` interval around the
    original estimate.  Failed replicates are dropped and counted; losing
    more than 20% flags the result as unreliable.
    """
    if b < 2:
        raise ValidationError("need at least two bootstrap replicates")
    if not 0.0 < alpha < 0.5:
        raise ValidationError("alpha must lie in (0, 0.5)")
    full = fit_full(ds)
    h_full = cumhaz(full, focus)
    h_tilde, _ = pipeline_estimate(ds, pipeline, focus)
    if censoring is None:
        censoring = censoring_km(ds)
    if replicate_seeds is None:
        seq = (
            rng_seed
            if isinstance(rng_seed, np.random.SeedSequence)
            else np.random.SeedSequence(rng_seed)
        )
        replicate_seeds = seq.spawn(b)
    else:
        replicate_seeds = list(replicate_seeds)
        if len(replicate_seeds) != b:
            raise ValidationError("need one replicate seed per replicate")

    if workers > 1:
        chunk = max(1, (b + 4 * workers - 1) // (4 * workers))
        batches = [
            (ds, pipeline, focus, h_full, censoring, replicate_seeds[i : i + chunk])
            for i in range(0, b, chunk)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for batch in pool.map(_replicate_batch, batches) for r in batch]
    else:
        results = _replicate_batch(
            (ds, pipeline, focus, h_full, censoring, replicate_seeds)
        )

    errors = np.array([r[0] for r in results if r is not None])
    counts: dict = {}
    for r in results:
        if r is not None:
            counts[r[1]] = counts.get(r[1], 0) + 1
    n_failed = b - errors.size
    if errors.size == 0:
        raise AalenFicError("every bootstrap replicate failed")
    unreliable = n_failed > 0.2 * b
    if unreliable:
        warnings.warn(
            f"{n_failed}/{b} bootstrap replicates failed; interval may be unreliable",
            UserWarning,
            stacklevel=2,
        )
    c_low = float(np.quantile(errors, alpha))
    d_high = float(np.quantile(errors, 1.0 - alpha))
    return BootstrapResult(
        b=b,
        b_effective=int(errors.size),
        errors=errors,
        quantile_low=c_low,
        quantile_high=d_high,
        interval=(h_tilde - d_high, h_tilde - c_low),
        mse=float(np.mean(errors**2)),
        h_tilde=h_tilde,
        h_full=h_full,
        alpha=float(alpha),
        selection_counts=counts,
        reliability_warning=bool(unreliable),
    )
