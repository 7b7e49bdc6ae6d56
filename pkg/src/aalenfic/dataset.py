"""Right-censored survival data, the shared time grid, and at-risk Gram caches.

A :class:`Dataset` holds follow-up times, event flags, and a covariate matrix,
together with the time horizon ``tau`` that bounds every integral in the
package.  All estimation works on two derived structures that are built once
and shared read-only across model fits:

* :class:`TimeGrid` -- the distinct observed times in ``(0, tau]`` and the
  half-open intervals between them.  The at-risk matrix is constant on each
  interval, so every time integral in the package is an exact finite sum.
* :class:`GramCache` -- the full q-by-q at-risk Gram matrix on every interval.
  Any submodel's Gram matrix is a principal submatrix of it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import IngestionError, ValidationError


def _owned(a, dtype) -> np.ndarray:
    """A read-only contiguous copy, reusing arrays that are already locked."""
    arr = np.ascontiguousarray(a, dtype=dtype)
    if arr is a and arr.flags.writeable:
        arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Subject:
    """One observation: follow-up time, event flag (1 = event), covariate row."""

    time: float
    status: int
    covariates: np.ndarray


@dataclass
class Dataset:
    """Right-censored sample with a fixed time horizon.

    Parameters
    ----------
    times : ndarray, shape (n,)
        Follow-up time of each subject (event or censoring time).
    status : ndarray, shape (n,)
        1 if the event was observed, 0 if censored.
    covariates : ndarray, shape (n, q)
        One covariate row per subject.
    names : sequence of str
        Covariate labels, length q.
    tau : float
        Upper end of the estimation window.  Subjects with ``times > tau``
        are treated as censored at ``tau``.

    The instance is immutable after construction and safe to share between
    threads or worker processes.
    """

    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    names: tuple
    tau: float
    _grid: "TimeGrid | None" = field(default=None, init=False, repr=False)
    _gram: "GramCache | None" = field(default=None, init=False, repr=False)

    def __post_init__(self):
        times = _owned(self.times, float)
        status = np.asarray(self.status)
        x = _owned(self.covariates, float)
        if times.ndim != 1 or times.size < 1:
            raise ValidationError("need at least one subject")
        n = times.size
        if x.ndim != 2 or x.shape[0] != n:
            raise ValidationError(f"covariate matrix must be ({n}, q)")
        if x.shape[1] < 1:
            raise ValidationError("need at least one covariate column")
        if status.shape != (n,):
            raise ValidationError("status must have one entry per subject")
        if not np.isfinite(times).all() or np.any(times < 0):
            raise ValidationError("follow-up times must be finite and nonnegative")
        if not np.isin(status, (0, 1)).all():
            raise ValidationError("status flags must be 0 or 1")
        if not np.isfinite(x).all():
            raise ValidationError("covariates must be finite")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValidationError("tau must be a positive number")
        status = status.astype(np.int64)
        status.flags.writeable = False
        zero_events = np.flatnonzero((times == 0.0) & (status == 1))
        if zero_events.size:
            raise ValidationError(
                f"event at time 0 for subject {zero_events[0]}; the hazard model "
                "puts no mass at 0"
            )
        names = tuple(str(c) for c in self.names)
        if len(names) != x.shape[1]:
            raise ValidationError("need one name per covariate column")
        self.times, self.status, self.covariates = times, status, x
        self.names = names
        self.tau = float(self.tau)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def q(self) -> int:
        return self.covariates.shape[1]

    @property
    def subjects(self) -> list:
        return [
            Subject(float(t), int(d), x)
            for t, d, x in zip(self.times, self.status, self.covariates)
        ]

    def effective_times(self) -> np.ndarray:
        """Times clipped at tau; everything past tau counts as censored at tau."""
        return np.minimum(self.times, self.tau)

    def effective_status(self) -> np.ndarray:
        return np.where(self.times <= self.tau, self.status, 0)

    def __getstate__(self):
        # the grid/Gram caches are cheap to rebuild and expensive to ship to
        # worker processes
        state = self.__dict__.copy()
        state["_grid"] = None
        state["_gram"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        for a in (self.times, self.status, self.covariates):
            a.flags.writeable = False

    def grid(self) -> "TimeGrid":
        if self._grid is None:
            self._grid = build_grid(self)
        return self._grid

    def gram(self) -> "GramCache":
        if self._gram is None:
            self._gram = build_gram_cache(self, self.grid())
        return self._gram


@dataclass(frozen=True)
class TimeGrid:
    """Distinct observed times in ``(0, tau]`` and the intervals between them.

    ``breaks`` is ``[0, p_1, ..., p_m]`` with ``tau`` appended when the last
    observed time falls short of it; interval ``k`` is ``(breaks[k],
    breaks[k+1]]``.  The at-risk matrix is constant on each interval, equal to
    its value at the interval's right endpoint.
    """

    points: np.ndarray          # (m,) distinct effective times
    breaks: np.ndarray          # (L+1,) interval breakpoints, breaks[-1] == tau
    lengths: np.ndarray         # (L,)
    risk_counts: np.ndarray     # (L,) subjects at risk on each interval
    event_points: np.ndarray    # (E,) index into `points` per observed event
    event_subjects: np.ndarray  # (E,) subject index per observed event

    @property
    def n_intervals(self) -> int:
        return self.lengths.size

    @property
    def n_events(self) -> int:
        return self.event_points.size

    @property
    def event_times(self) -> np.ndarray:
        return self.points[self.event_points]

    @property
    def event_intervals(self) -> np.ndarray:
        # interval k ends at points[k], so the indices coincide
        return self.event_points

    @property
    def intervals(self) -> list:
        return [
            (float(self.breaks[k]), float(self.breaks[k + 1]), float(self.lengths[k]))
            for k in range(self.n_intervals)
        ]

    @property
    def events_at(self) -> dict:
        """Map grid-point index -> subject indices with an event there."""
        out: dict = {}
        for p, s in zip(self.event_points, self.event_subjects):
            out.setdefault(int(p), []).append(int(s))
        return out

    def interval_of(self, t) -> np.ndarray:
        """Index of the interval containing each time in ``(0, tau]``."""
        return np.searchsorted(self.breaks, np.asarray(t, dtype=float), side="left") - 1


@dataclass(frozen=True)
class GramCache:
    """Per-interval at-risk Gram matrices of the full covariate set.

    ``grams[k]`` equals ``Y(s)' Y(s)`` for any ``s`` inside interval ``k``;
    ``risk_sums[k]`` is the corresponding at-risk covariate column sum.  The
    submodel Gram for any index set is a principal submatrix of ``grams[k]``.
    """

    grams: np.ndarray       # (L, q, q), symmetric PSD
    risk_sums: np.ndarray   # (L, q)
    order_desc: np.ndarray  # (n,) subject indices by descending effective time
    _covariates: np.ndarray
    _eff_desc: np.ndarray

    def at_risk_rows(self, time: float) -> np.ndarray:
        """Covariate rows of the subjects at risk at ``time``."""
        count = int(np.searchsorted(-self._eff_desc, -float(time), side="right"))
        return self._covariates[self.order_desc[:count]]


def build_grid(ds: Dataset) -> TimeGrid:
    """Construct the shared :class:`TimeGrid` for a dataset.

    Grid points are the distinct effective times in ``(0, tau]``; tied events
    at a common time stay separate observations at the same point.
    """
    eff = ds.effective_times()
    eff_status = ds.effective_status()
    points = np.unique(eff[eff > 0])
    breaks = np.concatenate(([0.0], points))
    if points.size == 0 or points[-1] < ds.tau:
        breaks = np.concatenate((breaks, [ds.tau]))
    lengths = np.diff(breaks)
    risk_counts = np.array(
        [np.count_nonzero(eff >= r) for r in breaks[1:]], dtype=np.int64
    )
    ev_subjects = np.flatnonzero(eff_status == 1)
    ev_times = eff[ev_subjects]
    order = np.argsort(ev_times, kind="stable")
    ev_subjects = ev_subjects[order]
    ev_points = np.searchsorted(points, ev_times[order])
    for a in (points, breaks, lengths, risk_counts, ev_points, ev_subjects):
        a.flags.writeable = False
    return TimeGrid(points, breaks, lengths, risk_counts, ev_points, ev_subjects)


def build_gram_cache(ds: Dataset, grid: TimeGrid | None = None) -> GramCache:
    """Precompute per-interval Gram matrices by a reverse cumulative sum.

    Sorting subjects by descending effective time makes every at-risk set a
    prefix, so each interval's Gram matrix is one slice of a cumulative sum of
    outer products.
    """
    if grid is None:
        grid = ds.grid()
    eff = ds.effective_times()
    order_desc = np.argsort(-eff, kind="stable")
    x_desc = ds.covariates[order_desc]
    outer_cum = np.cumsum(np.einsum("ni,nj->nij", x_desc, x_desc), axis=0)
    sums_cum = np.cumsum(x_desc, axis=0)
    L, q = grid.n_intervals, ds.q
    grams = np.zeros((L, q, q))
    risk_sums = np.zeros((L, q))
    counts = grid.risk_counts
    nz = counts > 0
    grams[nz] = outer_cum[counts[nz] - 1]
    risk_sums[nz] = sums_cum[counts[nz] - 1]
    grams = np.ascontiguousarray(grams)
    for a in (grams, risk_sums, order_desc):
        a.flags.writeable = False
    return GramCache(grams, risk_sums, order_desc, ds.covariates, eff[order_desc])


def risk_matrix_at(ds: Dataset, s: float) -> np.ndarray:
    """The n-by-q at-risk design matrix at time ``s``.

    Row i equals the covariate row of subject i while that subject is still
    at risk (``times[i] >= s``) and is zero afterwards.
    """
    if not (0.0 < s <= ds.tau):
        raise ValidationError(f"time {s!r} outside the window (0, {ds.tau}]")
    at_risk = ds.times >= s
    return ds.covariates * at_risk[:, None]


@dataclass
class CsvConfig:
    """Column mapping and preprocessing options for :func:`load_csv`.

    ``covariate_columns=None`` takes every non time/status column in header
    order.  Columns named in ``center`` are shifted to sample mean zero;
    ``intercept=True`` prepends a constant column named ``intercept``.
    """

    tau: float
    time_column: str = "time"
    status_column: str = "status"
    covariate_columns: Sequence[str] | None = None
    delimiter: str = ","
    center: Sequence[str] = ()
    intercept: bool = False

    @classmethod
    def from_file(cls, path, tau=None) -> "CsvConfig":
        """Read ``key = value`` lines (tau, time_column, status_column,
        covariate_columns, delimiter, center, intercept)."""
        values: dict = {}
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValidationError(f"bad config line: {line!r}")
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
        if tau is None and "tau" not in values:
            raise ValidationError("config must set tau")
        kwargs = {"tau": float(values.pop("tau", tau if tau is not None else 0.0))}
        if "time_column" in values:
            kwargs["time_column"] = values.pop("time_column")
        if "status_column" in values:
            kwargs["status_column"] = values.pop("status_column")
        if "covariate_columns" in values:
            kwargs["covariate_columns"] = [
                c.strip() for c in values.pop("covariate_columns").split(",") if c.strip()
            ]
        if "delimiter" in values:
            kwargs["delimiter"] = values.pop("delimiter")
        if "center" in values:
            kwargs["center"] = [c.strip() for c in values.pop("center").split(",") if c.strip()]
        if "intercept" in values:
            raw = values.pop("intercept").lower()
            if raw not in ("true", "false", "0", "1", "yes", "no"):
                raise ValidationError(f"bad intercept flag {raw!r}")
            kwargs["intercept"] = raw in ("true", "1", "yes")
        if tau is not None:
            kwargs["tau"] = float(tau)
        if values:
            raise ValidationError(f"unknown config keys: {sorted(values)}")
        return cls(**kwargs)


def load_csv(path, config: CsvConfig) -> Dataset:
    """Read a delimited text file into a :class:`Dataset`.

    The header must name the time and status columns; every other column (or
    the explicit ``covariate_columns``) becomes a covariate.  Data rows are
    numbered from 1 in error messages.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=config.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError("empty file, expected a header row") from None
        header = [h.strip() for h in header]
        for col in (config.time_column, config.status_column):
            if col not in header:
                raise IngestionError(f"header is missing column {col!r}")
        if config.covariate_columns is None:
            cov_names = [
                h for h in header if h not in (config.time_column, config.status_column)
            ]
        else:
            cov_names = list(config.covariate_columns)
            for col in cov_names:
                if col not in header:
                    raise IngestionError(f"header is missing covariate column {col!r}")
        if not cov_names:
            raise IngestionError("no covariate columns found")
        col_idx = {h: i for i, h in enumerate(header)}
        t_idx, s_idx = col_idx[config.time_column], col_idx[config.status_column]
        x_idx = [col_idx[c] for c in cov_names]

        times, status, rows = [], [], []
        for rownum, row in enumerate(reader, start=1):
            if len(row) < len(header):
                raise IngestionError(
                    f"expected {len(header)} fields, got {len(row)}", row=rownum
                )
            try:
                t = float(row[t_idx])
                d = float(row[s_idx])
                xs = [float(row[i]) for i in x_idx]
            except ValueError as exc:
                raise IngestionError(f"unparseable field: {exc}", row=rownum) from None
            if t < 0:
                raise ValidationError(f"negative time {t:g} in row {rownum}")
            if d not in (0.0, 1.0):
                raise ValidationError(f"status {d:g} outside {{0,1}} in row {rownum}")
            times.append(t)
            status.append(int(d))
            rows.append(xs)

    if not rows:
        raise IngestionError("file contains no data rows")
    x = np.array(rows, dtype=float)
    for col in config.center:
        if col not in cov_names:
            raise ValidationError(f"cannot center unknown column {col!r}")
        j = cov_names.index(col)
        x[:, j] -= x[:, j].mean()
    names = list(cov_names)
    if config.intercept:
        x = np.column_stack([np.ones(len(rows)), x])
        names = ["intercept"] + names
    return Dataset(np.array(times), np.array(status), x, tuple(names), config.tau)
