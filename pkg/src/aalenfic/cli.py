"""Command-line front end: fit, rank, average, bootstrap, simulate.

Every command is a pure function of (input file, flags, seed); reruns with
the same arguments produce byte-identical output files.  Exit codes: 0
success, 2 validation problem, 3 singular design, 4 I/O problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bootstrap import CensoringSampler, PipelineConfig, bootstrap_ci, censoring_km, simulate_dataset
from .dataset import CsvConfig, Dataset, load_csv
from .errors import (
    AalenFicError,
    DegenerateConditionalError,
    EmptyRankingError,
    IngestionError,
    SingularDesignError,
    ValidationError,
)
from .estimators import FocusPoint, fit_full
from .selector import Criterion, ProtectionRule, enumerate_models, model_average, rank
from .wfic import WeightMeasure, empirical_measure, virtual_patient_measure


def _add_data_args(p):
    p.add_argument("--input", required=True, help="input CSV file")
    p.add_argument("--tau", type=float, default=None, help="time horizon")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--time-col", default=None)
    p.add_argument("--status-col", default=None)
    p.add_argument("--covariates", default=None, help="comma list; default: all other columns")
    p.add_argument("--delimiter", default=None)
    p.add_argument("--center", default=None, help="comma list of columns to center")
    p.add_argument("--intercept", action="store_true", help="prepend a constant column")


def _add_model_args(p):
    p.add_argument("--protect", action="append", default=[],
                   metavar="NAME=KIND",
                   help="protection rule, KIND in time-varying|constant|either")
    p.add_argument("--criterion", choices=("fic", "fic_star", "wfic"), default="fic")
    p.add_argument("--focus-t", type=float, default=None)
    p.add_argument("--focus-x", default=None, help="comma list, length q")
    p.add_argument("--focus-t0", type=float, default=None)
    p.add_argument("--weights-file", default=None, help="wfic: explicit atom CSV")
    p.add_argument("--virtual-patients", type=int, default=None,
                   help="wfic: sample this many virtual patients")
    p.add_argument("--fix", action="append", default=[], metavar="NAME=VALUE",
                   help="pinned covariate for --virtual-patients")
    p.add_argument("--dichotomous", default=None,
                   help="comma list of covariates rounded to their two observed values")
    p.add_argument("--empirical", type=int, default=None,
                   help="wfic: censoring-adjusted empirical weights with this many draws")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)


def _dataset_from_args(args) -> Dataset:
    if args.config:
        cfg = CsvConfig.from_file(args.config, tau=args.tau)
    else:
        if args.tau is None:
            raise ValidationError("--tau is required (or supply it via --config)")
        cfg = CsvConfig(tau=args.tau)
    if args.time_col:
        cfg.time_column = args.time_col
    if args.status_col:
        cfg.status_column = args.status_col
    if args.covariates:
        cfg.covariate_columns = [c.strip() for c in args.covariates.split(",") if c.strip()]
    if args.delimiter:
        cfg.delimiter = args.delimiter
    if args.center:
        cfg.center = [c.strip() for c in args.center.split(",") if c.strip()]
    if args.intercept:
        cfg.intercept = True
    return load_csv(args.input, cfg)


def _column_index(ds: Dataset, name: str) -> int:
    if name not in ds.names:
        raise ValidationError(f"unknown covariate {name!r}; have {list(ds.names)}")
    return ds.names.index(name)


def _protection_from_args(args, ds: Dataset) -> ProtectionRule:
    pairs = []
    for item in args.protect:
        name, _, kind = item.partition("=")
        if not kind:
            raise ValidationError(f"--protect needs NAME=KIND, got {item!r}")
        pairs.append((_column_index(ds, name.strip()), kind.strip()))
    return ProtectionRule.from_assignments(ds.q, pairs)


def _focus_from_args(args, ds: Dataset) -> FocusPoint:
    if args.focus_t is None or args.focus_x is None:
        raise ValidationError("this command needs --focus-t and --focus-x")
    x = np.array([float(v) for v in args.focus_x.split(",")])
    if x.size != ds.q:
        raise ValidationError(
            f"--focus-x has {x.size} entries but the dataset has q={ds.q} "
            "covariates (intercept included when prepended)"
        )
    return FocusPoint(t=args.focus_t, x=x, t0=args.focus_t0)


def _require_seed(args, why: str):
    if args.seed is None:
        raise ValidationError(f"--seed is required for {why}")


def _criterion_from_args(args, ds: Dataset) -> Criterion:
    if args.criterion in ("fic", "fic_star"):
        focus = _focus_from_args(args, ds)
        return Criterion(args.criterion, focus=focus)
    modes = [args.weights_file is not None, args.virtual_patients is not None,
             args.empirical is not None]
    if sum(modes) != 1:
        raise ValidationError(
            "wfic needs exactly one of --weights-file, --virtual-patients, --empirical"
        )
    if args.weights_file is not None:
        measure = WeightMeasure.from_csv(args.weights_file)
    elif args.virtual_patients is not None:
        _require_seed(args, "--virtual-patients")
        if args.focus_t is None:
            raise ValidationError("--virtual-patients needs --focus-t for the atom time")
        fixed = []
        for item in args.fix:
            name, _, value = item.partition("=")
            if not value:
                raise ValidationError(f"--fix needs NAME=VALUE, got {item!r}")
            fixed.append((_column_index(ds, name.strip()), float(value)))
        dich = None
        if args.dichotomous:
            dich = [_column_index(ds, c.strip()) for c in args.dichotomous.split(",")]
        measure = virtual_patient_measure(
            ds, fixed, args.virtual_patients, args.focus_t, args.seed, dichotomous=dich
        )
    else:
        _require_seed(args, "--empirical")
        measure = empirical_measure(ds, fit_full(ds), args.empirical, args.seed)
    return Criterion("wfic", measure=measure)


def _fmt6(x: float) -> str:
    return f"{x:.6g}"


def _write_ranking_csv(path, ranking, paper_format: bool):
    crit = ranking.criterion.kind
    is_wfic = crit == "wfic"
    header = [crit, "sqrt_v", "sqrt_sqb_plus", "I", "J"]
    header += ["H_mean", "H_sd"] if is_wfic else ["H_hat"]
    fmt = (lambda x: f"{x:.3f}") if paper_format else _fmt6
    rows = ranking.table_rows() + [ranking.full_row]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            s = row.score
            if is_wfic:
                cells = [row.value, np.sqrt(s.v_int), np.sqrt(s.sqb_int_plus)]
            else:
                cells = [row.value, np.sqrt(s.v), np.sqrt(s.sqb_plus)]
            line = [fmt(c) for c in cells]
            line.append(",".join(str(j + 1) for j in row.spec.time_varying))
            line.append(",".join(str(j + 1) for j in row.spec.constant))
            line.append(fmt(row.h))
            if is_wfic:
                line.append(fmt(row.h_sd))
            writer.writerow(line)


def _write_plot_csv(path, ranking):
    crit = ranking.criterion.kind
    is_wfic = crit == "wfic"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([crit, "H_mean", "H_sd"] if is_wfic else [crit, "H_hat"])
        for row in ranking.rows:
            line = [repr(row.value), repr(row.h)]
            if is_wfic:
                line.append(repr(row.h_sd))
            writer.writerow(line)


def _write_json(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def cmd_fit(args) -> int:
    ds = _dataset_from_args(args)
    full = fit_full(ds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "fit.json", full.export_dict(ds.names))

    grid = ds.grid()
    event_pos = np.unique(grid.event_points)
    times = grid.points[event_pos]
    a_hat = full.cumulative_at(times)                      # (T, q)
    var_prefix = np.cumsum(full._u**2, axis=0)             # (E, q)
    pos = np.searchsorted(grid.event_times, times, side="right")
    v_at = np.vstack([np.zeros(ds.q), var_prefix])[pos]
    half = 1.96 * np.sqrt(v_at)
    for j, name in enumerate(ds.names):
        band_path = out_dir / f"band_{_safe_name(name)}.csv"
        with open(band_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "A_hat", "lo", "hi"])
            for k, t in enumerate(times):
                writer.writerow([
                    repr(float(t)),
                    repr(float(a_hat[k, j])),
                    repr(float(a_hat[k, j] - half[k, j])),
                    repr(float(a_hat[k, j] + half[k, j])),
                ])
    print(f"wrote fit.json and {ds.q} band files to {out_dir}")
    return 0


def _ranking_from_args(args, ds: Dataset):
    rules = _protection_from_args(args, ds)
    candidates = enumerate_models(ds.q, rules)
    criterion = _criterion_from_args(args, ds)
    return rank(ds, candidates, criterion, top=args.top, workers=args.workers)


def _ranking_payload(ranking) -> dict:
    def row_dict(row):
        s = row.score
        out = {
            ranking.criterion.kind: row.value,
            "I": [j + 1 for j in row.spec.time_varying],
            "J": [j + 1 for j in row.spec.constant],
        }
        if ranking.criterion.kind == "wfic":
            out.update(sqrt_v=float(np.sqrt(s.v_int)),
                       sqrt_sqb_plus=float(np.sqrt(s.sqb_int_plus)),
                       H_mean=row.h, H_sd=row.h_sd)
        else:
            out.update(sqrt_v=float(np.sqrt(s.v)),
                       sqrt_sqb_plus=float(np.sqrt(s.sqb_plus)),
                       H_hat=row.h)
        return out

    return {
        "criterion": ranking.criterion.kind,
        "rows": [row_dict(r) for r in ranking.table_rows()],
        "full_model": row_dict(ranking.full_row),
        "n_candidates": ranking.n_candidates,
        "n_skipped": len(ranking.skipped),
    }


def cmd_rank(args) -> int:
    ds = _dataset_from_args(args)
    ranking = _ranking_from_args(args, ds)
    out = Path(args.out)
    _write_ranking_csv(out, ranking, args.paper_format)
    plot_out = Path(args.plot_out) if args.plot_out else out.with_name(out.stem + "_plot.csv")
    _write_plot_csv(plot_out, ranking)
    if args.json_out:
        _write_json(args.json_out, _ranking_payload(ranking))
    print(
        f"ranked {len(ranking.rows)} models ({len(ranking.skipped)} skipped); "
        f"table -> {out}, plot data -> {plot_out}"
    )
    return 0


def cmd_average(args) -> int:
    ds = _dataset_from_args(args)
    ranking = _ranking_from_args(args, ds)
    avg = model_average(ranking, args.lam, args.top_m)
    payload = {
        "estimate": avg.estimate,
        "lambda": avg.lam,
        "m": avg.m,
        "models": [
            {
                "I": [j + 1 for j in spec.time_varying],
                "J": [j + 1 for j in spec.constant],
                "weight": float(w),
                "criterion": float(v),
                "H_hat": float(h),
            }
            for spec, w, v, h in zip(avg.specs, avg.weights, avg.values, avg.h_values)
        ],
    }
    if args.bootstrap_b:
        _require_seed(args, "--bootstrap-b")
        focus = _focus_from_args(args, ds)
        pipeline = PipelineConfig(
            candidates=tuple(enumerate_models(ds.q, _protection_from_args(args, ds))),
            criterion=ranking.criterion,
            top_m=args.top_m,
            lam=args.lam,
        )
        result = bootstrap_ci(ds, pipeline, focus, args.bootstrap_b, args.alpha,
                              args.seed, workers=args.workers)
        payload["bootstrap"] = _bootstrap_payload(result)
    _write_json(args.out, payload)
    print(f"model average {avg.estimate:.6g} -> {args.out}")
    return 0


def _bootstrap_payload(result) -> dict:
    return {
        "interval": [result.interval[0], result.interval[1]],
        "quantile_low": result.quantile_low,
        "quantile_high": result.quantile_high,
        "mse": result.mse,
        "h_tilde": result.h_tilde,
        "h_full": result.h_full,
        "alpha": result.alpha,
        "b": result.b,
        "b_effective": result.b_effective,
        "reliability_warning": result.reliability_warning,
        "selection_counts": dict(sorted(result.selection_counts.items())),
    }


def cmd_bootstrap(args) -> int:
    ds = _dataset_from_args(args)
    _require_seed(args, "bootstrap")
    focus = _focus_from_args(args, ds)
    criterion = _criterion_from_args(args, ds)
    rules = _protection_from_args(args, ds)
    pipeline = PipelineConfig(
        candidates=tuple(enumerate_models(ds.q, rules)),
        criterion=criterion,
        top_m=args.top_m,
        lam=args.lam,
    )
    censoring = None
    if args.censoring_col:
        censoring = CensoringSampler.known_times(_read_column(args, args.censoring_col))
    result = bootstrap_ci(ds, pipeline, focus, args.bootstrap_b, args.alpha,
                          args.seed, censoring=censoring, workers=args.workers)
    _write_json(args.out, _bootstrap_payload(result))
    print(
        f"bootstrap interval [{result.interval[0]:.6g}, {result.interval[1]:.6g}] "
        f"({result.b_effective}/{result.b} replicates) -> {args.out}"
    )
    return 0


def _read_column(args, column: str) -> np.ndarray:
    delim = args.delimiter or ","
    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delim)
        header = next(reader, None)
        if header is None or column not in header:
            raise ValidationError(f"column {column!r} not found in {args.input}")
        idx = [h.strip() for h in header].index(column)
        return np.array([float(row[idx]) for row in reader])


def cmd_simulate(args) -> int:
    ds = _dataset_from_args(args)
    _require_seed(args, "simulate")
    full = fit_full(ds)
    if args.censoring_col:
        censoring = CensoringSampler.known_times(_read_column(args, args.censoring_col))
    else:
        censoring = censoring_km(ds)
    rng = np.random.default_rng(args.seed)
    sim = simulate_dataset(full, ds, censoring, rng)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "status", *ds.names])
        for t, d, row in zip(sim.times, sim.status, sim.covariates):
            writer.writerow([repr(float(t)), int(d), *[repr(float(v)) for v in row]])
    print(f"simulated dataset ({sim.n} subjects) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aalenfic",
        description="Additive hazard regression with focused model selection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the full model, emit curves with bands")
    _add_data_args(p_fit)
    p_fit.add_argument("--out-dir", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_rank = sub.add_parser("rank", help="score and rank candidate models")
    _add_data_args(p_rank)
    _add_model_args(p_rank)
    p_rank.add_argument("--top", type=int, default=10)
    p_rank.add_argument("--out", required=True)
    p_rank.add_argument("--plot-out", default=None)
    p_rank.add_argument("--json-out", default=None, help="also export the table as JSON")
    p_rank.add_argument("--paper-format", action="store_true",
                        help="3-decimal table formatting")
    p_rank.set_defaults(func=cmd_rank)

    p_avg = sub.add_parser("average", help="model-average the top candidates")
    _add_data_args(p_avg)
    _add_model_args(p_avg)
    p_avg.add_argument("--top", type=int, default=10)
    p_avg.add_argument("--top-m", type=int, default=3)
    p_avg.add_argument("--lambda", dest="lam", type=float, default=None)
    p_avg.add_argument("--bootstrap", dest="bootstrap_b", type=int, default=None)
    p_avg.add_argument("--alpha", type=float, default=0.05)
    p_avg.add_argument("--out", required=True)
    p_avg.set_defaults(func=cmd_average)

    p_boot = sub.add_parser("bootstrap", help="bootstrap interval for the selected estimator")
    _add_data_args(p_boot)
    _add_model_args(p_boot)
    p_boot.add_argument("--top", type=int, default=10)
    p_boot.add_argument("--top-m", type=int, default=1)
    p_boot.add_argument("--lambda", dest="lam", type=float, default=None)
    p_boot.add_argument("--bootstrap", dest="bootstrap_b", type=int, required=True)
    p_boot.add_argument("--alpha", type=float, default=0.05)
    p_boot.add_argument("--censoring-col", default=None,
                        help="column with known (administrative) censoring times")
    p_boot.add_argument("--out", required=True)
    p_boot.set_defaults(func=cmd_bootstrap)

    p_sim = sub.add_parser("simulate", help="simulate one dataset from the fitted full model")
    _add_data_args(p_sim)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--censoring-col", default=None)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (IngestionError, ValidationError, DegenerateConditionalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SingularDesignError, EmptyRankingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except AalenFicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
