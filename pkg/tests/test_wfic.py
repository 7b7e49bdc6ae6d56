"""Weight measures and the aggregated criterion."""

import numpy as np
import pytest

from aalenfic import (
    Dataset,
    DegenerateConditionalError,
    FocusPoint,
    ModelSpec,
    ValidationError,
    WeightMeasure,
    empirical_measure,
    fic_score,
    fit_full,
    fit_semiparametric,
    virtual_patient_measure,
    wfic_score,
)
from aalenfic.fic import score_atoms
from conftest import random_dataset


class TestWeightMeasure:
    def test_validation(self):
        with pytest.raises(ValidationError):
            WeightMeasure(np.array([]), np.zeros((0, 2)), np.array([]))
        with pytest.raises(ValidationError):
            WeightMeasure(np.array([0.0]), np.zeros((1, 2)), np.array([1.0]))
        with pytest.raises(ValidationError):
            WeightMeasure(np.array([1.0]), np.zeros((1, 2)), np.array([-1.0]))

    def test_from_atoms_and_normalization(self):
        m = WeightMeasure.from_atoms([(1.0, [1.0, 0.0], 0.25), (2.0, [1.0, 1.0], 0.75)])
        assert m.n_atoms == 2 and m.normalization == 1.0

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(40)
        m = WeightMeasure(rng.random(5) + 0.1, rng.normal(size=(5, 3)), rng.random(5))
        path = tmp_path / "w.csv"
        m.to_csv(path, ["a", "b", "c"])
        back = WeightMeasure.from_csv(path)
        np.testing.assert_array_equal(back.times, m.times)
        np.testing.assert_array_equal(back.covariates, m.covariates)
        np.testing.assert_array_equal(back.weights, m.weights)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValidationError):
            WeightMeasure.from_csv(path)


class TestWficScore:
    def test_single_atom_equals_pointwise_exactly(self):
        rng = np.random.default_rng(41)
        ds = random_dataset(rng, n=25, q=3)
        full = fit_full(ds)
        from aalenfic import enumerate_models

        for spec in enumerate_models(3):
            if spec.n_included == 0:
                continue
            fit = fit_semiparametric(ds, spec)
            t = 0.7 * ds.tau
            x = rng.normal(size=3)
            measure = WeightMeasure(np.array([t]), x[None, :], np.array([1.0]))
            w_score = wfic_score(fit, full, measure, ds)
            p_score = fic_score(fit, full, FocusPoint(t=t, x=x), ds)
            assert w_score.wfic == p_score.fic
            assert w_score.v_int == p_score.v
            assert w_score.sqb_int_raw == p_score.sqb_raw

    def test_aggregate_truncation_not_per_atom(self):
        # find one focus with positive and one with negative raw squared bias,
        # then check the aggregate is truncated once, not atom by atom
        rng = np.random.default_rng(50)
        ds = random_dataset(rng, n=40, q=3)
        full = fit_full(ds)
        fit = fit_semiparametric(ds, ModelSpec(3, (0,), ()))
        t_pos, t_neg = 1.194, 0.597
        x_pos = np.array([1.0, -0.54, 0.99])
        x_neg = np.array([1.0, 2.19, 1.71])
        s_pos = float(score_atoms(fit, full, [t_pos], x_pos[None, :])["sqb_raw"][0])
        s_neg = float(score_atoms(fit, full, [t_neg], x_neg[None, :])["sqb_raw"][0])
        assert s_pos > 0 > s_neg

        # weight the negative atom so the aggregate stays positive but smaller
        w_neg = 0.5 * s_pos / abs(s_neg)
        measure = WeightMeasure(
            np.array([t_pos, t_neg]),
            np.vstack([x_pos, x_neg]),
            np.array([1.0, w_neg]),
        )
        score = wfic_score(fit, full, measure, ds)
        aggregate = 1.0 * s_pos + w_neg * s_neg
        assert aggregate > 0
        assert abs(score.sqb_int_raw - aggregate) < 1e-12
        assert abs(score.wfic - (score.v_int + aggregate)) < 1e-15
        # per-atom truncation would have kept the full positive term
        per_atom = max(0.0, s_pos) * 1.0 + max(0.0, s_neg) * w_neg
        assert score.wfic < score.v_int + per_atom

        # flipping weights so the aggregate goes negative truncates it to zero
        measure2 = WeightMeasure(
            np.array([t_pos, t_neg]),
            np.vstack([x_pos, x_neg]),
            np.array([1.0, 2.0 * s_pos / abs(s_neg)]),
        )
        score2 = wfic_score(fit, full, measure2, ds)
        assert score2.sqb_int_raw < 0
        assert score2.wfic == score2.v_int

    def test_full_model_under_any_measure(self):
        rng = np.random.default_rng(42)
        ds = random_dataset(rng, n=20, q=2)
        full = fit_full(ds)
        measure = WeightMeasure(
            np.array([0.3, 0.8]) * ds.tau, rng.normal(size=(2, 2)), np.array([1.0, 2.0])
        )
        score = wfic_score(full, full, measure, ds)
        assert score.sqb_int_raw == 0.0
        assert score.wfic == score.v_int

    def test_weight_homogeneity(self):
        rng = np.random.default_rng(43)
        ds = random_dataset(rng, n=20, q=2)
        full = fit_full(ds)
        fit = fit_semiparametric(ds, ModelSpec(2, (0,), ()))
        measure = WeightMeasure(
            np.array([0.4, 0.9]) * ds.tau, rng.normal(size=(2, 2)), np.array([0.5, 1.5])
        )
        base = wfic_score(fit, full, measure, ds)
        doubled = wfic_score(fit, full, measure.scaled(4.0), ds)
        assert doubled.v_int == 4.0 * base.v_int          # power-of-two scale: exact
        assert doubled.sqb_int_raw == 4.0 * base.sqb_int_raw
        assert doubled.wfic == 4.0 * base.wfic
        odd = wfic_score(fit, full, measure.scaled(1.7), ds)
        np.testing.assert_allclose(odd.wfic, 1.7 * base.wfic, rtol=1e-12)

    def test_argmin_invariant_to_weight_scale(self):
        rng = np.random.default_rng(44)
        ds = random_dataset(rng, n=30, q=2)
        full = fit_full(ds)
        measure = WeightMeasure(
            np.array([0.5, 0.8]) * ds.tau,
            np.array([[1.0, 0.0], [1.0, 1.0]]),
            np.array([1.0, 1.0]),
        )
        from aalenfic import enumerate_models

        specs = [m for m in enumerate_models(2) if m.n_included]
        def order(meas):
            vals = []
            for spec in specs:
                fit = fit_semiparametric(ds, spec)
                vals.append(wfic_score(fit, full, meas, ds).wfic)
            return int(np.argmin(vals))
        assert order(measure) == order(measure.scaled(37.0))

    def test_uniform_weights_use_plain_mean_sd(self):
        rng = np.random.default_rng(45)
        ds = random_dataset(rng, n=20, q=2)
        full = fit_full(ds)
        xs = rng.normal(size=(4, 2))
        ts = np.full(4, 0.6 * ds.tau)
        measure = WeightMeasure(ts, xs, np.full(4, 0.25))
        score = wfic_score(full, full, measure, ds)
        h = score_atoms(full, full, ts, xs)["h_sub"]
        assert score.h_mean == np.mean(h)
        assert score.h_sd == np.std(h, ddof=1)


class TestVirtualPatients:
    def test_all_fixed_identical_atoms(self):
        rng = np.random.default_rng(46)
        ds = random_dataset(rng, n=30, q=2)
        m = virtual_patient_measure(ds, [(0, 1.0), (1, 0.5)], 7, 0.5 * ds.tau, 99)
        assert m.n_atoms == 7
        np.testing.assert_array_equal(m.covariates, np.tile([1.0, 0.5], (7, 1)))
        np.testing.assert_array_equal(m.times, 0.5 * ds.tau)
        np.testing.assert_allclose(m.weights, 1.0 / 7)

    def test_independent_covariates_conditional_is_marginal(self):
        rng = np.random.default_rng(47)
        n = 500
        x = rng.normal(size=(n, 2))
        ds = Dataset(rng.exponential(2, n), np.ones(n, dtype=int), x, ("a", "b"), 1.0)
        count = 10000
        m = virtual_patient_measure(ds, [(0, 0.0)], count, 0.5, 7)
        sampled = m.covariates[:, 1]
        # independence: the conditional mean stays near the sample mean
        assert abs(sampled.mean() - x[:, 1].mean()) < 4.0 / np.sqrt(count) + 0.02

    def test_dichotomous_rounding(self):
        rng = np.random.default_rng(48)
        n = 200
        treat = (rng.random(n) < 0.8).astype(float)
        other = rng.normal(size=n) + 0.5 * treat
        x = np.column_stack([np.ones(n), treat, other])
        ds = Dataset(rng.exponential(2, n), np.ones(n, dtype=int), x,
                     ("intercept", "treat", "other"), 1.0)
        m = virtual_patient_measure(ds, [(0, 1.0)], 500, 0.5, 11)
        vals = np.unique(m.covariates[:, 1])
        assert set(vals).issubset({0.0, 1.0})

    def test_degenerate_covariance_error(self):
        rng = np.random.default_rng(49)
        n = 50
        x1 = rng.normal(size=n)
        x = np.column_stack([x1, 2.0 * x1])
        ds = Dataset(rng.exponential(2, n), np.ones(n, dtype=int), x, ("a", "b"), 1.0)
        with pytest.raises(DegenerateConditionalError):
            virtual_patient_measure(ds, [], 10, 0.5, 3)

    def test_seed_reproducibility(self):
        rng = np.random.default_rng(51)
        ds = random_dataset(rng, n=60, q=3)
        a = virtual_patient_measure(ds, [(0, 1.0)], 50, 0.5 * ds.tau, 123)
        b = virtual_patient_measure(ds, [(0, 1.0)], 50, 0.5 * ds.tau, 123)
        np.testing.assert_array_equal(a.covariates, b.covariates)


class TestEmpiricalMeasure:
    def test_uncensored_reduction(self):
        ds = Dataset(
            np.array([1.0, 2.0, 3.0]),
            np.array([1, 1, 1]),
            np.array([[0.5], [1.0], [2.0]]),
            ("z",),
            3.0,
        )
        full = fit_full(ds)
        m = empirical_measure(ds, full, 1, 7)
        np.testing.assert_array_equal(m.times, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(m.covariates, ds.covariates)
        np.testing.assert_allclose(m.weights, 1.0 / 3.0)

    def test_censored_beyond_tau_clips(self, toy_intercept):
        ds = Dataset(
            np.array([1.0, 2.0, 3.0, 9.0]),
            np.array([1, 1, 1, 0]),
            np.ones((4, 1)),
            ("intercept",),
            3.0,
        )
        full = fit_full(ds)
        m = empirical_measure(ds, full, 5, 3)
        np.testing.assert_array_equal(m.times[15:], 3.0)

    def test_memoryless_conditional_mean(self):
        # constant fitted hazard: draws past the censoring time are shifted
        # exponentials, so their mean is t_cens + 1/alpha
        ds = Dataset(
            np.array([1.0, 2.0, 3.0, 1.0]),
            np.array([1, 1, 1, 0]),
            np.ones((4, 1)),
            ("intercept",),
            200.0,
        )
        fit = fit_semiparametric(ds, ModelSpec(1, (), (0,)))
        np.testing.assert_allclose(fit.alpha, [3.0 / 7.0])
        r = 10000
        m = empirical_measure(ds, fit, r, 12345)
        draws = m.times[3 * r :]
        expect = 1.0 + 7.0 / 3.0
        se = (7.0 / 3.0) / np.sqrt(r)
        assert abs(draws.mean() - expect) < 3 * se

    def test_conditional_draw_distribution_ks(self):
        ds = Dataset(
            np.array([1.0, 2.0, 3.0, 1.0]),
            np.array([1, 1, 1, 0]),
            np.ones((4, 1)),
            ("intercept",),
            200.0,
        )
        fit = fit_semiparametric(ds, ModelSpec(1, (), (0,)))
        alpha = float(fit.alpha[0])
        r = 10000
        m = empirical_measure(ds, fit, r, 54321)
        draws = np.sort(m.times[3 * r :])
        cdf = 1.0 - np.exp(-alpha * (draws - 1.0))
        grid_lo = np.arange(r) / r
        grid_hi = np.arange(1, r + 1) / r
        ks = max(np.abs(cdf - grid_lo).max(), np.abs(cdf - grid_hi).max())
        assert ks < 0.02

    @pytest.mark.filterwarnings("ignore::aalenfic.SamplerClampWarning")
    def test_seed_reproducibility(self):
        rng = np.random.default_rng(52)
        ds = random_dataset(rng, n=30, q=2, censor_frac=0.5)
        full = fit_full(ds)
        a = empirical_measure(ds, full, 3, 99)
        b = empirical_measure(ds, full, 3, 99)
        np.testing.assert_array_equal(a.times, b.times)

    @pytest.mark.filterwarnings("ignore::aalenfic.SamplerClampWarning")
    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(53)
        ds = random_dataset(rng, n=25, q=2, censor_frac=0.4)
        full = fit_full(ds)
        m = empirical_measure(ds, full, 4, 5)
        assert m.n_atoms == 100
        assert abs(m.normalization - 1.0) < 1e-12
        assert (m.times <= ds.tau).all() and (m.times > 0).all()
