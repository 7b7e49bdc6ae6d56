"""Full and semiparametric fits against independent oracles."""

import numpy as np
import pytest

from aalenfic import (
    Dataset,
    EmptyModelError,
    FocusPoint,
    ModelSpec,
    NonMonotoneHazardWarning,
    SingularDesignError,
    StepFunction,
    ValidationError,
    cumhaz,
    fit_full,
    fit_semiparametric,
    survival,
    weight_rows,
)
from conftest import (
    design_at,
    group_nelson_aalen,
    kaplan_meier_oracle,
    nelson_aalen_oracle,
    random_dataset,
    stacked_alpha_oracle,
)


def _all_specs(q):
    from aalenfic import enumerate_models

    return [m for m in enumerate_models(q) if m.n_included > 0]


class TestModelSpec:
    def test_partition(self):
        spec = ModelSpec(4, (0, 2), (1,))
        assert spec.excluded == (3,)
        assert spec.states == (0, 1, 0, 2)
        assert spec.describe() == "I={1,3} J={2}"

    def test_overlap_rejected(self):
        with pytest.raises(ValidationError):
            ModelSpec(3, (0, 1), (1,))

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            ModelSpec(2, (2,), ())


class TestStepFunction:
    def test_evaluation(self):
        f = StepFunction(np.array([1.0, 2.0]), np.array([0.5, -0.25]))
        np.testing.assert_allclose(f([0.0, 1.0, 1.5, 2.0, 9.0]), [0, 0.5, 0.5, 0.25, 0.25])

    def test_unsorted_rejected(self):
        with pytest.raises(ValidationError):
            StepFunction(np.array([2.0, 1.0]), np.array([1.0, 1.0]))


class TestFullFit:
    def test_nelson_aalen_toy(self, toy_intercept):
        full = fit_full(toy_intercept)
        h = cumhaz(full, FocusPoint(t=3.0, x=np.array([1.0])))
        assert abs(h - 11.0 / 6.0) < 1e-15

    def test_nelson_aalen_random(self):
        rng = np.random.default_rng(10)
        for _ in range(25):
            n = int(rng.integers(5, 60))
            times = rng.exponential(2.0, n)
            status = (rng.random(n) > 0.4).astype(int)
            tau = float(np.quantile(times, 0.8))
            ds = Dataset(times, status, np.ones((n, 1)), ("intercept",), tau)
            full = fit_full(ds)
            ev, oracle = nelson_aalen_oracle(times, status, tau)
            for t, h in zip(ev, oracle):
                got = cumhaz(full, FocusPoint(t=float(t), x=np.array([1.0])))
                assert abs(got - h) < 1e-12

    def test_zero_events(self):
        ds = Dataset(np.array([1.0, 2.0]), np.array([0, 0]), np.ones((2, 1)), ("x",), 2.0)
        full = fit_full(ds)
        assert cumhaz(full, FocusPoint(t=2.0, x=np.array([1.0]))) == 0.0
        assert full.grid.n_events == 0

    def test_two_group_recovery(self):
        rng = np.random.default_rng(11)
        n = 80
        group = rng.integers(0, 2, n)
        times = rng.exponential(scale=np.where(group == 1, 1.0, 2.0))
        status = np.ones(n, dtype=int)
        tau = float(np.quantile(times, 0.7))
        x = np.column_stack([np.ones(n), group.astype(float)])
        ds = Dataset(times, status, x, ("intercept", "group"), tau)
        full = fit_full(ds)
        for g in (0, 1):
            ev, oracle = group_nelson_aalen(ds, 1, g, tau)
            for t, h in zip(ev, oracle):
                got = cumhaz(full, FocusPoint(t=float(t), x=np.array([1.0, float(g)])))
                assert abs(got - h) < 1e-10

    def test_singular_design_raises(self):
        # two identical covariate columns: Gram is rank 1 at any event time
        ds = Dataset(
            np.array([1.0, 2.0]),
            np.array([1, 1]),
            np.array([[1.0, 1.0], [1.0, 1.0]]),
            ("a", "b"),
            2.0,
        )
        with pytest.raises(SingularDesignError, match="time"):
            fit_full(ds)


class TestSemiparametricFit:
    def test_occurrence_exposure(self, toy_intercept):
        fit = fit_semiparametric(toy_intercept, ModelSpec(1, (), (0,)))
        np.testing.assert_allclose(fit.alpha, [0.5], atol=1e-15)

    def test_reduction_to_full(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            ds = random_dataset(rng, n=25, q=3)
            full = fit_full(ds)
            again = fit_semiparametric(ds, ModelSpec.full(ds.q))
            np.testing.assert_array_equal(full._u, again._u)
            np.testing.assert_array_equal(full.alpha, again.alpha)

    def test_no_constant_block_is_plain_aalen_on_subset(self):
        # dropping covariates with no constant block is the same as fitting
        # the full nonparametric model on the reduced covariate matrix
        rng = np.random.default_rng(24)
        ds = random_dataset(rng, n=30, q=4)
        keep = (0, 2)
        sub = fit_semiparametric(ds, ModelSpec(4, keep, ()))
        reduced = Dataset(ds.times, ds.status, ds.covariates[:, keep],
                          tuple(ds.names[j] for j in keep), ds.tau)
        np.testing.assert_array_equal(sub._u, fit_full(reduced)._u)

    def test_alpha_matches_stacked_oracle(self):
        rng = np.random.default_rng(13)
        ds = random_dataset(rng, n=12, q=3)
        fit = fit_semiparametric(ds, ModelSpec(3, (0,), (1,)))
        oracle = stacked_alpha_oracle(ds, [0], [1])
        np.testing.assert_allclose(fit.alpha, oracle, rtol=1e-10, atol=1e-10)

    def test_alpha_oracle_all_partitions(self):
        rng = np.random.default_rng(14)
        for _ in range(5):
            ds = random_dataset(rng, n=20, q=3)
            for spec in _all_specs(3):
                if not spec.constant:
                    continue
                fit = fit_semiparametric(ds, spec)
                oracle = stacked_alpha_oracle(ds, spec.time_varying, spec.constant)
                np.testing.assert_allclose(fit.alpha, oracle, rtol=1e-9, atol=1e-10)

    def test_empty_model_rejected(self, toy_intercept):
        with pytest.raises(EmptyModelError):
            fit_semiparametric(toy_intercept, ModelSpec(1, (), ()))

    def test_orthogonality_of_projected_block(self):
        # on every interval the projected constant-block rows are orthogonal
        # to the time-varying block, reconstructed from the stored pieces
        rng = np.random.default_rng(15)
        ds = random_dataset(rng, n=18, q=4)
        spec = ModelSpec(4, (0, 1), (2, 3))
        fit = fit_semiparametric(ds, spec)
        grid = ds.grid()
        for k in range(grid.n_intervals):
            if grid.risk_counts[k] == 0:
                continue
            y = design_at(ds, grid.breaks[k + 1])
            y_i = y[:, list(spec.time_varying)]
            y_j = y[:, list(spec.constant)]
            y_tilde = y_j - y_i @ fit._p[k]
            np.testing.assert_allclose(y_i.T @ y_tilde, 0.0, atol=1e-9)

    def test_singular_when_risk_set_too_thin(self):
        # tau equal to the largest time leaves one subject at risk at the end:
        # a 2-covariate constant-block fit needs the Gram on every interval
        rng = np.random.default_rng(16)
        n = 10
        times = np.sort(rng.exponential(1.0, n))
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        ds = Dataset(times, np.ones(n, dtype=int), x, ("a", "b"), float(times[-1]))
        with pytest.raises(SingularDesignError):
            fit_semiparametric(ds, ModelSpec(2, (0, 1), ()))


class TestWeightRows:
    def test_full_model_toy(self, toy_intercept):
        full = fit_full(toy_intercept)
        w = weight_rows(full, FocusPoint(t=3.0, x=np.array([1.0])))
        np.testing.assert_allclose(w, [1 / 3, 1 / 2, 1.0], atol=1e-15)

    def test_no_constant_block_masks_late_events(self):
        rng = np.random.default_rng(17)
        ds = random_dataset(rng, n=30, q=2)
        full = fit_full(ds)
        t_mid = float(ds.grid().event_times[ds.grid().n_events // 2])
        w = weight_rows(full, FocusPoint(t=t_mid, x=np.array([1.0, 0.5])))
        late = ds.grid().event_times > t_mid
        np.testing.assert_array_equal(w[late], 0.0)

    def test_representation_identity(self):
        rng = np.random.default_rng(18)
        for _ in range(5):
            ds = random_dataset(rng, n=20, q=3)
            t = 0.8 * ds.tau
            x = rng.normal(size=3)
            for spec in _all_specs(3):
                fit = fit_semiparametric(ds, spec)
                focus = FocusPoint(t=t, x=x)
                total = weight_rows(fit, focus).sum()
                assert abs(total - cumhaz(fit, focus)) < 1e-10

    def test_increment_focus(self):
        rng = np.random.default_rng(19)
        ds = random_dataset(rng, n=25, q=2)
        fit = fit_semiparametric(ds, ModelSpec(2, (0,), (1,)))
        x = np.array([1.0, 0.3])
        t0, t1 = 0.3 * ds.tau, 0.9 * ds.tau
        inc = cumhaz(fit, FocusPoint(t=t1, x=x, t0=t0))
        a = cumhaz(fit, FocusPoint(t=t1, x=x))
        b = cumhaz(fit, FocusPoint(t=t0, x=x))
        assert abs(inc - (a - b)) < 1e-12
        w = weight_rows(fit, FocusPoint(t=t1, x=x, t0=t0))
        assert abs(w.sum() - inc) < 1e-10

    def test_degenerate_increment(self):
        with pytest.raises(ValidationError):
            FocusPoint(t=1.0, x=np.array([1.0]), t0=1.0)


class TestCumhaz:
    def test_zero_vector(self, toy_intercept):
        full = fit_full(toy_intercept)
        assert cumhaz(full, FocusPoint(t=2.0, x=np.array([0.0]))) == 0.0

    def test_linearity(self):
        rng = np.random.default_rng(20)
        ds = random_dataset(rng, n=22, q=3)
        fit = fit_semiparametric(ds, ModelSpec(3, (0, 1), (2,)))
        x1, x2 = rng.normal(size=3), rng.normal(size=3)
        a, b = 0.7, -1.3
        t = 0.6 * ds.tau
        lhs = cumhaz(fit, FocusPoint(t=t, x=a * x1 + b * x2))
        rhs = a * cumhaz(fit, FocusPoint(t=t, x=x1)) + b * cumhaz(
            fit, FocusPoint(t=t, x=x2)
        )
        assert abs(lhs - rhs) < 1e-12

    def test_constant_block_example(self, toy_intercept):
        fit = fit_semiparametric(toy_intercept, ModelSpec(1, (), (0,)))
        h = cumhaz(fit, FocusPoint(t=2.0, x=np.array([1.0])))
        assert abs(h - 1.0) < 1e-12


class TestSurvival:
    def test_no_events(self):
        ds = Dataset(np.array([1.0, 2.0]), np.array([0, 0]), np.ones((2, 1)), ("x",), 2.0)
        full = fit_full(ds)
        assert survival(full, FocusPoint(t=2.0, x=np.array([1.0]))) == 1.0

    def test_constant_hazard_exponential(self, toy_intercept):
        fit = fit_semiparametric(toy_intercept, ModelSpec(1, (), (0,)))
        s = survival(fit, FocusPoint(t=2.0, x=np.array([1.0])))
        assert abs(s - np.exp(-1.0)) < 1e-12

    def test_kaplan_meier_toy(self, toy_intercept):
        full = fit_full(toy_intercept)
        s = survival(full, FocusPoint(t=3.0, x=np.array([1.0])))
        assert s == 0.0

    def test_kaplan_meier_random(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            n = int(rng.integers(5, 40))
            times = rng.exponential(1.5, n)
            status = (rng.random(n) > 0.3).astype(int)
            tau = float(np.quantile(times, 0.85))
            ds = Dataset(times, status, np.ones((n, 1)), ("intercept",), tau)
            full = fit_full(ds)
            t = 0.9 * tau
            got = survival(full, FocusPoint(t=t, x=np.array([1.0])))
            assert abs(got - kaplan_meier_oracle(times, status, tau, t)) < 1e-12

    def test_mixed_product_integral_against_fine_partition(self):
        # jumps from the time-varying block, exponential decay from the
        # constant block: compare with a brute-force product over a fine
        # partition of (0, t], which converges to the same product integral
        rng = np.random.default_rng(25)
        ds = random_dataset(rng, n=25, q=2, censor_frac=0.2)
        fit = fit_semiparametric(ds, ModelSpec(2, (0,), (1,)))
        x = np.array([1.0, 0.4])
        t = 0.9 * ds.tau
        got = survival(fit, FocusPoint(t=t, x=x))

        steps = 20000
        grid_t = np.linspace(0.0, t, steps + 1)
        h_vals = fit.cumhaz_many(grid_t[1:], np.tile(x, (steps, 1)))
        h_prev = np.concatenate([[0.0], h_vals[:-1]])
        brute = float(np.prod(1.0 - (h_vals - h_prev)))
        assert abs(got - brute) < 5e-4

    def test_negative_jump_clamped_with_warning(self):
        # at the second event time the at-risk rows are (1,0) and (1,1), so
        # the jump for focus (1,-2) is 1*1 + (-2)*(-1) = 3 > 1
        ds = Dataset(
            np.array([1.0, 2.0, 3.0]),
            np.array([1, 1, 0]),
            np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 1.0]]),
            ("intercept", "z"),
            3.0,
        )
        full = fit_full(ds)
        focus = FocusPoint(t=3.0, x=np.array([1.0, -2.0]))
        with pytest.warns(NonMonotoneHazardWarning):
            s = survival(full, focus)
        assert 0.0 <= s <= 1.0


class TestMonteCarloConsistency:
    def test_constant_effect_recovered(self):
        # additive truth 0.5 + 0.3 x with binary x; constant-block coefficient
        # should land within three standard errors of 0.3
        rng = np.random.default_rng(22)
        n = 2000
        x1 = rng.integers(0, 2, n).astype(float)
        rate = 0.5 + 0.3 * x1
        times = rng.exponential(1.0 / rate)
        cens = rng.exponential(4.0, n)
        obs = np.minimum(times, cens)
        status = (times <= cens).astype(int)
        tau = float(np.quantile(obs, 0.8))
        ds = Dataset(obs, status, np.column_stack([np.ones(n), x1]),
                     ("intercept", "x1"), tau)
        fit = fit_semiparametric(ds, ModelSpec(2, (0,), (1,)))
        alpha_x = fit.alpha[0]
        w = weight_rows(fit, FocusPoint(t=tau, x=np.array([0.0, 1.0])))
        se = np.sqrt(w @ w) / tau
        assert abs(alpha_x - 0.3) < 3 * se


class TestExport:
    def test_export_dict_round_trip(self):
        rng = np.random.default_rng(23)
        ds = random_dataset(rng, n=15, q=2)
        fit = fit_semiparametric(ds, ModelSpec(2, (0,), (1,)))
        d = fit.export_dict(ds.names)
        assert d["time_varying"] == [1] and d["constant"] == [2]
        assert "x1" in d["alpha"]
        curve = d["curves"]["x0"]
        step = fit.coefficient_step(0)
        np.testing.assert_allclose(curve["jumps"], step.sizes)
