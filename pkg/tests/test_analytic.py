import math

import numpy as np
import pytest

from sdm.analytic import (
    AnalyticFunction,
    build_training_set,
    check_registry_invariants,
    registry,
    run_comparison,
)
from sdm.baselines import RunStatus
from sdm.core import Mode


class TestRegistry:
    def test_four_functions(self):
        assert sorted(registry()) == ["cube", "erf", "exp", "linear"]

    def test_inverse_round_trip(self):
        for fn in registry().values():
            for y in fn.train_targets():
                assert abs(fn.h(fn.h_inverse(y)) - y) <= 1e-10, fn.name

    def test_strictly_monotone_on_preimage_of_range(self):
        for fn in registry().values():
            xs = np.sort([fn.h_inverse(y) for y in fn.train_targets()])
            hs = [fn.h(x) for x in xs]
            assert all(a < b for a, b in zip(hs, hs[1:])), fn.name

    def test_no_target_has_zero_optimum(self):
        # the convergence metric divides by |x*|
        for fn in registry().values():
            for y in np.concatenate([fn.train_targets(), fn.test_targets()]):
                assert abs(fn.h_inverse(y)) > 1e-6, fn.name

    def test_test_resolution_must_be_finer(self):
        with pytest.raises(ValueError, match="finer"):
            AnalyticFunction(
                name="bad", h=lambda t: t, h_prime=lambda t: 1.0,
                h_double_prime=lambda t: 0.0, h_inverse=lambda y: y,
                y_lo=0.0, y_hi=1.0, train_step=0.1, test_step=0.1, x0=0.0,
            )


class TestBuildTrainingSet:
    def test_linear_pairs_enumerated(self):
        fn = AnalyticFunction(
            name="lin2", h=lambda t: 2 * t, h_prime=lambda t: 2.0,
            h_double_prime=lambda t: 0.0, h_inverse=lambda y: y / 2.0,
            y_lo=0.0, y_hi=2.0, train_step=1.0, test_step=0.5, x0=0.0,
        )
        tset = build_training_set(fn)
        assert tset.mode is Mode.REVERSED
        pairs = [(p.x_opt[0], p.target[0]) for p in tset.problems]
        assert pairs == [(0.0, 0.0), (0.5, 1.0), (1.0, 2.0)]

    def test_cube_optima_match_cbrt_oracle(self):
        tset = build_training_set(registry()["cube"])
        for prob in tset.problems:
            assert prob.x_opt[0] == pytest.approx(np.cbrt(prob.target[0]), abs=1e-12)

    def test_erf_bisection_inverse_is_oracle_grade(self):
        fn = registry()["erf"]
        for y in (-0.85, -0.2, 0.43, 0.89):
            x = fn.h_inverse(y)
            assert math.erf(x) == pytest.approx(y, abs=1e-11)


@pytest.fixture(scope="module")
def results():
    return {name: run_comparison(fn) for name, fn in registry().items()}


class TestRunComparison:
    def test_linear_cascade_is_exact_after_one_step(self, results):
        assert results["linear"].sdm_mean[1] <= 1e-12

    def test_cube_newton_stays_at_one_sdm_descends(self, results):
        res = results["cube"]
        assert set(res.newton_statuses) == {RunStatus.SADDLE_STALL.value}
        assert all(v == pytest.approx(1.0) for v in res.newton_mean)
        assert res.sdm_final_mean < 1e-2

    def test_exp_newton_diverges_sdm_converges(self, results):
        res = results["exp"]
        assert set(res.newton_statuses) == {RunStatus.DIVERGED.value}
        assert res.newton_mean[-1] > res.newton_mean[0]
        assert res.sdm_final_mean < 1e-2

    def test_erf_newton_converges_and_beats_cascade(self, results):
        res = results["erf"]
        assert set(res.newton_statuses) == {RunStatus.CONVERGED.value}
        assert res.newton_final_mean < res.sdm_final_mean

    def test_sdm_mean_curve_monotone(self, results):
        for name, res in results.items():
            diffs = np.diff(res.sdm_mean)
            assert np.all(diffs <= 1e-9), name

    def test_all_registry_invariants_hold(self, results):
        for name, fn in registry().items():
            assert check_registry_invariants(fn, results[name]) == [], name

    def test_rows_shape(self, results):
        rows = results["cube"].rows()
        assert len(rows) == 2 * 11
        assert rows[0][0] == "sdm" and rows[11][0] == "newton"
