import numpy as np
import pytest

from sdm.core import Mode, SmoothMap, apply_sequence
from sdm.errors import RankDeficiencyError, TrainingDivergedError
from sdm.trainer import (
    SamplingSpec,
    TrainerConfig,
    TrainingSet,
    sample_initials,
    solve_stage,
    train,
)


def linear_map(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return SmoothMap(A.shape[1], A.shape[0], lambda x: A @ x, jac=lambda x: A, name="linear")


def cubic_map():
    return SmoothMap(
        1, 1, lambda x: np.array([x[0] ** 3]), jac=lambda x: np.array([[3 * x[0] ** 2]]),
        name="cube",
    )


class TestSampling:
    def test_explicit_returned_verbatim(self):
        pts = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
        out = sample_initials(SamplingSpec.explicit(pts), np.zeros(2))
        assert all(np.array_equal(a, b) for a, b in zip(out, pts))

    def test_grid_matches_degree_schedule(self):
        spec = SamplingSpec.grid([-30.0], [30.0], [10.0])
        out = sample_initials(spec, np.zeros(1))
        assert [p[0] for p in out] == [-30, -20, -10, 0, 10, 20, 30]

    def test_grid_stops_at_upper_bound(self):
        spec = SamplingSpec.grid([-30.0], [30.0], [7.0])
        out = sample_initials(spec, np.zeros(1))
        assert [p[0] for p in out] == [-30, -23, -16, -9, -2, 5, 12, 19, 26]

    def test_grid_product_is_full_cartesian(self):
        spec = SamplingSpec.grid([0.0, 0.0], [1.0, 2.0], [1.0, 1.0])
        out = sample_initials(spec, np.zeros(2))
        assert len(out) == 2 * 3

    def test_zero_stddev_gives_copies_of_center(self):
        spec = SamplingSpec.gaussian(stddev=[0.0], count=5, seed=1)
        out = sample_initials(spec, np.array([4.0]))
        assert all(p[0] == 4.0 for p in out)

    def test_gaussian_deterministic_by_seed(self):
        spec = SamplingSpec.gaussian(stddev=[1.0, 2.0], count=7, seed=9)
        a = sample_initials(spec, np.zeros(2))
        b = sample_initials(spec, np.zeros(2))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestSolveStage:
    def test_scalar_exact_fit(self):
        step = solve_stage([[1.0], [2.0]], [[1.0], [2.0]], ridge=0.0)
        assert step.gain == pytest.approx(np.array([[1.0]]), abs=1e-14)
        assert step.bias == pytest.approx([0.0], abs=0)

    def test_zero_residuals_give_zero_solution(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(10, 3))
        step = solve_stage(np.zeros((10, 2)), feats, with_bias=True, ridge=1e-8)
        assert step.gain == pytest.approx(np.zeros((2, 3)), abs=1e-12)
        assert step.bias == pytest.approx(np.zeros(2), abs=1e-12)

    def test_linear_recovers_inverse_matrix(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
        x_star = rng.normal(size=4)
        y = A @ x_star
        starts = rng.normal(size=(40, 4))
        resid = x_star - starts
        feats = (y - starts @ A.T)
        step = solve_stage(resid, feats, ridge=0.0)
        assert step.gain == pytest.approx(np.linalg.inv(A), rel=1e-8, abs=1e-8)

    def test_rank_deficiency_instructs_ridge(self):
        with pytest.raises(RankDeficiencyError, match="ridge"):
            solve_stage([[1.0]], [[1.0, 2.0, 3.0]], ridge=0.0)
        # with ridge the same data solves fine
        solve_stage([[1.0]], [[1.0, 2.0, 3.0]], ridge=1e-6)


class TestTrain:
    def test_template_cubic_contracts_sample_cloud(self):
        smap = cubic_map()
        x_star = np.array([1.0])
        starts = sample_initials(SamplingSpec.gaussian(stddev=[0.3], count=300, seed=5), x_star)
        tset = TrainingSet.template(smap, x_star, starts)
        seq = train(tset, TrainerConfig(stages=4, ridge=0.0))
        final = [apply_sequence(seq, x0, smap, y=tset.problems[0].target)[-1] for x0 in starts]
        mean_final = np.mean([abs(x[0] - 1.0) for x in final])
        mean_init = np.mean([abs(x0[0] - 1.0) for x0 in starts])
        assert mean_final < 0.01 * mean_init

    def test_reversed_linear_single_stage_exact(self):
        A = np.array([[2.0, 0.5], [-0.25, 1.0]])
        smap = linear_map(A)
        rng = np.random.default_rng(2)
        optima = [rng.normal(size=2) for _ in range(20)]
        tset = TrainingSet.reversed_targets(smap, np.zeros(2), optima)
        seq = train(tset, TrainerConfig(stages=1, ridge=0.0))
        for _ in range(10):
            x_star = rng.normal(size=2)
            traj = apply_sequence(seq, np.zeros(2), smap, y=A @ x_star)
            assert traj[-1] == pytest.approx(x_star, rel=1e-6, abs=1e-9)

    def test_generalized_constant_target_matches_template_on_linear(self):
        A = np.array([[1.5, -0.3], [0.2, 0.8]])
        smap = linear_map(A)
        rng = np.random.default_rng(3)
        x_star = np.array([0.4, -0.2])
        y = A @ x_star
        starts = [rng.normal(size=2) for _ in range(30)]
        template = train(TrainingSet.template(smap, x_star, starts),
                         TrainerConfig(stages=2, ridge=0.0))
        problems = [
            TrainingSet.template(smap, x_star, [x0]).problems[0] for x0 in starts
        ]
        generalized = train(TrainingSet.generalized(problems, starts),
                            TrainerConfig(stages=2, ridge=0.0))
        gstep = generalized.steps[0]
        assert gstep.bias == pytest.approx(gstep.gain @ y, rel=1e-8, abs=1e-10)
        for _ in range(5):
            x0 = rng.normal(size=2)
            out_t = apply_sequence(template, x0, smap, y=y)[-1]
            out_g = apply_sequence(generalized, x0, smap)[-1]
            assert out_g == pytest.approx(out_t, rel=1e-8, abs=1e-10)

    def test_stage_losses_non_increasing(self):
        smap = cubic_map()
        starts = sample_initials(SamplingSpec.gaussian(stddev=[0.4], count=60, seed=8),
                                 np.array([1.0]))
        for ridge in (0.0, None):
            seq = train(TrainingSet.template(smap, [1.0], starts),
                        TrainerConfig(stages=5, ridge=ridge))
            report = seq.training_report
            assert len(report) == 6
            for a, b in zip(report, report[1:]):
                assert b <= a + 1e-9

    def test_training_report_bitwise_deterministic(self):
        smap = cubic_map()
        starts = sample_initials(SamplingSpec.gaussian(stddev=[0.3], count=40, seed=4),
                                 np.array([1.0]))
        run = lambda: train(TrainingSet.template(smap, [1.0], starts),
                            TrainerConfig(stages=3)).training_report
        assert run() == run()

    def test_divergent_sample_aborts_with_indices(self):
        def fn(x):
            return np.array([np.inf if abs(x[0]) > 10 else x[0]])

        smap = SmoothMap(1, 1, fn)
        starts = [np.array([1.0]), np.array([11.0])]
        tset = TrainingSet.template(smap, np.zeros(1), starts, target=np.zeros(1))
        with pytest.raises(TrainingDivergedError) as err:
            train(tset, TrainerConfig(stages=1, ridge=0.0))
        assert err.value.stage == 0
        assert err.value.sample == 1

    def test_reversed_mode_requires_shared_start(self):
        smap = linear_map(np.eye(1))
        with pytest.raises(ValueError, match="shared initial state"):
            TrainingSet(
                mode=Mode.REVERSED,
                problems=TrainingSet.reversed_targets(smap, [0.0], [[1.0], [2.0]]).problems,
                initial_states=(np.array([0.0]), np.array([1.0])),
            )
