import time

import numpy as np
import pytest

from sdm.core import DescentSequence, DescentStep, Mode, SmoothMap
from sdm.errors import RankDeficiencyError
from sdm.online import OnlineState, init_online, rls_ingest
from sdm.trainer import solve_stage


def linear_map(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return SmoothMap(A.shape[1], A.shape[0], lambda x: A @ x, name="linear")


def empty_sequence(p, m, stages=1):
    zero = DescentStep(gain=np.zeros((p, m)), bias=np.zeros(p))
    return DescentSequence(steps=(zero,) * stages, param_dim=p, feature_dim=m,
                           mode=Mode.GENERALIZED)


def augmented(feats):
    feats = np.atleast_2d(feats)
    return np.hstack([feats, np.ones((feats.shape[0], 1))])


class TestInitOnline:
    def test_identity_feature_matrix(self):
        m = 3
        state = init_online(empty_sequence(2, m), [np.eye(m + 1)], ridge=0.0)
        assert state.inv_cov[0] == pytest.approx(np.eye(m + 1), abs=1e-12)

    def test_sqrt_two_scaling(self):
        m = 3
        state = init_online(empty_sequence(2, m), [np.sqrt(2.0) * np.eye(m + 1)], ridge=0.0)
        assert state.inv_cov[0] == pytest.approx(0.5 * np.eye(m + 1), abs=1e-12)

    def test_random_features_invert_the_gram(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(20, 5))
        state = init_online(empty_sequence(3, 5), [feats], ridge=0.0)
        gram = augmented(feats).T @ augmented(feats)
        assert state.inv_cov[0] @ gram == pytest.approx(np.eye(6), abs=1e-8)

    def test_fallback_requires_ridge(self):
        with pytest.raises(RankDeficiencyError, match="ridge"):
            init_online(empty_sequence(2, 3))
        state = init_online(empty_sequence(2, 3), ridge=0.5)
        assert state.inv_cov[0] == pytest.approx(2.0 * np.eye(4), abs=1e-12)

    def test_singular_gram_instructs_ridge(self):
        feats = np.zeros((4, 3))
        with pytest.raises(RankDeficiencyError, match="ridge"):
            init_online(empty_sequence(2, 3), [feats], ridge=0.0)


class TestRlsIngest:
    def test_sherman_morrison_identity(self):
        rng = np.random.default_rng(1)
        p, m = 2, 4
        smap = linear_map(rng.normal(size=(m, p)))
        feats = rng.normal(size=(12, m))
        state = init_online(empty_sequence(p, m), [feats], ridge=0.0)
        gram_before = augmented(feats).T @ augmented(feats)
        x0 = rng.normal(size=p)
        x_opt = rng.normal(size=p)
        phi = np.append(smap.evaluate(x0), 1.0)
        rls_ingest(state, x_opt, x0, smap)
        gram_after = gram_before + np.outer(phi, phi)
        assert state.inv_cov[0] @ gram_after == pytest.approx(np.eye(m + 1), abs=1e-8)

    @pytest.mark.parametrize("n", [10, 50, 200])
    @pytest.mark.parametrize("m", [3, 8])
    def test_sequential_ingest_matches_batch(self, n, m):
        rng = np.random.default_rng(100 + n + m)
        p = 3
        ridge = 1e-3
        smap = linear_map(rng.normal(size=(m, p)))
        state = init_online(empty_sequence(p, m), ridge=ridge)
        starts = rng.normal(size=(n, p))
        optima = rng.normal(size=(n, p))
        for x0, x_opt in zip(starts, optima):
            rls_ingest(state, x_opt, x0, smap)
        feats = augmented(np.array([smap.evaluate(x0) for x0 in starts]))
        batch = solve_stage(optima - starts, feats, with_bias=False, ridge=ridge)
        rel = np.linalg.norm(state.weights[0] - batch.gain, "fro") / np.linalg.norm(
            batch.gain, "fro"
        )
        assert rel <= 1e-6

    @pytest.mark.parametrize("n", [5, 12, 20])
    def test_forgetting_matches_weighted_batch(self, n):
        rng = np.random.default_rng(200 + n)
        p, m, lam, ridge = 2, 4, 0.9, 1e-2
        smap = linear_map(rng.normal(size=(m, p)))
        state = init_online(empty_sequence(p, m), ridge=ridge, forgetting=lam)
        starts = rng.normal(size=(n, p))
        optima = rng.normal(size=(n, p))
        for x0, x_opt in zip(starts, optima):
            rls_ingest(state, x_opt, x0, smap)
        feats = augmented(np.array([smap.evaluate(x0) for x0 in starts]))
        resid = optima - starts
        w = lam ** np.arange(n - 1, -1, -1)
        gram = feats.T @ (w[:, None] * feats) + (lam**n) * ridge * np.eye(m + 1)
        W_batch = np.linalg.solve(gram, feats.T @ (w[:, None] * resid)).T
        rel = np.linalg.norm(state.weights[0] - W_batch, "fro") / np.linalg.norm(W_batch, "fro")
        assert rel <= 1e-8

    def test_zero_innovation_leaves_gain_unchanged(self):
        rng = np.random.default_rng(3)
        p, m = 2, 3
        smap = linear_map(rng.normal(size=(m, p)))
        state = init_online(empty_sequence(p, m), ridge=1e-2)
        for _ in range(15):
            rls_ingest(state, rng.normal(size=p), rng.normal(size=p), smap)
        W = state.weights[0].copy()
        x0 = rng.normal(size=p)
        phi = np.append(smap.evaluate(x0), 1.0)
        x_opt = x0 + W @ phi  # sample the current model predicts exactly
        rls_ingest(state, x_opt, x0, smap)
        assert state.weights[0] == pytest.approx(W, rel=1e-8, abs=1e-10)

    def test_inv_cov_stays_symmetric(self):
        rng = np.random.default_rng(4)
        p, m = 3, 5
        smap = linear_map(rng.normal(size=(m, p)))
        state = init_online(empty_sequence(p, m, stages=2), ridge=1e-2)
        for _ in range(500):
            rls_ingest(state, rng.normal(size=p), rng.normal(size=p), smap)
        for S in state.inv_cov:
            assert np.abs(S - S.T).max() <= 1e-9
            np.linalg.cholesky(S)  # still positive definite

    def test_multi_stage_chaining_matches_manual_recursion(self):
        rng = np.random.default_rng(5)
        p, m = 2, 3
        A = rng.normal(size=(m, p))
        smap = linear_map(A)
        state = init_online(empty_sequence(p, m, stages=2), ridge=0.1)
        W = [w.copy() for w in state.weights]
        S = [s.copy() for s in state.inv_cov]
        x0 = rng.normal(size=p)
        x_opt = rng.normal(size=p)
        # manual reference: stage 0 then stage 1 with the updated weights
        dx = x_opt - x0
        for k in range(2):
            phi = np.append(A @ (x_opt - dx), 1.0)
            Sphi = S[k] @ phi
            S[k] = S[k] - np.outer(Sphi, Sphi) / (1.0 + phi @ Sphi)
            S[k] = (S[k] + S[k].T) / 2
            W[k] = W[k] + np.outer(dx - W[k] @ phi, phi @ S[k])
            dx = dx - W[k] @ phi
        rls_ingest(state, x_opt, x0, smap)
        for k in range(2):
            assert state.weights[k] == pytest.approx(W[k], rel=1e-12, abs=1e-12)
            assert state.inv_cov[k] == pytest.approx(S[k], rel=1e-12, abs=1e-12)

    def test_literal_eval_point_differs(self):
        rng = np.random.default_rng(6)
        p, m = 2, 3
        smap = linear_map(rng.normal(size=(m, p)))
        s1 = init_online(empty_sequence(p, m), ridge=1e-2)
        s2 = init_online(empty_sequence(p, m), ridge=1e-2)
        x0, x_opt = rng.normal(size=p), rng.normal(size=p)
        rls_ingest(s1, x_opt, x0, smap)
        rls_ingest(s2, x_opt, x0, smap, literal_eval_point=True)
        assert not np.allclose(s1.weights[0], s2.weights[0])

    def test_steps_expose_subtractive_convention(self):
        rng = np.random.default_rng(7)
        p, m = 2, 3
        smap = linear_map(rng.normal(size=(m, p)))
        state = init_online(empty_sequence(p, m), ridge=1e-2)
        for _ in range(10):
            rls_ingest(state, rng.normal(size=p), rng.normal(size=p), smap)
        step = state.steps[0]
        W = state.weights[0]
        assert step.gain == pytest.approx(-W[:, :m], abs=0)
        assert step.bias == pytest.approx(W[:, m], abs=0)

    def test_update_cost_scales_quadratically_not_cubically(self):
        rng = np.random.default_rng(8)
        p = 2

        def median_ingest_time(m, repeats=9):
            smap = linear_map(rng.normal(size=(m, p)))
            state = init_online(empty_sequence(p, m), ridge=1e-2)
            rls_ingest(state, rng.normal(size=p), rng.normal(size=p), smap)  # warm-up
            times = []
            for _ in range(repeats):
                x0, x_opt = rng.normal(size=p), rng.normal(size=p)
                t0 = time.perf_counter()
                rls_ingest(state, x_opt, x0, smap)
                times.append(time.perf_counter() - t0)
            return float(np.median(times))

        t_small = median_ingest_time(200)
        t_large = median_ingest_time(800)
        # quadratic predicts 16x, cubic 64x; generous slack for timer noise
        assert t_large / t_small < 40


class TestStateValidation:
    def test_forgetting_range_enforced(self):
        with pytest.raises(ValueError):
            OnlineState(
                weights=[np.zeros((1, 2))], inv_cov=[np.eye(2)], param_dim=1,
                feature_dim=1, forgetting=1.5,
            )

    def test_to_sequence_round_trips_steps(self):
        rng = np.random.default_rng(9)
        p, m = 2, 3
        smap = linear_map(rng.normal(size=(m, p)))
        state = init_online(empty_sequence(p, m, stages=3), ridge=1e-2)
        for _ in range(5):
            rls_ingest(state, rng.normal(size=p), rng.normal(size=p), smap)
        seq = state.to_sequence()
        assert seq.mode is Mode.GENERALIZED
        assert len(seq) == 3
        for a, b in zip(seq.steps, state.steps):
            assert np.array_equal(a.gain, b.gain)
            assert np.array_equal(a.bias, b.bias)
