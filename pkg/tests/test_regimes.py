import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from emvrs.regimes import (GeneratorMatrix, estimate_generator,
                           sample_regime_path, stationary_distribution,
                           transition_matrix, transition_matrix_2x2)

Q2 = GeneratorMatrix([[-1.0, 1.0], [1.0, -1.0]])


def eigen_oracle_2x2(a, b, t):
    # closed form for Q = [[-a, a], [b, -b]] via eigendecomposition
    s = a + b
    if s == 0:
        return np.eye(2)
    e = np.exp(-s * t)
    pi = np.array([b, a]) / s
    return np.array([[pi[0] + pi[1] * e, pi[1] - pi[1] * e],
                     [pi[0] - pi[0] * e, pi[1] + pi[0] * e]])


class TestGeneratorMatrix:
    def test_rejects_negative_off_diagonal(self):
        with pytest.raises(ValueError, match="off-diagonal"):
            GeneratorMatrix([[-1.0, -1.0], [1.0, -1.0]])

    def test_rejects_bad_row_sums(self):
        with pytest.raises(ValueError, match="sum to 0"):
            GeneratorMatrix([[-1.0, 2.0], [1.0, -1.0]])

    def test_rebalances_tiny_row_sum_drift(self):
        g = GeneratorMatrix([[-1.0 + 1e-11, 1.0], [1.0, -1.0]])
        assert np.all(np.abs(g.q.sum(axis=1)) <= 1e-12)

    def test_single_regime_allowed(self):
        assert GeneratorMatrix([[0.0]]).l == 1


class TestTransitionMatrix:
    def test_zero_time_is_identity(self):
        assert np.allclose(transition_matrix(Q2, 0.0), np.eye(2), atol=1e-14)

    def test_zero_generator_is_identity(self):
        g = GeneratorMatrix(np.zeros((3, 3)))
        assert np.allclose(transition_matrix(g, 7.3), np.eye(3), atol=1e-14)

    def test_symmetric_two_state_value(self):
        # p11(t) = (1 + exp(-2t))/2 for the unit symmetric generator
        p = transition_matrix(Q2, 0.1)
        expected = (1.0 + np.exp(-0.2)) / 2.0
        assert abs(p[0, 0] - 0.909365) < 5e-7
        assert np.allclose(p, [[expected, 1 - expected], [1 - expected, expected]],
                           atol=1e-12)

    def test_rows_stochastic(self):
        g = GeneratorMatrix([[-3.0, 1.0, 2.0], [0.5, -0.5, 0.0], [2.0, 2.0, -4.0]])
        p = transition_matrix(g, 1.7)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(p >= 0.0) and np.all(p <= 1.0)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            transition_matrix(Q2, -0.1)

    def test_agrees_with_2x2_eigendecomposition(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            a, b = rng.uniform(0.0, 5.0, 2)
            t = rng.uniform(0.0, 2.0)
            g = GeneratorMatrix([[-a, a], [b, -b]])
            assert np.allclose(transition_matrix(g, t), eigen_oracle_2x2(a, b, t),
                               atol=1e-10)
            assert np.allclose(transition_matrix_2x2(g, t),
                               transition_matrix(g, t), atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.0, 2.0), st.floats(0.0, 2.0),
           st.integers(0, 10 ** 6))
    def test_chapman_kolmogorov(self, s, t, key):
        rng = np.random.default_rng(key)
        l = int(rng.integers(2, 4))
        q = rng.uniform(0.0, 3.0, (l, l))
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        g = GeneratorMatrix(q)
        lhs = transition_matrix(g, s + t)
        rhs = transition_matrix(g, s) @ transition_matrix(g, t)
        assert np.allclose(lhs, rhs, atol=1e-8)


class TestSampleRegimePath:
    def test_zero_generator_constant_path(self):
        g = GeneratorMatrix(np.zeros((2, 2)))
        path = sample_regime_path(g, 0.1, 50, 2, seed=3)
        assert np.all(path.alphas == 2)

    def test_deterministic_under_seed(self):
        p1 = sample_regime_path(Q2, 0.1, 200, 1, seed=11)
        p2 = sample_regime_path(Q2, 0.1, 200, 1, seed=11)
        assert np.array_equal(p1.alphas, p2.alphas)

    def test_entries_in_range_and_length(self):
        path = sample_regime_path(Q2, 0.1, 123, 1, seed=0)
        assert len(path.alphas) == 124
        assert set(np.unique(path.alphas)) <= {1, 2}

    def test_invalid_start_rejected(self):
        with pytest.raises(ValueError, match="alpha0"):
            sample_regime_path(Q2, 0.1, 10, 3, seed=0)

    def test_switch_frequency_matches_transition_matrix(self):
        # empirical one-step switch rate vs 1 - p11(0.1) = 0.090635
        path = sample_regime_path(Q2, 0.1, 10 ** 5, 1, seed=42)
        switches = np.mean(path.alphas[1:] != path.alphas[:-1])
        assert abs(switches - 0.090635) < 3e-3

    def test_occupancy_matches_stationary_distribution(self):
        g = GeneratorMatrix([[-2.0, 2.0], [0.5, -0.5]])
        path = sample_regime_path(g, 0.1, 2 * 10 ** 5, 1, seed=7)
        pi = stationary_distribution(g)
        counts = np.bincount(path.alphas - 1, minlength=2)
        _, p_value = stats.chisquare(counts, pi * counts.sum())
        assert p_value > 1e-4


class TestEstimateGenerator:
    def test_round_trip_recovers_rates(self):
        path = sample_regime_path(Q2, 1.0 / 12.0, 10 ** 5, 1, seed=1)
        est = estimate_generator(path.alphas, 1.0 / 12.0, 2)
        assert np.allclose(est.q, Q2.q, atol=0.1)

    def test_unvisited_state_kept_absorbing(self):
        labels = np.ones(50, dtype=int)
        est = estimate_generator(labels, 0.1, 2)
        assert est.l == 2
        assert np.allclose(est.q[1], 0.0)

    def test_projection_yields_valid_generator(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(1, 4, 500)
        est = estimate_generator(labels, 1.0 / 12.0, 3)
        off = est.q[~np.eye(3, dtype=bool)]
        assert np.all(off >= 0.0)
        assert np.allclose(est.q.sum(axis=1), 0.0, atol=1e-12)
