import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softmaxlab.numkit import (
    entropy,
    log_softmax,
    log_sum_exp,
    make_rng,
    numerical_rank,
    parallel_map,
    read_matrix_csv,
    singular_values,
    softmax,
    softplus,
    softplus_inv,
    thread_count,
    write_matrix_csv,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite)


class TestLogSumExp:
    def test_two_zeros(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)

    def test_large_equal_entries(self):
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), rel=1e-15)

    def test_ln3(self):
        assert log_sum_exp([0.0, math.log(3)]) == pytest.approx(math.log(4), abs=1e-15)

    def test_minus_inf_entries_are_skipped(self):
        assert log_sum_exp([-np.inf, 0.0]) == 0.0

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            log_sum_exp([])

    def test_axis(self):
        v = np.array([[0.0, 0.0], [0.0, math.log(3)]])
        np.testing.assert_allclose(log_sum_exp(v, axis=1), [math.log(2), math.log(4)])

    @given(vectors)
    def test_bracketed_by_max(self, v):
        out = log_sum_exp(v)
        assert out >= v.max() - 1e-12
        assert out <= v.max() + math.log(v.size) + 1e-12


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=1e-15)

    def test_weights_one_and_three(self):
        np.testing.assert_allclose(softmax([0.0, math.log(3)]), [0.25, 0.75], rtol=1e-15)

    def test_large_logits_stay_finite(self):
        p = softmax([700.0, 700.0, 0.0])
        np.testing.assert_allclose(p[:2], [0.5, 0.5], rtol=1e-15)
        assert 0 <= p[2] < 1e-300

    def test_log_softmax_matches(self, rng):
        v = rng.normal(size=20) * 30
        np.testing.assert_allclose(np.exp(log_softmax(v)), softmax(v), rtol=1e-13)

    @given(vectors, st.floats(-500, 500))
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(softmax(v + c), softmax(v), rtol=0, atol=1e-14)

    @given(vectors)
    def test_is_distribution(self, v):
        p = softmax(v)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) <= 1e-12


class TestSoftplus:
    @given(st.floats(1e-8, 700))
    def test_inverse_roundtrip(self, y):
        assert softplus(softplus_inv(y)) == pytest.approx(y, rel=1e-12)

    def test_inverse_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            softplus_inv([1.0, 0.0])

    def test_no_overflow(self):
        assert softplus(1000.0) == 1000.0
        assert softplus(-1000.0) == 0.0


def test_entropy_ignores_zero_mass():
    assert entropy([0.5, 0.5, 0.0]) == pytest.approx(math.log(2))
    assert entropy([1.0, 0.0]) == 0.0


class TestSingularValues:
    def test_diagonal(self):
        np.testing.assert_allclose(singular_values(np.diag([3.0, 2.0, 1.0])), [3, 2, 1])

    def test_rank_one_outer(self, rng):
        u = rng.normal(size=6)
        v = rng.normal(size=4)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        s = singular_values(np.outer(u, v))
        assert s[0] == pytest.approx(1.0, abs=1e-12)
        assert np.all(s[1:] < 1e-15)

    def test_orthogonal(self, rng):
        Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        np.testing.assert_allclose(singular_values(Q), np.ones(5), atol=1e-9)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            singular_values(np.array([[1.0, np.nan]]))

    def test_deterministic(self, rng):
        A = rng.normal(size=(7, 9))
        assert np.array_equal(singular_values(A), singular_values(A.copy()))


class TestNumericalRank:
    def test_identity(self):
        assert numerical_rank(np.eye(4)) == 4

    def test_all_ones(self):
        assert numerical_rank(np.ones((5, 5))) == 1

    def test_zero(self):
        assert numerical_rank(np.zeros((3, 3))) == 0

    def test_gaussian_product_rank_d(self):
        for seed in range(100):
            r = make_rng(seed)
            assert numerical_rank(r.normal(size=(8, 3)) @ r.normal(size=(10, 3)).T) == 3

    def test_explicit_tolerance(self):
        assert numerical_rank(np.diag([1.0, 1e-3]), tol=1e-2) == 1

    def test_product_rank_submultiplicative(self):
        for seed in range(50):
            r = make_rng(seed, 1)
            A = r.normal(size=(6, 2)) @ r.normal(size=(2, 7))
            B = r.normal(size=(7, 4)) @ r.normal(size=(4, 5))
            assert numerical_rank(A @ B) <= min(numerical_rank(A), numerical_rank(B))

    def test_sum_rank_subadditive(self):
        for seed in range(100):
            r = make_rng(seed, 2)
            kb, kc = r.integers(1, 4, size=2)
            B = r.normal(size=(9, kb)) @ r.normal(size=(kb, 8))
            C = r.normal(size=(9, kc)) @ r.normal(size=(kc, 8))
            assert numerical_rank(B + C) <= numerical_rank(B) + numerical_rank(C)


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a = make_rng(42).random(1_000_000)
        b = make_rng(42).random(1_000_000)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        assert not np.array_equal(make_rng(1, 0).random(10), make_rng(1, 1).random(10))

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            make_rng(-1)

    def test_documented_algorithm(self):
        assert isinstance(make_rng(0).bit_generator, np.random.Philox)


def test_parallel_map_preserves_order():
    assert parallel_map(lambda x: x * x, range(20), threads=4) == [x * x for x in range(20)]


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("SOFTMAXLAB_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("SOFTMAXLAB_THREADS", "x")
    with pytest.raises(ValueError):
        thread_count()


@settings(max_examples=25)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_matrix_csv_roundtrip(tmp_path_factory, A):
    path = tmp_path_factory.mktemp("csv") / "m.csv"
    write_matrix_csv(path, A)
    assert np.array_equal(read_matrix_csv(path), A)
