import math

import numpy as np
import pytest
from conftest import head_gradient_errors

from softmaxlab.heads import (
    HEAD_VARIANTS,
    LMS,
    LinearSoftmax,
    MoS,
    build_head,
    cross_entropy,
    head_from_dict,
    kl_divergence,
    mse_logprob,
)
from softmaxlab.monofn import PLIF, Identity, Sigsoftmax
from softmaxlab.numkit import entropy, make_rng, numerical_rank, sigmoid, softmax


def random_mos(rng, M, d, K):
    return MoS(rng.normal(size=(M, d)), rng.normal(size=(K, d)), rng.normal(size=(K, d, d)))


class TestProbabilities:
    def test_zero_weights_uniform(self, rng):
        head = LinearSoftmax(np.zeros((6, 3)))
        np.testing.assert_allclose(head.probs(rng.normal(size=3)), np.full(6, 1 / 6), rtol=1e-15)

    def test_lms_identity_is_linear_softmax(self):
        for seed in range(100):
            r = make_rng(seed, 21)
            W = r.normal(size=(9, 4))
            H = r.normal(size=(5, 4))
            np.testing.assert_allclose(LMS(W, Identity()).probs(H), LinearSoftmax(W).probs(H), rtol=0, atol=1e-14)

    def test_symmetric_mixture_collapses(self, rng):
        M, d = 7, 3
        W = rng.normal(size=(M, d))
        U = rng.normal(size=(1, d, d))
        V = rng.normal(size=(1, d))
        two = MoS(W, np.vstack([V, V]), np.concatenate([U, U]))
        one = MoS(W, V, U)
        H = rng.normal(size=(10, d))
        np.testing.assert_allclose(two.probs(H), one.probs(H), rtol=1e-13)

    def test_mos_single_component_is_softmax_of_tanh(self, rng):
        M, d = 5, 2
        head = random_mos(rng, M, d, 1)
        h = rng.normal(size=d)
        expected = softmax(head.W @ np.tanh(head.U[0] @ h))
        np.testing.assert_allclose(head.probs(h), expected, rtol=1e-13)

    @pytest.mark.parametrize("variant", HEAD_VARIANTS)
    def test_row_stochastic(self, variant, rng):
        head = build_head(variant, 12, 4, rng, init_scale=1.0, hidden=5, knots=30)
        Q = head.probs(rng.normal(0, 3, size=(25, 4)))
        assert np.all(Q >= 0)
        np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-10)

    def test_mos_priors_on_simplex(self, rng):
        head = random_mos(rng, 6, 3, 4)
        pi = head.priors(rng.normal(size=(30, 3)))
        assert np.all(pi >= 0)
        np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)

    def test_wrong_context_dimension(self, rng):
        with pytest.raises(ValueError):
            LinearSoftmax(rng.normal(size=(4, 3))).probs(np.zeros(2))

    def test_unknown_variant(self, rng):
        with pytest.raises(ValueError, match="linear"):
            build_head("softmax++", 4, 2, rng)


class TestCrossEntropy:
    def test_uniform_four(self):
        assert cross_entropy(np.full(4, 0.25), np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-15)

    def test_one_hot_against_equal_logits(self):
        assert cross_entropy([1.0, 0.0], softmax([0.0, 0.0])) == pytest.approx(math.log(2), abs=1e-15)

    def test_gibbs_equality(self, rng):
        p = rng.dirichlet(np.ones(8))
        assert cross_entropy(p, p) == pytest.approx(entropy(p), rel=1e-14)
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-14)

    def test_missing_support_is_infinite(self):
        assert cross_entropy([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_zero_mass_outside_support_is_fine(self):
        assert cross_entropy([1.0, 0.0], [1.0, 0.0]) == 0.0


class TestContextGradients:
    def test_linear_uniform_logits(self):
        head = LinearSoftmax(np.eye(2))
        g = head.grad_context(np.zeros(2), np.array([1.0, 0.0]))
        np.testing.assert_allclose(g["H"], [-0.5, 0.5], atol=1e-15)

    def test_sigsoftmax_chain_rule(self, rng):
        M = 5
        head = LMS(np.eye(M), Sigsoftmax())
        z = rng.normal(size=M)
        p = rng.dirichlet(np.ones(M))
        q = head.probs(z)
        np.testing.assert_allclose(head.grad_context(z, p)["H"], (q - p) * (2 - sigmoid(z)), rtol=1e-12)

    def test_mos_finite_differences(self):
        for seed in range(10):
            r = make_rng(seed, 31)
            head = random_mos(r, 7, 4, 3)
            h = r.normal(size=(1, 4))
            p = r.dirichlet(np.ones(7))[None]
            errs = head_gradient_errors(head, h, p)
            assert max(errs.values()) <= 1e-6, errs

    @pytest.mark.parametrize("variant", HEAD_VARIANTS)
    def test_mse_loss_gradients(self, variant):
        r = make_rng(5, 41)
        head = build_head(variant, 6, 3, r, init_scale=0.7, hidden=3, knots=12, plif_range=4.0)
        if variant == "lms-plif":
            head.fn.set_params(v_raw=r.normal(size=12))
        H = r.normal(size=(4, 3))
        target = np.log(r.dirichlet(np.ones(6), 4))
        errs = head_gradient_errors(head, H, target, loss="mse")
        assert max(errs.values()) <= 1e-5, errs

    def test_unknown_loss(self, rng):
        head = LinearSoftmax(rng.normal(size=(3, 2)))
        with pytest.raises(ValueError):
            head.loss_and_grads(np.zeros((1, 2)), np.full((1, 3), 1 / 3), loss="hinge")


class TestLogProbMatrix:
    def test_zero_weights(self, rng):
        A, logz = LinearSoftmax(np.zeros((5, 2))).log_prob_matrix(rng.normal(size=(7, 2)))
        np.testing.assert_allclose(A, -math.log(5), rtol=1e-15)
        np.testing.assert_allclose(logz, math.log(5), rtol=1e-15)

    def test_orientation(self, rng):
        head = LinearSoftmax(rng.normal(size=(5, 2)))
        H = rng.normal(size=(7, 2))
        A, _ = head.log_prob_matrix(H)
        assert A.shape == (5, 7)
        np.testing.assert_allclose(A, head.log_probs(H).T, atol=1e-13)

    def test_linear_rank_ceiling(self):
        for seed in range(100):
            r = make_rng(seed, 51)
            A, _ = LinearSoftmax(r.normal(size=(6, 3))).log_prob_matrix(r.normal(size=(10, 3)))
            assert numerical_rank(A) <= 4

    def test_plif_breaks_the_ceiling(self):
        ranks = []
        for seed in range(50):
            r = make_rng(seed, 52)
            W = r.normal(size=(6, 3))
            H = r.normal(size=(10, 3))
            fn = PLIF(10.0, r.normal(0, 1.5, 20))
            ranks.append(numerical_rank(LMS(W, fn).log_prob_matrix(H)[0]))
        assert max(ranks) > 4

    def test_rank_floor(self):
        for seed in range(100):
            r = make_rng(seed, 53)
            d = 3
            W = r.normal(size=(10, d))
            H = r.normal(size=(20, d))
            assert numerical_rank(W @ H.T) == d
            assert numerical_rank(LinearSoftmax(W).log_prob_matrix(H)[0]) >= d - 1

    def test_mos_has_no_single_partition(self, rng):
        assert random_mos(rng, 4, 2, 2).log_prob_matrix(rng.normal(size=(3, 2)))[1] is None


class TestMse:
    def test_identical(self, rng):
        A = rng.normal(size=(4, 6))
        assert mse_logprob(A, A) == 0.0

    def test_constant_shift(self, rng):
        M, N, c = 5, 8, 0.3
        A = rng.normal(size=(M, N))
        assert mse_logprob(A, A + c) == pytest.approx(M * c * c, rel=1e-12)

    def test_naive_sum(self, rng):
        A = rng.normal(size=(6, 9))
        B = rng.normal(size=(6, 9))
        naive = 0.0
        for i in range(6):
            for j in range(9):
                naive += (A[i, j] - B[i, j]) ** 2
        assert mse_logprob(A, B) == pytest.approx(naive / 9, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_logprob(np.zeros((2, 3)), np.zeros((3, 2)))


@pytest.mark.parametrize("variant", HEAD_VARIANTS)
def test_dict_roundtrip(variant, rng):
    head = build_head(variant, 6, 3, rng, init_scale=0.5, hidden=4, knots=10)
    back = head_from_dict(head.to_dict())
    H = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(back.log_probs(H), head.log_probs(H))
