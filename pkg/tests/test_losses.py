"""Tests for the training objectives.

The contrastive loss is checked against hand-built scalar softmax oracles:
batches are constructed whose similarity matrices are known exactly, so the
expected loss reduces to a one-line closed form.
"""

import numpy as np
import pytest

from tfssd import autodiff as ad
from tfssd import numerics
from tfssd.errors import InvalidArgumentError, ShapeMismatchError
from tfssd.losses import (
    LossConfig,
    PrototypeBank,
    cmdt_loss,
    cross_entropy,
    ser_loss,
    to_complex_domain,
    vec_sim,
)


class TestLossConfig:
    def test_temperature_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            LossConfig(tau=0.0)

    def test_weight_must_be_nonnegative(self):
        with pytest.raises(InvalidArgumentError):
            LossConfig(weight=-0.1)


class TestVecSim:
    def test_self_similarity_is_one(self):
        u = np.array([1.0 + 2.0j, -0.5 + 0.25j])
        assert vec_sim(u, u) == pytest.approx(1.0, abs=1e-14)

    def test_negated_similarity_is_minus_one(self):
        u = np.array([0.3 - 1.0j, 2.0 + 0.0j])
        assert vec_sim(u, -u) == pytest.approx(-1.0, abs=1e-14)

    def test_quarter_turn_orthogonality(self):
        assert vec_sim(np.array([1.0 + 0.0j]), np.array([0.0 + 1.0j])) == 0.0

    def test_scale_invariance_exact_for_powers_of_two(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        assert vec_sim(2.0 * u, 0.5 * v) == vec_sim(u, v)

    @pytest.mark.parametrize("seed", range(5))
    def test_bounded_by_cauchy_schwarz(self, seed):
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        v = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        assert abs(vec_sim(u, v)) <= 1.0 + 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(InvalidArgumentError):
            vec_sim(np.zeros(3, dtype=complex), np.ones(3, dtype=complex))


class TestComplexDomain:
    def test_impulse_spectrum_is_flat(self):
        assert np.allclose(to_complex_domain([1.0, 0.0, 0.0, 0.0]), [1.0, 1.0, 1.0])

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal(9)
        assert np.abs(to_complex_domain(v) - numerics.dft_oracle(v)).max() < 1e-10

    def test_too_short_rejected(self):
        with pytest.raises(InvalidArgumentError):
            to_complex_domain([1.0])


class TestCmdtLoss:
    def test_singleton_batch_is_zero(self):
        rng = np.random.default_rng(2)
        bank = PrototypeBank(ad.tensor(rng.standard_normal((3, 6))))
        pooled = ad.tensor(rng.standard_normal((1, 6)))
        loss = cmdt_loss(pooled, np.array([1]), bank, LossConfig())
        assert loss.data == 0.0

    def test_opposed_pair_closed_form(self):
        # rows and prototypes are sign mirrors, so the similarity matrix is
        # [[1, -1], [-1, 1]] and each row contributes log(1 + e^-2) at tau=1
        base = np.array([1.0, 2.0, 3.0, 4.0])
        pooled = ad.tensor(np.vstack([base, -base]))
        bank = PrototypeBank(ad.tensor(np.vstack([base, -base])))
        loss = cmdt_loss(pooled, np.array([0, 1]), bank, LossConfig(tau=1.0))
        assert loss.data == pytest.approx(np.log1p(np.exp(-2.0)), abs=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_all_same_label_batch_is_log_n(self, n):
        rng = np.random.default_rng(3)
        bank = PrototypeBank(ad.tensor(rng.standard_normal((4, 6))))
        pooled = ad.tensor(rng.standard_normal((n, 6)))
        loss = cmdt_loss(pooled, np.full(n, 2), bank, LossConfig(tau=0.2))
        assert loss.data == pytest.approx(np.log(n), abs=1e-12)

    def test_nonnegative_on_random_batches(self):
        rng = np.random.default_rng(4)
        for seed in range(5):
            local = np.random.default_rng(seed)
            bank = PrototypeBank(ad.tensor(local.standard_normal((4, 8))))
            pooled = ad.tensor(local.standard_normal((6, 8)))
            labels = local.integers(0, 4, size=6)
            loss = cmdt_loss(pooled, labels, bank, LossConfig(tau=0.1))
            assert loss.data >= 0.0

    def test_loss_grows_as_positive_similarity_falls(self):
        # spectra are placed on orthogonal axes so rotating the first anchor
        # away from its target changes only that one similarity
        target_spectra = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        prototypes = np.fft.irfft(target_spectra, n=4, axis=1)
        losses = []
        for angle in (0.2, 0.6, 1.0):
            anchor0 = np.fft.irfft([np.cos(angle), 0.0, np.sin(angle)], n=4)
            anchor1 = np.fft.irfft([0.0, 1.0, 0.0], n=4)
            pooled = ad.tensor(np.vstack([anchor0, anchor1]))
            loss = cmdt_loss(
                pooled,
                np.array([0, 1]),
                PrototypeBank(ad.tensor(prototypes)),
                LossConfig(tau=0.5),
            )
            losses.append(float(loss.data))
        assert losses[0] < losses[1] < losses[2]

    def test_zero_anchor_rejected(self):
        bank = PrototypeBank(ad.tensor(np.ones((2, 4))))
        pooled = ad.tensor(np.zeros((2, 4)))
        with pytest.raises(InvalidArgumentError):
            cmdt_loss(pooled, np.array([0, 1]), bank, LossConfig())

    def test_zero_prototype_rejected(self):
        bank = PrototypeBank(ad.tensor(np.zeros((2, 4))))
        pooled = ad.tensor(np.ones((2, 4)))
        with pytest.raises(InvalidArgumentError):
            cmdt_loss(pooled, np.array([0, 1]), bank, LossConfig())

    def test_out_of_range_label_rejected(self):
        bank = PrototypeBank(ad.tensor(np.ones((2, 4))))
        pooled = ad.tensor(np.ones((2, 4)))
        with pytest.raises(InvalidArgumentError):
            cmdt_loss(pooled, np.array([0, 2]), bank, LossConfig())

    def test_width_mismatch_rejected(self):
        bank = PrototypeBank(ad.tensor(np.ones((2, 6))))
        pooled = ad.tensor(np.ones((2, 4)))
        with pytest.raises(ShapeMismatchError):
            cmdt_loss(pooled, np.array([0, 1]), bank, LossConfig())

    def test_gradients_pass_finite_differences(self):
        rng = np.random.default_rng(5)
        pooled = ad.tensor(rng.standard_normal((4, 8)), name="pooled")
        protos = ad.tensor(rng.standard_normal((3, 8)), name="prototypes")
        labels = np.array([0, 2, 1, 2])
        cfg = LossConfig(tau=0.1, weight=0.1)

        def builder():
            return cmdt_loss(pooled, labels, PrototypeBank(protos), cfg)

        report = ad.finite_diff_check(builder, [pooled, protos], h=1e-5)
        assert report.max_rel_error < 1e-4, report.worst_param()


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = cross_entropy(ad.tensor(np.zeros(4)), 1)
        assert loss.data == pytest.approx(np.log(4.0), abs=1e-14)

    def test_dominant_true_logit_saturates_to_zero(self):
        logits = np.zeros(4)
        logits[2] = 30.0
        loss = cross_entropy(ad.tensor(logits), 2)
        assert loss.data == pytest.approx(0.0, abs=1e-12)

    def test_three_way_oracle_value(self):
        loss = cross_entropy(ad.tensor(np.array([1.0, 2.0, 3.0])), 2)
        assert loss.data == pytest.approx(0.4076059644443804, abs=1e-12)

    def test_large_logits_stay_finite(self):
        loss = cross_entropy(ad.tensor(np.array([1000.0, 999.0])), 1)
        assert np.isfinite(loss.data)
        assert loss.data == pytest.approx(np.log1p(np.exp(1.0)), abs=1e-9)

    def test_out_of_range_label_rejected(self):
        with pytest.raises(InvalidArgumentError):
            cross_entropy(ad.tensor(np.zeros(3)), 3)

    def test_gradient_is_softmax_minus_onehot(self):
        logits = ad.tensor(np.array([0.5, -1.0, 2.0]))
        loss = cross_entropy(logits, 0)
        loss.backward()
        probs = np.exp(logits.data) / np.exp(logits.data).sum()
        expected = probs.copy()
        expected[0] -= 1.0
        assert np.allclose(logits.grad, expected, atol=1e-12)


class TestTotalLoss:
    def test_zero_weight_returns_cross_entropy(self):
        ce = ad.tensor(np.array(1.7))
        total = ser_loss(ce, 5.0, LossConfig(weight=0.0))
        assert total.data == 1.7

    def test_weighted_sum_value(self):
        total = ser_loss(
            ad.tensor(np.array(1.0)), ad.tensor(np.array(2.0)), LossConfig(weight=0.1)
        )
        assert total.data == pytest.approx(1.2, abs=1e-14)

    def test_linear_in_contrastive_term(self):
        cfg = LossConfig(weight=0.3)
        ce = ad.tensor(np.array(0.5))
        a = ser_loss(ce, 1.0, cfg).data
        b = ser_loss(ce, 3.0, cfg).data
        c = ser_loss(ce, 5.0, cfg).data
        assert b - a == pytest.approx(c - b, abs=1e-14)

    def test_gradient_splits_by_weight(self):
        ce = ad.tensor(np.array(1.0))
        cm = ad.tensor(np.array(2.0))
        total = ser_loss(ce, cm, LossConfig(weight=0.25))
        total.backward()
        assert ce.grad == pytest.approx(1.0)
        assert cm.grad == pytest.approx(0.25)
