"""Loss values against hand computations and double-loop oracles; ensemble
combination algebra."""

import math

import numpy as np
import pytest

from mostats import autodiff as ad
from mostats import losses as L
from mostats.errors import ContractError
from mostats.rng import Rng


def sb_oracle(U, labels, tau, literal=False):
    """Direct double-loop evaluation of the contrastive objective."""
    n = len(U)
    total = 0.0
    for i in range(n):
        positives = [q for q in range(n)
                     if labels[q] == labels[i] and (literal or q != i)]
        s = 0.0
        for q in positives:
            num = math.exp(float(U[i] @ U[q]) / tau)
            den = sum(math.exp(float(U[a] @ U[q]) / tau)
                      for a in range(n) if literal or a != i)
            s += num / den
        total += -math.log(s)
    return total


def unit_rows(x):
    return x / np.sqrt((x ** 2).sum(axis=1, keepdims=True))


class TestCbLoss:
    def test_perfect_prediction_is_zero(self):
        p = np.eye(4)[[0, 2, 1]]
        # exact one-hot has log(1)=0 rows
        assert float(L.cb_loss(p, [0, 2, 1]).value) == 0.0

    def test_uniform_512(self):
        p = np.full((1, 512), 1.0 / 512)
        got = float(L.cb_loss(p, [7]).value)
        assert got == pytest.approx(math.log(512), rel=1e-9)
        assert got == pytest.approx(6.238, abs=5e-4)

    def test_gradient_is_softmax_minus_onehot(self):
        rng = Rng(1)
        logits = rng.normal(size=(4, 6))
        labels = np.array([0, 5, 2, 2])
        z = ad.leaf(logits.copy())
        ad.backward(L.cb_loss_logits(z, labels))
        p = np.exp(logits - logits.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        onehot = np.eye(6)[labels]
        np.testing.assert_allclose(z.grad, p - onehot, atol=1e-12)
        assert ad.finite_diff_check(lambda v: L.cb_loss_logits(v, labels), logits) < 1e-4

    def test_logits_path_equals_probability_path(self):
        rng = Rng(2)
        logits = rng.normal(size=(5, 7))
        labels = np.asarray(rng.integers(0, 7, size=5))
        a = float(L.cb_loss_logits(ad.constant(logits), labels).value)
        b = float(L.cb_loss(ad.softmax(ad.constant(logits)), labels).value)
        assert a == pytest.approx(b, rel=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            L.cb_loss(np.full((2, 3), 1 / 3), [0, 3])

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ContractError):
            L.cb_loss(np.full((2, 3), 0.5), [0, 1])

    def test_nonnegative_and_zero_iff_onehot(self):
        rng = Rng(3)
        for _ in range(10):
            logits = rng.normal(size=(3, 5)) * 3
            labels = np.asarray(rng.integers(0, 5, size=3))
            assert float(L.cb_loss_logits(ad.constant(logits), labels).value) > 0.0

    def test_mean_reduction(self):
        p = np.full((4, 8), 1.0 / 8)
        labels = [0, 1, 2, 3]
        assert float(L.cb_loss(p, labels, reduction="mean").value) == pytest.approx(
            float(L.cb_loss(p, labels).value) / 4)


class TestSbLoss:
    def test_two_identical_unit_vectors(self):
        u = unit_rows(np.array([[1.0, 2.0, 2.0], [1.0, 2.0, 2.0]]))
        got = float(L.sb_loss(u, [3, 3], tau=1.0).value)
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_matches_double_loop_oracle(self):
        rng = Rng(4)
        u = unit_rows(rng.normal(size=(8, 5)))
        labels = np.array([0, 0, 1, 1, 2, 2, 0, 1])
        for literal in (False, True):
            got = float(L.sb_loss(u, labels, tau=0.3, literal_eq8=literal).value)
            assert got == pytest.approx(sb_oracle(u, labels, 0.3, literal), rel=1e-10)

    def test_tau_scaling_identity(self):
        rng = Rng(5)
        u = unit_rows(rng.normal(size=(6, 4)))
        labels = np.array([0, 0, 1, 1, 2, 2])
        c = 2.5
        sims = u @ u.T
        a = float(L.sb_loss(u, labels, tau=0.2 * c).value)
        b = float(L._similarity_loss(ad.constant(sims / c / 0.2), labels,
                                     literal_eq8=False, reduction="sum").value)
        assert a == pytest.approx(b, rel=1e-12)

    def test_missing_positive_names_label(self):
        u = unit_rows(Rng(6).normal(size=(3, 4)))
        with pytest.raises(ContractError, match="label 7"):
            L.sb_loss(u, [3, 3, 7])

    def test_literal_mode_allows_singletons(self):
        u = unit_rows(Rng(7).normal(size=(3, 4)))
        val = float(L.sb_loss(u, [0, 0, 7], literal_eq8=True).value)
        assert np.isfinite(val)

    def test_rows_must_be_unit(self):
        with pytest.raises(ContractError):
            L.sb_loss(np.ones((2, 3)), [0, 0])

    def test_global_rotation_invariance(self):
        rng = Rng(8)
        u = unit_rows(rng.normal(size=(6, 5)))
        labels = np.array([0, 0, 1, 1, 2, 2])
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        a = float(L.sb_loss(u, labels, tau=0.15).value)
        b = float(L.sb_loss(u @ q, labels, tau=0.15).value)
        assert a == pytest.approx(b, rel=1e-9)

    def test_gradient_passes_finite_differences(self):
        rng = Rng(9)
        v = rng.normal(size=(6, 4)) + 1.0
        labels = np.array([0, 0, 1, 1, 0, 1])
        f = lambda x: L.sb_loss(ad.l2_normalize(x), labels, tau=0.2)
        assert ad.finite_diff_check(f, v, h=1e-5) < 1e-4


class TestBranchAndOverall:
    def _reports(self, vals):
        return [L.BranchLossReport(cb=v, sb=0.0, total=v) for v in vals]

    def test_branch_composition(self):
        rng = Rng(10)
        logits = rng.normal(size=(4, 6))
        p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
        u = unit_rows(rng.normal(size=(4, 5)))
        labels = np.array([0, 0, 1, 1])
        rep = L.branch_loss(p, u, labels, tau=0.2)
        assert rep.total == rep.cb + rep.sb
        assert rep.cb == pytest.approx(float(L.cb_loss(p, labels).value))
        assert rep.sb == pytest.approx(float(L.sb_loss(u, labels, tau=0.2).value))
        assert rep.node is not None
        assert float(rep.node.value) == pytest.approx(rep.total, rel=1e-12)

    def test_zero_parts_zero_total(self):
        rep = L.BranchLossReport(cb=0.0, sb=0.0, total=0.0)
        assert L.overall_loss([rep] * 3, L.EnsembleWeights()) == 0.0

    def test_plain_sum_with_unit_weights(self):
        reps = self._reports([1.5, 2.5, 3.0])
        assert L.overall_loss(reps, L.EnsembleWeights()) == pytest.approx(7.0)

    def test_masking_weights(self):
        reps = self._reports([1.5, 2.5, 3.0])
        assert L.overall_loss(reps, L.EnsembleWeights(1, 0, 0)) == pytest.approx(1.5)

    def test_published_weighting_by_hand(self):
        reps = self._reports([2.0, 4.0, 1.0])
        # 1*2 + 0.3*4 + 1*1 = 4.2
        assert L.overall_loss(reps, L.EnsembleWeights(1.0, 0.3, 1.0)) == pytest.approx(4.2)

    def test_linear_in_each_branch(self):
        w = L.EnsembleWeights(1.0, 0.7, 0.2)
        base = self._reports([1.0, 1.0, 1.0])
        scaled = self._reports([1.0, 3.0, 1.0])
        diff = L.overall_loss(scaled, w) - L.overall_loss(base, w)
        assert diff == pytest.approx(0.7 * 2.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ContractError):
            L.EnsembleWeights(1.0, -0.1, 1.0)
