import math

import numpy as np
import pytest

from swiftssl.losses import (DebiasState, ce_loss_t, debias_adjust,
                             debias_offset, debias_update, fixmatch_losses,
                             retrieved_loss, select, softmax_t)


class TestSoftmaxT:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax_t(np.array([0.0, 0.0]), 1.0), [0.5, 0.5])

    def test_two_logits_t1(self):
        s = softmax_t(np.array([1.0, 0.0]), 1.0)
        e = math.e
        np.testing.assert_allclose(s, [e / (e + 1), 1 / (e + 1)], atol=1e-6)
        assert s[0] == pytest.approx(0.731059, abs=1e-6)

    def test_two_logits_sharp(self):
        s = softmax_t(np.array([1.0, 0.0]), 0.1)
        np.testing.assert_allclose(s, [1 / (1 + math.exp(-10)), math.exp(-10) / (1 + math.exp(-10))],
                                   rtol=1e-9)
        assert s[0] == pytest.approx(0.9999546, abs=1e-7)

    def test_cosine_scale_bound_200(self, rng):
        # entries in [-1, 1] at T=1 cannot exceed e^2 / (e^2 + 199)
        bound = math.exp(2) / (math.exp(2) + 199)
        logits = rng.uniform(-1, 1, size=(500, 200))
        probs = softmax_t(logits, 1.0)
        assert probs.max() <= bound
        assert bound == pytest.approx(0.03581, abs=5e-5)

    def test_normalization_property(self, rng):
        for _ in range(200):
            v = rng.uniform(-50, 50, size=rng.integers(2, 30))
            t = float(rng.uniform(0.01, 10))
            s = softmax_t(v, t)
            assert abs(s.sum() - 1.0) < 1e-9
            assert np.all(s >= 0) and np.all(s <= 1)

    def test_sharpening_monotonicity(self, rng):
        for _ in range(300):
            # moderate logits and temperatures so max-prob stays away from
            # the float saturation at exactly 1.0
            v = rng.uniform(-2, 2, size=rng.integers(2, 20))
            temps = [0.2, 0.5, 1.0, 2.0, 5.0]
            maxima = [softmax_t(v, t).max() for t in temps]
            assert all(a > b for a, b in zip(maxima, maxima[1:]))

    def test_argmax_invariance(self, rng):
        for _ in range(100):
            v = rng.standard_normal(12)
            ref = softmax_t(v, 1.0).argmax()
            for t in [0.01, 0.3, 7.0]:
                assert softmax_t(v, t).argmax() == ref

    def test_errors(self):
        with pytest.raises(ValueError):
            softmax_t(np.array([1.0, 2.0]), 0.0)
        with pytest.raises(ValueError):
            softmax_t(np.array([1.0, np.inf]), 1.0)


class TestSelect:
    def test_cosine_scale_zero_utilization(self, rng):
        logits = rng.uniform(-1, 1, size=(400, 200))
        sel = select(logits, t_conf=1.0, sigma=0.8)
        assert sel.utilization == 0.0
        assert not sel.mask.any()

    def test_margin_selected_when_sharp(self, rng):
        logits = rng.uniform(-1, 0.7, size=(50, 200))
        top = logits.max(axis=1)
        logits[np.arange(50), rng.integers(0, 200, 50)] = top + 0.2
        sel = select(logits, t_conf=0.01, sigma=0.8)
        assert np.all(sel.confidences > 0.999)
        assert sel.utilization == 1.0

    def test_sigma_zero_selects_all(self, rng):
        sel = select(rng.standard_normal((30, 5)), t_conf=1.0, sigma=0.0)
        assert sel.utilization == 1.0

    def test_tie_break_lowest_index(self):
        sel = select(np.array([[2.0, 2.0, 1.0]]), 1.0, 0.0)
        assert sel.pseudo_labels[0] == 0

    def test_utilization_accounting(self, rng):
        logits = rng.standard_normal((100, 4))
        sel = select(logits, 0.5, 0.7)
        assert sel.utilization == sel.mask.sum() / 100


class TestCeLossT:
    def test_uniform_logits_any_t(self):
        logits = np.zeros((3, 200))
        for t in [0.07, 1.0, 3.0]:
            loss, _, dt = ce_loss_t(logits, np.array([0, 5, 199]), t)
            assert loss == pytest.approx(math.log(200), rel=1e-12)
            assert dt == pytest.approx(0.0, abs=1e-12)

    def test_two_class_t1(self):
        loss, _, _ = ce_loss_t(np.array([[1.0, 0.0]]), np.array([0]), 1.0)
        assert loss == pytest.approx(0.313262, abs=1e-6)

    def test_two_class_sharp(self):
        loss, _, _ = ce_loss_t(np.array([[1.0, 0.0]]), np.array([0]), 0.07)
        assert loss == pytest.approx(math.log(1 + math.exp(-1 / 0.07)), rel=1e-9)
        assert loss < 1e-6

    def test_t1_equals_standard_ce(self, rng):
        logits = rng.standard_normal((20, 6))
        labels = rng.integers(0, 6, 20)
        loss, _, _ = ce_loss_t(logits, labels, 1.0)
        # independent oracle: direct definition without the shift trick
        per = [-np.log(np.exp(l[y]) / np.exp(l).sum()) for l, y in zip(logits, labels)]
        assert loss == pytest.approx(np.mean(per), rel=1e-10)

    def test_gradient_matches_fd(self, rng):
        logits = rng.standard_normal((4, 5))
        labels = rng.integers(0, 5, 4)
        t = 0.3
        loss, dlogits, dt = ce_loss_t(logits, labels, t)
        eps = 1e-6
        for i in range(4):
            for j in range(5):
                p = logits.copy(); p[i, j] += eps
                m = logits.copy(); m[i, j] -= eps
                fd = (ce_loss_t(p, labels, t)[0] - ce_loss_t(m, labels, t)[0]) / (2 * eps)
                assert dlogits[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-10)
        fd_t = (ce_loss_t(logits, labels, t + eps)[0] - ce_loss_t(logits, labels, t - eps)[0]) / (2 * eps)
        assert dt == pytest.approx(fd_t, rel=1e-5)

    def test_bad_label(self):
        with pytest.raises(ValueError, match="label"):
            ce_loss_t(np.zeros((1, 3)), np.array([3]), 1.0)


class TestFixmatch:
    def _inputs(self, rng, n=6, c=4):
        return (rng.standard_normal((n, c)), rng.standard_normal((n, c)),
                rng.standard_normal((n, c)), rng.integers(0, c, n))

    def test_empty_mask_zero_unlabeled_loss(self, rng):
        weak, strong, lab, y = self._inputs(rng)
        weak = 0.01 * weak  # flat at T=1 -> nothing passes sigma=0.8
        res = fixmatch_losses(weak, strong, lab, y, 0.07, 0.07, 1.0, 0.8)
        assert res.loss_u == 0.0
        assert np.all(res.d_strong_logits == 0)
        assert res.dt_u == 0.0

    def test_consistency_fixed_point(self, rng):
        weak = rng.standard_normal((5, 4)) * 10
        res = fixmatch_losses(weak, weak.copy(), weak, weak.argmax(axis=1),
                              0.07, 0.07, 0.01, 0.8)
        assert res.selection.utilization == 1.0
        assert res.loss_u < 1e-6

    def test_unselected_stay_in_denominator(self, rng):
        c = 3
        weak = np.array([[50.0, 0.0, 0.0], [0.001, 0.0, 0.0]])
        strong = rng.standard_normal((2, c))
        lab = rng.standard_normal((1, c))
        res = fixmatch_losses(weak, strong, lab, np.array([0]), 1.0, 1.0, 0.01, 0.8)
        assert res.selection.mask.tolist() == [True, False]
        only, _, _ = ce_loss_t(strong[:1], np.array([0]), 1.0)
        assert res.loss_u == pytest.approx(only / 2)  # selected sum over |batch|=2

    def test_pseudo_labels_detached(self, rng):
        weak, strong, lab, y = self._inputs(rng)
        weak = weak * 5
        res1 = fixmatch_losses(weak, strong, lab, y, 0.07, 0.07, 0.01, 0.8)
        # perturb weak logits without changing argmax or mask
        res2 = fixmatch_losses(weak + 1e-4 * rng.standard_normal(weak.shape),
                               strong, lab, y, 0.07, 0.07, 0.01, 0.8)
        assert np.array_equal(res1.selection.pseudo_labels, res2.selection.pseudo_labels)
        assert np.array_equal(res1.selection.mask, res2.selection.mask)
        np.testing.assert_array_equal(res1.d_strong_logits, res2.d_strong_logits)
        np.testing.assert_array_equal(res1.d_labeled_logits, res2.d_labeled_logits)
        assert res1.dt_u == res2.dt_u

    def test_degenerates_to_supervised_when_sigma_unreachable(self, rng):
        weak, strong, lab, y = self._inputs(rng)
        res = fixmatch_losses(0.01 * weak, strong, lab, y, 0.07, 0.07, 1.0, 0.99)
        sup, dsup, dt = ce_loss_t(lab, y, 0.07)
        assert res.loss_u == 0.0
        assert res.loss_l == pytest.approx(sup)
        np.testing.assert_array_equal(res.d_labeled_logits, dsup)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="align"):
            fixmatch_losses(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((1, 3)),
                            np.array([0]), 1.0, 1.0, 1.0, 0.8)


class TestRetrievedLoss:
    def test_empty(self):
        loss, grad, dt = retrieved_loss(np.zeros((0, 4)), np.zeros(0, dtype=int), 0.07)
        assert loss == 0.0 and grad.shape == (0, 4) and dt == 0.0

    def test_mixed_batch_is_mean_over_all_rows(self, rng):
        a = rng.standard_normal((16, 5))
        b = rng.standard_normal((16, 5))
        ya = rng.integers(0, 5, 16)
        yb = rng.integers(0, 5, 16)
        mixed, _, _ = ce_loss_t(np.vstack([a, b]), np.concatenate([ya, yb]), 0.07)
        la, _, _ = ce_loss_t(a, ya, 0.07)
        lb, _, _ = ce_loss_t(b, yb, 0.07)
        assert mixed == pytest.approx((la + lb) / 2)

    def test_matches_ce(self, rng):
        logits = rng.standard_normal((8, 4))
        y = rng.integers(0, 4, 8)
        assert retrieved_loss(logits, y, 0.07)[0] == ce_loss_t(logits, y, 0.07)[0]


class TestDebias:
    def test_momentum_zero_is_batch_mean(self, rng):
        probs = softmax_t(rng.standard_normal((10, 4)), 1.0)
        state = DebiasState.uniform(4, momentum=0.0)
        out = debias_update(state, probs)
        np.testing.assert_allclose(out.ema_marginal, probs.mean(axis=0), atol=1e-12)

    def test_momentum_one_unchanged(self, rng):
        probs = softmax_t(rng.standard_normal((10, 4)), 1.0)
        state = DebiasState.uniform(4, momentum=1.0)
        out = debias_update(state, probs)
        np.testing.assert_array_equal(out.ema_marginal, state.ema_marginal)

    def test_geometric_convergence(self, rng):
        probs = softmax_t(rng.standard_normal((10, 4)), 1.0)
        target = probs.mean(axis=0)
        state = DebiasState.uniform(4, momentum=0.9)
        dists = []
        for _ in range(50):
            state = debias_update(state, probs)
            dists.append(np.abs(state.ema_marginal - target).max())
        # EMA limit is the batch mean, approached geometrically at rate 0.9
        assert dists[-1] < 1e-3
        ratios = [dists[i + 1] / dists[i] for i in range(10)]
        assert all(abs(r - 0.9) < 0.02 for r in ratios)

    def test_marginal_stays_probability(self, rng):
        state = DebiasState.uniform(6)
        for _ in range(20):
            state = debias_update(state, softmax_t(rng.standard_normal((8, 6)), 0.5))
            assert abs(state.ema_marginal.sum() - 1.0) < 1e-9
            assert np.all(state.ema_marginal >= 0)

    def test_uniform_marginal_constant_shift(self, rng):
        state = DebiasState.uniform(5)
        logits = rng.standard_normal((20, 5))
        adj = debias_adjust(logits, state)
        diff = adj - logits
        assert np.ptp(diff) < 1e-12  # constant shift
        assert np.array_equal(adj.argmax(axis=1), logits.argmax(axis=1))

    def test_zero_coeff_identity(self, rng):
        state = DebiasState.uniform(5, coeff=0.0)
        logits = rng.standard_normal((4, 5))
        np.testing.assert_array_equal(debias_adjust(logits, state), logits)

    def test_three_class_hand_computation(self):
        eps = 1e-6
        ema = np.array([0.9, 0.05, 0.05])
        state = DebiasState(ema, momentum=0.999, coeff=0.5)
        offset = debias_offset(state)
        # q'_c = q_c - 0.5 * ln(ema_c + eps); class 0 is reduced relative to
        # class 1 by 0.5 * ln((0.9 + eps) / (0.05 + eps))
        expected_gap = 0.5 * math.log((0.9 + eps) / (0.05 + eps))
        assert (offset[1] - offset[0]) == pytest.approx(expected_gap, rel=1e-12)
        adj = debias_adjust(np.zeros((1, 3)), state)[0]
        assert (adj[1] - adj[0]) == pytest.approx(expected_gap, rel=1e-12)
