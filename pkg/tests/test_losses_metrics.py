import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from samamba import losses, metrics, reference
from samamba.engine.gradcheck import finite_diff_check
from samamba.engine.tensor import Tensor
from samamba.verify import random_mask_pairs

BIG = 40.0


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def saturated(target):
    return t64(np.where(np.asarray(target) > 0, BIG, -BIG))


class TestSoftIoU:
    def test_perfect_overlap(self):
        t = np.array([[1, 0], [0, 1]], float)
        assert float(losses.soft_iou_loss(saturated(t), t).data) < 1e-12

    def test_disjoint(self):
        t = np.array([[1, 0], [0, 1]], float)
        assert float(losses.soft_iou_loss(saturated(1 - t), t).data) == pytest.approx(1.0, abs=1e-6)

    def test_uniform_half(self):
        t = np.array([[1, 1], [0, 0]], float)
        eps = losses.SMOOTH
        # sum p t = 1, sum p = 2, sum t = 2
        want = 1 - (1 + eps) / (2 + 2 - 1 + eps)
        assert float(losses.soft_iou_loss(t64(np.zeros((2, 2))), t).data) == pytest.approx(want, abs=1e-15)


class TestDice:
    def test_perfect(self):
        t = np.eye(3)
        assert float(losses.dice_loss(saturated(t), t).data) < 1e-12

    def test_empty_empty(self):
        assert float(losses.dice_loss(t64(np.full((3, 3), -800.0)), np.zeros((3, 3))).data) == 0.0

    def test_random_formula(self, rng):
        z = rng.standard_normal((4, 4))
        t = (rng.random((4, 4)) < 0.4).astype(float)
        p = sigmoid(z)
        eps = losses.SMOOTH
        want = 1 - (2 * (p * t).sum() + eps) / (p.sum() + t.sum() + eps)
        assert float(losses.dice_loss(t64(z), t).data) == pytest.approx(want, abs=1e-14)


class TestFocal:
    def test_degenerate_is_half_bce(self, rng):
        z = rng.standard_normal((3, 5))
        t = (rng.random((3, 5)) < 0.5).astype(float)
        p = sigmoid(z)
        bce = -(t * np.log(p) + (1 - t) * np.log(1 - p)).mean()
        got = float(losses.focal_loss(t64(z), t, gamma=0.0, alpha=0.5).data)
        assert got == pytest.approx(0.5 * bce, rel=1e-12)

    def test_confident_correct_near_zero(self):
        t = np.array([1.0, 0.0, 1.0])
        assert float(losses.focal_loss(saturated(t), t).data) < 1e-20

    @pytest.mark.parametrize("z,t", [(0.7, 1.0), (0.7, 0.0), (-2.0, 1.0)])
    def test_single_pixel(self, z, t):
        p = sigmoid(z)
        pt = p if t else 1 - p
        at = 0.25 if t else 0.75
        want = -at * (1 - pt) ** 2 * math.log(pt)
        assert float(losses.focal_loss(t64([z]), [t]).data) == pytest.approx(want, rel=1e-12)

    def test_extreme_logits_finite(self):
        v = losses.focal_loss(t64([-1e4, 1e4]), [1.0, 0.0]).data
        assert np.isfinite(v) and v > 0


class TestTotal:
    def test_scalar_shape(self, rng):
        z = t64(rng.standard_normal((1, 1, 3, 3)))
        assert losses.total_loss(z, np.zeros((1, 1, 3, 3))).shape == ()

    def test_additivity(self, rng):
        z = t64(rng.standard_normal((1, 1, 6, 6)))
        t = (rng.random((1, 1, 6, 6)) < 0.2).astype(float)
        parts = losses.soft_iou_loss(z, t).data + losses.dice_loss(z, t).data + losses.focal_loss(z, t).data
        assert float(losses.total_loss(z, t).data) == float(parts)

    def test_gradient(self, rng):
        t = (rng.random((1, 1, 5, 5)) < 0.3).astype(float)
        rep = finite_diff_check(lambda v: losses.total_loss(v, t), t64(rng.standard_normal((1, 1, 5, 5))), h=1e-6)
        assert rep.passed, rep.max_rel_err

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 20))
    def test_non_negative(self, seed, scale):
        rng = np.random.default_rng(seed)
        z = t64(rng.standard_normal((2, 1, 4, 4)) * scale)
        t = (rng.random((2, 1, 4, 4)) < 0.3).astype(float)
        assert float(losses.total_loss(z, t).data) >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            losses.total_loss(t64(np.zeros((1, 1, 4, 4))), np.zeros((1, 1, 4, 5)))

    def test_consistency_with_metrics(self, rng):
        t = np.zeros((1, 1, 8, 8))
        t[0, 0, 2:4, 3:6] = 1
        values = [float(losses.total_loss(t64((2 * t - 1) * s), t).data) for s in (1.0, 4.0, 16.0)]
        assert values[0] > values[1] > values[2] and values[2] < 1e-5
        pred = metrics.binarize(sigmoid((2 * t - 1) * 16.0))
        assert metrics.evaluate_masks(pred, t)["iou"] == 1.0


def acc_of(*counts):
    acc = metrics.EvalAccumulator()
    for c in counts:
        acc.add_counts(*c)
    return acc


class TestMetricExamples:
    def test_two_sample_case(self):
        acc = acc_of((2, 4, 4), (0, 2, 2))
        assert metrics.dataset_iou(acc) == pytest.approx(0.2, abs=1e-15)
        assert metrics.niou(acc) == pytest.approx(1 / 6, abs=1e-15)
        assert metrics.niou(acc) != metrics.dataset_iou(acc)
        np.testing.assert_allclose(metrics.per_sample_f1(acc), [0.5, 0.0], atol=1e-15)

    def test_perfect_and_disjoint(self):
        assert metrics.dataset_iou(acc_of((5, 5, 5), (3, 3, 3))) == 1.0
        assert metrics.dataset_iou(acc_of((0, 5, 3))) == 0.0
        assert metrics.niou(acc_of((4, 4, 4))) == 1.0
        assert metrics.f1(acc_of((4, 4, 4))) == 1.0

    def test_equal_precision_recall(self):
        assert metrics.f1(acc_of((1, 2, 2))) == 0.5

    def test_all_empty_is_one_with_warning(self):
        acc = acc_of((0, 0, 0), (0, 0, 0))
        with pytest.warns(RuntimeWarning):
            assert metrics.dataset_iou(acc) == 1.0
        assert metrics.niou(acc) == 1.0 and metrics.f1(acc) == 1.0

    def test_inconsistent_counts_rejected(self):
        with pytest.raises(ValueError):
            acc_of((3, 2, 5))


def test_brute_force_oracle_on_1000_pairs():
    rng = np.random.default_rng(7)
    preds, targets = map(list, zip(*random_mask_pairs(rng, 1000)))
    rep = metrics.evaluate_masks(preds, targets)
    iou, niou, f1 = reference.metrics(preds, targets)
    assert (rep["iou"], rep["niou"], rep["f1"]) == (iou, niou, f1)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_metric_bounds(seed, n):
    rng = np.random.default_rng(seed)
    preds = rng.random((n, 5, 5)) < rng.random()
    targets = rng.random((n, 5, 5)) < rng.random()
    with np.testing.suppress_warnings() as sup:
        sup.filter(RuntimeWarning)
        rep = metrics.evaluate_masks(preds, targets)
    for k in ("iou", "niou", "f1"):
        assert 0.0 <= rep[k] <= 1.0


@given(st.integers(0, 2**32 - 1))
def test_adding_correct_pixel_never_lowers_iou(seed):
    rng = np.random.default_rng(seed)
    targets = rng.random((3, 6, 6)) < 0.3
    preds = rng.random((3, 6, 6)) < 0.3
    missed = np.argwhere(targets & ~preds)
    if len(missed) == 0:
        return
    before = metrics.evaluate_masks(preds, targets)["iou"]
    preds[tuple(missed[rng.integers(len(missed))])] = True
    assert metrics.evaluate_masks(preds, targets)["iou"] >= before


@given(st.integers(0, 2**32 - 1))
def test_merge_is_order_independent(seed):
    rng = np.random.default_rng(seed)
    a, b = metrics.EvalAccumulator(), metrics.EvalAccumulator()
    a.update(rng.random((3, 4, 4)) < 0.4, rng.random((3, 4, 4)) < 0.4)
    b.update(rng.random((2, 4, 4)) < 0.4, rng.random((2, 4, 4)) < 0.4)
    ab, ba = metrics.summarize(a.merge(b)), metrics.summarize(b.merge(a))
    assert ab == ba


def test_report_files(tmp_path):
    rep = {"iou": 0.25, "niou": 0.5, "f1": 0.75, "n_samples": 4}
    table, kv = metrics.write_report(rep, tmp_path)
    assert table.read_text().splitlines()[0].split("\t") == ["name", "iou", "niou", "f1", "n_samples"]
    assert metrics.read_kv(kv) == rep
