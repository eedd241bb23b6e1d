"""Ensemble averaging, binarization, confusion counts, and the metrics."""

import itertools

import numpy as np
import pytest

from lumenseg.ensemble import (
    ABLATION_SUBSETS,
    ConfusionCounts,
    ablation_eval,
    binarize,
    confusion,
    dsc,
    ensemble_average,
    evaluate_maps,
    precision,
    recall,
)
from lumenseg.errors import ConfigError, ShapeError
from oracles import (
    confusion_loops,
    dsc_from_counts,
    mean_maps_loops,
    precision_from_counts,
    recall_from_counts,
)


class TestEnsembleAverage:
    def test_four_member_mean(self):
        maps = [np.full((2, 2), v) for v in (0.2, 0.4, 0.6, 0.8)]
        assert np.allclose(ensemble_average(maps), 0.5)

    def test_single_member_identity(self):
        m = np.random.default_rng(0).random((4, 4))
        assert np.array_equal(ensemble_average([m]), m)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        maps = [rng.random((5, 7)) for _ in range(3)]
        got = ensemble_average(maps)
        want = mean_maps_loops(maps)
        assert np.abs(got - want).max() < 1e-12

    def test_permutation_invariant(self):
        # equal up to summation-order rounding (addition is not associative)
        rng = np.random.default_rng(2)
        maps = [rng.random((3, 3)) for _ in range(4)]
        a = ensemble_average(maps)
        for order in ([3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]):
            b = ensemble_average([maps[i] for i in order])
            assert np.abs(a - b).max() < 1e-12

    def test_idempotent_on_identical_inputs(self):
        m = np.random.default_rng(3).random((3, 3))
        assert np.allclose(ensemble_average([m, m, m]), m)

    def test_bounded_by_min_max(self):
        rng = np.random.default_rng(4)
        maps = [rng.random((6, 6)) for _ in range(5)]
        fused = ensemble_average(maps)
        stack = np.stack(maps)
        assert np.all(fused >= stack.min(axis=0) - 1e-15)
        assert np.all(fused <= stack.max(axis=0) + 1e-15)

    def test_errors(self):
        with pytest.raises(ConfigError):
            ensemble_average([])
        with pytest.raises(ShapeError):
            ensemble_average([np.zeros((2, 2)), np.zeros((3, 2))])


class TestBinarize:
    def test_boundary_is_foreground(self):
        assert binarize(np.array([[0.5]]))[0, 0] == 1

    def test_all_zero_gives_empty(self):
        assert binarize(np.zeros((3, 3))).sum() == 0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(5)
        m = rng.random((8, 8))
        prev = binarize(m, 0.1)
        for th in (0.3, 0.5, 0.7, 0.9):
            cur = binarize(m, th)
            assert np.all(cur <= prev)
            prev = cur

    def test_threshold_validation(self):
        with pytest.raises(ConfigError):
            binarize(np.zeros((2, 2)), 0.0)
        with pytest.raises(ConfigError):
            binarize(np.zeros((2, 2)), 1.5)


class TestConfusion:
    def test_equal_masks(self):
        m = (np.random.default_rng(6).random((4, 4)) > 0.5).astype(np.uint8)
        c = confusion(m, m)
        assert c.fp == 0 and c.fn == 0
        assert c.tp == int(m.sum())

    def test_complement_masks(self):
        m = (np.random.default_rng(7).random((4, 4)) > 0.5).astype(np.uint8)
        c = confusion(m, 1 - m)
        assert c.tp == 0 and c.tn == 0

    def test_total_is_pixel_count(self):
        rng = np.random.default_rng(8)
        a = (rng.random((5, 9)) > 0.3).astype(np.uint8)
        b = (rng.random((5, 9)) > 0.7).astype(np.uint8)
        assert confusion(a, b).total == 45

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        a = (rng.random((16, 16)) > 0.4).astype(np.uint8)
        b = (rng.random((16, 16)) > 0.6).astype(np.uint8)
        c = confusion(a, b)
        assert (c.tp, c.fp, c.fn, c.tn) == confusion_loops(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMetrics:
    def test_formula_arithmetic(self):
        c = ConfusionCounts(tp=2, fp=1, fn=1, tn=0)
        assert precision(c) == pytest.approx(2 / 3)
        assert recall(c) == pytest.approx(2 / 3)
        assert dsc(c) == pytest.approx(2 / 3)

    def test_both_empty_convention(self):
        c = ConfusionCounts(tp=0, fp=0, fn=0, tn=9)
        assert dsc(c) == precision(c) == recall(c) == 1.0

    def test_one_sided_empty_convention(self):
        pred_empty = ConfusionCounts(tp=0, fp=0, fn=3, tn=6)
        assert dsc(pred_empty) == 0.0
        assert precision(pred_empty) == 0.0
        assert recall(pred_empty) == 0.0
        truth_empty = ConfusionCounts(tp=0, fp=3, fn=0, tn=6)
        assert dsc(truth_empty) == 0.0
        assert precision(truth_empty) == 0.0
        assert recall(truth_empty) == 0.0

    def test_exhaustive_2x2_against_loops(self):
        for pred_bits in itertools.product([0, 1], repeat=4):
            for truth_bits in itertools.product([0, 1], repeat=4):
                pred = np.array(pred_bits, dtype=np.uint8).reshape(2, 2)
                truth = np.array(truth_bits, dtype=np.uint8).reshape(2, 2)
                c = confusion(pred, truth)
                tp, fp, fn, _ = confusion_loops(pred, truth)
                assert dsc(c) == dsc_from_counts(tp, fp, fn)
                assert precision(c) == precision_from_counts(tp, fp, fn)
                assert recall(c) == recall_from_counts(tp, fp, fn)

    def test_dsc_symmetric_prec_recall_dual(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            a = (rng.random((6, 6)) > 0.5).astype(np.uint8)
            b = (rng.random((6, 6)) > 0.5).astype(np.uint8)
            assert dsc(confusion(a, b)) == dsc(confusion(b, a))
            assert precision(confusion(a, b)) == recall(confusion(b, a))


class TestAblation:
    def _maps(self, n=6, shape=(8, 8), seed=11):
        rng = np.random.default_rng(seed)
        truths = (rng.random((n,) + shape) > 0.6).astype(np.uint8)
        members = {
            v: np.clip(truths + rng.normal(0, 0.3, truths.shape), 0, 1)
            for v in ("m1", "m2", "M1", "M2")
        }
        return members, truths

    def test_five_rows_in_layout_order(self):
        members, truths = self._maps()
        rows, groups = ablation_eval(members, truths)
        assert len(rows) == 5
        assert [r["ensemble"] for r in rows] == [
            "(m1,m2)", "(M1,M2)", "(M1,m1)", "(M2,m2)", "(m1,m2,M1,M2)",
        ]
        assert set(rows[0]) == {"ensemble", "dsc", "precision", "recall"}
        for label, gr in groups.items():
            assert len(gr) == truths.shape[0]

    def test_singleton_subset_equals_model_metrics(self):
        members, truths = self._maps()
        rows, _ = ablation_eval(members, truths, subsets=(("m1",),))
        _, summary = evaluate_maps(members["m1"], truths)
        assert rows[0]["dsc"] == pytest.approx(summary["dsc"])
        assert rows[0]["precision"] == pytest.approx(summary["precision"])

    def test_missing_model_is_config_error(self):
        members, truths = self._maps()
        del members["M2"]
        with pytest.raises(ConfigError, match="M2"):
            ablation_eval(members, truths)

    def test_subset_layout_matches_protocol(self):
        assert ABLATION_SUBSETS == (
            ("m1", "m2"), ("M1", "M2"), ("M1", "m1"), ("M2", "m2"),
            ("m1", "m2", "M1", "M2"),
        )


def test_bench_rejects_empty():
    from lumenseg.benchmark import bench_model
    from lumenseg.models import build_model, default_config

    model = build_model(default_config("m2", size=32), seed=0)
    with pytest.raises(ConfigError):
        bench_model("m2", model, [])
