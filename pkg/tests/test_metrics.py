import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auxcount.metrics import MetricsReport, game, mae_rmse, mask_iou, tile_bounds
from oracles import game_loops


class TestMaeRmse:
    def test_basic_arithmetic(self):
        mae, rmse = mae_rmse([(3, 4), (5, 4)])
        assert mae == 1.0
        assert rmse == 1.0

    def test_perfect(self):
        assert mae_rmse([(2.0, 2.0), (7.5, 7.5)]) == (0.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mae_rmse([])

    def test_random_sample_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        pairs = [(float(p), float(a)) for p, a in rng.uniform(0, 100, size=(20, 2))]
        mae, rmse = mae_rmse(pairs)
        abs_sum = 0.0
        sq_sum = 0.0
        for p, a in pairs:
            abs_sum += abs(p - a)
            sq_sum += (p - a) ** 2
        assert mae == pytest.approx(abs_sum / 20, abs=1e-9)
        assert rmse == pytest.approx((sq_sum / 20) ** 0.5, abs=1e-9)

    def test_rmse_at_least_mae(self):
        rng = np.random.default_rng(1)
        pairs = rng.uniform(0, 50, size=(30, 2))
        mae, rmse = mae_rmse([tuple(p) for p in pairs])
        assert rmse >= mae >= 0


class TestGame:
    def test_level_zero_equals_mae(self):
        rng = np.random.default_rng(2)
        preds = [rng.uniform(0, 1, size=(12, 16)) for _ in range(5)]
        gts = [rng.uniform(0, 1, size=(12, 16)) for _ in range(5)]
        mae, _ = mae_rmse([(p.sum(), g.sum()) for p, g in zip(preds, gts)])
        assert game(preds, gts, 0) == mae

    def test_perfect_prediction_zero_for_all_levels(self):
        rng = np.random.default_rng(3)
        maps = [rng.uniform(0, 1, size=(16, 16)) for _ in range(3)]
        for level in range(4):
            assert game(maps, [m.copy() for m in maps], level) == 0.0

    def test_4x4_level_one_hand_computed(self):
        pred = np.arange(16, dtype=np.float64).reshape(4, 4)
        gt = np.zeros((4, 4))
        gt[2:, 2:] = 5.0
        # quadrant sums: pred {10, 18, 42, 50}; gt {0, 0, 0, 20}
        expected = abs(10 - 0) + abs(18 - 0) + abs(42 - 0) + abs(50 - 20)
        assert game([pred], [gt], 1) == expected

    def test_matches_loop_oracle_including_ragged_tiles(self):
        rng = np.random.default_rng(4)
        pred = rng.uniform(0, 1, size=(11, 13))  # not divisible by 4
        gt = rng.uniform(0, 1, size=(11, 13))
        for level in (0, 1, 2):
            assert game([pred], [gt], level) == pytest.approx(
                game_loops(pred, gt, level), abs=1e-9
            )

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            game([np.zeros((4, 4))], [np.zeros((4, 4))], 3)

    def test_negative_level_rejected(self):
        with pytest.raises(ValueError):
            game([np.zeros((4, 4))], [np.zeros((4, 4))], -1)

    def test_tile_bounds_cover_without_overlap(self):
        for size in (7, 16, 33):
            for parts in (1, 2, 4, 8):
                if size < parts:
                    continue
                bounds = tile_bounds(size, parts)
                assert bounds[0] == 0 and bounds[-1] == size
                assert all(b2 > b1 for b1, b2 in zip(bounds, bounds[1:]))

    @given(st.integers(0, 3), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_level(self, level, seed):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0, 1, size=(16, 16))
        gt = rng.uniform(0, 1, size=(16, 16))
        coarse = game([pred], [gt], level)
        fine = game([pred], [gt], level + 1)
        assert fine >= coarse - 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        preds = [rng.uniform(0, 1, size=(8, 8)) for _ in range(6)]
        gts = [rng.uniform(0, 1, size=(8, 8)) for _ in range(6)]
        order = rng.permutation(6)
        for level in (0, 2):
            assert game(preds, gts, level) == pytest.approx(
                game([preds[i] for i in order], [gts[i] for i in order], level), abs=1e-12
            )
        mae_a = mae_rmse([(p.sum(), g.sum()) for p, g in zip(preds, gts)])
        mae_b = mae_rmse([(preds[i].sum(), gts[i].sum()) for i in order])
        assert mae_a == pytest.approx(mae_b, abs=1e-12)


class TestMaskIou:
    def test_identical_masks(self):
        mask = np.zeros((8, 8), dtype=np.int64)
        mask[2:5, 2:5] = 1
        assert mask_iou(mask, mask.copy()) == 1.0

    def test_disjoint_nonempty_masks(self):
        a = np.zeros((8, 8), dtype=np.int64)
        b = np.zeros((8, 8), dtype=np.int64)
        a[:2] = 1
        b[6:] = 1
        assert mask_iou(a, b, classes=[1]) == 0.0

    def test_random_binary_matches_set_oracle(self):
        rng = np.random.default_rng(6)
        pred = rng.integers(0, 2, size=(8, 8))
        gt = rng.integers(0, 2, size=(8, 8))
        ious = []
        for c in (0, 1):
            p = {(i, j) for i in range(8) for j in range(8) if pred[i, j] == c}
            g = {(i, j) for i in range(8) for j in range(8) if gt[i, j] == c}
            if p | g:
                ious.append(len(p & g) / len(p | g))
        assert mask_iou(pred, gt, classes=[0, 1]) == pytest.approx(
            sum(ious) / len(ious), abs=1e-9
        )

    def test_probability_inputs_thresholded(self):
        prob = np.array([[0.2, 0.8], [0.6, 0.4]], dtype=np.float64)
        gt = np.array([[0, 1], [1, 0]], dtype=np.int64)
        assert mask_iou(prob, gt, classes=[0, 1]) == 1.0

    def test_multiclass_argmax(self):
        prob = np.zeros((3, 2, 2), dtype=np.float64)
        prob[0, 0, 0] = 1.0
        prob[1, 0, 1] = 1.0
        prob[2, 1, :] = 1.0
        gt = np.array([[1, 2], [3, 3]], dtype=np.int64)
        assert mask_iou(prob, gt, classes=[1, 2, 3]) == 1.0

    def test_empty_union_classes_excluded(self):
        pred = np.ones((4, 4), dtype=np.int64)
        gt = np.ones((4, 4), dtype=np.int64)
        assert mask_iou(pred, gt, classes=[1, 2]) == 1.0  # class 2 skipped

    def test_all_unions_empty_rejected(self):
        pred = np.zeros((4, 4), dtype=np.int64)
        gt = np.zeros((4, 4), dtype=np.int64)
        with pytest.raises(ValueError, match="empty"):
            mask_iou(pred, gt, classes=[3, 4])


class TestReport:
    def test_round_trip(self, tmp_path):
        report = MetricsReport(
            mae=1.5, rmse=2.0, game={0: 1.5, 1: 2.5}, iou_cs=0.8, iou_ds=None, n_images=7
        )
        path = report.to_json(tmp_path / "report.json")
        back = MetricsReport.from_json(path)
        assert back == report

    def test_table_mentions_all_metrics(self):
        report = MetricsReport(mae=1.0, rmse=2.0, game={0: 1.0}, iou_cs=0.5, iou_ds=0.4, n_images=3)
        text = report.table()
        for token in ("MAE", "RMSE", "GAME(0)", "IoU"):
            assert token in text
