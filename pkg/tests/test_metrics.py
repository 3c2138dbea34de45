import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from relightkit.errors import InvalidParameterError
from relightkit.metrics import (
    Detection,
    clear_mot,
    image_quality,
    iou,
    match_frame,
    ssim,
)


def box(l, t, r, b):
    return (float(l), float(t), float(r), float(b))


boxes = st.builds(
    lambda l, t, w, h: box(l, t, l + w, t + h),
    l=st.floats(0, 100), t=st.floats(0, 100),
    w=st.floats(1, 100), h=st.floats(1, 100),
)


class TestIou:
    def test_identical_boxes(self):
        assert iou(box(0, 0, 10, 10), box(0, 0, 10, 10)) == 1.0

    def test_disjoint_boxes(self):
        assert iou(box(0, 0, 10, 10), box(20, 0, 30, 10)) == 0.0
        assert iou(box(0, 0, 10, 10), box(10, 0, 20, 10)) == 0.0  # touching

    def test_half_overlap_analytic(self):
        # 10x10 boxes offset by 5 in x: inter 50, union 150.
        assert iou(box(0, 0, 10, 10), box(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_containment(self):
        assert iou(box(0, 0, 10, 10), box(2, 2, 7, 7)) == pytest.approx(0.25)

    @given(a=boxes, b=boxes)
    def test_symmetric_and_bounded(self, a, b):
        ab = iou(a, b)
        assert ab == pytest.approx(iou(b, a))
        assert 0.0 <= ab <= 1.0


def det(frame, tid, bbox, class_label="Car"):
    return Detection(frame=frame, track_id=tid, bbox=bbox, class_label=class_label)


def brute_force_best(gt, pred, iou_min):
    """Max total IoU over all one-to-one assignments (oracle)."""
    best = 0.0
    idx = range(len(pred))
    for k in range(min(len(gt), len(pred)) + 1):
        for gsub in itertools.combinations(range(len(gt)), k):
            for psub in itertools.permutations(idx, k):
                total = 0.0
                ok = True
                for i, j in zip(gsub, psub):
                    o = iou(gt[i].bbox, pred[j].bbox)
                    if o < iou_min:
                        ok = False
                        break
                    total += o
                if ok:
                    best = max(best, total)
    return best


class TestMatchFrame:
    def test_matches_brute_force_total_iou(self, rng):
        for _ in range(20):
            gt = [det(0, i, box(x, y, x + 10, y + 10))
                  for i, (x, y) in enumerate(rng.uniform(0, 30, (4, 2)))]
            pred = [det(0, 100 + j, box(x, y, x + 10, y + 10))
                    for j, (x, y) in enumerate(rng.uniform(0, 30, (4, 2)))]
            m = match_frame(gt, pred, iou_min=0.3)
            total = sum(o for _, _, o in m.pairs)
            assert total == pytest.approx(brute_force_best(gt, pred, 0.3), abs=1e-9)

    def test_threshold_excludes_weak_pairs(self):
        gt = [det(0, 1, box(0, 0, 10, 10))]
        pred = [det(0, 2, box(8, 0, 18, 10))]  # IoU = 2/18
        m = match_frame(gt, pred, iou_min=0.5)
        assert not m.pairs
        assert m.unmatched_gt == [0] and m.unmatched_pred == [0]

    def test_continuity_keeps_previous_pair(self):
        # Pred 7 overlaps gt less than pred 8, but gt 1 was matched to 7 last
        # frame and the pair still clears the threshold, so it must be kept.
        gt = [det(1, 1, box(0, 0, 10, 10))]
        pred = [det(1, 7, box(2, 0, 12, 10)), det(1, 8, box(0, 0, 10, 10))]
        m = match_frame(gt, pred, iou_min=0.5, prev_matches={1: 7})
        assert len(m.pairs) == 1
        assert pred[m.pairs[0][1]].track_id == 7

    def test_no_continuity_takes_best(self):
        gt = [det(1, 1, box(0, 0, 10, 10))]
        pred = [det(1, 7, box(2, 0, 12, 10)), det(1, 8, box(0, 0, 10, 10))]
        m = match_frame(gt, pred, iou_min=0.5)
        assert pred[m.pairs[0][1]].track_id == 8

    def test_iou_min_validated(self):
        with pytest.raises(InvalidParameterError):
            match_frame([], [], iou_min=0.0)
        with pytest.raises(InvalidParameterError):
            match_frame([], [], iou_min=1.0)


class TestClearMot:
    def perfect(self, frames=10):
        gt = [det(f, 1, box(0, 0, 10, 10)) for f in range(frames)]
        return gt, [det(f, 9, box(0, 0, 10, 10)) for f in range(frames)]

    def test_perfect_tracking_scores_100(self):
        gt, pred = self.perfect()
        r = clear_mot(gt, pred)
        assert r.mota == pytest.approx(100.0)
        assert r.motp == pytest.approx(100.0)
        assert r.moda == pytest.approx(100.0)
        assert r.modp == pytest.approx(100.0)
        assert r.precision == pytest.approx(100.0)
        assert r.recall == pytest.approx(100.0)
        assert (r.tp, r.fp, r.fn, r.idsw) == (10, 0, 0, 0)

    def test_half_missed_gives_mota_50(self):
        gt = [det(f, 1, box(0, 0, 10, 10)) for f in range(10)]
        pred = [det(f, 9, box(0, 0, 10, 10)) for f in range(0, 10, 2)]
        r = clear_mot(gt, pred)
        assert r.mota == pytest.approx(50.0)
        assert r.fn == 5 and r.fp == 0

    def test_one_false_positive(self):
        gt, pred = self.perfect()
        pred.append(det(3, 99, box(50, 50, 60, 60)))
        r = clear_mot(gt, pred)
        assert r.fp == 1
        assert r.mota == pytest.approx(90.0)
        assert r.moda == pytest.approx(90.0)

    def test_identity_switch_counted(self):
        gt = [det(f, 1, box(0, 0, 10, 10)) for f in range(4)]
        pred = [det(f, 7 if f < 2 else 8, box(0, 0, 10, 10)) for f in range(4)]
        r = clear_mot(gt, pred)
        assert r.idsw == 1
        assert r.mota == pytest.approx(75.0)
        assert r.moda == pytest.approx(100.0)  # MODA ignores switches

    def test_motp_is_mean_matched_iou(self):
        # Constant offset: every matched pair has IoU 1/3.
        gt = [det(f, 1, box(0, 0, 10, 10)) for f in range(5)]
        pred = [det(f, 9, box(5, 0, 15, 10)) for f in range(5)]
        r = clear_mot(gt, pred, iou_min=0.2)
        assert r.motp == pytest.approx(100.0 / 3.0)
        assert r.modp == pytest.approx(100.0 / 3.0)

    def test_dontcare_suppresses_false_positives(self):
        gt, pred = self.perfect()
        pred.append(det(3, 99, box(50, 50, 60, 60)))
        dc = [det(3, 0, box(49, 49, 61, 61), class_label="DontCare")]
        r = clear_mot(gt, pred, dontcare=dc)
        assert r.fp == 0
        assert r.mota == pytest.approx(100.0)

    def test_dontcare_does_not_hide_matched_preds(self):
        gt, pred = self.perfect()
        dc = [det(f, 0, box(0, 0, 10, 10), class_label="DontCare")
              for f in range(10)]
        r = clear_mot(gt, pred, dontcare=dc)
        assert r.tp == 10

    def test_input_order_invariance(self, rng):
        gt = [det(f, 1 + (f % 2), box(0, 0, 10, 10)) for f in range(8)]
        pred = [det(f, 5, box(1, 0, 11, 10)) for f in range(8)]
        pred += [det(f, 6, box(30, 30, 40, 40)) for f in range(4)]
        a = clear_mot(gt, pred)
        shuffled_gt, shuffled_pred = list(gt), list(pred)
        rng.shuffle(shuffled_gt)
        rng.shuffle(shuffled_pred)
        b = clear_mot(shuffled_gt, shuffled_pred)
        assert a.to_dict() == b.to_dict()

    def test_empty_ground_truth_raises(self):
        with pytest.raises(InvalidParameterError):
            clear_mot([], [det(0, 1, box(0, 0, 10, 10))])

    def test_no_predictions(self):
        gt = [det(f, 1, box(0, 0, 10, 10)) for f in range(4)]
        r = clear_mot(gt, [])
        assert r.mota == pytest.approx(0.0)
        assert not r.precision_defined
        assert r.recall == pytest.approx(0.0)

    def test_mota_can_go_negative(self):
        gt = [det(0, 1, box(0, 0, 10, 10))]
        pred = [det(0, j, box(50 + 20 * j, 0, 60 + 20 * j, 10)) for j in range(3)]
        r = clear_mot(gt, pred)
        assert r.mota == pytest.approx(-300.0)

    def test_degenerate_bbox_rejected(self):
        with pytest.raises(InvalidParameterError):
            det(0, 1, box(10, 0, 10, 10))
        with pytest.raises(InvalidParameterError):
            Detection(frame=-1, track_id=0, bbox=box(0, 0, 1, 1))


class TestImageQuality:
    def test_identical_images(self, rng):
        img = rng.uniform(0, 1, (32, 32, 3))
        r = image_quality(img, img)
        assert r.rmse == 0.0
        assert r.psnr == math.inf
        assert r.ssim == pytest.approx(1.0)

    def test_known_constant_offset(self):
        a = np.full((16, 16, 3), 100, dtype=np.uint8)
        b = np.full((16, 16, 3), 110, dtype=np.uint8)
        r = image_quality(a, b)
        assert r.rmse == pytest.approx(10.0)
        assert r.psnr == pytest.approx(20 * math.log10(25.5))

    def test_float_and_uint8_agree(self, rng):
        a = rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)
        b = rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)
        ra = image_quality(a, b)
        rb = image_quality(a / 255.0, b / 255.0)
        assert ra.rmse == pytest.approx(rb.rmse)
        assert ra.ssim == pytest.approx(rb.ssim, abs=1e-9)

    def test_ssim_against_reference_implementation(self, rng):
        skimage_metrics = pytest.importorskip("skimage.metrics")
        a = rng.integers(0, 256, (64, 64), dtype=np.uint8)
        b = np.clip(a.astype(int) + rng.integers(-30, 30, a.shape), 0, 255).astype(np.uint8)
        expected = skimage_metrics.structural_similarity(
            a, b, data_range=255, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False)
        assert ssim(a, b) == pytest.approx(expected, abs=2e-3)

    def test_ssim_penalizes_structure_loss_more_than_offset(self, rng):
        base = rng.integers(60, 196, (48, 48), dtype=np.uint8)
        offset = np.clip(base + 10, 0, 255).astype(np.uint8)
        scrambled = rng.permutation(base.ravel()).reshape(base.shape)
        assert ssim(base, offset) > ssim(base, scrambled)

    def test_shape_mismatch_raises(self):
        with pytest.raises(InvalidParameterError):
            image_quality(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))

    def test_report_serializes_infinity(self):
        img = np.zeros((8, 8, 3))
        d = image_quality(img, img).to_dict()
        assert d["PSNR"] == "inf"
