"""CLEAR-MOT tracking metrics and pixel image-quality metrics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import linear_sum_assignment

from .errors import InvalidParameterError


@dataclass(frozen=True)
class Detection:
    """One labeled box in one frame of a tracking sequence."""

    frame: int
    track_id: int
    bbox: tuple  # (left, top, right, bottom) in pixels
    class_label: str = "Car"
    score: float | None = None

    def __post_init__(self):
        l, t, r, b = self.bbox
        if r <= l or b <= t:
            raise InvalidParameterError(f"degenerate bbox {self.bbox}")
        if self.frame < 0:
            raise InvalidParameterError("frame index must be >= 0")


def iou(a, b) -> float:
    """Intersection-over-union of two (l, t, r, b) boxes."""
    al, at, ar, ab = a
    bl, bt, br, bb = b
    iw = min(ar, br) - max(al, bl)
    ih = min(ab, bb) - max(at, bt)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ar - al) * (ab - at) + (br - bl) * (bb - bt) - inter
    return inter / union


@dataclass
class FrameMatching:
    pairs: list          # (gt_index, pred_index, iou)
    unmatched_gt: list   # gt indices
    unmatched_pred: list # pred indices


def match_frame(gt: list, pred: list, iou_min: float = 0.5,
                prev_matches: dict | None = None) -> FrameMatching:
    """One-to-one matching maximizing total IoU above the threshold.

    ``prev_matches`` maps gt track id -> pred track id; still-valid pairs from
    the previous frame are kept before optimally assigning the remainder
    (CLEAR continuity rule).
    """
    if not 0.0 < iou_min < 1.0:
        raise InvalidParameterError(f"iou_min must be in (0, 1), got {iou_min}")

    pairs = []
    gt_left = list(range(len(gt)))
    pred_left = list(range(len(pred)))

    if prev_matches:
        pred_by_id = {p.track_id: j for j, p in enumerate(pred)}
        for i in list(gt_left):
            j = pred_by_id.get(prev_matches.get(gt[i].track_id))
            if j is not None and j in pred_left:
                o = iou(gt[i].bbox, pred[j].bbox)
                if o >= iou_min:
                    pairs.append((i, j, o))
                    gt_left.remove(i)
                    pred_left.remove(j)

    if gt_left and pred_left:
        cost = np.zeros((len(gt_left), len(pred_left)))
        for a, i in enumerate(gt_left):
            for b, j in enumerate(pred_left):
                o = iou(gt[i].bbox, pred[j].bbox)
                cost[a, b] = -o if o >= iou_min else 0.0
        rows, cols = linear_sum_assignment(cost)
        taken_gt, taken_pred = set(), set()
        for a, b in zip(rows, cols):
            if cost[a, b] < 0:
                i, j = gt_left[a], pred_left[b]
                pairs.append((i, j, -cost[a, b]))
                taken_gt.add(i)
                taken_pred.add(j)
        gt_left = [i for i in gt_left if i not in taken_gt]
        pred_left = [j for j in pred_left if j not in taken_pred]

    return FrameMatching(pairs=pairs, unmatched_gt=gt_left, unmatched_pred=pred_left)


@dataclass
class MotReport:
    """CLEAR-MOT scores; percentage fields are on the 0-100 scale."""

    mota: float
    motp: float
    moda: float
    modp: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    idsw: int
    gt: int
    precision_defined: bool = True

    def to_dict(self) -> dict:
        return {
            "MOTA": self.mota, "MOTP": self.motp,
            "MODA": self.moda, "MODP": self.modp,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "TP": self.tp, "FP": self.fp, "FN": self.fn,
            "IDSW": self.idsw, "GT": self.gt,
            "precision_defined": self.precision_defined,
        }


def _by_frame(detections):
    frames = defaultdict(list)
    for d in detections:
        frames[d.frame].append(d)
    return frames


def clear_mot(gt_seq: list, pred_seq: list, iou_min: float = 0.5,
              dontcare: list | None = None) -> MotReport:
    """Accumulate CLEAR-MOT counts over a sequence and score them.

    Unmatched predictions overlapping a DontCare region with IoU > 0.5 are
    excluded from the false-positive count (KITTI convention).
    """
    gt_frames = _by_frame(gt_seq)
    pred_frames = _by_frame(pred_seq)
    dc_frames = _by_frame(dontcare or [])

    total_gt = len(gt_seq)
    if total_gt == 0:
        raise InvalidParameterError("ground truth is empty; MOTA undefined")

    tp = fp = fn = idsw = 0
    iou_sum = 0.0
    modp_frames = []
    last_match: dict = {}     # gt track id -> pred track id of last association
    prev_matches: dict = {}   # carried frame to frame for continuity

    for frame in sorted(set(gt_frames) | set(pred_frames)):
        gts = gt_frames.get(frame, [])
        preds = pred_frames.get(frame, [])
        m = match_frame(gts, preds, iou_min=iou_min, prev_matches=prev_matches)

        frame_ious = []
        new_matches = {}
        for i, j, o in m.pairs:
            tp += 1
            iou_sum += o
            frame_ious.append(o)
            gid, pid = gts[i].track_id, preds[j].track_id
            if gid in last_match and last_match[gid] != pid:
                idsw += 1
            last_match[gid] = pid
            new_matches[gid] = pid
        prev_matches = new_matches

        fn += len(m.unmatched_gt)
        for j in m.unmatched_pred:
            suppressed = any(iou(preds[j].bbox, dc.bbox) > 0.5
                             for dc in dc_frames.get(frame, []))
            if not suppressed:
                fp += 1

        if frame_ious:
            modp_frames.append(float(np.mean(frame_ious)))

    mota = 100.0 * (1.0 - (fn + fp + idsw) / total_gt)
    moda = 100.0 * (1.0 - (fn + fp) / total_gt)
    motp = 100.0 * (iou_sum / tp) if tp else 0.0
    modp = 100.0 * float(np.mean(modp_frames)) if modp_frames else 0.0
    precision_defined = (tp + fp) > 0
    precision = 100.0 * tp / (tp + fp) if precision_defined else 0.0
    recall = 100.0 * tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0

    return MotReport(mota=mota, motp=motp, moda=moda, modp=modp,
                     precision=precision, recall=recall, f1=f1,
                     tp=tp, fp=fp, fn=fn, idsw=idsw, gt=total_gt,
                     precision_defined=precision_defined)


@dataclass
class IqReport:
    """Pixel image-quality scores on the 8-bit scale."""

    rmse: float
    psnr: float   # dB; +inf for identical images
    ssim: float

    def to_dict(self) -> dict:
        return {"RMSE": self.rmse,
                "PSNR": self.psnr if math.isfinite(self.psnr) else "inf",
                "SSIM": self.ssim}


def _to_luma255(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if img.dtype != np.uint8 and arr.size and arr.max() <= 1.0:
        arr = arr * 255.0
    if arr.ndim == 3:
        arr = arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114
    return arr


def ssim(ref: np.ndarray, test: np.ndarray) -> float:
    """Mean structural similarity on luma, 11x11 Gaussian window (sigma 1.5)."""
    x = _to_luma255(ref)
    y = _to_luma255(test)
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    # truncate 3.5 at sigma 1.5 gives the standard 11-tap window
    blur = lambda a: gaussian_filter(a, sigma=1.5, truncate=3.5)
    mx, my = blur(x), blur(y)
    mxx, myy, mxy = blur(x * x), blur(y * y), blur(x * y)
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def image_quality(ref: np.ndarray, test: np.ndarray) -> IqReport:
    """RMSE/PSNR over all channels plus SSIM on luma, 0-255 scale."""
    if ref.shape != test.shape:
        raise InvalidParameterError(
            f"image dimensions differ: {ref.shape} vs {test.shape}")
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if ref.dtype != np.uint8 and a.max() <= 1.0 and b.max() <= 1.0:
        a, b = a * 255.0, b * 255.0
    rmse = float(np.sqrt(np.mean((a - b) ** 2)))
    psnr = math.inf if rmse == 0 else 20.0 * math.log10(255.0 / rmse)
    return IqReport(rmse=rmse, psnr=psnr, ssim=ssim(ref, test))
