"""KITTI tracking label files: parsing and per-frame grouping.

Label format (whitespace separated, one object per line):
frame, track_id, type, truncated, occluded, alpha, bbox_left, bbox_top,
bbox_right, bbox_bottom, followed by 3D fields this package ignores.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import KittiParseError
from .metrics import Detection

DEFAULT_CLASSES = frozenset({"Car"})


@dataclass
class SequenceLabels:
    """Detections for one sequence, with DontCare regions kept separate."""

    detections: list
    dontcare: list


def parse_kitti_tracking(path, classes=DEFAULT_CLASSES) -> SequenceLabels:
    """Parse one per-sequence label file.

    Lines whose class is not in ``classes`` are dropped; DontCare regions are
    returned separately so the evaluator can suppress false positives inside
    them. Malformed lines raise :class:`KittiParseError` with the line number.
    """
    detections = []
    dontcare = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 10:
                raise KittiParseError(path, lineno,
                                      f"expected >= 10 fields, got {len(parts)}")
            try:
                frame = int(parts[0])
                track_id = int(parts[1])
                label = parts[2]
                bbox = tuple(float(x) for x in parts[6:10])
            except ValueError as exc:
                raise KittiParseError(path, lineno, str(exc)) from exc

            if label == "DontCare":
                try:
                    dontcare.append(Detection(frame=frame, track_id=track_id,
                                              bbox=bbox, class_label=label))
                except ValueError as exc:
                    raise KittiParseError(path, lineno, str(exc)) from exc
                continue
            if label not in classes:
                continue
            try:
                detections.append(Detection(frame=frame, track_id=track_id,
                                            bbox=bbox, class_label=label))
            except ValueError as exc:
                raise KittiParseError(path, lineno, str(exc)) from exc
    return SequenceLabels(detections=detections, dontcare=dontcare)
