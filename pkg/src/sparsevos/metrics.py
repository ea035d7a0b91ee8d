"""Region and contour scoring for predicted label maps.

J is plain intersection-over-union of an object's binary plane. F scores
boundary agreement: boundary pixels are object pixels touching the
outside (or the image border), matched within a Chebyshev tolerance
radius. G averages the two aggregates. Scores are comparable only within
this codebase; the tolerance radius is fixed at one pixel to suit small
frames.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _binary_plane(mask, object_id):
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {m.shape}")
    return m == object_id


def region_j(pred, gt, object_id):
    p = _binary_plane(pred, object_id)
    g = _binary_plane(gt, object_id)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(p, g).sum())
    return inter / union


def boundary_pixels(plane):
    """Object pixels with a 4-neighbor outside the object or on the border.

    Zero padding makes border object pixels count as boundary.
    """
    padded = np.pad(plane, 1)
    interior = (
        padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return plane & ~interior


def _dilate_chebyshev(plane, radius):
    out = np.zeros_like(plane)
    h, w = plane.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ys = slice(max(0, dy), min(h, h + dy))
            xs = slice(max(0, dx), min(w, w + dx))
            ys_src = slice(max(0, -dy), min(h, h - dy))
            xs_src = slice(max(0, -dx), min(w, w - dx))
            out[ys, xs] |= plane[ys_src, xs_src]
    return out


def contour_f(pred, gt, object_id, tolerance_radius=1):
    p = _binary_plane(pred, object_id)
    g = _binary_plane(gt, object_id)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    pb = boundary_pixels(p)
    gb = boundary_pixels(g)
    np_b = int(pb.sum())
    ng_b = int(gb.sum())
    if np_b == 0 and ng_b == 0:
        return 1.0
    if np_b == 0 or ng_b == 0:
        return 0.0
    g_reach = _dilate_chebyshev(gb, tolerance_radius)
    p_reach = _dilate_chebyshev(pb, tolerance_radius)
    precision = int((pb & g_reach).sum()) / np_b
    recall = int((gb & p_reach).sum()) / ng_b
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class EvalResult:
    rows: list = field(default_factory=list)
    per_object_j: dict = field(default_factory=dict)
    per_object_f: dict = field(default_factory=dict)
    mean_j: float = 0.0
    mean_f: float = 0.0

    @property
    def g(self):
        return 0.5 * (self.mean_j + self.mean_f)


def evaluate_predictions(items, tolerance_radius=1):
    """Score (clip, predicted label maps) pairs.

    The reference frame 0 is given to the predictor, so frames 1..T-1 are
    scored. Per-object J/F are means over scored frames; aggregates are
    flat means over (video, object) pairs.
    """
    result = EvalResult()
    for clip, pred_labels in items:
        if clip.num_objects < 1:
            raise ValueError(f"clip {clip.id} has no objects to score")
        pred_labels = np.asarray(pred_labels)
        if pred_labels.shape != clip.labels.shape:
            raise ValueError(
                f"clip {clip.id}: predictions shape {pred_labels.shape} != labels shape {clip.labels.shape}"
            )
        for obj in range(1, clip.num_objects + 1):
            js = []
            fs = []
            for t in range(1, clip.num_frames):
                j = region_j(pred_labels[t], clip.labels[t], obj)
                f = contour_f(pred_labels[t], clip.labels[t], obj, tolerance_radius)
                js.append(j)
                fs.append(f)
                result.rows.append((clip.id, obj, t, j, f))
            result.per_object_j[(clip.id, obj)] = float(np.mean(js))
            result.per_object_f[(clip.id, obj)] = float(np.mean(fs))
    if result.per_object_j:
        result.mean_j = float(np.mean(list(result.per_object_j.values())))
        result.mean_f = float(np.mean(list(result.per_object_f.values())))
    return result


def evaluate_dataset(predictor, clips, tolerance_radius=1):
    """Run a sequence predictor over clips and score it.

    ``predictor`` maps a clip to a [T,H,W] label-map array; frame 0 of the
    output is ignored by scoring (it is the given reference).
    """
    return evaluate_predictions(
        ((clip, predictor(clip)) for clip in clips),
        tolerance_radius=tolerance_radius,
    )


def write_eval_csv(result, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "object_id", "frame", "j", "f"])
        for vid, obj, frame, j, f in result.rows:
            writer.writerow([vid, obj, frame, f"{j:.6f}", f"{f:.6f}"])
        writer.writerow(["aggregate", "all", "all", f"{result.mean_j:.6f}", f"{result.mean_f:.6f}"])
