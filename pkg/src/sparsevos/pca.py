"""Two-component PCA of encoder pixel features, by power iteration.

Used to eyeball whether the learned key space separates objects from
background: each feature-map cell becomes a point, projected onto the
top two principal directions and tagged fg or bg from the ground truth
label at the cell's center.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .model import STRIDE

PCA_CSV_HEADER = "x,y,label"

_RANK_EPS = 1e-10


def _power_iterate(cov, rng, tol, max_iters):
    v = rng.standard_normal(cov.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(max_iters):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < _RANK_EPS:
            return v, 0.0
        w /= norm
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) <= tol:
            v = w
            break
        v = w
    return v, float(v @ cov @ v)


def pca_top2(points, tol=1e-8, max_iters=1000, rng=None):
    """Top two principal directions of an [N, D] point cloud.

    Returns (directions [2, D], variances [2], projections [N, 2]).
    Rank-deficient clouds (fewer than two directions of spread) are
    rejected.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 2:
        raise ValueError(f"need an [N>=2, D>=2] point matrix, got shape {pts.shape}")
    rng = rng if rng is not None else np.random.default_rng(0)
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    scale = max(1.0, float(np.trace(cov)))

    v1, var1 = _power_iterate(cov, rng, tol, max_iters)
    if var1 <= _RANK_EPS * scale:
        raise ValueError("rank-deficient features: no principal direction with nonzero variance")
    deflated = cov - var1 * np.outer(v1, v1)
    v2, var2 = _power_iterate(deflated, rng, tol, max_iters)
    v2 = v2 - (v2 @ v1) * v1
    norm = np.linalg.norm(v2)
    if norm < _RANK_EPS or var2 <= _RANK_EPS * scale:
        raise ValueError("rank-deficient features: second principal direction has no variance")
    v2 /= norm
    var2 = float(v2 @ cov @ v2)
    directions = np.stack([v1, v2])
    return directions, np.array([var1, var2]), centered @ directions.T


def key_feature_points(model, params, clips, n_frames):
    """Key-encoder cell features with fg/bg tags from label centers."""
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    feats, tags = [], []
    collected = 0
    frame_idx = 0
    while collected < n_frames:
        advanced = False
        for clip in clips:
            if collected >= n_frames:
                break
            if frame_idx >= clip.num_frames:
                continue
            advanced = True
            key = model.encode_key(params, Tensor(clip.frames[frame_idx]))
            c = key.data.shape[0]
            feats.append(key.data.reshape(c, -1).T)
            half = STRIDE // 2
            centers = clip.labels[frame_idx][half::STRIDE, half::STRIDE]
            tags.append((centers > 0).reshape(-1))
            collected += 1
        if not advanced:
            raise ValueError(f"dataset exhausted after {collected} frames, wanted {n_frames}")
        frame_idx += 1
    return np.concatenate(feats), np.concatenate(tags)


def pca_vis(model, params, clips, n_frames, seed=0):
    """Rows of (x, y, tag) for the projected feature cloud."""
    points, fg = key_feature_points(model, params, clips, n_frames)
    _, _, projected = pca_top2(points, rng=np.random.default_rng(seed))
    return [
        (float(x), float(y), "fg" if is_fg else "bg")
        for (x, y), is_fg in zip(projected, fg)
    ]


def write_pca_csv(path, rows):
    lines = [PCA_CSV_HEADER]
    for x, y, tag in rows:
        lines.append(f"{x:.6f},{y:.6f},{tag}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
