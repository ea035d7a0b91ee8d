"""Pseudo-label bank: construction, per-pixel updates, persistence.

The bank stores one hard label map per frame per video. Labeled frames
keep their ground truth forever; unlabeled frames start from the
prediction propagated out of the nearest labeled frame (ties to the
earlier one) and can later be overwritten pixel-wise by sufficiently
confident phase-2 predictions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .model import probmap_to_labels

BANK_MAGIC = b"PLBK"
BANK_VERSION = 1

PROV_GROUND_TRUTH = 0
PROV_PSEUDO = 1
PROV_UPDATED = 2

_PROV_NAMES = {
    PROV_GROUND_TRUTH: "ground_truth",
    PROV_PSEUDO: "pseudo",
    PROV_UPDATED: "updated_in_phase2",
}


@dataclass
class BankUpdateRule:
    tau2: float = 0.99

    def validate(self):
        if not 0.0 < self.tau2 <= 1.0:
            raise ValueError(f"tau2 must be in (0,1], got {self.tau2}")


@dataclass
class BankFrame:
    labels: np.ndarray
    provenance: int
    source: int
    update_count: int = 0


@dataclass
class PseudoLabelBank:
    videos: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def frame(self, video_id, t):
        return self.videos[video_id][t]

    def labeled_indices(self, video_id):
        return [t for t, f in enumerate(self.videos[video_id]) if f.provenance == PROV_GROUND_TRUTH]


def _nearest_source(t, sources):
    # ties break toward the earlier frame
    return min(sources, key=lambda s: (abs(t - s), s))


def build_bank(model, params, clips, split, mode="bidirectional"):
    """Propagate labels from each clip's labeled frames into a full bank.

    Bidirectional: each unlabeled frame takes the prediction from the
    nearest labeled frame, walking forward or backward as needed.
    Unidirectional: only forward walks; frames before the first labeled
    frame fall back to a copy of its ground truth, counted in stats.
    """
    if mode not in ("bidirectional", "unidirectional"):
        raise ValueError(f"unknown bank mode {mode!r}")
    bank = PseudoLabelBank()
    fallback = 0
    for clip in clips:
        if clip.id not in split:
            raise ValueError(f"clip {clip.id} missing from split")
        sources = tuple(split[clip.id])
        if len(sources) < 2 or any(not 0 <= s < clip.num_frames for s in sources) \
                or any(a >= b for a, b in zip(sources, sources[1:])):
            raise ValueError(f"clip {clip.id}: bad split indices {sources}")
        preds = {}

        def walk(r, direction):
            for t, prob in model.predict_sequence(
                params, clip.frames, r, clip.labels[r], clip.num_objects, direction
            ):
                preds[(r, t)] = probmap_to_labels(prob)

        for r in sources:
            if mode == "bidirectional":
                walk(r, "backward")
            walk(r, "forward")
        frames = []
        for t in range(clip.num_frames):
            if t in sources:
                frames.append(BankFrame(clip.labels[t].copy(), PROV_GROUND_TRUTH, t))
                continue
            if mode == "bidirectional":
                src = _nearest_source(t, sources)
            else:
                below = [s for s in sources if s < t]
                if not below:
                    # No labeled frame at or before t; degenerate fallback.
                    frames.append(BankFrame(clip.labels[sources[0]].copy(), PROV_PSEUDO, sources[0]))
                    fallback += 1
                    continue
                src = max(below)
            frames.append(BankFrame(preds[(src, t)].copy(), PROV_PSEUDO, src))
        bank.videos[clip.id] = frames
    bank.stats = {"mode": mode, "fallback_frames": fallback}
    return bank


def make_ground_truth_bank(clips, split):
    """Bank whose pseudo frames are the exact ground truth (test scaffolding)."""
    bank = PseudoLabelBank()
    for clip in clips:
        sources = tuple(split[clip.id])
        frames = []
        for t in range(clip.num_frames):
            if t in sources:
                frames.append(BankFrame(clip.labels[t].copy(), PROV_GROUND_TRUTH, t))
            else:
                frames.append(BankFrame(clip.labels[t].copy(), PROV_PSEUDO, _nearest_source(t, sources)))
        bank.videos[clip.id] = frames
    bank.stats = {"mode": "ground-truth", "fallback_frames": 0}
    return bank


def dynamic_update(bank, video_id, t, prob, rule):
    """Overwrite pixels whose prediction confidence reaches tau2.

    Returns how many stored label values actually changed; the frame's
    update counter moves only on real changes, so reapplying the same
    prediction is a no-op.
    """
    rule.validate()
    frame = bank.frame(video_id, t)
    if frame.provenance == PROV_GROUND_TRUTH:
        raise ValueError(f"frame {t} of {video_id} is ground truth and cannot be updated")
    data = prob.data if isinstance(prob, Tensor) else np.asarray(prob)
    if data.shape[1:] != frame.labels.shape:
        raise ValueError(f"prediction shape {data.shape[1:]} != label shape {frame.labels.shape}")
    gate = data.max(axis=0) >= rule.tau2
    new = data.argmax(axis=0).astype(frame.labels.dtype)
    changed = int((gate & (frame.labels != new)).sum())
    if changed:
        frame.labels[gate] = new[gate]
        frame.provenance = PROV_UPDATED
        frame.update_count += 1
    return changed


def bank_quality(bank, clips):
    """Mean J of pseudo labels against full ground truth, unlabeled frames only.

    Per (video, object) means first, then a flat mean, mirroring the
    evaluation aggregation.
    """
    from .metrics import region_j

    per_video = {}
    pair_means = []
    for clip in clips:
        frames = bank.videos[clip.id]
        video_scores = []
        for obj in range(1, clip.num_objects + 1):
            js = [
                region_j(frames[t].labels, clip.labels[t], obj)
                for t in range(clip.num_frames)
                if frames[t].provenance != PROV_GROUND_TRUTH
            ]
            if js:
                score = float(np.mean(js))
                video_scores.append(score)
                pair_means.append(score)
        per_video[clip.id] = float(np.mean(video_scores)) if video_scores else 1.0
    aggregate = float(np.mean(pair_means)) if pair_means else 1.0
    return per_video, aggregate


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _rle_encode(labels):
    flat = labels.reshape(-1)
    pairs = []
    start = 0
    n = flat.size
    while start < n:
        value = flat[start]
        end = start
        while end < n and flat[end] == value and end - start < 0xFFFF:
            end += 1
        pairs.append((end - start, int(value)))
        start = end
    return pairs


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise ValueError(f"truncated bank file at byte {self.offset}")
        out = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return out

    def take_bytes(self, n):
        if self.offset + n > len(self.data):
            raise ValueError(f"truncated bank file at byte {self.offset}")
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out


def save_bank(bank, path):
    chunks = [struct.pack("<4sII", BANK_MAGIC, BANK_VERSION, len(bank.videos))]
    for video_id, frames in bank.videos.items():
        encoded_id = video_id.encode("utf-8")
        h, w = frames[0].labels.shape
        chunks.append(struct.pack("<H", len(encoded_id)))
        chunks.append(encoded_id)
        chunks.append(struct.pack("<III", len(frames), h, w))
        for f in frames:
            pairs = _rle_encode(f.labels)
            chunks.append(struct.pack("<BHII", f.provenance, f.source, f.update_count, len(pairs)))
            for run, value in pairs:
                chunks.append(struct.pack("<HB", run, value))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_bank(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    magic, version, n_videos = reader.take("<4sII")
    if magic != BANK_MAGIC:
        raise ValueError(f"bad bank magic {magic!r} at byte 0")
    if version != BANK_VERSION:
        raise ValueError(f"unsupported bank version {version}")
    bank = PseudoLabelBank()
    for _ in range(n_videos):
        (id_len,) = reader.take("<H")
        video_id = reader.take_bytes(id_len).decode("utf-8")
        t_total, h, w = reader.take("<III")
        frames = []
        for t in range(t_total):
            provenance, source, update_count, n_pairs = reader.take("<BHII")
            if provenance not in _PROV_NAMES:
                raise ValueError(f"unknown provenance {provenance} at byte {reader.offset}")
            flat = np.empty(h * w, dtype=np.uint8)
            pos = 0
            for _ in range(n_pairs):
                run, value = reader.take("<HB")
                if pos + run > h * w:
                    raise ValueError(
                        f"RLE overrun in {video_id} frame {t} at byte {reader.offset}: {pos + run} > {h * w}"
                    )
                flat[pos : pos + run] = value
                pos += run
            if pos != h * w:
                raise ValueError(f"RLE underrun in {video_id} frame {t}: {pos} of {h * w} pixels")
            frames.append(BankFrame(flat.reshape(h, w), provenance, source, update_count))
        bank.videos[video_id] = frames
    if reader.offset != len(reader.data):
        raise ValueError(f"trailing data after bank payload at byte {reader.offset}")
    return bank


def banks_equal(a, b):
    if list(a.videos) != list(b.videos):
        return False
    for vid in a.videos:
        fa, fb = a.videos[vid], b.videos[vid]
        if len(fa) != len(fb):
            return False
        for x, y in zip(fa, fb):
            if (
                x.provenance != y.provenance
                or x.source != y.source
                or x.update_count != y.update_count
                or x.labels.tobytes() != y.labels.tobytes()
            ):
                return False
    return True
