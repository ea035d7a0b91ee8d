"""Procedural multi-object videos with exact ground-truth masks.

Scenes are a textured static background plus one to three rigid shapes
(disc, rectangle, triangle) moving with constant velocity. Later-listed
objects occlude earlier ones. Everything is a deterministic function of
the scene seed, so datasets regenerate bitwise identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TSVD"
FORMAT_VERSION = 1

SHAPE_KINDS = ("disc", "rectangle", "triangle")

# Object centers stay this far inside the frame for the whole clip, which
# guarantees at least a few visible pixels per object per frame.
_MARGIN = 2.0

_MAX_SCENE_DRAWS = 200


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    size: float
    color: tuple
    start: tuple
    velocity: tuple
    drift: float = 0.0  # fractional brightness ramp across the clip


@dataclass(frozen=True)
class SceneConfig:
    height: int
    width: int
    num_frames: int
    objects: tuple
    seed: int
    occlusion: bool = True
    texture_amplitude: float = 0.08
    frame_noise: float = 0.0


@dataclass
class VideoClip:
    id: str
    frames: np.ndarray
    labels: np.ndarray
    num_objects: int

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[2]

    @property
    def width(self):
        return self.frames.shape[3]


@dataclass
class DatasetTemplate:
    """Ranges that per-video scene draws are taken from."""

    height: int = 32
    width: int = 32
    num_frames: int = 20
    min_objects: int = 1
    max_objects: int = 2
    size_range: tuple = (8.0, 12.0)
    speed_range: tuple = (0.4, 1.8)
    occlusion: bool = True
    texture_amplitude: float = 0.08
    color_low: float = 0.1
    color_high: float = 1.0
    # per-object brightness ramp across the clip (0 disables)
    appearance_drift: float = 0.0
    # chance that a two-object scene shares one color; color matching alone
    # cannot tell twins apart, the mask geometry in memory has to
    twin_prob: float = 0.0
    # iid pixel noise per frame (0 disables)
    frame_noise: float = 0.0
    val_stride: int = 5


@dataclass
class Dataset:
    clips: list
    train_ids: list
    val_ids: list
    by_id: dict = field(init=False)

    def __post_init__(self):
        self.by_id = {c.id: c for c in self.clips}


def _validate_config(cfg):
    if cfg.height < 16 or cfg.width < 16:
        raise ValueError(f"frame size {cfg.height}x{cfg.width} too small, need at least 16x16")
    if cfg.num_frames < 4:
        raise ValueError(f"need at least 4 frames, got {cfg.num_frames}")
    if not 1 <= len(cfg.objects) <= 3:
        raise ValueError(f"need 1..3 objects, got {len(cfg.objects)}")
    for obj in cfg.objects:
        if obj.shape not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {obj.shape!r}")
        if obj.size <= 0:
            raise ValueError(f"object size must be positive, got {obj.size}")


def object_mask(obj, t, height, width):
    """Boolean membership of each pixel center in the object at frame t."""
    cx = obj.start[0] + obj.velocity[0] * t
    cy = obj.start[1] + obj.velocity[1] * t
    py, px = np.mgrid[0:height, 0:width]
    px = px + 0.5
    py = py + 0.5
    if obj.shape == "disc":
        return (px - cx) ** 2 + (py - cy) ** 2 <= obj.size ** 2
    if obj.shape == "rectangle":
        return (np.abs(px - cx) <= obj.size) & (np.abs(py - cy) <= 0.65 * obj.size)
    if obj.shape == "triangle":
        ax, ay = cx, cy - obj.size
        bx, by = cx - obj.size, cy + obj.size
        dx, dy = cx + obj.size, cy + obj.size
        s1 = (px - bx) * (ay - by) - (ax - bx) * (py - by)
        s2 = (px - dx) * (by - dy) - (bx - dx) * (py - dy)
        s3 = (px - ax) * (dy - ay) - (dx - ax) * (py - ay)
        has_neg = (s1 < 0) | (s2 < 0) | (s3 < 0)
        has_pos = (s1 > 0) | (s2 > 0) | (s3 > 0)
        return ~(has_neg & has_pos)
    raise ValueError(f"unknown shape kind {obj.shape!r}")


def _smooth_noise(rng, height, width, cell):
    gh = height // cell + 2
    gw = width // cell + 2
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    ys = (np.arange(height) + 0.5) / cell
    xs = (np.arange(width) + 0.5) / cell
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    top = g00 * (1 - fx) + g01 * fx
    bottom = g10 * (1 - fx) + g11 * fx
    return top * (1 - fy) + bottom * fy


def _background(rng, height, width, amplitude):
    base = rng.uniform(0.30, 0.60, size=3)
    img = np.empty((3, height, width))
    for c in range(3):
        img[c] = base[c] + amplitude * _smooth_noise(rng, height, width, cell=8)
    return np.clip(img, 0.0, 1.0)


def generate_video(cfg, clip_id="clip"):
    """Rasterize a scene config into frames and exact label maps.

    Frames are quantized to 256 levels at generation time so a disk
    round-trip reproduces them bitwise.
    """
    _validate_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    bg = _background(rng, cfg.height, cfg.width, cfg.texture_amplitude)
    frames = np.empty((cfg.num_frames, 3, cfg.height, cfg.width), dtype=np.float32)
    labels = np.zeros((cfg.num_frames, cfg.height, cfg.width), dtype=np.uint8)
    for t in range(cfg.num_frames):
        img = bg.copy()
        lab = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
        cover = np.zeros((cfg.height, cfg.width), dtype=np.int32)
        ramp = t / (cfg.num_frames - 1) - 0.5 if cfg.num_frames > 1 else 0.0
        for k, obj in enumerate(cfg.objects):
            m = object_mask(obj, t, cfg.height, cfg.width)
            lab[m] = k + 1
            cover += m
            gain = 1.0 + obj.drift * ramp
            for c in range(3):
                img[c][m] = obj.color[c] * gain
        if not cfg.occlusion and (cover > 1).any():
            raise ValueError(f"objects overlap at frame {t} but occlusion is disabled")
        if cfg.frame_noise > 0.0:
            img = img + rng.normal(0.0, cfg.frame_noise, size=img.shape)
        quantized = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        frames[t] = quantized.astype(np.float32) / np.float32(255.0)
        labels[t] = lab
    for k in range(len(cfg.objects)):
        if not (labels == k + 1).any():
            raise ValueError(f"object {k + 1} is never visible")
    return VideoClip(id=clip_id, frames=frames, labels=labels, num_objects=len(cfg.objects))


def _draw_scene(rng, template, seed):
    n = int(rng.integers(template.min_objects, template.max_objects + 1))
    span = template.num_frames - 1
    twins = n == 2 and rng.random() < template.twin_prob
    shared = tuple(float(v) for v in rng.uniform(template.color_low, template.color_high, size=3))
    objects = []
    for _ in range(n):
        shape = str(rng.choice(SHAPE_KINDS))
        size = float(rng.uniform(*template.size_range))
        color = shared if twins else tuple(float(v) for v in rng.uniform(template.color_low, template.color_high, size=3))
        speed = float(rng.uniform(*template.speed_range))
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
        vx = speed * np.cos(angle)
        vy = speed * np.sin(angle)
        # Shrink velocity until the center path fits in the safe box.
        lim_x = template.width - 2 * _MARGIN
        lim_y = template.height - 2 * _MARGIN
        factor = 1.0
        if abs(vx) * span > lim_x:
            factor = min(factor, 0.999 * lim_x / (abs(vx) * span))
        if abs(vy) * span > lim_y:
            factor = min(factor, 0.999 * lim_y / (abs(vy) * span))
        vx *= factor
        vy *= factor
        cx = float(rng.uniform(_MARGIN + max(0.0, -vx * span), template.width - _MARGIN - max(0.0, vx * span)))
        cy = float(rng.uniform(_MARGIN + max(0.0, -vy * span), template.height - _MARGIN - max(0.0, vy * span)))
        drift = float(rng.uniform(-template.appearance_drift, template.appearance_drift))
        objects.append(ObjectSpec(shape, size, color, (cx, cy), (float(vx), float(vy)), drift))
    return SceneConfig(
        height=template.height,
        width=template.width,
        num_frames=template.num_frames,
        objects=tuple(objects),
        seed=seed,
        occlusion=template.occlusion,
        texture_amplitude=template.texture_amplitude,
        frame_noise=template.frame_noise,
    )


def _scene_acceptable(cfg):
    """Every object keeps visible pixels in every frame; without occlusion
    there must be no overlap at all."""
    for t in range(cfg.num_frames):
        lab = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
        cover = np.zeros((cfg.height, cfg.width), dtype=np.int32)
        for k, obj in enumerate(cfg.objects):
            m = object_mask(obj, t, cfg.height, cfg.width)
            lab[m] = k + 1
            cover += m
        if not cfg.occlusion and (cover > 1).any():
            return False
        for k in range(len(cfg.objects)):
            if not (lab == k + 1).any():
                return False
    return True


def make_dataset(n_videos, base_seed, template=None):
    """Generate n_videos independent clips and assign train/validation ids.

    Video index i uses seed base_seed + i; indices where
    i % val_stride == val_stride - 1 go to validation.
    """
    if n_videos < 1:
        raise ValueError(f"n_videos must be >= 1, got {n_videos}")
    template = template if template is not None else DatasetTemplate()
    clips = []
    train_ids = []
    val_ids = []
    for index in range(n_videos):
        video_seed = base_seed + index
        # Parameter draws use a stream separate from the background texture
        # stream, and scene retries continue it deterministically.
        prng = np.random.default_rng((video_seed, 1))
        for _ in range(_MAX_SCENE_DRAWS):
            cfg = _draw_scene(prng, template, video_seed)
            if _scene_acceptable(cfg):
                break
        else:
            raise RuntimeError(f"no acceptable scene for video index {index} after {_MAX_SCENE_DRAWS} draws")
        clip_id = f"vid{index:04d}"
        clips.append(generate_video(cfg, clip_id=clip_id))
        if index % template.val_stride == template.val_stride - 1:
            val_ids.append(clip_id)
        else:
            train_ids.append(clip_id)
    return Dataset(clips=clips, train_ids=train_ids, val_ids=val_ids)


def make_two_shot_split(clips, seed, n_shots=2):
    """Pick n_shots distinct labeled frame indices per clip, uniform.

    Deterministic in (seed, clip order). Returned tuples are ascending.
    """
    if n_shots < 2:
        raise ValueError(f"n_shots must be >= 2, got {n_shots}")
    rng = np.random.default_rng(seed)
    split = {}
    for clip in clips:
        t = clip.num_frames
        if t < n_shots:
            raise ValueError(f"clip {clip.id} has fewer than {n_shots} frames")
        split[clip.id] = tuple(sorted(int(v) for v in rng.choice(t, size=n_shots, replace=False)))
    return split


def dataset_stats(clips, split=None):
    counts = {}
    for clip in clips:
        counts[clip.num_objects] = counts.get(clip.num_objects, 0) + 1
    total_frames = sum(c.num_frames for c in clips)
    labeled = sum(len(split[c.id]) for c in clips) if split is not None else 0
    return {
        "num_videos": len(clips),
        "total_frames": total_frames,
        "frame_height": clips[0].height if clips else 0,
        "frame_width": clips[0].width if clips else 0,
        "objects_histogram": counts,
        "labeled_fraction": labeled / total_frames if split is not None and total_frames else None,
    }


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIII")


def clip_to_bytes(clip):
    t, _, h, w = clip.frames.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, h, w, t, clip.num_objects)
    rgb = np.round(clip.frames * np.float32(255.0)).astype(np.uint8)
    rgb = np.ascontiguousarray(rgb.transpose(0, 2, 3, 1))
    return header + rgb.tobytes() + clip.labels.tobytes()


def clip_from_bytes(data, clip_id):
    if len(data) < _HEADER.size:
        raise ValueError(f"clip {clip_id}: truncated header")
    magic, version, h, w, t, num_objects = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"clip {clip_id}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"clip {clip_id}: unsupported version {version}")
    frame_bytes = t * h * w * 3
    label_bytes = t * h * w
    expected = _HEADER.size + frame_bytes + label_bytes
    if len(data) != expected:
        raise ValueError(f"clip {clip_id}: expected {expected} bytes, got {len(data)}")
    rgb = np.frombuffer(data, dtype=np.uint8, count=frame_bytes, offset=_HEADER.size)
    rgb = rgb.reshape(t, h, w, 3).transpose(0, 3, 1, 2)
    frames = np.ascontiguousarray(rgb).astype(np.float32) / np.float32(255.0)
    labels = np.frombuffer(data, dtype=np.uint8, count=label_bytes, offset=_HEADER.size + frame_bytes)
    labels = labels.reshape(t, h, w).copy()
    return VideoClip(id=clip_id, frames=frames, labels=labels, num_objects=num_objects)


def save_dataset(clips, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        (out / f"{clip.id}.tsvd").write_bytes(clip_to_bytes(clip))


def load_dataset(in_dir):
    paths = sorted(Path(in_dir).glob("*.tsvd"))
    if not paths:
        raise ValueError(f"no .tsvd files in {in_dir}")
    return [clip_from_bytes(p.read_bytes(), p.stem) for p in paths]


def save_split(split, path):
    lines = [vid + " " + " ".join(str(i) for i in idx) for vid, idx in sorted(split.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(path):
    split = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"{path}:{lineno}: expected 'video_id i j'")
        vid, idx = parts[0], tuple(int(p) for p in parts[1:])
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise ValueError(f"{path}:{lineno}: indices must be ascending")
        split[vid] = idx
    return split


def save_id_list(ids, path):
    Path(path).write_text("\n".join(ids) + ("\n" if ids else ""))


def load_id_list(path):
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
