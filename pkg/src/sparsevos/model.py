"""Compact memory-matching segmenter.

A frame is encoded to a key at quarter resolution; memory frames also get
per-object values conditioned on that object's mask plane. A query frame
reads memory by softmax affinity over all memory locations, and a shared
decoder turns (read value, query key) into one foreground logit per
object. Per-pixel class probabilities come from a softmax over
[0, logit_1..logit_K] with the background logit fixed at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor

GROUND_TRUTH = "ground-truth"
PSEUDO = "pseudo"
PREDICTED = "predicted"

# Two pooling stages fix the encoder stride.
STRIDE = 4


@dataclass(frozen=True)
class ModelConfig:
    key_channels: int = 8
    value_channels: int = 8
    hidden_channels: int = 16
    max_objects: int = 3
    num_pool_levels: int = 2

    def validate(self):
        if min(self.key_channels, self.value_channels, self.hidden_channels) < 2:
            raise ValueError("all channel counts must be >= 2")
        if self.num_pool_levels != 2:
            raise ValueError("architecture is fixed at two pooling levels")
        if self.max_objects < 1:
            raise ValueError("max_objects must be >= 1")


@dataclass
class MemoryEntry:
    key: Tensor
    values: list
    frame_index: int
    provenance: str

    def __post_init__(self):
        for v in self.values:
            if v.shape[1:] != self.key.shape[1:]:
                raise ValueError(f"value spatial shape {v.shape[1:]} != key {self.key.shape[1:]}")


def mask_planes(label_map, num_objects, dtype=np.float32):
    """Binary per-object planes [1,H,W] from a hard label map."""
    lab = np.asarray(label_map)
    planes = []
    for k in range(1, num_objects + 1):
        planes.append(Tensor((lab == k)[None].astype(dtype)))
    return planes


def probmap_to_labels(prob):
    data = prob.data if isinstance(prob, Tensor) else np.asarray(prob)
    return data.argmax(axis=0).astype(np.uint8)


class Segmenter:
    def __init__(self, config=None):
        self.config = config if config is not None else ModelConfig()
        self.config.validate()

    # -- parameters ---------------------------------------------------------

    def init_params(self, seed, dtype=np.float32):
        cfg = self.config
        rng = np.random.default_rng(seed)
        params = ParameterSet()

        def conv(name, cout, cin, bias=0.05):
            # small positive bias keeps relu units alive through the first
            # large-gradient iterations; zero-bias runs die to a constant map
            std = np.sqrt(2.0 / (cin * 9))
            params.add(f"{name}_w", Tensor(rng.normal(0.0, std, size=(cout, cin, 3, 3)), requires_grad=True, dtype=dtype))
            params.add(f"{name}_b", Tensor(np.full(cout, bias), requires_grad=True, dtype=dtype))

        h = cfg.hidden_channels
        conv("key1", h, 3)
        conv("key2", h, h)
        conv("keyproj", cfg.key_channels, h)
        conv("val1", h, 4)
        conv("val2", h, h)
        conv("valproj", cfg.value_channels, h)
        conv("dec1", h, cfg.value_channels + cfg.key_channels)
        conv("dec2", 1, h, bias=0.0)
        return params

    # -- encoders -----------------------------------------------------------

    def _check_frame(self, frame):
        if frame.data.ndim != 3 or frame.shape[0] != 3:
            raise ValueError(f"frame must be [3,H,W], got {frame.shape}")
        if frame.shape[1] % STRIDE or frame.shape[2] % STRIDE:
            raise ValueError(f"frame size {frame.shape[1]}x{frame.shape[2]} must be divisible by {STRIDE}")

    def _trunk(self, params, prefix, x):
        x = ad.relu(ad.conv2d(x, params[f"{prefix}1_w"], params[f"{prefix}1_b"]))
        x = ad.avgpool2(x)
        x = ad.relu(ad.conv2d(x, params[f"{prefix}2_w"], params[f"{prefix}2_b"]))
        x = ad.avgpool2(x)
        return ad.conv2d(x, params[f"{prefix}proj_w"], params[f"{prefix}proj_b"])

    def encode_key(self, params, frame):
        self._check_frame(frame)
        return self._trunk(params, "key", frame)

    def encode_value(self, params, frame, plane):
        """Value features for one object; plane is its [1,H,W] soft or hard mask."""
        self._check_frame(frame)
        if plane.shape != (1,) + frame.shape[1:]:
            raise ValueError(f"mask plane shape {plane.shape} incompatible with frame {frame.shape}")
        return self._trunk(params, "val", ad.concat_channels(frame, plane, axis=0))

    def encode(self, params, frame, planes=None, frame_index=-1, provenance=GROUND_TRUTH):
        """Key (and a MemoryEntry when mask planes are given)."""
        key = self.encode_key(params, frame)
        if planes is None:
            return key, None
        if len(planes) > self.config.max_objects:
            raise ValueError(f"{len(planes)} objects exceeds max_objects={self.config.max_objects}")
        values = [self.encode_value(params, frame, p) for p in planes]
        return key, MemoryEntry(key=key, values=values, frame_index=frame_index, provenance=provenance)

    # -- memory readout -----------------------------------------------------

    def memory_read(self, query_key, memory):
        """Per-object read values by softmax affinity over all memory locations.

        Entry keys and values are stacked along the row axis, so flattening
        concatenates locations entry by entry; the softmax over the union
        makes the result independent of entry listing order.
        """
        if not memory:
            raise ValueError("memory must be non-empty")
        num_objects = len(memory[0].values)
        for entry in memory:
            if len(entry.values) != num_objects:
                raise ValueError("memory entries disagree on object count")
            if entry.key.shape != memory[0].key.shape:
                raise ValueError("memory entries disagree on key shape")
        keys = memory[0].key
        for entry in memory[1:]:
            keys = ad.concat_channels(keys, entry.key, axis=1)
        logits = ad.neg_sq_l2_affinity(query_key, keys)
        affinity = ad.channel_softmax(logits)
        reads = []
        for obj in range(num_objects):
            vals = memory[0].values[obj]
            for entry in memory[1:]:
                vals = ad.concat_channels(vals, entry.values[obj], axis=1)
            reads.append(ad.matmul(vals, affinity))
        return reads

    # -- decoding -----------------------------------------------------------

    def _decode_logit(self, params, read_value, query_key):
        x = ad.concat_channels(read_value, query_key, axis=0)
        x = ad.relu(ad.conv2d(x, params["dec1_w"], params["dec1_b"]))
        x = ad.conv2d(x, params["dec2_w"], params["dec2_b"])
        return ad.upsample2_nearest(ad.upsample2_nearest(x))

    def decode(self, params, reads, query_key, dtype=None):
        """ProbMap [1+K,H,W] from per-object read values."""
        dtype = dtype if dtype is not None else query_key.dtype
        logits = [self._decode_logit(params, r, query_key) for r in reads]
        h, w = logits[0].shape[1:]
        stacked = Tensor(np.zeros((1, h, w)), dtype=dtype)
        for lg in logits:
            stacked = ad.concat_channels(stacked, lg, axis=0)
        return ad.channel_softmax(stacked)

    def _channel(self, prob, index):
        selector = np.zeros((1, prob.shape[0]))
        selector[0, index] = 1.0
        return ad.matmul(Tensor(selector, dtype=prob.dtype), prob)

    # -- training forward ---------------------------------------------------

    def forward_triplet(self, params, f1, f2, f3, m1, num_objects):
        """ProbMaps for the second and third frames of a training triplet.

        The second frame joins memory with its soft predicted planes, so
        the third frame's prediction quality depends on (and trains) the
        quality of the second.
        """
        planes1 = mask_planes(m1, num_objects, dtype=f1.dtype)
        k1, entry1 = self.encode(params, f1, planes1, frame_index=0)
        k2 = self.encode_key(params, f2)
        p2 = self.decode(params, self.memory_read(k2, [entry1]), k2)
        soft_planes = [self._channel(p2, obj) for obj in range(1, num_objects + 1)]
        values2 = [self.encode_value(params, f2, sp) for sp in soft_planes]
        entry2 = MemoryEntry(key=k2, values=values2, frame_index=1, provenance=PREDICTED)
        k3 = self.encode_key(params, f3)
        p3 = self.decode(params, self.memory_read(k3, [entry1, entry2]), k3)
        return p2, p3

    # -- inference ----------------------------------------------------------

    def predict_sequence(self, params, frames, reference_index, reference_mask, num_objects, direction="forward"):
        """ProbMaps for every frame visited walking away from the reference.

        Memory holds the reference entry plus the immediately previous
        visited frame with its predicted hard mask. Returns a list of
        (frame_index, probability array) pairs in visit order.
        """
        if direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward or backward, got {direction!r}")
        t_total = len(frames)
        if not 0 <= reference_index < t_total:
            raise ValueError(f"reference index {reference_index} out of range for {t_total} frames")
        ref_frame = self._as_frame_tensor(frames[reference_index])
        planes = mask_planes(reference_mask, num_objects, dtype=ref_frame.dtype)
        _, ref_entry = self.encode(params, ref_frame, planes, frame_index=reference_index)
        if direction == "forward":
            order = range(reference_index + 1, t_total)
        else:
            order = range(reference_index - 1, -1, -1)
        outputs = []
        prev_entry = None
        for t in order:
            frame = self._as_frame_tensor(frames[t])
            key = self.encode_key(params, frame)
            memory = [ref_entry] if prev_entry is None else [ref_entry, prev_entry]
            prob = self.decode(params, self.memory_read(key, memory), key)
            outputs.append((t, prob.data))
            hard = probmap_to_labels(prob)
            prev_planes = mask_planes(hard, num_objects, dtype=frame.dtype)
            prev_values = [self.encode_value(params, frame, p) for p in prev_planes]
            prev_entry = MemoryEntry(key=key, values=prev_values, frame_index=t, provenance=PREDICTED)
        return outputs

    def _as_frame_tensor(self, frame):
        return frame if isinstance(frame, Tensor) else Tensor(frame)


def sequence_labels(model, params, clip, reference_index=0):
    """Hard label maps [T,H,W] for a clip, reference frame copied from gt."""
    out = np.zeros_like(clip.labels)
    out[reference_index] = clip.labels[reference_index]
    preds = model.predict_sequence(
        params,
        clip.frames,
        reference_index,
        clip.labels[reference_index],
        clip.num_objects,
        direction="forward",
    )
    for t, prob in preds:
        out[t] = probmap_to_labels(prob)
    if reference_index > 0:
        back = model.predict_sequence(
            params,
            clip.frames,
            reference_index,
            clip.labels[reference_index],
            clip.num_objects,
            direction="backward",
        )
        for t, prob in back:
            out[t] = probmap_to_labels(prob)
    return out


def dataset_predictor(model, params):
    """Adapter for metrics.evaluate_dataset: clip -> [T,H,W] labels."""
    return lambda clip: sequence_labels(model, params, clip)
