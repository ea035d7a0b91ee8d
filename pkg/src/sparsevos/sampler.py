"""Training-triplet sampling and the frame-gap curriculum.

A triplet is visited in a direction: the reference frame first, then two
prediction frames walking forward or backward in time. Both temporal
directions are used so a video whose labeled frames sit at the end still
admits valid triplets. Consecutive gaps are drawn from [1, K], shrunk to
fit the video; K grows linearly over training.

Composition of the two prediction slots follows a coin flip: with
probability 0.5 both are unlabeled, otherwise exactly one is labeled
(position chosen uniformly). When the drawn composition is unreachable
for every feasible reference, the constraint is dropped for that draw
and the sample is marked relaxed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def k_schedule(iteration, iterations, k_start, k_end):
    """Linear ramp hitting exactly k_start at 0 and k_end at the last step."""
    if not 0 <= iteration < iterations:
        raise ValueError(f"iteration {iteration} outside [0, {iterations})")
    if iterations == 1:
        return k_start
    frac = iteration / (iterations - 1)
    return k_start + int(round((k_end - k_start) * frac))


@dataclass
class TripletSample:
    frames: tuple          # (v1, v2, v3) in visit order; v1 is the reference
    labeled: tuple         # bool per visit slot
    direction: str         # "forward" or "backward"
    relaxed: bool = False

    @property
    def ascending(self):
        return tuple(sorted(self.frames))

    @property
    def n_labeled_predictions(self):
        return int(self.labeled[1]) + int(self.labeled[2])


def _room(ref, direction, length):
    return length - 1 - ref if direction == 1 else ref

def _step(ref, direction, gap):
    return ref + direction * gap


def _feasible_pairs(refs, length):
    pairs = []
    for ref in refs:
        for direction in (1, -1):
            if _room(ref, direction, length) >= 2:
                pairs.append((ref, direction))
    return pairs


def _draw_unconstrained(ref, direction, length, k, rng):
    room = _room(ref, direction, length)
    g1 = int(rng.integers(1, min(k, room - 1) + 1))
    g2 = int(rng.integers(1, min(k, room - g1) + 1))
    v2 = _step(ref, direction, g1)
    return v2, _step(v2, direction, g2)


def _draw_both_unlabeled(ref, direction, length, k, labeled_set, rng):
    # rejection first; labeled frames are sparse so this almost always lands
    for _ in range(64):
        v2, v3 = _draw_unconstrained(ref, direction, length, k, rng)
        if v2 not in labeled_set and v3 not in labeled_set:
            return v2, v3
    room = _room(ref, direction, length)
    options = []
    for g1 in range(1, min(k, room - 1) + 1):
        v2 = _step(ref, direction, g1)
        if v2 in labeled_set:
            continue
        for g2 in range(1, min(k, room - g1) + 1):
            v3 = _step(v2, direction, g2)
            if v3 not in labeled_set:
                options.append((v2, v3))
    if not options:
        return None
    return options[int(rng.integers(len(options)))]


def _draw_one_labeled(ref, direction, length, k, labeled_set, rng):
    targets = sorted(labeled_set - {ref})
    if not targets:
        return None
    room = _room(ref, direction, length)
    positions = [1, 2] if rng.random() < 0.5 else [2, 1]
    for pos in positions:
        for ti in rng.permutation(len(targets)):
            target = targets[int(ti)]
            dist = (target - ref) * direction
            if pos == 1:
                # target in the middle slot, third frame past it
                if not 1 <= dist <= k:
                    continue
                tail = _room(target, direction, length)
                gaps = [g for g in range(1, min(k, tail) + 1)
                        if _step(target, direction, g) not in labeled_set]
                if not gaps:
                    continue
                g2 = gaps[int(rng.integers(len(gaps)))]
                return target, _step(target, direction, g2)
            else:
                # target in the last slot, middle frame between
                if not 2 <= dist <= 2 * k:
                    continue
                splits = [g for g in range(max(1, dist - k), min(k, dist - 1) + 1)
                          if _step(ref, direction, g) not in labeled_set]
                if not splits:
                    continue
                g1 = splits[int(rng.integers(len(splits)))]
                return _step(ref, direction, g1), target
    return None


def _finish(ref, direction, v2, v3, labeled_set, relaxed):
    return TripletSample(
        frames=(ref, v2, v3),
        labeled=(ref in labeled_set, v2 in labeled_set, v3 in labeled_set),
        direction="forward" if direction == 1 else "backward",
        relaxed=relaxed,
    )


def _sample_constrained(refs, length, k, labeled_set, rng):
    pairs = _feasible_pairs(refs, length)
    if not pairs:
        raise ValueError(f"no feasible triplet: length {length}, references {sorted(set(refs))}")
    order = rng.permutation(len(pairs))
    want_both_unlabeled = rng.random() < 0.5
    for pi in order:
        ref, direction = pairs[int(pi)]
        if want_both_unlabeled:
            got = _draw_both_unlabeled(ref, direction, length, k, labeled_set, rng)
        else:
            got = _draw_one_labeled(ref, direction, length, k, labeled_set, rng)
        if got is not None:
            return _finish(ref, direction, got[0], got[1], labeled_set, False)
    # composition unreachable for every feasible reference: drop it
    ref, direction = pairs[int(order[0])]
    v2, v3 = _draw_unconstrained(ref, direction, length, k, rng)
    return _finish(ref, direction, v2, v3, labeled_set, True)


def sample_phase1_triplet(length, labeled, k, rng):
    """Reference must be one of the labeled frames."""
    labeled_set = set(labeled)
    return _sample_constrained(sorted(labeled_set), length, k, labeled_set, rng)


def sample_phase2_triplet(length, labeled, k, rng):
    """Any frame may serve as reference; its mask comes from the bank."""
    return _sample_constrained(range(length), length, k, set(labeled), rng)


def sample_naive_triplet(labeled, rng):
    """Triplets drawn from the labeled frames alone, with repetition."""
    idx = sorted(set(labeled))
    if len(idx) < 2:
        raise ValueError("naive sampling needs at least two labeled frames")
    pick = rng.choice(len(idx), size=2, replace=False)
    a, b = idx[int(pick.min())], idx[int(pick.max())]
    if rng.random() < 0.5:
        a, b = b, a
    frames = (a, a, b) if rng.random() < 0.5 else (a, b, b)
    return TripletSample(
        frames=frames,
        labeled=(True, True, True),
        direction="forward" if frames[2] >= frames[0] else "backward",
    )


def sample_oracle_triplet(length, k, rng):
    """Unrestricted triplet; every frame carries ground truth."""
    pairs = _feasible_pairs(range(length), length)
    if not pairs:
        raise ValueError(f"video too short for triplets: length {length}")
    ref, direction = pairs[int(rng.integers(len(pairs)))]
    v2, v3 = _draw_unconstrained(ref, direction, length, k, rng)
    full = frozenset(range(length))
    return _finish(ref, direction, v2, v3, full, False)


@dataclass
class SamplerState:
    """Curriculum bookkeeping shared by the training loops."""

    k_start: int
    k_end: int
    iterations: int
    draws: int = 0
    relaxed_draws: int = 0
    _log: list = field(default_factory=list)

    def k_at(self, iteration):
        return k_schedule(iteration, self.iterations, self.k_start, self.k_end)

    def sample(self, mode, length, labeled, iteration, rng):
        k = self.k_at(iteration)
        if mode == "phase1":
            trip = sample_phase1_triplet(length, labeled, k, rng)
        elif mode == "phase2":
            trip = sample_phase2_triplet(length, labeled, k, rng)
        elif mode == "baseline_2shot":
            trip = sample_naive_triplet(labeled, rng)
        elif mode == "full_oracle":
            trip = sample_oracle_triplet(length, k, rng)
        else:
            raise ValueError(f"unknown sampling mode {mode!r}")
        self.draws += 1
        if trip.relaxed:
            self.relaxed_draws += 1
            if len(self._log) < 100:
                self._log.append((iteration, length, tuple(sorted(set(labeled)))))
        return trip
