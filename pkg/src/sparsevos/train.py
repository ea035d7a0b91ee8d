"""Training loops shared by both phases and both baselines.

One mode string selects the sampler and supervision rules:

  phase1         reference frame always labeled; unlabeled prediction
                 slots are supervised by the mean teacher (or by the
                 student's own confident predictions when disabled)
  phase2         reference mask may come from the pseudo-label bank;
                 no mean teacher; confident predictions flow back into
                 the bank when update_bank is set
  baseline_2shot triplets built from the labeled frames alone
  full_oracle    every frame ground-truth supervised

Each mode is a deterministic function of (config, dataset, split): one
RNG stream drawn from config.seed drives initialization, clip choice
and triplet sampling in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .bank import BankUpdateRule, dynamic_update
from .losses import LossConfig, combined_loss, ema_update
from .model import Segmenter
from .sampler import SamplerState

TRAIN_LOG_HEADER = "iteration,loss_s,loss_u,masked_fraction,k"

TRAIN_MODES = ("phase1", "phase2", "baseline_2shot", "full_oracle")

CHECKPOINT_PHASE = {
    "phase1": "phase1",
    "phase2": "phase2",
    "baseline_2shot": "baseline",
    "full_oracle": "oracle",
}


class TrainingError(Exception):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


@dataclass
class TrainResult:
    params: object                 # trained student weights
    teacher: object = None         # EMA weights, phase-1 with mean teacher only
    log_rows: list = field(default_factory=list)
    sampler: SamplerState = None
    bank: object = None            # final bank, phase-2 only
    bank_changes: int = 0
    iterations: int = 0            # resolved count (phase-2 may override)


def _sgd_step(params, velocity, lr, momentum, clip_norm=0.0):
    scale = 1.0
    if clip_norm > 0.0:
        sq = 0.0
        for _, t in params.items():
            if t.grad is not None:
                sq += float(np.sum(t.grad.astype(np.float64) ** 2))
        norm = np.sqrt(sq)
        if norm > clip_norm:
            scale = clip_norm / norm
    for name, t in params.items():
        g = t.grad
        v = velocity[name]
        if g is None:
            v = momentum * v
        else:
            v = momentum * v + g * scale
        velocity[name] = v
        t.data[...] = t.data - lr * v
    params.zero_grad()


def run_training(config, mode, clips, split, bank=None, init_params=None):
    if mode not in TRAIN_MODES:
        raise ValueError(f"unknown training mode {mode!r}; expected one of {TRAIN_MODES}")
    if mode == "phase2" and bank is None:
        raise ValueError("phase2 needs a pseudo-label bank")
    if not clips:
        raise ValueError("no training clips")
    for clip in clips:
        if clip.id not in split:
            raise ValueError(f"clip {clip.id} missing from split")

    model = Segmenter(config.model_config())
    rng = np.random.default_rng(config.seed)
    if init_params is not None:
        student = init_params.copy(requires_grad=True)
    else:
        student = model.init_params(rng)
    use_teacher = mode == "phase1" and config.use_mean_teacher
    teacher = student.copy(requires_grad=False) if use_teacher else None

    loss_cfg = LossConfig(
        tau1=config.tau1,
        use_mean_teacher=use_teacher,
        alpha=config.alpha,
        normalize_by_gated=config.normalize_by_gated,
    ).validate()
    iterations = config.iterations
    lr = config.learning_rate
    if mode == "phase2":
        if config.phase2_iterations > 0:
            iterations = config.phase2_iterations
        lr = config.phase2_learning_rate
    state = SamplerState(config.k_start, config.k_end, iterations)
    rule = BankUpdateRule(tau2=config.tau2)
    velocity = {name: np.zeros_like(t.data) for name, t in student.items()}
    clip_list = list(clips)

    rows = []
    bank_changes = 0
    for it in range(iterations):
        k = state.k_at(it)
        acc_s = acc_u = acc_frac = 0.0
        last_diag = {}
        with Graph() as graph:
            total = None
            for _ in range(config.batch_size):
                clip = clip_list[int(rng.integers(len(clip_list)))]
                labeled = split[clip.id]
                trip = state.sample(mode, clip.num_frames, labeled, it, rng)
                f1, f2, f3 = (Tensor(clip.frames[v]) for v in trip.frames)
                if mode == "phase2":
                    m1 = bank.frame(clip.id, trip.frames[0]).labels
                else:
                    m1 = clip.labels[trip.frames[0]]
                p2, p3 = model.forward_triplet(student, f1, f2, f3, m1, clip.num_objects)
                preds = {1: p2, 2: p3}
                labeler = preds
                if teacher is not None and not all(trip.labeled[1:]):
                    # teacher weights record nothing, so this stays off the tape
                    tp2, tp3 = model.forward_triplet(teacher, f1, f2, f3, m1, clip.num_objects)
                    labeler = {1: tp2, 2: tp3}
                sup_p, sup_t, uns_s, uns_l = [], [], [], []
                for s in (1, 2):
                    if trip.labeled[s]:
                        sup_p.append(preds[s])
                        sup_t.append(clip.labels[trip.frames[s]])
                    else:
                        uns_s.append(preds[s])
                        uns_l.append(labeler[s])
                loss, breakdown = combined_loss(sup_p, sup_t, uns_s, uns_l, loss_cfg)
                total = loss if total is None else ad.add(total, loss)
                acc_s += breakdown.loss_s
                acc_u += breakdown.loss_u
                acc_frac += breakdown.masked_fraction
                last_diag = {
                    "iteration": it,
                    "clip": clip.id,
                    "frames": trip.frames,
                    "k": k,
                    "loss_s": breakdown.loss_s,
                    "loss_u": breakdown.loss_u,
                }
                if mode == "phase2" and config.update_bank:
                    for s in (1, 2):
                        if not trip.labeled[s]:
                            bank_changes += dynamic_update(
                                bank, clip.id, trip.frames[s], preds[s].data, rule
                            )
            if config.batch_size > 1:
                total = ad.scalar_mul(total, 1.0 / config.batch_size)
            if not np.isfinite(total.data):
                raise TrainingError(
                    f"non-finite loss at iteration {it}: {float(total.data)!r}", last_diag
                )
            # a fully gated-out unsupervised step leaves a constant loss;
            # its gradient is exactly zero, so only momentum decay applies
            if total.requires_grad:
                graph.backward(total)
        _sgd_step(student, velocity, lr, config.momentum, config.clip_norm)
        if teacher is not None:
            ema_update(teacher, student, config.alpha)
        if it % 50 == 0 or it == iterations - 1:
            b = config.batch_size
            rows.append((it, acc_s / b, acc_u / b, acc_frac / b, k))

    return TrainResult(
        params=student,
        teacher=teacher,
        log_rows=rows,
        sampler=state,
        bank=bank if mode == "phase2" else None,
        bank_changes=bank_changes,
        iterations=iterations,
    )


def write_train_log(path, rows):
    lines = [TRAIN_LOG_HEADER]
    for it, loss_s, loss_u, frac, k in rows:
        lines.append(f"{it},{loss_s:.6f},{loss_u:.6f},{frac:.6f},{k}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
