"""Training objectives for the two-phase pipeline.

The supervised term is plain cross-entropy against hard labels, averaged
over pixels and frames. The unsupervised term turns a labeler's
prediction into a hard argmax target, keeps only pixels whose labeler
confidence clears tau1, and normalizes by the full pixel count whether or
not pixels were gated out (a per-gated-pixel normalization exists behind
``normalize_by_gated`` and stays off by default). The mean-teacher update
blends parameters in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class LossConfig:
    tau1: float = 0.9
    use_mean_teacher: bool = True
    alpha: float = 0.995
    normalize_by_gated: bool = False

    def validate(self):
        if not 0.0 < self.tau1 <= 1.0:
            raise ValueError(f"tau1 must be in (0,1], got {self.tau1}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0,1), got {self.alpha}")


@dataclass
class LossBreakdown:
    loss_s: float
    loss_u: float
    masked_fraction: float
    n1: int
    n2: int

    @property
    def total(self):
        return self.loss_s + self.loss_u


def _check_pair(pred, target):
    target = np.asarray(target)
    if target.shape != pred.shape[1:]:
        raise ValueError(f"target shape {target.shape} != prediction plane {pred.shape[1:]}")
    return target


def supervised_loss(preds, targets):
    """Mean cross-entropy -log P[Y] over pixels and frames, differentiable."""
    if len(preds) != len(targets):
        raise ValueError(f"{len(preds)} predictions vs {len(targets)} targets")
    if not preds:
        return Tensor(0.0)
    total = None
    for pred, target in zip(preds, targets):
        target = _check_pair(pred, target)
        term = ad.scalar_mul(ad.tmean(ad.log(ad.gather_labels(pred, target))), -1.0)
        total = term if total is None else ad.add(total, term)
    if len(preds) == 1:
        return total
    return ad.scalar_mul(total, 1.0 / len(preds))


def unsupervised_loss(preds_student, preds_labeler, tau1, normalize_by_gated=False):
    """Gated cross-entropy against the labeler's argmax, plus gate fraction.

    The labeler is read as plain data: no gradient reaches it, only the
    student's probabilities on gated pixels.
    """
    if len(preds_student) != len(preds_labeler):
        raise ValueError(f"{len(preds_student)} student vs {len(preds_labeler)} labeler maps")
    if not preds_student:
        return Tensor(0.0), 0.0
    total = None
    gated = 0
    pixels = 0
    for student, labeler in zip(preds_student, preds_labeler):
        lab = labeler.data if isinstance(labeler, Tensor) else np.asarray(labeler)
        if lab.shape != student.shape:
            raise ValueError(f"labeler shape {lab.shape} != student shape {student.shape}")
        gate = lab.max(axis=0) >= tau1
        pixels += gate.size
        n_gate = int(gate.sum())
        gated += n_gate
        if n_gate == 0:
            continue
        pseudo = lab.argmax(axis=0)
        mask = Tensor(gate.astype(student.dtype))
        term = ad.tsum(ad.mul(ad.log(ad.gather_labels(student, pseudo)), mask))
        total = term if total is None else ad.add(total, term)
    fraction = gated / pixels if pixels else 0.0
    if total is None:
        return Tensor(0.0), 0.0
    denom = gated if normalize_by_gated else pixels
    return ad.scalar_mul(total, -1.0 / denom), fraction


def combined_loss(sup_preds, sup_targets, unsup_student, unsup_labeler, config=None):
    """L = L_S + L_U with each term already carrying its own normalization."""
    config = config if config is not None else LossConfig()
    n1 = len(sup_preds)
    n2 = len(unsup_student)
    if n1 == 0 and n2 == 0:
        raise ValueError("need at least one supervised or unsupervised frame")
    loss_s = supervised_loss(sup_preds, sup_targets) if n1 else None
    if n2:
        loss_u, fraction = unsupervised_loss(
            unsup_student, unsup_labeler, config.tau1, config.normalize_by_gated
        )
    else:
        loss_u, fraction = None, 0.0
    if loss_s is not None and loss_u is not None:
        loss = ad.add(loss_s, loss_u)
    else:
        loss = loss_s if loss_s is not None else loss_u
    breakdown = LossBreakdown(
        loss_s=float(loss_s.data) if loss_s is not None else 0.0,
        loss_u=float(loss_u.data) if loss_u is not None else 0.0,
        masked_fraction=fraction,
        n1=n1,
        n2=n2,
    )
    return loss, breakdown


def ema_update(teacher, student, alpha):
    """In place: teacher <- alpha * teacher + (1 - alpha) * student."""
    t_names = teacher.names()
    s_names = student.names()
    if t_names != s_names:
        raise ValueError(f"parameter name sets differ: {t_names} vs {s_names}")
    for name in t_names:
        t = teacher[name]
        s = student[name]
        if t.shape != s.shape:
            raise ValueError(f"{name}: shape {t.shape} vs {s.shape}")
        t.data[...] = alpha * t.data + (1.0 - alpha) * s.data
