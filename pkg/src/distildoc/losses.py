"""Knowledge-distillation objectives.

Response-based: :func:`vanilla_kd_loss`, :func:`mse_logit_loss`, :func:`nkd_loss`.
Feature-based: :func:`fitnet_loss`, :func:`simkd_loss` (both through a
:class:`~distildoc.projector.Projector`).

Teacher inputs are always read as constants, so no gradient ever reaches
them. Every loss is averaged over the batch.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .projector import Projector
from .tensor import Tensor, as_tensor, constant, log_softmax, take_rows, temp_softmax


@dataclass(frozen=True)
class KDHyperparams:
    alpha: float = 0.5
    tau: float = 2.5
    gamma: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.tau >= 1.0:
            raise DomainError(f"tau must be >= 1, got {self.tau}")
        if not self.gamma >= 0.0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")


@dataclass
class DistillBatch:
    """Student logits (B x K), teacher logits (B x K) and hard labels (B)."""

    student_logits: Tensor
    teacher_logits: Tensor | np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.student_logits = as_tensor(self.student_logits)
        self.labels = np.asarray(self.labels, dtype=np.intp).reshape(-1)
        s_shape = self.student_logits.shape
        t_shape = np.shape(constant(self.teacher_logits))
        if len(s_shape) != 2:
            raise DomainError(f"logits must be B x K, got {s_shape}")
        if s_shape != t_shape:
            raise DomainError(f"student {s_shape} and teacher {t_shape} logits differ in shape")
        if self.labels.shape[0] != s_shape[0]:
            raise DomainError("one label per batch row is required")
        if np.any(self.labels < 0) or np.any(self.labels >= s_shape[1]):
            raise DomainError("labels must lie in [0, K)")

    @property
    def num_classes(self) -> int:
        return self.student_logits.shape[1]


@dataclass
class FeaturePair:
    student_features: Tensor
    teacher_features: Tensor | np.ndarray
    hint_layer: int | None = None

    def __post_init__(self):
        self.student_features = as_tensor(self.student_features)
        t_shape = np.shape(constant(self.teacher_features))
        if self.student_features.shape[0] != t_shape[0]:
            raise DomainError("student and teacher features disagree on batch size")


def supervised_ce(student_logits, labels) -> Tensor:
    """Batch-mean hard-label cross-entropy at temperature 1."""
    logits = as_tensor(student_logits)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1, 1)
    picked = take_rows(log_softmax(logits, 1.0), labels)
    return -picked.sum() * (1.0 / logits.shape[0])


def kd_kl_term(student_logits, teacher_logits, tau: float) -> Tensor:
    """Batch-mean KL(teacher || student) between temperature-tau softmaxes."""
    logits = as_tensor(student_logits)
    p_t = temp_softmax(constant(teacher_logits), tau)
    log_p_t = np.log(np.where(p_t > 0, p_t, 1.0))
    log_q = log_softmax(logits, tau)
    kl = (p_t * log_p_t).sum() - (log_q * p_t).sum()
    return kl * (1.0 / logits.shape[0])


def vanilla_kd_loss(batch: DistillBatch, hp: KDHyperparams) -> Tensor:
    """alpha * CE(y, s) + (1 - alpha) * tau^2 * KL(t^tau || s^tau)."""
    ce = supervised_ce(batch.student_logits, batch.labels)
    if hp.alpha == 1.0:
        return ce
    kl = kd_kl_term(batch.student_logits, batch.teacher_logits, hp.tau)
    return ce * hp.alpha + kl * ((1.0 - hp.alpha) * hp.tau**2)


def mse_logit_loss(batch: DistillBatch) -> Tensor:
    """Batch mean of the squared L2 distance between logit vectors."""
    s = batch.student_logits
    diff = s - constant(batch.teacher_logits)
    return (diff * diff).sum() * (1.0 / s.shape[0])


def _non_target_index(labels: np.ndarray, k: int) -> np.ndarray:
    cols = np.arange(k)
    return np.stack([cols[cols != c] for c in labels])


def nkd_teacher_weights(teacher_logits, labels, tau: float) -> np.ndarray:
    """Teacher's temperature softmax renormalized over the non-target classes."""
    t = constant(teacher_logits)
    idx = _non_target_index(np.asarray(labels, dtype=np.intp), t.shape[1])
    return temp_softmax(np.take_along_axis(t, idx, axis=1), tau)


def nkd_loss(batch: DistillBatch, hp: KDHyperparams) -> Tensor:
    """Normalized KD in cross-entropy form.

    Target term ``-t_c log s_c`` at temperature 1, plus
    ``-gamma tau^2 sum_{k != c} N(t)_k log N(s)_k`` where ``N`` renormalizes
    the temperature-tau softmax over the K-1 non-target classes. Softmax over
    the non-target logits alone is exactly that renormalization.
    """
    k = batch.num_classes
    if k < 2:
        raise DomainError("NKD needs at least two classes")
    s = batch.student_logits
    labels = batch.labels
    b = s.shape[0]
    t_probs = temp_softmax(constant(batch.teacher_logits), 1.0)
    t_target = t_probs[np.arange(b), labels][:, None]
    log_s_target = take_rows(log_softmax(s, 1.0), labels[:, None])
    loss = -(log_s_target * t_target).sum() * (1.0 / b)
    if hp.gamma == 0.0:
        return loss
    idx = _non_target_index(labels, k)
    t_nt = nkd_teacher_weights(batch.teacher_logits, labels, hp.tau)
    log_s_nt = log_softmax(take_rows(s, idx), hp.tau)
    non_target = (log_s_nt * t_nt).sum() * (-hp.gamma * hp.tau**2 / b)
    return loss + non_target


def feature_mse(projected: Tensor, teacher_features) -> Tensor:
    """Squared error summed over feature axes, averaged over the batch."""
    t = constant(teacher_features)
    if projected.shape != t.shape:
        raise DomainError(
            f"projected student features {projected.shape} do not match teacher {t.shape}"
        )
    diff = projected - t
    return (diff * diff).sum() * (1.0 / projected.shape[0])


def fitnet_loss(pair: FeaturePair, projector: Projector) -> Tensor:
    return feature_mse(projector(pair.student_features), pair.teacher_features)


def simkd_loss(pair: FeaturePair, projector: Projector) -> Tensor:
    """Feature alignment at the penultimate layer; ``pair`` must hold those features."""
    return feature_mse(projector(pair.student_features), pair.teacher_features)


@dataclass(frozen=True)
class TeacherHead:
    """Frozen linear classifier ``logits = features @ weight + bias``."""

    weight: np.ndarray
    bias: np.ndarray

    def checksum(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.weight).tobytes())
        h.update(np.ascontiguousarray(self.bias).tobytes())
        return h.hexdigest()


def simkd_infer(student_penultimate, projector: Projector, head: TeacherHead) -> np.ndarray:
    """Logits from the teacher classifier applied to projected student features.

    Spatial projector outputs (B x C x H x W) are average-pooled to B x C first.
    """
    feats = constant(projector(Tensor(constant(student_penultimate))))
    if feats.ndim == 4:
        feats = feats.mean(axis=(2, 3))
    elif feats.ndim != 2:
        raise DomainError(f"cannot classify projected features of shape {feats.shape}")
    w = np.asarray(head.weight, dtype=np.float64)
    if feats.shape[1] != w.shape[0]:
        raise DomainError(
            f"projected dimension {feats.shape[1]} != teacher classifier input {w.shape[0]}"
        )
    return feats @ w + np.asarray(head.bias, dtype=np.float64)
