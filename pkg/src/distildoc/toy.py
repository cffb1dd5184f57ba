"""Desk-scale teacher/student MLPs on synthetic Gaussian blobs.

These stand in for full-size vision backbones so every distillation
objective can be trained end to end in a few seconds.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .losses import (
    DistillBatch,
    FeaturePair,
    KDHyperparams,
    TeacherHead,
    fitnet_loss,
    mse_logit_loss,
    nkd_loss,
    simkd_infer,
    simkd_loss,
    supervised_ce,
    vanilla_kd_loss,
)
from .metrics import PredictionRecord
from .projector import Projector, make_projector, seeded_rng, uniform_init
from .tensor import GradTape, Tensor, backward, temp_softmax

log = logging.getLogger(__name__)

METHODS = ("ce", "vanilla", "nkd", "mse", "fitnet", "simkd")


@dataclass
class SyntheticDataset:
    points: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int

    def __len__(self) -> int:
        return self.labels.shape[0]


def gen_gaussian_blobs(k: int, n_per_class: int, spread: float, seed: int) -> SyntheticDataset:
    """K isotropic clusters centred on the unit circle at angles 2*pi*k/K."""
    if k < 2:
        raise DomainError(f"need at least two classes, got {k}")
    if n_per_class < 1:
        raise DomainError("n_per_class must be positive")
    if not spread > 0:
        raise DomainError(f"spread must be positive, got {spread}")
    rng = seeded_rng(seed)
    centers = blob_centers(k)
    labels = np.repeat(np.arange(k), n_per_class)
    points = centers[labels] + spread * rng.standard_normal((labels.size, 2))
    return SyntheticDataset(points, labels, k, seed)


def blob_centers(k: int) -> np.ndarray:
    angles = 2 * np.pi * np.arange(k) / k
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


@dataclass
class MlpOutput:
    logits: Tensor
    hidden: list[Tensor]

    @property
    def penultimate(self) -> Tensor:
        return self.hidden[-1]


@dataclass
class Mlp:
    """tanh MLP; ``layer_dims`` runs from input size to class count."""

    layer_dims: tuple[int, ...]
    weights: list[Tensor]
    biases: list[Tensor]

    @classmethod
    def init(cls, layer_dims, seed: int) -> "Mlp":
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 3:
            raise DomainError("an MLP needs input, at least one hidden layer and output")
        rng = seeded_rng(seed)
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            weights.append(Tensor(uniform_init(rng, (d_in, d_out), d_in), requires_grad=True))
            biases.append(Tensor(uniform_init(rng, (d_out,), d_in), requires_grad=True))
        return cls(dims, weights, biases)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def forward(self, x) -> MlpOutput:
        h = x if isinstance(x, Tensor) else Tensor(x)
        hidden = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = (h @ w + b).tanh()
            hidden.append(h)
        return MlpOutput(h @ self.weights[-1] + self.biases[-1], hidden)

    def parameters(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def head(self) -> TeacherHead:
        return TeacherHead(self.weights[-1].data.copy(), self.biases[-1].data.copy())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)


def default_hint_layer(num_layers: int) -> int:
    """Middle layer index (1-based) for FitNet hints."""
    return max(1, num_layers // 2)


@dataclass
class TrainConfig:
    method: str = "ce"
    hyperparams: KDHyperparams = field(default_factory=KDHyperparams)
    projector_kind: str = "linear_cls"
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    hint_layer: int | None = None

    def __post_init__(self):
        self.method = self.method.lower()
        self.projector_kind = self.projector_kind.replace("-", "_")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainResult:
    model: Mlp
    loss_trace: list[float]
    projector: Projector | None = None


def _feature_projector(cfg: TrainConfig, student: Mlp, teacher: Mlp, layer: int) -> Projector:
    d_s = student.layer_dims[layer]
    d_t = teacher.layer_dims[layer]
    if cfg.projector_kind == "conv_reshape":
        raise ConfigurationError(
            "conv_reshape needs token-sequence features; the MLP exposes flat vectors"
        )
    kind = cfg.projector_kind
    if kind == "identity" and d_s != d_t:
        raise ConfigurationError(f"identity projector cannot map width {d_s} to {d_t}")
    return make_projector(kind, (d_s,), (d_t,), seed=cfg.seed)


def train(
    model: Mlp,
    data: SyntheticDataset,
    cfg: TrainConfig,
    teacher: Mlp | None = None,
) -> TrainResult:
    """Plain minibatch SGD on a copy of ``model``; the teacher is never updated."""
    if cfg.method != "ce" and teacher is None:
        raise ConfigurationError(f"method {cfg.method!r} needs a teacher")
    student = model.copy()
    hp = cfg.hyperparams
    projector = None
    layer = None
    if cfg.method in ("fitnet", "simkd"):
        if student.num_layers != teacher.num_layers:
            raise ConfigurationError("feature distillation expects equal-depth teacher and student")
        if cfg.method == "simkd":
            layer = student.num_layers - 1
        else:
            layer = cfg.hint_layer or default_hint_layer(student.num_layers)
            if not 1 <= layer < student.num_layers:
                raise ConfigurationError(f"hint layer {layer} is not a hidden layer")
        projector = _feature_projector(cfg, student, teacher, layer)

    params = student.parameters() + (projector.parameters() if projector else [])
    rng = seeded_rng(cfg.seed)
    n = len(data)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = data.points[idx], data.labels[idx]
            t_out = teacher.forward(xb) if teacher is not None else None
            with GradTape() as tape:
                out = student.forward(xb)
                loss = _objective(cfg, hp, out, t_out, yb, projector, layer)
            backward(loss, tape)
            for p in params:
                if p.grad is not None:
                    p.data -= cfg.learning_rate * p.grad
                p.grad = None
            total += loss.item() * idx.size
            count += idx.size
        trace.append(total / count)
        if not math.isfinite(trace[-1]):
            log.warning("non-finite loss at epoch %d (%s)", epoch, cfg.method)
    return TrainResult(student, trace, projector)


def _objective(cfg, hp, out: MlpOutput, t_out, labels, projector, layer) -> Tensor:
    method = cfg.method
    if method == "ce":
        return supervised_ce(out.logits, labels)
    batch = DistillBatch(out.logits, t_out.logits.data, labels)
    if method == "vanilla":
        return vanilla_kd_loss(batch, hp)
    if method == "nkd":
        return nkd_loss(batch, hp)
    if method == "mse":
        return mse_logit_loss(batch)
    pair = FeaturePair(out.hidden[layer - 1], t_out.hidden[layer - 1].data, hint_layer=layer)
    if method == "fitnet":
        return supervised_ce(out.logits, labels) + fitnet_loss(pair, projector)
    return simkd_loss(pair, projector)


@dataclass(frozen=True)
class SimkdReuse:
    """Inference through the trained projector and the frozen teacher head."""

    projector: Projector
    teacher_head: TeacherHead


def predict_logits(model: Mlp, points, inference: SimkdReuse | None = None) -> np.ndarray:
    out = model.forward(points)
    if inference is None:
        return out.logits.data
    return simkd_infer(out.penultimate.data, inference.projector, inference.teacher_head)


def evaluate(
    model: Mlp, data: SyntheticDataset, inference: SimkdReuse | None = None
) -> list[PredictionRecord]:
    probs = temp_softmax(predict_logits(model, data.points, inference), 1.0)
    return [PredictionRecord.from_probabilities(p, y) for p, y in zip(probs, data.labels)]


def argmax_agreement(a: list[PredictionRecord], b: list[PredictionRecord]) -> float:
    if len(a) != len(b) or not a:
        raise DomainError("agreement needs two equally long, non-empty record lists")
    return float(np.mean([ra.prediction == rb.prediction for ra, rb in zip(a, b)]))


@dataclass
class DistillRun:
    """Teacher, CE-only student and KD student trained on one blobs task."""

    teacher: TrainResult
    ce_student: TrainResult
    kd_student: TrainResult
    method: str
    test_data: SyntheticDataset

    @property
    def kd_inference(self) -> SimkdReuse | None:
        if self.method != "simkd":
            return None
        return SimkdReuse(self.kd_student.projector, self.teacher.model.head)

    def records(self) -> dict[str, list[PredictionRecord]]:
        return {
            "teacher": evaluate(self.teacher.model, self.test_data),
            "ce_student": evaluate(self.ce_student.model, self.test_data),
            "kd_student": evaluate(self.kd_student.model, self.test_data, self.kd_inference),
        }


def distill_experiment(
    cfg: TrainConfig,
    *,
    num_classes: int = 3,
    n_per_class: int = 300,
    spread: float = 0.15,
    teacher_width: int = 64,
    student_width: int = 8,
) -> DistillRun:
    """Train teacher, CE student and ``cfg.method`` student from one seed.

    Held-out data uses seed ``cfg.seed + 1000``; students share an
    initialization so the CE and KD runs differ only in their objective.
    """
    runs = distill_sweep(
        [cfg],
        num_classes=num_classes,
        n_per_class=n_per_class,
        spread=spread,
        teacher_width=teacher_width,
        student_width=student_width,
    )
    return runs[0]


def distill_sweep(
    cfgs: Sequence[TrainConfig],
    *,
    num_classes: int = 3,
    n_per_class: int = 300,
    spread: float = 0.15,
    teacher_width: int = 64,
    student_width: int = 8,
) -> list[DistillRun]:
    """Like :func:`distill_experiment` for several methods sharing one seed.

    Teacher and CE student are trained once, with the optimizer settings of
    the first config, and reused by every run.
    """
    if not cfgs:
        raise ConfigurationError("distill_sweep needs at least one config")
    seed = cfgs[0].seed
    if any(c.seed != seed for c in cfgs):
        raise ConfigurationError("every config in a sweep must share one seed")
    train_data = gen_gaussian_blobs(num_classes, n_per_class, spread, seed)
    test_data = gen_gaussian_blobs(num_classes, n_per_class, spread, seed + 1000)
    teacher_cfg = dataclasses.replace(cfgs[0], method="ce")
    teacher = train(Mlp.init((2, teacher_width, teacher_width, num_classes), seed), train_data, teacher_cfg)
    student0 = Mlp.init((2, student_width, student_width, num_classes), seed + 1)
    ce = train(student0, train_data, teacher_cfg)
    runs = []
    for cfg in cfgs:
        kd = ce if cfg.method == "ce" else train(student0, train_data, cfg, teacher.model)
        runs.append(DistillRun(teacher, ce, kd, cfg.method, test_data))
    return runs
