"""Randomized analytic-vs-finite-difference gradient checks for every loss."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DomainError
from .losses import (
    DistillBatch,
    FeaturePair,
    KDHyperparams,
    fitnet_loss,
    mse_logit_loss,
    nkd_loss,
    simkd_loss,
    vanilla_kd_loss,
)
from .projector import make_projector, seeded_rng
from .tensor import GradTape, Tensor, backward, finite_difference_grad, max_relative_error

LOSSES = ("vanilla", "mse", "nkd", "fitnet", "simkd")


def _check(loss_of: Callable[[], Tensor], tensors: list[Tensor], eps: float) -> float:
    """Max relative error over every tensor in ``tensors``."""
    for t in tensors:
        t.grad = None
    with GradTape() as tape:
        loss = loss_of()
    backward(loss, tape)
    worst = 0.0
    for t in tensors:
        def f(values, t=t):
            saved = t.data
            t.data = values
            try:
                return loss_of().item()
            finally:
                t.data = saved

        numeric = finite_difference_grad(f, t, eps)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def _logit_instance(name: str, rng: np.random.Generator, eps: float) -> float:
    b, k = int(rng.integers(1, 5)), int(rng.integers(2, 9))
    student = Tensor(rng.normal(scale=2.0, size=(b, k)), requires_grad=True)
    teacher = rng.normal(scale=2.0, size=(b, k))
    labels = rng.integers(0, k, size=b)
    hp = KDHyperparams(
        alpha=float(rng.uniform(0, 1)),
        tau=float(rng.uniform(1, 5)),
        gamma=float(rng.uniform(0, 2)),
    )
    fn = {"vanilla": vanilla_kd_loss, "nkd": nkd_loss}.get(name)

    def loss_of():
        batch = DistillBatch(student, teacher, labels)
        return mse_logit_loss(batch) if name == "mse" else fn(batch, hp)

    return _check(loss_of, [student], eps)


def _feature_instance(name: str, rng: np.random.Generator, eps: float, trial: int) -> float:
    b = int(rng.integers(1, 5))
    seed = int(rng.integers(0, 2**31))
    if name == "simkd" and trial % 2 == 1:
        # token features folded to a 2x2 grid behind a dropped pooled token
        d_s, c_t = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        proj = make_projector("conv_reshape", (5, d_s), (c_t,), seed=seed)
        student = Tensor(rng.normal(size=(b, 5, d_s)), requires_grad=True)
        teacher = rng.normal(size=(b, c_t, 2, 2))
    else:
        d_s, d_t = int(rng.integers(1, 17)), int(rng.integers(1, 17))
        proj = make_projector("linear_cls", (d_s,), (d_t,), seed=seed)
        student = Tensor(rng.normal(size=(b, d_s)), requires_grad=True)
        teacher = rng.normal(size=(b, d_t))
    fn = fitnet_loss if name == "fitnet" else simkd_loss

    def loss_of():
        return fn(FeaturePair(student, teacher), proj)

    return _check(loss_of, [student, *proj.parameters()], eps)


def check_loss(name: str, trials: int = 50, eps: float = 1e-5, seed: int = 0) -> float:
    """Worst relative gradient error of loss ``name`` over ``trials`` random instances."""
    if name not in LOSSES:
        raise DomainError(f"unknown loss {name!r}; expected one of {LOSSES}")
    rng = seeded_rng(seed)
    worst = 0.0
    for trial in range(trials):
        if name in ("fitnet", "simkd"):
            err = _feature_instance(name, rng, eps, trial)
        else:
            err = _logit_instance(name, rng, eps)
        worst = max(worst, err)
    return worst
