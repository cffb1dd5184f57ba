"""Trainable projectors aligning student features with teacher features.

Three kinds:

``identity``
    no parameters; shapes must already agree.
``linear_cls``
    one affine map on the pooled token (B x D_s, or token 0 of B x T x D_s).
``conv_reshape``
    drop the pooled token, fold the remaining T tokens into a sqrt(T) x sqrt(T)
    grid with the hidden size as channels, then one 3x3 same-padded
    convolution to the teacher's channel count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .tensor import Tensor, as_tensor, matmul, record_op

KINDS = ("identity", "linear_cls", "conv_reshape")
KERNEL = 3


def seeded_rng(seed: int) -> np.random.Generator:
    """The package's single PRNG: numpy's PCG64 bit generator."""
    return np.random.Generator(np.random.PCG64(seed))


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def grid_side(tokens: int) -> int:
    side = math.isqrt(tokens)
    if side * side != tokens:
        raise DomainError(f"{tokens} tokens do not fold into a square grid")
    return side


def tokens_to_grid(features, drop_cls: bool = True):
    """B x T x D token features -> B x D x H x W maps (works on arrays and tensors)."""
    x = as_tensor(features) if isinstance(features, Tensor) else np.asarray(features, float)
    if x.ndim != 3:
        raise DomainError(f"expected B x T x D features, got {x.shape}")
    if drop_cls:
        x = x[:, 1:, :]
    b, t, d = x.shape
    side = grid_side(t)
    return x.transpose(0, 2, 1).reshape(b, d, side, side)


def _im2col(x: Tensor) -> Tensor:
    """B x C x H x W -> (B*H*W) x (C*9) patches for a 3x3 same-padded conv."""
    b, c, h, w = x.shape
    pad = KERNEL // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, h, w, c, KERNEL, KERNEL))
    for i in range(KERNEL):
        for j in range(KERNEL):
            cols[:, :, :, :, i, j] = xp[:, :, i : i + h, j : j + w].transpose(0, 2, 3, 1)

    def grad(g):
        g = g.reshape(b, h, w, c, KERNEL, KERNEL)
        gp = np.zeros_like(xp)
        for i in range(KERNEL):
            for j in range(KERNEL):
                gp[:, :, i : i + h, j : j + w] += g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return (gp[:, :, pad : pad + h, pad : pad + w],)

    return record_op(cols.reshape(b * h * w, c * KERNEL * KERNEL), (x,), grad)


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-padded stride-1 convolution; weight is C_out x C_in x 3 x 3."""
    b, _, h, w = x.shape
    c_out = weight.shape[0]
    cols = _im2col(as_tensor(x))
    out = matmul(cols, weight.reshape(c_out, -1).T) + bias
    return out.reshape(b, h, w, c_out).transpose(0, 3, 1, 2)


@dataclass
class Projector:
    kind: str
    student_shape: tuple[int, ...]
    teacher_shape: tuple[int, ...]
    seed: int = 0
    drop_cls: bool = True
    params: dict[str, Tensor] = field(default_factory=dict)

    def __call__(self, features) -> Tensor:
        x = as_tensor(features)
        if tuple(x.shape[1:]) != tuple(self.student_shape):
            raise DomainError(
                f"{self.kind} projector expects per-sample shape {self.student_shape}, "
                f"got {x.shape[1:]}"
            )
        if self.kind == "identity":
            return x
        if self.kind == "linear_cls":
            if x.ndim == 3:
                x = x[:, 0, :]
            return x @ self.params["weight"] + self.params["bias"]
        grid = tokens_to_grid(x, self.drop_cls)
        return conv3x3(grid, self.params["weight"], self.params["bias"])

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    @property
    def output_shape(self) -> tuple[int, ...]:
        if self.kind == "conv_reshape":
            t = self.student_shape[0] - (1 if self.drop_cls else 0)
            side = grid_side(t)
            return (self.teacher_shape[0], side, side)
        return tuple(self.teacher_shape)


def make_projector(
    kind: str,
    student_shape,
    teacher_shape,
    seed: int = 0,
    drop_cls: bool = True,
) -> Projector:
    """Build a projector with parameters drawn uniformly in +-1/sqrt(fan_in).

    Shapes exclude the batch axis. For ``conv_reshape`` the student shape is
    ``(T, D)`` and the teacher shape ``(C,)`` or ``(C, H, W)``.
    """
    kind = kind.replace("-", "_")
    if kind not in KINDS:
        raise DomainError(f"unknown projector kind {kind!r}; expected one of {KINDS}")
    student_shape = tuple(int(n) for n in np.atleast_1d(student_shape))
    teacher_shape = tuple(int(n) for n in np.atleast_1d(teacher_shape))
    rng = seeded_rng(seed)
    params: dict[str, np.ndarray] = {}

    if kind == "identity":
        if student_shape != teacher_shape:
            raise DomainError(f"identity projector needs equal shapes, got {student_shape} -> {teacher_shape}")
    elif kind == "linear_cls":
        if len(student_shape) not in (1, 2) or len(teacher_shape) != 1:
            raise DomainError("linear_cls maps D_s (or T x D_s) features to D_t")
        d_s, d_t = student_shape[-1], teacher_shape[0]
        params["weight"] = uniform_init(rng, (d_s, d_t), d_s)
        params["bias"] = uniform_init(rng, (d_t,), d_s)
    else:
        if len(student_shape) != 2:
            raise DomainError("conv_reshape expects student features shaped T x D")
        t, d = student_shape
        side = grid_side(t - 1 if drop_cls else t)
        c_t = teacher_shape[0]
        if len(teacher_shape) == 3 and teacher_shape[1:] != (side, side):
            raise DomainError(f"teacher grid {teacher_shape[1:]} != student grid {(side, side)}")
        if len(teacher_shape) not in (1, 3):
            raise DomainError("conv_reshape teacher shape must be (C,) or (C, H, W)")
        teacher_shape = (c_t, side, side)
        fan_in = d * KERNEL * KERNEL
        params["weight"] = uniform_init(rng, (c_t, d, KERNEL, KERNEL), fan_in)
        params["bias"] = uniform_init(rng, (c_t,), fan_in)

    return Projector(
        kind=kind,
        student_shape=student_shape,
        teacher_shape=teacher_shape,
        seed=seed,
        drop_cls=drop_cls,
        params={k: Tensor(v, requires_grad=True) for k, v in params.items()},
    )
