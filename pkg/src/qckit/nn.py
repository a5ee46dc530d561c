"""Neural building blocks on top of the tape: dense layers, grid pooling, Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, TrainingError


def uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """Affine map ``x @ W + b`` acting on the last axis."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64, name="linear"):
        self.n_in = n_in
        self.n_out = n_out
        self.weight = Tensor(uniform_init(rng, n_in, (n_in, n_out), dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(uniform_init(rng, n_in, (n_out,), dtype), requires_grad=True, name=f"{name}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear layer expects {self.n_in} features, got {x.shape[-1]}")
        return ad.add(ad.matmul(x, self.weight), self.bias)


def grid_side(n_points: int, dim: int) -> int:
    side = int(round(n_points ** (1.0 / dim)))
    if side**dim != n_points:
        raise ShapeError(f"{n_points} points do not form a {dim}-D square grid")
    return side


def _window_axes(lead: tuple, side: int, dim: int, window: int):
    # (..., s/w, w, s/w, w, ...) -> (..., s/w, ..., w, ...): window axes moved last
    blocked = lead + (side // window, window) * dim
    nl = len(lead)
    coarse = [nl + 2 * k for k in range(dim)]
    fine = [nl + 2 * k + 1 for k in range(dim)]
    perm = list(range(nl)) + coarse + fine
    return blocked, perm


def maxpool_grid(x: Tensor, dim: int, window: int = 2):
    """Channel-wise max over ``window**dim`` blocks of a lexicographic grid.

    ``x`` has shape ``(..., C, side**dim)``.  Returns the pooled tensor and the
    argmax of each block (flat position within the block).
    """
    n = x.shape[-1]
    side = grid_side(n, dim)
    if side % window:
        raise ShapeError(f"grid side {side} not divisible by window {window}")
    lead = x.shape[:-1]
    blocked, perm = _window_axes(lead, side, dim, window)
    m = (side // window) ** dim
    blocks = x.value.reshape(blocked).transpose(perm).reshape(lead + (m, window**dim))
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    inv = np.argsort(perm)

    def bw(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        shaped = gb.reshape(lead + (side // window,) * dim + (window,) * dim)
        return (shaped.transpose(inv).reshape(x.shape),)

    return ad.record(out, (x,), bw), arg


def unpool_grid(x: Tensor, dim: int, window: int = 2) -> Tensor:
    """Nearest-neighbour replication of each coarse value over its block."""
    m = x.shape[-1]
    coarse = grid_side(m, dim)
    side = coarse * window
    lead = x.shape[:-1]
    expanded = x.value.reshape(lead + (coarse, 1) * dim)
    out = np.broadcast_to(expanded, lead + (coarse, window) * dim).reshape(lead + (side**dim,))

    def bw(g):
        blocks = g.reshape(lead + (coarse, window) * dim)
        axes = tuple(len(lead) + 2 * k + 1 for k in range(dim))
        return (blocks.sum(axis=axes).reshape(x.shape),)

    return ad.record(np.ascontiguousarray(out), (x,), bw)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """Bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient in parameter {k} (shape {g.shape}) at step {state.t + 1}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


class Adam:
    """Adam over a list of tensors; missing grads count as zero."""

    def __init__(self, params: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in self.params]
        adam_step(self.state, [p.value for p in self.params], grads)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
