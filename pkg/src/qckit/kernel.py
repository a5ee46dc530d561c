"""Compactly supported filters ``G(z) = bump(z) * H(z; theta)``.

``H`` maps an offset ``z`` in R^D to a ``(C_out, C_in)`` matrix.  The learned
form is a small MLP; :class:`FixedKernel` wraps a hand-written function for
analytic comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ShapeError
from .index_map import OpCounter, norms
from .nn import uniform_init

ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu, "softplus": ad.softplus}


@dataclass(frozen=True)
class BumpParams:
    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ConfigurationError(f"bump radius must be positive, got {self.alpha}")


def bump(z, alpha: float):
    """Smooth bump of radius ``alpha``; 1 at the origin, exactly 0 for ``|z| >= alpha``.

    Accepts a single offset ``(D,)`` or a stack ``(..., D)``.
    """
    z = np.asarray(z, dtype=np.float64)
    r = norms(z) / alpha
    inside = r < 1.0
    # branch before forming 1/(1 - r^4) so the boundary never overflows
    r4 = np.where(inside, r, 0.0) ** 4
    val = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - r4)), 0.0)
    return float(val) if val.ndim == 0 else val


def bump_tensor(z: Tensor, alpha: float) -> Tensor:
    """Differentiable bump over a ``(P, D)`` stack of offsets."""
    zv = z.value
    r = norms(zv) / alpha
    inside = r < 1.0
    rin = np.where(inside, r, 0.0)
    denom = 1.0 - rin**4
    b = np.where(inside, np.exp(1.0 - 1.0 / denom), 0.0).astype(zv.dtype)

    def bw(g):
        coef = np.where(inside, -4.0 * b * rin**2 / (alpha**2 * denom**2), 0.0)
        return ((g * coef)[..., None] * zv,)

    return ad.record(b, (z,), bw)


class KernelMLP:
    """Single MLP ``H: R^D -> R^(rows x cols)``; hidden layers use ``activation``."""

    def __init__(
        self,
        input_dim: int,
        out_rows: int,
        out_cols: int,
        hidden: Sequence[int] = (32, 32),
        activation: str = "tanh",
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = input_dim
        self.out_rows = out_rows
        self.out_cols = out_cols
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        widths = (input_dim,) + self.hidden + (out_rows * out_cols,)
        self.layers = []
        for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            W = Tensor(uniform_init(rng, a, (a, b), dtype), requires_grad=True, name=f"mlp.{k}.weight")
            c = Tensor(uniform_init(rng, a, (b,), dtype), requires_grad=True, name=f"mlp.{k}.bias")
            self.layers.append((W, c))

    @staticmethod
    def count_parameters(input_dim, out_rows, out_cols, hidden) -> int:
        widths = (input_dim,) + tuple(hidden) + (out_rows * out_cols,)
        return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer]

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.parameters()])

    @theta.setter
    def theta(self, flat):
        flat = np.asarray(flat)
        if flat.size != self.theta.size:
            raise ShapeError(f"theta has {self.theta.size} entries, got {flat.size}")
        pos = 0
        for p in self.parameters():
            p.value = flat[pos : pos + p.size].reshape(p.shape).astype(p.dtype)
            pos += p.size

    def __call__(self, z: Tensor) -> Tensor:
        """Evaluate on a ``(P, D)`` stack; returns ``(P, rows * cols)``."""
        if z.shape[-1] != self.input_dim:
            raise ShapeError(f"kernel expects {self.input_dim}-D offsets, got {z.shape[-1]}")
        act = ACTIVATIONS[self.activation]
        h = z
        for k, (W, c) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, W), c)
            if k < len(self.layers) - 1:
                h = act(h)
        return h


class FixedKernel:
    """Non-learned ``H`` from a function ``fn(offsets (P, D)) -> (P, rows, cols)``."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], input_dim: int, out_rows=1, out_cols=1):
        self.fn = fn
        self.input_dim = input_dim
        self.out_rows = out_rows
        self.out_cols = out_cols

    def parameters(self):
        return []

    def __call__(self, z: Tensor) -> Tensor:
        vals = np.asarray(self.fn(z.value), dtype=z.dtype)
        return Tensor(vals.reshape(len(z.value), self.out_rows * self.out_cols))


def mlp_eval(net, z) -> np.ndarray:
    """``H(z)`` for a single offset, as a ``(rows, cols)`` matrix."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (net.input_dim,):
        raise ShapeError(f"offset must have shape ({net.input_dim},), got {z.shape}")
    out = net(Tensor(z[None, :]))
    return out.value.reshape(net.out_rows, net.out_cols)


def filter_eval(net, params: BumpParams, z, counter: OpCounter | None = None) -> np.ndarray:
    """``G(z)``; the MLP is not evaluated outside the support."""
    z = np.asarray(z, dtype=np.float64)
    if norms(z) >= params.alpha:
        return np.zeros((net.out_rows, net.out_cols))
    b = bump(z, params.alpha)
    if counter is not None:
        counter.add(kernel_evals=1)
    return b * mlp_eval(net, z)
