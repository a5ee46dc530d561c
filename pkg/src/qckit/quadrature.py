"""Quadrature weights attached to the input points of a layer."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, softplus
from .errors import ConfigurationError, UnsupportedMeshError
from .mesh import Mesh


def softplus_inverse(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0):
        raise ConfigurationError("softplus inverse needs strictly positive values")
    # log(exp(v) - 1) written to stay accurate for both small and large v
    return v + np.log(-np.expm1(-v))


class QuadratureWeights:
    """Strictly positive weights, either fixed or ``softplus(raw)`` with trainable raw."""

    def __init__(self, rho=None, raw=None, dtype=np.float64):
        if (rho is None) == (raw is None):
            raise ConfigurationError("give exactly one of rho (static) or raw (learned)")
        if raw is not None:
            self.mode = "learned"
            self.raw = Tensor(np.asarray(raw, dtype=dtype), requires_grad=True, name="quadrature.raw")
            self._rho = None
        else:
            rho = np.asarray(rho, dtype=dtype)
            if not np.all(rho > 0):
                raise ConfigurationError("static quadrature weights must be strictly positive")
            self.mode = "static"
            self.raw = None
            self._rho = rho

    @property
    def rho(self) -> np.ndarray:
        if self.mode == "learned":
            dt = self.raw.dtype
            return np.logaddexp(0.0, self.raw.value).astype(dt) + np.finfo(dt).tiny
        return self._rho

    def __len__(self):
        return len(self.rho)

    def tensor(self) -> Tensor:
        """Weights as a tape-aware tensor (differentiable in learned mode)."""
        if self.mode == "learned":
            # the floor keeps underflowed weights strictly positive; it is below
            # one ulp of any normal weight, so it never changes a stored value
            return add(softplus(self.raw), np.finfo(self.raw.dtype).tiny)
        return Tensor(self._rho)

    def parameters(self):
        return [self.raw] if self.mode == "learned" else []

    def astype(self, dtype):
        if self.mode == "learned":
            return QuadratureWeights(raw=self.raw.value.astype(dtype), dtype=dtype)
        return QuadratureWeights(rho=self._rho.astype(dtype), dtype=dtype)


def trapezoid_1d(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def trapezoid_nonuniform(x) -> np.ndarray:
    """Composite trapezoid weights for sorted, distinct 1-D nodes ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ConfigurationError("need at least two 1-D nodes")
    gaps = np.diff(x)
    if np.any(gaps <= 0):
        raise ConfigurationError("nodes must be strictly increasing")
    w = np.zeros(len(x))
    w[:-1] += gaps / 2
    w[1:] += gaps / 2
    return w


def newton_cotes_weights(mesh: Mesh) -> QuadratureWeights:
    """Composite two-point (trapezoid) rule, tensor-producted over the axes."""
    if not mesh.is_grid:
        raise UnsupportedMeshError("Newton-Cotes weights need a uniform grid mesh")
    w1 = trapezoid_1d(mesh.n_per_dim, mesh.spacing)
    w = w1
    for _ in range(mesh.dim - 1):
        w = np.multiply.outer(w, w1)
    return QuadratureWeights(rho=w.ravel())


def init_learned_weights(mesh: Mesh, fallback_volume: float = 1.0) -> QuadratureWeights:
    """Learned weights starting from the static rule, or an equal volume split."""
    if not fallback_volume > 0:
        raise ConfigurationError("fallback_volume must be positive")
    if mesh.is_grid:
        start = newton_cotes_weights(mesh).rho
    else:
        start = np.full(mesh.count, fallback_volume / mesh.count)
    return QuadratureWeights(raw=softplus_inverse(start))
