"""The quadrature convolution layer.

For output point ``y_j``::

    out[:, j] = sum_{i in support(j)} rho_i * bump(y_j - x_i) * H(y_j - x_i) @ f[:, i]

The support lists come from a cached :class:`~qckit.index_map.IndexMap`; the
offsets ``y_j - x_i`` and their bump values are mesh-static and computed once
per layer.  ``H`` is re-evaluated on every pass because its parameters move.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.ndimage as ndi

from . import autodiff as ad
from .autodiff import IndexPlan, Tensor
from .errors import ConfigurationError, ContractError, ShapeError, UnsupportedMeshError
from .index_map import IndexMap, OpCounter, build_index_map, cached_index_map, choose_alpha
from .kernel import BumpParams, KernelMLP, bump
from .mesh import Mesh
from .quadrature import QuadratureWeights, init_learned_weights, newton_cotes_weights

log = logging.getLogger(__name__)


def make_weights(mesh: Mesh, mode, fallback_volume: float = 1.0) -> QuadratureWeights:
    """``static`` (trapezoid on grids), ``learned``, ``constant:<c>``, or an instance."""
    if isinstance(mode, QuadratureWeights):
        return mode
    if mode == "static":
        return newton_cotes_weights(mesh)
    if mode == "learned":
        return init_learned_weights(mesh, fallback_volume)
    if isinstance(mode, str) and mode.startswith("constant:"):
        return QuadratureWeights(rho=np.full(mesh.count, float(mode.split(":", 1)[1])))
    raise ConfigurationError(f"unknown quadrature weight mode {mode!r}")


class QuadConvLayer:
    def __init__(
        self,
        input_mesh: Mesh,
        output_mesh: Mesh,
        in_channels: int,
        out_channels: int,
        alpha: float | None = None,
        target_S: float | None = None,
        kernel=None,
        weights="static",
        index_map: IndexMap | None = None,
        bias: bool = False,
        hidden=(32, 32),
        activation: str = "tanh",
        rng: np.random.Generator | None = None,
        dtype=np.float64,
        counter: OpCounter | None = None,
        cache: bool | str = False,
        fallback_volume: float = 1.0,
    ):
        if input_mesh.dim != output_mesh.dim:
            raise ConfigurationError("input and output meshes live in different dimensions")
        if alpha is None:
            if target_S is None:
                raise ConfigurationError("give alpha or target_S")
            alpha = choose_alpha(input_mesh, output_mesh, target_S)
        self.input_mesh = input_mesh
        self.output_mesh = output_mesh
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.bump = BumpParams(float(alpha))
        self.dtype = np.dtype(dtype)
        self.cache_hit = False

        if index_map is None:
            if cache:
                directory = None if cache is True else cache
                index_map, self.cache_hit = cached_index_map(
                    input_mesh, output_mesh, self.alpha, counter, directory=directory
                )
            else:
                index_map = build_index_map(input_mesh, output_mesh, self.alpha, counter)
        self._check_map(index_map)
        self.map = index_map

        rows = index_map.rows()
        cols = index_map.indices
        offsets = output_mesh.points[rows] - input_mesh.points[cols]
        self.offsets = offsets.astype(self.dtype)
        self.bump_values = bump(offsets, self.alpha).astype(self.dtype)
        self._gather = IndexPlan(cols, input_mesh.count)
        self._scatter = IndexPlan(rows, output_mesh.count)

        if kernel is None:
            kernel = KernelMLP(
                input_mesh.dim, out_channels, in_channels, hidden=hidden, activation=activation, rng=rng, dtype=self.dtype
            )
        if (kernel.out_rows, kernel.out_cols) != (out_channels, in_channels):
            raise ShapeError(
                f"kernel produces {kernel.out_rows}x{kernel.out_cols} filters, layer needs {out_channels}x{in_channels}"
            )
        self.kernel = kernel
        self.weights = make_weights(input_mesh, weights, fallback_volume).astype(self.dtype)
        if len(self.weights) != input_mesh.count:
            raise ShapeError("one quadrature weight per input point is required")
        self.bias = Tensor(np.zeros((out_channels, 1), dtype=self.dtype), requires_grad=True, name="bias") if bias else None
        self.scale = 1.0

    def normalize(self) -> float:
        """Fix a constant factor so the mean of ``sum_i rho_i * bump_ij`` over outputs is 1.

        Trapezoid weights on fine grids are tiny, which would otherwise leave
        every layer's response near zero at initialisation.  The factor is
        frozen at call time and does not follow later changes to ``rho``.
        """
        mass = self._scatter.scatter(self.weights.rho[self.map.indices] * self.bump_values, axis=0)
        m = float(np.mean(mass))
        self.scale = 1.0 / m if m > 0 else 1.0
        return self.scale

    @property
    def alpha(self) -> float:
        return self.bump.alpha

    def _check_map(self, imap: IndexMap):
        if imap.alpha != self.alpha:
            raise ContractError(f"index map built for alpha={imap.alpha}, layer uses {self.alpha}")
        if imap.n_out != self.output_mesh.count:
            raise ContractError(f"index map has {imap.n_out} outputs, mesh has {self.output_mesh.count}")
        if imap.n_in is not None and imap.n_in != self.input_mesh.count:
            raise ContractError(f"index map has {imap.n_in} inputs, mesh has {self.input_mesh.count}")
        if imap.n_pairs and imap.indices.max() >= self.input_mesh.count:
            raise ContractError("index map refers to input points beyond the mesh")

    def parameters(self) -> list[Tensor]:
        params = list(self.kernel.parameters()) + self.weights.parameters()
        if self.bias is not None:
            params.append(self.bias)
        return params

    def filters(self) -> Tensor:
        """Weighted filter matrices ``rho_i * G(y_j - x_i)`` for every stored pair, ``(P, C_out, C_in)``."""
        P = self.map.n_pairs
        H = self.kernel(Tensor(self.offsets))
        G = ad.reshape(H, (P, self.out_channels, self.in_channels))
        rho = ad.gather(self.weights.tensor(), self._gather, axis=0)
        bw = self.bump_values if self.scale == 1.0 else self.bump_values * self.dtype.type(self.scale)
        w = ad.mul(rho, Tensor(bw))
        return ad.mul(G, ad.reshape(w, (P, 1, 1)))

    def __call__(self, features, counter: OpCounter | None = None) -> Tensor:
        return self.forward(features, counter)

    def forward(self, features, counter: OpCounter | None = None) -> Tensor:
        """Apply the layer to ``(C, N)`` or batched ``(B, C, N)`` features."""
        x = ad.as_tensor(features)
        if x.ndim not in (2, 3) or x.shape[-2:] != (self.in_channels, self.input_mesh.count):
            raise ShapeError(
                f"expected features (..., {self.in_channels}, {self.input_mesh.count}), got {x.shape}"
            )
        if not np.all(np.isfinite(x.value)):
            raise ShapeError("features contain non-finite values")
        single = x.ndim == 2
        if single:
            x = ad.reshape(x, (1,) + x.shape)
        P = self.map.n_pairs
        Gw = self.filters()
        # point-major layout keeps the pair axis leading for the batched matmul
        fg = ad.gather(ad.transpose(x, (2, 1, 0)), self._gather, axis=0)
        contrib = ad.matmul(Gw, fg)
        out = ad.scatter_add(contrib, self._scatter, self.output_mesh.count, axis=0)
        out = ad.transpose(out, (2, 1, 0))
        if self.bias is not None:
            out = ad.add(out, self.bias)
        if counter is not None:
            counter.add(kernel_evals=P, macs=x.shape[0] * P * self.out_channels * self.in_channels)
        if single:
            out = ad.reshape(out, out.shape[1:])
        return out


def grid_equivalence_reference(features, discrete_kernel, grid: Mesh) -> np.ndarray:
    """Standard zero-padded discrete convolution on a uniform grid.

    ``features`` is ``(N,)`` or ``(C, N)``; the same odd-sized kernel is
    applied to every channel.  ``discrete_kernel[k]`` multiplies ``f[j - k]``
    with ``k`` counted from the kernel centre.
    """
    if not grid.is_grid:
        raise UnsupportedMeshError("reference convolution needs a uniform grid")
    K = np.asarray(discrete_kernel, dtype=np.float64)
    if K.ndim != grid.dim or any(s % 2 == 0 for s in K.shape):
        raise ShapeError(f"kernel must be odd-sized with {grid.dim} axes, got {K.shape}")
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    f = f.reshape((-1,) + (grid.n_per_dim,) * grid.dim)
    out = np.stack([ndi.convolve(ch, K, mode="constant", cval=0.0) for ch in f])
    out = out.reshape(len(f), -1)
    return out[0] if single else out


def shift_grid_field(values: np.ndarray, shift, n: int) -> np.ndarray:
    """``(T f)[p] = f[p - shift]`` on the lattice, zero where ``p - shift`` leaves the grid."""
    shift = tuple(int(s) for s in shift)
    dim = len(shift)
    lead = values.shape[:-1]
    f = values.reshape(lead + (n,) * dim)
    out = np.zeros_like(f)
    src, dst = [], []
    for s in shift:
        if abs(s) >= n:
            return out.reshape(values.shape)
        src.append(slice(max(0, -s), n - max(0, s)))
        dst.append(slice(max(0, s), n - max(0, -s)))
    out[(Ellipsis,) + tuple(dst)] = f[(Ellipsis,) + tuple(src)]
    return out.reshape(values.shape)


def translation_check(layer: QuadConvLayer, features, shift) -> dict:
    """Compare ``forward(shift(f))`` with ``shift(forward(f))`` on the valid interior.

    A point is valid when it and its pre-image under the shift both sit at
    least ``ceil(alpha / h)`` lattice steps from every edge, so neither side
    of the comparison sees truncated support.
    """
    mesh = layer.input_mesh
    if not mesh.is_grid or layer.output_mesh.fingerprint() != mesh.fingerprint():
        raise UnsupportedMeshError("translation check needs identical uniform grid input and output meshes")
    n, dim = mesh.n_per_dim, mesh.dim
    shift = np.asarray(shift, dtype=int).reshape(dim)
    f = np.asarray(features, dtype=layer.dtype)

    a = layer.forward(shift_grid_field(f, shift, n)).value
    b = shift_grid_field(layer.forward(f).value, shift, n)

    R = math.ceil(layer.alpha / mesh.spacing)
    idx = np.array(np.unravel_index(np.arange(mesh.count), (n,) * dim)).T
    pre = idx - shift
    valid = np.all((idx >= R) & (idx <= n - 1 - R) & (pre >= R) & (pre <= n - 1 - R), axis=1)
    if not valid.any():
        return {"max_abs": 0.0, "max_rel": 0.0, "n_valid": 0}
    diff = np.abs(a[..., valid] - b[..., valid])
    scale = np.max(np.abs(b[..., valid]))
    max_abs = float(diff.max())
    return {
        "max_abs": max_abs,
        "max_rel": max_abs / scale if scale > 0 else max_abs,
        "n_valid": int(valid.sum()),
    }
