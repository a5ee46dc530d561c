"""Reconstruction loss, error metrics, dataset split and the POD baseline."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ConfigurationError, MetricError, ShapeError
from ..mesh import Mesh


def resolve_lambda(lam, mesh: Mesh) -> float:
    """``auto`` is 0.1 on uniform grids and 0 on scattered meshes."""
    if lam == "auto":
        return 0.1 if mesh.is_grid else 0.0
    lam = float(lam)
    if lam < 0:
        raise ConfigurationError("the derivative penalty weight must be >= 0")
    if lam > 0 and not mesh.is_grid:
        raise ConfigurationError("finite-difference regularisation needs a uniform grid; set train.lambda = 0")
    return lam


def fd_matrix(n: int, h: float) -> np.ndarray:
    """Matrix of ``np.gradient(., h, edge_order=2)`` on ``n`` points."""
    return np.gradient(np.eye(n), h, axis=0, edge_order=2)


class GridGradient:
    """Central-difference gradient of ``(B, C, N)`` grid fields, one output slab per axis."""

    def __init__(self, mesh: Mesh, dtype=np.float64):
        if not mesh.is_grid:
            raise ConfigurationError("finite differences need a uniform grid")
        self.mesh = mesh
        self.D = fd_matrix(mesh.n_per_dim, mesh.spacing).astype(dtype)

    def __call__(self, x: Tensor) -> list[Tensor]:
        n, dim = self.mesh.n_per_dim, self.mesh.dim
        lead = x.shape[:-1]
        f = ad.reshape(x, (-1,) + (n,) * dim)
        grads = []
        letters = "abcdefgh"[:dim]
        for axis in range(dim):
            src = "z" + letters
            dst = "z" + letters.replace(letters[axis], "y")
            g = ad.einsum(f"y{letters[axis]},{src}->{dst}", Tensor(self.D), f)
            grads.append(ad.reshape(g, lead + (n**dim,)))
        return grads


def loss(recon, truth, lam: float = 0.0, grad_op: GridGradient | None = None) -> Tensor:
    """Batch mean of ``||recon - truth||_HS^2 + lam * R``.

    ``R`` is the mean squared difference of the finite-difference gradients
    over axes, channels and points.  Inputs are ``(C, N)`` or ``(B, C, N)``.
    """
    recon = ad.as_tensor(recon)
    truth = ad.as_tensor(truth, like=recon)
    if recon.shape != truth.shape:
        raise ShapeError(f"recon {recon.shape} and truth {truth.shape} differ")
    if recon.ndim == 2:
        recon = ad.reshape(recon, (1,) + recon.shape)
        truth = ad.reshape(truth, (1,) + truth.shape)
    B = recon.shape[0]
    diff = ad.sub(recon, truth)
    total = ad.reduce_sum(ad.mul(diff, diff))
    if lam > 0:
        if grad_op is None:
            raise ConfigurationError("a positive penalty weight needs a grid gradient operator")
        for g in grad_op(diff):
            total = ad.add(total, ad.scale(ad.reduce_sum(ad.mul(g, g)), lam / (g.size / B * grad_op.mesh.dim)))
    return ad.scale(total, 1.0 / B)


def _per_sample(recon, truth) -> np.ndarray:
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ShapeError(f"recon {recon.shape} and truth {truth.shape} differ")
    if truth.ndim == 2:
        recon, truth = recon[None], truth[None]
    if truth.shape[0] < 1:
        raise MetricError("need at least one sample")
    T = truth.shape[0]
    num = np.linalg.norm((recon - truth).reshape(T, -1), axis=1)
    den = np.linalg.norm(truth.reshape(T, -1), axis=1)
    if np.any(den == 0):
        raise MetricError(f"truth sample(s) {np.flatnonzero(den == 0).tolist()} have zero norm")
    return num / den


def relative_error(recon, truth) -> float:
    """Time-averaged relative HS error over ``(T, C, N)`` arrays."""
    return float(np.mean(_per_sample(recon, truth)))


def max_error(recon, truth) -> float:
    return float(np.max(_per_sample(recon, truth)))


def split_dataset(T: int, fraction: float = 0.8, seed: int = 0):
    """Random disjoint train/test index sets of sizes ``ceil(fT)`` and ``T - ceil(fT)``."""
    if T < 5:
        raise ConfigurationError("need at least 5 samples to split")
    if not 0 < fraction < 1:
        raise ConfigurationError("split fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(T)
    n_train = math.ceil(round(fraction * T, 9))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


# -- POD ----------------------------------------------------------------------------


def _snapshots(series) -> np.ndarray:
    v = np.asarray(getattr(series, "values", series), dtype=np.float64)
    return v.reshape(v.shape[0], -1).T  # (C*N, T)


def pod_baseline(train_series, r: int) -> np.ndarray:
    """Leading ``r`` left singular vectors of the ``(C*N, T)`` snapshot matrix."""
    X = _snapshots(train_series)
    if r < 1 or r > min(X.shape):
        raise ConfigurationError(f"rank {r} outside [1, {min(X.shape)}]")
    U, _, _ = np.linalg.svd(X, full_matrices=False)
    return U[:, :r]


def pod_project(basis: np.ndarray, series) -> np.ndarray:
    v = np.asarray(getattr(series, "values", series), dtype=np.float64)
    X = _snapshots(v)
    return (basis @ (basis.T @ X)).T.reshape(v.shape)


def pod_error(basis: np.ndarray, series) -> float:
    v = np.asarray(getattr(series, "values", series), dtype=np.float64)
    return relative_error(pod_project(basis, v), v)
