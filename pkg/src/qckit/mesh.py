"""Point meshes: uniform tensor grids, synthetic scattered meshes, and mesh files.

Points are stored as an ``(N, D)`` array.  Grids are ordered lexicographically
with the first axis varying slowest, so a grid field reshapes to
``(n, n, ...)`` with ``field[ix, iy, ...]``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, FormatError, MeshGenerationError

MESH_MAGIC = b"QCMESH01"


@dataclass(frozen=True, eq=False)
class Mesh:
    points: np.ndarray
    kind: str = "scattered"
    n_per_dim: int | None = None
    extent: float | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ConfigurationError(f"mesh points must be (N, D) with N, D >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ConfigurationError("mesh coordinates must be finite")
        if self.kind not in ("uniform_grid", "scattered"):
            raise ConfigurationError(f"unknown mesh kind {self.kind!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def is_grid(self) -> bool:
        return self.kind == "uniform_grid"

    @property
    def spacing(self) -> float:
        if not self.is_grid:
            raise ConfigurationError("spacing is only defined for uniform grids")
        return self.extent / (self.n_per_dim - 1)

    def fingerprint(self) -> str:
        """Content hash used to key cached index maps."""
        h = hashlib.sha256()
        h.update(struct.pack("<IQ", self.dim, self.count))
        h.update(self.points.astype("<f8").tobytes())
        return h.hexdigest()[:16]

    def __len__(self):
        return self.count

    def __repr__(self):
        if self.is_grid:
            return f"Mesh(uniform_grid, dim={self.dim}, n_per_dim={self.n_per_dim}, extent={self.extent})"
        return f"Mesh(scattered, dim={self.dim}, count={self.count})"


def uniform_grid(dim: int, n_per_dim: int, extent: float = 1.0) -> Mesh:
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"grid dimension must be 1, 2 or 3, got {dim}")
    if n_per_dim < 2:
        raise ConfigurationError(f"need at least 2 points per axis, got {n_per_dim}")
    if not extent > 0:
        raise ConfigurationError("grid extent must be positive")
    axis = np.linspace(0.0, extent, n_per_dim)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    return Mesh(points, kind="uniform_grid", n_per_dim=n_per_dim, extent=float(extent))


def detect_grid(points: np.ndarray) -> Mesh:
    """Rebuild a Mesh, recognising points that are exactly a uniform grid."""
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    if d <= 3:
        side = int(round(n ** (1.0 / d)))
        if side >= 2 and side**d == n and np.all(points.min(axis=0) == 0.0):
            extent = float(points[:, 0].max())
            if extent > 0:
                candidate = uniform_grid(d, side, extent)
                if np.array_equal(candidate.points, points):
                    return candidate
    return Mesh(points)


def uniform_density(points: np.ndarray) -> np.ndarray:
    return np.ones(points.shape[0])


def gaussian_density(center=(0.5, 0.5), width=0.15, floor=0.05) -> Callable[[np.ndarray], np.ndarray]:
    """Bump of extra density on top of a constant floor."""
    c = np.asarray(center, dtype=np.float64)

    def density(points):
        r2 = np.sum((points - c) ** 2, axis=1)
        return floor + np.exp(-r2 / (2 * width**2))

    return density


def nonuniform_mesh(
    n: int,
    density: Callable[[np.ndarray], np.ndarray] = uniform_density,
    seed: int = 0,
    dim: int = 2,
    anchor_corners: bool = False,
    max_rounds: int = 1000,
) -> Mesh:
    """Sample ``n`` points in the unit cube by rejection against ``density``.

    With ``anchor_corners`` the ``2**dim`` cube corners are included among the
    ``n`` points, so the convex hull is the whole cube.
    """
    if n < 1:
        raise ConfigurationError("mesh needs at least one point")
    rng = np.random.default_rng(seed)
    corners = np.empty((0, dim))
    if anchor_corners:
        corners = np.array(np.meshgrid(*([[0.0, 1.0]] * dim), indexing="ij")).reshape(dim, -1).T
        if n < len(corners):
            raise ConfigurationError(f"n={n} is smaller than the {len(corners)} anchored corners")
    need = n - len(corners)

    probe = rng.uniform(size=(4096, dim))
    ceiling = float(np.max(density(probe)))
    if not np.isfinite(ceiling) or ceiling <= 0:
        raise MeshGenerationError("density is zero (or invalid) over the whole domain")
    ceiling *= 1.1  # head-room for maxima the probe missed

    accepted = []
    have = 0
    for _ in range(max_rounds):
        if have >= need:
            break
        batch = rng.uniform(size=(max(4 * need, 256), dim))
        keep = rng.uniform(size=len(batch)) * ceiling < density(batch)
        accepted.append(batch[keep])
        have += int(keep.sum())
    else:
        raise MeshGenerationError("rejection sampling did not produce enough points")
    pts = np.concatenate([corners] + accepted, axis=0)[:n]
    return Mesh(pts)


def random_downsample(mesh: Mesh, n_out: int, seed: int = 0) -> Mesh:
    """Uniform random subset without replacement, original order preserved."""
    if not 1 <= n_out <= mesh.count:
        raise ConfigurationError(f"cannot take {n_out} points from a mesh of {mesh.count}")
    if n_out == mesh.count:
        return mesh
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(mesh.count, size=n_out, replace=False))
    return Mesh(mesh.points[keep])


def mesh_to_bytes(mesh: Mesh) -> bytes:
    header = MESH_MAGIC + struct.pack("<IQ", mesh.dim, mesh.count)
    return header + mesh.points.astype("<f8").tobytes()


def mesh_from_bytes(data: bytes, source="mesh") -> Mesh:
    if len(data) < 20 or data[:8] != MESH_MAGIC:
        raise FormatError(f"{source}: not a mesh file (bad magic)")
    dim, count = struct.unpack_from("<IQ", data, 8)
    body = data[20:]
    if dim < 1 or len(body) != 8 * dim * count:
        raise FormatError(f"{source}: expected {8 * dim * count} coordinate bytes, found {len(body)}")
    points = np.frombuffer(body, dtype="<f8").reshape(count, dim).astype(np.float64)
    return detect_grid(points)


def save_mesh(mesh: Mesh, path) -> None:
    Path(path).write_bytes(mesh_to_bytes(mesh))


def load_mesh(path) -> Mesh:
    return mesh_from_bytes(Path(path).read_bytes(), source=str(path))
