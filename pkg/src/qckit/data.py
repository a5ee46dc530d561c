"""Synthetic field series, interpolation between meshes, and series files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import LinearNDInterpolator, RegularGridInterpolator

from .errors import ConfigurationError, ContractError, FormatError, InterpolationError
from .mesh import Mesh

SERIES_MAGIC = b"QCSER001"
_SERIES_HEADER = struct.Struct("<QIQd")


@dataclass(eq=False)
class FieldSeries:
    """``values`` has shape ``(T, C, N)``; samples are ``dt`` apart."""

    values: np.ndarray
    dt: float = 1.0
    mesh: Mesh | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ConfigurationError(f"series values must be (T, C, N), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("series contains non-finite values")
        if self.mesh is not None and self.mesh.count != v.shape[2]:
            raise ContractError(f"series has {v.shape[2]} points but mesh has {self.mesh.count}")
        self.values = v

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[1]

    @property
    def N(self) -> int:
        return self.values.shape[2]


# -- 1D low-pass example ---------------------------------------------------


def lowpass_signal(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sin(np.pi * x) + np.sin(14 * np.pi * x)


def lowpass_kernel(x):
    """``8 sin(8 pi x) / (pi x)``, continuous at 0 where it equals 64."""
    x = np.asarray(x, dtype=np.float64)
    # 8 sin(8 pi x)/(pi x) = 64 sinc(8x) with numpy's normalised sinc
    return 64.0 * np.sinc(8.0 * x)


def gen_lowpass_signals(
    n_points: int, sampling: str = "uniform", seed: int = 0, domain=(-1.0, 1.0), warp: float = 0.5, jitter: float = 0.25
):
    """Samples ``x`` of the two-tone signal on ``domain``, its values, and the kernel.

    Non-uniform samples warp the uniform grid by ``u + warp * sin(pi u) / pi``
    (in domain-normalised coordinates, so density varies by a factor
    ``(1 + warp) / (1 - warp)``) and jitter interior points by up to
    ``jitter`` grid spacings.  Endpoints stay fixed.
    """
    if n_points < 8:
        raise ConfigurationError("need at least 8 sample points")
    if not 0 <= warp < 1:
        raise ConfigurationError("warp must lie in [0, 1)")
    a, b = domain
    u = np.linspace(-1.0, 1.0, n_points)
    if sampling == "uniform":
        s = u
    elif sampling == "nonuniform":
        rng = np.random.default_rng(seed)
        s = u + warp * np.sin(np.pi * u) / np.pi
        s[1:-1] += rng.uniform(-jitter, jitter, size=n_points - 2) * (2.0 / (n_points - 1))
        s = np.sort(s)
    else:
        raise ConfigurationError(f"unknown sampling {sampling!r}")
    x = a + (s + 1.0) * (b - a) / 2.0
    return x, lowpass_signal(x), lowpass_kernel


def analytic_lowpass_oracle(y, domain=(-1.0, 1.0), tol: float = 1e-6, start_level: int = 10, max_level: int = 22):
    """``int_domain f(x) g(y - x) dx`` by composite trapezoid, refined until converged.

    The grid is doubled until successive values differ by less than ``tol``
    everywhere; the finer estimate is returned.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    a, b = domain

    def estimate(level):
        x = np.linspace(a, b, 2**level + 1)
        w = np.full(len(x), (b - a) / 2**level)
        w[0] = w[-1] = w[0] / 2
        fw = lowpass_signal(x) * w
        out = np.empty(len(y))
        for s in range(0, len(y), 64):
            out[s : s + 64] = lowpass_kernel(y[s : s + 64, None] - x[None, :]) @ fw
        return out

    prev = estimate(start_level)
    for level in range(start_level + 1, max_level + 1):
        cur = estimate(level)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    raise ConfigurationError(f"oracle did not converge to {tol} by 2**{max_level} intervals")


# -- 2D synthetic series -----------------------------------------------------


def _times(T: int) -> np.ndarray:
    if T < 2:
        raise ConfigurationError("need at least two time samples")
    return np.linspace(0.0, 1.0, T)


@dataclass(frozen=True)
class PulseParams:
    amplitude: float = 1.0
    width: float = 0.15
    start: tuple = (0.25, 0.5)
    velocity: tuple = (0.8, 0.0)
    halt_time: float = 0.6
    onset: float = 0.05
    steepness: float = 20.0
    jitter: float = 0.1


def pulse_center(t, params: PulseParams):
    t = np.asarray(t, dtype=np.float64)
    moved = np.minimum(t, params.halt_time)[..., None]
    return np.asarray(params.start) + moved * np.asarray(params.velocity)


def gen_pulse2d(mesh: Mesh, T: int, params: PulseParams | None = None, seed: int = 0) -> FieldSeries:
    """Gaussian front that switches on, translates, then halts.

    ``u(x, t) = A * sigmoid(k (t - t0)) * exp(-|x - c(t)|^2 / w^2)`` with
    ``c(t)`` moving at constant velocity until ``halt_time``.  The seed
    jitters amplitude, width and speed by up to ``jitter`` (relative).
    """
    params = params or PulseParams()
    if mesh.dim != 2:
        raise ConfigurationError("pulse2d needs a 2-D mesh")
    rng = np.random.default_rng(seed)
    j = 1.0 + params.jitter * rng.uniform(-1.0, 1.0, size=3)
    p = replace(
        params,
        amplitude=params.amplitude * j[0],
        width=params.width * j[1],
        velocity=tuple(np.asarray(params.velocity) * j[2]),
    )
    t = _times(T)
    centers = pulse_center(t, p)
    gate = p.amplitude / (1.0 + np.exp(-p.steepness * (t - p.onset)))
    r2 = np.sum((mesh.points[None, :, :] - centers[:, None, :]) ** 2, axis=-1)
    u = gate[:, None] * np.exp(-r2 / p.width**2)
    return FieldSeries(u[:, None, :], dt=t[1] - t[0], mesh=mesh)


@dataclass(frozen=True)
class WakeParams:
    disk_center: tuple = (0.2, 0.5)
    disk_radius: float = 0.06
    period: float = 0.25
    harmonics: int = 3
    wavenumber: float = 3.0
    mean_flow: float = 1.0
    spread: float = 0.12


def gen_wake2d(mesh: Mesh, T: int, params: WakeParams | None = None, seed: int = 0) -> FieldSeries:
    """Periodic travelling wake behind a masked disk.

    The field is a steady part plus ``harmonics`` travelling waves whose
    temporal frequencies are multiples of ``1/period``, so the series is
    exactly periodic and its snapshots span at most ``1 + 2 * harmonics``
    temporal modes.  Points inside the disk are zero.
    """
    params = params or WakeParams()
    if mesh.dim != 2:
        raise ConfigurationError("wake2d needs a 2-D mesh")
    rng = np.random.default_rng(seed)
    amps = rng.uniform(0.5, 1.0, size=params.harmonics) / np.arange(1, params.harmonics + 1)
    phases = rng.uniform(0.0, 2 * np.pi, size=params.harmonics)
    t = _times(T)
    x, y = mesh.points[:, 0], mesh.points[:, 1]
    cx, cy = params.disk_center
    behind = 0.5 * (1.0 + np.tanh((x - cx) / 0.05))
    u = np.tile(params.mean_flow * (1.0 - 0.5 * behind * np.exp(-((y - cy) / params.spread) ** 2)), (T, 1))
    for m in range(1, params.harmonics + 1):
        env = behind * np.exp(-((y - cy) / (params.spread * np.sqrt(m))) ** 2)
        phase = 2 * np.pi * m * (params.wavenumber * (x - cx))[None, :] - 2 * np.pi * m * t[:, None] / params.period
        u += amps[m - 1] * env[None, :] * np.sin(phase + phases[m - 1])
    inside = (x - cx) ** 2 + (y - cy) ** 2 < params.disk_radius**2
    u[:, inside] = 0.0
    return FieldSeries(u[:, None, :], dt=t[1] - t[0], mesh=mesh)


def wake_mode_count(params: WakeParams | None = None) -> int:
    params = params or WakeParams()
    return 1 + 2 * params.harmonics


# -- interpolation ------------------------------------------------------------


def resample_series(series: FieldSeries, source: Mesh, target: Mesh) -> FieldSeries:
    """Piecewise-linear interpolation of every sample onto ``target``.

    Grid sources use multilinear interpolation on the tensor grid; scattered
    sources use linear interpolation on a Delaunay triangulation.  Both are
    exact on affine fields.  Targets outside the source hull raise.
    """
    if series.N != source.count:
        raise ContractError(f"series has {series.N} points, source mesh has {source.count}")
    if source.dim != target.dim:
        raise InterpolationError("source and target meshes differ in dimension")
    if source.fingerprint() == target.fingerprint():
        return FieldSeries(series.values.copy(), series.dt, target)
    T, C, N = series.values.shape
    stacked = series.values.reshape(T * C, N).T  # (N, T*C)
    if source.is_grid:
        lo, hi = 0.0, source.extent
        tol = 1e-12 * source.extent
        if np.any(target.points < lo - tol) or np.any(target.points > hi + tol):
            raise InterpolationError("target points fall outside the source grid")
        axis = np.linspace(0.0, source.extent, source.n_per_dim)
        grid_vals = stacked.reshape((source.n_per_dim,) * source.dim + (T * C,))
        interp = RegularGridInterpolator((axis,) * source.dim, grid_vals, method="linear")
        out = interp(np.clip(target.points, lo, hi))
    else:
        interp = LinearNDInterpolator(source.points, stacked, fill_value=np.nan)
        out = interp(target.points)
        if np.any(np.isnan(out)):
            raise InterpolationError("target points fall outside the convex hull of the source mesh")
    values = np.asarray(out).T.reshape(T, C, target.count)
    return FieldSeries(values, series.dt, target)


# -- files ----------------------------------------------------------------------


def save_series(series: FieldSeries, path) -> None:
    header = SERIES_MAGIC + _SERIES_HEADER.pack(series.T, series.C, series.N, series.dt)
    Path(path).write_bytes(header + series.values.astype("<f8").tobytes())


def load_series(path, mesh: Mesh | None = None) -> FieldSeries:
    data = Path(path).read_bytes()
    hlen = 8 + _SERIES_HEADER.size
    if len(data) < hlen or data[:8] != SERIES_MAGIC:
        raise FormatError(f"{path}: not a series file (bad magic)")
    T, C, N, dt = _SERIES_HEADER.unpack_from(data, 8)
    expected = 8 * T * C * N
    if len(data) - hlen != expected:
        raise FormatError(f"{path}: expected {expected} value bytes, found {len(data) - hlen}")
    if mesh is not None and mesh.count != N:
        raise ContractError(f"{path}: series has N={N} but mesh has {mesh.count} points")
    values = np.frombuffer(data, dtype="<f8", offset=hlen).reshape(T, C, N).astype(np.float64)
    return FieldSeries(values, dt, mesh)
