"""Quadrature-convolutional autoencoder assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..config import RunConfig
from ..errors import ConfigurationError, ShapeError
from ..index_map import OpCounter, choose_alpha, covering_radius
from ..kernel import ACTIVATIONS
from ..mesh import Mesh, random_downsample, uniform_grid
from ..nn import Linear, maxpool_grid, unpool_grid
from ..quadconv import QuadConvLayer

log = logging.getLogger(__name__)

DTYPES = {"f64": np.float64, "f32": np.float32}


@dataclass
class AutoencoderConfig:
    architecture: str = "pool_style"
    channels: tuple = (8, 16)
    target_s: float = 9.0
    latent_dim: int = 16
    head_widths: tuple = ()
    kernel_hidden: tuple = (16, 16)
    kernel_activation: str = "tanh"
    activation: str = "tanh"
    conv_bias: bool = True
    weights: str = "auto"
    grid_side: int = 0
    pool_window: int = 2
    downsample_factor: int = 4
    precision: str = "f64"
    seed: int = 0
    # training
    lam: str | float = "auto"
    lr: float = 1e-3
    lr_schedule: str = "constant"
    batch_size: int = 8
    max_steps: int = 2000
    train_seed: int = 0
    split: float = 0.8
    log_every: int = 10
    # mesh plumbing
    index_method: str = "auto"
    cache: bool = True

    _RUN_KEYS = {
        "lam": "train.lambda",
        "lr": "train.lr",
        "lr_schedule": "train.lr_schedule",
        "batch_size": "train.batch_size",
        "max_steps": "train.max_steps",
        "train_seed": "train.seed",
        "split": "train.split",
        "log_every": "train.log_every",
        "index_method": "mesh.index_method",
        "cache": "mesh.cache",
    }

    def __post_init__(self):
        if self.architecture not in ("pool_style", "downsample_style"):
            raise ConfigurationError(f"unknown architecture {self.architecture!r}")
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be at least 1")
        if not self.channels:
            raise ConfigurationError("need at least one convolution stage")
        if self.precision not in DTYPES:
            raise ConfigurationError(f"precision must be one of {sorted(DTYPES)}")
        if self.activation not in ACTIVATIONS or self.kernel_activation not in ACTIVATIONS:
            raise ConfigurationError("unknown activation")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ConfigurationError("batch_size must be >= 1 and max_steps >= 0")
        self.channels = tuple(self.channels)
        self.head_widths = tuple(self.head_widths)
        self.kernel_hidden = tuple(self.kernel_hidden)

    @property
    def dtype(self):
        return DTYPES[self.precision]

    @classmethod
    def from_run_config(cls, run: RunConfig) -> "AutoencoderConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name.startswith("_"):
                continue
            key = cls._RUN_KEYS.get(f.name, f"model.{f.name}")
            kwargs[f.name] = run[key]
        lam = kwargs["lam"]
        if lam != "auto":
            try:
                kwargs["lam"] = float(lam)
            except ValueError:
                raise ConfigurationError(f"train.lambda must be a number or 'auto', got {lam!r}") from None
        return cls(**kwargs)

    def to_run_config(self, base: RunConfig | None = None) -> RunConfig:
        run = RunConfig(dict(base.values) if base else None)
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            key = self._RUN_KEYS.get(f.name, f"model.{f.name}")
            value = getattr(self, f.name)
            run[key] = str(value) if f.name == "lam" else value
        return run


class QCAutoencoder:
    """Encoder: QuadConv stages, flatten, affine head to the latent code.
    Decoder: mirror image ending in a QuadConv back onto the input mesh.

    ``pool_style`` runs the convolutions on uniform grids with 2x max-pooling
    between stages (the first layer resamples a scattered input onto a grid,
    the last layer resamples back).  ``downsample_style`` shrinks the point
    set by ``downsample_factor`` per stage using random subsets of the
    previous mesh.
    """

    def __init__(
        self,
        config: AutoencoderConfig,
        mesh: Mesh,
        in_channels: int = 1,
        counter: OpCounter | None = None,
        cache=False,
    ):
        self.config = config
        self.mesh = mesh
        self.in_channels = in_channels
        self.dtype = np.dtype(config.dtype)
        self.act = ACTIVATIONS[config.activation]
        self.cache_hits = 0
        self._rng = np.random.default_rng(config.seed)
        self._counter = counter
        self._cache = cache
        if config.architecture == "pool_style":
            self._build_pool(mesh)
        else:
            self._build_downsample(mesh)
        flat = self.channels[-1] * self.bottleneck_mesh.count
        self.enc_head = self._head([flat, *config.head_widths, config.latent_dim], "enc_head")
        self.dec_head = self._head([config.latent_dim, *reversed(config.head_widths), flat], "dec_head")

    # -- assembly -------------------------------------------------------

    def _weights_for(self, m: Mesh) -> str:
        mode = self.config.weights
        if mode == "auto":
            return "static" if m.is_grid else "learned"
        return mode

    def _conv(self, src: Mesh, dst: Mesh, c_in: int, c_out: int) -> QuadConvLayer:
        layer = QuadConvLayer(
            src,
            dst,
            c_in,
            c_out,
            alpha=self._alpha(src, dst),
            weights=self._weights_for(src),
            bias=self.config.conv_bias,
            hidden=self.config.kernel_hidden,
            activation=self.config.kernel_activation,
            rng=self._rng,
            dtype=self.dtype,
            counter=self._counter,
            cache=self._cache,
        )
        layer.normalize()
        self.cache_hits += int(layer.cache_hit)
        return layer

    def _alpha(self, src: Mesh, dst: Mesh) -> float:
        # widen the support where needed so no output point is left without neighbours
        alpha = choose_alpha(src, dst, self.config.target_s)
        cover = covering_radius(src, dst)
        if cover >= alpha:
            alpha = float(np.nextafter(cover * (1 + 1e-9), np.inf))
        return alpha

    def _head(self, widths, name):
        layers = []
        for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            layers.append(Linear(a, b, self._rng, dtype=self.dtype, name=f"{name}.{k}"))
        return layers

    def _build_pool(self, mesh: Mesh):
        cfg = self.config
        k = len(cfg.channels)
        w = cfg.pool_window
        if mesh.is_grid:
            side = mesh.n_per_dim
            extent = mesh.extent
        else:
            side = cfg.grid_side or int(2 ** np.ceil(np.log2(mesh.count ** (1 / mesh.dim))))
            lo = mesh.points.min(axis=0)
            hi = mesh.points.max(axis=0)
            if np.any(lo < 0) or np.any(hi > 1):
                raise ConfigurationError("pool_style on scattered meshes expects points in the unit cube")
            extent = 1.0
        if side % (w**k):
            raise ConfigurationError(f"grid side {side} is not divisible by {w}**{k}")
        grids = [uniform_grid(mesh.dim, side // w**s, extent) for s in range(k + 1)]
        self.stage_meshes = grids
        self.bottleneck_mesh = grids[-1]
        self.channels = cfg.channels
        first_in = mesh if not mesh.is_grid else grids[0]

        chans = (self.in_channels,) + cfg.channels
        self.encoder = []
        for s in range(k):
            src = first_in if s == 0 else grids[s]
            self.encoder.append(self._conv(src, grids[s], chans[s], chans[s + 1]))
        self.decoder = []
        for s in range(k, 0, -1):
            c_out = chans[s - 1] if s > 1 else chans[1]
            self.decoder.append(self._conv(grids[s - 1], grids[s - 1], chans[s], c_out))
        self.decoder.append(self._conv(grids[0], mesh, chans[1], self.in_channels))

    def _build_downsample(self, mesh: Mesh):
        cfg = self.config
        k = len(cfg.channels)
        meshes = [mesh]
        for s in range(1, k + 1):
            n = max(1, int(round(meshes[-1].count / cfg.downsample_factor)))
            meshes.append(random_downsample(meshes[-1], n, seed=cfg.seed + s))
        self.stage_meshes = meshes
        self.bottleneck_mesh = meshes[-1]
        self.channels = cfg.channels
        chans = (self.in_channels,) + cfg.channels
        self.encoder = [self._conv(meshes[s], meshes[s + 1], chans[s], chans[s + 1]) for s in range(k)]
        self.decoder = []
        for s in range(k, 0, -1):
            c_out = chans[s - 1] if s > 1 else chans[1]
            self.decoder.append(self._conv(meshes[s], meshes[s - 1], chans[s], c_out))
        self.decoder.append(self._conv(mesh, mesh, chans[1], self.in_channels))

    # -- parameters ------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for group, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                for j, p in enumerate(layer.kernel.parameters()):
                    named.append((f"{group}.{i}.kernel.{j}", p))
                for p in layer.weights.parameters():
                    named.append((f"{group}.{i}.quadrature_raw", p))
                if layer.bias is not None:
                    named.append((f"{group}.{i}.bias", layer.bias))
        for group, layers in (("enc_head", self.enc_head), ("dec_head", self.dec_head)):
            for i, lin in enumerate(layers):
                named.append((f"{group}.{i}.weight", lin.weight))
                named.append((f"{group}.{i}.bias", lin.bias))
        return named

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def compression_ratio(self) -> float:
        return self.in_channels * self.mesh.count / self.config.latent_dim

    # -- forward -----------------------------------------------------------

    def _pool_stage(self, x):
        if self.config.architecture == "pool_style":
            x, _ = maxpool_grid(x, self.mesh.dim, self.config.pool_window)
        return x

    def _unpool_stage(self, x):
        if self.config.architecture == "pool_style":
            x = unpool_grid(x, self.mesh.dim, self.config.pool_window)
        return x

    def encode(self, x) -> Tensor:
        """``(B, C, N)`` fields to ``(B, L)`` latent codes."""
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != (self.in_channels, self.mesh.count):
            raise ShapeError(f"expected (B, {self.in_channels}, {self.mesh.count}) input, got {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.value.astype(self.dtype))
        for layer in self.encoder:
            x = self._pool_stage(self.act(layer(x, self._counter)))
        h = ad.reshape(x, (x.shape[0], -1))
        for i, lin in enumerate(self.enc_head):
            h = lin(h)
            if i < len(self.enc_head) - 1:
                h = self.act(h)
        return h

    def decode(self, z) -> Tensor:
        """``(B, L)`` codes back to ``(B, C, N)`` fields."""
        z = ad.as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeError(f"expected (B, {self.config.latent_dim}) codes, got {z.shape}")
        if z.dtype != self.dtype:
            z = Tensor(z.value.astype(self.dtype))
        h = z
        for lin in self.dec_head:
            h = self.act(lin(h))
        x = ad.reshape(h, (h.shape[0], self.channels[-1], self.bottleneck_mesh.count))
        for layer in self.decoder[:-1]:
            x = self.act(layer(self._unpool_stage(x), self._counter))
        return self.decoder[-1](x, self._counter)

    def __call__(self, x) -> Tensor:
        return self.decode(self.encode(x))


def encode(model: QCAutoencoder, samples, batch_size: int = 16) -> np.ndarray:
    """Latent codes for ``(C, N)`` or ``(T, C, N)`` samples, evaluated off-tape."""
    x = np.asarray(samples)
    single = x.ndim == 2
    x = x[None] if single else x
    codes = np.concatenate(
        [model.encode(x[s : s + batch_size]).value for s in range(0, len(x), batch_size)]
    ) if len(x) else np.zeros((0, model.latent_dim))
    return codes[0] if single else codes


def decode(model: QCAutoencoder, codes, batch_size: int = 16) -> np.ndarray:
    z = np.asarray(codes)
    single = z.ndim == 1
    z = z[None] if single else z
    out = np.concatenate([model.decode(z[s : s + batch_size]).value for s in range(0, len(z), batch_size)])
    return out[0] if single else out


def reconstruct(model: QCAutoencoder, samples, batch_size: int = 16) -> np.ndarray:
    return decode(model, encode(model, samples, batch_size), batch_size)


def compression_ratio(model: QCAutoencoder) -> float:
    return model.compression_ratio
