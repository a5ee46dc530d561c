"""Checkpoint container and its binary file format.

Layout: ``QCCKPT01``, u32 format version, then tagged sections, each a
4-byte tag, a u64 payload length and the payload.  Numbers are
little-endian; parameter blobs are f64 whatever the training precision
(f32 values widen and narrow back exactly).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import RunConfig
from ..errors import ContractError, FormatError
from ..mesh import Mesh, mesh_from_bytes, mesh_to_bytes
from ..nn import AdamState
from .model import AutoencoderConfig, QCAutoencoder

CKPT_MAGIC = b"QCCKPT01"
CKPT_VERSION = 1
_REQUIRED = (b"CONF", b"META", b"MESH", b"PARM", b"SCAL", b"OPTM")


@dataclass
class Checkpoint:
    config_text: str
    mesh: Mesh
    in_channels: int
    params: dict[str, np.ndarray]
    scales: list[float]
    step: int = 0
    optimizer: AdamState = field(default_factory=AdamState)
    version: int = CKPT_VERSION

    @property
    def run_config(self) -> RunConfig:
        return RunConfig.from_text(self.config_text)

    @classmethod
    def from_model(cls, model: QCAutoencoder, optimizer: AdamState | None = None, step: int = 0, run=None):
        run = model.config.to_run_config(run)
        opt = optimizer or AdamState(lr=model.config.lr)
        return cls(
            config_text=run.to_text(),
            mesh=model.mesh,
            in_channels=model.in_channels,
            params={name: p.value.copy() for name, p in model.named_parameters()},
            scales=[layer.scale for layer in model.encoder + model.decoder],
            step=step,
            optimizer=AdamState(
                lr=opt.lr,
                beta1=opt.beta1,
                beta2=opt.beta2,
                eps=opt.eps,
                t=opt.t,
                m=[m.copy() for m in opt.m],
                v=[v.copy() for v in opt.v],
            ),
        )

    def build_model(self, cache=False) -> QCAutoencoder:
        """Rebuild the model and load every stored parameter into it."""
        cfg = AutoencoderConfig.from_run_config(self.run_config)
        model = QCAutoencoder(cfg, self.mesh, self.in_channels, cache=cache)
        named = model.named_parameters()
        if [n for n, _ in named] != list(self.params):
            raise ContractError("checkpoint parameters do not match the model built from its config")
        for name, p in named:
            stored = self.params[name]
            if stored.shape != p.shape:
                raise ContractError(f"{name}: stored shape {stored.shape}, model expects {p.shape}")
            p.value[...] = stored.astype(p.dtype)
        layers = model.encoder + model.decoder
        if len(layers) != len(self.scales):
            raise ContractError("checkpoint layer count does not match the model")
        for layer, s in zip(layers, self.scales):
            layer.scale = s
        return model


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _pack_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.astype("<f8").tobytes())


def _unpack_array(view: memoryview, pos: int):
    (ndim,) = struct.unpack_from("<B", view, pos)
    pos += 1
    shape = struct.unpack_from(f"<{ndim}Q", view, pos)
    pos += 8 * ndim
    n = int(np.prod(shape, dtype=np.int64))
    if pos + 8 * n > len(view):
        raise FormatError("truncated array blob")
    arr = np.frombuffer(view, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
    return arr, pos + 8 * n


def checkpoint_to_bytes(ck: Checkpoint) -> bytes:
    parm = io.BytesIO()
    parm.write(struct.pack("<I", len(ck.params)))
    for name, arr in ck.params.items():
        raw = name.encode()
        parm.write(struct.pack("<H", len(raw)) + raw)
        _pack_array(parm, arr)
    opt = io.BytesIO()
    st = ck.optimizer
    opt.write(struct.pack("<Q4dI", st.t, st.lr, st.beta1, st.beta2, st.eps, len(st.m)))
    for arr in list(st.m) + list(st.v):
        _pack_array(opt, arr)
    parts = [
        CKPT_MAGIC,
        struct.pack("<I", ck.version),
        _section(b"CONF", ck.config_text.encode()),
        _section(b"META", struct.pack("<IQ", ck.in_channels, ck.step)),
        _section(b"MESH", mesh_to_bytes(ck.mesh)),
        _section(b"PARM", parm.getvalue()),
        _section(b"SCAL", struct.pack(f"<I{len(ck.scales)}d", len(ck.scales), *ck.scales)),
        _section(b"OPTM", opt.getvalue()),
    ]
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes, source="checkpoint") -> Checkpoint:
    if len(data) < 12 or data[:8] != CKPT_MAGIC:
        raise FormatError(f"{source}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    sections = {}
    pos = 12
    while pos < len(data):
        if pos + 12 > len(data):
            raise FormatError(f"{source}: truncated section header")
        tag = data[pos : pos + 4]
        (length,) = struct.unpack_from("<Q", data, pos + 4)
        pos += 12
        if pos + length > len(data):
            raise FormatError(f"{source}: section {tag!r} runs past end of file")
        sections[tag] = memoryview(data)[pos : pos + length]
        pos += length
    missing = [t.decode() for t in _REQUIRED if t not in sections]
    if missing:
        raise FormatError(f"{source}: missing sections {missing}")

    try:
        in_channels, step = struct.unpack_from("<IQ", sections[b"META"])
        mesh = mesh_from_bytes(bytes(sections[b"MESH"]), source)

        view = sections[b"PARM"]
        (count,) = struct.unpack_from("<I", view, 0)
        p = 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, p)
            name = bytes(view[p + 2 : p + 2 + nlen]).decode()
            params[name], p = _unpack_array(view, p + 2 + nlen)

        sv = sections[b"SCAL"]
        (ns,) = struct.unpack_from("<I", sv, 0)
        scales = list(struct.unpack_from(f"<{ns}d", sv, 4))

        ov = sections[b"OPTM"]
        t, lr, b1, b2, eps, nm = struct.unpack_from("<Q4dI", ov, 0)
        p = struct.calcsize("<Q4dI")
        arrays = []
        for _ in range(2 * nm):
            arr, p = _unpack_array(ov, p)
            arrays.append(arr)
    except struct.error as exc:
        raise FormatError(f"{source}: malformed section ({exc})") from None

    return Checkpoint(
        config_text=bytes(sections[b"CONF"]).decode(),
        mesh=mesh,
        in_channels=in_channels,
        params=params,
        scales=scales,
        step=step,
        optimizer=AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t, m=arrays[:nm], v=arrays[nm:]),
        version=version,
    )


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes(), source=str(path))
