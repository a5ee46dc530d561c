"""Plain-text run configuration: one ``key = value`` per line, ``#`` comments.

Keys are namespaced (``mesh.*``, ``model.*``, ``train.*``, ``data.*``) and
must be known; the canonical dump is sorted so it diffs cleanly.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigurationError

# key -> (type, default).  Tuples are written as comma-separated lists.
SCHEMA = {
    "data.kind": (str, "pulse2d"),
    "data.grid": (int, 32),
    "data.points": (int, 0),
    "data.T": (int, 64),
    "data.seed": (int, 0),
    "mesh.index_method": (str, "auto"),
    "mesh.cache": (bool, True),
    "model.architecture": (str, "pool_style"),
    "model.channels": (tuple, (8, 16)),
    "model.target_s": (float, 9.0),
    "model.latent_dim": (int, 16),
    "model.head_widths": (tuple, ()),
    "model.kernel_hidden": (tuple, (16, 16)),
    "model.kernel_activation": (str, "tanh"),
    "model.activation": (str, "tanh"),
    "model.conv_bias": (bool, True),
    "model.weights": (str, "auto"),
    "model.grid_side": (int, 0),
    "model.pool_window": (int, 2),
    "model.downsample_factor": (int, 4),
    "model.precision": (str, "f64"),
    "model.seed": (int, 0),
    "train.lambda": (str, "auto"),
    "train.lr": (float, 1e-3),
    "train.lr_schedule": (str, "constant"),
    "train.batch_size": (int, 8),
    "train.max_steps": (int, 2000),
    "train.seed": (int, 0),
    "train.split": (float, 0.8),
    "train.log_every": (int, 10),
}


def _parse(key, raw: str):
    typ, _ = SCHEMA[key]
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is tuple:
            return tuple(int(p) for p in raw.split(",") if p.strip())
        return typ(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        for k, v in (values or {}).items():
            self[k] = v

    def __getitem__(self, key):
        return self.values[key]

    def __setitem__(self, key, value):
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, value) if isinstance(value, str) else _coerce(key, value)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"line {lineno}: expected key = value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            cfg[key] = raw
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in sorted(self.values))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def section(self, prefix: str) -> dict:
        p = prefix.rstrip(".") + "."
        return {k[len(p) :]: v for k, v in self.values.items() if k.startswith(p)}


def _coerce(key, value):
    typ, _ = SCHEMA[key]
    if typ is tuple:
        return tuple(int(v) for v in value)
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, typ):
        raise ConfigurationError(f"{key} expects {typ.__name__}, got {type(value).__name__}")
    return value
