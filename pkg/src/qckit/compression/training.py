"""Mini-batch Adam training of the autoencoder."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..errors import ShapeError, TrainingError
from ..nn import Adam
from .checkpoint import Checkpoint
from .metrics import GridGradient, loss, max_error, relative_error, resolve_lambda, split_dataset
from .model import QCAutoencoder, reconstruct

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "split", "loss", "rel_err", "max_err")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    seconds: float = 0.0

    def last(self, split: str) -> dict:
        rows = [r for r in self.history if r["split"] == split]
        return rows[-1] if rows else {}


def evaluate(model: QCAutoencoder, values, lam: float = 0.0, grad_op=None, batch_size: int = 16) -> dict:
    """Loss, relative error and max error of the reconstruction of ``values``."""
    values = np.asarray(values)
    recon = reconstruct(model, values, batch_size)
    x = values.astype(model.dtype)
    total = 0.0
    for s in range(0, len(values), batch_size):
        total += loss(recon[s : s + batch_size], x[s : s + batch_size], lam, grad_op).value.item() * len(
            x[s : s + batch_size]
        )
    return {
        "loss": total / len(values),
        "rel_err": relative_error(recon, values),
        "max_err": max_error(recon, values),
    }


def train(
    model: QCAutoencoder,
    values,
    log_path=None,
    max_steps: int | None = None,
    callback=None,
) -> TrainResult:
    """Adam over shuffled mini-batches of the training split.

    ``values`` is ``(T, C, N)``.  Metrics on both splits are logged every
    ``log_every`` epochs and after the final step.  With the cosine
    schedule the step size decays from ``lr`` to zero over ``max_steps``.  A non-finite loss or
    gradient raises :class:`TrainingError` carrying the last good
    checkpoint.
    """
    cfg = model.config
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[1:] != (model.in_channels, model.mesh.count):
        raise ShapeError(f"expected (T, {model.in_channels}, {model.mesh.count}) training data, got {values.shape}")
    steps = cfg.max_steps if max_steps is None else max_steps
    lam = resolve_lambda(cfg.lam, model.mesh)
    grad_op = GridGradient(model.mesh, model.dtype) if lam > 0 else None
    train_idx, test_idx = split_dataset(len(values), cfg.split, cfg.train_seed)
    rng = np.random.default_rng(cfg.train_seed)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    data = values.astype(model.dtype)
    history: list[dict] = []

    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()

    def record(step):
        for split, idx in (("train", train_idx), ("test", test_idx)):
            m = evaluate(model, values[idx], lam, grad_op)
            row = {"step": step, "split": split, **m}
            history.append(row)
            if writer is not None:
                writer.writerow(row)
                fh.flush()
        log.info("step %d train rel %.4g test rel %.4g", step, history[-2]["rel_err"], history[-1]["rel_err"])

    t0 = time.perf_counter()
    step = 0
    epoch = 0
    try:
        record(0)
        while step < steps:
            order = rng.permutation(train_idx)
            for s in range(0, len(order), cfg.batch_size):
                if step >= steps:
                    break
                batch = data[order[s : s + cfg.batch_size]]
                if cfg.lr_schedule == "cosine":
                    opt.state.lr = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / steps))
                opt.zero_grad()
                with ad.Tape() as tape:
                    out = loss(model(batch), batch, lam, grad_op)
                if not np.isfinite(out.value):
                    raise TrainingError(
                        f"non-finite loss at step {step + 1}", checkpoint=Checkpoint.from_model(model, opt.state, step)
                    )
                ad.backward(tape, out)
                try:
                    opt.step()
                except TrainingError as exc:
                    # the update checks gradients before touching any state
                    raise TrainingError(str(exc), checkpoint=Checkpoint.from_model(model, opt.state, step)) from None
                step += 1
                if callback is not None:
                    callback(step, float(out.value))
            epoch += 1
            if epoch % max(cfg.log_every, 1) == 0 and step < steps:
                record(step)
        record(step)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(
        checkpoint=Checkpoint.from_model(model, opt.state, step),
        history=history,
        train_idx=train_idx,
        test_idx=test_idx,
        seconds=time.perf_counter() - t0,
    )
