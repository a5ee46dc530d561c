"""Central finite-difference gradient checks for the tape engine."""

import numpy as np

from qckit import autodiff as ad
from qckit.autodiff import Tensor

STEP = 1e-6
RTOL = 1e-5


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.max(np.abs(b)), np.max(np.abs(a)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def gradcheck(fn, arrays, rng, step=STEP):
    """Compare tape gradients of ``sum(W * fn(*tensors))`` against central differences.

    Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = fn(*[Tensor(a) for a in arrays])
    W = rng.standard_normal(probe.shape)

    def scalar(*vals):
        return float(np.sum(W * fn(*[Tensor(v) for v in vals]).value))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        out = ad.reduce_sum(ad.mul(fn(*leaves), Tensor(W)))
    ad.backward(tape, out)

    worst = 0.0
    for k, a in enumerate(arrays):
        fd = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [v.copy() for v in arrays]
            minus = [v.copy() for v in arrays]
            plus[k][idx] += step
            minus[k][idx] -= step
            fd[idx] = (scalar(*plus) - scalar(*minus)) / (2 * step)
        got = leaves[k].grad if leaves[k].grad is not None else np.zeros_like(a)
        worst = max(worst, rel_err(got, fd))
    return worst
