"""One-dimensional low-pass demonstration.

A two-tone signal sampled on ``[-1, 1]`` is convolved with an ideal
low-pass kernel four ways and compared with a refined-quadrature
reference:

* ``naive_discrete``: the samples are treated as an evenly spaced sequence
  (positions ignored), as a standard discrete convolution would.
* ``continuous_kernel``: the kernel is evaluated at the true offsets but
  every sample gets the same weight ``2 / (n - 1)``.
* ``quadconv``: a :class:`QuadConvLayer` with trapezoid weights on the true
  nodes and a fixed kernel ``g / bump``, so the bump cancels out.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import analytic_lowpass_oracle, gen_lowpass_signals, lowpass_kernel
from .kernel import FixedKernel, bump
from .mesh import Mesh
from .quadconv import QuadConvLayer
from .quadrature import QuadratureWeights, trapezoid_nonuniform

METHODS = ("naive_discrete", "continuous_kernel", "quadconv")
DOMAIN = (-1.0, 1.0)
# support radius wide enough that no offset in the window is cut off
ALPHA = 4.0


@dataclass
class LowpassResult:
    y: np.ndarray
    columns: dict
    errors: dict

    def rows(self):
        names = ["analytic", *METHODS]
        for j, yj in enumerate(self.y):
            yield [yj] + [self.columns[n][j] for n in names]


def quadconv_lowpass(x, f, y) -> np.ndarray:
    """Low-pass filter of samples ``(x, f)`` evaluated at ``y`` by a QuadConv layer."""
    inp = Mesh(np.asarray(x, dtype=np.float64)[:, None])
    out = Mesh(np.asarray(y, dtype=np.float64)[:, None])

    def h(z):
        z = z[:, 0]
        return (lowpass_kernel(z) / bump(z[:, None], ALPHA))[:, None, None]

    layer = QuadConvLayer(
        inp,
        out,
        1,
        1,
        alpha=ALPHA,
        kernel=FixedKernel(h, 1),
        weights=QuadratureWeights(rho=trapezoid_nonuniform(x)),
    )
    return layer.forward(np.asarray(f)[None, :]).value[0]


def run_lowpass(n: int = 128, sampling: str = "nonuniform", n_out: int = 128, seed: int = 0) -> LowpassResult:
    x, f, g = gen_lowpass_signals(n, sampling, seed, DOMAIN)
    y = np.linspace(*DOMAIN, n_out)
    h = (DOMAIN[1] - DOMAIN[0]) / (n - 1)
    even = np.linspace(*DOMAIN, n)
    cols = {
        "analytic": analytic_lowpass_oracle(y, DOMAIN),
        "naive_discrete": g(y[:, None] - even[None, :]) @ f * h,
        "continuous_kernel": g(y[:, None] - x[None, :]) @ f * h,
        "quadconv": quadconv_lowpass(x, f, y),
    }
    errors = {m: float(np.max(np.abs(cols[m] - cols["analytic"]))) for m in METHODS}
    return LowpassResult(y, cols, errors)


def write_csv(result: LowpassResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "analytic", *METHODS])
        for row in result.rows():
            w.writerow([repr(float(v)) for v in row])
