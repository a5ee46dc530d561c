import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_gradient_field
from qckit import autodiff as ad
from qckit.compression import (
    AutoencoderConfig,
    GridGradient,
    QCAutoencoder,
    decode,
    encode,
    loss,
    max_error,
    pod_baseline,
    pod_error,
    relative_error,
    resolve_lambda,
    split_dataset,
    train,
)
from qckit.compression import training as training_mod
from qckit.config import RunConfig
from qckit.data import gen_pulse2d
from qckit.errors import ConfigurationError, MetricError, ShapeError, TrainingError
from qckit.mesh import Mesh, nonuniform_mesh, uniform_grid

SMALL = dict(channels=(4,), kernel_hidden=(6,), latent_dim=4, log_every=1000)


# -- architecture ---------------------------------------------------------------


def test_compression_ratio_fifty_on_fifty_grid():
    model = QCAutoencoder(AutoencoderConfig(channels=(2,), kernel_hidden=(4,), latent_dim=50), uniform_grid(2, 50))
    assert model.compression_ratio == 50
    assert encode(model, np.zeros((1, 2500))).shape == (50,)


def test_compression_ratio_ten():
    model = QCAutoencoder(AutoencoderConfig(channels=(2,), kernel_hidden=(4,), latent_dim=10), uniform_grid(2, 10))
    assert model.compression_ratio == 10


def test_no_bottleneck_accepted():
    g = uniform_grid(2, 4)
    model = QCAutoencoder(AutoencoderConfig(channels=(4,), kernel_hidden=(4,), latent_dim=16), g)
    assert model.compression_ratio == 1
    assert model(np.zeros((2, 1, 16))).shape == (2, 1, 16)


def test_downsample_stages_chain():
    m = nonuniform_mesh(320, seed=0)
    model = QCAutoencoder(AutoencoderConfig(architecture="downsample_style", channels=(3, 5), kernel_hidden=(4,),
                                            latent_dim=6), m)
    assert [s.count for s in model.stage_meshes] == [320, 80, 20]
    assert model.encoder[0].output_mesh.count == 80 and model.encoder[1].output_mesh.count == 20
    assert model.enc_head[0].n_in == 5 * 20
    assert model(np.ones((2, 1, 320))).shape == (2, 1, 320)
    assert all(layer.map.stats["empty"] == 0 for layer in model.encoder + model.decoder)


def test_pool_style_on_scattered_mesh_resamples_through_grid():
    m = nonuniform_mesh(150, seed=1)
    model = QCAutoencoder(AutoencoderConfig(channels=(2, 3), kernel_hidden=(4,), latent_dim=5, grid_side=16), m)
    assert model.encoder[0].input_mesh is m and model.encoder[0].output_mesh.is_grid
    assert model.decoder[-1].output_mesh is m
    assert model.encoder[0].weights.mode == "learned"
    assert model.encoder[1].weights.mode == "static"
    assert model(np.ones((1, 1, 150))).shape == (1, 1, 150)


def test_inconsistent_configs_rejected():
    with pytest.raises(ConfigurationError):
        QCAutoencoder(AutoencoderConfig(channels=(2, 2, 2)), uniform_grid(2, 12))
    for bad in (dict(latent_dim=0), dict(architecture="unet"), dict(channels=()), dict(precision="f16"),
                dict(lr_schedule="step")):
        with pytest.raises(ConfigurationError):
            AutoencoderConfig(**bad)


def test_config_round_trips_through_run_config():
    cfg = AutoencoderConfig(channels=(3, 7), lam=0.25, lr=0.004, precision="f32", latent_dim=9)
    run = cfg.to_run_config()
    again = AutoencoderConfig.from_run_config(RunConfig.from_text(run.to_text()))
    assert again == cfg


def test_encode_decode_shapes_and_determinism():
    g = uniform_grid(2, 8)
    model = QCAutoencoder(AutoencoderConfig(**SMALL), g)
    x = gen_pulse2d(g, 3).values
    z1, z2 = encode(model, x), encode(model, x)
    assert z1.shape == (3, 4) and z1.tobytes() == z2.tobytes()
    assert decode(model, z1).shape == x.shape
    with pytest.raises(ShapeError):
        model.encode(np.zeros((1, 2, 64)))
    with pytest.raises(ShapeError):
        model.decode(np.zeros((1, 5)))


# -- loss and metrics ----------------------------------------------------------------


def test_loss_zero_on_perfect_reconstruction():
    x = np.random.default_rng(0).standard_normal((2, 1, 16))
    assert loss(x, x, 1.0, GridGradient(uniform_grid(2, 4))).value == 0.0


def test_loss_single_pixel():
    x = np.zeros((1, 25))
    y = x.copy()
    y[0, 7] = 0.3
    assert loss(y, x).value == pytest.approx(0.09, rel=1e-15)


def test_loss_equals_squared_hs_error_without_penalty():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, 3, 2, 16))
    expected = np.mean(np.sum((a - b) ** 2, axis=(1, 2)))
    assert loss(a, b, 0.0).value == pytest.approx(expected, rel=1e-14)


def test_derivative_penalty_against_fd_script():
    g = uniform_grid(2, 9)
    truth = np.full((1, 1, g.count), 2.0)
    recon = (0.5 + 3.0 * g.points[:, 0] - 1.0 * g.points[:, 1])[None, None]
    got = loss(recon, truth, 1.0, GridGradient(g)).value
    hs = np.sum((recon - truth) ** 2)
    dr = fd_gradient_field(recon[0, 0], 9, 2, g.spacing)
    dt = fd_gradient_field(truth[0, 0], 9, 2, g.spacing)
    R = np.mean([np.mean((a - b) ** 2) for a, b in zip(dr, dt)])
    assert np.isclose(R, (9.0 + 1.0) / 2)  # mean squared slope mismatch
    assert got == pytest.approx(hs + R, rel=1e-12)


def test_grid_gradient_matches_numpy_gradient():
    g = uniform_grid(2, 7)
    f = np.random.default_rng(2).standard_normal(g.count)
    gx, gy = GridGradient(g)(ad.Tensor(f[None, None]))
    ref = np.gradient(f.reshape(7, 7), g.spacing, edge_order=2)
    np.testing.assert_allclose(gx.value.ravel(), ref[0].ravel(), atol=1e-12)
    np.testing.assert_allclose(gy.value.ravel(), ref[1].ravel(), atol=1e-12)


def test_lambda_resolution():
    grid, scattered = uniform_grid(2, 4), Mesh(np.random.default_rng(0).uniform(size=(10, 2)))
    assert resolve_lambda("auto", grid) == 0.1
    assert resolve_lambda("auto", scattered) == 0.0
    assert resolve_lambda(0.0, scattered) == 0.0
    with pytest.raises(ConfigurationError):
        resolve_lambda(0.5, scattered)
    with pytest.raises(ConfigurationError):
        resolve_lambda(-1.0, grid)


def test_metric_examples():
    rng = np.random.default_rng(3)
    truth = rng.standard_normal((6, 2, 10))
    assert relative_error(truth, truth) == 0.0
    assert relative_error(np.zeros_like(truth), truth) == pytest.approx(1.0)
    assert relative_error(1.01 * truth, truth) == pytest.approx(0.01, rel=1e-12)
    bad = truth.copy()
    bad[2] *= 1.05
    assert max_error(bad, truth) == pytest.approx(0.05, rel=1e-12)
    zero = truth.copy()
    zero[4] = 0.0
    with pytest.raises(MetricError):
        relative_error(truth, zero)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 20), st.integers(0, 2**31))
def test_max_error_bounds_relative_error(T, N, seed):
    rng = np.random.default_rng(seed)
    truth = rng.standard_normal((T, 1, N)) + 3.0
    recon = truth + rng.standard_normal((T, 1, N)) * rng.uniform(0, 1)
    assert 0.0 <= relative_error(recon, truth) <= max_error(recon, truth) + 1e-15


def test_split_examples():
    tr, te = split_dataset(10, 0.8, seed=5)
    assert len(tr) == 8 and len(te) == 2
    tr2, te2 = split_dataset(10, 0.8, seed=5)
    assert tr.tolist() == tr2.tolist() and te.tolist() == te2.tolist()
    with pytest.raises(ConfigurationError):
        split_dataset(4)


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 300), st.integers(0, 2**31))
def test_split_partitions(T, seed):
    tr, te = split_dataset(T, 0.8, seed)
    assert len(tr) == math.ceil(0.8 * T - 1e-9) and len(te) == T - len(tr)
    assert sorted(tr.tolist() + te.tolist()) == list(range(T))


# -- POD --------------------------------------------------------------------------------


def test_pod_full_rank_is_exact():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((12, 1, 40))
    basis = pod_baseline(X, 12)
    assert pod_error(basis, X) <= 1e-10
    np.testing.assert_allclose(basis.T @ basis, np.eye(12), atol=1e-12)


def test_pod_rank_one():
    rng = np.random.default_rng(5)
    X = np.outer(rng.uniform(1, 2, 7), rng.standard_normal(30)).reshape(7, 1, 30)
    assert pod_error(pod_baseline(X, 1), X) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_pod_projection_error_is_svd_tail(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((9, 1, 25))
    snaps = X.reshape(9, -1).T
    s = np.linalg.svd(snaps, compute_uv=False)
    for r in (1, 4, 8):
        basis = pod_baseline(X, r)
        resid = snaps - basis @ (basis.T @ snaps)
        assert np.sum(resid**2) == pytest.approx(np.sum(s[r:] ** 2), rel=1e-10)


def test_pod_rank_validation():
    X = np.ones((4, 1, 10))
    with pytest.raises(ConfigurationError):
        pod_baseline(X, 5)
    with pytest.raises(ConfigurationError):
        pod_baseline(X, 0)


# -- training ------------------------------------------------------------------------------


def test_zero_lr_keeps_parameters(tmp_path):
    g = uniform_grid(2, 8)
    model = QCAutoencoder(AutoencoderConfig(lr=0.0, max_steps=6, **SMALL), g)
    before = [p.value.copy() for p in model.parameters()]
    seen = []
    res = train(model, gen_pulse2d(g, 8).values, log_path=tmp_path / "log.csv", callback=lambda s, l: seen.append(l))
    assert all(np.array_equal(a, p.value) for a, p in zip(before, model.parameters()))
    losses = [r["loss"] for r in res.history if r["split"] == "train"]
    assert losses[0] == losses[-1]
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,split,loss,rel_err,max_err"
    assert len(seen) == 6


def test_training_is_deterministic():
    g = uniform_grid(2, 8)
    x = gen_pulse2d(g, 6).values
    runs = []
    for _ in range(2):
        model = QCAutoencoder(AutoencoderConfig(max_steps=5, **SMALL), g)
        train(model, x)
        runs.append(np.concatenate([p.value.ravel() for p in model.parameters()]))
    assert runs[0].tobytes() == runs[1].tobytes()


def test_overfit_single_sample():
    g = uniform_grid(2, 4)
    sample = gen_pulse2d(g, 30).values[20:21]
    x = np.repeat(sample, 5, axis=0)
    cfg = AutoencoderConfig(channels=(16,), kernel_hidden=(8,), latent_dim=16, lr=1e-2, lr_schedule="cosine",
                            lam=0.0, max_steps=2000, log_every=10000)
    model = QCAutoencoder(cfg, g)
    train(model, x)
    assert relative_error(decode(model, encode(model, sample)), sample) < 1e-3


def test_training_loss_trends_down():
    g = uniform_grid(2, 8)
    x = gen_pulse2d(g, 20).values
    losses = []
    model = QCAutoencoder(AutoencoderConfig(max_steps=300, lr=1e-3, **SMALL), g)
    train(model, x, callback=lambda s, l: losses.append(l))
    ma = np.convolve(losses, np.ones(10) / 10, mode="valid")
    blocks = ma[::50]
    assert np.all(np.diff(blocks) <= 0)


def test_nan_loss_aborts_with_last_good_checkpoint(monkeypatch):
    g = uniform_grid(2, 8)
    model = QCAutoencoder(AutoencoderConfig(max_steps=10, **SMALL), g)
    real = training_mod.loss
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        out = real(*args, **kwargs)
        if out.requires_grad:
            calls["n"] += 1
            if calls["n"] == 4:
                return ad.Tensor(np.array(np.nan), requires_grad=True)
        return out

    monkeypatch.setattr(training_mod, "loss", flaky)
    with pytest.raises(TrainingError) as info:
        train(model, gen_pulse2d(g, 8).values)
    ck = info.value.checkpoint
    assert ck is not None and ck.step == 3
    assert all(np.all(np.isfinite(v)) for v in ck.params.values())


def test_training_rejects_wrong_data_shape():
    g = uniform_grid(2, 8)
    model = QCAutoencoder(AutoencoderConfig(**SMALL), g)
    with pytest.raises(ShapeError):
        train(model, np.zeros((6, 1, 50)))
