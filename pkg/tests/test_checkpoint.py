import numpy as np
import pytest

from qckit.compression import AutoencoderConfig, QCAutoencoder, decode, encode, load_checkpoint, save_checkpoint, train
from qckit.compression.checkpoint import Checkpoint, checkpoint_from_bytes, checkpoint_to_bytes
from qckit.data import gen_pulse2d
from qckit.errors import ContractError, FormatError
from qckit.mesh import nonuniform_mesh, uniform_grid


def trained(mesh, steps=4, **kw):
    cfg = AutoencoderConfig(channels=(3,), kernel_hidden=(5,), latent_dim=4, max_steps=steps, log_every=1000, **kw)
    model = QCAutoencoder(cfg, mesh)
    x = gen_pulse2d(mesh, 6).values
    res = train(model, x)
    return model, res.checkpoint, x


@pytest.mark.parametrize("precision", ["f64", "f32"])
def test_reload_reproduces_outputs_bitwise(tmp_path, precision):
    g = uniform_grid(2, 8)
    model, ck, x = trained(g, precision=precision)
    save_checkpoint(ck, tmp_path / "c.qcc")
    back = load_checkpoint(tmp_path / "c.qcc").build_model()
    assert encode(back, x).tobytes() == encode(model, x).tobytes()
    z = encode(model, x)
    assert decode(back, z).tobytes() == decode(model, z).tobytes()


def test_reload_with_learned_weights_on_scattered_mesh(tmp_path):
    m = nonuniform_mesh(120, seed=0)
    model, ck, x = trained(m, architecture="downsample_style")
    assert any(layer.weights.mode == "learned" for layer in model.encoder)
    save_checkpoint(ck, tmp_path / "c.qcc")
    back = load_checkpoint(tmp_path / "c.qcc").build_model()
    assert encode(back, x).tobytes() == encode(model, x).tobytes()


def test_file_round_trip_is_byte_identical(tmp_path):
    _, ck, _ = trained(uniform_grid(2, 8))
    raw = checkpoint_to_bytes(ck)
    assert raw[:8] == b"QCCKPT01"
    again = checkpoint_to_bytes(checkpoint_from_bytes(raw))
    assert again == raw


def test_checkpoint_contents():
    model, ck, _ = trained(uniform_grid(2, 8), steps=3)
    assert ck.step == 3 and ck.optimizer.t == 3
    assert list(ck.params) == [n for n, _ in model.named_parameters()]
    assert len(ck.optimizer.m) == len(ck.params)
    assert "model.channels = 3" in ck.config_text


def test_resumed_optimizer_state_survives(tmp_path):
    _, ck, _ = trained(uniform_grid(2, 8))
    back = checkpoint_from_bytes(checkpoint_to_bytes(ck))
    for a, b in zip(ck.optimizer.m + ck.optimizer.v, back.optimizer.m + back.optimizer.v):
        assert np.array_equal(a, b)
    assert (back.optimizer.lr, back.optimizer.beta1, back.optimizer.beta2, back.optimizer.eps) == (
        ck.optimizer.lr, ck.optimizer.beta1, ck.optimizer.beta2, ck.optimizer.eps)


def test_format_errors():
    _, ck, _ = trained(uniform_grid(2, 8), steps=1)
    raw = checkpoint_to_bytes(ck)
    with pytest.raises(FormatError):
        checkpoint_from_bytes(b"QCCKPT02" + raw[8:])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(raw[:8] + (99).to_bytes(4, "little") + raw[12:])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(raw[:-10])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(raw[:40])


def test_parameter_mismatch_is_a_contract_error():
    _, ck, _ = trained(uniform_grid(2, 8), steps=1)
    bad = Checkpoint(ck.config_text.replace("model.latent_dim = 4", "model.latent_dim = 5"), ck.mesh,
                     ck.in_channels, ck.params, ck.scales, ck.step, ck.optimizer)
    with pytest.raises(ContractError):
        bad.build_model()
