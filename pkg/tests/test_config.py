import pytest

from qckit.config import SCHEMA, RunConfig
from qckit.errors import ConfigurationError


def test_defaults_cover_schema():
    cfg = RunConfig()
    assert set(cfg.values) == set(SCHEMA)


def test_text_round_trip():
    text = """
    # a comment
    model.channels = 4, 8, 16   # trailing comment
    train.lr = 0.002
    mesh.cache = false
    data.kind = wake2d
    """
    cfg = RunConfig.from_text(text)
    assert cfg["model.channels"] == (4, 8, 16)
    assert cfg["train.lr"] == 0.002
    assert cfg["mesh.cache"] is False
    again = RunConfig.from_text(cfg.to_text())
    assert again == cfg
    assert again.to_text() == cfg.to_text()


def test_canonical_text_is_sorted():
    lines = RunConfig().to_text().splitlines()
    assert lines == sorted(lines)


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError):
        RunConfig.from_text("model.chanels = 4")
    with pytest.raises(ConfigurationError):
        RunConfig({"nope": 1})


def test_bad_values_rejected():
    for line in ("train.lr = fast", "mesh.cache = maybe", "data.T = 3.5", "just words"):
        with pytest.raises(ConfigurationError):
            RunConfig.from_text(line)
    with pytest.raises(ConfigurationError):
        RunConfig({"data.T": "x"})


def test_section():
    sec = RunConfig().section("train")
    assert "lr" in sec and all("." not in k for k in sec)


def test_save_load(tmp_path):
    cfg = RunConfig({"data.T": 12})
    cfg.save(tmp_path / "c.txt")
    assert RunConfig.load(tmp_path / "c.txt") == cfg
