import numpy as np
import pytest


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Keep index-map caches out of the user's home directory."""
    d = tmp_path / "qcache"
    monkeypatch.setenv("QCKIT_CACHE_DIR", str(d))
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
