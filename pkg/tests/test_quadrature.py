import numpy as np
import pytest

from qckit.errors import ConfigurationError, UnsupportedMeshError
from qckit.mesh import Mesh, uniform_grid
from qckit.quadrature import (
    QuadratureWeights,
    init_learned_weights,
    newton_cotes_weights,
    softplus_inverse,
    trapezoid_1d,
    trapezoid_nonuniform,
)


def test_two_by_two_unit_square_gives_quarters():
    w = newton_cotes_weights(uniform_grid(2, 2, 1.0)).rho
    np.testing.assert_array_equal(w, [0.25] * 4)


def test_weights_sum_to_volume():
    for dim, n, ext in ((1, 7, 2.0), (2, 9, 1.0), (3, 4, 3.0)):
        w = newton_cotes_weights(uniform_grid(dim, n, ext)).rho
        assert np.isclose(w.sum(), ext**dim, rtol=1e-14)


def test_trapezoid_integrates_bilinear_exactly():
    g = uniform_grid(2, 11, 1.0)
    x, y = g.points.T
    f = 3 + 2 * x - y + 5 * x * y
    # exact integral over the unit square: 3 + 1 - 0.5 + 1.25
    assert np.isclose(newton_cotes_weights(g).rho @ f, 4.75, rtol=1e-14)


def test_trapezoid_1d_and_nonuniform_agree_on_uniform_nodes():
    x = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(trapezoid_nonuniform(x), trapezoid_1d(9, 0.25), rtol=1e-15)


def test_nonuniform_trapezoid_exact_on_linears():
    x = np.sort(np.random.default_rng(0).uniform(-1, 1, 20))
    w = trapezoid_nonuniform(x)
    a, b = x[0], x[-1]
    assert np.isclose(w @ (2 * x + 1), (b**2 - a**2) + (b - a), rtol=1e-13)


def test_scattered_mesh_rejected_for_static_rule():
    with pytest.raises(UnsupportedMeshError):
        newton_cotes_weights(Mesh(np.random.default_rng(0).uniform(size=(10, 2))))


def test_softplus_inverse_round_trip():
    v = np.logspace(-8, 3, 50)
    back = np.logaddexp(0.0, softplus_inverse(v))
    np.testing.assert_allclose(back, v, rtol=1e-12)


def test_learned_weights_start_at_static_rule():
    g = uniform_grid(2, 6)
    w = init_learned_weights(g)
    assert w.mode == "learned"
    np.testing.assert_allclose(w.rho, newton_cotes_weights(g).rho, rtol=1e-12)
    s = init_learned_weights(Mesh(np.random.default_rng(0).uniform(size=(8, 2))), fallback_volume=2.0)
    np.testing.assert_allclose(s.rho, 0.25, rtol=1e-12)


def test_learned_weights_stay_positive():
    w = QuadratureWeights(raw=np.array([-800.0, -30.0, 0.0, 40.0]))
    assert np.all(w.rho > 0)


def test_validation():
    with pytest.raises(ConfigurationError):
        QuadratureWeights(rho=np.array([1.0, 0.0]))
    with pytest.raises(ConfigurationError):
        QuadratureWeights()
    with pytest.raises(ConfigurationError):
        init_learned_weights(uniform_grid(1, 4), fallback_volume=0.0)
