import numpy as np
import pytest

from qckit.data import (
    FieldSeries,
    PulseParams,
    WakeParams,
    analytic_lowpass_oracle,
    gen_lowpass_signals,
    gen_pulse2d,
    gen_wake2d,
    load_series,
    lowpass_kernel,
    lowpass_signal,
    pulse_center,
    resample_series,
    save_series,
    wake_mode_count,
)
from qckit.errors import ConfigurationError, ContractError, FormatError, InterpolationError
from qckit.mesh import Mesh, nonuniform_mesh, uniform_grid


def test_lowpass_signal_and_kernel_values():
    assert lowpass_signal(0.0) == 0.0
    assert np.isclose(lowpass_signal(0.5), 1.0, atol=1e-14)
    assert lowpass_kernel(0.0) == 64.0
    x = np.array([0.013, -0.4, 0.77])
    np.testing.assert_allclose(lowpass_kernel(x), 8 * np.sin(8 * np.pi * x) / (np.pi * x), rtol=1e-13)


def test_lowpass_samples():
    x, f, g = gen_lowpass_signals(64)
    np.testing.assert_allclose(x, np.linspace(-1, 1, 64))
    xn, fn, _ = gen_lowpass_signals(64, "nonuniform", seed=3)
    assert xn[0] == -1 and xn[-1] == 1 and np.all(np.diff(xn) > 0)
    gaps = np.diff(xn)
    assert gaps.max() / gaps.min() > 2  # genuinely non-uniform
    np.testing.assert_array_equal(fn, lowpass_signal(xn))
    with pytest.raises(ConfigurationError):
        gen_lowpass_signals(4)
    with pytest.raises(ConfigurationError):
        gen_lowpass_signals(16, "random")


def test_oracle_refinement_is_converged():
    y = np.linspace(-0.9, 0.9, 7)
    a = analytic_lowpass_oracle(y)
    x = np.linspace(-1, 1, 2**18 + 1)
    w = np.full(len(x), 2 / 2**18)
    w[[0, -1]] /= 2
    fine = np.array([np.sum(w * lowpass_signal(x) * lowpass_kernel(v - x)) for v in y])
    assert np.max(np.abs(a - fine)) < 1e-6


def test_oracle_is_odd():
    assert abs(analytic_lowpass_oracle(0.0)[0]) < 1e-9
    y = np.array([0.2, 0.45])
    np.testing.assert_allclose(analytic_lowpass_oracle(-y), -analytic_lowpass_oracle(y), atol=1e-9)


def test_oracle_suppresses_high_frequency():
    y = np.linspace(-1, 1, 128)
    out = analytic_lowpass_oracle(y)
    low = abs(out @ np.sin(np.pi * y))
    high = abs(out @ np.sin(14 * np.pi * y))
    assert high <= 0.01 * low


def test_pulse_starts_near_zero_when_onset_is_late():
    g = uniform_grid(2, 16)
    p = PulseParams(onset=0.5, jitter=0.0)
    s = gen_pulse2d(g, 10, p)
    assert np.max(s.values[0]) < 1e-3 * p.amplitude


def test_pulse_peak_tracks_center():
    g = uniform_grid(2, 32)
    p = PulseParams(jitter=0.0)
    s = gen_pulse2d(g, 16, p)
    t = np.linspace(0, 1, 16)
    for k in range(16):
        peak = g.points[np.argmax(s.values[k, 0])]
        assert np.all(np.abs(peak - pulse_center(t[k], p)) <= g.spacing)


def test_pulse_is_deterministic_and_seeded():
    g = uniform_grid(2, 8)
    a, b, c = gen_pulse2d(g, 5, seed=1), gen_pulse2d(g, 5, seed=1), gen_pulse2d(g, 5, seed=2)
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, c.values)


def test_wake_is_periodic():
    g = uniform_grid(2, 20)
    p = WakeParams(period=0.25)
    s = gen_wake2d(g, 9, p)  # dt = 0.125, so one period is two samples
    np.testing.assert_allclose(s.values[2:], s.values[:-2], atol=1e-12)


def test_wake_disk_is_masked():
    m = nonuniform_mesh(1000, seed=0)
    p = WakeParams()
    s = gen_wake2d(m, 6, p)
    assert s.N == 1000
    inside = np.linalg.norm(m.points - np.array(p.disk_center), axis=1) < p.disk_radius
    assert inside.any() and not s.values[:, :, inside].any()


def test_wake_snapshot_rank_is_bounded():
    g = uniform_grid(2, 24)
    s = gen_wake2d(g, 60)
    sv = np.linalg.svd(s.values[:, 0, :], compute_uv=False)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    assert rank <= wake_mode_count()


def test_series_validation():
    with pytest.raises(ConfigurationError):
        FieldSeries(np.zeros((2, 3)))
    with pytest.raises(ConfigurationError):
        FieldSeries(np.full((1, 1, 2), np.inf))
    with pytest.raises(ContractError):
        FieldSeries(np.zeros((1, 1, 5)), mesh=uniform_grid(2, 3))


def test_resample_identity():
    g = uniform_grid(2, 6)
    s = gen_pulse2d(g, 3)
    r = resample_series(s, g, uniform_grid(2, 6))
    assert r.values.tobytes() == s.values.tobytes()


def test_resample_is_exact_on_affine_fields():
    g = uniform_grid(2, 9)
    m = nonuniform_mesh(200, seed=2, anchor_corners=True)

    def affine(p):
        return 0.3 * p[:, 0] - 1.7 * p[:, 1] + 2.0

    s = FieldSeries(affine(g.points)[None, None], mesh=g)
    to_mesh = resample_series(s, g, m)
    np.testing.assert_allclose(to_mesh.values[0, 0], affine(m.points), atol=1e-13)
    back = resample_series(to_mesh, m, g)
    np.testing.assert_allclose(back.values[0, 0], affine(g.points), atol=1e-12)


def test_resample_is_linear():
    g = uniform_grid(2, 10)
    m = nonuniform_mesh(50, seed=1)
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 2, 1, g.count))
    ra = resample_series(FieldSeries(a, mesh=g), g, m).values
    rb = resample_series(FieldSeries(b, mesh=g), g, m).values
    rab = resample_series(FieldSeries(2 * a - b, mesh=g), g, m).values
    np.testing.assert_allclose(rab, 2 * ra - rb, atol=1e-12)


def test_round_trip_error_is_small_on_smooth_field():
    g = uniform_grid(2, 32)
    # scattered interior plus the grid's boundary nodes, so the hull edges are resolved
    edge = g.points[np.any((g.points == 0) | (g.points == 1), axis=1)]
    m = Mesh(np.vstack([edge, nonuniform_mesh(2000, seed=0).points]))
    s = gen_pulse2d(g, 8, PulseParams(width=0.3))
    back = resample_series(resample_series(s, g, m), m, g)
    num = np.linalg.norm(back.values - s.values)
    assert num / np.linalg.norm(s.values) < 0.01


def test_resample_refuses_extrapolation():
    g = uniform_grid(2, 5)
    outside = Mesh(np.array([[0.5, 0.5], [1.2, 0.5]]))
    with pytest.raises(InterpolationError):
        resample_series(gen_pulse2d(g, 2), g, outside)
    inner = Mesh(np.array([[0.2, 0.2], [0.8, 0.2], [0.5, 0.8]]))
    s = FieldSeries(np.ones((1, 1, 3)), mesh=inner)
    with pytest.raises(InterpolationError):
        resample_series(s, inner, Mesh(np.array([[0.0, 0.0]])))


def test_series_file_round_trip_and_layout(tmp_path):
    g = uniform_grid(2, 8)
    s = gen_pulse2d(g, 5)
    path = tmp_path / "s.qcs"
    save_series(s, path)
    raw = path.read_bytes()
    assert raw[:8] == b"QCSER001"
    assert int.from_bytes(raw[8:16], "little") == 5
    assert int.from_bytes(raw[16:20], "little") == 1
    assert int.from_bytes(raw[20:28], "little") == 64
    assert np.frombuffer(raw[28:36], "<f8")[0] == s.dt
    assert len(raw) == 36 + 8 * 5 * 64
    back = load_series(path, g)
    assert back.values.tobytes() == s.values.tobytes() and back.dt == s.dt


def test_series_file_errors(tmp_path):
    g = uniform_grid(2, 4)
    path = tmp_path / "s.qcs"
    save_series(gen_pulse2d(g, 3), path)
    raw = path.read_bytes()
    (tmp_path / "cut").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        load_series(tmp_path / "cut")
    (tmp_path / "magic").write_bytes(b"QCSER002" + raw[8:])
    with pytest.raises(FormatError):
        load_series(tmp_path / "magic")
    with pytest.raises(ContractError):
        load_series(path, uniform_grid(2, 5))
