import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spectral_dielectric import geometry as geo
from spectral_dielectric import irgnm as ir
from spectral_dielectric import sphere_basis as sb
from spectral_dielectric.assembly import DielectricConfig
from spectral_dielectric.forward_solver import ForwardSystem, PlaneWave
from spectral_dielectric.shape_derivative import LinearizedForward

KE = np.pi / 2
CFG = DielectricConfig(KE, 2 * KE, 1.0, 2.0)
WAVES = [PlaneWave((0, 0, 1), (1, 0, 0)), PlaneWave((1, 0, 0), (0, 1, 0))]
N_FAR = 8


@pytest.fixture(scope="module")
def truth():
    return geo.StarShape.from_function(lambda x: 1.0 + 0.15 * x[..., 2] ** 2, 2)


@pytest.fixture(scope="module")
def clean_data(truth):
    return ir.synthesize_data(truth, CFG, WAVES, 0.0, 0, n_synth=11, n_far=N_FAR)


@pytest.fixture(scope="module")
def state(truth):
    system = ForwardSystem(geo.StarShape.sphere(1.0, 2).to_param(), CFG, 6, n_far=N_FAR)
    return LinearizedForward(system, WAVES, n_r=2)


def test_config_validation():
    for bad in [dict(alpha0=-1.0), dict(decay=1.0), dict(tau=1.0), dict(s=2.0),
                dict(cg_max=0), dict(n_fwd=0)]:
        with pytest.raises(ValueError):
            ir.IrgnmConfig(**bad)
    cfg = ir.IrgnmConfig()
    assert cfg.decay == pytest.approx(2 / 3) and cfg.tau == 4.0
    assert cfg.cg_tol == 1e-8 and cfg.cg_max == 200


def test_noise_free_data(clean_data):
    assert clean_data.delta == 0.0
    assert clean_data.data.shape == (2, sb.build_gauss_grid(N_FAR).size, 3)


def test_noise_energy_and_determinism(truth, clean_data):
    a = ir.synthesize_data(truth, CFG, WAVES, 0.03, 11, n_synth=11, n_far=N_FAR)
    b = ir.synthesize_data(truth, CFG, WAVES, 0.03, 11, n_synth=11, n_far=N_FAR)
    c = ir.synthesize_data(truth, CFG, WAVES, 0.03, 12, n_synth=11, n_far=N_FAR)
    w = a.far_weights
    noise = a.data - clean_data.data
    assert_allclose(ir.farfield_norm(noise, w), a.delta, rtol=1e-12)
    assert_allclose(a.delta, 0.03 * clean_data.norm(), rtol=1e-12)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    xhat = sb.build_gauss_grid(N_FAR).points.reshape(-1, 3)
    assert np.max(np.abs(np.sum(noise * xhat, -1))) <= 1e-14


def test_measurement_roundtrip(tmp_path, truth):
    ms = ir.synthesize_data(truth, CFG, WAVES, 0.01, 3, n_synth=11, n_far=N_FAR)
    path = tmp_path / "data.json"
    ms.to_json(path)
    back = ir.MeasurementSet.from_json(path)
    assert np.array_equal(back.data, ms.data)
    assert back.delta == ms.delta and back.seed == 3 and back.n_far == N_FAR
    assert_allclose(back.incidents[1].p, WAVES[1].p)
    with pytest.raises(ValueError):
        ir.MeasurementSet.from_dict({"version": 1})


def test_measurement_shape_check(clean_data):
    with pytest.raises(ValueError):
        ir.MeasurementSet(CFG, WAVES, clean_data.data[:1], 0.0, N_FAR)


def test_normal_operator_symmetric_positive(state):
    rng = np.random.default_rng(0)
    A = ir.normal_operator(state, 0.3, 2.5)
    wts = sb.sobolev_weights(2, 2.5)
    x = sb.real_projection(rng.normal(size=9) + 1j * rng.normal(size=9))
    y = sb.real_projection(rng.normal(size=9) + 1j * rng.normal(size=9))
    ip = lambda a, b: float(np.real(np.sum(wts * a * np.conj(b))))
    assert abs(ip(A(x), y) - ip(x, A(y))) <= 1e-8 * abs(ip(A(x), y))
    assert ip(A(x), x) >= 0.3 * ip(x, x)


def test_large_alpha_pulls_to_initial_guess(state, clean_data):
    q0 = geo.StarShape.sphere(1.1, 2).coeffs
    qN = geo.StarShape.sphere(1.0, 2).coeffs
    dq, info = ir.cg_normal_step(state, clean_data.data, qN, q0, 1e8, 2.5)
    assert info.converged
    assert np.linalg.norm(dq - (q0 - qN)) <= 1e-4 * np.linalg.norm(q0 - qN)


def test_exact_data_at_truth_gives_no_update(truth):
    data = ir.synthesize_data(truth, CFG, WAVES, 0.0, 0, n_synth=6, n_far=N_FAR)
    system = ForwardSystem(truth.to_param(), CFG, 6, n_far=N_FAR)
    st = LinearizedForward(system, WAVES, n_r=2)
    dq, info = ir.cg_normal_step(st, data.data, truth.coeffs, truth.coeffs, 0.1, 2.5)
    assert np.max(np.abs(dq)) <= 1e-12


def test_cg_breakdown_detected(state, clean_data):
    q = geo.StarShape.sphere(1.0, 2).coeffs
    with pytest.raises(RuntimeError):
        ir.cg_normal_step(state, clean_data.data, q, 1.2 * q, -10.0, 2.5)


def test_damping_keeps_radius_positive():
    q = geo.StarShape.sphere(1.0, 0).coeffs
    shape, dq = ir._damped_shape(q, -1.5 * q, 0)
    assert_allclose(dq, -0.75 * q)
    assert shape.radius(np.array([[0, 0, 1.0]]))[0] > 0


def test_exact_sphere_stops_immediately(tmp_path):
    sphere = geo.StarShape.sphere(1.0, 0)
    ms = ir.synthesize_data(sphere, CFG, WAVES, 0.0, 0, n_synth=15, n_far=N_FAR)
    hist = tmp_path / "h.jsonl"
    res = ir.run_irgnm(ms, ir.IrgnmConfig(n_fwd=10, n_inv=2), sphere, history_path=hist)
    assert res.stop_reason == "discrepancy"
    assert res.iterations == 0
    assert res.delta == pytest.approx(ir.DELTA_FLOOR * ms.norm())
    rec = ir.read_history(hist)
    assert len(rec) == 1 and set(rec[0]) == {"N", "alpha", "residual", "r_coeffs"}


def test_history_and_resume(tmp_path, truth, clean_data):
    cfg = ir.IrgnmConfig(n_fwd=6, n_inv=2, max_newton=2)
    q0 = geo.StarShape.sphere(1.0, 0)
    hist = tmp_path / "h.jsonl"
    res = ir.run_irgnm(clean_data, cfg, q0, history_path=hist)
    rec = ir.read_history(hist)
    assert [r["N"] for r in rec] == [0, 1, 2]
    assert res.stop_reason == "max_newton"
    assert_allclose([r["alpha"] for r in rec], res.alphas)
    assert rec[1]["alpha"] == pytest.approx(rec[0]["alpha"] * 2 / 3)
    start = geo.StarShape.from_dict(rec[-1]["r_coeffs"])
    assert_allclose(start.coeffs, res.shape.coeffs, atol=1e-15)
    res2 = ir.run_irgnm(clean_data, cfg, q0, start=start, start_index=2, history_path=hist)
    rec2 = ir.read_history(hist)
    assert [r["N"] for r in rec2] == [0, 1, 2, 3, 4]
    assert res2.residuals[0] == pytest.approx(res.residuals[-1], rel=1e-12)
    json.dumps(res2.history)
