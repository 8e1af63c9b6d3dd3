"""Acceptance criteria, each run at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line that the terminal summary
prints (see ``conftest.py``).
"""

import csv
import json
import time

import numpy as np
import pytest
from scipy.special import gamma

from spectral_dielectric import assembly as asm
from spectral_dielectric import cli
from spectral_dielectric import forward_solver as fs
from spectral_dielectric import geometry as geo
from spectral_dielectric import irgnm as ir
from spectral_dielectric import shape_derivative as sd
from spectral_dielectric import sphere_basis as sb
from spectral_dielectric.assembly import DielectricConfig

RESULTS = []

KE = np.pi / 2
PEANUT_CFG = {"kappa_e": KE, "kappa_i": 2 * KE, "mu_e": 1.0, "mu_i": 2.0}
PEANUT_PS = {5: 2.0487e-3, 10: 4.2497e-5, 15: 2.5742e-7, 20: 1.9720e-9}
PEANUT_PW = (0.928048382, 0.389255828)
TET_PS = {10: 2.7042e-4, 15: 2.7724e-5, 20: 4.8104e-6, 25: 5.1661e-7}
AXES = [((1, 0, 0), (0, 0, 1)), ((-1, 0, 0), (0, 0, 1)), ((0, 1, 0), (1, 0, 0)),
        ((0, -1, 0), (1, 0, 0)), ((0, 0, 1), (0, 1, 0)), ((0, 0, -1), (0, 1, 0))]


def record(number, ok, detail):
    RESULTS.append(f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def within_factor(value, reference, factor):
    return reference / factor <= value <= reference * factor


@pytest.fixture(scope="module")
def peanut_report(tmp_path_factory):
    """Peanut convergence column through the ``forward`` command."""
    tmp = tmp_path_factory.mktemp("peanut")
    cfg = tmp / "peanut.json"
    cfg.write_text(json.dumps({"version": 1, "shape": {"label": "peanut"},
                               "dielectric": PEANUT_CFG, "n_list": [5, 10, 15, 20],
                               "n_far": 25}))
    out = tmp / "peanut.csv"
    t = time.perf_counter()
    status = cli.main(["forward", "--config", str(cfg), "--out", str(out)])
    elapsed = time.perf_counter() - t
    assert status == 0
    with open(out) as fh:
        rows = {int(r["n"]): r for r in csv.DictReader(fh)}
    return rows, elapsed


def test_criterion_1_peanut_point_source(peanut_report):
    rows, elapsed = peanut_report
    errs = {n: float(rows[n]["err_ps"]) for n in PEANUT_PS}
    ok = all(within_factor(errs[n], PEANUT_PS[n], 10) for n in PEANUT_PS)
    ok = ok and errs[20] <= 1e-8 and elapsed <= 300
    detail = ", ".join(f"n={n}: {e:.4e} (reference {PEANUT_PS[n]:.4e})" for n, e in errs.items())
    record(1, ok, f"{detail}; runtime {elapsed:.0f}s")


def test_criterion_2_peanut_plane_wave(peanut_report):
    rows, _ = peanut_report
    re, im = float(rows[20]["re_pw"]), float(rows[20]["im_pw"])
    dre, dim = abs(re - PEANUT_PW[0]), abs(im - PEANUT_PW[1])
    record(2, dre <= 5e-7 and dim <= 5e-7,
           f"Re {re:.9f} (|diff| {dre:.1e}), Im {im:.9f} (|diff| {dim:.1e})")


def test_criterion_3_tetrahedron_point_source():
    cfg = DielectricConfig(np.pi / 4, np.pi / 2, 1.0, 2.0)
    rows = fs.convergence_experiment(geo.RoundedTetrahedron(), cfg, sorted(TET_PS))
    errs = {r.n: r.err_ps for r in rows}
    vals = [errs[n] for n in sorted(TET_PS)]
    ok = all(within_factor(errs[n], TET_PS[n], 10) for n in TET_PS)
    ok = ok and all(b < a for a, b in zip(vals, vals[1:]))
    detail = ", ".join(f"n={n}: {e:.4e} (reference {TET_PS[n]:.4e})" for n, e in errs.items())
    record(3, ok, detail)


def test_criterion_4_zero_contrast():
    cfg = DielectricConfig(KE, KE, 1.0, 1.0)
    star = geo.StarShape.from_function(lambda x: 1 + 0.2 * x[..., 0] * x[..., 2], 2)
    shapes = [geo.Sphere(), geo.Peanut(), geo.RoundedTetrahedron(), star.to_param()]
    g = sb.build_gauss_grid(3)
    rng = np.random.default_rng(0)
    h = rng.normal(size=g.shape + (3,)) + 1j * rng.normal(size=g.shape + (3,))
    h -= np.sum(h * g.points, -1)[..., None] * g.points
    incidents = [fs.PlaneWave((0, 0, 1), (1, 0, 0)), fs.PlaneWave((1, 0, 0), (0, 1, 0)),
                 fs.HerglotzWave(g, h)]
    n = 25
    worst, k_err, parts = 0.0, 0.0, []
    for param in shapes:
        system = fs.ForwardSystem(param, cfg, n, n_far=12)
        k_err = max(k_err, float(np.max(np.abs(system.KDM - 2 * np.eye(system.KDM.shape[0])))))
        rel = 0.0
        for inc in incidents:
            sol = system.solve_direct(inc)
            rel = max(rel, np.max(np.linalg.norm(sol.farfield.values, axis=-1))
                      / np.linalg.norm(sol.u))
        parts.append(f"{param.label} {rel:.1e}")
        worst = max(worst, rel)
    record(4, worst <= 1e-10 and k_err <= 1e-15,
           f"n={n} max relative far field: {', '.join(parts)}; |K_DM - 2I| = {k_err:.1e}")


def test_criterion_5_quadrature_and_basis():
    n = 20
    g = sb.build_gauss_grid(n)
    rng = np.random.default_rng(1)
    # exactness: monomials of total degree <= 2n+1
    x, y, z = g.points[..., 0], g.points[..., 1], g.points[..., 2]
    quad_err = 0.0
    for a, b, c in [(2 * n + 1, 0, 0), (0, 0, 2 * n), (4, 6, 2 * n - 10), (n, n, 0), (2, 2, 2)]:
        got = g.integrate(x ** a * y ** b * z ** c)
        if a % 2 or b % 2 or c % 2:
            exact = 0.0
        else:
            bb = [(a + 1) / 2, (b + 1) / 2, (c + 1) / 2]
            exact = 2 * np.prod([gamma(t) for t in bb]) / gamma(sum(bb))
        quad_err = max(quad_err, abs(got - exact))
    # discrete orthonormality of the degree-n scalar and vector bases
    tr = sb.SphericalTransform(g, n)
    Ns = sb.n_scalar(n)
    Y = np.stack([tr.synth_scalar(np.eye(Ns)[k]) for k in range(Ns)])
    G = np.einsum("atr,btr,tr->ab", np.conj(Y), Y, g.weights)
    orth_err = float(np.max(np.abs(G - np.eye(Ns))))
    Nv = 2 * sb.n_vector(n)
    pick = rng.choice(Nv, 60, replace=False)
    V = [tr.synth_frame(np.eye(Nv)[k]) for k in pick]
    Gv = np.array([[g.integrate(np.conj(a[0]) * b[0] + np.conj(a[1]) * b[1]) for b in V] for a in V])
    orth_err = max(orth_err, float(np.max(np.abs(Gv - np.eye(len(pick))))))
    # single-layer eigenrelation with the rotated rule
    alpha = sb.single_layer_alpha(g)
    sl_err = 0.0
    for tau, rho in [(3, 7), (10, 0), (17, 33)]:
        xp = g.points[tau, rho]
        yp = g.points @ sb.rotation_to_north(xp)
        thy, phy = sb.cartesian_to_spherical(yp)
        thx, phx = sb.cartesian_to_spherical(xp)
        for l in (0, 1, 7, 14, 20):
            for j in (-l, 0, l):
                got = np.sum(g.weights * alpha[:, None] * sb.eval_scalar_harmonic(l, j, thy, phy))
                expect = 4 * np.pi / (2 * l + 1) * sb.eval_scalar_harmonic(l, j, thx, phx)
                sl_err = max(sl_err, abs(got - expect))
    record(5, quad_err <= 1e-12 and orth_err <= 1e-12 and sl_err <= 1e-8,
           f"exactness {quad_err:.1e}, orthonormality {orth_err:.1e}, single layer {sl_err:.1e}")


def test_criterion_6_transpose_relation():
    cfg = DielectricConfig(**PEANUT_CFG)
    system = fs.ForwardSystem(geo.Peanut(), cfg, 10, n_far=8)
    res = asm.transpose_relation_residual(system.KDM, system.KIM, 10)
    rng = np.random.default_rng(2)
    N2 = system.N2
    g = rng.normal(size=N2) + 1j * rng.normal(size=N2)
    f = rng.normal(size=N2) + 1j * rng.normal(size=N2)
    x_reuse = system.solve_indirect(g, f, reuse=True).density
    x_fresh = system.solve_indirect(g, f).density
    lu_err = float(np.linalg.norm(x_reuse - x_fresh) / np.linalg.norm(x_fresh))
    record(6, res <= 1e-10 and lu_err <= 1e-12,
           f"relative Frobenius residual {res:.2e}, reuse vs fresh solve {lu_err:.2e}")


def test_criterion_7_derivative_suite():
    cfg = DielectricConfig(**PEANUT_CFG)
    waves = [fs.PlaneWave((0, 0, 1), (1, 0, 0))]
    n_r = 6
    shape = geo.peanut_star_approximation(n_r)
    rng = np.random.default_rng(3)

    def real_coeffs(n):
        return sb.real_projection(rng.normal(size=sb.n_scalar(n)) + 1j * rng.normal(size=sb.n_scalar(n)))

    # Taylor remainder at n = 15
    n = 15
    system = fs.ForwardSystem(shape.to_param(), cfg, n, n_far=20)
    state = sd.LinearizedForward(system, waves, n_r=n_r)
    xi = real_coeffs(n_r)
    xi *= 0.3 / np.max(np.abs(xi))
    d = state.apply(sd.PerturbationField.radial(xi))
    ts, rem = [1e-2, 1e-3, 1e-4], []
    for t in ts:
        sys_t = fs.ForwardSystem(geo.StarShape(shape.coeffs + t * xi, n_r).to_param(), cfg, n,
                                 n_far=20)
        Ft = np.stack([sys_t.solve_direct(w).farfield.values for w in waves])
        rem.append(state.norm(Ft - state.farfields - t * d))
    slope = float(np.polyfit(np.log(ts), np.log(rem), 1)[0])
    # adjoint identity at n = 12
    system12 = fs.ForwardSystem(shape.to_param(), cfg, 12, n_far=14)
    st12 = sd.LinearizedForward(system12, waves + [fs.PlaneWave((1, 0, 0), (0, 1, 0))], n_r=n_r)
    s = 2.5
    wts = sb.sobolev_weights(n_r, s)
    xhat = system12.far.xhat[None]
    adj_err = 0.0
    for _ in range(10):
        c = real_coeffs(n_r)
        h = rng.normal(size=st12.farfields.shape) + 1j * rng.normal(size=st12.farfields.shape)
        h -= np.sum(h * xhat, -1)[..., None] * xhat
        lhs = st12.inner(st12.apply(sd.PerturbationField.radial(c)), h)
        rhs = float(np.real(np.sum(wts * c * np.conj(st12.adjoint(h, s)))))
        adj_err = max(adj_err, abs(lhs - rhs) / abs(lhs))
    # exact zeros for zero contrast and tangential perturbations
    zero_cfg = DielectricConfig(KE, KE, 1.0, 1.0)
    st0 = sd.LinearizedForward(fs.ForwardSystem(shape.to_param(), zero_cfg, 6, n_far=8),
                               waves, n_r=n_r)
    bd0 = st0.boundary_data(sd.PerturbationField.radial(real_coeffs(n_r)), 0)
    zero_contrast_exact = bool(np.all(bd0.stacked() == 0))
    st_t = sd.LinearizedForward(system12, waves, n_r=n_r)
    bd_t = st_t.boundary_data_from_normal(np.zeros(st_t.grid.shape), 0)
    tangential_exact = bool(np.all(bd_t.stacked() == 0))
    g = sb.build_gauss_grid(4)
    rot = np.cross(g.points, np.array([0.3, -0.7, 0.5]))
    coeffs = np.stack([sb.project_scalar(g, rot[..., k], n=1) for k in range(3)])
    st_s = sd.LinearizedForward(fs.ForwardSystem(geo.Sphere(), cfg, 6, n_far=8), waves, n_r=2)
    rot_size = float(np.max(np.abs(st_s.boundary_data(sd.PerturbationField.vector(coeffs), 0).stacked())))
    ok = slope >= 1.9 and adj_err <= 1e-6 and zero_contrast_exact and tangential_exact
    ok = ok and rot_size <= 1e-14
    record(7, ok, f"Taylor slope {slope:.3f} (remainders {', '.join(f'{r:.1e}' for r in rem)}), "
                  f"adjoint {adj_err:.1e}, zero contrast exact {zero_contrast_exact}, "
                  f"s = 0 exact {tangential_exact}, rotation field on sphere {rot_size:.1e}")


@pytest.fixture(scope="module")
def peanut_like_runs():
    cfg = DielectricConfig(**PEANUT_CFG)
    waves = [fs.PlaneWave(d, p) for d, p in AXES]
    truth = geo.peanut_star_approximation(4)
    q0 = geo.StarShape.sphere(1.2, 0)
    icfg = ir.IrgnmConfig(n_fwd=12, n_inv=4, max_newton=25)
    runs = {}
    for level in (0.05, 0.02, 0.01):
        t = time.perf_counter()
        ms = ir.synthesize_data(truth, cfg, waves, level, 7, n_synth=17, n_far=12)
        runs[level] = (ir.run_irgnm(ms, icfg, q0), time.perf_counter() - t)
    return truth, q0, runs


def test_criterion_8a_sphere_radius():
    cfg = DielectricConfig(**PEANUT_CFG)
    waves = [fs.PlaneWave(d, p) for d, p in AXES]
    ms = ir.synthesize_data(geo.StarShape.sphere(1.3, 0), cfg, waves, 0.0, 0, n_synth=17,
                            n_far=12)
    res = ir.run_irgnm(ms, ir.IrgnmConfig(n_fwd=12, n_inv=2, max_newton=10),
                       geo.StarShape.sphere(1.0, 0))
    c0 = res.shape.coeffs[0].real / np.sqrt(4 * np.pi)
    rel = abs(c0 - 1.3) / 1.3
    record("8a", rel <= 1e-3 and res.iterations <= 10,
           f"constant mode radius {c0:.6f}, relative error {rel:.1e}, "
           f"{res.iterations} Newton steps, stop {res.stop_reason}")


def test_criterion_8b_noisy_star(peanut_like_runs):
    truth, q0, runs = peanut_like_runs
    res, elapsed = runs[0.01]
    g = sb.build_gauss_grid(12)

    def l2(shape):
        return float(np.sqrt(g.integrate((shape.radius(g.points) - truth.radius(g.points)) ** 2)))

    r = res.residuals
    monotone = all(b <= a for a, b in zip(r, r[1:]))
    e0, e1 = l2(q0), l2(res.shape)
    ok = res.stop_reason == "discrepancy" and monotone and e1 <= 0.2 * e0 and elapsed <= 900
    record("8b", ok, f"stop {res.stop_reason} at N={res.iterations} (residual {r[-1]:.3e} <= "
                     f"4 delta {4 * res.delta:.3e}), monotone {monotone}, L2 error "
                     f"{e0:.3f} -> {e1:.3f} (ratio {e1 / e0:.3f}), runtime {elapsed:.0f}s")


def test_criterion_8c_stop_index_vs_noise(peanut_like_runs):
    _, _, runs = peanut_like_runs
    levels = sorted(runs, reverse=True)
    stops = [runs[lv][0].iterations for lv in levels]
    reasons = [runs[lv][0].stop_reason for lv in levels]
    ok = all(b >= a for a, b in zip(stops, stops[1:])) and all(x == "discrepancy" for x in reasons)
    record("8c", ok, "stop index by decreasing noise level: "
                     + ", ".join(f"{lv:.0%}: N={n}" for lv, n in zip(levels, stops)))


def test_criterion_9_cross_method():
    cfg = DielectricConfig(**PEANUT_CFG)
    system = fs.ForwardSystem(geo.Peanut(), cfg, 15, n_far=25)
    pw = fs.PlaneWave((0, 0, 1), (1, 0, 0))
    u_inc = system.incident_traces(pw)
    N2 = system.N2
    direct = system.solve_direct(pw).farfield.values
    indirect = system.solve_indirect(-u_inc[N2:], -u_inc[:N2]).farfield.values
    gap = float(np.max(np.linalg.norm(direct - indirect, axis=-1)))
    record(9, gap <= 1e-8, f"n=15 max far-field difference {gap:.2e}")
