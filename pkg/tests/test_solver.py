import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from greennoise.core import InvalidInputError, NumericalFailure, dft2, idft2
from greennoise.maskgen import constant_mask, white_noise_mask
from greennoise.metrics import align_global_phase
from greennoise.optics import DefocusParams, acquire, defocus_kernel
from greennoise.solver import (
    SolverConfig,
    conjugate_gradient,
    fidelity_prox,
    gradient_fidelity,
    grad,
    grad_adjoint,
    initial_estimate,
    objective,
    solve_tv_map,
    tv_norm,
    tv_shrink,
    u_update,
)

from . import oracles


def _rand_u(n, seed=0):
    gen = np.random.default_rng(seed)
    return gen.uniform(0.3, 1.0, (n, n)) * np.exp(1j * gen.uniform(-1.5, 1.5, (n, n)))


def _ms(n=8, m=2, seed=0, kernel=None, truncation=0.0):
    masks = [white_noise_mask(n, n, 0.5, seed * 10 + i) for i in range(m)]
    return _rand_u(n, seed), acquire(_rand_u(n, seed), masks, None, truncation, kernel=kernel)


# -- prox and shrink -----------------------------------------------------------


def test_prox_examples():
    assert fidelity_prox(0, 0.0, 1.0) == 0
    assert fidelity_prox(1.0, 1.0, 1.0) == pytest.approx(1.0)
    assert fidelity_prox(0, 4.0, 1.0) == pytest.approx(np.sqrt(2))
    assert fidelity_prox(-1j, 1.0, 1.0) == pytest.approx(-1j)


def test_prox_global_minimizer_against_grid_search():
    gen = np.random.default_rng(0)
    for _ in range(1000):
        y, vmag, rho = gen.uniform(0, 10), gen.uniform(0, 5), gen.uniform(0.01, 10)
        a = abs(fidelity_prox(vmag, y, rho))
        best = oracles.grid_min(y, vmag, rho)
        assert oracles.prox_objective(a, y, vmag, rho) <= best + 1e-9


@given(st.floats(0, 50), st.floats(0, 20), st.floats(1e-3, 50), st.floats(-np.pi, np.pi))
def test_prox_keeps_phase_and_is_stationary(y, vmag, rho, phi):
    z = fidelity_prox(vmag * np.exp(1j * phi), y, rho)
    a = abs(z)
    # stationarity of (1 + rho) a^2 - rho |v| a - y = 0
    assert abs((1 + rho) * a * a - rho * vmag * a - y) <= 1e-9 * max(1.0, y, rho * vmag * a)
    if vmag > 1e-12 and a > 0:
        assert abs(np.angle(z / np.exp(1j * phi))) < 1e-9


def test_prox_vectorized():
    v = np.array([0, 1, 2j])
    y = np.array([4.0, 1.0, 0.0])
    out = fidelity_prox(v, y, 1.0)
    assert out.shape == (3,)
    assert out[2] == pytest.approx(1j)


def test_tv_shrink_examples():
    assert tv_shrink(0.0, 0.3) == 0
    assert tv_shrink(2.0, 0.5) == 1.5
    assert tv_shrink(-0.3, 0.5) == 0
    assert tv_shrink(-2.0, 0.5) == -1.5
    assert tv_shrink(np.array([2 - 0.2j]), 0.5)[0] == pytest.approx(1.5)


@given(st.floats(-100, 100), st.floats(1e-6, 10))
def test_tv_shrink_is_prox_of_abs(w, t):
    x = tv_shrink(w, t)
    grid = np.linspace(-110, 110, 200001)
    f = 0.5 * (grid - w) ** 2 + t * np.abs(grid)
    assert 0.5 * (x - w) ** 2 + t * abs(x) <= f.min() + 1e-6


# -- finite differences --------------------------------------------------------


def test_grad_adjoint():
    gen = np.random.default_rng(1)
    u = gen.normal(size=(5, 7)) + 1j * gen.normal(size=(5, 7))
    g = gen.normal(size=(2, 5, 7)) + 1j * gen.normal(size=(2, 5, 7))
    assert np.vdot(grad(u), g) == pytest.approx(np.vdot(u, grad_adjoint(g)), abs=1e-12)


def test_grad_matches_dense_difference():
    u = np.random.default_rng(2).normal(size=(4, 6))
    d = oracles.diff_matrix(4, 6)
    assert np.allclose(grad(u).reshape(-1), d @ u.reshape(-1))


def test_tv_constant_is_zero():
    assert tv_norm(np.full((6, 6), 2 - 3j)) == 0


# -- objective and gradient ----------------------------------------------------


def test_objective_at_consistent_point():
    u, ms = _ms(8, 2, 3)
    total = 0.0
    for m in ms.measurements:
        y = m.intensity
        total += np.sum(y - y * np.log(np.maximum(y, 1e-12)))
    assert objective(u, ms, 0.0) == pytest.approx(0.5 * total, rel=1e-12)


def test_objective_tv_linear_in_alpha():
    u, ms = _ms(8, 2, 4)
    t1 = objective(u, ms, 0.3) - objective(u, ms, 0.0)
    t2 = objective(u, ms, 0.6) - objective(u, ms, 0.0)
    assert t2 == pytest.approx(2 * t1, rel=1e-12)
    assert t1 == pytest.approx(0.3 * tv_norm(u), rel=1e-12)
    c = np.full((8, 8), 0.7 + 0j)
    assert objective(c, ms, 5.0) == pytest.approx(objective(c, ms, 0.0), rel=1e-15)


@pytest.mark.parametrize("mode", ["ignore", "zero"])
def test_gradient_matches_finite_differences(mode):
    gen = np.random.default_rng(5)
    h = defocus_kernel(6, 6, DefocusParams(632.8e-9, 0.1, 0.13, 13.68e-6))
    _, ms = _ms(6, 2, 5, kernel=h, truncation=0.2)
    u = gen.normal(size=(6, 6)) + 1j * gen.normal(size=(6, 6))
    analytic = gradient_fidelity(u, ms, mode)
    numeric = oracles.central_difference_grad(lambda x: objective(x, ms, 0.0, mode), u)
    assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(numeric)


def test_gradient_directional_derivative():
    gen = np.random.default_rng(6)
    _, ms = _ms(6, 3, 6)
    u = gen.normal(size=(6, 6)) + 1j * gen.normal(size=(6, 6))
    d = gen.normal(size=(6, 6)) + 1j * gen.normal(size=(6, 6))
    g = gradient_fidelity(u, ms)
    h = 1e-6
    fd = (objective(u + h * d, ms, 0) - objective(u - h * d, ms, 0)) / (2 * h)
    assert np.real(np.vdot(g, d)) == pytest.approx(fd, rel=1e-5)


def test_gradient_vanishes_at_solution():
    u, ms = _ms(8, 3, 7)
    assert np.linalg.norm(gradient_fidelity(u, ms)) < 1e-8


# -- u-step --------------------------------------------------------------------


def _dense_u_solution(ms, z, lam, w, mu, cfg):
    n = ms.shape[0] * ms.shape[1]
    f = oracles.dft2_matrix(*ms.shape)
    d = oracles.diff_matrix(*ms.shape)
    a = cfg.epsilon * np.eye(n, dtype=complex) + cfg.rho_tv * d.T @ d
    rhs = cfg.rho_tv * d.T @ (w - mu).reshape(-1)
    for m, zi, li in zip(ms.measurements, z, lam):
        c = np.diag(m.mask.bits.reshape(-1).astype(complex))
        a = a + cfg.rho_fourier * c.conj().T @ f.conj().T @ f @ c
        rhs = rhs + cfg.rho_fourier * c.conj().T @ f.conj().T @ (zi - li).reshape(-1)
    return np.linalg.solve(a, rhs).reshape(ms.shape)


def test_u_update_matches_dense_solve():
    gen = np.random.default_rng(8)
    _, ms = _ms(8, 3, 8)
    shape = (8, 8)

    def c(*s):
        return gen.normal(size=s) + 1j * gen.normal(size=s)

    z, lam = [c(*shape) for _ in range(3)], [c(*shape) for _ in range(3)]
    w, mu = c(2, *shape), c(2, *shape)
    cfg = SolverConfig(rho_fourier=1.3, rho_tv=0.7, cg_iters=200, cg_tol=1e-14, epsilon=1e-3)
    got = u_update(z, w, lam, mu, ms, cfg)
    want = _dense_u_solution(ms, z, lam, w, mu, cfg)
    assert np.linalg.norm(got - want) <= 1e-6 * np.linalg.norm(want)


def test_u_update_unitary_case():
    gen = np.random.default_rng(9)
    ms = acquire(_rand_u(8), [constant_mask(8, 8, 1)], None)
    z = [gen.normal(size=(8, 8)) + 1j * gen.normal(size=(8, 8))]
    lam = [0.1 * z[0].conj()]
    cfg = SolverConfig(rho_fourier=1.0, epsilon=1e-12, cg_iters=5)
    zeros = np.zeros((2, 8, 8), complex)
    got = u_update(z, zeros, lam, zeros, ms, cfg, use_tv=False)
    assert np.allclose(got, idft2(z[0] - lam[0]), atol=1e-10)


def test_u_update_zero_masks_gives_zero():
    gen = np.random.default_rng(10)
    ms = acquire(_rand_u(8), [constant_mask(8, 8, 0)], None)
    z = [gen.normal(size=(8, 8)) + 0j]
    zeros = np.zeros((2, 8, 8), complex)
    got = u_update(z, zeros, [np.zeros((8, 8), complex)], zeros, ms, SolverConfig(), use_tv=False)
    assert np.abs(got).max() == 0


def test_cg_residual_decreases():
    gen = np.random.default_rng(11)
    _, ms = _ms(16, 3, 11)
    z = [dft2(gen.normal(size=(16, 16))) for _ in range(3)]
    lam = [np.zeros((16, 16), complex)] * 3
    w = gen.normal(size=(2, 16, 16)) + 0j
    history = []
    u_update(z, w, lam, np.zeros_like(w), ms, SolverConfig(cg_iters=10), history=history)
    assert len(history) >= 2
    assert all(b < a for a, b in zip(history, history[1:]))


def test_cg_divergence_raises_with_iteration():
    # an indefinite "operator" violates the CG contract
    b = np.ones(4, complex)
    with pytest.raises(NumericalFailure) as info:
        conjugate_gradient(lambda x: -x, b, np.zeros(4, complex), 10, 1e-12)
    assert info.value.iteration == 0


# -- full solver ---------------------------------------------------------------


def test_config_validation():
    with pytest.raises(InvalidInputError):
        SolverConfig(alpha=-1)
    with pytest.raises(InvalidInputError):
        SolverConfig(rho_tv=0)
    with pytest.raises(InvalidInputError):
        SolverConfig(init_mode="spectral")
    with pytest.raises(InvalidInputError):
        SolverConfig(truncated_bins="drop")


def test_flat_init_matches_energy():
    u, ms = _ms(8, 2, 12)
    u0 = initial_estimate(ms, SolverConfig())
    assert np.ptp(u0) == 0 and np.all(u0.imag == 0)
    energy = sum(m.intensity.sum() for m in ms.measurements)
    weight = sum(m.mask.bits.sum() for m in ms.measurements)
    assert u0[0, 0].real == pytest.approx(np.sqrt(energy / weight))
    r = initial_estimate(ms, SolverConfig(init_mode="seeded-random", seed=3))
    assert np.array_equal(r, initial_estimate(ms, SolverConfig(init_mode="seeded-random", seed=3)))


def test_single_mask_data_consistency():
    u = _rand_u(16, 13)
    ms = acquire(u, [constant_mask(16, 16, 1)], None)
    est, trace = solve_tv_map(ms, SolverConfig(alpha=0.0, max_iters=300))
    y = ms.measurements[0].intensity
    assert np.linalg.norm(np.abs(dft2(est)) ** 2 - y) <= 1e-6 * np.linalg.norm(y)


def test_trace_contract_and_csv(tmp_path):
    _, ms = _ms(16, 3, 14)
    cfg = SolverConfig(alpha=0.05, max_iters=40)
    est, trace = solve_tv_map(ms, cfg)
    assert len(trace) <= 40
    assert len(trace.objective) == len(trace.res_fourier) == len(trace.res_tv) == len(trace.rel_change)
    assert np.all(np.isfinite(trace.objective))
    assert trace.objective[-1] <= trace.objective[4]
    assert np.array_equal(trace.final, est)
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "objective", "res_F", "res_TV", "rel_change"]
    assert len(rows) == len(trace) + 1


def test_converged_trace_ends_below_tolerance():
    u, ms = _ms(8, 4, 15)
    est, trace = solve_tv_map(ms, SolverConfig(alpha=0.0, max_iters=2000, rel_tol=1e-5))
    assert trace.converged
    assert trace.rel_change[-1] < 1e-5


def test_callback_sees_every_iteration():
    _, ms = _ms(8, 2, 16)
    seen = []
    solve_tv_map(ms, SolverConfig(max_iters=7, rel_tol=1e-30), callback=lambda it, u, tr: seen.append(it))
    assert seen == list(range(1, 8))


def test_global_phase_covariance():
    u = _rand_u(16, 17)
    masks = [white_noise_mask(16, 16, 0.5, i) for i in range(3)]
    cfg = SolverConfig(alpha=0.05, max_iters=60)
    a, _ = solve_tv_map(acquire(u, masks, None, 0.2), cfg)
    b, _ = solve_tv_map(acquire(u * np.exp(0.9j), masks, None, 0.2), cfg)
    assert np.linalg.norm(align_global_phase(b, a) - a) <= 1e-6 * np.linalg.norm(a)


def test_observed_pixels_recovered_noiseless():
    u = _rand_u(16, 18)
    masks = [white_noise_mask(16, 16, 0.5, 100 + i) for i in range(6)]
    ms = acquire(u, masks, None)
    est, _ = solve_tv_map(ms, SolverConfig(alpha=0.0, max_iters=300))
    seen = np.sum([m.bits for m in masks], axis=0) > 0
    aligned = align_global_phase(np.where(seen, est, 0), np.where(seen, u, 0))
    err = np.linalg.norm((aligned - u)[seen]) / np.linalg.norm(u[seen])
    assert err < 1e-3
