import warnings

import numpy as np
import pytest
from scipy.linalg import circulant

from sfrecon import (
    GridSpec,
    ImperfectSequenceWarning,
    InterpolationKernel,
    MeasurementRecord,
    RankDeficientError,
    SolverConfig,
    SolverMethod,
    Trajectory,
    add_noise,
    assemble_decoupled,
    assemble_full,
    back_transform,
    estimate_sigma_h2,
    gen_grid_snapped,
    gen_lissajous,
    gen_static,
    generate_flat_spectrum,
    generate_mls,
    simulate_grid_rirs,
    simulate_measurement,
    solve_decoupled,
    solve_full,
    static_deconvolve,
)

LIN = InterpolationKernel.linear()
FULL = SolverConfig(SolverMethod.FULL)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def snapped_case(plane_room, plane_grid):
    """Noise-free grid-snapped recording with every (node, phase) pair covered."""
    exc = generate_flat_spectrum(31, 1.0, seed=5)
    L, R = 24, 6
    traj = gen_grid_snapped(plane_grid, 5, R * 31, seed=3, period=31)
    rec = simulate_measurement(plane_room, traj, exc, R, None, None, L)
    truth = simulate_grid_rirs(plane_room, plane_grid, L)
    return exc, L, R, traj, rec, truth


def test_full_recovers_truth_noise_free(snapped_case, plane_grid):
    exc, L, R, traj, rec, truth = snapped_case
    res = solve_full(assemble_full(traj, exc, R, LIN, plane_grid, L, rec.samples), FULL)
    assert rel(res.rirs.data, truth.data) < 1e-8
    assert res.rank == plane_grid.size * L


def test_decoupled_recovers_truth_and_matches_full(snapped_case, plane_grid):
    exc, L, R, traj, rec, truth = snapped_case
    full = solve_full(assemble_full(traj, exc, R, LIN, plane_grid, L, rec.samples), FULL)
    dec = solve_decoupled(assemble_decoupled(traj, exc, R, LIN, plane_grid, rec.samples, L), exc)
    assert rel(dec.rirs.data, truth.data) < 1e-8
    assert rel(dec.rirs.data, full.rirs.data) < 1e-8


def test_decoupled_equals_full_when_rir_spans_period(plane_room):
    # off-grid samples and noise; with L = L_p both paths solve the same least squares
    g = GridSpec([2.75, 1.4, 0.8], 0.03, (3, 3, 1))
    exc = generate_flat_spectrum(23, 1.0, seed=1)
    R = 40
    traj = gen_lissajous(g, 5, 4, R * 23)
    rec = simulate_measurement(plane_room, traj, exc, R, 30.0, 2, 23)
    full = solve_full(assemble_full(traj, exc, R, LIN, g, 23, rec.samples), FULL)
    dec = solve_decoupled(assemble_decoupled(traj, exc, R, LIN, g, rec.samples, 23), exc)
    assert rel(dec.rirs.data, full.rirs.data) < 1e-8


def test_iterative_matches_direct(snapped_case, plane_grid):
    exc, L, R, traj, rec, _ = snapped_case
    noisy = add_noise(rec, 20.0, 1)
    sys = assemble_full(traj, exc, R, LIN, plane_grid, L, noisy.samples, as_sparse=True)
    direct = solve_full(sys, FULL)
    it = solve_full(sys, SolverConfig(SolverMethod.FULL, iterative=True))
    assert rel(it.rirs.data, direct.rirs.data) < 1e-6


def test_residual_orthogonality(snapped_case, plane_grid):
    exc, L, R, traj, rec, _ = snapped_case
    noisy = add_noise(rec, 10.0, 4)
    sys = assemble_full(traj, exc, R, LIN, plane_grid, L, noisy.samples)
    h = solve_full(sys, FULL).rirs.data.ravel()
    A, x = sys.matrix, sys.rhs
    g = A.T @ (x - A @ h)
    assert np.max(np.abs(g)) <= 1e-8 * np.linalg.norm(A, 2) * np.linalg.norm(x)


def test_zero_measurement_gives_zero(snapped_case, plane_grid):
    exc, L, R, traj, rec, _ = snapped_case
    zeros = np.zeros_like(rec.samples)
    full = solve_full(assemble_full(traj, exc, R, LIN, plane_grid, L, zeros), FULL)
    dec = solve_decoupled(assemble_decoupled(traj, exc, R, LIN, plane_grid, zeros, L), exc)
    assert np.all(full.rirs.data == 0) and np.all(dec.rirs.data == 0)


def test_ridge_shrinks_monotonically(snapped_case, plane_grid):
    exc, L, R, traj, rec, _ = snapped_case
    sys = assemble_full(traj, exc, R, LIN, plane_grid, L, rec.samples)
    norms = [
        np.linalg.norm(solve_full(sys, SolverConfig(SolverMethod.RIDGE, lam)).rirs.data)
        for lam in (0.0, 1.0, 10.0, 1e3, 1e6, 1e9)
    ]
    assert all(a > b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-6 * norms[0]


def test_decoupled_ridge_equals_full_ridge_one_hot(snapped_case, plane_grid):
    # L = L_p with one-hot stencils: the decoupled ridge is the full ridge exactly
    exc, _, R, traj, _, _ = snapped_case
    rng = np.random.default_rng(0)
    x = rng.normal(size=traj.positions.shape[:2])
    cfg = SolverConfig(SolverMethod.RIDGE, 3.0)
    full = solve_full(assemble_full(traj, exc, R, LIN, plane_grid, 31, x), cfg)
    dec = solve_decoupled(assemble_decoupled(traj, exc, R, LIN, plane_grid, x, 31), exc, cfg)
    assert rel(dec.rirs.data, full.rirs.data) < 1e-9


def test_rank_deficiency_reported(plane_grid):
    exc = generate_flat_spectrum(7, 1.0)
    traj = gen_grid_snapped(plane_grid, 1, 7 * 30, seed=0)
    x = np.zeros(traj.positions.shape[:2])
    with pytest.raises(RankDeficientError, match="rank"):
        solve_full(assemble_full(traj, exc, 30, LIN, plane_grid, 7, x), FULL)
    with pytest.raises(RankDeficientError, match="block") as info:
        solve_decoupled(assemble_decoupled(traj, exc, 30, LIN, plane_grid, x, 7), exc)
    assert info.value.block is not None


def test_underdetermined_blocks_rejected(plane_grid):
    exc = generate_flat_spectrum(7, 1.0)
    traj = gen_grid_snapped(plane_grid, 2, 14, seed=0)
    with pytest.raises(RankDeficientError, match="equations"):
        solve_decoupled(assemble_decoupled(traj, exc, 2, LIN, plane_grid, np.zeros((14, 2)), 7), exc)


@pytest.mark.parametrize("L", [5, 40, 63])
def test_back_transform_identity(L, rng):
    exc = generate_flat_spectrum(63, 1.4, seed=9)
    h = rng.normal(size=(4, L))
    S = circulant(exc.samples)
    Y = np.pad(h, ((0, 0), (0, 63 - L))) @ S.T  # y_u = s (*) h_u
    # S^T (S gamma^-1 h) = h
    np.testing.assert_allclose((Y / exc.gamma) @ S, np.pad(h, ((0, 0), (0, 63 - L))), atol=1e-10)
    H, tail = back_transform(Y, exc, L)
    np.testing.assert_allclose(H, h, atol=1e-10)
    assert tail < 1e-20


def test_back_transform_mls_exact(rng):
    exc = generate_mls(6)
    h = rng.normal(size=(3, 63))
    Y = h @ circulant(exc.samples).T
    np.testing.assert_allclose(back_transform(Y, exc, 63)[0], h, atol=1e-10)


def test_static_deconvolution_exact_noise_free(plane_room, plane_grid):
    for exc in (generate_mls(9), generate_flat_spectrum(511, 1.0, 2)):
        traj = gen_static(plane_grid, 3 * 511)
        rec = simulate_measurement(plane_room, traj, exc, 3, None, None, 500)
        truth = simulate_grid_rirs(plane_room, plane_grid, 500)
        est = static_deconvolve(rec, plane_grid, 500)
        assert np.max(np.abs(est.rirs.data - truth.data)) <= 1e-10 * np.max(np.abs(truth.data))


def test_single_node_decoupled_equals_static(plane_room):
    g = GridSpec([3.0, 2.0, 1.0], 0.02, (1, 1, 1))
    exc = generate_flat_spectrum(63, 1.0, seed=3)
    traj = gen_static(g, 4 * 63)
    rec = simulate_measurement(plane_room, traj, exc, 4, 20.0, 8, 50)
    st = static_deconvolve(rec, g, 50)
    dec = solve_decoupled(assemble_decoupled(traj, exc, 4, LIN, g, rec.samples, 50), exc)
    np.testing.assert_allclose(dec.rirs.data, st.rirs.data, atol=1e-10 * np.max(np.abs(st.rirs.data)))


def test_static_averaging_law(plane_room):
    g = GridSpec([2.75, 1.4, 0.8], 0.02, (3, 3, 1))
    exc = generate_mls(7)
    L = 100

    def error_power(R):
        traj = gen_static(g, R * 127)
        clean = simulate_measurement(plane_room, traj, exc, R, None, None, L)
        ref = static_deconvolve(clean, g, L).rirs.data
        errs = [
            np.mean((static_deconvolve(add_noise(clean, 20.0, s), g, L).rirs.data - ref) ** 2)
            for s in range(20)
        ]
        return np.mean(errs)

    assert error_power(10) / error_power(1) == pytest.approx(0.1, rel=0.2)


def test_static_requires_grid_nodes(plane_grid):
    exc = generate_mls(3)
    traj = Trajectory(np.full((7, 1, 3), [2.751, 1.4, 0.8]))
    rec = MeasurementRecord(np.zeros((7, 1)), traj, exc, 1)
    with pytest.raises(ValueError, match="not on a grid node"):
        static_deconvolve(rec, plane_grid, 5)


def test_static_zero_input(plane_grid):
    exc = generate_mls(3)
    traj = gen_static(plane_grid, 7)
    est = static_deconvolve(MeasurementRecord(np.zeros((7, 25)), traj, exc, 1), plane_grid, 5)
    assert np.all(est.rirs.data == 0)


def test_mls_decoupled_noise_free_exact(plane_room, plane_grid):
    exc = generate_mls(5)
    L, R = 25, 6
    traj = gen_grid_snapped(plane_grid, 5, R * 31, seed=3, period=31)
    rec = simulate_measurement(plane_room, traj, exc, R, None, None, L)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ImperfectSequenceWarning)
        sys = assemble_decoupled(traj, exc, R, LIN, plane_grid, rec.samples, L)
    est = solve_decoupled(sys, exc)
    truth = simulate_grid_rirs(plane_room, plane_grid, L)
    assert rel(est.rirs.data, truth.data) < 1e-8


def test_sigma_h2_default_estimate():
    x = np.ones(100)
    assert estimate_sigma_h2(x, 100, 10, 2.0) == pytest.approx(100 / (100 * 10 * 2.0))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(ridge_lambda=-1)
    with pytest.raises(ValueError):
        SolverConfig(rank_tolerance=0)
    with pytest.raises(ValueError):
        SolverConfig(method="cs")


def test_diagnostics_rows(snapped_case, plane_grid):
    exc, L, R, traj, rec, _ = snapped_case
    res = solve_decoupled(assemble_decoupled(traj, exc, R, LIN, plane_grid, rec.samples, L), exc)
    names = [r[0] for r in res.diagnostics_rows()]
    assert {"residual_norm", "rank", "tail_energy", "max_block_condition"} <= set(names)
    assert res.block_ranks.shape == (31,)
