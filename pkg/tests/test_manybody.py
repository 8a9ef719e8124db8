import itertools

import numpy as np
import pytest

from cavitygas.constants import PhysicalConstants
from cavitygas.manybody import (FockState, PureState, ShellInfeasible,
                                averaged_correlation, correlation_function,
                                diagonal_ensemble_value, eigenstate_correlation,
                                evolve_obdm, load_pure_state, obdm_from_orbitals,
                                obdm_from_state, sample_energy_shell,
                                save_pure_state, superpose,
                                time_averaged_correlation)
from cavitygas.spectra import build_rectangle_basis, default_q_window

import fock_oracle


@pytest.fixture(scope="module")
def box1d():
    return build_rectangle_basis((1.0,), 24, grid=(96,))


def _superpose_on(basis, occ_rows, amps, statistics="fermi"):
    occ = np.array(occ_rows, dtype=np.int16)
    amps = np.asarray(amps, dtype=complex)
    amps = amps / np.linalg.norm(amps)
    energies = occ @ basis.energies[: occ.shape[1]]
    center = 0.5 * (energies.max() + energies.min())
    width = max(float(np.ptp(energies)), 1e-9)
    return PureState(occ, amps, energies, statistics, center, width)


# ---------------------------------------------------------------------------
# Construction basics
# ---------------------------------------------------------------------------

def test_single_fock_state_obdm_is_diagonal(box1d):
    occ = np.zeros(6, dtype=np.int16)
    occ[[1, 3, 4]] = 1
    state = _superpose_on(box1d, [occ], [1.0])
    rho = obdm_from_state(state, box1d)
    assert np.allclose(rho.matrix, np.diag(occ.astype(float)), atol=1e-14)


def test_two_mode_bell_pair(box1d):
    state = _superpose_on(box1d, [[1, 0], [0, 1]], [1.0, 1.0])
    rho = obdm_from_state(state, box1d)
    assert np.allclose(rho.matrix, 0.5 * np.ones((2, 2)), atol=1e-14)


def test_fermi_rejects_double_occupation():
    with pytest.raises(ValueError):
        FockState(np.array([2, 0]), "fermi")


def test_superpose_rules(box1d):
    occ = np.zeros(8, dtype=np.int16)
    occ[:3] = 1
    configs = [FockState(np.roll(occ, k), "fermi") for k in range(4)]
    uni = superpose(configs, box1d, "uniform", seed=1)
    assert np.allclose(np.abs(uni.amplitudes) ** 2, 0.25)
    rp1 = superpose(configs, box1d, "random_phase", seed=7)
    rp2 = superpose(configs, box1d, "random_phase", seed=7)
    assert np.array_equal(rp1.amplitudes, rp2.amplitudes)
    assert np.allclose(np.abs(rp1.amplitudes), 0.5)
    g = superpose(configs, box1d, "gaussian", seed=3)
    assert abs(np.sum(np.abs(g.amplitudes) ** 2) - 1.0) < 1e-12
    single = superpose(configs[:1], box1d, "uniform")
    assert single.amplitudes[0] == 1.0


def test_superpose_rejects_mixed_particle_number(box1d):
    a = FockState(np.array([1, 1, 0]), "fermi")
    b = FockState(np.array([1, 0, 0]), "fermi")
    with pytest.raises(ValueError):
        superpose([a, b], box1d)


# ---------------------------------------------------------------------------
# Full Fock-space oracle equivalence (<= 5 modes, N <= 3, both statistics)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("statistics", ["fermi", "bose"])
def test_obdm_matches_fock_oracle(box1d, statistics):
    rng = np.random.default_rng(11)
    n_modes, N = 4, 3
    if statistics == "fermi":
        rows = [r for r in itertools.product((0, 1), repeat=n_modes) if sum(r) == N]
    else:
        rows = [r for r in itertools.product(range(N + 1), repeat=n_modes)
                if sum(r) == N]
    occ = np.array(rows, dtype=np.int16)
    amps = rng.standard_normal(len(rows)) + 1j * rng.standard_normal(len(rows))
    amps /= np.linalg.norm(amps)
    state = _superpose_on(box1d, occ, amps, statistics)

    rho = obdm_from_state(state, box1d)
    ops = fock_oracle.ladder_operators(n_modes, statistics, n_max=N)
    psi = fock_oracle.state_vector(occ, state.amplitudes, statistics, n_max=N)
    rho_oracle = fock_oracle.obdm(psi, ops)
    assert np.abs(rho.matrix - rho_oracle).max() < 1e-10
    assert abs(rho.particle_number - N) < 1e-10
    assert np.abs(rho.matrix - rho.matrix.conj().T).max() < 1e-12


@pytest.mark.parametrize("statistics", ["fermi", "bose"])
def test_evolution_matches_fock_oracle(box1d, statistics):
    rng = np.random.default_rng(5)
    n_modes, N = 5, 2
    if statistics == "fermi":
        rows = [r for r in itertools.product((0, 1), repeat=n_modes) if sum(r) == N]
    else:
        rows = [r for r in itertools.product(range(N + 1), repeat=n_modes)
                if sum(r) == N]
    occ = np.array(rows[:8], dtype=np.int16)
    amps = rng.standard_normal(len(occ)) + 1j * rng.standard_normal(len(occ))
    state = _superpose_on(box1d, occ, amps, statistics)

    rho0 = obdm_from_state(state, box1d)
    t = 0.37
    rho_t = evolve_obdm(rho0, t)

    energies = box1d.energies[:n_modes]
    ops = fock_oracle.ladder_operators(n_modes, statistics, n_max=N)
    psi = fock_oracle.state_vector(occ, state.amplitudes, statistics, n_max=N)
    psi_t = fock_oracle.evolve(psi, energies, ops, t)
    rho_oracle = fock_oracle.obdm(psi_t, ops)
    assert np.abs(rho_t.matrix - rho_oracle).max() < 1e-10


def test_correlation_function_matches_oracle_at_t0(box1d):
    rng = np.random.default_rng(2)
    rows = [r for r in itertools.product((0, 1), repeat=4) if sum(r) == 2]
    occ = np.array(rows, dtype=np.int16)
    amps = rng.standard_normal(len(rows)) + 1j * rng.standard_normal(len(rows))
    state = _superpose_on(box1d, occ, amps)
    rho = obdm_from_state(state, box1d)

    ops = fock_oracle.ladder_operators(4, "fermi")
    psi = fock_oracle.state_vector(occ, state.amplitudes, "fermi")
    rho_oracle = fock_oracle.obdm(psi, ops)
    flat = box1d.flat_functions()[:4]
    for ir, irp in [(10, 10), (10, 40), (70, 12)]:
        ours = correlation_function(rho, ir, irp)
        oracle = flat[:, ir] @ rho_oracle @ flat[:, irp]
        assert abs(ours - oracle) < 1e-10


# ---------------------------------------------------------------------------
# Evolution invariants
# ---------------------------------------------------------------------------

def _random_state(basis, seed=0, n_modes=6, N=3):
    rng = np.random.default_rng(seed)
    rows = [r for r in itertools.product((0, 1), repeat=n_modes) if sum(r) == N]
    occ = np.array(rows, dtype=np.int16)
    amps = rng.standard_normal(len(rows)) + 1j * rng.standard_normal(len(rows))
    return _superpose_on(basis, occ, amps)


def test_evolution_preserves_trace_hermiticity_spectrum(box1d):
    rho0 = obdm_from_state(_random_state(box1d, 3), box1d)
    ev0 = np.sort(np.linalg.eigvalsh(rho0.matrix))
    for t in (0.1, 3.7, 211.0):
        rho = evolve_obdm(rho0, t)
        m = rho.matrix
        assert np.abs(m - m.conj().T).max() < 1e-12
        assert abs(np.trace(m).real - rho0.particle_number) < 1e-10
        ev = np.sort(np.linalg.eigvalsh(m))
        assert np.abs(ev - ev0).max() < 1e-10
        assert ev[0] > -1e-9 and ev[-1] < 1 + 1e-9   # fermi bound


def test_diagonal_obdm_is_stationary(box1d):
    occ = np.zeros(5, dtype=np.int16)
    occ[[0, 2]] = 1
    state = _superpose_on(box1d, [occ], [1.0])
    rho0 = obdm_from_state(state, box1d)
    rho_t = evolve_obdm(rho0, 17.3)
    assert np.allclose(rho_t.matrix, rho0.matrix, atol=1e-14)


def test_two_mode_phase_periodicity(box1d):
    state = _superpose_on(box1d, [[1, 0], [0, 1]], [1.0, 1.0j])
    rho0 = obdm_from_state(state, box1d)
    omega = (box1d.energies[1] - box1d.energies[0])
    t = 2 * np.pi / omega
    rho_t = evolve_obdm(rho0, t)
    assert np.abs(rho_t.matrix - rho0.matrix).max() < 1e-10


# ---------------------------------------------------------------------------
# Correlation machinery
# ---------------------------------------------------------------------------

def test_density_sums_to_particle_number(box1d):
    occ = np.zeros(7, dtype=np.int16)
    occ[[0, 3, 6]] = 1
    state = _superpose_on(box1d, [occ], [1.0])
    rho = obdm_from_state(state, box1d)
    total = sum(correlation_function(rho, j, j).real for j in range(box1d.grid_shape[0]))
    assert abs(total * box1d.cell_volume - 3.0) < 1e-8


def test_correlation_hermiticity(box1d):
    rho = evolve_obdm(obdm_from_state(_random_state(box1d, 8), box1d), 1.234)
    a = correlation_function(rho, 20, 55)
    b = correlation_function(rho, 55, 20)
    assert abs(a - np.conj(b)) < 1e-13 * abs(a)


def test_averaged_correlation_at_zero_separation_is_density(box1d):
    state = _random_state(box1d, 9)
    rho = obdm_from_state(state, box1d)
    w = default_q_window(box1d, 0.5)
    val = averaged_correlation(rho, (0.0,), w)
    assert abs(val.imag) < 1e-12
    assert val.real > 0


def test_eigenstate_correlation_single_particle_reduces_to_autocorrelation(box1d):
    from cavitygas.spectra import eigenfunction_autocorrelation
    occ = np.zeros(10, dtype=np.int16)
    occ[7] = 1
    cfg = FockState(occ, "fermi")
    w = default_q_window(box1d, 0.5)
    sep = (4 * box1d.spacings[0],)
    assert eigenstate_correlation(cfg, box1d, sep, w) == pytest.approx(
        eigenfunction_autocorrelation(box1d, 7, sep, w), abs=1e-14)


def test_diagonal_ensemble_equals_long_time_average(box1d):
    state = _random_state(box1d, 12)
    rho0 = obdm_from_state(state, box1d)
    w = default_q_window(box1d, 0.5)
    sep = (6 * box1d.spacings[0],)
    de = diagonal_ensemble_value(state, box1d, sep, w)
    # numeric Riemann oracle over a long window
    T = 3000.0
    ts = np.linspace(T, 2 * T, 4001)
    vals = [averaged_correlation(evolve_obdm(rho0, t), sep, w).real for t in ts[:400]]
    approx = np.mean(vals)
    exact_avg = time_averaged_correlation(rho0, sep, w, T, 2 * T).real
    assert abs(exact_avg - de) < 2e-3 * abs(de) + 1e-9
    # Riemann sample over the subrange agrees with the closed-form kernel there
    sub = time_averaged_correlation(rho0, sep, w, ts[0], ts[399]).real
    assert abs(approx - sub) < 5e-3 * abs(de) + 1e-8


def test_degenerate_configs_break_diagonal_ensemble():
    basis = build_rectangle_basis((1.0, 1.0), 6, grid=(48, 48))
    modes = basis.mode_numbers
    i12 = int(np.where((modes == [1, 2]).all(axis=1))[0][0])
    i21 = int(np.where((modes == [2, 1]).all(axis=1))[0][0])
    M = max(i12, i21) + 1
    occ = np.zeros((2, M), dtype=np.int16)
    occ[0, i12] = 1
    occ[1, i21] = 1
    state = _superpose_on(basis, occ, [1.0, 1.0])
    rho0 = obdm_from_state(state, basis)
    # window off the symmetry axes so the degenerate cross term survives
    from cavitygas.spectra import QWindow
    w = QWindow((0.37, 0.26), 0.3)
    sep = (3 * basis.spacings[0], 0.0)
    de = diagonal_ensemble_value(state, basis, sep, w)
    ta = time_averaged_correlation(rho0, sep, w, 500.0, 1000.0).real
    # the degenerate off-diagonal term never dephases
    assert abs(ta - de) > 1e-3


# ---------------------------------------------------------------------------
# Shell sampling
# ---------------------------------------------------------------------------

def test_shell_sampler_small_instance_subset_of_enumeration(box1d):
    M, N = 8, 3
    energies = box1d.energies[:M]
    E = float(energies[:N].sum() * 1.6)
    width = 6.0 * box1d.mean_level_spacing(0, M)
    configs = sample_energy_shell(box1d, N, E, width, n_configs=5, seed=4, n_modes=M)
    allowed = set()
    for rows in itertools.combinations(range(M), N):
        occ = np.zeros(M, dtype=np.int16)
        occ[list(rows)] = 1
        if abs(occ @ energies - E) <= width / 2:
            allowed.add(occ.tobytes())
    assert allowed, "test shell should be feasible"
    for c in configs:
        assert c.key() in allowed
        assert abs(c.energy(box1d) - E) <= width / 2


def test_shell_sampler_single_particle_exhaustive(box1d):
    E = float(box1d.energies[10])
    width = 2.5 * box1d.mean_level_spacing()
    configs = sample_energy_shell(box1d, 1, E, width, n_configs=50)
    hits = np.nonzero(np.abs(box1d.energies - E) <= width / 2)[0]
    assert len(configs) == len(hits)
    for c in configs:
        assert c.particle_number == 1


def test_shell_sampler_bose_multiple_occupancy(box1d):
    # in a shell around 3*e_0 the only configuration is the triple-occupied
    # ground mode, which fermi statistics would forbid
    E = 3 * float(box1d.energies[0])
    width = 1.2 * float(box1d.energies[0])
    with pytest.warns(UserWarning):
        configs = sample_energy_shell(box1d, 3, E, width, n_configs=1,
                                      statistics="bose", seed=2, n_modes=10)
    assert configs[0].occupations[0] == 3
    assert abs(configs[0].energy(box1d) - E) <= width / 2


def test_shell_sampler_determinism_and_infeasible(box1d):
    E = float(box1d.energies[:4].sum() * 1.5)
    width = 8.0 * box1d.mean_level_spacing()
    a = sample_energy_shell(box1d, 4, E, width, n_configs=6, seed=9)
    b = sample_energy_shell(box1d, 4, E, width, n_configs=6, seed=9)
    assert [x.key() for x in a] == [y.key() for y in b]
    with pytest.raises((ShellInfeasible, ValueError)):
        sample_energy_shell(box1d, 2, E * 100, 1e-9, n_configs=3, seed=0)


# ---------------------------------------------------------------------------
# Slater determinants and serialization
# ---------------------------------------------------------------------------

def test_obdm_from_orbitals_idempotent(box1d):
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((10, 4)) + 1j * rng.standard_normal((10, 4))
    q, _ = np.linalg.qr(raw)
    rho = obdm_from_orbitals(q, box1d)
    m = rho.matrix
    assert np.abs(m @ m - m).max() < 1e-12
    assert abs(rho.particle_number - 4) < 1e-12


def test_pure_state_roundtrip(tmp_path, box1d):
    state = _random_state(box1d, 21)
    p = tmp_path / "state.txt"
    save_pure_state(state, p)
    back = load_pure_state(p)
    assert np.array_equal(back.occupations, state.occupations)
    assert np.array_equal(back.amplitudes, state.amplitudes)
    assert np.array_equal(back.term_energies, state.term_energies)
    assert back.shell_center == state.shell_center
    assert back.shell_width == state.shell_width
