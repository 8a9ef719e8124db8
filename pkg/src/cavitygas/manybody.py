"""Pure many-body states of the ideal gas and their one-body density matrix.

Everything one-body about a Fock-space superposition is carried by
rho[v, v'] = <F| a+_v' a_v |F>, which evolves by pure phases in the
eigenmode basis.  All containers are immutable after construction; evolution
and correlation evaluations are pure functions and safe to run concurrently
over a shared basis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .constants import PhysicalConstants, NATURAL
from .spectra import (SingleParticleBasis, QWindow, pair_product_matrix,
                      autocorrelation_diagonal)


@dataclass(frozen=True)
class FockState:
    """Occupation configuration over the retained single-particle modes."""

    occupations: np.ndarray       # (n_modes,) small ints
    statistics: str

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupations, dtype=np.int16)
        object.__setattr__(self, "occupations", occ)
        occ.setflags(write=False)
        if self.statistics not in ("fermi", "bose"):
            raise ValueError("statistics must be 'fermi' or 'bose'")
        if np.any(occ < 0):
            raise ValueError("occupations must be non-negative")
        if self.statistics == "fermi" and np.any(occ > 1):
            raise ValueError("fermi occupations must be 0 or 1")

    @property
    def particle_number(self) -> int:
        return int(self.occupations.sum())

    def energy(self, basis: SingleParticleBasis) -> float:
        n = len(self.occupations)
        if n > basis.count:
            raise ValueError("configuration longer than basis")
        return float(self.occupations @ basis.energies[:n])

    def key(self) -> bytes:
        return self.occupations.tobytes()


@dataclass(frozen=True)
class PureState:
    """Normalized superposition of Fock configurations in a narrow energy shell."""

    occupations: np.ndarray       # (n_terms, n_modes)
    amplitudes: np.ndarray        # (n_terms,) complex
    term_energies: np.ndarray     # (n_terms,)
    statistics: str
    shell_center: float
    shell_width: float

    def __post_init__(self):
        for name in ("occupations", "amplitudes", "term_energies"):
            getattr(self, name).setflags(write=False)
        norm = float(np.sum(np.abs(self.amplitudes) ** 2))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state norm {norm} deviates from 1 beyond 1e-12")
        N = self.occupations.sum(axis=1)
        if len(np.unique(N)) != 1:
            raise ValueError("all terms must share the particle number")
        half = self.shell_width / 2 + 1e-9 * max(1.0, abs(self.shell_center))
        if np.any(np.abs(self.term_energies - self.shell_center) > half):
            raise ValueError("term energies leave the declared shell")

    @property
    def n_terms(self) -> int:
        return len(self.amplitudes)

    @property
    def n_modes(self) -> int:
        return self.occupations.shape[1]

    @property
    def particle_number(self) -> int:
        return int(self.occupations[0].sum())


@dataclass(frozen=True)
class OneBodyDensityMatrix:
    """rho[v, v'] = <F(t)| a+_v' a_v |F(t)> over the retained modes."""

    matrix: np.ndarray
    time: float
    statistics: str
    basis: SingleParticleBasis

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def n_modes(self) -> int:
        return self.matrix.shape[0]

    @property
    def particle_number(self) -> float:
        return float(np.trace(self.matrix).real)

    def validate(self) -> dict:
        m = self.matrix
        herm = float(np.abs(m - m.conj().T).max())
        ev = np.linalg.eigvalsh(m)
        return {"hermiticity": herm,
                "min_eigenvalue": float(ev[0]),
                "max_eigenvalue": float(ev[-1]),
                "trace": float(np.trace(m).real)}


# ---------------------------------------------------------------------------
# Shell sampling
# ---------------------------------------------------------------------------

class ShellInfeasible(RuntimeError):
    pass


def _random_shell_config(rng, energies, N, E, width, statistics, max_repair=400):
    """One randomized-greedy configuration with local repair swaps."""
    M = len(energies)
    occ = np.zeros(M, dtype=np.int16)
    if statistics == "fermi":
        # greedy: keep per-particle budget feasible while filling
        remaining = E
        chosen: list[int] = []
        free = np.ones(M, dtype=bool)
        for k in range(N, 0, -1):
            lo_needed = remaining - (k - 1) * energies[free][-1]
            hi_needed = remaining - (k - 1) * energies[free][0]
            cand = np.nonzero(free & (energies >= lo_needed - width)
                              & (energies <= hi_needed + width))[0]
            if len(cand) == 0:
                return None
            pick = int(rng.choice(cand))
            chosen.append(pick)
            free[pick] = False
            remaining -= energies[pick]
        occ[chosen] = 1
    else:
        for _ in range(N):
            target = E / N
            j = int(np.searchsorted(energies, target))
            lo = max(0, j - M // 4)
            hi = min(M, j + M // 4)
            occ[int(rng.integers(lo, hi))] += 1

    # local repair: move one particle to steer the energy into the shell
    for _ in range(max_repair):
        delta = E - float(occ @ energies)
        if abs(delta) <= width / 2:
            return occ
        src_pool = np.nonzero(occ > 0)[0]
        src = int(rng.choice(src_pool))
        ideal = energies[src] + delta
        j = int(np.clip(np.searchsorted(energies, ideal), 0, M - 1))
        window = np.arange(max(0, j - 6), min(M, j + 6))
        if statistics == "fermi":
            window = window[(occ[window] == 0) | (window == src)]
        if len(window) == 0:
            continue
        dst = int(window[np.argmin(np.abs(energies[window] - ideal)
                                   + rng.uniform(0, width / 4, len(window)))])
        if dst == src:
            continue
        occ[src] -= 1
        occ[dst] += 1
    return None


def _mix_in_shell(rng, occ, energies, E, width, statistics, n_moves):
    """Symmetric random walk over shell configurations (uniform stationary law)."""
    M = len(energies)
    e_now = float(occ @ energies)
    for _ in range(n_moves):
        src_pool = np.nonzero(occ > 0)[0]
        src = int(rng.choice(src_pool))
        dst = int(rng.integers(0, M))
        if dst == src:
            continue
        if statistics == "fermi" and occ[dst] != 0:
            continue
        e_new = e_now + energies[dst] - energies[src]
        if abs(e_new - E) <= width / 2:
            occ[src] -= 1
            occ[dst] += 1
            e_now = e_new
    return occ


def sample_energy_shell(basis: SingleParticleBasis, N: int, E: float, width: float,
                        n_configs: int, statistics: str = "fermi", seed: int = 0,
                        n_modes: int | None = None,
                        mix_moves: int | None = None) -> list[FockState]:
    """Distinct occupation configurations with total energy inside the shell.

    Randomized greedy fill with local repair swaps, followed by a symmetric
    in-shell random walk so that returned fermi configurations approach the
    uniform (microcanonical) shell ensemble.  Deterministic under ``seed``.
    """
    M = basis.count if n_modes is None else n_modes
    energies = basis.energies[:M]
    j = int(np.clip(np.searchsorted(energies, E / N), 1, M - 1))
    local_spacing = float(energies[j] - energies[j - 1])
    if E / N < 3 * local_spacing:
        warnings.warn("shell energy per particle is within a few level spacings "
                      "of the spectrum; the semiclassical regime needs E/N well "
                      "above the local mean spacing", stacklevel=2)
    if statistics == "fermi" and N > M:
        raise ValueError("more fermions than retained modes")
    rng = np.random.default_rng(seed)

    if N == 1:
        hits = np.nonzero(np.abs(energies - E) <= width / 2)[0]
        if len(hits) == 0:
            raise ShellInfeasible("no single-particle level inside the shell")
        out = []
        for j in hits[:n_configs]:
            occ = np.zeros(M, dtype=np.int16)
            occ[j] = 1
            out.append(FockState(occ, statistics))
        return out

    mix = mix_moves if mix_moves is not None else 40 * N
    seen: set[bytes] = set()
    out: list[FockState] = []
    attempts = 0
    max_attempts = 60 * n_configs
    while len(out) < n_configs:
        attempts += 1
        if attempts > max_attempts:
            raise ShellInfeasible(
                f"found {len(out)} of {n_configs} shell configurations in "
                f"{attempts} attempts (N={N}, E={E:.6g}, width={width:.3g})")
        occ = _random_shell_config(rng, energies, N, E, width, statistics)
        if occ is None:
            continue
        occ = _mix_in_shell(rng, occ, energies, E, width, statistics, mix)
        key = occ.tobytes()
        if key in seen:
            continue
        seen.add(key)
        out.append(FockState(occ.copy(), statistics))
    return out


def superpose(configs: list[FockState], basis: SingleParticleBasis,
              amplitude_rule: str = "random_phase", seed: int = 0) -> PureState:
    """Normalized superposition of shell configurations.

    Amplitude rules: ``uniform`` (equal real amplitudes), ``random_phase``
    (equal magnitudes, iid phases), ``gaussian`` (complex normal then
    normalized).
    """
    if not configs:
        raise ValueError("need at least one configuration")
    stats = {c.statistics for c in configs}
    Ns = {c.particle_number for c in configs}
    if len(stats) != 1 or len(Ns) != 1:
        raise ValueError("configurations must share statistics and particle number")
    k = len(configs)
    rng = np.random.default_rng(seed)
    if amplitude_rule == "uniform":
        amps = np.full(k, 1.0 / math.sqrt(k), dtype=complex)
    elif amplitude_rule == "random_phase":
        amps = np.exp(2j * math.pi * rng.random(k)) / math.sqrt(k)
    elif amplitude_rule == "gaussian":
        amps = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        amps /= np.linalg.norm(amps)
    else:
        raise ValueError(f"unknown amplitude rule {amplitude_rule!r}")
    occ = np.stack([c.occupations for c in configs])
    energies = np.array([c.energy(basis) for c in configs])
    center = 0.5 * (energies.max() + energies.min())
    width = max(float(energies.max() - energies.min()),
                1e-12 * max(1.0, abs(center)))
    return PureState(occ, amps, energies, configs[0].statistics, center, width)


# ---------------------------------------------------------------------------
# One-body density matrix
# ---------------------------------------------------------------------------

def _removal_entries(occ_row: np.ndarray, statistics: str):
    """(mode, reduced-key, factor) for removing one particle from each occupied mode.

    Fermi factors carry the ordered-mode sign (-1)^(occupied modes below v);
    bose factors are sqrt(n_v).
    """
    occupied = np.nonzero(occ_row > 0)[0]
    entries = []
    if statistics == "fermi":
        below = np.concatenate([[0], np.cumsum(occ_row)[:-1]])
        for v in occupied:
            red = occ_row.copy()
            red[v] -= 1
            entries.append((int(v), red.tobytes(), -1.0 if below[v] % 2 else 1.0))
    else:
        for v in occupied:
            red = occ_row.copy()
            red[v] -= 1
            entries.append((int(v), red.tobytes(), math.sqrt(float(occ_row[v]))))
    return entries


def obdm_from_state(state: PureState, basis: SingleParticleBasis) -> OneBodyDensityMatrix:
    """Exact mode-space one-body density matrix of a Fock superposition at t = 0.

    Off-diagonal elements connect configuration pairs that differ by moving a
    single particle; pairs are matched through their common reduced
    configuration, so the cost is linear in (terms x particle number) plus the
    matched-pair outer products.
    """
    M = state.n_modes
    if M > basis.count:
        raise ValueError("state uses more modes than the basis retains")
    buckets: dict[bytes, list[tuple[int, float, int]]] = {}
    for t in range(state.n_terms):
        for mode, key, factor in _removal_entries(state.occupations[t], state.statistics):
            buckets.setdefault(key, []).append((mode, factor, t))

    rho = np.zeros((M, M), dtype=complex)
    amps = state.amplitudes
    for entries in buckets.values():
        modes = np.array([e[0] for e in entries])
        w = np.array([e[1] for e in entries]) * amps[[e[2] for e in entries]]
        contrib = np.outer(w, w.conj())
        np.add.at(rho, (modes[:, None], modes[None, :]), contrib)
    return OneBodyDensityMatrix(rho, 0.0, state.statistics, basis)


def obdm_from_orbitals(orbitals: np.ndarray, basis: SingleParticleBasis) -> OneBodyDensityMatrix:
    """Density matrix of a Slater determinant of orthonormal orbitals.

    ``orbitals`` has shape (n_modes, N), columns expressed in the eigenmode
    basis.  The result is idempotent with eigenvalues {0, 1}.
    """
    phi = np.asarray(orbitals, dtype=complex)
    gram = phi.conj().T @ phi
    if np.abs(gram - np.eye(phi.shape[1])).max() > 1e-10:
        raise ValueError("orbitals must be orthonormal")
    return OneBodyDensityMatrix(phi @ phi.conj().T, 0.0, "fermi", basis)


def evolve_obdm(rho0: OneBodyDensityMatrix, t: float,
                constants: PhysicalConstants = NATURAL) -> OneBodyDensityMatrix:
    """Exact unitary evolution rho[v,v'](t) = exp(-i (e_v - e_v') t / hbar) rho[v,v'](0)."""
    eps = rho0.basis.energies[:rho0.n_modes]
    phase = np.exp(-1j * np.subtract.outer(eps, eps) * t / constants.hbar)
    return OneBodyDensityMatrix(rho0.matrix * phase, rho0.time + t,
                                rho0.statistics, rho0.basis)


# ---------------------------------------------------------------------------
# Correlation functions
# ---------------------------------------------------------------------------

def correlation_function(rho: OneBodyDensityMatrix, r_index, rp_index) -> complex:
    """M_rr' = sum_vv' psi_v(r) psi_v'(r') rho[v, v'] at two grid points."""
    basis = rho.basis
    flat = basis.flat_functions()[:rho.n_modes]
    shape = basis.grid_shape
    try:
        ir = np.ravel_multi_index(tuple(r_index), shape) if basis.mask.ndim > 1 else int(r_index)
        irp = np.ravel_multi_index(tuple(rp_index), shape) if basis.mask.ndim > 1 else int(rp_index)
    except ValueError as exc:
        raise ValueError("points must lie on the grid (no interpolation)") from exc
    v_r = flat[:, ir]
    v_rp = flat[:, irp]
    return complex(v_r @ rho.matrix @ v_rp)


def averaged_correlation(rho: OneBodyDensityMatrix, separation, q_window: QWindow) -> complex:
    """Window-averaged correlation <M_{q+s, q}>_q at fixed separation."""
    A = pair_product_matrix(rho.basis, separation, q_window,
                            modes=np.arange(rho.n_modes))
    return complex(np.sum(A * rho.matrix))


def eigenstate_correlation(config: FockState, basis: SingleParticleBasis,
                           separation, q_window: QWindow) -> float:
    """<m| a+_r' a_r |m> averaged over the window: sum_v n_v C_v(s)."""
    M = len(config.occupations)
    auto = autocorrelation_diagonal(basis, separation, q_window, n_modes=M)
    return float(config.occupations @ auto)


def diagonal_ensemble_value(state: PureState, basis: SingleParticleBasis,
                            separation, q_window: QWindow) -> float:
    """Long-time limit sum_m |C_m|^2 <m| a+_r' a_r |m> of the averaged correlation.

    Assumes no exact degeneracies among the term energies; degenerate pairs
    keep an oscillation-free off-diagonal contribution that this value omits
    (shells are sampled wider than the mean level spacing to avoid them).
    """
    auto = autocorrelation_diagonal(basis, separation, q_window, n_modes=state.n_modes)
    weights = np.abs(state.amplitudes) ** 2
    return float(weights @ (state.occupations @ auto))


def time_averaged_correlation(rho0: OneBodyDensityMatrix, separation,
                              q_window: QWindow, t_lo: float, t_hi: float,
                              constants: PhysicalConstants = NATURAL) -> complex:
    """Exact time average of the window-averaged correlation over [t_lo, t_hi].

    Evaluates the integral of each oscillating matrix element in closed form,
    so arbitrarily long averaging windows cost the same as one snapshot.
    """
    if t_hi <= t_lo:
        raise ValueError("need t_hi > t_lo")
    basis = rho0.basis
    A = pair_product_matrix(basis, separation, q_window, modes=np.arange(rho0.n_modes))
    eps = basis.energies[:rho0.n_modes]
    omega = np.subtract.outer(eps, eps) / constants.hbar
    span = t_hi - t_lo
    kern = np.ones_like(omega, dtype=complex)
    nz = np.abs(omega) > 1e-300
    w = omega[nz]
    kern[nz] = (np.exp(-1j * w * t_lo) - np.exp(-1j * w * t_hi)) / (1j * w * span)
    return complex(np.sum(A * rho0.matrix * kern))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_MAGIC = "cavitygas-purestate v1"


def save_pure_state(state: PureState, path) -> None:
    """Structured-text serialization; float fields round-trip bit-exactly."""
    lines = [_MAGIC,
             f"statistics {state.statistics}",
             f"shell_center {float(state.shell_center)!r}",
             f"shell_width {float(state.shell_width)!r}",
             f"modes {state.n_modes}",
             f"terms {state.n_terms}"]
    for t in range(state.n_terms):
        occ = state.occupations[t]
        occ_txt = ",".join(f"{v}:{occ[v]}" for v in np.nonzero(occ)[0])
        a = state.amplitudes[t]
        lines.append(f"{occ_txt or '-'} {float(a.real)!r} {float(a.imag)!r} {float(state.term_energies[t])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pure_state(path) -> PureState:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"not a {_MAGIC} document")
    head = dict(ln.split(" ", 1) for ln in lines[1:6])
    statistics = head["statistics"]
    center = float(head["shell_center"])
    width = float(head["shell_width"])
    n_modes = int(head["modes"])
    n_terms = int(head["terms"])
    occ = np.zeros((n_terms, n_modes), dtype=np.int16)
    amps = np.zeros(n_terms, dtype=complex)
    energies = np.zeros(n_terms)
    for t, ln in enumerate(lines[6:6 + n_terms]):
        occ_txt, re_s, im_s, e_s = ln.split(" ")
        if occ_txt != "-":
            for pair in occ_txt.split(","):
                v, n = pair.split(":")
                occ[t, int(v)] = int(n)
        amps[t] = complex(float(re_s), float(im_s))
        energies[t] = float(e_s)
    return PureState(occ, amps, energies, statistics, center, width)
