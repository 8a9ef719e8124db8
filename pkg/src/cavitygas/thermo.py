"""Statistical layer: shell correlation kernel, spectrum clustering, most-probable
macrostates via constrained entropy maximization, and the equilibrium prediction
for window-averaged correlation functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import expit, gammaln, gamma as gamma_fn, jv

from .constants import PhysicalConstants, NATURAL
from .spectra import (SingleParticleBasis, SpectralDensity, QWindow,
                      pair_product_matrix, debroglie_wavelength)


# ---------------------------------------------------------------------------
# Isotropic shell correlation kernel
# ---------------------------------------------------------------------------

def f_function(x, d: int):
    """Angular average of a plane wave over the energy-shell directions.

    f(x) = Gamma(d/2) (x/2)^{-(d-2)/2} J_{(d-2)/2}(x) with f(0) = 1; closed
    forms are cos(x), J_0(x), sin(x)/x for d = 1, 2, 3.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension {d} not supported (need 1, 2, or 3)")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    nu = (d - 2) / 2
    out = np.empty_like(x)
    small = x < 1e-8
    # series: f(x) = 1 - x^2/(2 d) + O(x^4)
    out[small] = 1.0 - x[small] ** 2 / (2 * d)
    xs = x[~small]
    out[~small] = gamma_fn(d / 2) * (xs / 2) ** (-nu) * jv(nu, xs)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Spectrum clustering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterPartition:
    """Contiguous clusters of the sorted single-particle spectrum.

    ``starts``/``stops`` index into ``energies``; ``widths`` are the energy
    slices owned by each cluster (midpoints between neighboring members), so
    g_m ~ width_m * rho(center_m) for a smooth density.
    """

    energies: np.ndarray
    starts: np.ndarray
    stops: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    degeneracies: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.starts)

    @property
    def total_levels(self) -> int:
        return int(self.degeneracies.sum())

    def cluster_occupations(self, occ: np.ndarray) -> np.ndarray:
        """Member-summed occupations N_m for a per-level occupation vector."""
        occ = np.asarray(occ)
        return np.array([occ[a:b].sum() for a, b in zip(self.starts, self.stops)],
                        dtype=float)


def partition_spectrum(basis_or_energies, g_target: int,
                       energy_range: tuple[float, float] | None = None) -> ClusterPartition:
    """Divide the spectrum into contiguous clusters of about ``g_target`` levels."""
    energies = np.asarray(getattr(basis_or_energies, "energies", basis_or_energies))
    if energy_range is None:
        lo_i, hi_i = 0, len(energies)
    else:
        lo_i = int(np.searchsorted(energies, energy_range[0], side="left"))
        hi_i = int(np.searchsorted(energies, energy_range[1], side="right"))
    n = hi_i - lo_i
    if n < 5 * g_target:
        raise ValueError(f"range holds {n} levels; need at least {5 * g_target} "
                         f"for g_target={g_target}")
    n_clusters = n // g_target
    starts = lo_i + g_target * np.arange(n_clusters)
    stops = np.append(starts[1:], hi_i)   # last cluster absorbs the remainder

    centers = np.array([energies[a:b].mean() for a, b in zip(starts, stops)])
    # cluster edges: midpoints between adjacent members across the seam
    edges = np.empty(n_clusters + 1)
    for k in range(1, n_clusters):
        edges[k] = 0.5 * (energies[stops[k - 1] - 1] + energies[starts[k]])
    first_gap = energies[lo_i + 1] - energies[lo_i]
    last_gap = energies[hi_i - 1] - energies[hi_i - 2]
    edges[0] = energies[lo_i] - 0.5 * first_gap
    edges[-1] = energies[hi_i - 1] + 0.5 * last_gap
    return ClusterPartition(energies, starts, stops, centers, np.diff(edges),
                            (stops - starts).astype(int))


def coarse_occupation(config_occ: np.ndarray, partition: ClusterPartition):
    """Locally averaged occupation n(e_m) = N_m / g_m of one configuration."""
    N_m = partition.cluster_occupations(config_occ)
    return partition.centers, N_m / partition.degeneracies


# ---------------------------------------------------------------------------
# Most probable macrostate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MacroState:
    partition: ClusterPartition
    occupations: np.ndarray     # N_m, may be real (continuous relaxation)
    statistics: str

    def __post_init__(self):
        if self.statistics not in ("fermi", "bose"):
            raise ValueError("statistics must be 'fermi' or 'bose'")
        if self.statistics == "fermi" and np.any(
                self.occupations > self.partition.degeneracies + 1e-9):
            raise ValueError("fermi occupations exceed cluster degeneracy")


@dataclass(frozen=True)
class LagrangeSolution:
    alpha: float
    beta: float
    occupations: np.ndarray     # n(e_m)
    statistics: str
    residual_number: float
    residual_energy: float
    near_condensation: bool = False

    @property
    def temperature(self) -> float:
        return 1.0 / self.beta

    @property
    def chemical_potential(self) -> float:
        return -self.alpha / self.beta


def _mean_occupation(alpha, beta, eps, statistics):
    x = alpha + beta * eps
    if statistics == "fermi":
        return expit(-x)
    # bose: requires x > 0 throughout
    return 1.0 / np.expm1(x)


class InfeasibleMacrostate(ValueError):
    pass


def solve_lagrange(partition: ClusterPartition, N: float, E: float,
                   statistics: str = "fermi") -> LagrangeSolution:
    """Lagrange multipliers (alpha, beta) of the most probable macrostate.

    Solves sum g_m n(e_m) = N and sum g_m e_m n(e_m) = E with
    n = 1/(exp(alpha + beta e) +- 1), by nested bracketing root finds (alpha
    inside beta), which is initial-guess-free and deterministic.  Only beta > 0
    (positive temperature) shells are supported.
    """
    if statistics not in ("fermi", "bose"):
        raise ValueError("statistics must be 'fermi' or 'bose'")
    g = partition.degeneracies.astype(float)
    eps = partition.centers
    G = g.sum()
    if N <= 0:
        raise InfeasibleMacrostate("need N > 0")
    if statistics == "fermi" and N >= G:
        raise InfeasibleMacrostate(f"fermi gas needs N < total degeneracy {G}")

    e_uniform = float((g * eps).sum() / G) * N   # E at beta -> 0+
    # beta -> inf: ground configuration
    if statistics == "fermi":
        fill = np.minimum(np.maximum(N - np.concatenate([[0.0], np.cumsum(g)[:-1]]), 0), g)
        e_ground = float((fill * eps).sum())
    else:
        e_ground = float(N * eps[0])
    if not e_ground < E < e_uniform:
        raise InfeasibleMacrostate(
            f"E={E:.6g} outside the beta>0 feasible interval "
            f"({e_ground:.6g}, {e_uniform:.6g}) for N={N}")

    def alpha_for(beta):
        """alpha matching the particle number at fixed beta."""
        lo_bound = -beta * eps[0] if statistics == "bose" else None

        def fN(alpha):
            return float((g * _mean_occupation(alpha, beta, eps, statistics)).sum() - N)

        if statistics == "bose":
            a = lo_bound + 1e-12 * max(1.0, abs(lo_bound))
            while fN(a) < 0:      # even at the condensation edge too few particles?
                a = lo_bound + (a - lo_bound) / 10
                if a - lo_bound < 1e-300:
                    raise InfeasibleMacrostate("cannot reach N below condensation")
            b = a + 1.0
            while fN(b) > 0:
                b += max(1.0, b - lo_bound)
        else:
            a, b = -1.0, 1.0
            while fN(a) < 0:
                a *= 2
            while fN(b) > 0:
                b *= 2
        return brentq(fN, a, b, xtol=1e-14, rtol=8.9e-16, maxiter=200)

    def energy_mismatch(beta):
        alpha = alpha_for(beta)
        n = _mean_occupation(alpha, beta, eps, statistics)
        return float((g * eps * n).sum() - E), alpha, n

    scale = 1.0 / max(eps.max() - eps.min(), 1e-12)
    b_lo = 1e-6 * scale
    while energy_mismatch(b_lo)[0] < 0:
        b_lo /= 8
        if b_lo < 1e-280:
            raise InfeasibleMacrostate("energy not bracketed from above at beta->0")
    b_hi = scale
    while energy_mismatch(b_hi)[0] > 0:
        b_hi *= 8
        if b_hi > 1e280:
            raise InfeasibleMacrostate("energy not bracketed as beta->inf")
    beta = brentq(lambda b: energy_mismatch(b)[0], b_lo, b_hi,
                  xtol=1e-15, rtol=8.9e-16, maxiter=200)
    _, alpha, n = energy_mismatch(beta)

    res_N = abs((g * n).sum() - N) / N
    res_E = abs((g * eps * n).sum() - E) / abs(E)
    near_cond = statistics == "bose" and (alpha + beta * eps[0]) < 1e-6
    return LagrangeSolution(alpha, beta, n, statistics, res_N, res_E, near_cond)


def boltzmann_entropy(macrostate: MacroState) -> float:
    """ln of the microstate count, exact via log-gamma (no Stirling).

    Fermi:  W = prod C(g_m, N_m);  Bose:  W = prod C(N_m + g_m - 1, N_m).
    Real-valued occupations use the gamma-function continuation.
    """
    g = macrostate.partition.degeneracies.astype(float)
    Nm = np.asarray(macrostate.occupations, dtype=float)
    if np.any(Nm < -1e-12):
        raise ValueError("occupations must be non-negative")
    if macrostate.statistics == "fermi":
        if np.any(Nm > g + 1e-12):
            raise ValueError("fermi occupations cannot exceed degeneracies")
        return float(np.sum(gammaln(g + 1) - gammaln(Nm + 1) - gammaln(g - Nm + 1)))
    return float(np.sum(gammaln(Nm + g) - gammaln(Nm + 1) - gammaln(g)))


def occupation_entropy(partition: ClusterPartition, n: np.ndarray,
                       statistics: str = "fermi") -> float:
    """Stirling-form entropy sum g_m s(n_m); exact Legendre partner of the
    mean-occupation distribution (dS/dE = beta, dS/dN = alpha hold identically
    at the constrained maximum)."""
    n = np.asarray(n, dtype=float)
    g = partition.degeneracies.astype(float)
    if statistics == "fermi":
        n = np.clip(n, 1e-300, 1 - 1e-16)
        s = -(n * np.log(n) + (1 - n) * np.log1p(-n))
    else:
        n = np.clip(n, 1e-300, None)
        s = (1 + n) * np.log1p(n) - n * np.log(n)
    return float((g * s).sum())


@dataclass(frozen=True)
class ThermoRelationReport:
    beta: float
    alpha: float
    dS_dE: float
    dS_dN: float
    rel_error_beta: float
    rel_error_alpha: float
    delta_E: float
    delta_N: float


def thermodynamic_relation_check(partition: ClusterPartition, N: float, E: float,
                                 delta_E: float, delta_N: float,
                                 statistics: str = "fermi") -> ThermoRelationReport:
    """Central finite differences of the macrostate entropy against (alpha, beta)."""
    def entropy_at(Nv, Ev):
        sol = solve_lagrange(partition, Nv, Ev, statistics)
        return occupation_entropy(partition, sol.occupations, statistics)

    sol0 = solve_lagrange(partition, N, E, statistics)
    dS_dE = (entropy_at(N, E + delta_E) - entropy_at(N, E - delta_E)) / (2 * delta_E)
    dS_dN = (entropy_at(N + delta_N, E) - entropy_at(N - delta_N, E)) / (2 * delta_N)
    return ThermoRelationReport(
        beta=sol0.beta, alpha=sol0.alpha, dS_dE=dS_dE, dS_dN=dS_dN,
        rel_error_beta=abs(dS_dE - sol0.beta) / abs(sol0.beta),
        rel_error_alpha=abs(dS_dN - sol0.alpha) / abs(sol0.alpha),
        delta_E=delta_E, delta_N=delta_N)


# ---------------------------------------------------------------------------
# Equilibrium correlation prediction
# ---------------------------------------------------------------------------

def _occupation_scalar(eps, T, mu, statistics):
    x = (eps - mu) / T
    if statistics == "fermi":
        return expit(-x)
    return 1.0 / np.expm1(x) if x > 0 else math.inf


def equilibrium_correlation(density: SpectralDensity, T: float, mu: float,
                            separation: float, d: int, statistics: str,
                            constants: PhysicalConstants, volume: float,
                            rel_tol: float = 1e-8) -> float:
    """Thermal prediction for the window-averaged correlation at one separation.

    (1/V) integral de rho(e) f(|s|/lambda_e) n(e) by adaptive quadrature over
    the energy range where the occupation exceeds 1e-12.
    """
    if T <= 0:
        raise ValueError("temperature must be positive")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    e_grid_lo = max(float(density.grid[0]), 1e-12)
    e_grid_hi = float(density.grid[-1])
    if statistics == "bose" and mu >= e_grid_lo:
        raise ValueError("bose chemical potential must lie below the spectrum")
    cutoff = T * math.log(1e12)
    e_hi = min(e_grid_hi, mu + cutoff) if statistics == "fermi" else e_grid_hi
    e_lo = e_grid_lo

    def integrand(e):
        lam = debroglie_wavelength(e, constants)
        return (density(e) * f_function(separation / lam, d)
                * _occupation_scalar(e, T, mu, statistics))

    pts = [mu] if statistics == "fermi" and e_lo < mu < e_hi else None
    val, err = integrate.quad(integrand, e_lo, e_hi, points=pts,
                              limit=400, epsrel=rel_tol, epsabs=0.0)
    if val != 0 and abs(err / val) > 100 * rel_tol:
        raise RuntimeError(f"equilibrium quadrature did not converge: "
                           f"value {val:.6g}, error estimate {err:.2g}")
    return val / volume


def equilibrium_correlation_discrete(energies: np.ndarray, T: float, mu: float,
                                     separation: float, d: int, statistics: str,
                                     constants: PhysicalConstants, volume: float) -> float:
    """Reference spectral sum (1/V) sum_v f(|s|/lambda_v) n(e_v) over the
    actual discrete spectrum."""
    energies = np.asarray(energies)
    lam = constants.hbar / np.sqrt(2 * constants.mass * energies)
    x = (energies - mu) / T
    occ = expit(-x) if statistics == "fermi" else 1.0 / np.expm1(x)
    return float(np.sum(f_function(separation / lam, d) * occ)) / volume


def neighbor_stability(basis: SingleParticleBasis, separation: float,
                       level_window: tuple[int, int]) -> float:
    """max over adjacent level pairs of |f(x_v) - f(x_v')| at fixed separation.

    Small values mean the shell kernel is stable against moving one level up
    or down the spectrum, which is what licenses clustering the energy axis.
    """
    lo, hi = level_window
    if not (0 <= lo < hi <= basis.count):
        raise ValueError("window outside basis")
    eps = basis.energies[lo:hi]
    lam = basis.constants.hbar / np.sqrt(2 * basis.constants.mass * eps)
    vals = f_function(separation / lam, basis.spec.dimension)
    return float(np.abs(np.diff(vals)).max())


# ---------------------------------------------------------------------------
# Eigenstate-to-eigenstate spread of the correlation observable
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpreadReport:
    values: np.ndarray
    mean: float
    relative_spread: float
    equilibrium_value: float
    relative_mean_deviation: float
    lagrange: LagrangeSolution
    separation: float
    n_configs: int


def et_spread(config_occupations: np.ndarray, basis: SingleParticleBasis,
              partition: ClusterPartition, separation, q_window: QWindow,
              statistics: str = "fermi") -> SpreadReport:
    """Per-eigenstate window-averaged correlations and their spread.

    ``config_occupations`` is an (n_configs, n_modes) integer array of shell
    configurations.  The mean is compared against the thermal prediction at
    the Lagrange point of the shared (N, E).
    """
    occ = np.asarray(config_occupations, dtype=float)
    if occ.ndim != 2 or occ.shape[0] < 20:
        raise ValueError("need at least 20 shell configurations")
    modes = occ.shape[1]
    auto = np.diag(pair_product_matrix(basis, separation, q_window,
                                       modes=np.arange(modes)))
    values = occ @ auto
    mean = float(values.mean())
    rel = float(values.std(ddof=1) / abs(mean)) if mean != 0 else math.inf

    N = float(occ[0].sum())
    E = float((occ @ basis.energies[:modes]).mean())
    sol = solve_lagrange(partition, N, E, statistics)
    s_norm = float(np.linalg.norm(np.atleast_1d(separation)))
    eq = equilibrium_correlation_discrete(
        basis.energies, sol.temperature, sol.chemical_potential, s_norm,
        basis.spec.dimension, statistics, basis.constants, basis.volume)
    dev = abs(mean - eq) / abs(eq) if eq != 0 else math.inf
    return SpreadReport(values, mean, rel, eq, dev, sol, s_norm, occ.shape[0])


def cluster_reconstruction_error(config_occ: np.ndarray, basis: SingleParticleBasis,
                                 partition: ClusterPartition, separation,
                                 q_window: QWindow) -> float:
    """Relative error of the coarse-grained reconstruction of the correlation.

    Replaces each mode's autocorrelation by its cluster mean, i.e. keeps only
    the macrostate data {N_m}.  Small for chaotic cavities (the autocorrelation
    is a stable function of energy), order one when neighboring eigenfunctions
    decorrelate (integrable or localized cavities)."""
    occ = np.asarray(config_occ, dtype=float)
    modes = len(occ)
    auto = np.diag(pair_product_matrix(basis, separation, q_window,
                                       modes=np.arange(modes)))
    exact = float(occ @ auto)
    lo = int(partition.starts[0])
    hi = int(partition.stops[-1])
    if np.any(occ[:lo] > 0) or np.any(occ[hi:modes] > 0):
        raise ValueError("configuration occupies levels outside the partition")
    recon = 0.0
    for a, b in zip(partition.starts, partition.stops):
        b2 = min(b, modes)
        if b2 <= a:
            break
        recon += occ[a:b2].sum() * auto[a:b2].mean()
    return abs(recon - exact) / max(abs(exact), 1e-300)
