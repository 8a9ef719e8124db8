"""Single-particle eigenbases of the three cavity models.

A completed :class:`SingleParticleBasis` is immutable and safe to share across
threads; every builder is deterministic for a fixed spec and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal

from .constants import PhysicalConstants, NATURAL
from .geometry import CavitySpec, interior_mask, cavity_volume, bounding_box


class EigensolverError(RuntimeError):
    """Raised when the sparse eigensolver fails to deliver a validated spectrum."""


@dataclass(frozen=True)
class SingleParticleBasis:
    """Sorted eigenenergies and grid-sampled eigenfunctions of one cavity model.

    ``eigenfunctions[v]`` is the v-th eigenfunction on the full bounding-box
    grid (zero outside the cavity), normalized so that
    sum |psi|^2 * cell_volume = 1.
    """

    spec: CavitySpec
    constants: PhysicalConstants
    energies: np.ndarray                  # (count,) ascending
    eigenfunctions: np.ndarray            # (count, *grid)
    spacings: tuple[float, ...]           # per-axis grid step
    mask: np.ndarray                      # interior points
    mode_numbers: np.ndarray | None = None  # (count, d) ints; rectangle only

    def __post_init__(self):
        self.energies.setflags(write=False)
        self.eigenfunctions.setflags(write=False)

    @property
    def count(self) -> int:
        return len(self.energies)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def volume(self) -> float:
        return cavity_volume(self.spec)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.eigenfunctions.shape[1:]

    def mean_level_spacing(self, lo: int = 0, hi: int | None = None) -> float:
        hi = self.count if hi is None else hi
        return float((self.energies[hi - 1] - self.energies[lo]) / (hi - lo - 1))

    def flat_functions(self) -> np.ndarray:
        """(count, n_points) view of the eigenfunctions."""
        return self.eigenfunctions.reshape(self.count, -1)

    def validate(self, n_check: int = 40, seed: int = 0) -> dict:
        """Spot-check orthonormality on a random subset of state pairs."""
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.count, size=min(n_check, self.count), replace=False)
        flat = self.flat_functions()[idx]
        gram = flat @ flat.T * self.cell_volume
        off = gram - np.diag(np.diag(gram))
        return {
            "max_norm_error": float(np.abs(np.diag(gram) - 1.0).max()),
            "max_overlap": float(np.abs(off).max()),
        }


# ---------------------------------------------------------------------------
# Rectangle (analytic)
# ---------------------------------------------------------------------------

def build_rectangle_basis(lengths, n_max, constants: PhysicalConstants = NATURAL,
                          grid=None) -> SingleParticleBasis:
    """Analytic product-of-sines eigenbasis of a Dirichlet box.

    ``n_max`` is the largest quantum number per axis (int or per-axis tuple);
    all prod(n_max) states are returned sorted by energy, with the quantum
    numbers kept as metadata.
    """
    lengths = tuple(float(L) for L in lengths)
    if any(L <= 0 for L in lengths):
        raise ValueError("box lengths must be positive")
    d = len(lengths)
    n_max = (n_max,) * d if np.isscalar(n_max) else tuple(n_max)
    if any(n < 1 for n in n_max):
        raise ValueError("need n_max >= 1 per axis")
    grid = (160,) * d if grid is None else ((grid,) * d if np.isscalar(grid) else tuple(grid))

    spec = CavitySpec("rectangle", d, lengths, grid)
    mask, h = interior_mask(spec)
    axes = [(np.arange(grid[i]) + 1) * h[i] for i in range(d)]

    modes = np.stack(np.meshgrid(*[np.arange(1, n + 1) for n in n_max],
                                 indexing="ij"), axis=-1).reshape(-1, d)
    hbar, m = constants.hbar, constants.mass
    energies = (np.pi ** 2 * hbar ** 2 / (2 * m)) * np.sum(
        (modes / np.array(lengths)) ** 2, axis=1)
    order = np.argsort(energies, kind="stable")
    energies, modes = energies[order], modes[order]

    sines = [np.sin(np.outer(modes[:, i], np.pi * axes[i] / lengths[i]))
             for i in range(d)]
    funcs = sines[0]
    if d == 2:
        funcs = sines[0][:, :, None] * sines[1][:, None, :]
    cell = float(np.prod(h))
    norms = np.sqrt(np.sum(funcs.reshape(len(modes), -1) ** 2, axis=1) * cell)
    funcs = funcs / norms.reshape((-1,) + (1,) * d)
    return SingleParticleBasis(spec, constants, energies, funcs, h, mask,
                               mode_numbers=modes)


# ---------------------------------------------------------------------------
# Billiards (5-point stencil, shift-invert window sweep)
# ---------------------------------------------------------------------------

def _masked_laplacian(mask: np.ndarray, h, constants: PhysicalConstants) -> sp.csr_matrix:
    """Sparse -hbar^2/(2m) Laplacian with Dirichlet boundary via masking."""
    nx, ny = mask.shape
    hx, hy = h
    idx = -np.ones(mask.shape, dtype=np.int64)
    n = int(mask.sum())
    idx[mask] = np.arange(n)
    ix, iy = np.nonzero(mask)
    me = idx[ix, iy]
    rows, cols, vals = [me], [me], [np.full(n, 1.0 / hx ** 2 + 1.0 / hy ** 2)]
    for dx, dy, step in ((1, 0, hx), (-1, 0, hx), (0, 1, hy), (0, -1, hy)):
        jx, jy = ix + dx, iy + dy
        ok = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
        ok[ok] &= mask[jx[ok], jy[ok]]
        rows.append(me[ok])
        cols.append(idx[jx[ok], jy[ok]])
        vals.append(np.full(int(ok.sum()), -0.5 / step ** 2))
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return H * (constants.hbar ** 2 / constants.mass)


def _window_sweep(H: sp.csr_matrix, n_states: int, mean_spacing: float, seed: int,
                  k_per: int = 280, trust: float = 0.12):
    """Lowest ``n_states`` eigenpairs by a sweep of shift-invert windows.

    Each eigsh call converges the ``k_per`` levels nearest the shift; the outer
    ``trust`` fraction on each side is discarded (edges of a Lanczos window may
    be incomplete) and consecutive windows overlap.  Seam duplicates are merged
    by relative tolerance.
    """
    n = H.shape[0]
    if k_per >= n:
        raise EigensolverError("window size exceeds matrix dimension")
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)

    vals_parts, vecs_parts = [], []
    top = 0.0
    covered = 0
    sigma = 0.5 * k_per * mean_spacing
    stall = 0
    while covered < n_states:
        try:
            w, v = spla.eigsh(H, k=k_per, sigma=sigma, which="LM", v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise EigensolverError(
                f"shift-invert window at sigma={sigma:.4g} did not converge "
                f"({len(exc.eigenvalues)} of {k_per} levels)") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        lo_t = w[int(trust * k_per)]
        hi_t = w[int((1 - trust) * k_per) - 1]
        if vals_parts and lo_t > top:
            # seam not covered: pull the window down and retry
            sigma = 0.5 * (top + lo_t)
            stall += 1
            if stall > 8:
                raise EigensolverError("window sweep cannot close a seam gap")
            continue
        stall = 0
        keep = (w > top) & (w <= hi_t) if vals_parts else (w <= hi_t)
        vals_parts.append(w[keep])
        vecs_parts.append(v[:, keep])
        covered += int(keep.sum())
        top = hi_t
        sigma = top + 0.38 * k_per * mean_spacing

    vals = np.concatenate(vals_parts)
    vecs = np.hstack(vecs_parts)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # seam duplicates: same level converged in two adjacent windows
    dup = np.concatenate([[False], np.diff(vals) < 1e-9 * np.maximum(1.0, vals[:-1])])
    vals, vecs = vals[~dup], vecs[:, ~dup]
    if len(vals) < n_states:
        raise EigensolverError(f"sweep produced {len(vals)} < {n_states} levels")
    return vals[:n_states], vecs[:, :n_states]


def build_billiard_basis(spec: CavitySpec, n_states: int,
                         constants: PhysicalConstants = NATURAL) -> SingleParticleBasis:
    """Eigenbasis of a chaotic billiard on a masked grid.

    Discretizes -hbar^2/(2m) Laplacian with Dirichlet boundary (5-point
    stencil), solves the lowest ``n_states`` by a shift-invert window sweep,
    and validates residuals of every returned pair.
    """
    if spec.kind not in ("stadium", "sinai"):
        raise ValueError("build_billiard_basis handles stadium and sinai kinds")
    mask, h = interior_mask(spec)
    n_int = int(mask.sum())
    if n_states > n_int // 4:
        raise ValueError(f"n_states={n_states} exceeds interior/4 = {n_int // 4}; "
                         "refine the grid")
    H = _masked_laplacian(mask, h, constants)
    # Weyl mean level spacing: N(e) ~ A m e / (2 pi hbar^2)
    area = cavity_volume(spec)
    mean_spacing = 2 * math.pi * constants.hbar ** 2 / (constants.mass * area)
    vals, vecs = _window_sweep(H, n_states, mean_spacing, seed=spec.rng_seed)

    # residual validation (relative to level energy)
    res = H @ vecs - vecs * vals
    rel = np.linalg.norm(res, axis=0) / (np.abs(vals) * np.linalg.norm(vecs, axis=0))
    worst = float(rel.max())
    if worst > 1e-6:
        raise EigensolverError(f"eigenpair residuals up to {worst:.2e} exceed 1e-6")

    cell = float(np.prod(h))
    vecs = vecs / math.sqrt(cell)          # ell2-normalized -> grid-normalized
    # deterministic sign: largest-magnitude component positive
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    vecs = vecs * signs

    funcs = np.zeros((n_states,) + mask.shape)
    funcs[:, mask] = vecs.T
    return SingleParticleBasis(spec, constants, vals, funcs, h, mask)


# ---------------------------------------------------------------------------
# Anderson chain
# ---------------------------------------------------------------------------

def build_anderson_chain(length_sites: int, disorder_strength: float, seed: int,
                         constants: PhysicalConstants = NATURAL,
                         hopping: float = 1.0) -> SingleParticleBasis:
    """Nearest-neighbor tight-binding chain with uniform on-site disorder.

    On-site energies are iid uniform on [-W/2, W/2]; the full dense spectrum is
    returned.  Lattice spacing is 1, so the 'grid' is the chain itself.
    """
    if length_sites < 64:
        raise ValueError("need at least 64 sites")
    if disorder_strength <= 0:
        raise ValueError("disorder_strength must be positive")
    rng = np.random.default_rng(seed)
    onsite = rng.uniform(-disorder_strength / 2, disorder_strength / 2, size=length_sites)
    vals, vecs = eigh_tridiagonal(onsite, -hopping * np.ones(length_sites - 1))
    # eigh_tridiagonal returns ascending energies; columns ell2-normalized
    lead = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[lead, np.arange(vecs.shape[1])])
    spec = CavitySpec("anderson_chain", 1, (float(length_sites),), (length_sites,),
                      disorder_strength=disorder_strength, rng_seed=seed)
    mask = np.ones(length_sites, dtype=bool)
    return SingleParticleBasis(spec, constants, vals, np.ascontiguousarray(vecs.T),
                               (1.0,), mask)


# ---------------------------------------------------------------------------
# Spectral statistics and density
# ---------------------------------------------------------------------------

def spacing_ratio_stats(basis_or_energies, window: tuple[int, int]) -> float:
    """Mean of r_v = min(s_v, s_v+1)/max(s_v, s_v+1) over consecutive spacings.

    GOE-distributed spectra give 0.5307(1), Poisson gives 2 ln 2 - 1 = 0.3863.
    """
    energies = getattr(basis_or_energies, "energies", basis_or_energies)
    lo, hi = window
    ev = np.asarray(energies)[lo:hi]
    if len(ev) < 200:
        raise ValueError(f"window holds {len(ev)} levels; need at least 200")
    s = np.diff(ev)
    r = np.minimum(s[:-1], s[1:]) / np.maximum(s[:-1], s[1:])
    return float(r.mean())


@dataclass(frozen=True)
class SpectralDensity:
    """Gaussian-smoothed density of states, tabulated on a uniform energy grid."""

    grid: np.ndarray
    values: np.ndarray
    smoothing_width: float

    def __call__(self, energy):
        return np.interp(energy, self.grid, self.values, left=0.0, right=0.0)

    def integrate(self, e_lo: float, e_hi: float) -> float:
        m = (self.grid >= e_lo) & (self.grid <= e_hi)
        return float(np.trapezoid(self.values[m], self.grid[m]))


def spectral_density(basis_or_energies, smoothing_width: float,
                     n_grid: int = 2000) -> SpectralDensity:
    """Kernel-density estimate rho(e) = sum_v N(e; e_v, w)."""
    energies = np.asarray(getattr(basis_or_energies, "energies", basis_or_energies))
    if len(energies) == 0:
        grid = np.linspace(0.0, 1.0, n_grid)
        return SpectralDensity(grid, np.zeros(n_grid), smoothing_width)
    mean_spacing = (energies[-1] - energies[0]) / max(len(energies) - 1, 1)
    if smoothing_width < 3 * mean_spacing:
        raise ValueError(f"smoothing width {smoothing_width:.4g} below 3 mean "
                         f"spacings ({3 * mean_spacing:.4g}); density would be spiky")
    pad = 6 * smoothing_width
    grid = np.linspace(energies[0] - pad, energies[-1] + pad, n_grid)
    z = (grid[:, None] - energies[None, :]) / smoothing_width
    values = np.exp(-0.5 * z ** 2).sum(axis=1) / (smoothing_width * math.sqrt(2 * math.pi))
    return SpectralDensity(grid, values, smoothing_width)


def debroglie_wavelength(energy: float, constants: PhysicalConstants = NATURAL) -> float:
    """hbar / sqrt(2 m e): the oscillation scale of eigenfunctions at energy e."""
    if energy <= 0:
        raise ValueError("energy must be positive")
    return constants.hbar / math.sqrt(2 * constants.mass * energy)


# ---------------------------------------------------------------------------
# Position-window averaging and eigenfunction autocorrelation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QWindow:
    """Box of position cells over which pair correlations are averaged."""

    center: tuple[float, ...]
    width: float


def default_q_window(basis: SingleParticleBasis, width: float) -> QWindow:
    """Window centered on the interior centroid of the cavity."""
    mask = basis.mask
    h = basis.spacings
    if mask.ndim == 1:
        x = (np.nonzero(mask)[0] + 1) * h[0]
        return QWindow((float(x.mean()),), width)
    pts = np.nonzero(mask)
    center = tuple(float((pts[i] + 1).mean() * h[i]) for i in range(mask.ndim))
    return QWindow(center, width)


def separation_to_steps(basis: SingleParticleBasis, separation) -> tuple[int, ...]:
    """Convert a physical separation vector to integer grid steps.

    Separations are restricted to grid vectors (no interpolation); anything
    off-grid beyond 1e-9 relative is rejected.
    """
    separation = np.atleast_1d(np.asarray(separation, dtype=float))
    h = np.array(basis.spacings)
    steps = separation / h
    rounded = np.rint(steps)
    if np.any(np.abs(steps - rounded) > 1e-9 * np.maximum(1.0, np.abs(steps))):
        raise ValueError(f"separation {separation} is not a grid vector (h={h})")
    return tuple(int(s) for s in rounded)


def window_indices(basis: SingleParticleBasis, q_window: QWindow,
                   steps: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices (base, shifted) of valid q and q+s point pairs in the window."""
    shape = basis.grid_shape
    h = basis.spacings
    box = bounding_box(basis.spec) if basis.spec.dimension > 1 else (basis.spec.lengths[0],)
    if any(abs(s) * hi >= L for s, hi, L in zip(steps, h, box)):
        raise ValueError("separation exceeds cavity size")
    half = q_window.width / 2
    sel = []
    for ax, n in enumerate(shape):
        x = (np.arange(n) + 1) * h[ax]
        c = q_window.center[ax]
        inside = (x >= c - half) & (x <= c + half)
        j = np.arange(n)
        valid = (j + steps[ax] >= 0) & (j + steps[ax] < n)
        sel.append(inside & valid)
    if basis.mask.ndim == 1:
        base = np.nonzero(sel[0] & basis.mask)[0]
        shifted = base + steps[0]
        ok = basis.mask[shifted]
        base, shifted = base[ok], shifted[ok]
    else:
        g = np.nonzero(np.outer(sel[0], sel[1]) & basis.mask)
        bx, by = g[0], g[1]
        sx, sy = bx + steps[0], by + steps[1]
        ok = basis.mask[sx, sy]
        bx, by, sx, sy = bx[ok], by[ok], sx[ok], sy[ok]
        ny = shape[1]
        base, shifted = bx * ny + by, sx * ny + sy
    if len(base) == 0:
        raise ValueError("q-window contains no valid point pairs")
    return base, shifted


def pair_product_matrix(basis: SingleParticleBasis, separation, q_window: QWindow,
                        modes: np.ndarray | None = None) -> np.ndarray:
    """Window-averaged products A[v, v'] = < psi_v(q+s) psi_v'(q) >_q.

    The diagonal is the eigenfunction autocorrelation; the full matrix converts
    a one-body density matrix into the window-averaged correlation function.
    """
    steps = separation_to_steps(basis, separation)
    base, shifted = window_indices(basis, q_window, steps)
    flat = basis.flat_functions()
    if modes is not None:
        flat = flat[modes]
    shifted_vals = flat[:, shifted]
    base_vals = flat[:, base]
    return (shifted_vals @ base_vals.T) / len(base)


def autocorrelation_diagonal(basis: SingleParticleBasis, separation, q_window: QWindow,
                             n_modes: int | None = None) -> np.ndarray:
    """Per-mode window-averaged autocorrelations C_v(s) = < psi_v(q+s) psi_v(q) >_q."""
    steps = separation_to_steps(basis, separation)
    base, shifted = window_indices(basis, q_window, steps)
    flat = basis.flat_functions()
    if n_modes is not None:
        flat = flat[:n_modes]
    return np.mean(flat[:, shifted] * flat[:, base], axis=1)


def eigenfunction_autocorrelation(basis: SingleParticleBasis, nu: int, separation,
                                  q_window: QWindow) -> float:
    """Window-averaged autocorrelation < psi_v(q+s) psi_v(q) >_q of one eigenfunction.

    For chaotic cavities this approaches f(|s|/lambda_e)/V; for the rectangle
    it is a product of cosines in the mode momenta and swings with the state.
    """
    if not 0 <= nu < basis.count:
        raise ValueError(f"state index {nu} outside basis of {basis.count}")
    steps = separation_to_steps(basis, separation)
    base, shifted = window_indices(basis, q_window, steps)
    f = basis.flat_functions()[nu]
    return float(np.mean(f[shifted] * f[base]))
