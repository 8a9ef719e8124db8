"""Brute-force Fock-space oracle for small mode counts.

Builds explicit creation/annihilation matrices in the full tensor-product
space (Jordan-Wigner strings for fermions, truncated ladders for bosons) and
evaluates one-body quantities by dense matrix algebra.  Deliberately
independent of the package's bucket-matching implementation.
"""

import numpy as np
from scipy.linalg import expm


def ladder_operators(n_modes: int, statistics: str, n_max: int = 3):
    """List of annihilation matrices a_v in the full Fock space."""
    if statistics == "fermi":
        d = 2
        low = np.array([[0.0, 1.0], [0.0, 0.0]])   # |1> -> |0>
        z = np.diag([1.0, -1.0])                   # (-1)^n
    else:
        d = n_max + 1
        low = np.diag(np.sqrt(np.arange(1, d)), k=1)
        z = np.eye(d)
    eye = np.eye(d)
    ops = []
    for v in range(n_modes):
        mats = [z if statistics == "fermi" else eye] * v + [low] + [eye] * (n_modes - 1 - v)
        full = mats[0]
        for m in mats[1:]:
            full = np.kron(full, m)
        ops.append(full)
    return ops


def config_index(occ, statistics, n_max=3):
    d = 2 if statistics == "fermi" else n_max + 1
    idx = 0
    for n in occ:
        idx = idx * d + int(n)
    return idx


def state_vector(occupations, amplitudes, statistics, n_max=3):
    n_modes = occupations.shape[1]
    d = 2 if statistics == "fermi" else n_max + 1
    psi = np.zeros(d ** n_modes, dtype=complex)
    for occ, amp in zip(occupations, amplitudes):
        psi[config_index(occ, statistics, n_max)] += amp
    return psi


def obdm(psi, ops):
    n = len(ops)
    rho = np.zeros((n, n), dtype=complex)
    for v in range(n):
        for vp in range(n):
            rho[v, vp] = psi.conj() @ (ops[vp].conj().T @ (ops[v] @ psi))
    return rho


def evolve(psi, energies, ops, t, hbar=1.0):
    H = sum(e * (a.conj().T @ a) for e, a in zip(energies, ops))
    return expm(-1j * H * t / hbar) @ psi
