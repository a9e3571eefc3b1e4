"""Collective angular-momentum structure for n two-level emitters.

Total-spin sectors are labelled by ``two_j = 2J`` to keep half-integer J
exact.  The bright ladder is the unique maximal-J (= n/2) cascade; everything
with J < n/2 is subradiant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .qops import (
    SIGMA_X, SIGMA_Y, SIGMA_Z, Operator, StateVector,
    _collective_lowering_mat, _embed, _ptrace_keep_first,
)

__all__ = [
    "DickeIndex", "JSector", "JSpectrum",
    "degeneracy", "bright_ladder", "bright_projector", "subradiant_projector",
    "j_spectrum", "dark_state", "cg_split_coeffs", "half_chain_entropy_dark",
]


@dataclass(frozen=True)
class DickeIndex:
    """Label |J, M, alpha> with two_j = 2J and two_m = 2M kept as integers."""

    two_j: int
    two_m: int
    alpha: int = 1

    def __post_init__(self):
        if self.two_j < 0:
            raise ValueError("two_j must be >= 0")
        if abs(self.two_m) > self.two_j:
            raise ValueError("|two_m| must not exceed two_j")
        if (self.two_m - self.two_j) % 2 != 0:
            raise ValueError("two_m must have the same parity as two_j")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")

    def check_for(self, n: int):
        if self.two_j > n or (self.two_j - n) % 2 != 0:
            raise ValueError(f"two_j={self.two_j} invalid for n={n}")
        if self.alpha > degeneracy(n, self.two_j):
            raise ValueError("alpha exceeds the sector degeneracy")


@dataclass(frozen=True)
class JSector:
    two_j: int
    projector: Operator
    multiplicity: int


@dataclass(frozen=True)
class JSpectrum:
    n: int
    sectors: tuple[JSector, ...]

    def projector(self, two_j: int) -> Operator:
        for s in self.sectors:
            if s.two_j == two_j:
                return s.projector
        raise KeyError(f"no sector with two_j={two_j}")

    def populations(self, mat: np.ndarray) -> dict[int, float]:
        """Population per sector of a density matrix given as a raw array."""
        return {s.two_j: float(np.einsum("ij,ji->", s.projector.matrix, mat).real)
                for s in self.sectors}


def degeneracy(n: int, two_j: int) -> int:
    """Multiplicity d_J = (2J+1) n! / ((n/2+J+1)! (n/2-J)!), exact integer."""
    if two_j < 0 or two_j > n or (n - two_j) % 2 != 0:
        raise ValueError(f"two_j={two_j} incompatible with n={n}")
    num = (two_j + 1) * math.factorial(n)
    den = math.factorial((n + two_j) // 2 + 1) * math.factorial((n - two_j) // 2)
    q, r = divmod(num, den)
    if r != 0:
        raise AssertionError("degeneracy formula did not divide exactly")
    return q


@lru_cache(maxsize=None)
def _bright_ladder_arrays(n):
    dim = 2 ** n
    sm = _collective_lowering_mat(n)
    states = []
    v = np.zeros(dim, dtype=complex)
    v[0] = 1.0  # all excited
    states.append(v)
    for _ in range(n):
        v = sm @ v
        v = v / np.linalg.norm(v)
        states.append(v)
    return tuple(states)


def bright_ladder(n: int) -> list[StateVector]:
    """The n+1 states |n/2, M> for M = n/2 ... -n/2, generated by repeated
    collective lowering from the fully excited state."""
    return [StateVector(n, v.copy()) for v in _bright_ladder_arrays(n)]


@lru_cache(maxsize=None)
def _bright_projector_mat(n):
    dim = 2 ** n
    out = np.zeros((dim, dim), dtype=complex)
    for v in _bright_ladder_arrays(n):
        out += np.outer(v, v.conj())
    return out


def bright_projector(n: int) -> Operator:
    return Operator(n, _bright_projector_mat(n).copy())


@lru_cache(maxsize=None)
def _subradiant_projector_mat(n):
    return np.eye(2 ** n, dtype=complex) - _bright_projector_mat(n)


def subradiant_projector(n: int) -> Operator:
    return Operator(n, _subradiant_projector_mat(n).copy())


@lru_cache(maxsize=None)
def _j_spectrum_cached(n):
    dim = 2 ** n
    sx = np.zeros((dim, dim), dtype=complex)
    sy = np.zeros((dim, dim), dtype=complex)
    sz = np.zeros((dim, dim), dtype=complex)
    for i in range(1, n + 1):
        sx += 0.5 * _embed(SIGMA_X, i, n)
        sy += 0.5 * _embed(SIGMA_Y, i, n)
        sz += 0.5 * _embed(SIGMA_Z, i, n)
    s2 = sx @ sx + sy @ sy + sz @ sz
    w, v = np.linalg.eigh(s2)

    valid = [(tj, tj / 2 * (tj / 2 + 1)) for tj in range(n % 2, n + 1, 2)]
    groups: dict[int, list[int]] = {}
    for idx, ev in enumerate(w):
        for tj, target in valid:
            if abs(ev - target) < 1e-6:
                groups.setdefault(tj, []).append(idx)
                break
        else:
            raise ArithmeticError(
                f"S^2 eigenvalue {ev!r} matches no J(J+1) within 1e-6 for n={n}"
            )

    sectors = []
    for tj in sorted(groups, reverse=True):
        cols = v[:, groups[tj]]
        proj = cols @ cols.conj().T
        d_j = degeneracy(n, tj)
        rank = len(groups[tj])
        if rank != (tj + 1) * d_j:
            raise ArithmeticError(
                f"sector two_j={tj} has rank {rank}, expected {(tj + 1) * d_j}"
            )
        sectors.append(JSector(tj, Operator(n, proj), d_j))

    total = sum(s.projector.matrix for s in sectors)
    if np.abs(total - np.eye(dim)).max() > 1e-9:
        raise ArithmeticError("J-sector projectors do not resolve the identity")
    return JSpectrum(n, tuple(sectors))


def j_spectrum(n: int) -> JSpectrum:
    """Resolve the n-qubit space into total-spin sectors by diagonalizing S^2."""
    return _j_spectrum_cached(n)


def dark_state(n: int, measured_site: int = 1) -> StateVector:
    """The single-excitation dark state reached by trajectories frozen after a
    local measurement on ``measured_site``.

    It is the unique (up to phase) combination of |e>_i (x) |G> and
    |g>_i (x) |W> annihilated by the collective lowering operator:
    sqrt((n-1)/n) |e>_i|G> - sqrt(1/n) |g>_i|W>, which lies entirely in the
    J = n/2 - 1 sector.
    """
    if n < 2:
        raise ValueError("dark_state requires n >= 2")
    if not 1 <= measured_site <= n:
        raise IndexError("measured_site out of range")
    dim = 2 ** n
    psi = np.zeros(dim, dtype=complex)

    def basis_index(excited_sites):
        idx = 0
        for s in range(1, n + 1):
            idx = (idx << 1) | (0 if s in excited_sites else 1)
        return idx

    psi[basis_index({measured_site})] = math.sqrt((n - 1) / n)
    w_amp = -1.0 / math.sqrt(n) / math.sqrt(n - 1)
    for j in range(1, n + 1):
        if j != measured_site:
            psi[basis_index({j})] = w_amp
    return StateVector(n, psi)


def cg_split_coeffs(n: int, k: int) -> tuple[float, float]:
    """Amplitudes (a, b) splitting the bright state with k de-excitations over
    the measured site: a on |e>(x)|bright, k> and b on |g>(x)|bright, k-1>."""
    if not 0 <= k <= n:
        raise ValueError("k must satisfy 0 <= k <= n")
    return math.sqrt((n - k) / n), math.sqrt(k / n)


def half_chain_entropy_dark(n: int) -> float:
    """Closed-form half-chain entanglement entropy factor of the prepared
    single-excitation subradiant state, with N_A = ceil(n/2).

    For even n this evaluates to
    -(3n-4)/(4(n-1)) log[(3n-4)/(4(n-1))] - n/(4(n-1)) log[n/(4(n-1))],
    approaching 2 log 2 - (3/4) log 3 for large n.
    """
    if n < 2:
        raise ValueError("half_chain_entropy_dark requires n >= 2")
    n_a = (n + 1) // 2
    n_b = n - n_a
    p0 = 0.5 * (1.0 + (n_a - 1) / (n - 1))
    p1 = n_b / (2.0 * (n - 1))
    out = 0.0
    for p in (p0, p1):
        if p > 0:
            out -= p * math.log(p)
    return out
