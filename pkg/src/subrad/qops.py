"""Dense operator algebra on small n-qubit Hilbert spaces.

Basis convention, fixed across the whole package: per site, index 0 is the
excited state |e> and index 1 the ground state |g>; multi-site indices are
big-endian in site order, so site 1 is the most significant qubit.  All rates
are expressed in units of the single-emitter decay rate gamma0 and times in
units of 1/gamma0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "SIGMA_X", "SIGMA_Y", "SIGMA_Z", "SIGMA_PLUS", "SIGMA_MINUS", "ID2",
    "StateVector", "DensityMatrix", "Operator", "CouplingModel", "JumpChannel",
    "UnphysicalModelError",
    "embed_site_op", "collective_lowering", "build_couplings", "jump_channels",
    "partial_trace_site", "purity", "negativity", "von_neumann_entropy",
    "excitation_number_op",
]

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SIGMA_PLUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)   # |e><g|
SIGMA_MINUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)  # |g><e|
ID2 = np.eye(2, dtype=complex)

# Channels below RATE_EPS (in units of gamma0) are dropped; eigenvalues of the
# decay matrix below GAMMA_EIG_FLOOR mean the model is unphysical rather than
# suffering floating-point noise.
RATE_EPS = 1e-10
GAMMA_EIG_FLOOR = -1e-8


class UnphysicalModelError(ValueError):
    """The decay matrix has a genuinely negative collective rate."""


def _as_complex_matrix(mat):
    out = np.ascontiguousarray(mat, dtype=complex)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {out.shape}")
    return out


@dataclass(frozen=True)
class StateVector:
    """Normalized pure state on ``n_sites`` qubits."""

    n_sites: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("n_sites must be >= 1")
        amps = np.ascontiguousarray(self.amplitudes, dtype=complex)
        if amps.shape != (2 ** self.n_sites,):
            raise ValueError(
                f"amplitudes must have length 2**{self.n_sites}, got {amps.shape}"
            )
        nrm = np.linalg.norm(amps)
        if abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"state norm {nrm} deviates from 1 beyond 1e-12")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self):
        return self.amplitudes.shape[0]

    def density_matrix(self) -> "DensityMatrix":
        return DensityMatrix(self.n_sites, np.outer(self.amplitudes, self.amplitudes.conj()))

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive (within tolerance) state on n qubits.

    ``n_sites = 0`` is allowed as the empty-system convention: a 1x1 matrix
    holding the scalar trace.
    """

    n_sites: int
    matrix: np.ndarray

    def __post_init__(self):
        if self.n_sites < 0:
            raise ValueError("n_sites must be >= 0")
        mat = _as_complex_matrix(self.matrix)
        dim = 2 ** self.n_sites
        if mat.shape != (dim, dim):
            raise ValueError(f"matrix must be {dim}x{dim} for n_sites={self.n_sites}")
        herm_dev = np.abs(mat - mat.conj().T).max()
        if herm_dev > 1e-10:
            raise ValueError(f"matrix not Hermitian: max |rho - rho^dag| = {herm_dev:.3e}")
        tr = mat.trace().real
        if abs(tr - 1.0) > 1e-8:
            raise ValueError(f"trace {tr} deviates from 1 beyond 1e-8")
        if np.linalg.eigvalsh(mat).min() < -1e-8:
            raise ValueError("matrix has an eigenvalue below -1e-8")
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Operator:
    """Dense operator on n qubits."""

    n_sites: int
    matrix: np.ndarray

    def __post_init__(self):
        mat = _as_complex_matrix(self.matrix)
        if mat.shape != (2 ** self.n_sites,) * 2:
            raise ValueError(
                f"matrix shape {mat.shape} inconsistent with n_sites={self.n_sites}"
            )
        object.__setattr__(self, "matrix", mat)


@dataclass(frozen=True)
class JumpChannel:
    """One collective lowering channel: rate plus unit-norm site coefficients."""

    rate: float
    coeffs: np.ndarray

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be >= 0")
        c = np.ascontiguousarray(self.coeffs, dtype=float)
        if abs(np.linalg.norm(c) - 1.0) > 1e-12:
            raise ValueError("coeffs must be unit norm")
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True)
class CouplingModel:
    """Collective decay matrix and dipole shifts for an n-emitter array.

    ``gamma`` is the real symmetric decay matrix with gamma0 on the diagonal,
    ``omega`` the real symmetric dipole-dipole matrix with zero diagonal.
    """

    n: int
    gamma0: float
    gamma: np.ndarray
    omega: np.ndarray
    geometry: str = "custom"
    d_over_lambda0: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.gamma0 <= 0:
            raise ValueError("gamma0 must be positive")
        g = np.ascontiguousarray(self.gamma, dtype=float)
        o = np.ascontiguousarray(self.omega, dtype=float)
        if g.shape != (self.n, self.n) or o.shape != (self.n, self.n):
            raise ValueError("gamma and omega must be n x n")
        if np.abs(g - g.T).max() > 1e-12 or np.abs(o - o.T).max() > 1e-12:
            raise ValueError("gamma and omega must be symmetric")
        if np.abs(np.diag(g) - self.gamma0).max() > 1e-12:
            raise ValueError("diagonal of gamma must equal gamma0")
        if np.abs(np.diag(o)).max() > 1e-12:
            raise ValueError("diagonal of omega must be zero")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "omega", o)

    def drop_site(self, i: int) -> "CouplingModel":
        """Coupling model of the remaining n-1 emitters with site ``i`` removed."""
        keep = [k for k in range(self.n) if k != i - 1]
        idx = np.ix_(keep, keep)
        return CouplingModel(self.n - 1, self.gamma0, self.gamma[idx], self.omega[idx],
                             geometry="custom", d_over_lambda0=self.d_over_lambda0)


# ---------------------------------------------------------------------------
# raw-array helpers; public wrappers below operate on the dataclass types


def _embed(op2, i, n):
    if not 1 <= i <= n:
        raise IndexError(f"site index {i} out of range 1..{n}")
    out = np.eye(2 ** (i - 1), dtype=complex)
    out = np.kron(out, np.asarray(op2, dtype=complex))
    return np.ascontiguousarray(np.kron(out, np.eye(2 ** (n - i), dtype=complex)))


@lru_cache(maxsize=None)
def _site_lowering_ops(n):
    return tuple(_embed(SIGMA_MINUS, i, n) for i in range(1, n + 1))


@lru_cache(maxsize=None)
def _collective_lowering_mat(n):
    out = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for op in _site_lowering_ops(n):
        out += op
    return out


@lru_cache(maxsize=None)
def _excitation_number_mat(n):
    out = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for i in range(1, n + 1):
        out += _embed((ID2 + SIGMA_Z) / 2.0, i, n)
    return out


def _ptrace_site(mat, i, n):
    dl, dr = 2 ** (i - 1), 2 ** (n - i)
    r = mat.reshape(dl, 2, dr, dl, 2, dr)
    return np.ascontiguousarray(np.einsum("asbcsd->abcd", r).reshape(dl * dr, dl * dr))


def _ptrace_keep_first(mat, n, n_keep):
    dA, dB = 2 ** n_keep, 2 ** (n - n_keep)
    r = mat.reshape(dA, dB, dA, dB)
    return np.einsum("ajbj->ab", r)


def _reduced_from_state(psi, i, n):
    """Density matrix of all sites but ``i`` from a pure state, O(d^2) not O(d^3)."""
    dl, dr = 2 ** (i - 1), 2 ** (n - i)
    t = psi.reshape(dl, 2, dr)
    rho = np.einsum("asb,csd->abcd", t, t.conj())
    return np.ascontiguousarray(rho.reshape(dl * dr, dl * dr))


def _purity(mat):
    return float(np.einsum("ij,ji->", mat, mat).real)


def _partial_transpose_first(mat, dA):
    d = mat.shape[0]
    dB = d // dA
    r = mat.reshape(dA, dB, dA, dB)
    return r.transpose(2, 1, 0, 3).reshape(d, d)


def _negativity(mat, n, partition_size):
    if not 1 <= partition_size < n:
        raise ValueError("partition_size must satisfy 1 <= partition_size < n")
    pt = _partial_transpose_first(mat, 2 ** partition_size)
    ev = np.linalg.eigvalsh(pt)
    return float(-ev[ev < 0].sum())


def _entropy(mat):
    ev = np.linalg.eigvalsh(mat)
    ev = ev[ev > 1e-15]
    return float(-(ev * np.log(ev)).sum())


# ---------------------------------------------------------------------------
# public operations


def embed_site_op(op2, i: int, n: int) -> Operator:
    """Embed a single-site 2x2 operator at slot ``i`` of an n-site register."""
    op2 = np.asarray(op2, dtype=complex)
    if op2.shape != (2, 2):
        raise ValueError("op2 must be 2x2")
    return Operator(n, _embed(op2, i, n))


def collective_lowering(n: int) -> Operator:
    """Collective lowering operator, the sum of all single-site lowerings."""
    return Operator(n, _collective_lowering_mat(n).copy())


def excitation_number_op(n: int) -> Operator:
    """Total excitation number operator, sum of (1 + sigma_z)/2 per site."""
    return Operator(n, _excitation_number_mat(n).copy())


def build_couplings(geometry: str, n: int, gamma0: float = 1.0,
                    d_over_lambda0: float | None = None) -> CouplingModel:
    """Construct the coupling model for a named geometry.

    ``pse``: all-to-all identical decay, no dipole shifts.
    ``waveguide``: 1-D array at spacing d along a single-mode waveguide,
    gamma_lm = gamma0 cos(2 pi (d/lambda0) |l-m|) and
    omega_lm = 0.5 gamma0 sin(2 pi (d/lambda0) |l-m|).
    """
    if n < 2:
        raise ValueError("build_couplings requires n >= 2")
    geometry = geometry.lower()
    if geometry == "pse":
        gamma = np.full((n, n), gamma0, dtype=float)
        omega = np.zeros((n, n), dtype=float)
        return CouplingModel(n, gamma0, gamma, omega, geometry="pse")
    if geometry == "waveguide":
        if d_over_lambda0 is None or d_over_lambda0 < 0:
            raise ValueError("waveguide geometry needs d_over_lambda0 >= 0")
        sep = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
        phase = 2.0 * np.pi * d_over_lambda0 * sep
        gamma = gamma0 * np.cos(phase)
        omega = 0.5 * gamma0 * np.sin(phase)
        np.fill_diagonal(omega, 0.0)
        return CouplingModel(n, gamma0, gamma, omega, geometry="waveguide",
                             d_over_lambda0=d_over_lambda0)
    raise ValueError(f"unknown geometry {geometry!r}")


def jump_channels(model: CouplingModel) -> list[JumpChannel]:
    """Diagonalize the decay matrix into independent collective channels.

    Channels with rate above ``RATE_EPS * gamma0`` are returned sorted by
    descending rate.  Raises :class:`UnphysicalModelError` if an eigenvalue
    falls below ``GAMMA_EIG_FLOOR * gamma0``.
    """
    w, v = np.linalg.eigh(model.gamma)
    if w.min() < GAMMA_EIG_FLOOR * model.gamma0:
        raise UnphysicalModelError(
            f"decay matrix eigenvalue {w.min():.3e} below {GAMMA_EIG_FLOOR * model.gamma0:.1e}"
        )
    channels = []
    for k in range(len(w) - 1, -1, -1):
        if w[k] > RATE_EPS * model.gamma0:
            coeffs = v[:, k].copy()
            coeffs /= np.linalg.norm(coeffs)
            channels.append(JumpChannel(rate=float(w[k]), coeffs=coeffs))
    return channels


def partial_trace_site(rho: DensityMatrix, i: int) -> DensityMatrix:
    """Trace out site ``i``; an n=1 input reduces to the 1x1 scalar trace."""
    n = rho.n_sites
    if not 1 <= i <= n:
        raise IndexError(f"site index {i} out of range 1..{n}")
    return DensityMatrix(n - 1, _ptrace_site(rho.matrix, i, n))


def purity(rho: DensityMatrix) -> float:
    """Tr(rho^2)."""
    return _purity(rho.matrix)


def negativity(rho: DensityMatrix, partition_size: int | None = None) -> float:
    """Sum of |negative eigenvalues| of the partial transpose over the first
    ``partition_size`` sites (default: first ceil(n/2) sites), which equals
    (trace norm - 1)/2 for a unit-trace state."""
    n = rho.n_sites
    if partition_size is None:
        partition_size = (n + 1) // 2
    return _negativity(rho.matrix, n, partition_size)


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """-sum p log p over the eigenvalues (natural log, 0 log 0 := 0)."""
    return _entropy(rho.matrix)
