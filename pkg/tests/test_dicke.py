import math

import numpy as np
import pytest

from subrad import dicke, qops
from subrad.dicke import (
    DickeIndex, bright_ladder, bright_projector, cg_split_coeffs, dark_state,
    degeneracy, half_chain_entropy_dark, j_spectrum, subradiant_projector,
)
from subrad.qops import DensityMatrix, collective_lowering, von_neumann_entropy

from conftest import basis_state


def test_dicke_index_validation():
    DickeIndex(3, 1)
    with pytest.raises(ValueError):
        DickeIndex(3, 2)  # parity
    with pytest.raises(ValueError):
        DickeIndex(1, 3)  # |M| > J
    with pytest.raises(ValueError):
        DickeIndex(5, 5).check_for(3)


def test_degeneracy_values():
    assert degeneracy(3, 1) == 2
    assert degeneracy(7, 5) == 6
    for n in (1, 2, 5, 8):
        assert degeneracy(n, n) == 1
    with pytest.raises(ValueError):
        degeneracy(4, 3)


def test_degeneracy_dimension_identity():
    for n in range(1, 13):
        total = sum((tj + 1) * degeneracy(n, tj) for tj in range(n % 2, n + 1, 2))
        assert total == 2 ** n


def test_bright_ladder_two_sites():
    states = bright_ladder(2)
    assert len(states) == 3
    assert np.allclose(states[0].amplitudes, basis_state(2, {1, 2}))
    sym = (basis_state(2, {1}) + basis_state(2, {2})) / np.sqrt(2)
    assert np.allclose(states[1].amplitudes, sym)
    assert np.allclose(states[2].amplitudes, basis_state(2, set()))


def test_bright_ladder_single_site():
    states = bright_ladder(1)
    assert np.allclose(states[0].amplitudes, [1, 0])
    assert np.allclose(states[1].amplitudes, [0, 1])


def test_bright_ladder_orthonormal():
    for n in (3, 5):
        states = bright_ladder(n)
        assert np.allclose(states[-1].amplitudes, basis_state(n, set()))
        gram = np.array([[abs(a.overlap(b)) for a in states] for b in states])
        assert np.abs(gram - np.eye(n + 1)).max() < 1e-12


def test_projectors_idempotent_and_traces():
    for n in (2, 4, 7):
        pb = bright_projector(n).matrix
        ps = subradiant_projector(n).matrix
        assert np.abs(pb @ pb - pb).max() < 1e-10
        assert np.abs(ps @ ps - ps).max() < 1e-10
        assert abs(pb.trace().real - (n + 1)) < 1e-9
        assert abs(ps.trace().real - (2 ** n - n - 1)) < 1e-9
    assert abs(subradiant_projector(7).matrix.trace().real - 120) < 1e-9


def test_subradiant_projector_two_sites_is_singlet():
    ps = subradiant_projector(2).matrix
    dark = (basis_state(2, {1}) - basis_state(2, {2})) / np.sqrt(2)
    assert np.abs(ps - np.outer(dark, dark.conj())).max() < 1e-10


def test_j_spectrum_sector_ranks():
    spec2 = j_spectrum(2)
    ranks2 = {s.two_j: int(round(s.projector.matrix.trace().real)) for s in spec2.sectors}
    assert ranks2 == {2: 3, 0: 1}
    spec3 = j_spectrum(3)
    ranks3 = {s.two_j: int(round(s.projector.matrix.trace().real)) for s in spec3.sectors}
    assert ranks3 == {3: 4, 1: 4}


def test_j_spectrum_rank_matches_degeneracy():
    for n in (4, 5):
        for s in j_spectrum(n).sectors:
            rank = int(round(s.projector.matrix.trace().real))
            assert rank == (s.two_j + 1) * degeneracy(n, s.two_j)


def test_j_spectrum_complete_and_orthogonal():
    for n in (2, 3, 4, 5, 6, 7, 8):
        spec = j_spectrum(n)
        total = sum(s.projector.matrix for s in spec.sectors)
        assert np.abs(total - np.eye(2 ** n)).max() < 1e-9
        for a in spec.sectors:
            for b in spec.sectors:
                if a.two_j != b.two_j:
                    assert np.abs(a.projector.matrix @ b.projector.matrix).max() < 1e-9


def test_bright_projector_equals_max_sector():
    for n in (2, 4, 6):
        pb = bright_projector(n).matrix
        pj = j_spectrum(n).projector(n).matrix
        assert np.abs(pb - pj).max() < 1e-9


def test_dark_state_two_sites():
    psi = dark_state(2).amplitudes
    singlet = (basis_state(2, {1}) - basis_state(2, {2})) / np.sqrt(2)
    phase = np.vdot(singlet, psi)
    assert abs(abs(phase) - 1.0) < 1e-12
    assert np.allclose(psi, phase * singlet)


def test_dark_state_annihilated():
    for n in range(2, 9):
        psi = dark_state(n).amplitudes
        assert np.linalg.norm(collective_lowering(n).matrix @ psi) < 1e-12


def test_dark_state_is_subradiant():
    for n in (2, 3, 5):
        psi = dark_state(n).amplitudes
        ps = subradiant_projector(n).matrix
        assert abs(np.vdot(psi, ps @ psi).real - 1.0) < 1e-10


def test_dark_state_in_adjacent_sector():
    for n in (3, 4, 6):
        psi = dark_state(n).amplitudes
        proj = j_spectrum(n).projector(n - 2).matrix
        assert abs(np.vdot(psi, proj @ psi).real - 1.0) < 1e-9


def test_dark_state_other_measured_site():
    for site in (1, 2, 3):
        psi = dark_state(3, measured_site=site).amplitudes
        assert np.linalg.norm(collective_lowering(3).matrix @ psi) < 1e-12
        # weight sqrt((n-1)/n) on |e> at the measured site
        ne = qops._embed(np.diag([1.0, 0.0]).astype(complex), site, 3)
        assert abs(np.vdot(psi, ne @ psi).real - 2 / 3) < 1e-12


def test_cg_split_coeffs_endpoints():
    assert cg_split_coeffs(5, 0) == (1.0, 0.0)
    a, b = cg_split_coeffs(2, 1)
    assert abs(a - 1 / math.sqrt(2)) < 1e-15 and abs(b - 1 / math.sqrt(2)) < 1e-15
    a, b = cg_split_coeffs(4, 2)
    assert abs(a ** 2 + b ** 2 - 1.0) < 1e-15


def test_cg_split_reconstruction():
    # the n-site bright state with k de-excitations splits over site 1 into
    # bright states of the remaining n-1 sites with k and k-1 de-excitations
    n = 4
    full = bright_ladder(n)
    rest = bright_ladder(n - 1)
    e1 = np.array([1.0, 0.0], dtype=complex)
    g1 = np.array([0.0, 1.0], dtype=complex)
    for k in range(1, n):
        a, b = cg_split_coeffs(n, k)
        recon = a * np.kron(e1, rest[k].amplitudes) + b * np.kron(g1, rest[k - 1].amplitudes)
        assert np.abs(full[k].amplitudes - recon).max() < 1e-10


def test_half_chain_entropy_closed_form():
    assert abs(half_chain_entropy_dark(2) - math.log(2)) < 1e-12
    a, b = 8 / 12, 4 / 12
    expect4 = -a * math.log(a) - b * math.log(b)
    assert abs(half_chain_entropy_dark(4) - expect4) < 1e-12
    assert abs(expect4 - 0.63651) < 1e-5
    # large-n limit
    limit = 2 * math.log(2) - 0.75 * math.log(3)
    assert abs(half_chain_entropy_dark(10 ** 6) - limit) < 1e-5
    assert abs(limit - 0.56234) < 1e-5


def test_half_chain_entropy_matches_equal_weight_state_oracle():
    # The closed form is the half-chain entropy of the equal-amplitude
    # superposition (|e>_1|G> - |g>_1|W>)/sqrt(2) spanning the same
    # single-excitation subspace as the dark state (they coincide at n=2).
    for n in (2, 4, 6):
        eg = basis_state(n, {1})
        w = sum(basis_state(n, {j}) for j in range(2, n + 1)) / math.sqrt(n - 1)
        psi = (eg - w) / math.sqrt(2)
        rho = np.outer(psi, psi.conj())
        red = qops._ptrace_keep_first(rho, n, n // 2)
        val = von_neumann_entropy(DensityMatrix(n // 2, red))
        assert abs(val - half_chain_entropy_dark(n)) < 1e-9


def test_half_chain_entropy_equals_true_dark_state_only_at_n2():
    # For n > 2 the state actually reached by frozen trajectories carries
    # less half-chain entanglement than the equal-amplitude superposition.
    psi = dark_state(2).amplitudes
    red = qops._ptrace_keep_first(np.outer(psi, psi.conj()), 2, 1)
    val = von_neumann_entropy(DensityMatrix(1, red))
    assert abs(val - half_chain_entropy_dark(2)) < 1e-9

    psi4 = dark_state(4).amplitudes
    red4 = qops._ptrace_keep_first(np.outer(psi4, psi4.conj()), 4, 2)
    val4 = von_neumann_entropy(DensityMatrix(2, red4))
    assert val4 < half_chain_entropy_dark(4) - 0.1
