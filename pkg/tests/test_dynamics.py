import numpy as np
import pytest

from subrad import analytic, dynamics, qops
from subrad.dicke import dark_state
from subrad.dynamics import (
    EvolutionConfig, average_trajectories, evolve_master, evolve_to_steady,
    jump_count_histogram, lindblad_rhs, mcwf_trajectory, obs_expect, obs_nexc,
    obs_psub,
)
from subrad.qops import CouplingModel, build_couplings

from conftest import basis_state, random_density


def single_emitter():
    return CouplingModel(1, 1.0, np.array([[1.0]]), np.array([[0.0]]))


def literal_rhs(mat, model, extra_h=None):
    """Direct double-sum evaluation, the independent oracle for the RHS."""
    n = model.n
    sms = [qops._embed(qops.SIGMA_MINUS, i, n) for i in range(1, n + 1)]
    sps = [s.conj().T for s in sms]
    h = np.zeros_like(mat)
    for l in range(n):
        for m in range(n):
            if l != m:
                h = h + model.omega[l, m] * (sps[l] @ sms[m])
    if extra_h is not None:
        h = h + extra_h
    out = -1j * (h @ mat - mat @ h)
    for l in range(n):
        for m in range(n):
            out = out + model.gamma[l, m] / 2 * (
                2 * sms[l] @ mat @ sps[m] - sps[m] @ sms[l] @ mat - mat @ sps[m] @ sms[l])
    return out


# ---------------------------------------------------------------------------
# master equation


def test_rhs_ground_state_stationary():
    model = build_couplings("pse", 3)
    g = basis_state(3, set())
    rho = np.outer(g, g.conj())
    assert np.abs(lindblad_rhs(rho, model)).max() < 1e-14


def test_rhs_single_emitter():
    rho = np.diag([1.0, 0.0]).astype(complex)
    out = lindblad_rhs(rho, single_emitter())
    assert np.abs(out - np.diag([-1.0, 1.0])).max() < 1e-14


def test_rhs_dark_pair_stationary():
    model = build_couplings("pse", 2)
    dark = (basis_state(2, {1}) - basis_state(2, {2})) / np.sqrt(2)
    rho = np.outer(dark, dark.conj())
    assert np.abs(lindblad_rhs(rho, model)).max() < 1e-13


def test_rhs_traceless_and_hermitian(rng):
    model = build_couplings("waveguide", 3, d_over_lambda0=0.2)
    for _ in range(5):
        rho = random_density(3, rng)
        out = lindblad_rhs(rho, model)
        assert abs(out.trace()) < 1e-12
        assert np.abs(out - out.conj().T).max() < 1e-12


def test_rhs_matches_literal_double_sum(rng):
    for d in (0.13, 0.34):
        model = build_couplings("waveguide", 4, d_over_lambda0=d)
        rho = random_density(4, rng)
        assert np.abs(lindblad_rhs(rho, model) - literal_rhs(rho, model)).max() < 1e-11


def test_evolve_master_zero_time_is_identity(rng):
    model = build_couplings("pse", 2)
    rho = random_density(2, rng)
    out = evolve_master(rho, model, 0.0)
    assert np.array_equal(out.matrix, rho)


def test_evolve_master_single_emitter_decay():
    model = single_emitter()
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    for t in (0.3, 1.0, 2.5):
        rho = evolve_master(rho0, model, t)
        assert abs(rho.matrix[0, 0].real - np.exp(-t)) < 1e-7


def test_evolve_master_pse_stays_in_bright_ladder():
    model = build_couplings("pse", 2)
    e = basis_state(2, {1, 2})
    rho0 = np.outer(e, e.conj())
    psub = obs_psub(2)
    for t in (0.5, 2.0, 8.0):
        rho = evolve_master(rho0, model, t)
        assert dynamics.evaluate_density(psub, rho.matrix, 2) < 1e-8


def test_evolve_master_invariants(rng):
    model = build_couplings("waveguide", 4, d_over_lambda0=0.1)
    rho0 = random_density(4, rng)
    rho, info = evolve_master(rho0, model, 20.0, return_info=True)
    assert abs(rho.matrix.trace().real - 1.0) < 1e-8
    assert np.abs(rho.matrix - rho.matrix.conj().T).max() < 1e-9
    assert np.linalg.eigvalsh(rho.matrix).min() > -1e-7
    assert info["raw_trace_drift"] / 20.0 < 1e-6  # raw drift per unit time


def test_evolve_master_with_drive_matches_literal(rng):
    model = build_couplings("waveguide", 2, d_over_lambda0=0.3)
    extra = 3.0 * qops._embed(qops.SIGMA_X, 1, 2)
    rho = random_density(2, rng)
    a = lindblad_rhs(rho, model, extra_hamiltonian=extra)
    b = literal_rhs(rho, model, extra_h=extra)
    assert np.abs(a - b).max() < 1e-12


def test_evolve_to_steady_reaches_ground():
    model = build_couplings("pse", 3)
    e = basis_state(3, {1, 2, 3})
    rho, t_end, converged = evolve_to_steady(np.outer(e, e.conj()), model)
    assert converged and t_end < 50.0
    assert abs(rho.matrix[-1, -1].real - 1.0) < 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        EvolutionConfig(rtol=-1e-8)
    with pytest.raises(ValueError):
        EvolutionConfig(t_horizon=0.0)


# ---------------------------------------------------------------------------
# trajectories


def test_mcwf_single_emitter_matches_exponential():
    model = single_emitter()
    psi0 = np.array([1.0, 0.0], dtype=complex)
    ts = np.linspace(0.0, 3.0, 7)
    obs = {"pe": obs_expect(np.diag([1.0, 0.0]).astype(complex))}
    n_traj = 2000
    ens = average_trajectories(psi0, model, obs, n_traj, 101,
                               t_final=3.0, sample_times=ts)
    exact = np.exp(-ts)
    sigma = np.sqrt(exact * (1 - exact) / n_traj)
    assert (np.abs(ens.mean["pe"] - exact) <= 3 * sigma + 1e-12).all()


def test_mcwf_pse_pair_always_reaches_ground():
    model = build_couplings("pse", 2)
    psi0 = basis_state(2, {1, 2})
    for seed in range(25):
        rec = mcwf_trajectory(psi0, model, None, 20.0, seed=seed)
        assert abs(rec.final_state.amplitudes[-1]) ** 2 > 1.0 - 1e-9
        assert rec.jump_count() == 2


def test_mcwf_trajectories_freeze_in_dark_state():
    # a sigma^z measurement at t_m = 0.25 freezes part of the ensemble at a
    # single excitation with unit purity
    n = 5
    model = build_couplings("pse", n)
    psi0 = basis_state(n, set(range(1, n + 1)))
    frozen = 0
    nexc_op = qops._excitation_number_mat(n)
    for seed in range(40):
        rec = mcwf_trajectory(psi0, model, [(0.25, 1, "z")], 25.0, seed=seed)
        psi = rec.final_state.amplitudes
        nexc = float(np.vdot(psi, nexc_op @ psi).real)
        if nexc > 0.5:
            frozen += 1
            assert abs(nexc - 1.0) < 1e-6
            overlap = abs(np.vdot(dark_state(n).amplitudes, psi)) ** 2
            assert overlap > 1.0 - 1e-6
    assert frozen > 0


def test_mcwf_determinism():
    model = build_couplings("waveguide", 3, d_over_lambda0=0.34)
    psi0 = basis_state(3, {1, 2, 3})
    kw = dict(schedule=[(0.25, 2, "x"), (0.75, 2, "x")], t_final=4.0, seed=99,
              sample_times=np.linspace(0, 4, 9),
              observables={"ne": obs_nexc(3)})
    a = mcwf_trajectory(psi0, model, kw["schedule"], kw["t_final"], seed=kw["seed"],
                        sample_times=kw["sample_times"], observables=kw["observables"])
    b = mcwf_trajectory(psi0, model, kw["schedule"], kw["t_final"], seed=kw["seed"],
                        sample_times=kw["sample_times"], observables=kw["observables"])
    assert a.jump_events == b.jump_events
    assert a.measurement_events == b.measurement_events
    assert np.array_equal(a.samples["ne"], b.samples["ne"])


def test_average_single_trajectory_is_that_trajectory():
    model = build_couplings("pse", 2)
    psi0 = basis_state(2, {1, 2})
    ts = np.linspace(0, 2, 5)
    obs = {"ne": obs_nexc(2)}
    ens = average_trajectories(psi0, model, obs, 1, 7, t_final=2.0, sample_times=ts)
    rec = mcwf_trajectory(psi0, model, None, 2.0, seed=7, sample_times=ts,
                          observables=obs)
    assert np.array_equal(ens.mean["ne"], rec.samples["ne"])


def test_average_workers_do_not_change_results():
    model = build_couplings("pse", 3)
    psi0 = basis_state(3, {1, 2, 3})
    ts = np.linspace(0, 1.5, 4)
    obs = {"ne": obs_nexc(3)}
    a = average_trajectories(psi0, model, obs, 24, 5, t_final=1.5,
                             sample_times=ts, workers=1)
    b = average_trajectories(psi0, model, obs, 24, 5, t_final=1.5,
                             sample_times=ts, workers=2)
    assert np.array_equal(a.mean["ne"], b.mean["ne"])


def test_measurement_at_time_zero_acts_first():
    model = build_couplings("pse", 2)
    psi0 = (basis_state(2, {1, 2}) + basis_state(2, set())) / np.sqrt(2)
    rec = mcwf_trajectory(psi0, model, [(0.0, 1, "z")], 0.0, seed=3)
    assert rec.measurement_events[0][0] == 0.0
    # outcome +1 projects onto |ee>, outcome -1 onto |gg>
    outcome = rec.measurement_events[0][3]
    target = basis_state(2, {1, 2}) if outcome == 1 else basis_state(2, set())
    assert abs(abs(np.vdot(target, rec.final_state.amplitudes)) - 1.0) < 1e-12


def test_jump_histogram_matches_waiting_distribution():
    n, t, n_traj = 4, 0.3, 1500
    model = build_couplings("pse", n)
    hist = jump_count_histogram(model, t, n_traj, 2024)
    pk = analytic.waiting_dist(n, t)
    sigma = np.sqrt(pk * (1 - pk) / n_traj)
    assert (np.abs(hist - pk) <= 3 * sigma + 1e-12).all()


def test_master_and_mcwf_agree_on_linear_observable():
    model = build_couplings("waveguide", 3, d_over_lambda0=0.25)
    psi0 = basis_state(3, {1, 2, 3})
    ts = np.array([0.5, 1.5, 3.0])
    obs = {"ne": obs_nexc(3)}
    n_traj = 1200
    ens = average_trajectories(psi0, model, obs, n_traj, 31, t_final=3.0,
                               sample_times=ts)
    rho0 = np.outer(psi0, psi0.conj())
    for k, t in enumerate(ts):
        rho = evolve_master(rho0, model, float(t))
        exact = dynamics.evaluate_density(obs["ne"], rho.matrix, 3)
        assert abs(ens.mean["ne"][k] - exact) <= 3 * ens.sem["ne"][k] + 1e-9
