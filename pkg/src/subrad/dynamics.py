"""Time evolution engines.

Deterministic integration of the collective-emission master equation
  d rho/dt = -i[H, rho] + sum_lm (Gamma_lm/2)(2 s_l rho s_m+ - s_m+ s_l rho - rho s_m+ s_l)
and its Monte-Carlo wavefunction (MCWF) unraveling with instantaneous
projective measurements.  The dissipator is evaluated in diagonal form,
sum_k gamma_k D[L_k], obtained from the eigenchannels of the decay matrix.

Trajectory stepping runs through :mod:`subrad.kernels`; density matrices are
stepped with the shared Dormand-Prince integrator, renormalizing the trace
once per accepted step while tracking the raw drift.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import qops
from ._rk import StiffnessError, dp45
from .dicke import _subradiant_projector_mat
from .kernels import STATUS_JUMP, advance_nonhermitian
from .qops import CouplingModel, DensityMatrix, StateVector, jump_channels

__all__ = [
    "EvolutionConfig", "TrajectoryRecord", "EnsembleResult", "Observable",
    "LindbladSystem", "lindblad_rhs", "evolve_master", "evolve_to_steady",
    "mcwf_trajectory", "average_trajectories", "jump_count_histogram",
    "obs_expect", "obs_psub", "obs_nexc", "obs_psub_rest", "obs_nexc_rest",
    "obs_purity_rest", "obs_negativity_rest", "evaluate_state", "evaluate_density",
    "StiffnessError",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EvolutionConfig:
    """Integrator controls; times in 1/gamma0."""

    dt_max: float = 1.0
    rtol: float = 1e-8
    atol: float = 1e-10
    t_horizon: float = 50.0
    steady_eps: float = 1e-8

    def __post_init__(self):
        for name in ("dt_max", "rtol", "atol", "t_horizon", "steady_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


DEFAULT_CONFIG = EvolutionConfig()


@dataclass
class TrajectoryRecord:
    """One MCWF realization: jump/measurement history plus sampled observables."""

    seed: int
    jump_events: list
    measurement_events: list
    sample_times: np.ndarray
    samples: dict
    final_state: StateVector

    def jump_count(self, t=None) -> int:
        if t is None:
            return len(self.jump_events)
        return sum(1 for tj, _ in self.jump_events if tj <= t)


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: dict
    sem: dict
    n_traj: int


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """Declarative observable, picklable for worker processes.

    kind 'expect' evaluates an operator expectation; the *_rest kinds act on
    the reduced state of all sites except ``site``.
    """

    kind: str
    site: int = 0
    matrix: np.ndarray | None = None


def obs_expect(matrix) -> Observable:
    return Observable("expect", matrix=np.ascontiguousarray(matrix, dtype=complex))


def obs_psub(n: int) -> Observable:
    """Population outside the bright (maximal-J) ladder of the full register."""
    return obs_expect(_subradiant_projector_mat(n))


def obs_nexc(n: int) -> Observable:
    return obs_expect(qops._excitation_number_mat(n))


def _embed_rest(op_rest, site, n):
    """Lift an operator on the n-1 sites complementary to ``site`` to n sites."""
    dl, dr = 2 ** (site - 1), 2 ** (n - site)
    op4 = np.asarray(op_rest, dtype=complex).reshape(dl, dr, dl, dr)
    full = np.einsum("abcd,st->asbctd", op4, np.eye(2, dtype=complex))
    return np.ascontiguousarray(full.reshape(2 ** n, 2 ** n))


def obs_psub_rest(n: int, site: int) -> Observable:
    """Subradiant population of the n-1 emitters complementary to ``site``."""
    return obs_expect(_embed_rest(_subradiant_projector_mat(n - 1), site, n))


def obs_nexc_rest(n: int, site: int) -> Observable:
    return obs_expect(_embed_rest(qops._excitation_number_mat(n - 1), site, n))


def obs_purity_rest(site: int) -> Observable:
    return Observable("purity_rest", site=site)


def obs_negativity_rest(site: int) -> Observable:
    return Observable("negativity_rest", site=site)


def evaluate_state(obs: Observable, psi, n: int) -> float:
    """Evaluate an observable on a normalized pure state (raw amplitudes)."""
    if obs.kind == "expect":
        return float(np.vdot(psi, obs.matrix @ psi).real)
    red = qops._reduced_from_state(psi, obs.site, n)
    if obs.kind == "purity_rest":
        return qops._purity(red)
    if obs.kind == "negativity_rest":
        return qops._negativity(red, n - 1, n // 2)
    raise ValueError(f"unknown observable kind {obs.kind!r}")


def evaluate_density(obs: Observable, mat, n: int) -> float:
    """Evaluate an observable on a density matrix (raw array)."""
    if obs.kind == "expect":
        return float(np.einsum("ij,ji->", obs.matrix, mat).real)
    red = qops._ptrace_site(mat, obs.site, n)
    if obs.kind == "purity_rest":
        return qops._purity(red)
    if obs.kind == "negativity_rest":
        return qops._negativity(red, n - 1, n // 2)
    raise ValueError(f"unknown observable kind {obs.kind!r}")


# ---------------------------------------------------------------------------
# dense Lindblad generator


class LindbladSystem:
    """Precomputed generator: effective Hamiltonian plus diagonal channels.

    ``channels`` is a list of (rate, L) with L the collective lowering
    operator of the channel; the non-Hermitian drift A = -iH - (1/2) sum_k
    rate_k L_k^dag L_k doubles as the MCWF stepping matrix.
    """

    def __init__(self, hamiltonian, channels, n_exc_op=None):
        dim = hamiltonian.shape[0]
        self.dim = dim
        self.hamiltonian = np.ascontiguousarray(hamiltonian, dtype=complex)
        self.channels = [(float(rate), np.ascontiguousarray(L, dtype=complex),
                          np.ascontiguousarray(L.conj().T))
                         for rate, L in channels]
        a = -1j * self.hamiltonian
        for rate, L, Ld in self.channels:
            a -= 0.5 * rate * (Ld @ L)
        self.a_eff = np.ascontiguousarray(a)
        self.a_eff_dag = np.ascontiguousarray(a.conj().T)
        self.n_exc_op = n_exc_op

    @classmethod
    def from_model(cls, model: CouplingModel, extra_hamiltonian=None) -> "LindbladSystem":
        n = model.n
        sms = qops._site_lowering_ops(n)
        dim = 2 ** n
        h = np.zeros((dim, dim), dtype=complex)
        for l in range(n):
            for m in range(n):
                if l != m and model.omega[l, m] != 0.0:
                    h += model.omega[l, m] * (sms[l].conj().T @ sms[m])
        if extra_hamiltonian is not None:
            h = h + extra_hamiltonian
        chans = []
        for ch in jump_channels(model):
            L = np.zeros((dim, dim), dtype=complex)
            for m in range(n):
                if ch.coeffs[m] != 0.0:
                    L += ch.coeffs[m] * sms[m]
            chans.append((ch.rate, L))
        return cls(h, chans, n_exc_op=qops._excitation_number_mat(n))

    def rhs(self, mat):
        out = self.a_eff @ mat + mat @ self.a_eff_dag
        for rate, L, Ld in self.channels:
            out += rate * (L @ mat @ Ld)
        return out

    def evolve(self, mat, t_span, cfg=DEFAULT_CONFIG, h0=None):
        """Propagate a density matrix over ``t_span`` time units.

        Returns (matrix, info dict); the trace is renormalized once per
        accepted step and the raw per-step drift accumulated in the info.
        """
        drift = [0.0]

        def renorm(y):
            tr = np.trace(y).real
            drift[0] += abs(tr - 1.0)
            y *= 1.0 / tr
            return y

        res = dp45(self.rhs, mat, 0.0, t_span, rtol=cfg.rtol, atol=cfg.atol,
                   h0=h0, dt_max=cfg.dt_max, post_step=renorm)
        info = {"h_next": res.h_next, "raw_trace_drift": drift[0],
                "n_accepted": res.n_accepted, "n_rejected": res.n_rejected}
        return res.y, info

    def evolve_to_steady(self, mat, cfg=DEFAULT_CONFIG, h0=None):
        """Propagate until |d<n_exc>/dt| < steady_eps or t_horizon is reached."""
        if self.n_exc_op is None:
            raise ValueError("steady-state detection needs an excitation operator")
        drift = [0.0]

        def renorm(y):
            tr = np.trace(y).real
            drift[0] += abs(tr - 1.0)
            y *= 1.0 / tr
            return y

        def settled(_t, _y, f):
            return abs(np.einsum("ij,ji->", self.n_exc_op, f).real) < cfg.steady_eps

        res = dp45(self.rhs, mat, 0.0, cfg.t_horizon, rtol=cfg.rtol, atol=cfg.atol,
                   h0=h0, dt_max=cfg.dt_max, post_step=renorm, monitor=settled)
        return res.y, res.t, res.stopped


# ---------------------------------------------------------------------------
# public master-equation interface


def lindblad_rhs(rho, model: CouplingModel, extra_hamiltonian=None):
    """Right-hand side of the master equation; returns a raw (traceless) array."""
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    sys = LindbladSystem.from_model(model, extra_hamiltonian)
    return sys.rhs(mat)


def evolve_master(rho0, model: CouplingModel, t: float, cfg: EvolutionConfig = DEFAULT_CONFIG,
                  extra_hamiltonian=None, return_info: bool = False):
    """Propagate a density matrix for ``t`` time units."""
    if t < 0:
        raise ValueError("t must be >= 0")
    mat0 = rho0.matrix if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    n = model.n
    sys = LindbladSystem.from_model(model, extra_hamiltonian)
    mat, info = sys.evolve(mat0, t, cfg)
    out = DensityMatrix(n, mat)
    return (out, info) if return_info else out


def evolve_to_steady(rho0, model: CouplingModel, cfg: EvolutionConfig = DEFAULT_CONFIG,
                     extra_hamiltonian=None):
    """Propagate until the excitation number settles; returns (rho, t, converged)."""
    mat0 = rho0.matrix if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    sys = LindbladSystem.from_model(model, extra_hamiltonian)
    mat, t_end, converged = sys.evolve_to_steady(mat0, cfg)
    return DensityMatrix(model.n, mat), t_end, converged


# ---------------------------------------------------------------------------
# MCWF trajectories


def _measurement_projectors(site, observable, n):
    if observable == "z":
        op = qops.SIGMA_Z
    elif observable == "x":
        op = qops.SIGMA_X
    else:
        raise ValueError(f"observable must be 'x' or 'z', got {observable!r}")
    p_plus = qops._embed((qops.ID2 + op) / 2.0, site, n)
    p_minus = qops._embed((qops.ID2 - op) / 2.0, site, n)
    return p_plus, p_minus


def _normalize_events(schedule, t_final):
    """Accept a schedule object (with .expand), an event list, or None."""
    if schedule is None:
        return []
    if hasattr(schedule, "expand"):
        events = schedule.expand(t_final)
    else:
        events = [(float(t), int(site), str(obs)) for t, site, obs in schedule]
    events = sorted(set(events))
    for t, _, _ in events:
        if t < 0:
            raise ValueError("measurement times must be >= 0")
    return [e for e in events if e[0] <= t_final]


def _traj_rng(base_seed, index):
    key = np.array([np.uint64(int(base_seed) & _MASK64),
                    np.uint64(int(index) & _MASK64)])
    return np.random.Generator(np.random.Philox(key=key))


def _run_trajectory(sys: LindbladSystem, n, psi0, events, t_final, sample_times,
                    observables, cfg, rng, proj_cache):
    A = sys.a_eff
    rates = np.array([c[0] for c in sys.channels])
    psi = np.array(psi0, dtype=complex, copy=True)
    t = 0.0
    r = rng.random()
    h = 0.0
    jumps = []
    meas_rec = []
    names = list(observables)
    samples = {name: [] for name in names}

    # boundary stream: measurements processed before samples at equal times
    sample_set = set(float(ts) for ts in sample_times)
    boundaries = sorted({e[0] for e in events} | sample_set | {float(t_final)})
    meas_by_time = {}
    for tm, site, obs in events:
        meas_by_time.setdefault(tm, []).append((site, obs))

    for tb in boundaries:
        while t < tb:
            status, t, psi, h = advance_nonhermitian(
                A, psi, t, tb, r, cfg.rtol, cfg.atol, h, 1e-12, cfg.dt_max)
            if status == STATUS_JUMP:
                branches = [L @ psi for _, L, _ in sys.channels]
                weights = np.array([rate * float(np.vdot(v, v).real)
                                    for (rate, _, _), v in zip(sys.channels, branches)])
                total = weights.sum()
                if total <= 0.0:  # numerically dark state, no jump possible
                    r = rng.random() * float(np.vdot(psi, psi).real)
                    continue
                u = rng.random() * total
                k = int(np.searchsorted(np.cumsum(weights), u))
                k = min(k, len(weights) - 1)
                psi = branches[k]
                psi /= np.linalg.norm(psi)
                jumps.append((t, k))
                r = rng.random()
        if tb in meas_by_time:
            psi /= np.linalg.norm(psi)
            for site, obs in meas_by_time[tb]:
                pp, pm = proj_cache[(site, obs)]
                branch_plus = pp @ psi
                p_plus = float(np.vdot(branch_plus, branch_plus).real)
                if rng.random() < p_plus:
                    psi, outcome = branch_plus, +1
                else:
                    psi, outcome = pm @ psi, -1
                nrm = np.linalg.norm(psi)
                if nrm < 1e-150:
                    raise ArithmeticError("projective measurement annihilated the state")
                psi /= nrm
                meas_rec.append((tb, site, obs, outcome))
            r = rng.random()
        if tb in sample_set:
            psi_n = psi / np.linalg.norm(psi)
            for name in names:
                samples[name].append(evaluate_state(observables[name], psi_n, n))

    psi /= np.linalg.norm(psi)
    return psi, jumps, meas_rec, {k: np.asarray(v) for k, v in samples.items()}


def mcwf_trajectory(psi0, model: CouplingModel, schedule, t_final: float,
                    cfg: EvolutionConfig = DEFAULT_CONFIG, seed: int = 0,
                    sample_times=None, observables=None,
                    extra_hamiltonian=None) -> TrajectoryRecord:
    """Run one MCWF trajectory.

    ``schedule`` is a measurement schedule object, a list of
    (time, site, observable) tuples, or None.  Observables are sampled on
    ``sample_times`` from the normalized state.  The (seed, config) pair
    fully determines the trajectory.
    """
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    psi0_arr = psi0.amplitudes if isinstance(psi0, StateVector) else np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0_arr) - 1.0) > 1e-10:
        raise ValueError("psi0 must be normalized")
    n = model.n
    sys = LindbladSystem.from_model(model, extra_hamiltonian)
    events = _normalize_events(schedule, t_final)
    sample_times = np.asarray([] if sample_times is None else sample_times, dtype=float)
    observables = observables or {}
    proj_cache = {(site, obs): _measurement_projectors(site, obs, n)
                  for _, site, obs in events}
    rng = _traj_rng(seed, 0)
    psi, jumps, meas, samples = _run_trajectory(
        sys, n, psi0_arr, events, t_final, sample_times, observables, cfg, rng, proj_cache)
    return TrajectoryRecord(seed=seed, jump_events=jumps, measurement_events=meas,
                            sample_times=sample_times, samples=samples,
                            final_state=StateVector(n, psi))


def _traj_batch(args):
    (model, extra_h, psi0_arr, events, t_final, sample_times, observables,
     cfg, base_seed, indices) = args
    n = model.n
    sys = LindbladSystem.from_model(model, extra_h)
    proj_cache = {(site, obs): _measurement_projectors(site, obs, n)
                  for _, site, obs in events}
    out = {name: np.empty((len(indices), len(sample_times))) for name in observables}
    counts = np.zeros(len(indices), dtype=np.int64)
    for row, idx in enumerate(indices):
        rng = _traj_rng(base_seed, idx)
        _, jumps, _, samples = _run_trajectory(
            sys, n, psi0_arr, events, t_final, sample_times, observables, cfg,
            rng, proj_cache)
        counts[row] = len(jumps)
        for name in observables:
            out[name][row] = samples[name]
    return indices, out, counts


def average_trajectories(psi0, model: CouplingModel, observables: dict, n_traj: int,
                         base_seed: int, *, t_final: float, sample_times,
                         schedule=None, cfg: EvolutionConfig = DEFAULT_CONFIG,
                         workers: int = 1, extra_hamiltonian=None) -> EnsembleResult:
    """Average observables over ``n_traj`` trajectories.

    Streams are keyed by (base_seed, trajectory index), so results do not
    depend on the worker count; the reduction is the index-ordered pairwise
    mean.  Nonlinear observables (purity, negativity of the reduced state)
    are evaluated per trajectory before averaging.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    psi0_arr = psi0.amplitudes if isinstance(psi0, StateVector) else np.asarray(psi0, dtype=complex)
    events = _normalize_events(schedule, t_final)
    sample_times = np.asarray(sample_times, dtype=float)
    indices = np.arange(n_traj)

    def arg(chunk):
        return (model, extra_hamiltonian, psi0_arr, events, t_final,
                sample_times, observables, cfg, base_seed, chunk)

    stacked = {name: np.empty((n_traj, len(sample_times))) for name in observables}
    if workers <= 1:
        got, out, _ = _traj_batch(arg(indices))
        for name in observables:
            stacked[name][got] = out[name]
    else:
        chunks = np.array_split(indices, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for got, out, _ in pool.map(_traj_batch, [arg(c) for c in chunks if len(c)]):
                for name in observables:
                    stacked[name][got] = out[name]

    mean = {k: v.mean(axis=0) for k, v in stacked.items()}
    if n_traj > 1:
        sem = {k: v.std(axis=0, ddof=1) / np.sqrt(n_traj) for k, v in stacked.items()}
    else:
        sem = {k: np.zeros_like(v[0]) for k, v in stacked.items()}
    return EnsembleResult(times=sample_times, mean=mean, sem=sem, n_traj=n_traj)


def jump_count_histogram(model: CouplingModel, t: float, n_traj: int, base_seed: int,
                         cfg: EvolutionConfig = DEFAULT_CONFIG, workers: int = 1):
    """Fraction of trajectories with k = 0..n jumps by time ``t`` (no measurements)."""
    n = model.n
    psi0 = np.zeros(2 ** n, dtype=complex)
    psi0[0] = 1.0
    indices = np.arange(n_traj)

    def arg(chunk):
        return (model, None, psi0, [], t, np.asarray([], dtype=float),
                {}, cfg, base_seed, chunk)

    counts = np.zeros(n_traj, dtype=np.int64)
    if workers <= 1:
        got, _, cts = _traj_batch(arg(indices))
        counts[got] = cts
    else:
        chunks = np.array_split(indices, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for got, _, cts in pool.map(_traj_batch, [arg(c) for c in chunks if len(c)]):
                counts[got] = cts
    hist = np.bincount(counts, minlength=n + 1).astype(float)
    return hist / n_traj
