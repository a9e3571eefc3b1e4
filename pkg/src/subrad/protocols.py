"""Measurement protocols for collective-emission arrays.

Implements the experiment procedures end to end: the single-measurement
preparation of subradiant population in a permutation-symmetric ensemble
(with both a reduced-basis and a full-Hilbert-space route), lifetime
estimation under one measurement, repeated measurements at a fixed rate,
the strong-drive comparison, and double measurements resolved by total-spin
sector.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import qops
from .dicke import j_spectrum, _bright_projector_mat
from .dynamics import (
    DEFAULT_CONFIG, EvolutionConfig, LindbladSystem, Observable,
    average_trajectories, evaluate_density, obs_nexc, obs_nexc_rest,
    obs_psub, obs_psub_rest, obs_purity_rest, obs_negativity_rest,
    _measurement_projectors, _traj_rng,
)
from .qops import CouplingModel, DensityMatrix, build_couplings

__all__ = [
    "MeasurementSchedule", "ProtocolResult", "SingleMeasurementResult",
    "LifetimeResult", "DoubleMeasurementResult", "BackendMismatchError",
    "apply_measurement_branches", "nonselective_measurement",
    "single_measurement_pse", "lifetime_t_sub", "repeated_measurement_run",
    "strong_drive_run", "pse_double_measurement",
]


class BackendMismatchError(RuntimeError):
    """Reduced and full backends disagree beyond tolerance."""


@dataclass(frozen=True)
class MeasurementSchedule:
    """Projective measurements of sigma^mu on one site, at discrete times or
    periodically at a fixed rate from ``t_in`` on."""

    site: int
    observable: str
    times: tuple | None = None
    t_in: float | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.observable not in ("x", "z"):
            raise ValueError("observable must be 'x' or 'z'")
        if self.site < 1:
            raise ValueError("site must be >= 1")
        discrete = self.times is not None
        periodic = self.t_in is not None or self.rate is not None
        if discrete == periodic:
            raise ValueError("specify exactly one of times or (t_in, rate)")
        if discrete:
            ts = tuple(float(t) for t in self.times)
            if any(t < 0 for t in ts) or any(b < a for a, b in zip(ts, ts[1:])):
                raise ValueError("times must be >= 0 and ascending")
            object.__setattr__(self, "times", ts)
        else:
            if self.t_in is None or self.rate is None:
                raise ValueError("periodic mode needs both t_in and rate")
            if self.t_in < 0 or self.rate <= 0:
                raise ValueError("t_in must be >= 0 and rate > 0")

    @classmethod
    def discrete(cls, site, observable, times):
        return cls(site=site, observable=observable, times=tuple(times))

    @classmethod
    def periodic(cls, site, observable, t_in, rate):
        return cls(site=site, observable=observable, t_in=float(t_in), rate=float(rate))

    def expand(self, t_final):
        """Sorted, deduplicated (time, site, observable) events up to t_final."""
        if self.times is not None:
            ts = [t for t in self.times if t <= t_final]
        else:
            count = int(math.floor((t_final - self.t_in) * self.rate + 1e-9)) + 1
            ts = (self.t_in + np.arange(max(count, 0)) / self.rate).tolist()
            ts = [t for t in ts if t <= t_final]
        return sorted({(float(t), self.site, self.observable) for t in ts})


@dataclass
class ProtocolResult:
    """Time series plus scalar summaries of one protocol run."""

    times: np.ndarray
    series: dict
    sem: dict | None
    summary: dict
    meta: dict

    def validate(self):
        n = self.meta.get("n")
        for name, vals in self.series.items():
            v = np.asarray(vals)
            if name.startswith(("psub", "purity")):
                if (v < -1e-9).any() or (v > 1 + 1e-9).any():
                    raise ValueError(f"series {name} leaves [0, 1]")
            if name.startswith("nexc") and n is not None:
                if (v < -1e-9).any() or (v > n + 1e-9).any():
                    raise ValueError(f"series {name} leaves [0, n]")
            if name.startswith("negativity") and (v < -1e-9).any():
                raise ValueError(f"series {name} is negative")
        return self


@dataclass
class SingleMeasurementResult:
    psub_ss: float
    branches: list
    backend: str
    detail: dict = field(default_factory=dict)


@dataclass
class LifetimeResult:
    t_sub: float
    t_sub_um: float
    ratio: float
    lower_bound: bool


@dataclass
class DoubleMeasurementResult:
    psub_total: float
    sector_populations: dict
    psub_single: float
    normalized: float


# ---------------------------------------------------------------------------
# measurement superoperators


def apply_measurement_branches(rho: DensityMatrix, site: int, observable: str):
    """Born-rule branches [(p_+, rho_+), (p_-, rho_-)]; branches with
    probability below 1e-14 are dropped."""
    n = rho.n_sites
    pp, pm = _measurement_projectors(site, observable, n)
    out = []
    for proj in (pp, pm):
        branch = proj @ rho.matrix @ proj
        p = float(branch.trace().real)
        if p > 1e-14:
            out.append((p, DensityMatrix(n, branch / p)))
    return out


def _nonselective_mat(mat, pp, pm):
    return pp @ mat @ pp + pm @ mat @ pm


def nonselective_measurement(rho: DensityMatrix, site: int, observable: str) -> DensityMatrix:
    """The outcome-averaged (nonselective) post-measurement state."""
    pp, pm = _measurement_projectors(site, observable, rho.n_sites)
    return DensityMatrix(rho.n_sites, _nonselective_mat(rho.matrix, pp, pm))


# ---------------------------------------------------------------------------
# single measurement on a permutation-symmetric ensemble


def _bright_site_system(n):
    """Measured-site (x) bright-ladder basis of the n-1 partners: dimension 2n.

    Ordering: index = s * n + m with s in {0:|e>, 1:|g>} and m the number of
    de-excitations of the (n-1)-emitter bright ladder (m = 0 fully excited).
    The permutation-symmetric evolution from the fully excited state closes
    on this subspace.
    """
    j = (n - 1) / 2.0
    s_rest = np.zeros((n, n), dtype=complex)
    for m in range(n - 1):
        big_m = j - m
        s_rest[m + 1, m] = math.sqrt(j * (j + 1) - big_m * (big_m - 1))
    lower = np.kron(qops.SIGMA_MINUS, np.eye(n)) + np.kron(qops.ID2, s_rest)
    nexc = np.zeros(2 * n)
    for s in (0, 1):
        for m in range(n):
            nexc[s * n + m] = (1 - s) + (n - 1 - m)
    sys = LindbladSystem(np.zeros((2 * n, 2 * n), dtype=complex),
                         [(1.0, lower)], n_exc_op=np.diag(nexc).astype(complex))
    return sys


def _site_factor_projectors(n, observable):
    op = qops.SIGMA_Z if observable == "z" else qops.SIGMA_X
    pp = np.kron((qops.ID2 + op) / 2.0, np.eye(n))
    pm = np.kron((qops.ID2 - op) / 2.0, np.eye(n))
    return np.ascontiguousarray(pp, dtype=complex), np.ascontiguousarray(pm, dtype=complex)


def _branch_steady_psub(sys, rho_tm, projectors, ground_index, cfg):
    branches = []
    total = 0.0
    for sign, proj in zip((+1, -1), projectors):
        branch = proj @ rho_tm @ proj
        p = float(branch.trace().real)
        if p <= 1e-14:
            continue
        branch = branch / p
        rho_ss, _, _ = sys.evolve_to_steady(branch, cfg)
        psub = 1.0 - float(rho_ss[ground_index, ground_index].real)
        branches.append((sign, p, psub))
        total += p * psub
    return total, branches


def _single_measurement_reduced(n, observable, t_m, cfg):
    sys = _bright_site_system(n)
    rho0 = np.zeros((2 * n, 2 * n), dtype=complex)
    rho0[0, 0] = 1.0
    rho_tm, _ = sys.evolve(rho0, t_m, cfg)
    return _branch_steady_psub(sys, rho_tm, _site_factor_projectors(n, observable),
                               2 * n - 1, cfg)


def _single_measurement_full(n, observable, t_m, cfg, site=1):
    model = build_couplings("pse", n)
    sys = LindbladSystem.from_model(model)
    dim = 2 ** n
    rho0 = np.zeros((dim, dim), dtype=complex)
    rho0[0, 0] = 1.0
    rho_tm, _ = sys.evolve(rho0, t_m, cfg)
    return _branch_steady_psub(sys, rho_tm, _measurement_projectors(site, observable, n),
                               dim - 1, cfg)


def single_measurement_pse(n: int, observable: str, t_m: float,
                           backend: str = "reduced",
                           cfg: EvolutionConfig = DEFAULT_CONFIG) -> SingleMeasurementResult:
    """Steady-state subradiant population after one sigma^mu measurement at
    ``t_m`` on a permutation-symmetric ensemble.

    backend 'reduced' evolves the closed 2n-dimensional measured-site x
    bright-ladder subspace; 'full' runs the 2^n master equation; 'both' runs
    the two and raises :class:`BackendMismatchError` if they differ by more
    than 1e-6.
    """
    if n < 2:
        raise ValueError("single_measurement_pse requires n >= 2")
    if t_m < 0:
        raise ValueError("t_m must be >= 0")
    if backend not in ("reduced", "full", "both"):
        raise ValueError(f"unknown backend {backend!r}")
    detail = {}
    if backend in ("reduced", "both"):
        total_r, branches_r = _single_measurement_reduced(n, observable, t_m, cfg)
        detail["reduced"] = total_r
    if backend in ("full", "both"):
        total_f, branches_f = _single_measurement_full(n, observable, t_m, cfg)
        detail["full"] = total_f
    if backend == "both":
        if abs(total_r - total_f) > 1e-6:
            raise BackendMismatchError(
                f"reduced ({total_r:.9f}) vs full ({total_f:.9f}) backend "
                f"disagree beyond 1e-6 at n={n}, mu={observable}, t_m={t_m}")
        return SingleMeasurementResult(total_r, branches_r, "both", detail)
    if backend == "reduced":
        return SingleMeasurementResult(total_r, branches_r, "reduced", detail)
    return SingleMeasurementResult(total_f, branches_f, "full", detail)


# ---------------------------------------------------------------------------
# lifetime under a single measurement


def _first_threshold_crossing(sys, mat, target, cfg, t_offset, time_tol=1e-4):
    """First time <n_exc>(t) drops to ``target``, located by bisection inside
    the bracketing accepted step.  Returns (t_cross or None, mat_end, h)."""

    def nexc_of(y):
        return float(np.einsum("ij,ji->", sys.n_exc_op, y).real)

    from ._rk import dp45

    drift = [0.0]

    def renorm(y):
        tr = np.trace(y).real
        drift[0] += abs(tr - 1.0)
        y *= 1.0 / tr
        return y

    def crossed(_t, y, _f):
        return nexc_of(y) <= target

    span = cfg.t_horizon - t_offset
    res = dp45(sys.rhs, mat, 0.0, span, rtol=cfg.rtol, atol=cfg.atol,
               dt_max=cfg.dt_max, post_step=renorm, monitor=crossed)
    if not res.stopped:
        return None, res.y, res.h_next
    lo, hi = res.t_prev, res.t
    y_lo = res.y_prev
    while hi - lo > time_tol:
        mid = 0.5 * (lo + hi)
        seg = dp45(sys.rhs, y_lo, 0.0, mid - lo, rtol=cfg.rtol, atol=cfg.atol,
                   dt_max=cfg.dt_max, post_step=renorm)
        if nexc_of(seg.y) <= target:
            hi = mid
        else:
            lo, y_lo = mid, seg.y
    return t_offset + 0.5 * (lo + hi), res.y, res.h_next


def lifetime_t_sub(model: CouplingModel, observable: str, t_m: float | None,
                   site: int = 1, cfg: EvolutionConfig = DEFAULT_CONFIG,
                   threshold_fraction: float = 0.05) -> LifetimeResult:
    """Time by which all but ``threshold_fraction`` of the initial excitation
    is emitted, with and without a nonselective measurement at ``t_m``."""
    n = model.n
    target = threshold_fraction * n
    sys = LindbladSystem.from_model(model)
    dim = 2 ** n
    rho0 = np.zeros((dim, dim), dtype=complex)
    rho0[0, 0] = 1.0

    def measured_run():
        if t_m is None:
            return _first_threshold_crossing(sys, rho0, target, cfg, 0.0)[0]
        rho_tm, info = sys.evolve(rho0, t_m, cfg)
        if float(np.einsum("ij,ji->", sys.n_exc_op, rho_tm).real) <= target:
            # already emptied before the measurement; find the crossing in [0, t_m]
            cfg_pre = EvolutionConfig(cfg.dt_max, cfg.rtol, cfg.atol, t_m, cfg.steady_eps)
            return _first_threshold_crossing(sys, rho0, target, cfg_pre, 0.0)[0]
        pp, pm = _measurement_projectors(site, observable, n)
        rho_m = _nonselective_mat(rho_tm, pp, pm)
        return _first_threshold_crossing(sys, rho_m, target, cfg, t_m)[0]

    t_meas = measured_run()
    t_um = _first_threshold_crossing(sys, rho0, target, cfg, 0.0)[0]
    lower_bound = t_meas is None or t_um is None
    t_meas = cfg.t_horizon if t_meas is None else t_meas
    t_um = cfg.t_horizon if t_um is None else t_um
    return LifetimeResult(t_sub=t_meas, t_sub_um=t_um, ratio=t_meas / t_um,
                          lower_bound=lower_bound)


# ---------------------------------------------------------------------------
# repeated measurements


def default_observables(n, site):
    return {
        "psub_rest": obs_psub_rest(n, site),
        "nexc_rest": obs_nexc_rest(n, site),
        "nexc": obs_nexc(n),
    }


def _density_walk(sys, n, rho0, events, sample_times, observables, cfg,
                  proj_cache, rng=None):
    """Shared walker for the density-matrix engines; draws outcomes from
    ``rng`` when given, otherwise applies the nonselective map."""
    sample_set = set(float(t) for t in sample_times)
    boundaries = sorted({e[0] for e in events} | sample_set)
    meas_by_time = {}
    for tm, site, obs in events:
        meas_by_time.setdefault(tm, []).append((site, obs))

    mat = rho0.copy()
    t = 0.0
    h = None
    out = {name: [] for name in observables}
    for tb in boundaries:
        if tb > t:
            mat, info = sys.evolve(mat, tb - t, cfg, h0=h)
            h = info["h_next"]
            t = tb
        if tb in meas_by_time:
            for site, obs in meas_by_time[tb]:
                pp, pm = proj_cache[(site, obs)]
                if rng is None:
                    mat = _nonselective_mat(mat, pp, pm)
                else:
                    branch = pp @ mat @ pp
                    p_plus = float(branch.trace().real)
                    if rng.random() < p_plus:
                        mat = branch / p_plus
                    else:
                        branch = pm @ mat @ pm
                        mat = branch / float(branch.trace().real)
        if tb in sample_set:
            for name, ob in observables.items():
                out[name].append(evaluate_density(ob, mat, n))
    return {k: np.asarray(v) for k, v in out.items()}


def _density_sample_batch(args):
    (model, rho0, events, sample_times, observables, cfg, base_seed, indices) = args
    sys = LindbladSystem.from_model(model)
    n = model.n
    proj_cache = {(site, obs): _measurement_projectors(site, obs, n)
                  for _, site, obs in events}
    out = {name: np.empty((len(indices), len(sample_times))) for name in observables}
    for row, idx in enumerate(indices):
        rng = _traj_rng(base_seed, idx)
        res = _density_walk(sys, n, rho0, events, sample_times, observables,
                            cfg, proj_cache, rng=rng)
        for name in observables:
            out[name][row] = res[name]
    return indices, out


def repeated_measurement_run(model: CouplingModel, schedule: MeasurementSchedule,
                             engine: str, n_samples: int, t_final: float,
                             observables: dict | None = None,
                             cfg: EvolutionConfig = DEFAULT_CONFIG,
                             base_seed: int = 0, sample_times=None,
                             workers: int = 1) -> ProtocolResult:
    """Repeated local measurements on one emitter of a decaying array.

    Engines: ``density_nonselective`` applies the outcome-averaged projection
    map deterministically (exact for linear observables);
    ``density_sampled`` draws outcomes on the full density matrix over
    ``n_samples`` realizations; ``mcwf`` samples jumps and outcomes over
    ``n_samples`` trajectories.
    """
    if engine not in ("density_nonselective", "density_sampled", "mcwf"):
        raise ValueError(f"unknown engine {engine!r}")
    n = model.n
    site = schedule.site
    if observables is None:
        observables = default_observables(n, site)
    if sample_times is None:
        sample_times = np.linspace(0.0, t_final, 201)
    sample_times = np.asarray(sample_times, dtype=float)
    events = schedule.expand(t_final)
    meta = {"n": n, "geometry": model.geometry, "d_over_lambda0": model.d_over_lambda0,
            "site": site, "observable": schedule.observable, "engine": engine,
            "base_seed": base_seed, "n_samples": n_samples, "t_final": t_final}

    if engine == "density_nonselective":
        sys = LindbladSystem.from_model(model)
        dim = 2 ** n
        rho0 = np.zeros((dim, dim), dtype=complex)
        rho0[0, 0] = 1.0
        proj_cache = {(s, o): _measurement_projectors(s, o, n) for _, s, o in events}
        series = _density_walk(sys, n, rho0, events, sample_times, observables,
                               cfg, proj_cache)
        sem = None
    elif engine == "density_sampled":
        dim = 2 ** n
        rho0 = np.zeros((dim, dim), dtype=complex)
        rho0[0, 0] = 1.0
        indices = np.arange(n_samples)
        stacked = {name: np.empty((n_samples, len(sample_times)))
                   for name in observables}

        def arg(chunk):
            return (model, rho0, events, sample_times, observables, cfg,
                    base_seed, chunk)

        if workers <= 1:
            got, out = _density_sample_batch(arg(indices))
            for name in observables:
                stacked[name][got] = out[name]
        else:
            chunks = [c for c in np.array_split(indices, workers) if len(c)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for got, out in pool.map(_density_sample_batch, [arg(c) for c in chunks]):
                    for name in observables:
                        stacked[name][got] = out[name]
        series = {k: v.mean(axis=0) for k, v in stacked.items()}
        sem = {k: v.std(axis=0, ddof=1) / np.sqrt(n_samples)
               for k, v in stacked.items()} if n_samples > 1 else None
    else:
        dim = 2 ** n
        psi0 = np.zeros(dim, dtype=complex)
        psi0[0] = 1.0
        ens = average_trajectories(psi0, model, observables, n_samples, base_seed,
                                   t_final=t_final, sample_times=sample_times,
                                   schedule=schedule, cfg=cfg, workers=workers)
        series, sem = ens.mean, ens.sem

    summary = {name + "_final": float(np.asarray(vals)[-1])
               for name, vals in series.items()}
    return ProtocolResult(times=sample_times, series=series, sem=sem,
                          summary=summary, meta=meta).validate()


def strong_drive_run(model: CouplingModel, site: int, rabi: float, t_final: float,
                     n_traj: int, observables: dict | None = None,
                     cfg: EvolutionConfig = DEFAULT_CONFIG, base_seed: int = 0,
                     sample_times=None, workers: int = 1) -> ProtocolResult:
    """Continuous coherent drive ``rabi * sigma^x`` on one emitter, MCWF-sampled;
    the drive term enters the Hamiltonian with exactly that coefficient."""
    if rabi < 0:
        raise ValueError("rabi must be >= 0")
    n = model.n
    if observables is None:
        observables = default_observables(n, site)
    if sample_times is None:
        sample_times = np.linspace(0.0, t_final, 201)
    sample_times = np.asarray(sample_times, dtype=float)
    extra_h = rabi * qops._embed(qops.SIGMA_X, site, n)
    psi0 = np.zeros(2 ** n, dtype=complex)
    psi0[0] = 1.0
    ens = average_trajectories(psi0, model, observables, n_traj, base_seed,
                               t_final=t_final, sample_times=sample_times,
                               schedule=None, cfg=cfg, workers=workers,
                               extra_hamiltonian=extra_h)
    meta = {"n": n, "geometry": model.geometry, "d_over_lambda0": model.d_over_lambda0,
            "site": site, "rabi": rabi, "engine": "mcwf", "base_seed": base_seed,
            "n_samples": n_traj, "t_final": t_final}
    summary = {name + "_final": float(vals[-1]) for name, vals in ens.mean.items()}
    return ProtocolResult(times=sample_times, series=ens.mean, sem=ens.sem,
                          summary=summary, meta=meta).validate()


# ---------------------------------------------------------------------------
# double measurements on a permutation-symmetric ensemble


def pse_double_measurement(n: int, observable: str, t_m: float, tau: float,
                           second_site: str = "same",
                           cfg: EvolutionConfig = DEFAULT_CONFIG) -> DoubleMeasurementResult:
    """Two nonselective measurements at t_m and t_m + tau on the same or on
    different emitters, with the steady-state population resolved per
    total-spin sector."""
    if second_site not in ("same", "different"):
        raise ValueError("second_site must be 'same' or 'different'")
    if second_site == "different" and n < 2:
        raise ValueError("different-site measurement needs n >= 2")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    model = build_couplings("pse", n)
    sys = LindbladSystem.from_model(model)
    dim = 2 ** n
    rho0 = np.zeros((dim, dim), dtype=complex)
    rho0[0, 0] = 1.0
    pp1, pm1 = _measurement_projectors(1, observable, n)
    site2 = 1 if second_site == "same" else 2
    pp2, pm2 = _measurement_projectors(site2, observable, n)

    mat, _ = sys.evolve(rho0, t_m, cfg)
    mat = _nonselective_mat(mat, pp1, pm1)
    if tau > 0:
        mat, _ = sys.evolve(mat, tau, cfg)
    mat = _nonselective_mat(mat, pp2, pm2)
    mat, _, _ = sys.evolve_to_steady(mat, cfg)

    sectors = j_spectrum(n).populations(mat)
    bright = float(np.einsum("ij,ji->", _bright_projector_mat(n), mat).real)
    psub_total = 1.0 - bright

    single = single_measurement_pse(n, observable, t_m, backend="full", cfg=cfg)
    normalized = psub_total / single.psub_ss if single.psub_ss > 1e-12 else float("nan")
    return DoubleMeasurementResult(psub_total=psub_total, sector_populations=sectors,
                                   psub_single=single.psub_ss, normalized=normalized)
