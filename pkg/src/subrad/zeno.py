"""Effective evolution of the unmeasured emitters in the rapid-measurement
(Zeno) limit.

Infinitely frequent sigma^x measurements on site i freeze that emitter into
the measurement eigenspaces; the remaining n-1 emitters evolve through the
conditional pair (chi_+, chi_-) as

    d chi_pm / dt = -i [ +/- H', chi_pm ] + L_(n-1)[chi_pm]
                    - (gamma0/4) (chi_pm - chi_mp)

where L_(n-1) is the collective-emission generator of the reduced array and
H' = sum_{l != i} [ (Omega_il / 2) sigma_l^x + (Gamma_il / 4) sigma_l^y ]
acts as an inhomogeneous local drive.  Measuring sigma^z instead decouples
the measured emitter: chi_e feeds chi_g at rate gamma0 and no drive appears,
so no subradiant population can build up.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import qops
from ._rk import dp45
from .dicke import _subradiant_projector_mat
from .dynamics import DEFAULT_CONFIG, EvolutionConfig, LindbladSystem, evolve_master
from .qops import CouplingModel, build_couplings

__all__ = [
    "ZenoState", "ZenoGenerator", "ZenoSweep", "DegenerateSteadyStateError",
    "build_zeno_generator", "evolve_zeno", "zeno_initial_state",
    "zeno_psub_series", "zeno_steady_psub", "zeno_sweep",
]

LONGTIME_HORIZON = 600.0
STEADY_DERIVATIVE_EPS = 1e-9


class DegenerateSteadyStateError(RuntimeError):
    """The vectorized generator has a null space of dimension > 1."""


@dataclass(frozen=True)
class ZenoState:
    """Conditional pair of sub-normalized states on the unmeasured emitters."""

    chi_plus: np.ndarray
    chi_minus: np.ndarray

    def __post_init__(self):
        cp = np.ascontiguousarray(self.chi_plus, dtype=complex)
        cm = np.ascontiguousarray(self.chi_minus, dtype=complex)
        if cp.shape != cm.shape or cp.ndim != 2 or cp.shape[0] != cp.shape[1]:
            raise ValueError("chi_plus and chi_minus must be equal square matrices")
        for name, c in (("chi_plus", cp), ("chi_minus", cm)):
            if np.abs(c - c.conj().T).max() > 1e-9:
                raise ValueError(f"{name} is not Hermitian within 1e-9")
            if np.linalg.eigvalsh(c).min() < -1e-7:
                raise ValueError(f"{name} has an eigenvalue below -1e-7")
        total = (cp.trace() + cm.trace()).real
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"total trace {total} deviates from 1 beyond 1e-8")
        object.__setattr__(self, "chi_plus", cp)
        object.__setattr__(self, "chi_minus", cm)

    @property
    def total(self):
        return self.chi_plus + self.chi_minus

    def stacked(self):
        return np.stack([self.chi_plus, self.chi_minus])


class ZenoGenerator:
    """Generator of the conditional-pair evolution for one measured site."""

    def __init__(self, model: CouplingModel, site: int, observable: str = "x"):
        if not 1 <= site <= model.n:
            raise IndexError("measured site out of range")
        if observable not in ("x", "z"):
            raise ValueError("observable must be 'x' or 'z'")
        self.model = model
        self.site = site
        self.observable = observable
        self.gamma0 = model.gamma0
        self.reduced_model = model.drop_site(site)
        self.system = LindbladSystem.from_model(self.reduced_model)
        self.dim = self.system.dim

        m = model.n - 1
        h = np.zeros((self.dim, self.dim), dtype=complex)
        if observable == "x":
            rest = [l for l in range(1, model.n + 1) if l != site]
            for pos, l in enumerate(rest, start=1):
                w = model.omega[site - 1, l - 1]
                g = model.gamma[site - 1, l - 1]
                if w != 0.0:
                    h += (w / 2.0) * qops._embed(qops.SIGMA_X, pos, m)
                if g != 0.0:
                    h += (g / 4.0) * qops._embed(qops.SIGMA_Y, pos, m)
        self.h_prime = h
        self.psub_rest = _subradiant_projector_mat(m)

    def rhs(self, y):
        cp, cm = y[0], y[1]
        out = np.empty_like(y)
        if self.observable == "x":
            mix = 0.25 * self.gamma0
            hp = self.h_prime
            out[0] = (self.system.rhs(cp) - 1j * (hp @ cp - cp @ hp)
                      - mix * (cp - cm))
            out[1] = (self.system.rhs(cm) + 1j * (hp @ cm - cm @ hp)
                      - mix * (cm - cp))
        else:
            # sigma^z freezing: chi_e drains into chi_g at gamma0, no drive
            out[0] = self.system.rhs(cp) - self.gamma0 * cp
            out[1] = self.system.rhs(cm) + self.gamma0 * cp
        return out

    def flipped(self) -> "ZenoGenerator":
        """Same generator with H' -> -H'; swapping the pair components of a
        solution of one gives a solution of the other."""
        g = ZenoGenerator.__new__(ZenoGenerator)
        g.__dict__.update(self.__dict__)
        g.h_prime = -self.h_prime
        return g

    def psub_of(self, y) -> float:
        return float(np.einsum("ij,ji->", self.psub_rest, y[0] + y[1]).real)

    def superoperator(self):
        """Dense matrix of the pair generator acting on stacked row-major vecs."""
        d = self.dim
        eye = np.eye(d, dtype=complex)
        a = self.system.a_eff
        s_l = np.kron(a, eye) + np.kron(eye, self.system.a_eff_dag.T)
        for rate, L, _ in self.system.channels:
            s_l += rate * np.kron(L, L.conj())
        block = np.zeros((2 * d * d, 2 * d * d), dtype=complex)
        if self.observable == "x":
            mix = 0.25 * self.gamma0
            comm = np.kron(self.h_prime, eye) - np.kron(eye, self.h_prime.T)
            block[: d * d, : d * d] = s_l - 1j * comm - mix * np.eye(d * d)
            block[: d * d, d * d:] = mix * np.eye(d * d)
            block[d * d:, d * d:] = s_l + 1j * comm - mix * np.eye(d * d)
            block[d * d:, : d * d] = mix * np.eye(d * d)
        else:
            block[: d * d, : d * d] = s_l - self.gamma0 * np.eye(d * d)
            block[d * d:, : d * d] = self.gamma0 * np.eye(d * d)
            block[d * d:, d * d:] = s_l
        return block


def build_zeno_generator(model: CouplingModel, site: int,
                         observable: str = "x") -> ZenoGenerator:
    """Generator of the rapid-measurement limit for measurements on ``site``."""
    if model.n < 2:
        raise ValueError("build_zeno_generator requires n >= 2")
    return ZenoGenerator(model, site, observable)


def _evolve_pair(gen: ZenoGenerator, y0, t, cfg: EvolutionConfig, h0=None,
                 monitor=None):
    drift = [0.0]

    def renorm(y):
        tr = (np.trace(y[0]) + np.trace(y[1])).real
        drift[0] += abs(tr - 1.0)
        y *= 1.0 / tr
        return y

    res = dp45(gen.rhs, y0, 0.0, t, rtol=cfg.rtol, atol=cfg.atol, h0=h0,
               dt_max=cfg.dt_max, post_step=renorm, monitor=monitor)
    return res


def evolve_zeno(state: ZenoState, gen: ZenoGenerator, t: float,
                cfg: EvolutionConfig = DEFAULT_CONFIG) -> ZenoState:
    """Propagate the conditional pair for ``t`` time units."""
    if t < 0:
        raise ValueError("t must be >= 0")
    res = _evolve_pair(gen, state.stacked(), t, cfg)
    return ZenoState(res.y[0], res.y[1])


def zeno_initial_state(model: CouplingModel, site: int, t_in: float,
                       cfg: EvolutionConfig = DEFAULT_CONFIG) -> ZenoState:
    """Conditional pair extracted from the full state at ``t_in``: evolve the
    fully excited array, project the measured site onto the sigma^x basis."""
    if t_in < 0:
        raise ValueError("t_in must be >= 0")
    n = model.n
    dim = 2 ** n
    rho0 = np.zeros((dim, dim), dtype=complex)
    rho0[0, 0] = 1.0
    rho = evolve_master(rho0, model, t_in, cfg).matrix if t_in > 0 else rho0
    dl, dr = 2 ** (site - 1), 2 ** (n - site)
    r6 = rho.reshape(dl, 2, dr, dl, 2, dr)
    plus = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)
    minus = np.array([1.0, -1.0], dtype=complex) / np.sqrt(2.0)
    chis = []
    for v in (plus, minus):
        chi = np.einsum("s,asbctd,t->abcd", v.conj(), r6, v)
        chis.append(np.ascontiguousarray(chi.reshape(dl * dr, dl * dr)))
    return ZenoState(chis[0], chis[1])


def zeno_psub_series(state: ZenoState, gen: ZenoGenerator, durations,
                     cfg: EvolutionConfig = DEFAULT_CONFIG):
    """Subradiant population of the unmeasured emitters after each duration
    (ascending, measured from the state's own time origin)."""
    durations = np.asarray(durations, dtype=float)
    if (np.diff(durations) < 0).any() or (durations < 0).any():
        raise ValueError("durations must be ascending and >= 0")
    y = state.stacked()
    out = np.empty(len(durations))
    t_now = 0.0
    h = None
    for k, tb in enumerate(durations):
        if tb > t_now:
            res = _evolve_pair(gen, y, tb - t_now, cfg, h0=h)
            y, h = res.y, res.h_next
            t_now = tb
        out[k] = gen.psub_of(y)
    return out


def _default_pair_init(dim):
    y = np.zeros((2, dim, dim), dtype=complex)
    y[0, 0, 0] = 0.5
    y[1, 0, 0] = 0.5
    return y


def _steady_longtime(gen: ZenoGenerator, cfg: EvolutionConfig, y0=None):
    y = _default_pair_init(gen.dim) if y0 is None else np.array(y0, copy=True)
    streak = [0]

    def settled(_t, _y, f):
        # a transient extremum of P_sub(t) also has a tiny derivative, so
        # require either a small full residual or a persistent streak
        dpsub = abs(np.einsum("ij,ji->", gen.psub_rest, f[0] + f[1]).real)
        if dpsub >= STEADY_DERIVATIVE_EPS:
            streak[0] = 0
            return False
        streak[0] += 1
        return streak[0] >= 3 or float(np.abs(f).max()) < 1e-6

    relaxed_cfg = EvolutionConfig(dt_max=cfg.dt_max, rtol=min(cfg.rtol, 1e-8),
                                  atol=cfg.atol, t_horizon=cfg.t_horizon,
                                  steady_eps=cfg.steady_eps)
    res = _evolve_pair(gen, y, LONGTIME_HORIZON, relaxed_cfg, monitor=settled)
    return gen.psub_of(res.y)


def _steady_linear_solve(gen: ZenoGenerator):
    sup = gen.superoperator()
    null = scipy.linalg.null_space(sup, rcond=1e-10)
    if null.shape[1] != 1:
        raise DegenerateSteadyStateError(
            f"steady-state space has dimension {null.shape[1]}")
    d = gen.dim
    vec = null[:, 0]
    cp = vec[: d * d].reshape(d, d)
    cm = vec[d * d:].reshape(d, d)
    total = (np.trace(cp) + np.trace(cm))
    cp, cm = cp / total, cm / total
    return float(np.einsum("ij,ji->", gen.psub_rest, cp + cm).real)


def zeno_steady_psub(gen: ZenoGenerator, method: str = "auto",
                     cfg: EvolutionConfig = DEFAULT_CONFIG) -> float:
    """Steady-state subradiant population of the unmeasured emitters.

    ``linear_solve`` extracts the null space of the vectorized generator
    (dense; used for n-1 <= 4), ``longtime`` integrates until the population
    derivative falls below 1e-9.  ``auto`` tries the direct solve on small
    systems and falls back to integration when the steady state is not
    unique (degenerate points such as the d = 0 permutation-symmetric limit).
    """
    if method not in ("auto", "longtime", "linear_solve"):
        raise ValueError(f"unknown method {method!r}")
    small = gen.model.n - 1 <= 4
    if method == "linear_solve" or (method == "auto" and small):
        try:
            return _steady_linear_solve(gen)
        except DegenerateSteadyStateError:
            if method == "linear_solve":
                raise
    return _steady_longtime(gen, cfg)


@dataclass
class ZenoSweep:
    d_values: np.ndarray
    sites: list
    psub: np.ndarray  # shape (len(sites), len(d_values))

    def argmax(self):
        i, j = np.unravel_index(np.argmax(self.psub), self.psub.shape)
        return self.sites[i], float(self.d_values[j]), float(self.psub[i, j])

    def row(self, site):
        return self.psub[self.sites.index(site)]


def _sweep_cell(args):
    n, d, site, method, cfg = args
    if d == 0.0:
        model = build_couplings("pse", n)
    else:
        model = build_couplings("waveguide", n, d_over_lambda0=d)
    gen = build_zeno_generator(model, site)
    return zeno_steady_psub(gen, method=method, cfg=cfg)


def zeno_sweep(n: int, d_grid, sites=None, method: str = "auto",
               cfg: EvolutionConfig = DEFAULT_CONFIG, workers: int = 1) -> ZenoSweep:
    """Steady subradiant population over spacing and measured-site choices."""
    d_values = np.asarray(d_grid, dtype=float)
    if (d_values < 0).any() or (d_values > 1).any():
        raise ValueError("d_grid must lie in [0, 1] (units of lambda0)")
    sites = list(sites) if sites is not None else list(range(1, n + 1))
    cells = [(n, float(d), s, method, cfg) for s in sites for d in d_values]
    if workers <= 1:
        vals = [_sweep_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(_sweep_cell, cells))
    table = np.asarray(vals).reshape(len(sites), len(d_values))
    return ZenoSweep(d_values=d_values, sites=sites, psub=table)
