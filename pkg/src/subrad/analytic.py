"""Closed-form reference results for the permutation-symmetric ensemble.

The waiting-time distribution P_N(k, t) is the probability that exactly k
collective photons have been emitted by time t during a superradiant cascade
(rates lambda_k = (N-k)(k+1) in units of gamma0).  Convolving it with the
measurement back-action weights f^z, f^x gives the exact steady-state
subradiant population after a single local measurement at t.

All times are in units of 1/gamma0.
"""
from __future__ import annotations

import math
from fractions import Fraction

import mpmath
import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "WaitingDist", "jump_rates", "waiting_dist",
    "f_z", "f_x", "psub_ss", "reciprocity_residual", "optimal_tm_z",
    "entropy_ss", "closed_form_psub_z",
]

ILT_MAX_N = 12  # beyond this the explicit inverse transform cancels catastrophically


def jump_rates(n: int) -> list[int]:
    """Cascade rates lambda_k = (n-k)(k+1), exact integers, k = 0..n."""
    return [(n - k) * (k + 1) for k in range(n + 1)]


def _ode_eval(n, ts):
    lam = np.array(jump_rates(n), dtype=float)
    mat = np.diag(-lam) + np.diag(lam[:-1], -1)

    def rhs(_t, y):
        return mat @ y

    y0 = np.zeros(n + 1)
    y0[0] = 1.0
    ts = np.asarray(ts, dtype=float)
    order = np.argsort(ts)
    t_sorted = ts[order]
    out = np.empty((len(ts), n + 1))
    positive = t_sorted > 0
    if positive.any():
        sol = solve_ivp(rhs, (0.0, float(t_sorted[positive][-1])), y0,
                        method="DOP853", rtol=1e-10, atol=1e-14,
                        t_eval=t_sorted[positive])
        if not sol.success:
            raise RuntimeError(f"waiting-time ODE integration failed: {sol.message}")
        out[order[positive]] = sol.y.T
    out[order[~positive]] = y0
    return out


def _ilt_terms(n, k):
    """Partial-fraction data for P_n(k, t): list of (lam, const, linear) with
    the coefficients as exact rationals.

    Degenerate rate pairs (lambda_r = lambda_{n-1-r}) produce a double pole
    and hence a (A + B t) e^{-lam t} term.
    """
    lam = jump_rates(n)[: k + 1]
    prefactor = Fraction(math.factorial(k) * math.factorial(n),
                         math.factorial(n - k))
    by_value: dict[int, list[int]] = {}
    for idx, lv in enumerate(lam):
        by_value.setdefault(lv, []).append(idx)

    terms = []
    for lv, idxs in by_value.items():
        others = [lam[j] for j in range(k + 1) if lam[j] != lv]
        if len(idxs) == 1:
            const = prefactor * math.prod(
                (Fraction(1, lj - lv) for lj in others), start=Fraction(1))
            terms.append((lv, const, Fraction(0)))
        elif len(idxs) == 2:
            b = math.prod((Fraction(1, lj - lv) for lj in others), start=Fraction(1))
            a = sum((Fraction(-1, lj - lv) * b for lj in others), start=Fraction(0))
            terms.append((lv, prefactor * a, prefactor * b))
        else:
            raise AssertionError("cascade rates can be at most doubly degenerate")
    return terms


def _ilt_eval(n, ts):
    ts = np.asarray(ts, dtype=float)
    out = np.empty((len(ts), n + 1))
    all_terms = [_ilt_terms(n, k) for k in range(n + 1)]
    with mpmath.workdps(60):
        for row, t in enumerate(ts):
            tm = mpmath.mpf(float(t))
            for k, terms in enumerate(all_terms):
                acc = mpmath.mpf(0)
                for lv, const, lin in terms:
                    coeff = mpmath.mpf(const.numerator) / const.denominator
                    if lin:
                        coeff += (mpmath.mpf(lin.numerator) / lin.denominator) * tm
                    acc += coeff * mpmath.e ** (-lv * tm)
                out[row, k] = float(acc)
    return out


class WaitingDist:
    """Evaluator for the photon-count distribution of a collective cascade."""

    def __init__(self, n: int, method: str = "ode"):
        if n < 1:
            raise ValueError("n must be >= 1")
        if method not in ("ode", "exact_ilt"):
            raise ValueError(f"unknown method {method!r}")
        if method == "exact_ilt" and n > ILT_MAX_N:
            raise ValueError(
                f"exact_ilt is numerically unsafe for n > {ILT_MAX_N} "
                "(catastrophic cancellation); use the ode method"
            )
        self.n = n
        self.method = method

    def __call__(self, t):
        scalar = np.isscalar(t)
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if (ts < 0).any():
            raise ValueError("t must be >= 0")
        vals = _ode_eval(self.n, ts) if self.method == "ode" else _ilt_eval(self.n, ts)
        # clip integrator noise, the distribution is a probability vector
        vals[np.abs(vals) < 1e-300] = 0.0
        return vals[0] if scalar else vals


def waiting_dist(n: int, t, method: str = "ode"):
    """P_n(k, t) for k = 0..n; scalar t gives a vector, array t a (len, n+1) table."""
    return WaitingDist(n, method)(t)


def f_z(n: int, k: int) -> float:
    """Subradiant transfer weight for a sigma^z measurement after k jumps:
    2k(n-k)/n^2."""
    if not 0 <= k <= n:
        raise ValueError("k must satisfy 0 <= k <= n")
    return float(Fraction(2 * k * (n - k), n * n))


def f_x(n: int, k: int) -> float:
    """Subradiant transfer weight for a sigma^x measurement after k jumps:
    1/4 + (n/2-k)^2/n^2 - 1/(2n)."""
    if not 0 <= k <= n:
        raise ValueError("k must satisfy 0 <= k <= n")
    return float(Fraction(1, 4) + Fraction((n - 2 * k) ** 2, 4 * n * n)
                 - Fraction(1, 2 * n))


def _f_vector(n, observable):
    if observable == "z":
        return np.array([f_z(n, k) for k in range(n + 1)])
    if observable == "x":
        return np.array([f_x(n, k) for k in range(n + 1)])
    raise ValueError(f"observable must be 'x' or 'z', got {observable!r}")


def psub_ss(n: int, observable: str, t_m, method: str = "ode"):
    """Steady-state subradiant population after one sigma^mu measurement at t_m."""
    fv = _f_vector(n, observable)
    scalar = np.isscalar(t_m)
    pk = waiting_dist(n, np.atleast_1d(t_m), method)
    vals = pk @ fv
    return float(vals[0]) if scalar else vals


def reciprocity_residual(n: int, t_m) -> float:
    """P_x + P_z/2 - (n-1)/(2n); identically zero for the exact distribution."""
    px = psub_ss(n, "x", t_m)
    pz = psub_ss(n, "z", t_m)
    return px + pz / 2.0 - (n - 1) / (2.0 * n)


def optimal_tm_z(n: int, lo: float = 1e-6, hi: float = 4.0, tol: float = 1e-5) -> float:
    """Measurement time maximizing the sigma^z curve, by golden-section search."""
    if n < 2:
        raise ValueError("optimal_tm_z requires n >= 2")
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = psub_ss(n, "z", c)
    fd = psub_ss(n, "z", d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = psub_ss(n, "z", c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = psub_ss(n, "z", d)
    return 0.5 * (a + b)


def entropy_ss(n: int, psub: float) -> float:
    """Steady-state half-chain entanglement entropy, linear in the subradiant
    population:  psub * [-(3n-4)/(4(n-1)) log((3n-4)/(4(n-1)))
                         - n/(4(n-1)) log(n/(4(n-1)))].

    Only even n is meaningful (equal bipartition)."""
    if n < 2 or n % 2 != 0:
        raise ValueError("entropy_ss requires even n >= 2")
    if not 0.0 <= psub <= 1.0:
        raise ValueError("psub must lie in [0, 1]")
    a = (3 * n - 4) / (4.0 * (n - 1))
    b = n / (4.0 * (n - 1))
    return psub * (-a * math.log(a) - b * math.log(b))


def closed_form_psub_z(n: int, t_m):
    """Explicit small-n sigma^z curves: n=2 gives t e^{-2t}; n=3 gives
    (4/3) e^{-4t} [3 + e^{t} (-3 + 4t)]."""
    t = np.asarray(t_m, dtype=float)
    if n == 2:
        out = t * np.exp(-2.0 * t)
    elif n == 3:
        out = (4.0 / 3.0) * np.exp(-4.0 * t) * (3.0 + np.exp(t) * (-3.0 + 4.0 * t))
    else:
        raise ValueError("closed forms are provided for n = 2 and 3 only")
    return float(out) if np.isscalar(t_m) else out
