"""Adaptive embedded Dormand-Prince 5(4) stepping for array-valued ODEs.

Used for density-matrix and Zeno-pair evolution, where the right-hand side is
matrix-multiplication bound and BLAS via numpy is already optimal.  The
state-vector hot path lives in :mod:`subrad.kernels` instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["StiffnessError", "dp45", "DP_A", "DP_B", "DP_E", "DP_C"]


class StiffnessError(RuntimeError):
    """Step size collapsed below dt_min; the problem is too stiff for DP45."""


DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
DP_B = DP_A[5]  # 5th-order solution weights (FSAL)
DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                 -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


@dataclass
class StepResult:
    y: np.ndarray
    t: float
    h_next: float
    stopped: bool
    t_prev: float | None
    y_prev: np.ndarray | None
    n_accepted: int
    n_rejected: int


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))


def _initial_step(f0, y0, rtol, atol, span):
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean(np.abs(y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean(np.abs(f0 / scale) ** 2)))
    h = 0.01 * d0 / d1 if d1 > 1e-12 * max(d0, 1.0) else 1e-3 * span
    return min(max(h, 1e-8 * span), span)


def dp45(rhs, y0, t0, t1, rtol=1e-8, atol=1e-10, h0=None,
         dt_min=1e-12, dt_max=np.inf, post_step=None, monitor=None) -> StepResult:
    """Integrate y' = rhs(y) from t0 to t1 (autonomous system).

    post_step(y) -> y is applied after every accepted step (e.g. trace
    renormalization).  monitor(t, y, f) -> bool is evaluated on accepted steps
    and stops the integration early when it returns True; the result then
    carries the previous accepted state for bracketing.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    y = np.array(y0, dtype=complex, copy=True)
    t = t0
    n_acc = n_rej = 0
    if t1 == t0:
        return StepResult(y, t, h0 or 0.0, False, None, None, 0, 0)

    f = rhs(y)
    span = t1 - t0
    h = h0 if h0 and h0 > 0 else _initial_step(f, y, rtol, atol, span)
    h = min(h, dt_max, span)

    k = [None] * 7
    t_prev, y_prev = None, None
    while t < t1:
        if t1 - t < dt_min:  # rounding remnant, snap to the target
            t = t1
            break
        h = min(h, dt_max, t1 - t)
        if h < dt_min:
            raise StiffnessError(f"step size {h:.3e} underflow at t={t:.6g}")
        k[0] = f
        for s in range(1, 6):
            ys = y + h * sum(DP_A[s - 1][j] * k[j] for j in range(s))
            k[s] = rhs(ys)
        y5 = y + h * sum(DP_B[j] * k[j] for j in range(6))
        k[6] = rhs(y5)
        err = h * sum(DP_E[j] * k[j] for j in range(7))
        enorm = _error_norm(err, y, y5, rtol, atol)
        if enorm <= 1.0:
            t_prev, y_prev = t, y
            t = t + h
            y = y5
            f = k[6]
            n_acc += 1
            if post_step is not None:
                y_new = post_step(y)
                if y_new is not y:
                    y = y_new
                    f = rhs(y)
            if monitor is not None and monitor(t, y, f):
                return StepResult(y, t, h, True, t_prev, y_prev, n_acc, n_rej)
            factor = _MAX_FACTOR if enorm == 0.0 else min(
                _MAX_FACTOR, _SAFETY * enorm ** -0.2)
            h = h * factor
        else:
            n_rej += 1
            h = h * max(_MIN_FACTOR, _SAFETY * enorm ** -0.2)
    return StepResult(y, t, h, False, t_prev, y_prev, n_acc, n_rej)
