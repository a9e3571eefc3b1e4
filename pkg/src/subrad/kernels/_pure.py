"""Pure-numpy fallback for the non-Hermitian state-vector stepper.

Semantics are identical to the compiled kernel in ``_core.pyx``: evolve
dpsi/dt = A psi with embedded Dormand-Prince 5(4) until either the target
time is reached or the squared norm decays through ``r_threshold`` (the jump
trigger of a Monte-Carlo wavefunction trajectory).  The squared norm is
monotonically non-increasing for a valid non-Hermitian generator, so the
first accepted step whose endpoint lies below the threshold brackets the
crossing, which is then located by bisection.
"""
from __future__ import annotations

import numpy as np

STATUS_REACHED = 0
STATUS_JUMP = 1

_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = (9017 / 3168, -355 / 33, 46732 / 5247,
                                49 / 176, -5103 / 18656)
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                                -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _stages(A, y, h, k1):
    k2 = A @ (y + h * _A21 * k1)
    k3 = A @ (y + h * (_A31 * k1 + _A32 * k2))
    k4 = A @ (y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3))
    k5 = A @ (y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4))
    k6 = A @ (y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5))
    y5 = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
    return k2, k3, k4, k5, k6, y5


def _normsq(y):
    return float(np.vdot(y, y).real)


def _bisect_jump(A, y0, k1, h_acc, r, y_hi):
    """Locate s in (0, h_acc] with ||y(s)||^2 = r by bisection on single
    fixed 5th-order probe steps from y0 (k1 is reused across probes)."""
    lo, hi = 0.0, h_acc
    y_best, s_best = y_hi, h_acc
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        *_ , y_mid = _stages(A, y0, mid, k1)
        f = _normsq(y_mid) - r
        if abs(f) <= 1e-10 * max(r, 1e-300):
            return mid, y_mid
        if f > 0.0:
            lo = mid
        else:
            hi = mid
            y_best, s_best = y_mid, mid
        if hi - lo <= 1e-15 * max(h_acc, 1e-300):
            break
    return s_best, y_best


def advance_nonhermitian(A, psi, t, t_target, r_threshold, rtol, atol,
                         h0=0.0, dt_min=1e-12, dt_max=1e100):
    """Advance the trajectory state to ``t_target`` or to the jump trigger.

    Returns ``(status, t_out, psi_out, h_next)`` with status STATUS_REACHED
    or STATUS_JUMP; on a jump, psi_out is the (sub-normalized) state at the
    crossing time.
    """
    y = np.array(psi, dtype=complex, copy=True)
    if t_target < t:
        raise ValueError("t_target must be >= t")
    if t_target == t:
        return STATUS_REACHED, t, y, h0

    k1 = A @ y
    if h0 and h0 > 0.0:
        h = h0
    else:
        ny, nf = np.linalg.norm(y), np.linalg.norm(k1)
        h = 0.01 * ny / nf if nf > 1e-14 else 1e-3 * (t_target - t)
    h = min(h, dt_max, t_target - t)

    while t < t_target:
        if t_target - t < dt_min:  # rounding remnant, snap to the target
            t = t_target
            break
        h = min(h, dt_max, t_target - t)
        if h < dt_min:
            raise RuntimeError(f"step size underflow ({h:.3e}) at t={t:.6g}")
        k2, k3, k4, k5, k6, y5 = _stages(A, y, h, k1)
        k7 = A @ y5
        err = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        enorm = float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))
        if enorm <= 1.0:
            if _normsq(y5) < r_threshold:
                s, y_jump = _bisect_jump(A, y, k1, h, r_threshold, y5)
                return STATUS_JUMP, t + s, y_jump, h
            t += h
            y = y5
            k1 = k7
            factor = _MAX_FACTOR if enorm == 0.0 else min(
                _MAX_FACTOR, _SAFETY * enorm ** -0.2)
            h *= factor
        else:
            h *= max(_MIN_FACTOR, _SAFETY * enorm ** -0.2)
    return STATUS_REACHED, t_target, y, h
