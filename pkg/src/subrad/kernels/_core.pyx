# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled non-Hermitian state-vector stepper.

Same contract as ``_pure.advance_nonhermitian``: adaptive Dormand-Prince
5(4) on dpsi/dt = A psi, stopping at the target time or at the monotone
crossing of the squared norm through the jump threshold (located by
bisection with single fixed 5th-order probe steps).  Matrix-vector products
go through BLAS zgemv; everything else is tight C loops.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport zgemv

cnp.import_array()

STATUS_REACHED = 0
STATUS_JUMP = 1

DEF C_SAFETY = 0.9
DEF C_MIN_FACTOR = 0.2
DEF C_MAX_FACTOR = 5.0

cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0
cdef double A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0
cdef double B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0


cdef inline void _matvec(double complex[:, ::1] A, double complex* x,
                         double complex* y, int d) noexcept nogil:
    # row-major A passed to Fortran BLAS as its transpose, so trans='T'
    cdef char trans = b'T'
    cdef int inc = 1
    cdef double complex one = 1.0 + 0.0j
    cdef double complex zero = 0.0 + 0.0j
    zgemv(&trans, &d, &d, &one, &A[0, 0], &d, x, &inc, &zero, y, &inc)


cdef inline double _normsq(double complex* y, int d) noexcept nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(d):
        s += y[i].real * y[i].real + y[i].imag * y[i].imag
    return s


cdef void _stages(double complex[:, ::1] A, double complex* y, double h,
                  double complex* k1, double complex* k2, double complex* k3,
                  double complex* k4, double complex* k5, double complex* k6,
                  double complex* y5, double complex* tmp, int d) noexcept nogil:
    cdef int i
    for i in range(d):
        tmp[i] = y[i] + h * A21 * k1[i]
    _matvec(A, tmp, k2, d)
    for i in range(d):
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    _matvec(A, tmp, k3, d)
    for i in range(d):
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    _matvec(A, tmp, k4, d)
    for i in range(d):
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    _matvec(A, tmp, k5, d)
    for i in range(d):
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i]
                             + A64 * k4[i] + A65 * k5[i])
    _matvec(A, tmp, k6, d)
    for i in range(d):
        y5[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i]
                            + B5 * k5[i] + B6 * k6[i])


def advance_nonhermitian(A, psi, double t, double t_target, double r_threshold,
                         double rtol, double atol, double h0=0.0,
                         double dt_min=1e-12, double dt_max=1e100):
    """Advance the trajectory state to ``t_target`` or to the jump trigger.

    Returns ``(status, t_out, psi_out, h_next)``; see the pure fallback for
    full semantics.
    """
    cdef double complex[:, ::1] Am = np.ascontiguousarray(A, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] y_arr = \
        np.array(psi, dtype=np.complex128, copy=True)
    cdef int d = y_arr.shape[0]
    if Am.shape[0] != d or Am.shape[1] != d:
        raise ValueError("A and psi have inconsistent shapes")
    if t_target < t:
        raise ValueError("t_target must be >= t")
    if t_target == t:
        return STATUS_REACHED, t, y_arr, h0

    work = np.empty((9, d), dtype=np.complex128)
    cdef double complex[:, ::1] w = work
    cdef double complex* y = <double complex*> cnp.PyArray_DATA(y_arr)
    cdef double complex* k1 = &w[0, 0]
    cdef double complex* k2 = &w[1, 0]
    cdef double complex* k3 = &w[2, 0]
    cdef double complex* k4 = &w[3, 0]
    cdef double complex* k5 = &w[4, 0]
    cdef double complex* k6 = &w[5, 0]
    cdef double complex* k7 = &w[6, 0]
    cdef double complex* y5 = &w[7, 0]
    cdef double complex* tmp = &w[8, 0]

    cdef double h, enorm, sc, e_re, e_im, lo, hi, mid, f, s_best, nrm2
    cdef double ny, nf
    cdef int i, it, status = STATUS_REACHED
    cdef bint jumped = False

    with nogil:
        _matvec(Am, y, k1, d)
        if h0 > 0.0:
            h = h0
        else:
            ny = sqrt(_normsq(y, d))
            nf = sqrt(_normsq(k1, d))
            h = 0.01 * ny / nf if nf > 1e-14 else 1e-3 * (t_target - t)
        if h > dt_max:
            h = dt_max
        if h > t_target - t:
            h = t_target - t

        while t < t_target:
            if t_target - t < dt_min:  # rounding remnant, snap to the target
                t = t_target
                break
            if h > dt_max:
                h = dt_max
            if h > t_target - t:
                h = t_target - t
            if h < dt_min:
                with gil:
                    raise RuntimeError(
                        f"step size underflow ({h:.3e}) at t={t:.6g}")
            _stages(Am, y, h, k1, k2, k3, k4, k5, k6, y5, tmp, d)
            _matvec(Am, y5, k7, d)
            enorm = 0.0
            for i in range(d):
                e_re = h * (E1 * k1[i].real + E3 * k3[i].real + E4 * k4[i].real
                            + E5 * k5[i].real + E6 * k6[i].real + E7 * k7[i].real)
                e_im = h * (E1 * k1[i].imag + E3 * k3[i].imag + E4 * k4[i].imag
                            + E5 * k5[i].imag + E6 * k6[i].imag + E7 * k7[i].imag)
                sc = atol + rtol * _cabs_max(y[i], y5[i])
                enorm += (e_re * e_re + e_im * e_im) / (sc * sc)
            enorm = sqrt(enorm / d)
            if enorm <= 1.0:
                nrm2 = _normsq(y5, d)
                if nrm2 < r_threshold:
                    # bisect on single fixed probes from y (k1 reused)
                    lo = 0.0
                    hi = h
                    s_best = h
                    for it in range(200):
                        mid = 0.5 * (lo + hi)
                        _stages(Am, y, mid, k1, k2, k3, k4, k5, k6, y5, tmp, d)
                        f = _normsq(y5, d) - r_threshold
                        if f < 0.0:
                            f = -f
                            if f <= 1e-10 * r_threshold:
                                s_best = mid
                                break
                            hi = mid
                            s_best = mid
                        else:
                            if f <= 1e-10 * r_threshold:
                                s_best = mid
                                break
                            lo = mid
                        if hi - lo <= 1e-15 * h:
                            break
                    _stages(Am, y, s_best, k1, k2, k3, k4, k5, k6, y5, tmp, d)
                    for i in range(d):
                        y[i] = y5[i]
                    t = t + s_best
                    jumped = True
                    break
                t = t + h
                for i in range(d):
                    y[i] = y5[i]
                    k1[i] = k7[i]
                if enorm == 0.0:
                    h = h * C_MAX_FACTOR
                else:
                    f = C_SAFETY * enorm ** -0.2
                    h = h * (C_MAX_FACTOR if f > C_MAX_FACTOR else f)
            else:
                f = C_SAFETY * enorm ** -0.2
                h = h * (C_MIN_FACTOR if f < C_MIN_FACTOR else f)

    if jumped:
        status = STATUS_JUMP
        return status, t, y_arr, h
    return STATUS_REACHED, t_target, y_arr, h


cdef inline double _cabs_max(double complex a, double complex b) noexcept nogil:
    cdef double ma = sqrt(a.real * a.real + a.imag * a.imag)
    cdef double mb = sqrt(b.real * b.real + b.imag * b.imag)
    return ma if ma > mb else mb
