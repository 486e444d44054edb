# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled integrator core: closed-loop RK4 over the augmented state
(x, theta, theta_hat).  Numerically mirrors `_simcore_py`; keep the two in
lockstep when editing."""

import numpy as np

from libc.math cimport atan, cos, sin, sqrt, tan

BACKEND = "cython"

DEF NX = 13
DEF NTH = 7
DEF NU = 6
DEF NAUG = 27  # NX + 2*NTH


cdef int _bisect(const double[::1] times, double t) noexcept nogil:
    cdef int lo = 0
    cdef int hi = times.shape[0] - 1
    cdef int mid
    if hi < 1:
        return 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if times[mid] <= t:
            lo = mid
        else:
            hi = mid
    return lo


cdef void _interp_row(const double[::1] times, const double[:, ::1] table,
                      double t, double* out, int m) noexcept nogil:
    cdef int n = times.shape[0]
    cdef int k, j
    cdef double w
    if t <= times[0]:
        for j in range(m):
            out[j] = table[0, j]
        return
    if t >= times[n - 1]:
        for j in range(m):
            out[j] = table[n - 1, j]
        return
    k = _bisect(times, t)
    if k > n - 2:
        k = n - 2
    w = (t - times[k]) / (times[k + 1] - times[k])
    for j in range(m):
        out[j] = (1.0 - w) * table[k, j] + w * table[k + 1, j]


cdef bint _saturate(double* u, double f_min, double f_max,
                    double gimbal_max, double torque_max) noexcept nogil:
    cdef bint clamped = 0
    cdef double fn, ft, tan_max, mag, cz, scale, s
    cdef int i
    fn = sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    if fn < 1e-12:
        u[2] = f_min
        fn = f_min
        clamped = 1
    if fn > f_max:
        s = f_max / fn
        u[0] *= s; u[1] *= s; u[2] *= s
        clamped = 1
    elif fn < f_min:
        s = f_min / fn
        u[0] *= s; u[1] *= s; u[2] *= s
        clamped = 1
    ft = sqrt(u[0] * u[0] + u[1] * u[1])
    tan_max = tan(gimbal_max)
    if u[2] <= 0.0:
        if ft > 0.0 or u[2] < 0.0:
            mag = sqrt(ft * ft + u[2] * u[2])
            cz = mag / sqrt(1.0 + tan_max * tan_max)
            scale = (cz * tan_max / ft) if ft > 0.0 else 0.0
            u[0] *= scale
            u[1] *= scale
            u[2] = cz
            clamped = 1
    elif ft > tan_max * u[2]:
        s = tan_max * u[2] / ft
        u[0] *= s
        u[1] *= s
        clamped = 1
    for i in range(3, 6):
        if u[i] > torque_max:
            u[i] = torque_max
            clamped = 1
        elif u[i] < -torque_max:
            u[i] = -torque_max
            clamped = 1
    return clamped


cdef struct Params:
    double f_min
    double f_max
    double gimbal_max
    double torque_max
    double alpha
    double g[3]
    double r_f[3]
    double j[9]
    double j_inv[9]
    bint use_feedback
    bint use_dist_feedback


cdef void _eval_f_raw(const double* x, const double* u, const Params* p,
                      double* out) noexcept nogil:
    cdef double fn, cph, sph, cth, sth, cps, sps, tth, m
    cdef double c00, c01, c02, c10, c11, c12, c20, c21, c22
    cdef double w0, w1, w2, jw0, jw1, jw2, tq0, tq1, tq2
    fn = sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    out[0] = -p.alpha * fn
    out[1] = x[4]; out[2] = x[5]; out[3] = x[6]
    cph = cos(x[7]); sph = sin(x[7])
    cth = cos(x[8]); sth = sin(x[8])
    cps = cos(x[9]); sps = sin(x[9])
    c00 = cps * cth
    c01 = cps * sth * sph - sps * cph
    c02 = cps * sth * cph + sps * sph
    c10 = sps * cth
    c11 = sps * sth * sph + cps * cph
    c12 = sps * sth * cph - cps * sph
    c20 = -sth
    c21 = cth * sph
    c22 = cth * cph
    m = x[0]
    out[4] = (c00 * u[0] + c01 * u[1] + c02 * u[2]) / m + p.g[0]
    out[5] = (c10 * u[0] + c11 * u[1] + c12 * u[2]) / m + p.g[1]
    out[6] = (c20 * u[0] + c21 * u[1] + c22 * u[2]) / m + p.g[2]
    w0 = x[10]; w1 = x[11]; w2 = x[12]
    tth = sth / cth
    out[7] = w0 + sph * tth * w1 + cph * tth * w2
    out[8] = cph * w1 - sph * w2
    out[9] = (sph * w1 + cph * w2) / cth
    jw0 = p.j[0] * w0 + p.j[1] * w1 + p.j[2] * w2
    jw1 = p.j[3] * w0 + p.j[4] * w1 + p.j[5] * w2
    jw2 = p.j[6] * w0 + p.j[7] * w1 + p.j[8] * w2
    tq0 = u[3] + (p.r_f[1] * u[2] - p.r_f[2] * u[1]) - (w1 * jw2 - w2 * jw1)
    tq1 = u[4] + (p.r_f[2] * u[0] - p.r_f[0] * u[2]) - (w2 * jw0 - w0 * jw2)
    tq2 = u[5] + (p.r_f[0] * u[1] - p.r_f[1] * u[0]) - (w0 * jw1 - w1 * jw0)
    out[10] = p.j_inv[0] * tq0 + p.j_inv[1] * tq1 + p.j_inv[2] * tq2
    out[11] = p.j_inv[3] * tq0 + p.j_inv[4] * tq1 + p.j_inv[5] * tq2
    out[12] = p.j_inv[6] * tq0 + p.j_inv[7] * tq1 + p.j_inv[8] * tq2


cdef bint _control(double t, const double* z, const Params* p,
                   const double[::1] times, const double[:, ::1] xbar,
                   const double[:, ::1] ubar, const double[::1] gain_times,
                   const double[:, ::1] kflat, const double[:, ::1] ktilflat,
                   double* u) noexcept nogil:
    cdef double xb[NX]
    cdef double kbuf[NU * NX]
    cdef double ktbuf[NU * NTH]
    cdef int i, j
    _interp_row(times, xbar, t, xb, NX)
    _interp_row(times, ubar, t, u, NU)
    if p.use_feedback:
        _interp_row(gain_times, kflat, t, kbuf, NU * NX)
        for i in range(NU):
            for j in range(NX):
                u[i] += kbuf[i * NX + j] * (z[j] - xb[j])
    if p.use_dist_feedback:
        _interp_row(gain_times, ktilflat, t, ktbuf, NU * NTH)
        for i in range(NU):
            for j in range(NTH):
                u[i] += ktbuf[i * NTH + j] * z[NX + NTH + j]
    return _saturate(u, p.f_min, p.f_max, p.gimbal_max, p.torque_max)


cdef bint _aug_rhs(double t, const double* z, const Params* p,
                   const double[::1] times, const double[:, ::1] xbar,
                   const double[:, ::1] ubar, const double[::1] gain_times,
                   const double[:, ::1] kflat, const double[:, ::1] ktilflat,
                   const double[:, ::1] fbasis, const double[:, ::1] s_tilde,
                   const double[:, ::1] s_hat_gen,
                   double* dz) noexcept nogil:
    cdef double u[NU]
    cdef double sth[NTH]
    cdef bint clamped
    cdef int i, j
    clamped = _control(t, z, p, times, xbar, ubar, gain_times, kflat,
                       ktilflat, u)
    _eval_f_raw(z, u, p, dz)
    for i in range(NTH):
        sth[i] = 0.0
        for j in range(NTH):
            sth[i] += s_tilde[i, j] * z[NX + j]
    for i in range(NX):
        for j in range(NTH):
            dz[i] += fbasis[i, j] * sth[j]
    for i in range(NTH):
        dz[NX + i] = sth[i]
    for i in range(NTH):
        dz[NX + NTH + i] = 0.0
        for j in range(NTH):
            dz[NX + NTH + i] += s_hat_gen[i, j] * z[NX + NTH + j]
    return clamped


def control_at(double t, z0, tabs):
    """Saturated closed-loop control at (t, state); mirrors the RHS."""
    cdef double[::1] z = np.ascontiguousarray(z0, dtype=np.float64)
    cdef Params p = _unpack_params(tabs)
    cdef double[::1] times = tabs["times"]
    cdef double[:, ::1] xbar = tabs["xbar"]
    cdef double[:, ::1] ubar = tabs["ubar"]
    cdef double[::1] gain_times = tabs["gain_times"]
    cdef double[:, ::1] kflat = tabs["kflat"]
    cdef double[:, ::1] ktilflat = tabs["ktilflat"]
    cdef double u[NU]
    _control(t, &z[0], &p, times, xbar, ubar, gain_times, kflat, ktilflat, u)
    out = np.empty(NU)
    for i in range(NU):
        out[i] = u[i]
    return out


cdef Params _unpack_params(tabs):
    cdef Params p
    cdef int i
    p.f_min = tabs["f_min"]
    p.f_max = tabs["f_max"]
    p.gimbal_max = tabs["gimbal_max"]
    p.torque_max = tabs["torque_max"]
    p.alpha = tabs["alpha"]
    g = tabs["g"]; r_f = tabs["r_f"]
    jm = np.ascontiguousarray(tabs["j"], dtype=np.float64).ravel()
    ji = np.ascontiguousarray(tabs["j_inv"], dtype=np.float64).ravel()
    for i in range(3):
        p.g[i] = g[i]
        p.r_f[i] = r_f[i]
    for i in range(9):
        p.j[i] = jm[i]
        p.j_inv[i] = ji[i]
    p.use_feedback = 1 if tabs["use_feedback"] else 0
    p.use_dist_feedback = 1 if tabs["use_dist_feedback"] else 0
    return p


def rk4_span(z0, double t0, double t1, int n_steps, tabs):
    """Integrate the augmented closed loop over [t0, t1] with n_steps RK4
    steps.  Returns (trace, control trace, clamp count)."""
    cdef Params p = _unpack_params(tabs)
    cdef double[::1] times = tabs["times"]
    cdef double[:, ::1] xbar = tabs["xbar"]
    cdef double[:, ::1] ubar = tabs["ubar"]
    cdef double[::1] gain_times = tabs["gain_times"]
    cdef double[:, ::1] kflat = tabs["kflat"]
    cdef double[:, ::1] ktilflat = tabs["ktilflat"]
    cdef double[:, ::1] fbasis = tabs["fbasis"]
    cdef double[:, ::1] s_tilde = tabs["s_tilde"]
    cdef double[:, ::1] s_hat_gen = tabs["s_hat_gen"]

    trace_np = np.empty((n_steps + 1, NAUG))
    utrace_np = np.empty((n_steps + 1, NU))
    cdef double[:, ::1] trace = trace_np
    cdef double[:, ::1] utrace = utrace_np

    cdef double z[NAUG]
    cdef double zt[NAUG]
    cdef double k1[NAUG]
    cdef double k2[NAUG]
    cdef double k3[NAUG]
    cdef double k4[NAUG]
    cdef double ubuf[NU]
    cdef double h = (t1 - t0) / n_steps
    cdef double t
    cdef int i, j, n_clamped = 0
    cdef bint step_clamped

    z0c = np.ascontiguousarray(z0, dtype=np.float64)
    for j in range(NAUG):
        z[j] = z0c[j]
        trace[0, j] = z[j]
    _control(t0, z, &p, times, xbar, ubar, gain_times, kflat, ktilflat, ubuf)
    for j in range(NU):
        utrace[0, j] = ubuf[j]

    with nogil:
        for i in range(n_steps):
            t = t0 + i * h
            step_clamped = _aug_rhs(t, z, &p, times, xbar, ubar, gain_times,
                                    kflat, ktilflat, fbasis, s_tilde,
                                    s_hat_gen, k1)
            for j in range(NAUG):
                zt[j] = z[j] + 0.5 * h * k1[j]
            step_clamped |= _aug_rhs(t + 0.5 * h, zt, &p, times, xbar, ubar,
                                     gain_times, kflat, ktilflat, fbasis,
                                     s_tilde, s_hat_gen, k2)
            for j in range(NAUG):
                zt[j] = z[j] + 0.5 * h * k2[j]
            step_clamped |= _aug_rhs(t + 0.5 * h, zt, &p, times, xbar, ubar,
                                     gain_times, kflat, ktilflat, fbasis,
                                     s_tilde, s_hat_gen, k3)
            for j in range(NAUG):
                zt[j] = z[j] + h * k3[j]
            step_clamped |= _aug_rhs(t + h, zt, &p, times, xbar, ubar,
                                     gain_times, kflat, ktilflat, fbasis,
                                     s_tilde, s_hat_gen, k4)
            for j in range(NAUG):
                z[j] = z[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j]
                                           + 2.0 * k3[j] + k4[j])
                trace[i + 1, j] = z[j]
            if step_clamped:
                n_clamped += 1
            _control(t + h, z, &p, times, xbar, ubar, gain_times, kflat,
                     ktilflat, ubuf)
            for j in range(NU):
                utrace[i + 1, j] = ubuf[j]

    return trace_np, utrace_np, n_clamped
