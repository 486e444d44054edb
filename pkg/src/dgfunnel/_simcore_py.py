"""Pure-Python (numpy) twin of the compiled integrator core.

Implements the closed-loop right-hand side and a fixed-step RK4 span
integrator over the augmented state (x, theta, theta_hat).  The Cython
extension `_simcore` implements the same entry points; `dgfunnel.core`
selects whichever is importable.  Keep the two implementations numerically
identical: same evaluation order, same saturation rules.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

NX = 13
NTH = 7
NU = 6
NAUG = NX + 2 * NTH


def _interp_row(times: np.ndarray, table: np.ndarray, t: float) -> np.ndarray:
    n = times.shape[0]
    if t <= times[0]:
        return table[0]
    if t >= times[n - 1]:
        return table[n - 1]
    k = int(np.searchsorted(times, t, side="right") - 1)
    if k > n - 2:
        k = n - 2
    w = (t - times[k]) / (times[k + 1] - times[k])
    return (1.0 - w) * table[k] + w * table[k + 1]


def saturate_control(u: np.ndarray, f_min: float, f_max: float,
                     gimbal_max: float, torque_max: float
                     ) -> tuple[np.ndarray, bool]:
    """Clamp thrust magnitude, gimbal angle and per-axis torque.

    Gimbal clamping shrinks the transverse (x, y) force while preserving the
    z component.  Returns (clamped control, whether anything clamped).
    """
    out = u.copy()
    clamped = False
    force = out[:3]
    fn = np.sqrt(force[0]**2 + force[1]**2 + force[2]**2)
    if fn < 1e-12:
        force[2] = f_min
        fn = f_min
        clamped = True
    if fn > f_max:
        force *= f_max / fn
        clamped = True
    elif fn < f_min:
        force *= f_min / fn
        clamped = True
    # gimbal: angle from body +z
    ft = np.sqrt(force[0]**2 + force[1]**2)
    tan_max = np.tan(gimbal_max)
    if force[2] <= 0.0:
        if ft > 0.0 or force[2] < 0.0:
            # point at the gimbal cone edge, preserve magnitude
            mag = np.sqrt(ft * ft + force[2] * force[2])
            cz = mag / np.sqrt(1.0 + tan_max**2)
            scale = (cz * tan_max / ft) if ft > 0.0 else 0.0
            force[0] *= scale
            force[1] *= scale
            force[2] = cz
            clamped = True
    elif ft > tan_max * force[2]:
        s = tan_max * force[2] / ft
        force[0] *= s
        force[1] *= s
        clamped = True
    for i in range(3, 6):
        if out[i] > torque_max:
            out[i] = torque_max
            clamped = True
        elif out[i] < -torque_max:
            out[i] = -torque_max
            clamped = True
    return out, clamped


def eval_f_raw(x: np.ndarray, u: np.ndarray, j: np.ndarray, j_inv: np.ndarray,
               r_f: np.ndarray, alpha: float, g: np.ndarray) -> np.ndarray:
    """State derivative without validity checks (hot path)."""
    out = np.empty(NX)
    force = u[:3]
    fn = np.sqrt(force[0]**2 + force[1]**2 + force[2]**2)
    out[0] = -alpha * fn
    out[1:4] = x[4:7]
    phi, th, psi = x[7], x[8], x[9]
    cph, sph = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(th), np.sin(th)
    cps, sps = np.cos(psi), np.sin(psi)
    # C_IB = Rz(psi) Ry(th) Rx(phi)
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
    out[4] = (c00 * force[0] + c01 * force[1] + c02 * force[2]) / m + g[0]
    out[5] = (c10 * force[0] + c11 * force[1] + c12 * force[2]) / m + g[1]
    out[6] = (c20 * force[0] + c21 * force[1] + c22 * force[2]) / m + g[2]
    w = x[10:13]
    tth = sth / cth
    out[7] = w[0] + sph * tth * w[1] + cph * tth * w[2]
    out[8] = cph * w[1] - sph * w[2]
    out[9] = (sph * w[1] + cph * w[2]) / cth
    jw = j @ w
    tq = u[3:6] + np.cross(r_f, force) - np.cross(w, jw)
    out[10:13] = j_inv @ tq
    return out


def _aug_rhs(t: float, z: np.ndarray, tabs: dict, flags: np.ndarray
             ) -> np.ndarray:
    """Augmented derivative: state, true theta, predicted theta_hat."""
    x = z[:NX]
    theta = z[NX:NX + NTH]
    theta_hat = z[NX + NTH:]

    xbar = _interp_row(tabs["times"], tabs["xbar"], t)
    ubar = _interp_row(tabs["times"], tabs["ubar"], t)
    u = ubar.copy()
    if tabs["use_feedback"]:
        kmat = _interp_row(tabs["gain_times"], tabs["kflat"], t).reshape(NU, NX)
        u = u + kmat @ (x - xbar)
    if tabs["use_dist_feedback"]:
        ktil = _interp_row(tabs["gain_times"], tabs["ktilflat"], t).reshape(NU, NTH)
        u = u + ktil @ theta_hat
    u, clamped = saturate_control(u, tabs["f_min"], tabs["f_max"],
                                  tabs["gimbal_max"], tabs["torque_max"])
    if clamped:
        flags[0] = 1.0

    dz = np.empty(NAUG)
    dz[:NX] = eval_f_raw(x, u, tabs["j"], tabs["j_inv"], tabs["r_f"],
                         tabs["alpha"], tabs["g"])
    dz[:NX] += tabs["fbasis"] @ (tabs["s_tilde"] @ theta)
    dz[NX:NX + NTH] = tabs["s_tilde"] @ theta
    dz[NX + NTH:] = tabs["s_hat_gen"] @ theta_hat
    return dz


def control_at(t: float, z: np.ndarray, tabs: dict) -> np.ndarray:
    """Saturated closed-loop control at (t, state); mirrors _aug_rhs."""
    x = z[:NX]
    theta_hat = z[NX + NTH:]
    xbar = _interp_row(tabs["times"], tabs["xbar"], t)
    u = _interp_row(tabs["times"], tabs["ubar"], t).copy()
    if tabs["use_feedback"]:
        kmat = _interp_row(tabs["gain_times"], tabs["kflat"], t).reshape(NU, NX)
        u = u + kmat @ (x - xbar)
    if tabs["use_dist_feedback"]:
        ktil = _interp_row(tabs["gain_times"], tabs["ktilflat"], t).reshape(NU, NTH)
        u = u + ktil @ theta_hat
    u, _ = saturate_control(u, tabs["f_min"], tabs["f_max"],
                            tabs["gimbal_max"], tabs["torque_max"])
    return u


def rk4_span(z0: np.ndarray, t0: float, t1: float, n_steps: int, tabs: dict
             ) -> tuple[np.ndarray, np.ndarray, int]:
    """Integrate the augmented closed loop over [t0, t1] with n_steps RK4
    steps.  Returns (trace (n_steps+1, naug), control trace, clamp count)."""
    h = (t1 - t0) / n_steps
    trace = np.empty((n_steps + 1, NAUG))
    utrace = np.empty((n_steps + 1, NU))
    trace[0] = z0
    utrace[0] = control_at(t0, z0, tabs)
    z = z0.copy()
    n_clamped = 0
    flags = np.zeros(1)
    for i in range(n_steps):
        t = t0 + i * h
        flags[0] = 0.0
        k1 = _aug_rhs(t, z, tabs, flags)
        k2 = _aug_rhs(t + 0.5 * h, z + 0.5 * h * k1, tabs, flags)
        k3 = _aug_rhs(t + 0.5 * h, z + 0.5 * h * k2, tabs, flags)
        k4 = _aug_rhs(t + h, z + h * k3, tabs, flags)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if flags[0] != 0.0:
            n_clamped += 1
        trace[i + 1] = z
        utrace[i + 1] = control_at(t + h, z, tabs)
    return trace, utrace, n_clamped
