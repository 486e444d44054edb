"""Nominal (reference) trajectory handling.

Trajectories are knot tables with piecewise-linear (first-order-hold)
interpolation in both states and controls.  They are loaded from CSV or
generated by a polynomial surrogate (inverse dynamics on smooth boundary
interpolants); midpoint defects against the dynamics are recorded, not
enforced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import MissingColumn
from .vehicle import (
    IDX_M,
    IDX_R,
    IDX_TH,
    IDX_V,
    IDX_W,
    N_CONTROLS,
    N_STATES,
    VehicleParams,
    control_violations,
    euler_dcm,
    euler_rate_map,
    euler_rate_map_partials,
    eval_f,
)

NOMINAL_CSV_HEADER = ("t,m,rx,ry,rz,vx,vy,vz,phi,theta,psi,wx,wy,wz,"
                      "Fx,Fy,Fz,taux,tauy,tauz")


@dataclass
class NominalTrajectory:
    """Knot table with FOH interpolation; all SI units, angles in radians."""

    knot_times: np.ndarray
    states: np.ndarray        # (N, 13)
    controls: np.ndarray      # (N, 6)
    defect: dict = field(default_factory=dict)
    infeasible_controls: list = field(default_factory=list)

    def __post_init__(self):
        self.knot_times = np.asarray(self.knot_times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        n = self.knot_times.size
        if self.states.shape != (n, N_STATES):
            raise ValueError("states shape mismatch")
        if self.controls.shape != (n, N_CONTROLS):
            raise ValueError("controls shape mismatch")
        if not np.all(np.diff(self.knot_times) > 0):
            raise ValueError("knot times must be strictly ascending")

    @property
    def t0(self) -> float:
        return float(self.knot_times[0])

    @property
    def tf(self) -> float:
        return float(self.knot_times[-1])

    def _interp(self, table: np.ndarray, t: float) -> np.ndarray:
        t = float(np.clip(t, self.t0, self.tf))
        k = int(np.searchsorted(self.knot_times, t, side="right") - 1)
        k = min(max(k, 0), self.knot_times.size - 2)
        t0, t1 = self.knot_times[k], self.knot_times[k + 1]
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * table[k] + w * table[k + 1]

    def state(self, t: float) -> np.ndarray:
        return self._interp(self.states, t)

    def control(self, t: float) -> np.ndarray:
        return self._interp(self.controls, t)

    def midpoint_defects(self, params: VehicleParams) -> np.ndarray:
        """Per-segment ||dx/dt - f|| at segment midpoints."""
        out = np.empty(self.knot_times.size - 1)
        for k in range(out.size):
            dt = self.knot_times[k + 1] - self.knot_times[k]
            xm = 0.5 * (self.states[k] + self.states[k + 1])
            um = 0.5 * (self.controls[k] + self.controls[k + 1])
            slope = (self.states[k + 1] - self.states[k]) / dt
            out[k] = np.linalg.norm(slope - eval_f(xm, um, params))
        return out


def save_nominal_csv(path, traj: NominalTrajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NOMINAL_CSV_HEADER.split(","))
        for i, t in enumerate(traj.knot_times):
            w.writerow([f"{t:.12g}"]
                       + [f"{v:.12g}" for v in traj.states[i]]
                       + [f"{v:.12g}" for v in traj.controls[i]])


def load_nominal_csv(path) -> NominalTrajectory:
    path = Path(path)
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        expected = NOMINAL_CSV_HEADER.split(",")
        if [h.strip() for h in header] != expected:
            missing = set(expected) - {h.strip() for h in header}
            raise MissingColumn(f"nominal CSV {path} header mismatch; "
                                f"missing {sorted(missing) or header}")
        rows = [[float(v) for v in row] for row in rd if row]
    arr = np.asarray(rows)
    return NominalTrajectory(knot_times=arr[:, 0], states=arr[:, 1:14],
                             controls=arr[:, 14:20])


def _quintic(y0, dy0, ddy0, y1, dy1, ddy1, t_f):
    """Coefficients (ascending powers) of the quintic matching value, slope
    and curvature at 0 and t_f, per component."""
    y0, dy0, ddy0 = np.atleast_1d(y0, dy0, ddy0)
    y1, dy1, ddy1 = np.atleast_1d(y1, dy1, ddy1)
    rows = []
    for tt, der in ((0.0, 0), (t_f, 0), (0.0, 1), (t_f, 1), (0.0, 2), (t_f, 2)):
        row = np.zeros(6)
        for k in range(der, 6):
            c = 1.0
            for j in range(der):
                c *= (k - j)
            row[k] = c * tt ** (k - der)
        rows.append(row)
    mat = np.asarray(rows)
    rhs = np.stack([y0, y1, dy0, dy1, ddy0, ddy1])
    return np.linalg.solve(mat, rhs)  # (6, dim)


def _poly_eval(coef, t, der=0):
    dim = coef.shape[1]
    out = np.zeros((np.size(t), dim))
    tarr = np.atleast_1d(t)
    for k in range(der, 6):
        c = 1.0
        for j in range(der):
            c *= (k - j)
        out += c * np.outer(tarr ** (k - der), coef[k])
    return out if np.ndim(t) else out[0]


def surrogate_nominal(x0, xf, t_f: float, knots: int,
                      params: VehicleParams,
                      accel0: np.ndarray | None = None,
                      accelf: np.ndarray | None = None) -> NominalTrajectory:
    """Smooth boundary-matched reference trajectory with inverse-dynamics
    controls (stand-in for a trajectory optimizer).

    Position and attitude follow quintics matching boundary values, rates
    and (chosen) accelerations; controls come from inverse dynamics; the
    mass profile integrates m' = -alpha m ||a - g|| with a single exponent
    correction so both endpoint masses are met exactly.  Control-limit
    violations at knots are flagged, and midpoint defects are recorded.
    """
    x0 = np.asarray(x0, dtype=float)
    xf = np.asarray(xf, dtype=float)
    if t_f <= 0:
        raise ValueError("t_f must be positive")
    if knots < 2:
        raise ValueError("need at least 2 knots")

    g = params.gravity
    th0, thf = x0[IDX_TH], xf[IDX_TH]
    if accel0 is None:
        # thrust along body z at a mid-range acceleration
        accel0 = 2.2 * euler_dcm(th0)[:, 2] + g
    if accelf is None:
        accelf = 2.2 * euler_dcm(thf)[:, 2] + g

    r_coef = _quintic(x0[IDX_R], x0[IDX_V], accel0,
                      xf[IDX_R], xf[IDX_V], accelf, t_f)
    thdot0 = euler_rate_map(th0) @ x0[IDX_W]
    thdotf = euler_rate_map(thf) @ xf[IDX_W]
    th_coef = _quintic(th0, thdot0, np.zeros(3), thf, thdotf, np.zeros(3), t_f)

    times = np.linspace(0.0, t_f, knots)

    # mass: rotation preserves ||F_B|| = m ||a - g||, so log-mass integrates
    # -alpha * ||a - g||; a fine trapezoid grid then an exponent correction
    # pins the final mass exactly.
    fine = np.linspace(0.0, t_f, 2001)
    a_fine = _poly_eval(r_coef, fine, der=2)
    spec_norm = np.linalg.norm(a_fine - g, axis=1)
    cumint = np.concatenate(
        [[0.0], np.cumsum(0.5 * (spec_norm[1:] + spec_norm[:-1])
                          * np.diff(fine))])
    raw_log = -params.alpha_mdot * cumint
    m0, mf = x0[IDX_M], xf[IDX_M]
    kappa = np.log(mf / m0) / raw_log[-1] if raw_log[-1] != 0.0 else 1.0
    log_mass = np.log(m0) + kappa * raw_log

    states = np.zeros((knots, N_STATES))
    controls = np.zeros((knots, N_CONTROLS))
    infeasible = []
    for i, t in enumerate(times):
        r = _poly_eval(r_coef, t)
        v = _poly_eval(r_coef, t, der=1)
        a = _poly_eval(r_coef, t, der=2)
        th = _poly_eval(th_coef, t)
        thd = _poly_eval(th_coef, t, der=1)
        thdd = _poly_eval(th_coef, t, der=2)
        m = float(np.exp(np.interp(t, fine, log_mass)))

        tmap = euler_rate_map(th)
        omega = np.linalg.solve(tmap, thd)
        dt_dphi, dt_dth = euler_rate_map_partials(th)
        tdot = dt_dphi * thd[0] + dt_dth * thd[1]
        omega_dot = np.linalg.solve(tmap, thdd - tdot @ omega)

        dcm = euler_dcm(th)
        force = m * (dcm.T @ (a - g))
        torque = (params.inertia @ omega_dot
                  + np.cross(omega, params.inertia @ omega)
                  - np.cross(params.r_fuselage, force))

        states[i, IDX_M] = m
        states[i, IDX_R] = r
        states[i, IDX_V] = v
        states[i, IDX_TH] = th
        states[i, IDX_W] = omega
        controls[i, 0:3] = force
        controls[i, 3:6] = torque
        bad = control_violations(controls[i], params)
        if bad:
            infeasible.append((i, bad))

    # endpoint states meet the boundary conditions exactly
    states[0], states[-1] = x0, xf

    traj = NominalTrajectory(knot_times=times, states=states,
                             controls=controls,
                             infeasible_controls=infeasible)
    d = traj.midpoint_defects(params)
    traj.defect = {"max": float(d.max()), "mean": float(d.mean()),
                   "mass_exponent": float(kappa)}
    return traj
