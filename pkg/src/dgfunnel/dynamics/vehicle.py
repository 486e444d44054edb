"""Rigid-body powered-descent vehicle: state layout, dynamics f(x, u) and
analytic Jacobians.

State vector (n_x = 13)::

    x = [m, r_I(3), v_I(3), Theta(3), omega_B(3)]

with Theta = (phi, theta, psi) a 3-2-1 Euler sequence (roll, pitch, yaw) so
that state differences are plain vector differences.  Controls (n_u = 6) are
the body-frame thrust vector and the RCS torque::

    u = [F_B(3), tau_B(3)]

Dynamics::

    m'     = -alpha * ||F_B||
    r_I'   = v_I
    v_I'   = C_IB(Theta) F_B / m + g_I
    Theta' = T(Theta) omega_B
    w_B'   = J^{-1} (tau_B + r_F x F_B - w_B x J w_B)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SingularKinematics

N_STATES = 13
N_CONTROLS = 6

IDX_M = 0
IDX_R = slice(1, 4)
IDX_V = slice(4, 7)
IDX_TH = slice(7, 10)
IDX_W = slice(10, 13)

# reject pitch this close to the Euler singularity
PITCH_GUARD = np.pi / 2 - 1e-3


@dataclass
class VehicleParams:
    """Vehicle constants (defaults: Apollo-class lunar lander).

    Thrust/gimbal/torque limits describe the feasible control set; they are
    checked, not silently enforced, by the dynamics.
    """

    inertia: np.ndarray = field(
        default_factory=lambda: np.diag([13600.0, 13600.0, 19150.0]))
    r_fuselage: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, -0.25]))
    alpha_mdot: float = 4.5324e-4
    gravity: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, -1.62]))
    f_min: float = 5400.0
    f_max: float = 24750.0
    gimbal_max: float = np.deg2rad(25.0)
    torque_max: float = 150.0

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.r_fuselage = np.asarray(self.r_fuselage, dtype=float)
        self.gravity = np.asarray(self.gravity, dtype=float)
        if self.inertia.shape != (3, 3):
            raise ValueError("inertia must be 3x3")
        if not np.allclose(self.inertia, self.inertia.T):
            raise ValueError("inertia must be symmetric")
        if np.linalg.eigvalsh(self.inertia).min() <= 0:
            raise ValueError("inertia must be positive definite")
        self._j_inv = np.linalg.inv(self.inertia)

    @property
    def inertia_inv(self) -> np.ndarray:
        return self._j_inv


@dataclass
class State13:
    """Typed view of the 13-state vector; use as_array() on hot paths."""

    m: float
    r: np.ndarray
    v: np.ndarray
    theta_euler: np.ndarray
    omega: np.ndarray

    def as_array(self) -> np.ndarray:
        x = np.empty(N_STATES)
        x[IDX_M] = self.m
        x[IDX_R] = self.r
        x[IDX_V] = self.v
        x[IDX_TH] = self.theta_euler
        x[IDX_W] = self.omega
        return x

    @classmethod
    def from_array(cls, x) -> "State13":
        x = np.asarray(x, dtype=float)
        return cls(m=float(x[IDX_M]), r=x[IDX_R].copy(), v=x[IDX_V].copy(),
                   theta_euler=x[IDX_TH].copy(), omega=x[IDX_W].copy())


@dataclass
class Control6:
    force_body: np.ndarray
    torque_body: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force_body, self.torque_body])

    @classmethod
    def from_array(cls, u) -> "Control6":
        u = np.asarray(u, dtype=float)
        return cls(force_body=u[:3].copy(), torque_body=u[3:6].copy())


def check_state(x) -> None:
    """Enforce State13 invariants: m > 0, |pitch| below the Euler guard."""
    x = np.asarray(x)
    if x[IDX_M] <= 0.0:
        raise ValueError(f"mass must be positive, got {x[IDX_M]}")
    pitch = x[8]
    if abs(pitch) >= PITCH_GUARD:
        raise SingularKinematics(f"|pitch| = {abs(pitch):.6f} rad at or "
                                 f"beyond the {PITCH_GUARD:.6f} guard")


def hat(v) -> np.ndarray:
    """Cross-product matrix: hat(a) @ b == a x b."""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _rx(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(th):
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(psi):
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_dcm(theta) -> np.ndarray:
    """Body-to-inertial DCM C_IB for the 3-2-1 sequence (phi, theta, psi)."""
    phi, th, psi = theta
    return _rz(psi) @ _ry(th) @ _rx(phi)


def euler_dcm_partials(theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """dC/dphi, dC/dtheta, dC/dpsi as products of rotation factors."""
    phi, th, psi = theta
    rx, ry, rz = _rx(phi), _ry(th), _rz(psi)
    c, s = np.cos(phi), np.sin(phi)
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])
    c, s = np.cos(th), np.sin(th)
    dry = np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])
    c, s = np.cos(psi), np.sin(psi)
    drz = np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])
    return rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx


def euler_rate_map(theta) -> np.ndarray:
    """T(Theta) with Theta' = T(Theta) omega_B; singular at |pitch| = pi/2."""
    phi, th, _ = theta
    if abs(th) >= PITCH_GUARD:
        raise SingularKinematics(f"pitch {th:.6f} rad at or beyond guard")
    cph, sph = np.cos(phi), np.sin(phi)
    cth = np.cos(th)
    tth = np.tan(th)
    return np.array([[1.0, sph * tth, cph * tth],
                     [0.0, cph, -sph],
                     [0.0, sph / cth, cph / cth]])


def euler_rate_map_partials(theta) -> tuple[np.ndarray, np.ndarray]:
    """dT/dphi and dT/dtheta (dT/dpsi = 0)."""
    phi, th, _ = theta
    cph, sph = np.cos(phi), np.sin(phi)
    cth = np.cos(th)
    tth = np.tan(th)
    sec2 = 1.0 / cth**2
    dphi = np.array([[0.0, cph * tth, -sph * tth],
                     [0.0, -sph, -cph],
                     [0.0, cph / cth, -sph / cth]])
    dth = np.array([[0.0, sph * sec2, cph * sec2],
                    [0.0, 0.0, 0.0],
                    [0.0, sph * tth / cth, cph * tth / cth]])
    return dphi, dth


def eval_f(x, u, params: VehicleParams) -> np.ndarray:
    """State derivative f(x, u); raises SingularKinematics near |pitch|=pi/2."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    check_state(x)
    m = x[IDX_M]
    v = x[IDX_V]
    th = x[IDX_TH]
    w = x[IDX_W]
    force = u[:3]
    torque = u[3:6]

    out = np.empty(N_STATES)
    out[IDX_M] = -params.alpha_mdot * np.linalg.norm(force)
    out[IDX_R] = v
    out[IDX_V] = euler_dcm(th) @ force / m + params.gravity
    out[IDX_TH] = euler_rate_map(th) @ w
    jw = params.inertia @ w
    out[IDX_W] = params.inertia_inv @ (
        torque + np.cross(params.r_fuselage, force) - np.cross(w, jw))
    return out


def jacobians(x, u, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians (A, B) of f at (x, u)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    check_state(x)
    m = x[IDX_M]
    th = x[IDX_TH]
    w = x[IDX_W]
    force = u[:3]

    dcm = euler_dcm(th)
    dc_dphi, dc_dth, dc_dpsi = euler_dcm_partials(th)
    tmap = euler_rate_map(th)
    dt_dphi, dt_dth = euler_rate_map_partials(th)
    jinv = params.inertia_inv
    jmat = params.inertia

    a = np.zeros((N_STATES, N_STATES))
    a[IDX_R, IDX_V] = np.eye(3)
    a[IDX_V, IDX_M] = -dcm @ force / m**2
    a[IDX_V, IDX_TH] = np.column_stack(
        [dc_dphi @ force, dc_dth @ force, dc_dpsi @ force]) / m
    a[IDX_TH, IDX_TH] = np.column_stack(
        [dt_dphi @ w, dt_dth @ w, np.zeros(3)])
    a[IDX_TH, IDX_W] = tmap
    a[IDX_W, IDX_W] = -jinv @ (hat(w) @ jmat - hat(jmat @ w))

    b = np.zeros((N_STATES, N_CONTROLS))
    fn = np.linalg.norm(force)
    if fn > 0.0:
        b[IDX_M, 0:3] = -params.alpha_mdot * force / fn
    b[IDX_V, 0:3] = dcm / m
    b[IDX_W, 0:3] = jinv @ hat(params.r_fuselage)
    b[IDX_W, 3:6] = jinv
    return a, b


def control_violations(u, params: VehicleParams, tol: float = 1e-9) -> list[str]:
    """Names of the Control6 feasibility constraints violated by u."""
    u = np.asarray(u, dtype=float)
    force = u[:3]
    torque = u[3:6]
    fn = np.linalg.norm(force)
    out = []
    if fn < params.f_min - tol:
        out.append("thrust_below_min")
    if fn > params.f_max + tol:
        out.append("thrust_above_max")
    # gimbal angle measured from the body +z axis
    if fn > 0.0:
        cos_gimbal = np.clip(force[2] / fn, -1.0, 1.0)
        if np.arccos(cos_gimbal) > params.gimbal_max + tol:
            out.append("gimbal_above_max")
    if np.abs(torque).max() > params.torque_max + tol:
        out.append("torque_above_max")
    return out
