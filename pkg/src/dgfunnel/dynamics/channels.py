"""Structured nonlinearity channels.

The dynamics decompose exactly as::

    f(x, u) = c0 + A0 x + B0 u + E psi(H x + G u)

with q = Hx + Gu in R^16 stacking (m, Theta, Theta, omega, omega, F_B) and
six raw channels psi producing p in R^16 (three-vector outputs feeding v',
Theta' and omega', one scalar feeding m').  Around a nominal point q_bar the
time-varying channel function is the linearization remainder::

    phi(t, q) = psi(q) - Dpsi(q_bar(t)) q

so that delta_p = phi(t,q) - phi(t,q_bar) = psi(q) - psi(q_bar)
- Dpsi(q_bar) delta_q carries the exact second-order rest term and
E delta_p == f(x,u) - f(xb,ub) - A eta - B xi with (A, B) the true
Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateRegion
from .vehicle import (
    IDX_M,
    IDX_TH,
    IDX_W,
    N_CONTROLS,
    N_STATES,
    VehicleParams,
    euler_dcm,
    euler_dcm_partials,
    euler_rate_map,
    euler_rate_map_partials,
    hat,
)

N_Q = 16
N_P = 16

# q slices
Q_M = slice(0, 1)
Q_TH_A = slice(1, 4)
Q_TH_B = slice(4, 7)
Q_W_A = slice(7, 10)
Q_W_B = slice(10, 13)
Q_F = slice(13, 16)

# p slices
P_THRUST_ATT = slice(0, 3)   # attitude coupling of thrust accel -> v'
P_THRUST_MASS = slice(3, 6)  # mass-normalized thrust -> v'
P_EULER_TILT = slice(6, 9)   # tilt row of T(Theta) - I -> Theta'
P_EULER_BANK = slice(9, 12)  # bank/heading rows of T(Theta) - I -> Theta'
P_GYRO = slice(12, 15)       # gyroscopic coupling -> omega'
P_MASSRATE = slice(15, 16)   # thrust-magnitude mass depletion -> m'


@dataclass
class ChannelSpec:
    """Channel matrices and Lipschitz data for the LMI machinery.

    channel_partition lists (q_slice, p_slice) pairs; the q slices partition
    the 16 q rows.  gamma holds one bound per channel, gamma_tilde the bound
    for the control-shift channel; both are in the scaled coordinates given
    by q_scale/p_scale.
    """

    h: np.ndarray
    g: np.ndarray
    e: np.ndarray
    channel_partition: list[tuple[slice, slice]]
    params: VehicleParams
    gamma: np.ndarray | None = None
    gamma_tilde: float | None = None
    q_scale: np.ndarray = field(default_factory=lambda: np.ones(N_Q))
    p_scale: np.ndarray = field(default_factory=lambda: np.ones(N_P))

    def __post_init__(self):
        assert self.h.shape == (N_Q, N_STATES)
        assert self.g.shape == (N_Q, N_CONTROLS)
        assert self.e.shape == (N_STATES, N_P)
        covered = np.zeros(N_Q, dtype=bool)
        for qs, _ in self.channel_partition:
            assert not covered[qs].any(), "q slices must not overlap"
            covered[qs] = True
        assert covered.all(), "q slices must cover all q rows"


def make_channel_spec(params: VehicleParams,
                      q_scale: np.ndarray | None = None,
                      p_scale: np.ndarray | None = None) -> ChannelSpec:
    """Build H (16x13), G (16x6), E (13x16) and the channel partition."""
    h = np.zeros((N_Q, N_STATES))
    h[Q_M, IDX_M] = 1.0
    h[Q_TH_A, IDX_TH] = np.eye(3)
    h[Q_TH_B, IDX_TH] = np.eye(3)
    h[Q_W_A, IDX_W] = np.eye(3)
    h[Q_W_B, IDX_W] = np.eye(3)

    g = np.zeros((N_Q, N_CONTROLS))
    g[Q_F, 0:3] = np.eye(3)

    e = np.zeros((N_STATES, N_P))
    e[4:7, P_THRUST_ATT] = np.eye(3)
    e[4:7, P_THRUST_MASS] = np.eye(3)
    e[7:10, P_EULER_TILT] = np.eye(3)
    e[7:10, P_EULER_BANK] = np.eye(3)
    e[10:13, P_GYRO] = np.eye(3)
    e[IDX_M, P_MASSRATE] = 1.0

    partition = [
        (Q_TH_A, P_THRUST_ATT),
        (Q_M, P_THRUST_MASS),
        (Q_TH_B, P_EULER_TILT),
        (Q_W_A, P_EULER_BANK),
        (Q_W_B, P_GYRO),
        (Q_F, P_MASSRATE),
    ]
    spec = ChannelSpec(h=h, g=g, e=e, channel_partition=partition,
                       params=params)
    if q_scale is not None:
        spec.q_scale = np.asarray(q_scale, dtype=float)
    if p_scale is not None:
        spec.p_scale = np.asarray(p_scale, dtype=float)
    return spec


def _tilt_rest(theta):
    """Row 1 of T(Theta) - I (tilt coupling)."""
    n = np.zeros((3, 3))
    n[0, :] = euler_rate_map(theta)[0, :] - np.array([1.0, 0.0, 0.0])
    return n


def _bank_rest(theta):
    """Rows 2-3 of T(Theta) - I."""
    n = euler_rate_map(theta) - np.eye(3)
    n[0, :] = 0.0
    return n


def psi(q, params: VehicleParams) -> np.ndarray:
    """Raw channel nonlinearities; f = c0 + A0 x + B0 u + E psi(q)."""
    q = np.asarray(q, dtype=float)
    m = q[Q_M][0]
    th_a = q[Q_TH_A]
    th_b = q[Q_TH_B]
    w_a = q[Q_W_A]
    w_b = q[Q_W_B]
    force = q[Q_F]

    p = np.empty(N_P)
    p[P_THRUST_ATT] = (euler_dcm(th_a) - np.eye(3)) @ force / m
    p[P_THRUST_MASS] = force / m
    p[P_EULER_TILT] = _tilt_rest(th_b) @ w_a
    p[P_EULER_BANK] = _bank_rest(th_b) @ w_a
    jw = params.inertia @ w_b
    p[P_GYRO] = -params.inertia_inv @ np.cross(w_b, jw)
    p[P_MASSRATE] = -params.alpha_mdot * np.linalg.norm(force)
    return p


def psi_jacobian(q, params: VehicleParams) -> np.ndarray:
    """Analytic 16x16 Jacobian of psi."""
    q = np.asarray(q, dtype=float)
    m = q[Q_M][0]
    th_a = q[Q_TH_A]
    th_b = q[Q_TH_B]
    w_a = q[Q_W_A]
    w_b = q[Q_W_B]
    force = q[Q_F]

    d = np.zeros((N_P, N_Q))

    dcm = euler_dcm(th_a)
    dphi, dth, dpsi_ = euler_dcm_partials(th_a)
    d[P_THRUST_ATT, Q_M] = (-(dcm - np.eye(3)) @ force / m**2).reshape(3, 1)
    d[P_THRUST_ATT, Q_TH_A] = np.column_stack(
        [dphi @ force, dth @ force, dpsi_ @ force]) / m
    d[P_THRUST_ATT, Q_F] = (dcm - np.eye(3)) / m

    d[P_THRUST_MASS, Q_M] = (-force / m**2).reshape(3, 1)
    d[P_THRUST_MASS, Q_F] = np.eye(3) / m

    t_dphi, t_dth = euler_rate_map_partials(th_b)
    tilt_dphi = np.zeros((3, 3))
    tilt_dphi[0, :] = t_dphi[0, :]
    tilt_dth = np.zeros((3, 3))
    tilt_dth[0, :] = t_dth[0, :]
    bank_dphi = t_dphi.copy()
    bank_dphi[0, :] = 0.0
    bank_dth = t_dth.copy()
    bank_dth[0, :] = 0.0
    d[P_EULER_TILT, Q_TH_B] = np.column_stack(
        [tilt_dphi @ w_a, tilt_dth @ w_a, np.zeros(3)])
    d[P_EULER_TILT, Q_W_A] = _tilt_rest(th_b)
    d[P_EULER_BANK, Q_TH_B] = np.column_stack(
        [bank_dphi @ w_a, bank_dth @ w_a, np.zeros(3)])
    d[P_EULER_BANK, Q_W_A] = _bank_rest(th_b)

    jmat = params.inertia
    d[P_GYRO, Q_W_B] = -params.inertia_inv @ (hat(w_b) @ jmat - hat(jmat @ w_b))

    fn = np.linalg.norm(force)
    if fn > 0.0:
        d[P_MASSRATE, Q_F] = -params.alpha_mdot * force / fn
    return d


def q_of(x, u, spec: ChannelSpec) -> np.ndarray:
    return spec.h @ np.asarray(x, dtype=float) + spec.g @ np.asarray(u, dtype=float)


def eval_channels(x, u, nominal_x, nominal_u,
                  spec: ChannelSpec) -> tuple[np.ndarray, np.ndarray]:
    """(delta_q, delta_p) around the nominal point.

    E @ delta_p reproduces f(x,u) - f(xb,ub) - A eta - B xi exactly, with
    (A, B) the Jacobians at the nominal.
    """
    qv = q_of(x, u, spec)
    qb = q_of(nominal_x, nominal_u, spec)
    delta_q = qv - qb
    dpsi = psi_jacobian(qb, spec.params)
    delta_p = psi(qv, spec.params) - psi(qb, spec.params) - dpsi @ delta_q
    return delta_q, delta_p


def eval_channel_shift(q_abs, q_shift, q_bar, spec: ChannelSpec) -> np.ndarray:
    """delta_p_tilde = phi(t, q + q_shift) - phi(t, q): the extra channel
    output induced by a control shift (the disturbance-feedback term)."""
    dpsi = psi_jacobian(np.asarray(q_bar, dtype=float), spec.params)
    qa = np.asarray(q_abs, dtype=float)
    qs = np.asarray(q_shift, dtype=float)
    return psi(qa + qs, spec.params) - psi(qa, spec.params) - dpsi @ qs


def lipschitz_bound(fn, sample_pairs, safety: float = 1.2) -> float:
    """Largest sampled ratio ||fn(a) - fn(b)|| / ||a - b|| times a safety
    factor.  sample_pairs yields (a, b) with a != b."""
    worst = 0.0
    for a, b in sample_pairs:
        d = np.linalg.norm(np.asarray(a) - np.asarray(b))
        if d == 0.0:
            continue
        worst = max(worst, np.linalg.norm(fn(a) - fn(b)) / d)
    return safety * worst


def _ellipsoid_sampler(q_max_sqrt, r_max_sqrt, rng):
    nx = q_max_sqrt.shape[0]
    nu = r_max_sqrt.shape[0]

    def draw():
        ex = rng.standard_normal(nx)
        ex *= rng.uniform() ** (1.0 / nx) / np.linalg.norm(ex)
        eu = rng.standard_normal(nu)
        eu *= rng.uniform() ** (1.0 / nu) / np.linalg.norm(eu)
        return q_max_sqrt @ ex, r_max_sqrt @ eu

    return draw


def estimate_lipschitz(spec: ChannelSpec, nominal_q_points, q_max_sqrt,
                       r_max_sqrt, n_samples: int = 10_000,
                       rng: np.random.Generator | None = None,
                       safety: float = 1.2,
                       pairwise: bool = False
                       ) -> tuple[np.ndarray, float, float]:
    """Sampled Lipschitz bounds (per-channel gamma vector, gamma_tilde) of
    the remainder channels over the deviation region.

    nominal_q_points: iterable of nominal q_bar vectors (the region follows
    the nominal); q_max_sqrt/r_max_sqrt: symmetric square roots of the state
    and control bound ellipsoid shapes.  Ratios are measured in the scaled
    channel coordinates (spec.q_scale / spec.p_scale), matching the LMIs.

    pairwise=False (default) bounds ||phi(qb + dq) - phi(qb)|| / ||dq||,
    the quantity the funnel multiplier needs; pairwise=True bounds the
    two-sided ratio ||phi(q1) - phi(q2)|| / ||q1 - q2|| over the region,
    which is stronger and roughly twice as conservative.

    Returns (per-channel bounds, control-shift bound, stacked bound); the
    stacked bound uses the full delta_p vector directly and is what the
    diag(gamma^2 I, -I) multiplier needs (summing per-channel bounds in
    quadrature double-counts).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    q_max_sqrt = np.asarray(q_max_sqrt, dtype=float)
    r_max_sqrt = np.asarray(r_max_sqrt, dtype=float)
    if q_max_sqrt.size and np.linalg.norm(q_max_sqrt) == 0.0:
        raise DegenerateRegion("state region has zero volume")
    qbars = [np.asarray(qb, dtype=float) for qb in nominal_q_points]
    if not qbars:
        raise DegenerateRegion("no nominal points supplied")
    draw = _ellipsoid_sampler(q_max_sqrt, r_max_sqrt, rng)

    h, g = spec.h, spec.g
    dq_scale = spec.q_scale
    dp_scale = spec.p_scale
    n_ch = len(spec.channel_partition)
    worst = np.zeros(n_ch)
    worst_tilde = 0.0
    worst_full = 0.0
    per_point = max(1, n_samples // len(qbars))
    for qb in qbars:
        dpsi = psi_jacobian(qb, spec.params)
        pb = psi(qb, spec.params)
        for _ in range(per_point):
            eta1, xi1 = draw()
            if pairwise:
                eta2, xi2 = draw()
            else:
                eta2 = np.zeros_like(eta1)
                xi2 = np.zeros_like(xi1)
            q1 = qb + h @ eta1 + g @ xi1
            q2 = qb + h @ eta2 + g @ xi2
            dq = (q1 - q2) / dq_scale
            nd = np.linalg.norm(dq)
            if nd == 0.0:
                continue
            p2 = pb if not pairwise else psi(q2, spec.params)
            dp = (psi(q1, spec.params) - p2 - dpsi @ (q1 - q2)) / dp_scale
            for k, (_, ps) in enumerate(spec.channel_partition):
                worst[k] = max(worst[k], np.linalg.norm(dp[ps]) / nd)
            worst_full = max(worst_full, np.linalg.norm(dp) / nd)
            # control-shift channel: shift through G only
            q_shift = g @ (xi2 - xi1) if pairwise else g @ xi1
            nq = np.linalg.norm((q_shift / dq_scale))
            if nq > 0.0:
                dpt = (psi(q1 + q_shift, spec.params)
                       - psi(q1, spec.params) - dpsi @ q_shift) / dp_scale
                worst_tilde = max(worst_tilde, np.linalg.norm(dpt) / nq)
    return safety * worst, safety * worst_tilde, safety * worst_full


def sample_channel_magnitudes(spec: ChannelSpec, nominal_q_points,
                              q_max_sqrt, r_max_sqrt, n_samples: int = 2000,
                              rng: np.random.Generator | None = None
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Largest sampled per-block |delta_p| and |delta_q| (physical units)
    over the deviation region; used to calibrate the channel scaling."""
    if rng is None:
        rng = np.random.default_rng(0)
    qbars = [np.asarray(qb, dtype=float) for qb in nominal_q_points]
    draw = _ellipsoid_sampler(np.asarray(q_max_sqrt, dtype=float),
                              np.asarray(r_max_sqrt, dtype=float), rng)
    n_ch = len(spec.channel_partition)
    dp_max = np.zeros(n_ch)
    dq_max = np.zeros(n_ch)
    per_point = max(1, n_samples // len(qbars))
    for qb in qbars:
        dpsi = psi_jacobian(qb, spec.params)
        pb = psi(qb, spec.params)
        for _ in range(per_point):
            eta, xi = draw()
            dq = spec.h @ eta + spec.g @ xi
            dp = psi(qb + dq, spec.params) - pb - dpsi @ dq
            for k, (qsl, psl) in enumerate(spec.channel_partition):
                dp_max[k] = max(dp_max[k], np.linalg.norm(dp[psl]))
                dq_max[k] = max(dq_max[k], np.linalg.norm(dq[qsl]))
    return dp_max, dq_max


def stacked_gamma(gamma_per_channel: np.ndarray) -> float:
    """Single gamma valid for the stacked channel map given per-channel
    bounds against the full delta_q: ||dp||^2 = sum ||dp_k||^2 <=
    (sum gamma_k^2) ||dq||^2."""
    return float(np.sqrt(np.sum(np.square(gamma_per_channel))))
