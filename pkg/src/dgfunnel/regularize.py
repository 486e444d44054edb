"""Rapid-regularizability test for a known disturbance model, the
matched/unmatched disturbance decomposition, and the invariant-ellipsoid
computation.

Per funnel node the certificate solves, for fixed lambda (line-searched),
the LMI in (K_tilde, sigma_star, nu, beta)::

    [[ QA' + AQ + T2,  g E,   nu gt E,  B Kt th + F S th,  0    ],
     [ g E',          -b I,   0,        0,                 0    ],
     [ nu gt E',       0,    -nu I,     0,                 0    ],
     [ *,              0,     0,       -lam sigma,         (G Kt th)' ],
     [ 0,              0,     0,        G Kt th,           -nu I ]]  <= 0

with T2 = Y'B' + BY - Q' + lam Q + beta (C_cl Q)'(C_cl Q), all funnel
quantities fixed data.  beta and nu enter linearly, so only lambda needs a
grid.  Control feasibility of the disturbance feedback is imposed as
(Kt th)' (R_max - K Q K')^{-1} (Kt th) <= margin, a sufficient ellipsoid
containment condition.

Everything runs in the same scaled coordinates as the synthesis; the
certificate stores physical-unit gains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np

from .errors import InfeasibleNode, SolverFailure
from .kernels import pinv, projector_complement, symmetrize
from .synthesis import SOLVER_ORDER, FunnelSolution

__all__ = [
    "RegularizabilityConfig",
    "RegularizabilityCertificate",
    "InvariantEllipsoid",
    "check_rapid_regularizable",
    "solve_gain_nodes",
    "decompose_disturbance",
    "invariant_ellipsoid",
    "save_certificate_json",
    "load_certificate_json",
    "GainNodeData",
]


@dataclass
class RegularizabilityConfig:
    lambda_grid: np.ndarray = field(
        default_factory=lambda: np.logspace(-3, 0.5, 8))
    control_margin: float = 0.9
    nu_min: float = 1e-9
    beta_min: float = 1e-9
    solver: str | None = None

    def __post_init__(self):
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)


@dataclass
class RegularizabilityCertificate:
    times: np.ndarray
    k_tilde: np.ndarray       # (N, nu, n_theta), physical units
    sigma_star: np.ndarray
    nu: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    feasible: np.ndarray
    lambda_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.k_tilde = np.asarray(self.k_tilde, dtype=float)
        self.sigma_star = np.asarray(self.sigma_star, dtype=float)
        self.feasible = np.asarray(self.feasible, dtype=bool)

    @property
    def all_feasible(self) -> bool:
        return bool(self.feasible.all())

    def k_tilde_at(self, t: float) -> np.ndarray:
        ts = self.times
        t = float(np.clip(t, ts[0], ts[-1]))
        k = int(np.searchsorted(ts, t, side="right") - 1)
        k = min(max(k, 0), ts.size - 2)
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1.0 - w) * self.k_tilde[k] + w * self.k_tilde[k + 1]


@dataclass
class InvariantEllipsoid:
    """Inner attractor level: sup_t ||vartheta(t)||^2 in scaled state
    coordinates, plus the per-sample norms and the Prop.-style comparison
    against sigma_star."""

    level: float
    grid: np.ndarray
    vartheta_samples: np.ndarray
    sigma_margin: np.ndarray  # sigma_star(t_k) - ||vartheta(t_k)||^2


@dataclass
class GainNodeData:
    """Scaled per-node data shared by the offline certificate and the
    online gain update."""

    t: float
    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    y: np.ndarray
    qdot: np.ndarray
    gamma: float
    w_ctrl_inv_sqrt: np.ndarray   # (R_max - K Q K')^{-1/2}, scaled


def _funnel_scales(funnel: FunnelSolution):
    cfg = funnel.config
    x_scale = np.asarray(cfg["x_scale"], dtype=float)
    u_scale = np.asarray(cfg["u_scale"], dtype=float)
    return x_scale, u_scale


def build_gain_node_data(funnel: FunnelSolution, nominal, spec,
                         r_max: np.ndarray | None = None):
    """Per-node scaled data (A, B, Q, Y, Q', gamma, control headroom)."""
    from .dynamics.vehicle import jacobians

    x_scale, u_scale = _funnel_scales(funnel)
    dxi = np.diag(1.0 / x_scale)
    dx = np.diag(x_scale)
    dui = np.diag(1.0 / u_scale)
    du = np.diag(u_scale)
    if r_max is None:
        r_max = np.diag(np.asarray(funnel.config["r_max_diag"], dtype=float))
    rmax_s = dui @ r_max @ dui

    times = funnel.times
    n = times.size
    q_s = np.stack([dxi @ qk @ dxi for qk in funnel.q])
    y_s = np.stack([dui @ yk @ dxi for yk in funnel.y])
    out = []
    for k in range(n):
        t = times[k]
        a, b = jacobians(nominal.state(t), nominal.control(t), spec.params)
        a_s = dxi @ a @ dx
        b_s = dxi @ b @ du
        seg = min(k, n - 2)
        hstep = times[seg + 1] - times[seg]
        qdot = (q_s[seg + 1] - q_s[seg]) / hstep
        k_s = y_s[k] @ np.linalg.inv(q_s[k])
        w_ctrl = symmetrize(rmax_s - k_s @ q_s[k] @ k_s.T)
        wv, we = np.linalg.eigh(w_ctrl)
        wv = np.clip(wv, 1e-9, None)
        w_inv_sqrt = we @ np.diag(1.0 / np.sqrt(wv)) @ we.T
        out.append(GainNodeData(t=float(t), a=a_s, b=b_s, q=q_s[k], y=y_s[k],
                                qdot=qdot, gamma=float(funnel.gamma[k]),
                                w_ctrl_inv_sqrt=w_inv_sqrt))
    return out


def _channel_mats_scaled(funnel: FunnelSolution, spec):
    x_scale, u_scale = _funnel_scales(funnel)
    q_scale = np.asarray(funnel.config["q_scale"], dtype=float)
    p_scale = np.asarray(funnel.config["p_scale"], dtype=float)
    h_s = (spec.h * (1.0 / q_scale)[:, None]) @ np.diag(x_scale)
    g_s = (spec.g * (1.0 / q_scale)[:, None]) @ np.diag(u_scale)
    e_s = np.diag(1.0 / x_scale) @ (spec.e * p_scale[None, :])
    return h_s, g_s, e_s


def _solve(prob: cp.Problem, solver: str | None):
    order = (solver,) if solver else SOLVER_ORDER
    last = None
    for name in order:
        try:
            prob.solve(solver=name)
            return
        except cp.error.SolverError as exc:  # pragma: no cover
            last = exc
    raise SolverFailure(f"all solvers failed: {last}")


def gain_lmi_block(node: GainNodeData, h_s, g_s, e_s, f_s, s_gen, theta,
                   gamma_tilde: float, lam, kt, sig, nu_v, beta_v):
    """Assemble the Theorem-style block (cvxpy expression or ndarray when
    all entries are numeric)."""
    nx = node.a.shape[0]
    n_p = e_s.shape[1]
    clq = h_s @ node.q + g_s @ node.y   # C_cl Q, scaled, data
    base = (node.q @ node.a.T + node.a @ node.q
            + node.y.T @ node.b.T + node.b @ node.y - node.qdot)
    qcc = clq.T @ clq
    push = node.b @ (kt @ theta) + f_s @ (s_gen @ theta)
    qtil = g_s @ (kt @ theta)
    t2 = base + lam * node.q + beta_v * qcc
    gam_e = node.gamma * e_s
    numeric = not isinstance(kt, cp.expressions.expression.Expression)
    rs = (lambda v, shape: np.reshape(v, shape)) if numeric else (
        lambda v, shape: cp.reshape(v, shape, order="C"))
    hs = np.hstack if numeric else cp.hstack
    vs = np.vstack if numeric else cp.vstack
    rows = [
        hs([t2, gam_e, nu_v * gamma_tilde * e_s, rs(push, (nx, 1)),
            np.zeros((nx, n_p))]),
        hs([gam_e.T, -beta_v * np.eye(n_p), np.zeros((n_p, n_p)),
            np.zeros((n_p, 1)), np.zeros((n_p, n_p))]),
        hs([nu_v * gamma_tilde * e_s.T, np.zeros((n_p, n_p)),
            -nu_v * np.eye(n_p), np.zeros((n_p, 1)), np.zeros((n_p, n_p))]),
        hs([rs(push, (1, nx)), np.zeros((1, n_p)), np.zeros((1, n_p)),
            rs(-lam * sig, (1, 1)), rs(qtil, (1, n_p))]),
        hs([np.zeros((n_p, nx)), np.zeros((n_p, n_p)), np.zeros((n_p, n_p)),
            rs(qtil, (n_p, 1)), -nu_v * np.eye(n_p)]),
    ]
    return vs(rows)


def _solve_node(node: GainNodeData, h_s, g_s, e_s, f_s, s_gen, theta,
                gamma_tilde: float, cfg: RegularizabilityConfig):
    """Line-search lambda (single compile, lambda as a Parameter); returns
    best (sigma, k_tilde_scaled, nu, beta, lam) or None."""
    nu_dim = node.b.shape[1]
    n_th = theta.size

    kt = cp.Variable((nu_dim, n_th))
    sig = cp.Variable(nonneg=True)
    nu_v = cp.Variable(nonneg=True)
    beta_v = cp.Variable(nonneg=True)
    lam_p = cp.Parameter(nonneg=True)

    blk = gain_lmi_block(node, h_s, g_s, e_s, f_s, s_gen, theta,
                         gamma_tilde, lam_p, kt, sig, nu_v, beta_v)
    dim = blk.shape[0]
    cons = [
        0.5 * (blk + blk.T) << np.zeros((dim, dim)),
        nu_v >= cfg.nu_min,
        beta_v >= cfg.beta_min,
        cp.norm(node.w_ctrl_inv_sqrt @ (kt @ theta))
        <= np.sqrt(cfg.control_margin),
    ]
    prob = cp.Problem(cp.Minimize(sig), cons)

    best = None
    for lam in cfg.lambda_grid:
        lam_p.value = float(lam)
        try:
            _solve(prob, cfg.solver)
        except SolverFailure:
            continue
        if prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            cand = (float(sig.value), np.array(kt.value),
                    float(nu_v.value), float(beta_v.value), float(lam))
            if best is None or cand[0] < best[0]:
                best = cand
    return best


def solve_gain_nodes(funnel: FunnelSolution, nominal, spec, f_basis,
                     s_gen, theta_of_t, cfg: RegularizabilityConfig,
                     node_mask=None) -> RegularizabilityCertificate:
    """Solve the per-node gain LMIs for a disturbance generator `s_gen` and
    parameter trajectory `theta_of_t` (callable).  Shared by the offline
    certificate (true S_tilde, true theta) and the online update (log of
    the estimate, predicted theta)."""
    nodes = build_gain_node_data(funnel, nominal, spec)
    h_s, g_s, e_s = _channel_mats_scaled(funnel, spec)
    x_scale, u_scale = _funnel_scales(funnel)
    f_s = np.diag(1.0 / x_scale) @ f_basis
    du = np.diag(u_scale)

    n = len(nodes)
    n_th = f_basis.shape[1]
    nu_dim = nodes[0].b.shape[1]
    k_tilde = np.zeros((n, nu_dim, n_th))
    sigma = np.full(n, np.nan)
    nu_out = np.full(n, np.nan)
    beta_out = np.full(n, np.nan)
    lam_out = np.full(n, np.nan)
    feas = np.zeros(n, dtype=bool)
    for k, node in enumerate(nodes):
        if node_mask is not None and not node_mask[k]:
            continue
        theta = np.asarray(theta_of_t(node.t), dtype=float)
        got = _solve_node(node, h_s, g_s, e_s, f_s, s_gen, theta,
                          funnel.gamma_tilde, cfg)
        if got is None:
            continue
        sigma[k], kt_s, nu_out[k], beta_out[k], lam_out[k] = got
        k_tilde[k] = du @ kt_s  # back to physical controls
        feas[k] = True
    return RegularizabilityCertificate(
        times=funnel.times, k_tilde=k_tilde, sigma_star=sigma, nu=nu_out,
        beta=beta_out, lam=lam_out, feasible=feas,
        lambda_grid=cfg.lambda_grid)


def check_rapid_regularizable(funnel: FunnelSolution, disturbance, spec,
                              nominal,
                              cfg: RegularizabilityConfig | None = None,
                              require_all: bool = False
                              ) -> RegularizabilityCertificate:
    """Theorem-style rapid-regularizability certificate for the known
    disturbance model: per funnel node, minimize sigma_star subject to the
    block LMI and the control-feasibility containment."""
    if cfg is None:
        cfg = RegularizabilityConfig()
    cert = solve_gain_nodes(funnel, nominal, spec, disturbance.basis,
                            disturbance.s_tilde, disturbance.theta,
                            cfg)
    if require_all and not cert.all_feasible:
        bad = [float(t) for t, f in zip(cert.times, cert.feasible) if not f]
        raise InfeasibleNode(f"not certified rapidly-regularizable at "
                             f"t = {bad}")
    return cert


def decompose_disturbance(b, f, s_tilde, theta, k_tilde
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Split B K~ theta + F S~ theta into range(B) and range(B)-perp parts.

    matched + unmatched reproduces the total exactly; unmatched is
    orthogonal to range(B)."""
    b = np.asarray(b, dtype=float)
    total = b @ (np.asarray(k_tilde) @ theta) + \
        np.asarray(f) @ (np.asarray(s_tilde) @ theta)
    unmatched = projector_complement(b) @ (
        np.asarray(f) @ (np.asarray(s_tilde) @ theta))
    matched = total - unmatched
    return matched, unmatched


def invariant_ellipsoid(funnel: FunnelSolution, disturbance, cert,
                        grid, nominal, spec) -> InvariantEllipsoid:
    """Level sup_t ||vartheta(t)||^2 of the inner invariant ellipsoid.

    vartheta = E dp~ + B K_hat theta + P_{R(B)perp} F S~ theta with
    K_hat = K~* + B^+ F S~; the channel term is bounded through the
    Lipschitz surrogate gamma_tilde ||G K~* theta||.  Norms are taken in
    the scaled state coordinates of the funnel."""
    from .dynamics.vehicle import jacobians

    x_scale, u_scale = _funnel_scales(funnel)
    dxi = np.diag(1.0 / x_scale)
    dx = np.diag(x_scale)
    du = np.diag(u_scale)
    dui = np.diag(1.0 / u_scale)
    _, g_s, e_s = _channel_mats_scaled(funnel, spec)
    e_norm = float(np.linalg.norm(e_s, 2))
    f_s = dxi @ disturbance.basis

    grid = np.asarray(grid, dtype=float)
    samples = np.empty(grid.size)
    for i, t in enumerate(grid):
        theta = disturbance.theta(t)
        _, b = jacobians(nominal.state(t), nominal.control(t), spec.params)
        b_s = dxi @ b @ du
        k_tilde = cert.k_tilde_at(t)
        kt_s = dui @ k_tilde
        k_hat_s = kt_s + pinv(b_s) @ f_s @ disturbance.s_tilde
        core = b_s @ (k_hat_s @ theta) + projector_complement(b_s) @ (
            f_s @ (disturbance.s_tilde @ theta))
        qtil = g_s @ (kt_s @ theta)
        samples[i] = np.linalg.norm(core) + \
            funnel.gamma_tilde * e_norm * np.linalg.norm(qtil)
    level = float(np.max(samples**2)) if grid.size else 0.0
    # compare against sigma_star at the certificate nodes
    sig_margin = np.full(cert.times.size, np.nan)
    for k, t in enumerate(cert.times):
        if not cert.feasible[k]:
            continue
        j = int(np.argmin(np.abs(grid - t))) if grid.size else -1
        if j >= 0:
            sig_margin[k] = cert.sigma_star[k] - samples[j]**2
    return InvariantEllipsoid(level=level, grid=grid,
                              vartheta_samples=samples,
                              sigma_margin=sig_margin)


def save_certificate_json(path, cert: RegularizabilityCertificate) -> None:
    doc = {
        "times": cert.times.tolist(),
        "k_tilde": [k.tolist() for k in cert.k_tilde],
        "sigma_star": cert.sigma_star.tolist(),
        "nu": cert.nu.tolist(),
        "beta": cert.beta.tolist(),
        "lambda": cert.lam.tolist(),
        "feasible": cert.feasible.astype(int).tolist(),
        "lambda_grid": cert.lambda_grid.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_certificate_json(path) -> RegularizabilityCertificate:
    doc = json.loads(Path(path).read_text())
    return RegularizabilityCertificate(
        times=np.asarray(doc["times"]),
        k_tilde=np.asarray(doc["k_tilde"]),
        sigma_star=np.asarray(doc["sigma_star"]),
        nu=np.asarray(doc["nu"]), beta=np.asarray(doc["beta"]),
        lam=np.asarray(doc["lambda"]),
        feasible=np.asarray(doc["feasible"], dtype=bool),
        lambda_grid=np.asarray(doc.get("lambda_grid", [])))
