"""Quadratic funnel synthesis: maximize log det Q(t0) subject to the
time-discretized differential LMIs.

Discretization: first-order hold on (Q, Y) with forward-difference Q';
each segment's LMI is imposed at both endpoints with the segment slope.
The bilinear multiplier lambda is handled by a line search over a log grid
(the gamma-iteration stand-in); for fixed lambda the quadratic term
lam * gamma^2 (HQ + GY)^T (HQ + GY) is rendered convex by a Schur block
row [sqrt(lam) gamma (HQ + GY), -I].

All solves run in scaled coordinates (state/control deviations divided by
the Q_max/R_max semi-axes, channels divided by the configured q/p scales);
solutions and files are in physical units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np

from .errors import Infeasible, SingularQ, SolverFailure
from .kernels import symmetrize

__all__ = [
    "SynthesisConfig",
    "FunnelSolution",
    "LtvData",
    "assemble_node_lmi",
    "synthesize",
    "synthesize_ltv",
    "verify_funnel",
    "ellipsoid_membership",
    "save_funnel_json",
    "load_funnel_json",
    "default_lambda_grid",
]

SOLVER_ORDER = ("CLARABEL", "SCS")


def default_lambda_grid(n: int = 12, lo: float = 1e-2, hi: float = 1e3):
    return np.logspace(np.log10(lo), np.log10(hi), n)


def det_rootn_epigraph(q: cp.Variable):
    """Concave det(Q)^(1/n) objective via the standard PSD + geometric-mean
    epigraph (no exponential cones; interior-point solvers behave much
    better on it than on log_det for this problem family)."""
    n = q.shape[0]
    z = cp.Variable((n, n))
    d = cp.diag(z)
    cons = [z[i, j] == 0 for i in range(n) for j in range(i + 1, n)]
    cons.append(cp.bmat([[q, z], [z.T, cp.diag(d)]]) >> 0)
    return cp.geo_mean(d), cons


@dataclass
class SynthesisConfig:
    """Knobs for the funnel SDP.

    gamma: None (estimate per node), scalar, or per-node array of stacked
    channel Lipschitz bounds in scaled channel coordinates.
    """

    node_count: int
    alpha: float
    q_max: np.ndarray
    r_max: np.ndarray
    q_max_terminal: np.ndarray | None = None
    kappa_tol: float = 0.5
    lambda_grid: np.ndarray = field(default_factory=default_lambda_grid)
    gamma: float | np.ndarray | None = None
    gamma_tilde: float | None = None
    gamma_safety: float = 1.2
    gamma_samples: int = 10_000
    node_margin: float = 1e-4
    eps_pd: float = 1e-6
    seed: int = 0
    solver: str | None = None

    def __post_init__(self):
        self.q_max = np.asarray(self.q_max, dtype=float)
        self.r_max = np.asarray(self.r_max, dtype=float)
        if self.node_count < 2:
            raise ValueError("need at least 2 nodes")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if np.linalg.eigvalsh(self.q_max).min() <= 0:
            raise ValueError("q_max must be positive definite")
        if np.linalg.eigvalsh(self.r_max).min() <= 0:
            raise ValueError("r_max must be positive definite")
        if self.kappa_tol <= 0:
            raise ValueError("kappa_tol must be positive")
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)
        if self.lambda_grid.size and (self.lambda_grid <= 0).any():
            raise ValueError("lambda grid must be positive")


@dataclass
class LtvData:
    """Scaled LTV data on the synthesis grid: per-node A, B and channel
    matrices (empty channel dimension allowed)."""

    times: np.ndarray
    a: list
    b: list
    h: np.ndarray
    g: np.ndarray
    e: np.ndarray
    gamma: np.ndarray  # per node

    @property
    def n_x(self) -> int:
        return self.a[0].shape[0]

    @property
    def n_u(self) -> int:
        return self.b[0].shape[1]

    @property
    def n_q(self) -> int:
        return self.h.shape[0]

    @property
    def n_p(self) -> int:
        return self.e.shape[1]


@dataclass
class FunnelSolution:
    """Time-sampled funnel (Q, Y, K, lambda) in physical units."""

    times: np.ndarray
    q: np.ndarray          # (N, nx, nx)
    y: np.ndarray          # (N, nu, nx)
    k: np.ndarray          # (N, nu, nx)
    lam: float
    gamma: np.ndarray      # per node (scaled channel coordinates)
    gamma_tilde: float
    objective: float       # log det Q(t0), physical units
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.k = np.asarray(self.k, dtype=float)
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))

    def _interp(self, table: np.ndarray, t: float) -> np.ndarray:
        ts = self.times
        t = float(np.clip(t, ts[0], ts[-1]))
        kk = int(np.searchsorted(ts, t, side="right") - 1)
        kk = min(max(kk, 0), ts.size - 2)
        w = (t - ts[kk]) / (ts[kk + 1] - ts[kk])
        return (1.0 - w) * table[kk] + w * table[kk + 1]

    def q_at(self, t: float) -> np.ndarray:
        return self._interp(self.q, t)

    def y_at(self, t: float) -> np.ndarray:
        return self._interp(self.y, t)

    def k_at(self, t: float) -> np.ndarray:
        return self._interp(self.k, t)

    @property
    def entry_semi_axes(self) -> np.ndarray:
        """1-D projection semi-axes of the entry ellipsoid: sqrt(diag Q(t0))."""
        return np.sqrt(np.diag(self.q[0]))


def ellipsoid_membership(q, eta) -> tuple[bool, float]:
    """(inside, value) with value = eta^T Q^{-1} eta."""
    q = symmetrize(np.asarray(q, dtype=float))
    eta = np.asarray(eta, dtype=float)
    w = np.linalg.eigvalsh(q)
    if w.min() <= 0:
        raise SingularQ(f"Q not positive definite (min eig {w.min():.3e})")
    value = float(eta @ np.linalg.solve(q, eta))
    return value <= 1.0, value


def assemble_node_lmi(a, b, e, h, g, gamma: float, lam, alpha: float,
                      q, y, qdot):
    """The funnel LMI block for one node (cvxpy expression or ndarray).

    Layout: [[QA' + AQ + Y'B' + BY - Q' + alpha Q,  E,     sqrt(lam) g (HQ+GY)'],
             [E',                                  -lam I,  0],
             [sqrt(lam) g (HQ+GY),                  0,      -I]]
    With no channels (n_q = 0) only the first block remains.
    """
    n_q = h.shape[0] if h is not None else 0
    n_p = e.shape[1] if e is not None and e.size else 0
    t1 = q @ a.T + a @ q + y.T @ b.T + b @ y - qdot + alpha * q
    if n_q == 0 and n_p == 0:
        return t1
    sqrt_lam = np.sqrt(lam)
    cl = h @ q + g @ y if n_q else None
    rows = [
        _hstack([t1, e, sqrt_lam * gamma * cl.T]),
        _hstack([e.T, -lam * np.eye(n_p), np.zeros((n_p, n_q))]),
        _hstack([sqrt_lam * gamma * cl, np.zeros((n_q, n_p)),
                 -np.eye(n_q)]),
    ]
    return _vstack(rows)


def _hstack(blocks):
    if any(isinstance(b, cp.expressions.expression.Expression) for b in blocks):
        return cp.hstack(blocks)
    return np.hstack(blocks)


def _vstack(blocks):
    if any(isinstance(b, cp.expressions.expression.Expression) for b in blocks):
        return cp.vstack(blocks)
    return np.vstack(blocks)


def _lmi_param(a, b, e, h, g, gamma, lam_p, sqrt_lam_p, alpha, q, y, qdot):
    """Parametric variant (lambda as cvxpy Parameters) for grid reuse."""
    n_q = h.shape[0]
    n_p = e.shape[1]
    t1 = q @ a.T + a @ q + y.T @ b.T + b @ y - qdot + alpha * q
    if n_q == 0 and n_p == 0:
        return t1
    cl = h @ q + g @ y
    scaled_cl = gamma * cp.multiply(sqrt_lam_p, cl)
    rows = [
        cp.hstack([t1, e, scaled_cl.T]),
        cp.hstack([e.T, -lam_p * np.eye(n_p), np.zeros((n_p, n_q))]),
        cp.hstack([scaled_cl, np.zeros((n_q, n_p)), -np.eye(n_q)]),
    ]
    return cp.vstack(rows)


def _solve(prob: cp.Problem, solver: str | None):
    order = (solver,) if solver else SOLVER_ORDER
    last = None
    for name in order:
        try:
            prob.solve(solver=name)
            return
        except cp.error.SolverError as exc:  # pragma: no cover - env specific
            last = exc
    raise SolverFailure(f"all solvers failed: {last}")


def synthesize_ltv(data: LtvData, config: SynthesisConfig) -> FunnelSolution:
    """Core solve on prepared (scaled) LTV data; returns a scaled solution
    (caller rescales).  lambda line search with kappa_tol-driven refinement."""
    n = data.times.size
    nx, nu, nq, npch = data.n_x, data.n_u, data.n_q, data.n_p
    qmax = config.q_max
    rmax = config.r_max

    qs = [cp.Variable((nx, nx), symmetric=True, name=f"Q{k}") for k in range(n)]
    ys = [cp.Variable((nu, nx), name=f"Y{k}") for k in range(n)]
    lam_p = cp.Parameter(nonneg=True, name="lam")
    sqrt_lam_p = cp.Parameter(nonneg=True, name="sqrt_lam")

    objective, cons = det_rootn_epigraph(qs[0])
    margin = config.node_margin
    for k in range(n):
        cons.append(qs[k] >> config.eps_pd * np.eye(nx))
        cons.append(qs[k] << qmax)
        cons.append(cp.bmat([[qs[k], ys[k].T], [ys[k], rmax]]) >> 0)
    if config.q_max_terminal is not None:
        cons.append(qs[-1] << np.asarray(config.q_max_terminal, dtype=float))
    dim = nx + nq + npch
    for k in range(n - 1):
        hstep = data.times[k + 1] - data.times[k]
        qdot = (qs[k + 1] - qs[k]) / hstep
        for j, gam in ((k, data.gamma[k]), (k + 1, data.gamma[k + 1])):
            blk = _lmi_param(data.a[j], data.b[j], data.e, data.h, data.g,
                             gam, lam_p, sqrt_lam_p, config.alpha,
                             qs[j], ys[j], qdot)
            if blk.shape[0] > data.n_x:
                blk = 0.5 * (blk + blk.T)
            cons.append(blk << -margin * np.eye(dim))

    prob = cp.Problem(cp.Maximize(objective), cons)

    def attempt(lam_val: float):
        lam_p.value = lam_val
        sqrt_lam_p.value = np.sqrt(lam_val)
        try:
            _solve(prob, config.solver)
        except SolverFailure:
            return None
        if prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            qv = np.stack([symmetrize(q.value) for q in qs])
            sign, logdet = np.linalg.slogdet(qv[0])
            if sign <= 0:
                return None
            return (float(logdet), qv, np.stack([y.value for y in ys]))
        return None

    grid = (list(config.lambda_grid) if nq else [1.0])
    results = {}
    for lam_val in grid:
        results[lam_val] = attempt(lam_val)
    feas = {lv: r for lv, r in results.items() if r is not None}
    if not feas:
        status = {f"{lv:g}": "infeasible" for lv in results}
        raise Infeasible(f"no lambda on the grid admits a funnel: {status}")

    # refine around the best grid point until the log10 gap <= kappa_tol
    if nq:
        glog = np.log10(np.asarray(sorted(results)))
        gap = np.diff(glog).max() if glog.size > 1 else 0.0
        while gap > config.kappa_tol:
            best = max(feas, key=lambda lv: feas[lv][0])
            lo = max([lv for lv in results if lv < best], default=None)
            hi = min([lv for lv in results if lv > best], default=None)
            new_pts = []
            if lo is not None:
                new_pts.append(10 ** (0.5 * (np.log10(lo) + np.log10(best))))
            if hi is not None:
                new_pts.append(10 ** (0.5 * (np.log10(best) + np.log10(hi))))
            for lv in new_pts:
                results[lv] = attempt(lv)
                if results[lv] is not None:
                    feas[lv] = results[lv]
            gap *= 0.5

    best_lam = max(feas, key=lambda lv: feas[lv][0])
    obj, qv, yv = feas[best_lam]
    kv = np.stack([yv[k] @ np.linalg.inv(qv[k]) for k in range(n)])
    return FunnelSolution(times=data.times, q=qv, y=yv, k=kv,
                          lam=float(best_lam), gamma=data.gamma,
                          gamma_tilde=config.gamma_tilde or 0.0,
                          objective=obj)


def scaling_from_config(config: SynthesisConfig):
    """State/control scales: ellipsoid semi-axes of the diagonal bounds."""
    x_scale = np.sqrt(np.diag(config.q_max))
    u_scale = np.sqrt(np.diag(config.r_max))
    return x_scale, u_scale


def channel_scales(spec, x_scale, u_scale, nominal=None, n_samples: int = 2000,
                   rng=None):
    """q/p scales for the channel coordinates.

    q rows take the magnitude reachable through |H| x_scale + |G| u_scale.
    p columns are calibrated empirically (largest sampled |delta_p| per
    block over the deviation region) so the multiplier bound
    ||dp_scaled|| <= gamma ||dq_scaled|| is balanced per channel; without a
    nominal they fall back to the feeding state-row scale.
    """
    from .dynamics.channels import q_of, sample_channel_magnitudes

    q_scale = np.abs(spec.h) @ x_scale + np.abs(spec.g) @ u_scale
    q_scale[q_scale == 0.0] = 1.0
    p_scale = np.empty(spec.e.shape[1])
    for j in range(spec.e.shape[1]):
        rows = np.nonzero(spec.e[:, j])[0]
        p_scale[j] = x_scale[rows].min() if rows.size else 1.0
    if nominal is not None:
        ts = np.linspace(nominal.t0, nominal.tf, 9)
        qbars = [q_of(nominal.state(t), nominal.control(t), spec) for t in ts]
        dp_max, _ = sample_channel_magnitudes(
            spec, qbars, _sqrtm_psd(np.diag(x_scale**2)),
            _sqrtm_psd(np.diag(u_scale**2)), n_samples=n_samples, rng=rng)
        for k, (_, psl) in enumerate(spec.channel_partition):
            if dp_max[k] > 0.0:
                dim = psl.stop - psl.start
                p_scale[psl] = dp_max[k] / np.sqrt(dim)
    return q_scale, p_scale


def build_ltv_data(config: SynthesisConfig, nominal, spec) -> tuple[LtvData, dict]:
    """Scaled LTV data on the node grid from nominal + channel spec.

    Returns (data, scales dict).  Estimates per-node gammas when the config
    does not fix them.
    """
    from .dynamics.channels import estimate_lipschitz, q_of, stacked_gamma
    from .dynamics.vehicle import jacobians

    times = np.linspace(nominal.t0, nominal.tf, config.node_count)
    x_scale, u_scale = scaling_from_config(config)
    q_scale, p_scale = channel_scales(
        spec, x_scale, u_scale, nominal=nominal,
        rng=np.random.default_rng(config.seed + 1))
    spec.q_scale = q_scale
    spec.p_scale = p_scale

    dxi = np.diag(1.0 / x_scale)
    dx = np.diag(x_scale)
    du = np.diag(u_scale)
    a_s, b_s = [], []
    for t in times:
        a, b = jacobians(nominal.state(t), nominal.control(t), spec.params)
        a_s.append(dxi @ a @ dx)
        b_s.append(dxi @ b @ du)
    h_s = (spec.h * (1.0 / q_scale)[:, None]) @ dx
    g_s = (spec.g * (1.0 / q_scale)[:, None]) @ du
    e_s = dxi @ (spec.e * p_scale[None, :])

    if config.gamma is None:
        rng = np.random.default_rng(config.seed)
        sqrt_qmax = _sqrtm_psd(config.q_max)
        sqrt_rmax = _sqrtm_psd(config.r_max)
        per_node = max(500, config.gamma_samples // config.node_count)
        gammas = np.empty(times.size)
        g_tilde_all = 0.0
        for i, t in enumerate(times):
            qbar = q_of(nominal.state(t), nominal.control(t), spec)
            gvec, gtil, gfull = estimate_lipschitz(
                spec, [qbar], sqrt_qmax, sqrt_rmax, n_samples=per_node,
                rng=rng, safety=config.gamma_safety)
            gammas[i] = gfull
            g_tilde_all = max(g_tilde_all, gtil)
        if config.gamma_tilde is None:
            config.gamma_tilde = float(g_tilde_all)
        spec.gamma = gammas
        spec.gamma_tilde = config.gamma_tilde
    else:
        gammas = np.broadcast_to(np.atleast_1d(
            np.asarray(config.gamma, dtype=float)), times.shape).copy()

    data = LtvData(times=times, a=a_s, b=b_s, h=h_s, g=g_s, e=e_s,
                   gamma=gammas)
    scales = {"x_scale": x_scale, "u_scale": u_scale,
              "q_scale": q_scale, "p_scale": p_scale}
    return data, scales


def _sqrtm_psd(m):
    w, v = np.linalg.eigh(symmetrize(m))
    w = np.clip(w, 0.0, None)
    return v @ np.diag(np.sqrt(w)) @ v.T


def _solve_slack_seed(data: LtvData, config: SynthesisConfig, lam: float):
    """Minimum-total-slack solve of the funnel system; always feasible.
    Used to seed the gamma refinement when the conservative region-based
    gammas are infeasible."""
    n = data.times.size
    nx, nu, nq, npch = data.n_x, data.n_u, data.n_q, data.n_p
    qs = [cp.Variable((nx, nx), symmetric=True) for _ in range(n)]
    ys = [cp.Variable((nu, nx)) for _ in range(n)]
    cons = []
    for k in range(n):
        cons.append(qs[k] >> config.eps_pd * np.eye(nx))
        cons.append(qs[k] << config.q_max)
        cons.append(cp.bmat([[qs[k], ys[k].T], [ys[k], config.r_max]]) >> 0)
    if config.q_max_terminal is not None:
        cons.append(qs[-1] << np.asarray(config.q_max_terminal, dtype=float))
    dim = nx + nq + npch
    slacks = []
    for k in range(n - 1):
        hstep = data.times[k + 1] - data.times[k]
        qdot = (qs[k + 1] - qs[k]) / hstep
        for j, gam in ((k, data.gamma[k]), (k + 1, data.gamma[k + 1])):
            blk = assemble_node_lmi(data.a[j], data.b[j], data.e, data.h,
                                    data.g, gam, lam, config.alpha,
                                    qs[j], ys[j], qdot)
            if blk.shape[0] > nx:
                blk = 0.5 * (blk + blk.T)
            t = cp.Variable(nonneg=True)
            slacks.append(t)
            cons.append(blk << t * np.eye(dim))
    prob = cp.Problem(cp.Minimize(cp.sum(cp.hstack(slacks))), cons)
    _solve(prob, config.solver or "SCS")
    if qs[0].value is None:
        raise SolverFailure("slack seed solve failed")
    return (np.stack([symmetrize(q.value) for q in qs]),
            np.stack([y.value for y in ys]))


def refine_gammas(spec, nominal, data: LtvData, scales, q_scaled, y_scaled,
                  inflation: float = 1.3, n_samples: int = 4000,
                  rng=None, safety: float = 1.2) -> np.ndarray:
    """Re-estimate per-node stacked gammas over the achieved closed-loop
    deviation set: delta_q = (H + G K) eta with eta sampled from the
    inflated funnel ellipsoid at the node.  This is the gamma-iteration
    step: the independent state x control product region is much fatter
    than what the closed loop reaches."""
    from .dynamics.channels import psi, psi_jacobian, q_of

    if rng is None:
        rng = np.random.default_rng(1)
    dx = np.diag(scales["x_scale"])
    du = np.diag(scales["u_scale"])
    n = data.times.size
    per_node = max(300, n_samples // n)
    out = np.empty(n)
    for k, t in enumerate(data.times):
        qbar = q_of(nominal.state(t), nominal.control(t), spec)
        dpsi = psi_jacobian(qbar, spec.params)
        pbar = psi(qbar, spec.params)
        w, v = np.linalg.eigh(symmetrize(q_scaled[k]))
        w = np.clip(w, 0.0, None)
        sq = v @ np.diag(np.sqrt(w)) @ v.T
        k_s = y_scaled[k] @ np.linalg.pinv(q_scaled[k])
        k_phys = du @ k_s @ np.linalg.inv(dx)
        worst = 0.0
        dim = q_scaled[k].shape[0]
        for _ in range(per_node):
            d = rng.standard_normal(dim)
            d *= rng.uniform() ** (1.0 / dim) / np.linalg.norm(d)
            eta = dx @ (inflation * (sq @ d))
            xi = k_phys @ eta
            dq = spec.h @ eta + spec.g @ xi
            nd = np.linalg.norm(dq / spec.q_scale)
            if nd == 0.0:
                continue
            dp = (psi(qbar + dq, spec.params) - pbar - dpsi @ dq) / spec.p_scale
            worst = max(worst, np.linalg.norm(dp) / nd)
        out[k] = safety * worst
    return out


def synthesize(config: SynthesisConfig, nominal, spec,
               gamma_refine_passes: int = 2) -> FunnelSolution:
    """Funnel synthesis for the vehicle model about a nominal trajectory.

    The multiplier scalar lambda is line-searched; the channel bound gamma
    is tightened over the achieved closed-loop image for up to
    `gamma_refine_passes` refinement solves (the region-based first guess
    may even be infeasible, in which case a slack-minimizing solve seeds
    the refinement).
    """
    data, scales = build_ltv_data(config, nominal, spec)
    scaled_cfg = _scaled_config(config, scales)
    rng = np.random.default_rng(config.seed + 2)

    sol_s = None
    try:
        sol_s = synthesize_ltv(data, scaled_cfg)
    except Infeasible:
        if gamma_refine_passes < 1:
            raise
    for _ in range(gamma_refine_passes):
        if sol_s is None:
            lam_seed = float(np.median(config.lambda_grid))
            q_seed, y_seed = _solve_slack_seed(data, scaled_cfg, lam_seed)
        else:
            q_seed, y_seed = sol_s.q, sol_s.y
        new_gamma = refine_gammas(spec, nominal, data, scales, q_seed,
                                  y_seed, rng=rng,
                                  safety=config.gamma_safety)
        # never grow beyond the region-based bound
        data.gamma = np.minimum(data.gamma, new_gamma)
        spec.gamma = data.gamma
        sol_s = synthesize_ltv(data, scaled_cfg)
    if sol_s is None:
        raise Infeasible("funnel synthesis infeasible at the region-based "
                         "gamma and no refinement requested")
    return _rescale_solution(sol_s, config, scales)


def _scaled_config(config: SynthesisConfig, scales) -> SynthesisConfig:
    dxi = np.diag(1.0 / scales["x_scale"])
    dui = np.diag(1.0 / scales["u_scale"])
    qmax_s = dxi @ config.q_max @ dxi
    rmax_s = dui @ config.r_max @ dui
    qmaxf_s = None
    if config.q_max_terminal is not None:
        qmaxf_s = dxi @ np.asarray(config.q_max_terminal, dtype=float) @ dxi
    out = SynthesisConfig(
        node_count=config.node_count, alpha=config.alpha, q_max=qmax_s,
        r_max=rmax_s, q_max_terminal=qmaxf_s, kappa_tol=config.kappa_tol,
        lambda_grid=config.lambda_grid, gamma=1.0,  # gammas live in LtvData
        gamma_tilde=config.gamma_tilde, node_margin=config.node_margin,
        eps_pd=config.eps_pd, seed=config.seed, solver=config.solver)
    return out


def _rescale_solution(sol: FunnelSolution, config: SynthesisConfig,
                      scales) -> FunnelSolution:
    dx = np.diag(scales["x_scale"])
    du = np.diag(scales["u_scale"])
    dxi = np.diag(1.0 / scales["x_scale"])
    qp = np.stack([dx @ qk @ dx for qk in sol.q])
    yp = np.stack([du @ yk @ dx for yk in sol.y])
    kp = np.stack([du @ kk @ dxi for kk in sol.k])
    sign, logdet = np.linalg.slogdet(qp[0])
    return FunnelSolution(
        times=sol.times, q=qp, y=yp, k=kp, lam=sol.lam, gamma=sol.gamma,
        gamma_tilde=sol.gamma_tilde, objective=float(logdet),
        config={
            "alpha": config.alpha,
            "node_count": config.node_count,
            "node_margin": config.node_margin,
            "kappa_tol": config.kappa_tol,
            "lambda_grid": list(map(float, np.atleast_1d(config.lambda_grid))),
            "q_max_diag": list(np.diag(config.q_max)),
            "r_max_diag": list(np.diag(config.r_max)),
            "q_max_terminal_diag": (
                list(np.diag(config.q_max_terminal))
                if config.q_max_terminal is not None else None),
            "x_scale": list(scales["x_scale"]),
            "u_scale": list(scales["u_scale"]),
            "q_scale": list(scales["q_scale"]),
            "p_scale": list(scales["p_scale"]),
            "scaled_objective": sol.objective,
        })


@dataclass
class VerificationReport:
    ok: bool
    worst_decay: float
    worst_state_bound: float
    worst_control_bound: float
    worst_pd: float
    tolerance: float
    gamma_margin: float = np.inf  # min over nodes of gamma_used - measured

    def __str__(self):
        verdict = "PASS" if self.ok else "FAIL"
        return (f"funnel verification: {verdict} "
                f"(decay {self.worst_decay:.3e}, state {self.worst_state_bound:.3e}, "
                f"control {self.worst_control_bound:.3e}, pd {self.worst_pd:.3e}, "
                f"gamma margin {self.gamma_margin:.3e}, tol {self.tolerance:.1e})")


def verify_funnel(sol: FunnelSolution, data: LtvData, config: SynthesisConfig,
                  scales, dense_factor: int = 5, tolerance: float = 1e-6,
                  nominal=None, spec=None,
                  gamma_check_samples: int = 800) -> VerificationReport:
    """Re-evaluate every LMI on a dense_factor-times finer grid.

    Q, Y, A, B interpolate linearly (consistent with the first-order hold);
    Q' is the segment slope.  Reports the most positive constraint-block
    eigenvalue per family; PASS iff all are below `tolerance`.  When the
    nominal and channel spec are supplied, the channel bounds are
    re-validated by sampling the closed-loop deviation image of the
    solution funnel (gamma_margin must stay positive).
    """
    dxi = np.diag(1.0 / scales["x_scale"])
    dui = np.diag(1.0 / scales["u_scale"])
    qmax_s = dxi @ config.q_max @ dxi
    rmax_s = dui @ config.r_max @ dui
    qmaxf_s = None
    if config.q_max_terminal is not None:
        qmaxf_s = dxi @ np.asarray(config.q_max_terminal, dtype=float) @ dxi

    q_s = np.stack([dxi @ qk @ dxi for qk in sol.q])
    y_s = np.stack([dui @ yk @ dxi for yk in sol.y])

    worst_decay = -np.inf
    worst_state = -np.inf
    worst_ctrl = -np.inf
    worst_pd = -np.inf
    n = sol.times.size
    for k in range(n - 1):
        hstep = sol.times[k + 1] - sol.times[k]
        qdot = (q_s[k + 1] - q_s[k]) / hstep
        for j in range(dense_factor + 1):
            w = j / dense_factor
            a = (1 - w) * data.a[k] + w * data.a[k + 1]
            b = (1 - w) * data.b[k] + w * data.b[k + 1]
            gam = (1 - w) * data.gamma[k] + w * data.gamma[k + 1]
            q = (1 - w) * q_s[k] + w * q_s[k + 1]
            y = (1 - w) * y_s[k] + w * y_s[k + 1]
            blk = assemble_node_lmi(a, b, data.e, data.h, data.g, gam,
                                    sol.lam, config.alpha, q, y, qdot)
            worst_decay = max(worst_decay,
                              float(np.linalg.eigvalsh(symmetrize(blk)).max()))
            worst_state = max(worst_state,
                              float(np.linalg.eigvalsh(q - qmax_s).max()))
            worst_pd = max(worst_pd,
                           float(-np.linalg.eigvalsh(q).min()) + 1e-9)
            ctrl = np.block([[q, y.T], [y, rmax_s]])
            worst_ctrl = max(worst_ctrl,
                             float(-np.linalg.eigvalsh(symmetrize(ctrl)).min()))
    if qmaxf_s is not None:
        worst_state = max(worst_state,
                          float(np.linalg.eigvalsh(q_s[-1] - qmaxf_s).max()))
    gamma_margin = np.inf
    if nominal is not None and spec is not None:
        measured = refine_gammas(spec, nominal, data, scales, q_s,
                                 y_s, inflation=1.0,
                                 n_samples=gamma_check_samples * sol.times.size,
                                 rng=np.random.default_rng(12345), safety=1.0)
        gamma_margin = float(np.min(data.gamma - measured))
    ok = (max(worst_decay, worst_state, worst_ctrl, worst_pd) <= tolerance
          and gamma_margin >= 0.0)
    return VerificationReport(ok=bool(ok), worst_decay=worst_decay,
                              worst_state_bound=worst_state,
                              worst_control_bound=worst_ctrl,
                              worst_pd=worst_pd, tolerance=tolerance,
                              gamma_margin=gamma_margin)


def save_funnel_json(path, sol: FunnelSolution) -> None:
    doc = {
        "times": sol.times.tolist(),
        "Q": [qk.tolist() for qk in sol.q],
        "Y": [yk.tolist() for yk in sol.y],
        "K": [kk.tolist() for kk in sol.k],
        "lambda": sol.lam,
        "gamma": sol.gamma.tolist(),
        "gamma_tilde": sol.gamma_tilde,
        "objective": sol.objective,
        "config": sol.config,
    }
    Path(path).write_text(json.dumps(doc))


def load_funnel_json(path) -> FunnelSolution:
    doc = json.loads(Path(path).read_text())
    return FunnelSolution(
        times=np.asarray(doc["times"]),
        q=np.asarray(doc["Q"]), y=np.asarray(doc["Y"]), k=np.asarray(doc["K"]),
        lam=float(doc["lambda"]), gamma=np.asarray(doc["gamma"]),
        gamma_tilde=float(doc.get("gamma_tilde", 0.0)),
        objective=float(doc["objective"]), config=doc.get("config", {}))
