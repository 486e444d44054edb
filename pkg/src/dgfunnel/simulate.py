"""Closed-loop simulation: nominal-only, offline funnel, and online
adaptive (identification in the loop) controller variants, containment
auditing, entry-ellipsoid sampling, and Monte Carlo campaigns.

Integration is fixed-step RK4 on the augmented state (x, theta, theta_hat)
through the compiled core (pure-Python fallback); gains swap only at
measurement instants, so each measurement interval is one core call.
Measurements feed the observation ledger; after the estimate converges the
gain schedule is frozen (the stopping criterion), and theta_hat propagates
through the log of the converged estimate between measurements.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import core
from .dgran import (
    GainSchedule,
    ObservationLedger,
    estimate_generator,
    observe,
    predict_theta,
    update_gain,
)
from .errors import LogUndefined, SingularQ
from .kernels import symmetrize
from .regularize import RegularizabilityConfig
from .synthesis import FunnelSolution

__all__ = [
    "ControllerVariant",
    "SimOptions",
    "TrajectoryLog",
    "integrate_closed_loop",
    "sample_entry_ellipsoid",
    "CampaignSpec",
    "monte_carlo",
    "save_run_csv",
    "RUN_CSV_HEADER",
]

RUN_CSV_HEADER = (
    "t,m,rx,ry,rz,vx,vy,vz,phi,theta,psi,wx,wy,wz,"
    "Fx,Fy,Fz,taux,tauy,tauz,"
    "theta1,theta2,theta3,theta4,theta5,theta6,theta7,"
    "thetahat1,thetahat2,thetahat3,thetahat4,thetahat5,thetahat6,thetahat7,"
    "v_level,contained")


@dataclass
class ControllerVariant:
    """Which control law closes the loop.

    nominal: u = u_bar; offline: u = u_bar + K eta; dgran adds the
    disturbance feedback K~ theta_hat driven by the online estimate."""

    kind: str
    funnel: FunnelSolution | None = None
    schedule: GainSchedule | None = None
    reg_config: RegularizabilityConfig | None = None
    update_gains: str = "until_converged"   # never | until_converged | always

    def __post_init__(self):
        if self.kind not in ("nominal", "offline", "dgran"):
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.kind in ("offline", "dgran") and self.funnel is None:
            raise ValueError(f"{self.kind} controller needs a funnel")


@dataclass
class SimOptions:
    step: float = 0.01
    delta_t: float = 0.5
    containment_margin: float = 1e-2
    rank_tol_rel: float = 1e-6
    conv_tol: float = 1e-4
    conv_hits: int = 2
    log_quadrature_error: bool = True


@dataclass
class TrajectoryLog:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    theta: np.ndarray
    theta_hat: np.ndarray
    v_level: np.ndarray
    contained: np.ndarray
    n_clamped_steps: int = 0
    convergence_step: int | None = None
    identification_rows: list = field(default_factory=list)
    quadrature_errors: list = field(default_factory=list)
    aborted: str | None = None

    @property
    def contained_all(self) -> bool:
        return bool(self.contained.all())

    @property
    def worst_v_level(self) -> float:
        return float(np.nanmax(self.v_level))

    def first_exit_time(self) -> float | None:
        bad = np.nonzero(~self.contained)[0]
        return float(self.times[bad[0]]) if bad.size else None


def _controller_tables(nominal, variant: ControllerVariant, params,
                       schedule: GainSchedule | None,
                       s_hat_gen: np.ndarray) -> dict:
    n_gain = variant.funnel.times.size if variant.funnel is not None else 2
    tabs = {
        "times": np.ascontiguousarray(nominal.knot_times),
        "xbar": np.ascontiguousarray(nominal.states),
        "ubar": np.ascontiguousarray(nominal.controls),
        "gain_times": (np.ascontiguousarray(variant.funnel.times)
                       if variant.funnel is not None
                       else np.array([nominal.t0, nominal.tf])),
        "kflat": np.zeros((n_gain, core.NU * core.NX)),
        "ktilflat": np.zeros((n_gain, core.NU * core.NTH)),
        "fbasis": np.zeros((core.NX, core.NTH)),
        "s_tilde": np.zeros((core.NTH, core.NTH)),
        "s_hat_gen": np.ascontiguousarray(s_hat_gen),
        "use_feedback": variant.kind in ("offline", "dgran"),
        "use_dist_feedback": variant.kind == "dgran",
        "f_min": params.f_min, "f_max": params.f_max,
        "gimbal_max": params.gimbal_max, "torque_max": params.torque_max,
        "alpha": params.alpha_mdot,
        "g": np.ascontiguousarray(params.gravity),
        "r_f": np.ascontiguousarray(params.r_fuselage),
        "j": np.ascontiguousarray(params.inertia),
        "j_inv": np.ascontiguousarray(params.inertia_inv),
    }
    if variant.funnel is not None and tabs["use_feedback"]:
        tabs["kflat"] = np.ascontiguousarray(
            variant.funnel.k.reshape(n_gain, -1))
    if schedule is not None and tabs["use_dist_feedback"]:
        tabs["ktilflat"] = np.ascontiguousarray(
            schedule.k_tilde.reshape(schedule.times.size, -1))
    return tabs


def _v_levels(funnel: FunnelSolution | None, times, states, nominal):
    v = np.full(times.size, np.nan)
    if funnel is None:
        return v
    for i, t in enumerate(times):
        eta = states[i] - nominal.state(t)
        q = symmetrize(funnel.q_at(t))
        v[i] = float(eta @ np.linalg.solve(q, eta))
    return v


def integrate_closed_loop(x0, theta0, controller: ControllerVariant,
                          model, nominal, spec, opts: SimOptions,
                          t_span: tuple[float, float] | None = None
                          ) -> TrajectoryLog:
    """RK4 closed loop with measurements every delta_t.

    Controls are evaluated per RK4 stage from interpolated nominal and
    gains; saturation clamps and flags.  For the adaptive variant, each
    measurement pushes an observation, re-estimates the disturbance map,
    and (until convergence) re-solves the future gain nodes; theta_hat
    jumps to the fresh prediction at each measurement instant.
    """
    from .dynamics.vehicle import PITCH_GUARD

    if t_span is None:
        t_span = (nominal.t0, nominal.tf)
    t0, tf = t_span
    n_sub = int(round(opts.delta_t / opts.step))
    if abs(n_sub * opts.step - opts.delta_t) > 1e-9:
        raise ValueError("delta_t must be an integer multiple of step")
    n_meas = int(np.floor((tf - t0) / opts.delta_t + 1e-9))

    params = spec.params
    schedule = controller.schedule
    s_hat_gen = np.zeros((core.NTH, core.NTH))
    tabs = _controller_tables(nominal, controller, params, schedule,
                              s_hat_gen)
    if controller.kind != "nominal" or True:
        tabs["fbasis"] = np.ascontiguousarray(model.basis)
        tabs["s_tilde"] = np.ascontiguousarray(model.s_tilde)

    ledger = ObservationLedger(opts.delta_t, n_theta=model.n_theta,
                               rank_tol_rel=opts.rank_tol_rel,
                               conv_tol=opts.conv_tol,
                               conv_hits=opts.conv_hits)
    est = None
    convergence_step = None
    id_rows = []
    quad = []

    z = np.zeros(core.NAUG)
    z[:core.NX] = np.asarray(x0, dtype=float)
    z[core.NX:core.NX + core.NTH] = np.asarray(theta0, dtype=float)

    all_t = [np.array([t0])]
    all_z = [z[None, :].copy()]
    all_u = [core.control_at(t0, z, tabs)[None, :]]
    n_clamped = 0
    aborted = None

    u_prev_meas = all_u[0][0].copy()
    x_prev_meas = z[:core.NX].copy()
    s_true = model.step_matrix(opts.delta_t)

    for k in range(1, n_meas + 1):
        ta = t0 + (k - 1) * opts.delta_t
        tb = t0 + k * opts.delta_t
        trace, utrace, clamped = core.rk4_span(z, ta, tb, n_sub, tabs)
        n_clamped += clamped
        z = trace[-1].copy()
        if not np.all(np.isfinite(z)) or abs(z[8]) >= PITCH_GUARD:
            aborted = f"singular kinematics or divergence at t={tb:.2f}"
            all_t.append(ta + opts.step * np.arange(1, n_sub + 1))
            all_z.append(trace[1:])
            all_u.append(utrace[1:])
            break
        all_t.append(ta + opts.step * np.arange(1, n_sub + 1))
        all_z.append(trace[1:])
        all_u.append(utrace[1:])

        if controller.kind == "dgran":
            x_curr = z[:core.NX]
            u_curr = utrace[-1]
            u_start = utrace[0]
            y = observe(x_prev_meas, x_curr, u_start, u_curr, opts.delta_t,
                        model.basis, params)
            if opts.log_quadrature_error:
                theta_a = trace[0, core.NX:core.NX + core.NTH]
                y_true = (model.basis.T @ model.basis) @ (
                    (s_true - np.eye(model.n_theta)) @ theta_a)
                quad.append(float(np.linalg.norm(y - y_true)))
            ledger.push(y)
            if ledger.n_t >= 2:
                was_converged = ledger.converged
                est = ledger.estimate()
                est.delta_t = opts.delta_t
                id_rows.append({
                    "n_t": ledger.n_t, "t": tb,
                    "norm_y": float(np.linalg.norm(y)),
                    "rank_Z": est.rank,
                    "S_hat_delta": (ledger.history[-1]
                                    if ledger.history else np.nan),
                    "converged": ledger.converged})
                if ledger.converged and convergence_step is None:
                    convergence_step = ledger.n_t
                do_update = (controller.update_gains == "always"
                             or (controller.update_gains == "until_converged"
                                 and not was_converged))
                if do_update and est.rank > 0:
                    try:
                        schedule = update_gain(
                            controller.funnel, est, spec, nominal, tb,
                            cfg=controller.reg_config, previous=schedule,
                            f_basis=model.basis)
                    except LogUndefined:
                        pass
                try:
                    s_hat_gen = estimate_generator(est, opts.delta_t)
                except LogUndefined:
                    s_hat_gen = np.zeros((core.NTH, core.NTH))
                z[core.NX + core.NTH:] = predict_theta(est, tb - t0,
                                                       opts.delta_t) \
                    if _predictable(est, (tb - t0) / opts.delta_t) \
                    else z[core.NX + core.NTH:]
                tabs = _controller_tables(nominal, controller, params,
                                          schedule, s_hat_gen)
                tabs["fbasis"] = np.ascontiguousarray(model.basis)
                tabs["s_tilde"] = np.ascontiguousarray(model.s_tilde)
        u_prev_meas = utrace[-1].copy()
        x_prev_meas = z[:core.NX].copy()

    times = np.concatenate(all_t)
    zs = np.vstack(all_z)
    us = np.vstack(all_u)
    v = _v_levels(controller.funnel, times, zs[:, :core.NX], nominal)
    contained = (v <= 1.0 + opts.containment_margin) | np.isnan(v)
    if aborted:
        contained[-1] = False
    return TrajectoryLog(
        times=times, states=zs[:, :core.NX], controls=us,
        theta=zs[:, core.NX:core.NX + core.NTH],
        theta_hat=zs[:, core.NX + core.NTH:],
        v_level=v, contained=contained, n_clamped_steps=n_clamped,
        convergence_step=convergence_step, identification_rows=id_rows,
        quadrature_errors=quad, aborted=aborted)


def _predictable(est, k: float) -> bool:
    if abs(k - round(k)) < 1e-9:
        return True
    try:
        predict_theta(est, k * est.delta_t, est.delta_t)
        return True
    except LogUndefined:
        return False


def sample_entry_ellipsoid(q0, count: int, seed: int) -> np.ndarray:
    """Uniform samples over the ellipsoid eta' Q0^{-1} eta <= 1: Gaussian
    direction, radius scaled by U^(1/n), mapped through the symmetric
    square root of Q0.  Deterministic per seed."""
    q0 = symmetrize(np.asarray(q0, dtype=float))
    w, v = np.linalg.eigh(q0)
    if w.min() <= 0:
        raise SingularQ(f"entry ellipsoid not positive definite "
                        f"(min eig {w.min():.3e})")
    sqrt_q = v @ np.diag(np.sqrt(w)) @ v.T
    n = q0.shape[0]
    rng = np.random.default_rng(seed)
    if count == 0:
        return np.zeros((0, n))
    dirs = rng.standard_normal((count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(size=count) ** (1.0 / n)
    return (dirs * radii[:, None]) @ sqrt_q


@dataclass
class CampaignSpec:
    count: int = 20
    controller: str = "offline"
    seed: int = 0
    out_dir: str | None = None
    jobs: int = 1


def _one_run(args):
    (idx, eta0, controller, model, nominal, spec, opts) = args
    x0 = nominal.states[0] + eta0
    log = integrate_closed_loop(x0, model.theta0, controller, model,
                                nominal, spec, opts)
    return idx, log


def monte_carlo(campaign: CampaignSpec, controller: ControllerVariant,
                model, nominal, spec, opts: SimOptions,
                extra_summary: dict | None = None) -> dict:
    """Independent runs from entry-ellipsoid samples; per-run CSV logs plus
    an aggregate summary (written when out_dir is set)."""
    if controller.funnel is None:
        raise ValueError("campaigns need a funnel for entry sampling")
    etas = sample_entry_ellipsoid(controller.funnel.q[0], campaign.count,
                                  campaign.seed)
    jobs = max(1, campaign.jobs)
    run_args = [(i, etas[i], controller, model, nominal, spec, opts)
                for i in range(campaign.count)]
    results: list[TrajectoryLog | None] = [None] * campaign.count
    if jobs == 1:
        for a in run_args:
            idx, log = _one_run(a)
            results[idx] = log
    else:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=jobs) as ex:
            for idx, log in ex.map(_one_run, run_args):
                results[idx] = log

    out_dir = Path(campaign.out_dir) if campaign.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    nominal_end = nominal.states[-1]
    for i, log in enumerate(results):
        row = {
            "run_id": i,
            "contained": bool(log.contained_all),
            "worst_v_level": log.worst_v_level,
            "first_exit_t": log.first_exit_time(),
            "n_convergence": log.convergence_step,
            "n_clamped_steps": log.n_clamped_steps,
            "aborted": log.aborted,
        }
        dev = log.states[-1] - nominal_end
        row["terminal_dev"] = {
            "pos": float(np.linalg.norm(dev[1:4])),
            "vel": float(np.linalg.norm(dev[4:7])),
            "att": float(np.linalg.norm(dev[7:10])),
            "rate": float(np.linalg.norm(dev[10:13])),
            "mass": float(abs(dev[0])),
        }
        if out_dir:
            csv_path = out_dir / f"run_{i:03d}.csv"
            save_run_csv(csv_path, log)
            row["csv"] = csv_path.name
        runs.append(row)
    rate = float(np.mean([r["contained"] for r in runs])) if runs else 1.0
    summary = {
        "controller": controller.kind,
        "count": campaign.count,
        "seed": campaign.seed,
        "delta_t": opts.delta_t,
        "step": opts.step,
        "containment_margin": opts.containment_margin,
        "containment_rate": rate,
        "worst_v_level": (max(r["worst_v_level"] for r in runs)
                          if runs else 0.0),
        "runs": runs,
    }
    if extra_summary:
        summary.update(extra_summary)
    if out_dir:
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def save_run_csv(path, log: TrajectoryLog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_CSV_HEADER.split(","))
        for i in range(log.times.size):
            row = ([f"{log.times[i]:.6f}"]
                   + [f"{v:.9g}" for v in log.states[i]]
                   + [f"{v:.9g}" for v in log.controls[i]]
                   + [f"{v:.9g}" for v in log.theta[i]]
                   + [f"{v:.9g}" for v in log.theta_hat[i]]
                   + [f"{log.v_level[i]:.9g}", int(log.contained[i])])
            w.writerow(row)
