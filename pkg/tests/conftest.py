import numpy as np
import pytest

from dgfunnel.dynamics import (
    State13,
    VehicleParams,
    make_channel_spec,
    paper_disturbance,
    surrogate_nominal,
)

# benchmark boundary conditions
BENCH_T_F = 29.7
BENCH_X0 = dict(m=3250.0, r=(250.0, 0.0, 433.0), v=(-35.7, 0.0, -11.8),
                theta_deg=(0.0, 59.8, 0.0))
BENCH_XF = dict(m=3130.3, r=(0.0, 0.0, 30.0), v=(0.0, 0.0, -1.0),
                theta_deg=(0.0, 0.0, 0.0))


def boundary_states():
    x0 = State13(m=BENCH_X0["m"], r=np.array(BENCH_X0["r"]),
                 v=np.array(BENCH_X0["v"]),
                 theta_euler=np.deg2rad(BENCH_X0["theta_deg"]),
                 omega=np.zeros(3)).as_array()
    xf = State13(m=BENCH_XF["m"], r=np.array(BENCH_XF["r"]),
                 v=np.array(BENCH_XF["v"]),
                 theta_euler=np.deg2rad(BENCH_XF["theta_deg"]),
                 omega=np.zeros(3)).as_array()
    return x0, xf


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


@pytest.fixture(scope="session")
def bench_params():
    """Campaign vehicle: torque authority raised so the printed disturbance
    is rejectable (see decisions notes)."""
    return VehicleParams(torque_max=30000.0)


@pytest.fixture(scope="session")
def nominal(bench_params):
    x0, xf = boundary_states()
    return surrogate_nominal(x0, xf, BENCH_T_F, 100, bench_params)


@pytest.fixture(scope="session")
def channel_spec(bench_params):
    return make_channel_spec(bench_params)


@pytest.fixture(scope="session")
def disturbance():
    return paper_disturbance()


def random_infunnel_state(rng, nominal, scale=1.0):
    """Nominal point plus a bounded perturbation that keeps kinematics
    regular."""
    t = rng.uniform(nominal.t0, nominal.tf)
    dev = np.array([20.0, 30, 30, 30, 3, 3, 3, 0.1, 0.1, 0.1,
                    0.05, 0.05, 0.05]) * scale
    x = nominal.state(t) + rng.uniform(-1, 1, 13) * dev
    u = nominal.control(t) + rng.uniform(-1, 1, 6) * np.array(
        [500.0, 500, 500, 50, 50, 50]) * scale
    return t, x, u
