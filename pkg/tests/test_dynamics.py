import numpy as np
import pytest

from dgfunnel.dynamics import (
    Control6,
    State13,
    VehicleParams,
    eval_f,
    jacobians,
)
from dgfunnel.dynamics.vehicle import IDX_M, IDX_R, IDX_TH, IDX_V, IDX_W
from dgfunnel.errors import SingularKinematics

from conftest import random_infunnel_state


def central_diff(fun, z, i, h):
    zp, zm = z.copy(), z.copy()
    zp[i] += h
    zm[i] -= h
    return (fun(zp) - fun(zm)) / (2 * h)


class TestEvalF:
    def test_hover_equilibrium(self, params):
        m = 3200.0
        x = State13(m=m, r=np.zeros(3), v=np.zeros(3),
                    theta_euler=np.zeros(3), omega=np.zeros(3)).as_array()
        u = Control6(force_body=np.array([0.0, 0.0, m * 1.62]),
                     torque_body=np.zeros(3)).as_array()
        f = eval_f(x, u, params)
        np.testing.assert_allclose(f[IDX_R], 0.0, atol=1e-12)
        np.testing.assert_allclose(f[IDX_V], 0.0, atol=1e-12)
        np.testing.assert_allclose(f[IDX_TH], 0.0, atol=1e-12)
        # thrust is along body z and r_fuselage is along z: no torque
        np.testing.assert_allclose(f[IDX_W], 0.0, atol=1e-12)
        assert f[IDX_M] == pytest.approx(-params.alpha_mdot * m * 1.62)

    def test_free_fall(self, params):
        x = State13(m=1000.0, r=np.zeros(3), v=np.array([1.0, 2, 3]),
                    theta_euler=np.array([0.2, 0.3, -0.1]),
                    omega=np.zeros(3)).as_array()
        u = np.zeros(6)
        f = eval_f(x, u, params)
        np.testing.assert_allclose(f[IDX_V], params.gravity, atol=1e-12)
        assert f[IDX_M] == 0.0

    def test_position_rows_equal_velocity(self, bench_params, nominal):
        rng = np.random.default_rng(0)
        for _ in range(20):
            _, x, u = random_infunnel_state(rng, nominal)
            f = eval_f(x, u, bench_params)
            np.testing.assert_array_equal(f[IDX_R], x[IDX_V])

    def test_nominal_defect_small(self, bench_params, nominal):
        d = nominal.midpoint_defects(bench_params)
        assert d.max() == pytest.approx(nominal.defect["max"])
        assert d.max() < 0.15

    def test_singularity_guard(self, params):
        x = State13(m=1000.0, r=np.zeros(3), v=np.zeros(3),
                    theta_euler=np.array([0.0, np.pi / 2, 0.0]),
                    omega=np.zeros(3)).as_array()
        with pytest.raises(SingularKinematics):
            eval_f(x, np.zeros(6), params)


class TestJacobians:
    def test_kinematic_identity_block(self, bench_params, nominal):
        rng = np.random.default_rng(1)
        _, x, u = random_infunnel_state(rng, nominal)
        a, _ = jacobians(x, u, bench_params)
        np.testing.assert_array_equal(a[IDX_R, IDX_V], np.eye(3))

    def test_mass_rate_thrust_direction(self, params):
        x = State13(m=3000.0, r=np.zeros(3), v=np.zeros(3),
                    theta_euler=np.zeros(3), omega=np.zeros(3)).as_array()
        u = np.array([0.0, 0.0, 10000.0, 0, 0, 0])
        _, b = jacobians(x, u, params)
        np.testing.assert_allclose(b[IDX_M, 0:3],
                                   [0.0, 0.0, -4.5324e-4], atol=1e-12)

    def test_finite_difference_agreement(self, bench_params, nominal):
        rng = np.random.default_rng(2)
        for _ in range(100):
            _, x, u = random_infunnel_state(rng, nominal)
            a, b = jacobians(x, u, bench_params)
            for i in range(13):
                h = 1e-6 * max(1.0, abs(x[i]))
                col = central_diff(lambda xx: eval_f(xx, u, bench_params),
                                   x, i, h)
                np.testing.assert_allclose(a[:, i], col, atol=1e-5)
            for i in range(6):
                h = 1e-6 * max(1.0, abs(u[i]))
                col = central_diff(lambda uu: eval_f(x, uu, bench_params),
                                   u, i, h)
                np.testing.assert_allclose(b[:, i], col, atol=1e-5)
