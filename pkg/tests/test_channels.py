import numpy as np
import pytest

from dgfunnel.dynamics import eval_channels, eval_f, jacobians, make_channel_spec
from dgfunnel.dynamics.channels import (
    N_P,
    N_Q,
    eval_channel_shift,
    lipschitz_bound,
    q_of,
)
from dgfunnel.errors import DegenerateRegion

from conftest import random_infunnel_state


class TestChannelMatrices:
    def test_shapes(self, channel_spec):
        assert channel_spec.h.shape == (16, 13)
        assert channel_spec.g.shape == (16, 6)
        assert channel_spec.e.shape == (13, 16)

    def test_partition_covers_q(self, channel_spec):
        covered = np.zeros(N_Q, dtype=bool)
        for qs, _ in channel_spec.channel_partition:
            covered[qs] = True
        assert covered.all()

    def test_disturbance_basis_orthonormal(self, disturbance):
        f = disturbance.basis
        np.testing.assert_array_equal(f.T @ f, np.eye(7))


class TestReconstruction:
    def test_zero_at_nominal(self, channel_spec, nominal):
        x = nominal.state(3.0)
        u = nominal.control(3.0)
        dq, dp = eval_channels(x, u, x, u, channel_spec)
        np.testing.assert_allclose(dq, 0.0, atol=1e-14)
        np.testing.assert_allclose(dp, 0.0, atol=1e-14)

    def test_mass_only_perturbation(self, channel_spec, nominal,
                                    bench_params):
        t = 5.0
        xb, ub = nominal.state(t), nominal.control(t)
        x = xb.copy()
        x[0] += 25.0
        dq, dp = eval_channels(x, ub, xb, ub, channel_spec)
        # only the thrust channels read mass; Euler-rate channels untouched
        assert np.linalg.norm(dp[6:12]) == 0.0
        assert np.linalg.norm(dp[0:6]) > 0.0
        a, b = jacobians(xb, ub, bench_params)
        direct = (eval_f(x, ub, bench_params) - eval_f(xb, ub, bench_params)
                  - a @ (x - xb))
        np.testing.assert_allclose(channel_spec.e @ dp, direct, atol=1e-9)

    def test_reconstruction_identity(self, channel_spec, nominal,
                                     bench_params):
        rng = np.random.default_rng(3)
        for _ in range(100):
            t, x, u = random_infunnel_state(rng, nominal)
            xb, ub = nominal.state(t), nominal.control(t)
            a, b = jacobians(xb, ub, bench_params)
            dq, dp = eval_channels(x, u, xb, ub, channel_spec)
            lhs = channel_spec.e @ dp
            rhs = (eval_f(x, u, bench_params) - eval_f(xb, ub, bench_params)
                   - a @ (x - xb) - b @ (u - ub))
            np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_delta_q_linear_map(self, channel_spec, nominal):
        rng = np.random.default_rng(4)
        t, x, u = random_infunnel_state(rng, nominal)
        xb, ub = nominal.state(t), nominal.control(t)
        dq, _ = eval_channels(x, u, xb, ub, channel_spec)
        np.testing.assert_allclose(
            dq, channel_spec.h @ (x - xb) + channel_spec.g @ (u - ub),
            atol=1e-12)

    def test_shift_channel_zero_for_zero_shift(self, channel_spec, nominal):
        t = 2.0
        qb = q_of(nominal.state(t), nominal.control(t), channel_spec)
        out = eval_channel_shift(qb, np.zeros(N_Q), qb, channel_spec)
        np.testing.assert_allclose(out, 0.0, atol=1e-14)


class TestLipschitz:
    def test_linear_map_exact(self):
        rng = np.random.default_rng(5)
        c = 3.7
        pairs = [(rng.standard_normal(4), rng.standard_normal(4))
                 for _ in range(200)]
        gamma = lipschitz_bound(lambda q: c * q, pairs)
        assert gamma == pytest.approx(1.2 * c, rel=1e-9)

    def test_point_region_gradient_limit(self):
        # shrinking pair separation recovers the local gradient bound
        rng = np.random.default_rng(6)
        fn = lambda q: np.array([np.sin(q[0])])
        base = np.array([0.3])
        pairs = [(base + 1e-7 * rng.standard_normal(1),
                  base + 1e-7 * rng.standard_normal(1)) for _ in range(500)]
        gamma = lipschitz_bound(fn, pairs)
        assert gamma == pytest.approx(1.2 * np.cos(0.3), rel=1e-3)

    def test_degenerate_region_rejected(self, channel_spec):
        from dgfunnel.dynamics.channels import estimate_lipschitz
        with pytest.raises(DegenerateRegion):
            estimate_lipschitz(channel_spec, [], np.eye(13), np.eye(6))

    def test_bench_channels_bounded(self, channel_spec, nominal):
        from dgfunnel.dynamics.channels import estimate_lipschitz
        rng = np.random.default_rng(7)
        qb = q_of(nominal.state(10.0), nominal.control(10.0), channel_spec)
        sq = np.diag([50, 100, 100, 100, 10, 10, 10, 0.3, 0.3, 0.3,
                      0.15, 0.15, 0.15])
        sr = np.diag([4000.0, 4000, 4000, 25000, 25000, 25000])
        gvec, gtil, gfull = estimate_lipschitz(channel_spec, [qb], sq, sr,
                                               n_samples=2000, rng=rng)
        assert np.all(gvec > 0.0)
        assert np.all(np.isfinite(gvec))
        assert gtil > 0.0
        # the stacked bound never exceeds the quadrature sum of channels
        assert gfull <= np.sqrt(np.sum(gvec**2)) + 1e-12
