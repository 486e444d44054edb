import numpy as np
import pytest

from dgfunnel.dynamics import (
    State13,
    load_nominal_csv,
    save_nominal_csv,
    surrogate_nominal,
)
from dgfunnel.errors import MissingColumn

from conftest import BENCH_T_F, boundary_states


class TestSurrogate:
    def test_boundary_states_exact(self, nominal):
        x0, xf = boundary_states()
        np.testing.assert_array_equal(nominal.states[0], x0)
        np.testing.assert_array_equal(nominal.states[-1], xf)
        assert nominal.states[-1, 0] == 3130.3

    def test_rest_to_rest_constant(self, params):
        x = State13(m=3200.0, r=np.array([0.0, 0, 100.0]), v=np.zeros(3),
                    theta_euler=np.zeros(3), omega=np.zeros(3)).as_array()
        traj = surrogate_nominal(x, x.copy(), 10.0, 20, params,
                                 accel0=np.zeros(3), accelf=np.zeros(3))
        # position/attitude stay put; thrust hovers
        assert np.abs(traj.states[:, 1:13] - x[1:13]).max() < 1e-9
        thrust = np.linalg.norm(traj.controls[:, 0:3], axis=1)
        hover = traj.states[:, 0] * 1.62
        np.testing.assert_allclose(thrust, hover, rtol=1e-9)

    def test_defect_recorded(self, nominal, bench_params):
        assert "max" in nominal.defect
        d = nominal.midpoint_defects(bench_params)
        assert nominal.defect["max"] == pytest.approx(float(d.max()))

    def test_knot_interpolation(self, nominal):
        t = 0.5 * (nominal.knot_times[3] + nominal.knot_times[4])
        mid = 0.5 * (nominal.states[3] + nominal.states[4])
        np.testing.assert_allclose(nominal.state(t), mid, atol=1e-9)

    def test_timespan(self, nominal):
        assert nominal.t0 == 0.0
        assert nominal.tf == BENCH_T_F


class TestCsvRoundtrip:
    def test_roundtrip(self, nominal, tmp_path):
        path = tmp_path / "nominal.csv"
        save_nominal_csv(path, nominal)
        back = load_nominal_csv(path)
        np.testing.assert_allclose(back.knot_times, nominal.knot_times,
                                   rtol=1e-10)
        np.testing.assert_allclose(back.states, nominal.states, rtol=1e-10,
                                   atol=1e-12)
        np.testing.assert_allclose(back.controls, nominal.controls,
                                   rtol=1e-10, atol=1e-12)

    def test_header_checked(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,m,rx\n0,1,2\n")
        with pytest.raises(MissingColumn):
            load_nominal_csv(bad)
