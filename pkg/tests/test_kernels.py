import numpy as np
import pytest

from dgfunnel.errors import LogUndefined, NonFinite, NonSquare
from dgfunnel.kernels import (
    matexp,
    matlog,
    pinv,
    projector_complement,
    projector_range,
    thin_svd,
)


def mp_identities_hold(m, mi, tol=1e-8):
    scale = max(1.0, np.abs(m).max())
    return (np.allclose(m @ mi @ m, m, atol=tol * scale)
            and np.allclose(mi @ m @ mi, mi, atol=tol * max(1.0, np.abs(mi).max()))
            and np.allclose(m @ mi, (m @ mi).T, atol=tol)
            and np.allclose(mi @ m, (mi @ m).T, atol=tol))


class TestThinSvd:
    def test_identity(self):
        f = thin_svd(np.eye(3))
        assert f.rank == 3
        np.testing.assert_allclose(f.sigma, np.ones(3))
        np.testing.assert_allclose(np.abs(f.u @ f.v.T), np.eye(3), atol=1e-12)

    def test_zero_matrix(self):
        f = thin_svd(np.zeros((2, 3)))
        assert f.rank == 0
        assert f.reconstruct().shape == (2, 3)

    def test_random_reconstruction(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((4, 2))
        f = thin_svd(m)
        np.testing.assert_allclose(f.reconstruct(), m,
                                   atol=1e-9 * np.linalg.norm(m))
        np.testing.assert_allclose(f.u.T @ f.u, np.eye(f.rank), atol=1e-10)
        np.testing.assert_allclose(f.v.T @ f.v, np.eye(f.rank), atol=1e-10)
        assert np.all(np.diff(f.sigma) <= 0)

    def test_rank_invariant_under_column_permutation(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((6, 4)) @ rng.standard_normal((4, 5))
        perm = rng.permutation(5)
        assert thin_svd(m).rank == thin_svd(m[:, perm]).rank

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFinite):
            thin_svd(np.array([[1.0, np.nan]]))


class TestPinv:
    def test_identity(self):
        np.testing.assert_allclose(pinv(np.eye(5)), np.eye(5), atol=1e-12)

    def test_singular_diagonal(self):
        np.testing.assert_allclose(pinv(np.diag([2.0, 0.0])),
                                   np.diag([0.5, 0.0]), atol=1e-12)

    def test_orthonormal_basis(self):
        from dgfunnel.dynamics.disturbance import disturbance_basis
        f = disturbance_basis()
        fi = pinv(f)
        np.testing.assert_allclose(fi, f.T, atol=1e-12)
        np.testing.assert_allclose(fi @ f, np.eye(7), atol=1e-12)
        assert mp_identities_hold(f, fi)

    def test_moore_penrose_identities_random(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            r, c = rng.integers(1, 8, size=2)
            m = rng.standard_normal((r, c))
            if rng.uniform() < 0.3:  # force rank deficiency
                m[:, : c // 2 + 1] = m[:, :1]
            assert mp_identities_hold(m, pinv(m))


class TestProjectors:
    def test_unit_vector(self):
        p = projector_range(np.array([[1.0], [0.0], [0.0]]))
        np.testing.assert_allclose(p, np.diag([1.0, 0, 0]), atol=1e-12)

    def test_zero_vector(self):
        p = projector_range(np.zeros((3, 1)))
        np.testing.assert_allclose(p, np.zeros((3, 3)))

    def test_complement_of_full_rank_square(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((4, 4)) + 4 * np.eye(4)
        np.testing.assert_allclose(projector_complement(m), np.zeros((4, 4)),
                                   atol=1e-10)

    def test_basis_rank(self):
        from dgfunnel.dynamics.disturbance import disturbance_basis
        p = projector_range(disturbance_basis().T)
        assert thin_svd(p).rank == 7

    def test_annihilates_columns(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal((13, 6))
        pc = projector_complement(b)
        for j in range(6):
            assert np.linalg.norm(pc @ b[:, j]) < 1e-8 * np.linalg.norm(b)

    def test_projector_properties(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((7, 3))
        p = projector_range(m)
        np.testing.assert_allclose(p @ p, p, atol=1e-8)
        np.testing.assert_allclose(p, p.T, atol=1e-8)
        for j in range(3):
            np.testing.assert_allclose(p @ m[:, j], m[:, j], atol=1e-8)
        np.testing.assert_allclose(p + projector_complement(m),
                                   np.eye(7), atol=1e-12)


class TestMatexpLog:
    def test_exp_zero(self):
        np.testing.assert_allclose(matexp(np.zeros((3, 3))), np.eye(3))

    def test_exp_paper_diagonal(self):
        s = np.diag([0.001, -0.12, 0.03, 0.05, 0.07, 0.2, 0.0005])
        out = matexp(0.5 * s)
        np.testing.assert_allclose(np.diag(out), np.exp(0.5 * np.diag(s)),
                                   rtol=1e-14)
        assert np.allclose(out - np.diag(np.diag(out)), 0.0)

    def test_exp_inverse_identity(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((4, 4))
        np.testing.assert_allclose(matexp(m) @ matexp(-m), np.eye(4),
                                   atol=1e-8)

    def test_log_identity(self):
        np.testing.assert_allclose(matlog(np.eye(4)), np.zeros((4, 4)),
                                   atol=1e-12)

    def test_log_diagonal(self):
        np.testing.assert_allclose(matlog(np.diag([np.e, np.e**2])),
                                   np.diag([1.0, 2.0]), atol=1e-12)

    def test_roundtrip_paper_step(self):
        s = np.diag([0.001, -0.12, 0.03, 0.05, 0.07, 0.2, 0.0005])
        step = matexp(0.5 * s)
        np.testing.assert_allclose(matlog(step), 0.5 * s, atol=1e-9)

    def test_log_rejects_negative_axis(self):
        with pytest.raises(LogUndefined):
            matlog(np.diag([1.0, -0.5]))
        with pytest.raises(LogUndefined):
            matlog(np.diag([1.0, 0.0]))

    def test_nonsquare_rejected(self):
        with pytest.raises(NonSquare):
            matexp(np.zeros((2, 3)))

    def test_roundtrip_random_bounded(self):
        rng = np.random.default_rng(7)
        done = 0
        while done < 200:
            m = rng.standard_normal((4, 4))
            m *= 0.8 / max(1e-9, np.abs(np.linalg.eigvals(m)).max())
            e = matexp(m)
            try:
                back = matlog(e)
            except LogUndefined:
                continue
            np.testing.assert_allclose(back, m, atol=1e-7)
            done += 1
