import math

import numpy as np
import pytest
import scipy.sparse as sp

from rodforge.core import ConvergenceError, InvalidParameterError, Params
from rodforge.collocation import (
    AssemblyError,
    DiscretizedSystem,
    Mesh,
    det_sign,
    interp_fields,
    newton,
    null_vector,
)
from rodforge.stationary import _make_system, BcMode, trivial_solution


class TestMesh:
    def test_uniform(self):
        m = Mesh.uniform(8, 4)
        assert m.intervals == 8
        assert m.rep_points.size == 33
        assert m.rep_points[0] == 0.0 and m.rep_points[-1] == 1.0
        assert np.all(np.diff(m.rep_points) > 0)

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            Mesh(np.array([0.0, 0.5, 0.4, 1.0]), 4)
        with pytest.raises(InvalidParameterError):
            Mesh(np.array([0.1, 1.0]), 4)
        with pytest.raises(InvalidParameterError):
            Mesh.uniform(4, 9)

    def test_refined(self):
        m = Mesh.uniform(4, 3).refined(2)
        assert m.intervals == 8


def scalar_system(mesh, lam=1.0, u0=1.0):
    rhs = lambda s, U, pars: lam * U
    bc = lambda ua, ub, pars: np.array([ua[0] - u0])
    return DiscretizedSystem(mesh, 1, rhs, bc, nbc=1)


class TestCollocation:
    def test_exponential(self):
        mesh = Mesh.uniform(8, 4)
        system = scalar_system(mesh)
        x0 = system.pack(np.ones((1, system.nrep)))
        x, info = newton(system, x0)
        U, _ = system.unpack(x)
        assert U[0, -1] == pytest.approx(math.e, abs=1e-10)

    def test_constant_solution_exact(self):
        mesh = Mesh.uniform(5, 3)
        rhs = lambda s, U, pars: np.zeros_like(U)
        bc = lambda ua, ub, pars: np.array([ua[0] - 2.5])
        system = DiscretizedSystem(mesh, 1, rhs, bc, nbc=1)
        x, _ = newton(system, system.pack(np.zeros((1, system.nrep))))
        U, _ = system.unpack(x)
        assert np.allclose(U, 2.5, atol=1e-14)

    def test_stationary_counting_identity(self):
        system = _make_system(Mesh.uniform(64, 4), Params(), BcMode.TRIVIAL_BRANCH)
        assert system.nunknowns == 18 * (64 * 4 + 1)

    def test_dimension_mismatch_raises(self):
        mesh = Mesh.uniform(4, 3)
        rhs = lambda s, U, pars: U
        bc = lambda ua, ub, pars: np.array([ua[0], ub[0]])  # one row too many
        with pytest.raises(AssemblyError):
            DiscretizedSystem(mesh, 1, rhs, bc, nbc=2)

    @pytest.mark.parametrize("degree", [3, 4])
    def test_convergence_order(self, degree):
        # manufactured problem u' = cos(6s) - needs resolution; error should
        # drop by at least ~2^degree under mesh halving
        def err(intervals):
            mesh = Mesh.uniform(intervals, degree)
            rhs = lambda s, U, pars: np.cos(6.0 * s)[None, :]
            bc = lambda ua, ub, pars: np.array([ua[0]])
            system = DiscretizedSystem(mesh, 1, rhs, bc, nbc=1)
            x, _ = newton(system, system.pack(np.zeros((1, system.nrep))))
            U, _ = system.unpack(x)
            exact = np.sin(6.0 * mesh.rep_points) / 6.0
            return float(np.max(np.abs(U[0] - exact)))

        e1, e2 = err(4), err(8)
        assert e2 < e1 / 2 ** degree * 2.0


class TestNewton:
    def test_linear_single_step(self):
        mesh = Mesh.uniform(3, 2)
        rhs = lambda s, U, pars: np.zeros_like(U)
        bc = lambda ua, ub, pars: np.array([ua[0] - 1.0])
        system = DiscretizedSystem(mesh, 1, rhs, bc, nbc=1)
        x, info = newton(system, system.pack(np.zeros((1, system.nrep))))
        assert info.iterations <= 1

    def test_forced_failure(self):
        mesh = Mesh.uniform(4, 3)
        rhs = lambda s, U, pars: U**2 + 1.0
        bc = lambda ua, ub, pars: np.array([ua[0] - 50.0])
        system = DiscretizedSystem(mesh, 1, rhs, bc, nbc=1)
        with pytest.raises(ConvergenceError) as exc:
            newton(system, system.pack(np.full((1, system.nrep), 50.0)), max_iter=1)
        assert exc.value.residual_norm is not None


class TestDetSign:
    def test_identity(self):
        A = sp.identity(10, format="csc")
        s, logmag = det_sign(A)
        assert s == 1 and logmag == pytest.approx(0.0, abs=1e-12)

    def test_negated_row(self):
        A = sp.identity(10, format="csc").tolil()
        A[3, 3] = -1.0
        assert det_sign(A.tocsc())[0] == -1

    def test_singular(self):
        A = sp.identity(5, format="csc").tolil()
        A[2, 2] = 0.0
        s, logmag = det_sign(A.tocsc())
        assert s == 0 and logmag == -math.inf

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_matches_dense_determinant(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((40, 40))
        s_dense = np.sign(np.linalg.det(A))
        s_sparse, _ = det_sign(sp.csc_matrix(A))
        assert s_sparse == s_dense


class TestJacobianConsistency:
    def test_directional_derivative(self):
        # finite differences of the residual match Jacobian-vector products
        p = Params(B=12.0, omega=1.5, T=0.3)
        mesh = Mesh.uniform(6, 4)
        system = _make_system(mesh, p, BcMode.TRIVIAL_BRANCH)
        sol = trivial_solution(p, mesh)
        rng = np.random.default_rng(5)
        x = system.pack(sol.fields) + 0.01 * rng.standard_normal(system.nunknowns)
        J = system.jacobian(x)
        for k in range(3):
            v = rng.standard_normal(system.nunknowns)
            v /= np.linalg.norm(v)
            h = 1e-6
            fd = (system.residual(x + h * v) - system.residual(x - h * v)) / (2 * h)
            jv = J @ v
            denom = max(1.0, float(np.max(np.abs(jv))))
            assert np.max(np.abs(fd - jv)) / denom < 1e-6


class TestHelpers:
    def test_interp_fields_reproduces_nodes(self):
        mesh = Mesh.uniform(5, 4)
        U = np.vstack([np.sin(2 * mesh.rep_points), np.cos(mesh.rep_points)])
        out = interp_fields(mesh, U, mesh.rep_points)
        assert np.allclose(out, U, atol=1e-12)

    def test_interp_fields_accuracy(self):
        mesh = Mesh.uniform(10, 4)
        U = np.sin(3.0 * mesh.rep_points)[None, :]
        s = np.linspace(0, 1, 137)
        out = interp_fields(mesh, U, s)
        assert np.max(np.abs(out[0] - np.sin(3.0 * s))) < 1e-6

    def test_null_vector(self):
        rng = np.random.default_rng(2)
        Q = np.linalg.qr(rng.standard_normal((30, 30)))[0]
        d = np.ones(30)
        d[7] = 1e-14
        A = sp.csc_matrix(Q @ np.diag(d) @ Q.T)
        v = null_vector(A)
        assert np.linalg.norm(A @ v) < 1e-8

    def test_l2_norm_squared_gradient(self):
        mesh = Mesh.uniform(4, 3)
        rhs = lambda s, U, pars: np.zeros_like(U)
        bc = lambda ua, ub, pars: np.array([ua[0], ua[1]])
        system = DiscretizedSystem(mesh, 2, rhs, bc, nbc=2)
        rng = np.random.default_rng(8)
        U = rng.standard_normal((2, system.nrep))
        val, dU = system.l2_norm_squared(U, [0, 1])
        # quadrature of smooth polynomials is near-exact; check the gradient
        h = 1e-7
        for _ in range(4):
            V = rng.standard_normal((2, system.nrep))
            num = (system.l2_norm_squared(U + h * V, [0, 1])[0]
                   - system.l2_norm_squared(U - h * V, [0, 1])[0]) / (2 * h)
            assert num == pytest.approx(float(np.sum(dU * V)), rel=1e-6)
