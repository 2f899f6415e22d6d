import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rodforge.core import Params, SingularRadiusError
from rodforge.collocation import Mesh
from rodforge import oracle
from rodforge import stationary
from rodforge.stationary import (
    BcMode,
    RodSolution,
    boundary_residual,
    helix_solution_fields,
    ode_rhs,
    solve,
    trivial_solution,
    z2_reflect,
)

P_REF = Params(P=0.001, R=1.0, Gamma=0.76923)


class TestOdeRhs:
    @given(T=st.floats(-3, 3), B=st.floats(0, 100), omega=st.floats(0, 3))
    @settings(max_examples=30, deadline=None)
    def test_trivial_state_is_equilibrium(self, T, B, omega):
        p = P_REF.with_(T=T, B=B, omega=omega)
        s = np.linspace(0, 1, 9)
        from rodforge.core import trivial_fields

        du = ode_rhs(trivial_fields(p, s), p)
        expected = np.zeros_like(du)
        expected[8] = 1.0  # z' = 1: the only nonzero derivative
        assert np.max(np.abs(du - expected)) < 1e-14

    @pytest.mark.parametrize("n,omega", [(1, 0.0), (2, 0.0), (3, 2.0), (6, 2.0)])
    def test_helix_satisfies_ode(self, n, omega):
        p = P_REF.with_(omega=omega)
        theta = 0.45
        pB = p.with_(B=oracle.helix_B(theta, n, p))
        s = np.linspace(0.0, 1.0, 23)
        u = oracle.helix_fields(theta, n, p, s)
        dud = oracle.helix_fields_derivative(theta, n, p, s)
        assert np.max(np.abs(ode_rhs(u, pB) - dud)) < 1e-9

    def test_statics_has_no_whirl_terms(self):
        # at omega = 0 the rhs must coincide for any omega-bearing parameters
        p0 = P_REF.with_(B=7.0, omega=0.0)
        s = np.linspace(0, 1, 5)
        u = oracle.helix_fields(0.3, 1, P_REF, s)
        r0 = ode_rhs(u, p0)
        r1 = ode_rhs(u, p0.with_(P=0.999))  # P enters only via omega^2 terms
        assert np.allclose(r0, r1, atol=1e-15)


class TestBoundaryResidual:
    @given(T=st.floats(-3, 3), omega=st.floats(0, 3))
    @settings(max_examples=30, deadline=None)
    def test_trivial_satisfies_all_rows(self, T, omega):
        p = P_REF.with_(T=T, omega=omega)
        from rodforge.core import trivial_fields

        u = trivial_fields(p, np.array([0.0, 1.0]))
        r = boundary_residual(u[:, 0], u[:, 1], p, BcMode.TRIVIAL_BRANCH)
        assert np.max(np.abs(r)) < 1e-14

    def test_trivial_helix_mode_singular(self):
        from rodforge.core import trivial_fields

        p = P_REF
        u = trivial_fields(p, np.array([0.0, 1.0]))
        with pytest.raises(SingularRadiusError):
            boundary_residual(u[:, 0], u[:, 1], p, BcMode.HELIX_CENTRED)

    @pytest.mark.parametrize("n,theta", [(1, 0.3), (2, 0.5), (4, 1.0)])
    def test_helix_satisfies_radius_mode(self, n, theta):
        p = P_REF
        pB = p.with_(B=oracle.helix_B(theta, n, p))
        u = oracle.helix_fields(theta, n, p, np.array([0.0, 1.0]))
        r = boundary_residual(u[:, 0], u[:, 1], pB, BcMode.HELIX_CENTRED)
        assert np.max(np.abs(r)) < 1e-10


class TestSolve:
    def test_subcritical_returns_to_trivial(self):
        p = P_REF.with_(B=10.0)
        mesh = Mesh.uniform(12, 4)
        guess = trivial_solution(p, mesh)
        rng = np.random.default_rng(0)
        noisy = RodSolution(mesh, guess.fields + 1e-4 * rng.standard_normal(guess.fields.shape), p)
        sol = solve(noisy, p, BcMode.TRIVIAL_BRANCH)
        assert sol.r_over_L < 1e-9
        assert abs(sol.fields[2, 0] - 0.0) < 1e-9

    def test_exact_helix_guess_converges_fast(self):
        p = P_REF
        mesh = Mesh.uniform(40, 4)
        sol0 = helix_solution_fields(0.5, 2, p, mesh)
        from rodforge.collocation import newton
        from rodforge.stationary import _make_system

        system = _make_system(mesh, sol0.params, BcMode.HELIX_CENTRED)
        x, info = newton(system, system.pack(sol0.fields))
        assert info.iterations <= 2
        U, _ = system.unpack(x)
        # discretisation gap between the exact solution and its collocant
        assert np.max(np.abs(U - sol0.fields)) < 1e-7

    def test_converged_frames_stay_orthonormal(self):
        p = P_REF
        mesh = Mesh.uniform(24, 4)
        sol = solve(helix_solution_fields(0.7, 1, p, mesh),
                    helix_solution_fields(0.7, 1, p, mesh).params,
                    BcMode.HELIX_CENTRED)
        assert sol.max_orthonormality_defect() < 1e-8

    def test_trivial_branch_force_is_minus_T(self):
        p = P_REF.with_(T=0.8, B=5.0)
        mesh = Mesh.uniform(10, 4)
        sol = solve(trivial_solution(p, mesh), p, BcMode.TRIVIAL_BRANCH)
        assert np.allclose(sol.fields[2], -0.8, atol=1e-10)


class TestSymmetry:
    def test_mirror_pair_is_reflection(self):
        p = P_REF
        mesh = Mesh.uniform(8, 4)
        u0 = helix_solution_fields(0.4, 1, p, mesh, phi0=0.0).fields
        u1 = helix_solution_fields(0.4, 1, p, mesh, phi0=math.pi).fields
        assert np.max(np.abs(z2_reflect(u0) - u1)) < 1e-12

    @pytest.mark.parametrize("omega", [0.0, 2.0])
    def test_reflected_solution_solves_system(self, omega):
        p = P_REF.with_(omega=omega)
        theta, n = 0.55, 1
        pB = p.with_(B=oracle.helix_B(theta, n, p))
        s = np.linspace(0, 1, 17)
        u = oracle.helix_fields(theta, n, p, s)
        ur = z2_reflect(u)
        dur = z2_reflect(oracle.helix_fields_derivative(theta, n, p, s))
        assert np.max(np.abs(ode_rhs(ur, pB) - dur)) < 1e-9
        r = boundary_residual(ur[:, 0], ur[:, -1], pB, BcMode.HELIX_CENTRED)
        assert np.max(np.abs(r)) < 1e-10


class TestSerialization:
    def test_csv_layout_and_determinism(self):
        p = P_REF
        mesh = Mesh.uniform(4, 3)
        sol = helix_solution_fields(0.4, 1, p, mesh)
        text = sol.to_csv()
        assert text == sol.to_csv()
        lines = [l for l in text.splitlines() if not l.startswith("#")]
        header = lines[0].split(",")
        assert header[:10] == ["s", "x", "y", "z", "F1", "F2", "F3", "M1", "M2", "M3"]
        assert len(header) == 19
        assert len(lines) - 1 == sol.nodes
        # 17 significant digits survive a round trip
        val = float(lines[1].split(",")[1])
        assert val == sol.fields[6, 0]

    def test_residual_norm_of_exact_solution(self):
        sol = trivial_solution(P_REF.with_(B=3.0), Mesh.uniform(6, 4))
        assert sol.residual_norm() < 1e-12
