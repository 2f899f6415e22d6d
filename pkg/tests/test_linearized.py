"""The linearised operator is validated against a direct perturbation of the
primitive balance laws: insert the frame perturbation d_i -> d_i + alpha x d_i
and the exponential time dependence into the momentum balances and the
viscoelastic constitutive law, and compare the required field derivatives
with the coefficient-matrix form, entry by entry, on nontrivial bases."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rodforge.core import (
    IDX_D1, IDX_D2, IDX_D3, IDX_F, IDX_M,
    DegenerateConstitutiveError,
    Params,
    RodState,
    torsional_stiffness,
    trivial_fields,
)
from rodforge import oracle
from rodforge.linearized import (
    NPERT,
    PerturbationSolution,
    alpha_prime,
    coefficients,
    coefficients_fields,
    linearized_bc_residual,
    linearized_rhs,
    pert_bc_residual,
    pert_rhs,
    system_matrix,
)
from rodforge.collocation import Mesh
from rodforge.stationary import BcMode, ode_rhs

P_REF = Params(P=0.001, R=1.0, Gamma=0.76923)


def primitive_derivatives(u, up, v, lam, p):
    """(xt', al', Ft', Mt') demanded by the raw O(delta) balance laws."""
    F0, M0 = u[IDX_F], u[IDX_M]
    d1, d2, d3 = u[IDX_D1], u[IDX_D2], u[IDX_D3]
    D = np.stack([d1, d2, d3])
    xt, al, Ft, Mt = v[0:3], v[3:6], v[6:9], v[9:12]
    w = p.omega
    gj = torsional_stiffness(p)
    kap = np.array([M0[0], M0[1] / p.R, 2 * M0[2] / (p.Gamma * (1 + p.R))])
    kap_e = kap @ D
    al_e = al @ D
    F0_e = F0 @ D
    M0_e = M0 @ D
    F0p, M0p = up[IDX_F], up[IDX_M]
    F0_e_p = F0p @ D + np.cross(kap_e, F0_e)
    M0_e_p = M0p @ D + np.cross(kap_e, M0_e)

    K = np.array([1.0, p.R, gj])
    kap_t = Mt / (K * (1.0 + p.gamma * lam))
    alp = kap_t - np.cross(kap, al)
    al_e_p = alp @ D + np.cross(kap_e, al_e)
    xtp = np.cross(al_e, d3)

    e3 = np.array([0.0, 0.0, 1.0])
    inertia = lam**2 * xt + 2 * lam * w * np.cross(e3, xt) \
        + w**2 * (np.dot(e3, xt) * e3 - xt)
    dF_sum = inertia - p.B * np.cross(np.cross(al_e, d3), e3) \
        - (Ft @ np.stack([np.cross(kap_e, d) for d in (d1, d2, d3)])) \
        - np.cross(al_e_p, F0_e) - np.cross(al_e, F0_e_p)
    Ftp = np.array([dF_sum @ d1, dF_sum @ d2, dF_sum @ d3])

    a1, a2 = np.cross(al_e, d1), np.cross(al_e, d2)
    wv = w * e3
    rhs = p.P * (
        p.R * (np.cross(d1, lam**2 * a1) + 2 * np.cross(d1, np.cross(wv, lam * a1))
               + np.dot(wv, a1) * np.cross(d1, wv) + np.dot(wv, d1) * np.cross(a1, wv))
        + (np.cross(d2, lam**2 * a2) + 2 * np.cross(d2, np.cross(wv, lam * a2))
           + np.dot(wv, a2) * np.cross(d2, wv) + np.dot(wv, d2) * np.cross(a2, wv)))
    dFvec = Ft @ D + np.cross(al_e, F0_e)
    dM_sum = rhs - np.cross(np.cross(al_e, d3), F0_e) - np.cross(d3, dFvec) \
        - (Mt @ np.stack([np.cross(kap_e, d) for d in (d1, d2, d3)])) \
        - np.cross(al_e_p, M0_e) - np.cross(al_e, M0_e_p)
    Mtp = np.array([dM_sum @ d1, dM_sum @ d2, dM_sum @ d3])
    return np.concatenate([xtp, alp, Ftp, Mtp])


def check_against_primitive(U, p, lam, seed=0, tol=1e-10):
    Up = ode_rhs(U, p)
    A = system_matrix(U, p, lam)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(U.shape[1]):
        v = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        got = A[k] @ v
        want = primitive_derivatives(U[:, k], Up[:, k], v, lam, p)
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst < tol, worst


class TestPrimitiveOracle:
    def test_whirling_damped_helix_complex_lambda(self):
        p = P_REF.with_(gamma=0.03, omega=2.0)
        pB = p.with_(B=oracle.helix_B(0.47, 1, p))
        U = oracle.helix_fields(0.47, 1, p, np.array([0.123, 0.5, 0.87]))
        check_against_primitive(U, pB, 0.31 + 0.87j)

    def test_static_undamped_imaginary_lambda(self):
        p = P_REF
        pB = p.with_(B=oracle.helix_B(0.3, 2, p))
        U = oracle.helix_fields(0.3, 2, p, np.array([0.2, 0.71]))
        check_against_primitive(U, pB, 1.2j)

    def test_anisotropic_fields(self):
        # the identity holds for any base fields once both sides substitute
        # the same base derivatives, so anisotropic R is testable directly
        p = Params(P=0.001, R=0.55, Gamma=0.76923, gamma=0.07, omega=1.3, B=40.0)
        U = oracle.helix_fields(0.35, 1, P_REF, np.array([0.2, 0.66]))
        check_against_primitive(U, p, 0.2 + 0.9j)

    def test_real_lambda(self):
        p = P_REF.with_(B=31.5)
        U = oracle.helix_fields(0.1, 1, P_REF, np.array([0.4]))
        check_against_primitive(U, p, complex(0.8))


class TestCoefficients:
    def test_trivial_state_structure(self):
        p = P_REF.with_(B=12.0, omega=1.5, T=0.7)
        cs = coefficients(RodState.from_vector(trivial_fields(p, np.array([0.5]))[:, 0]), p)
        assert np.allclose(cs.B1, 0.0)
        assert np.allclose(cs.B2, p.omega**2 * np.diag([1.0, 1.0, 0.0]))
        assert np.allclose(cs.B4, np.diag([-p.B, -p.B, 0.0]))
        assert np.allclose(cs.B5, np.eye(3))
        assert np.allclose(cs.C4, [[0, -1, 0], [1, 0, 0], [0, 0, 0]])
        assert np.allclose(cs.C5, p.P * np.diag([1.0, p.R, 1.0 + p.R]))
        assert np.allclose(cs.C3, np.diag([-p.P * p.omega**2,
                                           -p.P * p.R * p.omega**2, 0.0]))

    @given(M1=st.floats(-3, 3), M2=st.floats(-3, 3), M3=st.floats(-3, 3),
           R=st.floats(0.2, 3.0))
    @settings(max_examples=25, deadline=None)
    def test_B1_skew_symmetric(self, M1, M2, M3, R):
        p = P_REF.with_(R=R)
        u = trivial_fields(p, np.array([0.3]))[:, 0]
        u[3:6] = [M1, M2, M3]
        cs = coefficients(RodState.from_vector(u), p)
        assert np.allclose(cs.B1 + cs.B1.T, 0.0, atol=1e-14)
        assert np.allclose(cs.C1, cs.B1)

    def test_damping_factors(self):
        p = P_REF.with_(gamma=0.0)
        u = oracle.helix_fields(0.4, 1, P_REF, np.array([0.3]))[:, 0]
        cs = coefficients(RodState.from_vector(u), p)
        assert np.allclose(cs.D3, 0.0) and np.allclose(cs.D4, 0.0)
        pg = P_REF.with_(gamma=0.11)
        csg = coefficients(RodState.from_vector(u), pg)
        assert np.allclose(csg.D4, -pg.gamma * csg.D1)


class TestLinearizedRhs:
    def test_zero_input_zero_output(self):
        p = P_REF.with_(B=20.0)
        u = oracle.helix_fields(0.4, 1, P_REF, np.array([0.3]))[:, 0]
        out = linearized_rhs(np.zeros(24), u, 1.0j, p)
        assert np.allclose(out, 0.0)

    @given(scale=st.floats(-5, 5))
    @settings(max_examples=20, deadline=None)
    def test_linearity(self, scale):
        p = P_REF.with_(B=20.0, omega=1.0)
        u = oracle.helix_fields(0.4, 1, P_REF.with_(omega=1.0), np.array([0.3]))[:, 0]
        rng = np.random.default_rng(4)
        v = rng.standard_normal(24)
        out1 = linearized_rhs(v, u, 0.5 + 2.0j, p)
        out2 = linearized_rhs(scale * v, u, 0.5 + 2.0j, p)
        assert np.allclose(out2, scale * out1, rtol=1e-12, atol=1e-12)

    def test_quadratic_lambda_dependence(self):
        # gamma = omega = 0: the operator depends on lambda only through
        # lambda^2, so A(lam) = A(-lam)
        p = P_REF.with_(B=35.0)
        U = oracle.helix_fields(0.5, 1, P_REF, np.array([0.25, 0.75]))
        lam = 0.7 + 1.3j
        assert np.allclose(system_matrix(U, p, lam),
                           system_matrix(U, p, -lam), atol=1e-13)

    def test_gyroscopic_breaks_quadratic(self):
        p = P_REF.with_(B=35.0, omega=1.0)
        U = oracle.helix_fields(0.a if False else 0.5, 1, P_REF.with_(omega=1.0),
                                np.array([0.25]))
        lam = 0.7 + 1.3j
        assert not np.allclose(system_matrix(U, p, lam),
                               system_matrix(U, p, -lam), atol=1e-13)

    def test_degenerate_viscoelastic_block(self):
        p = P_REF.with_(gamma=0.5)
        u = trivial_fields(p, np.array([0.5]))
        with pytest.raises(DegenerateConstitutiveError):
            system_matrix(u, p, complex(-2.0))  # 1 + gamma*lambda = 0


class TestLinearizedBc:
    def test_zero_perturbation(self):
        p = P_REF.with_(B=40.0)
        u = oracle.helix_fields(0.5, 1, P_REF, np.array([0.0, 1.0]))
        r = pert_bc_residual(np.zeros(12, complex), np.zeros(12, complex),
                             u[:, 0], u[:, 1], p, 1.0j, BcMode.HELIX_CENTRED)
        assert np.allclose(r, 0.0)

    @given(scale=st.floats(0.1, 4))
    @settings(max_examples=15, deadline=None)
    def test_linearity(self, scale):
        p = P_REF.with_(B=40.0)
        u = oracle.helix_fields(0.5, 1, P_REF, np.array([0.0, 1.0]))
        rng = np.random.default_rng(9)
        va = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        vb = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        r1 = pert_bc_residual(va, vb, u[:, 0], u[:, 1], p, 2.0j, BcMode.HELIX_CENTRED)
        r2 = pert_bc_residual(scale * va, scale * vb, u[:, 0], u[:, 1], p, 2.0j,
                              BcMode.HELIX_CENTRED)
        assert np.allclose(r2, scale * r1, rtol=1e-12, atol=1e-12)

    def test_real_split_wrapper(self):
        p = P_REF
        u = trivial_fields(p, np.array([0.0, 1.0]))
        rng = np.random.default_rng(3)
        pa, pb = rng.standard_normal(24), rng.standard_normal(24)
        r = linearized_bc_residual(pa, pb, u[:, 0], u[:, 1], p, 1.5j,
                                   BcMode.TRIVIAL_BRANCH)
        assert r.shape == (24,)

    def test_trivial_branch_mode_rows(self):
        # about the straight state the final row pins y^t(1) at omega = 0
        p = P_REF
        u = trivial_fields(p, np.array([0.0, 1.0]))
        v = np.zeros(12, complex)
        v[1] = 2.0  # y^t
        r = pert_bc_residual(np.zeros(12, complex), v, u[:, 0], u[:, 1], p,
                             1.0j, BcMode.TRIVIAL_BRANCH)
        assert r[11] == pytest.approx(2.0)
        # at omega != 0 it is the force condition instead
        pw = p.with_(omega=2.0)
        r = pert_bc_residual(np.zeros(12, complex), v, u[:, 0], u[:, 1], pw,
                             1.0j, BcMode.TRIVIAL_BRANCH)
        assert r[11] == 0.0
        v2 = np.zeros(12, complex)
        v2[7] = 3.0  # F2^t
        r = pert_bc_residual(np.zeros(12, complex), v2, u[:, 0], u[:, 1], pw,
                             1.0j, BcMode.TRIVIAL_BRANCH)
        assert r[11] == pytest.approx(3.0)


class TestBucklingReduction:
    def test_det_scan_reproduces_static_buckling(self):
        """At lambda = 0 about the straight state the perturbation operator
        must turn singular exactly at B = (n pi)^3 sqrt(R)."""
        from rodforge.collocation import det_sign
        from rodforge.stagesys import make_pert_scan_system
        from rodforge.stationary import trivial_solution

        for R in (1.0, 0.5512):
            p = P_REF.with_(R=R)
            mesh = Mesh.uniform(12, 4)
            base = trivial_solution(p, mesh)
            signs = {}
            for B in np.linspace(1.0, 40.0, 30):
                system = make_pert_scan_system(mesh, base.fields,
                                               p.with_(B=float(B)),
                                               axis="imag",
                                               bc_mode=BcMode.TRIVIAL_BRANCH)
                system.set_mu(0.0)
                x0 = system.pack(np.zeros((12, system.nrep)))
                signs[float(B)] = det_sign(system.jacobian(x0))[0]
            flips = [b for a, b in zip(sorted(signs), sorted(signs)[1:])
                     if signs[a] != signs[b]]
            expected = oracle.static_buckling_load(1, R)
            assert any(abs(expected - 0.5 * (f + max(a for a in signs if a < f)))
                       < 2.0 for f in flips)


class TestPerturbationSolution:
    def test_csv(self):
        mesh = Mesh.uniform(3, 3)
        fields = np.arange(24 * 10, dtype=float).reshape(24, 10)
        ps = PerturbationSolution(mesh, 0.1, 2.5, fields, 1.0, 1.0)
        text = ps.to_csv()
        assert "lambda_r=0.1" in text and "lambda_i=2.5" in text
        lines = [l for l in text.splitlines() if not l.startswith("#")]
        assert len(lines[0].split(",")) == 25
        assert len(lines) - 1 == 10
        assert ps.component("alpha_2")[0] == fields[4, 0] + 1j * fields[16, 0]
