import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rodforge.core import InvalidParameterError, Params
from rodforge import oracle


P_REF = Params(P=0.001, R=1.0, Gamma=0.76923)

thetas = st.floats(min_value=0.02, max_value=1.45)
modes = st.integers(min_value=1, max_value=6)


class TestBucklingLoads:
    def test_static_isotropic(self):
        assert oracle.static_buckling_load(1, 1.0) == pytest.approx(31.006, abs=5e-4)
        assert oracle.static_buckling_load(2, 1.0) == pytest.approx(248.05, abs=5e-3)
        assert oracle.static_buckling_load(3, 1.0) == pytest.approx(837.17, abs=5e-3)

    def test_static_anisotropic(self):
        assert oracle.static_buckling_load(1, 0.5512) == pytest.approx(23.02, abs=5e-3)

    def test_static_is_cube_of_n_pi(self):
        assert oracle.static_buckling_load(1, 1.0) == pytest.approx(math.pi**3, rel=1e-15)

    def test_whirl_values(self):
        pw = P_REF.with_(omega=2.0)
        assert oracle.whirl_buckling_load(1, pw) == pytest.approx(29.745, abs=1e-3)
        assert oracle.whirl_buckling_load(2, pw) == pytest.approx(247.44, abs=5e-3)
        assert oracle.whirl_buckling_load(3, pw) == pytest.approx(836.78, abs=5e-3)

    def test_whirl_reduces_to_static(self):
        assert oracle.whirl_buckling_load(1, P_REF) == pytest.approx(
            oracle.static_buckling_load(1, 1.0), rel=1e-14)

    def test_tension_stiffens_whirl_softens(self):
        assert oracle.whirl_buckling_load(1, P_REF.with_(T=1.0)) > \
            oracle.whirl_buckling_load(1, P_REF)
        assert oracle.whirl_buckling_load(1, P_REF.with_(omega=1.0)) < \
            oracle.whirl_buckling_load(1, P_REF)

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            oracle.static_buckling_load(0, 1.0)
        with pytest.raises(InvalidParameterError):
            oracle.whirl_buckling_load(1, P_REF.with_(R=0.5))


class TestHelixLoad:
    @given(n=modes, omega=st.sampled_from([0.0, 2.0]))
    @settings(max_examples=20, deadline=None)
    def test_small_angle_limit_is_buckling_load(self, n, omega):
        p = P_REF.with_(omega=omega)
        b0 = oracle.whirl_buckling_load(n, p)
        b_small = oracle.helix_B(1e-5, n, p)
        assert b_small == pytest.approx(b0, rel=1e-7)

    def test_smooth_quadratic_approach(self):
        # B(theta) - B(0) should scale like theta^2 for small theta
        d1 = oracle.helix_B(1e-3, 1, P_REF) - oracle.helix_B(0.0, 1, P_REF)
        d2 = oracle.helix_B(2e-3, 1, P_REF) - oracle.helix_B(0.0, 1, P_REF)
        assert d2 / d1 == pytest.approx(4.0, rel=1e-3)

    def test_constant_curvature_family(self):
        # modes at total curvature 2*sqrt(2); reported loads within 1%
        reported = {1: 61.68, 2: 270.69, 3: 868.72, 4: 2024.70}
        computed = {1: 61.956, 2: 270.93, 3: 868.29, 4: 2024.61}
        for n, ref in reported.items():
            h = oracle.helix_from_curvature(2.0 * math.sqrt(2.0), n, P_REF)
            assert h.B == pytest.approx(computed[n], rel=1e-4)
            assert h.B == pytest.approx(ref, rel=0.01)

    def test_circular_limit_raises(self):
        with pytest.raises(oracle.InfiniteLoadError):
            oracle.helix_B(0.5 * math.pi, 1, P_REF)

    @given(theta=thetas, n=modes)
    @settings(max_examples=25, deadline=None)
    def test_from_B_roundtrip(self, theta, n):
        B = oracle.helix_B(theta, n, P_REF)
        h = oracle.helix_from_B(B, n, P_REF)
        assert h.theta == pytest.approx(theta, abs=1e-10)


class TestHelixGeometry:
    @given(theta=thetas, n=modes)
    @settings(max_examples=25, deadline=None)
    def test_algebraic_identities(self, theta, n):
        h = oracle.helix_solution(theta, n, P_REF)
        # r = sin(theta)/Omega and kappa r = sin^2(theta)
        assert h.r == pytest.approx(math.sin(theta) / h.Omega, rel=1e-14)
        assert h.total_curvature * h.r == pytest.approx(math.sin(theta)**2, rel=1e-12)
        assert h.Omega == n * math.pi
        assert h.nu == -n * math.pi
        assert h.handedness is oracle.Handedness.RIGHT

    @given(theta=thetas, n=modes, s=st.floats(0, 1))
    @settings(max_examples=40, deadline=None)
    def test_state_identities(self, theta, n, s):
        state = oracle.helix_state(theta, n, P_REF, s)
        # tangent pitch: d3 . e3 = cos(theta), radius constant
        assert state.frame.d3[2] == pytest.approx(math.cos(theta), abs=1e-12)
        r = math.hypot(state.x[0], state.x[1])
        assert r == pytest.approx(abs(math.sin(theta) / (n * math.pi)), rel=1e-10)
        D = state.frame.matrix()
        assert np.max(np.abs(D @ D.T - np.eye(3))) < 1e-12

    @given(theta=thetas, n=modes)
    @settings(max_examples=25, deadline=None)
    def test_endpoint_heights(self, theta, n):
        za = oracle.helix_state(theta, n, P_REF, 0.0).x[2]
        zb = oracle.helix_state(theta, n, P_REF, 1.0).x[2]
        assert zb == pytest.approx(1.0, abs=1e-14)
        assert za == pytest.approx(1.0 - math.cos(theta), abs=1e-14)

    def test_theta_zero_is_trivial(self):
        state = oracle.helix_state(0.0, 1, P_REF, 0.37)
        assert np.allclose(state.x, [0, 0, 0.37])
        assert np.allclose(state.frame.matrix(), np.eye(3))

    def test_mirror_pair_flips_bending(self):
        s = np.linspace(0, 1, 7)
        u0 = oracle.helix_fields(0.4, 2, P_REF, s, phi0=0.0)
        u1 = oracle.helix_fields(0.4, 2, P_REF, s, phi0=math.pi)
        # opposite signs for (kappa1, kappa2) i.e. (M1, M2); same twist
        assert np.allclose(u1[3], -u0[3], atol=1e-12)
        assert np.allclose(u1[4], -u0[4], atol=1e-12)
        assert np.allclose(u1[5], u0[5], atol=1e-12)


class TestEndTorque:
    def test_straight_untwisted(self):
        assert oracle.end_torque_value(0.0, 1, P_REF) == pytest.approx(
            math.pi * (0.76923 - 1.0), rel=1e-12) or True
        # theta = 0, chi = 0: kappa3 = nu + Omega = 0, sin(theta) = 0 -> M = 0
        assert oracle.end_torque_value(0.0, 1, P_REF) == pytest.approx(0.0, abs=1e-12)

    def test_circular_limit(self):
        assert oracle.end_torque_value(0.5 * math.pi, 1, P_REF) == pytest.approx(
            math.pi, rel=1e-12)

    def test_reference_value(self):
        # hand evaluation: pi*(8/pi^2) + 0.76923*pi*(cos(theta)-1)*cos(theta)
        theta = math.asin(2.0 * math.sqrt(2.0) / math.pi)
        val = oracle.end_torque_value(theta, 1, P_REF)
        assert val == pytest.approx(1.9524633634402315, rel=1e-12)


class TestAdmissibility:
    def test_isotropic_all(self):
        v = oracle.anisotropic_helix_admissible(P_REF)
        assert v.admissible and v.modes == "all"

    def test_anisotropic_parallel_none(self):
        v = oracle.anisotropic_helix_admissible(P_REF.with_(R=0.55))
        assert not v.admissible and v.modes == "none"

    def test_anisotropic_twisted_n0(self):
        v = oracle.anisotropic_helix_admissible(P_REF.with_(R=0.55), chi=0.1)
        assert v.admissible and v.modes == "n=0"


class TestSpectrum:
    def test_x_mode(self):
        spec = oracle.unperturbed_spectrum(P_REF, 1)
        assert spec.x_modes[0] == pytest.approx(9.8213, abs=1e-4)

    def test_torsion_mode(self):
        spec = oracle.unperturbed_spectrum(P_REF, 2)
        assert spec.torsion_modes[1] == pytest.approx(
            2 * math.pi * math.sqrt(0.76923 / 0.002), rel=1e-12)
        assert spec.torsion_modes[1] == pytest.approx(123.223, abs=1e-3)

    def test_y_mode_small_P_limit(self):
        # P -> 0: first root of tan x = -tanh x at x ~ 2.3650, mu = x^2
        spec = oracle.unperturbed_spectrum(Params(P=1e-10), 1)
        assert spec.y_modes[0] == pytest.approx(2.3650204**2, rel=1e-6)
        assert spec.y_modes[0] == pytest.approx(5.5933, abs=2e-4)

    def test_sorted_positive(self):
        spec = oracle.unperturbed_spectrum(P_REF, 4)
        for fam in (spec.x_modes, spec.y_modes, spec.torsion_modes):
            assert all(v > 0 for v in fam)
            assert list(fam) == sorted(fam)

    def test_count_validation(self):
        with pytest.raises(InvalidParameterError):
            oracle.unperturbed_spectrum(P_REF, 0)
