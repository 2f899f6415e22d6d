"""Quasi-stationary whirl boundary-value problem for the rod.

Eighteen first-order ODEs in the state (F, M, x, d1, d2, d3) on s in [0,1]:
force and moment balance in the frame rotating at rate omega, the tangent
equation x' = d3, and the frame transport d_i' = kappa x d_i, closed by the
constitutive inversion kappa = (M1, M2/R, 2 M3/(Gamma(1+R))).

Boundary conditions ("coat hanger"): the rod hinges about and slides along
the support axes v0 = v1 = e2; twelve geometric/static rows plus six Gram
orthonormality rows at s = 0.  The eleventh geometric row distinguishes the
solution family:

* TRIVIAL_BRANCH - straight-compatible closure.  At omega = 0 the rigid
  slide along v1 is a true degeneracy and is pinned by x(1).v1 = 0; at
  omega != 0 that degeneracy is absent (centrifugal forces select the
  centred state) and the pin would shift the buckling loads, so the
  physical force-free slide condition F(1).v1 = 0 is used instead.
* HELIX_CENTRED - the nonlinear radius condition
  x(1).v1 = (1 - (d3(1).e3)^2)/kappa1(1), which centres a bifurcated helix
  on the rotation axis; singular on the straight branch.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np

from . import __version__ as _version
from .core import (
    IDX_D1, IDX_D2, IDX_D3, IDX_F, IDX_M, IDX_X, NF,
    Params,
    RodState,
    SingularRadiusError,
    curvatures_from_moments,
    trivial_fields,
)
from .collocation import DiscretizedSystem, Mesh, interp_fields, newton

__all__ = [
    "BcMode",
    "ode_rhs",
    "boundary_residual",
    "RodSolution",
    "solve",
    "trivial_solution",
    "helix_solution_fields",
    "z2_reflect",
    "cross3",
]


class BcMode(enum.Enum):
    TRIVIAL_BRANCH = "trivial-branch"
    HELIX_CENTRED = "helix-centred"


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product of (3, ...) arrays along the leading axis."""
    return np.stack([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def _dir_project(v: np.ndarray, d1, d2, d3) -> np.ndarray:
    """Components of an {e}-frame vector along the directors."""
    return np.stack([
        np.einsum("i...,i...->...", v, d1),
        np.einsum("i...,i...->...", v, d2),
        np.einsum("i...,i...->...", v, d3),
    ])


def ode_rhs(U: np.ndarray, p: Params) -> np.ndarray:
    """Derivatives of the 18 stationary fields; U has shape (18,) or (18, npts)."""
    U = np.asarray(U, dtype=float)
    squeeze = U.ndim == 1
    if squeeze:
        U = U[:, None]
    F, M = U[IDX_F], U[IDX_M]
    x = U[IDX_X]
    d1, d2, d3 = U[IDX_D1], U[IDX_D2], U[IDX_D3]
    kap = curvatures_from_moments(M, p)

    out = np.empty_like(U)
    w2 = p.omega**2
    # planar position vector (x, y, 0) and the Lorentz direction d3 x e3
    r_plane = np.stack([x[0], x[1], np.zeros_like(x[0])])
    d3xe3 = np.stack([d3[1], -d3[0], np.zeros_like(d3[0])])
    out[IDX_F] = (cross3(F, kap)
                  - p.B * _dir_project(d3xe3, d1, d2, d3)
                  - w2 * _dir_project(r_plane, d1, d2, d3))

    # rotary inertia of the spinning cross-section
    d1xe3 = np.stack([d1[1], -d1[0], np.zeros_like(d1[0])])
    d2xe3 = np.stack([d2[1], -d2[0], np.zeros_like(d2[0])])
    rot = p.P * w2 * (p.R * d1[2] * _dir_project(d1xe3, d1, d2, d3)
                      + d2[2] * _dir_project(d2xe3, d1, d2, d3))
    d3xF = np.stack([-F[1], F[0], np.zeros_like(F[0])])
    out[IDX_M] = cross3(M, kap) - d3xF + rot

    out[IDX_X] = d3
    kap_e = kap[0] * d1 + kap[1] * d2 + kap[2] * d3
    out[IDX_D1] = cross3(kap_e, d1)
    out[IDX_D2] = cross3(kap_e, d2)
    out[IDX_D3] = cross3(kap_e, d3)
    return out[:, 0] if squeeze else out


def _helix_radius_value(ub: np.ndarray, kappa_min: float) -> float:
    kap1 = ub[3]  # kappa1(1) = M1(1)
    if abs(kap1) < kappa_min:
        raise SingularRadiusError(
            f"helix-radius condition singular: |kappa1(1)| = {abs(kap1):.3e} < {kappa_min:.1e}"
        )
    d33 = ub[17]
    return (1.0 - d33**2) / kap1


def boundary_residual(left, right, p: Params, mode: BcMode,
                      kappa_min: float = 1e-8) -> np.ndarray:
    """The 18 boundary rows.  ``left``/``right`` are 18-vectors or RodStates."""
    ua = left.to_vector() if isinstance(left, RodState) else np.asarray(left, dtype=float)
    ub = right.to_vector() if isinstance(right, RodState) else np.asarray(right, dtype=float)
    r = np.empty(18)
    # s = 0: hinge about v0 = e2, slide force-free, end force T, plane restriction
    r[0] = ua[10]                                       # d1 . v0
    r[1] = ua[16]                                       # d3 . v0
    r[2] = ua[3] * ua[10] + ua[4] * ua[13] + ua[5] * ua[16]   # M . v0
    r[3] = ua[0] * ua[10] + ua[1] * ua[13] + ua[2] * ua[16]   # F . v0
    r[4] = ua[0] * ua[11] + ua[1] * ua[14] + ua[2] * ua[17] + p.T  # F . e3 = -T
    r[5] = ua[6]                                        # x . (v0 x e3)
    # orthonormality of the director basis at s = 0
    d1a, d2a, d3a = ua[IDX_D1], ua[IDX_D2], ua[IDX_D3]
    r[6] = d1a @ d1a - 1.0
    r[7] = d2a @ d2a - 1.0
    r[8] = d3a @ d3a - 1.0
    r[9] = d1a @ d2a
    r[10] = d1a @ d3a
    r[11] = d2a @ d3a
    # s = 1
    r[12] = ub[10]                                      # d1 . v1
    r[13] = ub[16]                                      # d3 . v1
    r[14] = ub[3] * ub[10] + ub[4] * ub[13] + ub[5] * ub[16]  # M . v1
    r[15] = ub[6]                                       # x . (v1 x e3)
    if mode is BcMode.HELIX_CENTRED:
        r[16] = ub[7] - _helix_radius_value(ub, kappa_min)
    elif p.omega == 0.0:
        r[16] = ub[7]                                   # slide pin x . v1 = 0
    else:
        r[16] = ub[0] * ub[10] + ub[1] * ub[13] + ub[2] * ub[16]  # F . v1
    r[17] = ub[8] - 1.0                                 # z(1) = 1
    return r


@dataclass
class RodSolution:
    """Discretised stationary solution: representation-point values on a mesh."""

    mesh: Mesh
    fields: np.ndarray          # (18, m*d + 1)
    params: Params
    bc_mode: BcMode = BcMode.TRIVIAL_BRANCH

    @property
    def s(self) -> np.ndarray:
        return self.mesh.rep_points

    @property
    def nodes(self) -> int:
        return self.fields.shape[1]

    def state_at(self, i: int) -> RodState:
        return RodState.from_vector(self.fields[:, i])

    @property
    def states(self):
        return [self.state_at(i) for i in range(self.nodes)]

    def interp(self, s_new) -> np.ndarray:
        return interp_fields(self.mesh, self.fields, s_new)

    # -- diagnostics --------------------------------------------------------

    def radius_profile(self) -> np.ndarray:
        return np.hypot(self.fields[6], self.fields[7])

    @property
    def r_over_L(self) -> float:
        return float(np.max(self.radius_profile()))

    @property
    def kappa_end(self) -> float:
        kap = curvatures_from_moments(self.fields[IDX_M, -1], self.params)
        return float(np.hypot(kap[0], kap[1]))

    @property
    def z_slide(self) -> float:
        return float(self.fields[8, 0])

    def total_curvature(self) -> np.ndarray:
        kap = curvatures_from_moments(self.fields[IDX_M], self.params)
        return np.hypot(kap[0], kap[1])

    def max_orthonormality_defect(self) -> float:
        D = np.stack([self.fields[IDX_D1], self.fields[IDX_D2], self.fields[IDX_D3]])
        G = np.einsum("iap,jap->ijp", D, D) - np.eye(3)[:, :, None]
        return float(np.max(np.abs(G)))

    def residual_norm(self) -> float:
        """Max collocation + boundary residual at the stored coefficients."""
        system = _make_system(self.mesh, self.params, self.bc_mode)
        return float(np.max(np.abs(system.residual(system.pack(self.fields)))))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# rodforge {_version} stationary solution\n")
        pd = self.params.as_dict()
        buf.write("# " + " ".join(f"{k}={pd[k]:.17g}" for k in pd) + "\n")
        buf.write(f"# bc_mode={self.bc_mode.value}\n")
        cols = (["s", "x", "y", "z", "F1", "F2", "F3", "M1", "M2", "M3"]
                + [f"d{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)])
        buf.write(",".join(cols) + "\n")
        s = self.s
        order = [6, 7, 8, 0, 1, 2, 3, 4, 5] + list(range(9, 18))
        for k in range(self.nodes):
            row = [s[k]] + [self.fields[i, k] for i in order]
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def _make_system(mesh: Mesh, p: Params, mode: BcMode,
                 kappa_min: float = 1e-8) -> DiscretizedSystem:
    rhs = lambda s, U, pars: ode_rhs(U, p)
    bc = lambda ua, ub, pars: boundary_residual(ua, ub, p, mode, kappa_min)
    return DiscretizedSystem(mesh, NF, rhs, bc, nbc=NF)


def trivial_solution(p: Params, mesh: Mesh | None = None) -> RodSolution:
    mesh = mesh or Mesh.uniform()
    return RodSolution(mesh, trivial_fields(p, mesh.rep_points), p)


def helix_solution_fields(theta: float, n: int, p: Params, mesh: Mesh,
                          phi0: float = 0.0) -> RodSolution:
    """Exact closed-form helix sampled on a mesh (guess or oracle reference)."""
    from .oracle import helix_B, helix_fields

    fields = helix_fields(theta, n, p, mesh.rep_points, phi0=phi0)
    return RodSolution(mesh, fields, p.with_(B=helix_B(theta, n, p)),
                       bc_mode=BcMode.HELIX_CENTRED)


def solve(guess: RodSolution, p: Params, mode: BcMode,
          newton_tol: float = 1e-10, max_iter: int = 25,
          kappa_min: float = 1e-8, log=None) -> RodSolution:
    """Newton-converge the stationary BVP from ``guess`` at fixed parameters."""
    system = _make_system(guess.mesh, p, mode, kappa_min)
    x, _ = newton(system, system.pack(guess.fields), tol=newton_tol,
                  max_iter=max_iter, log=log)
    U, _ = system.unpack(x)
    return RodSolution(guess.mesh, U.copy(), p, bc_mode=mode)


_Z2_SIGNS = np.ones(NF)
_Z2_SIGNS[[0, 1]] = -1.0          # F1, F2
_Z2_SIGNS[[3, 4]] = -1.0          # M1, M2
_Z2_SIGNS[[6, 7]] = -1.0          # x, y
# directors: d1 -> -diag(-1,-1,1) d1, d2 likewise, d3 -> diag(-1,-1,1) d3
_Z2_SIGNS[[9, 10]] = 1.0
_Z2_SIGNS[11] = -1.0              # d13
_Z2_SIGNS[[12, 13]] = 1.0
_Z2_SIGNS[14] = -1.0              # d23
_Z2_SIGNS[[15, 16]] = -1.0        # d31, d32
_Z2_SIGNS[17] = 1.0


def z2_reflect(fields: np.ndarray) -> np.ndarray:
    """The problem's Z2 symmetry: half-turn about e3 composed with a material
    half-turn about d3.  Maps one pitchfork branch onto its partner."""
    return fields * _Z2_SIGNS[:, None] if fields.ndim == 2 else fields * _Z2_SIGNS
