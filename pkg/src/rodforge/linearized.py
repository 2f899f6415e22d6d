"""Linearised perturbation system about a quasi-stationary solution.

Perturbations of the director frame are encoded by a rotation vector alpha
(components in the unperturbed director basis); together with the centreline
perturbation x^t (rotating-frame components) and the force/moment component
perturbations F^t, M^t this gives 12 complex first-order ODEs once the
exponential time dependence exp(lambda t) is inserted:

    (x^t)' = alpha x d3
    (F^t)' + B1 F^t + B2 x^t + B3 alpha' + B4 alpha
            = lambda^2 B5 x^t + lambda B6 x^t
    (M^t)' + C1 M^t + C2 alpha' + C3 alpha + C4 F^t
            = lambda^2 C5 alpha + lambda C6 alpha
    M^t + D1 alpha' + D2 alpha = lambda D3 alpha + lambda D4 alpha'

The constitutive row is solved for alpha', which requires the viscoelastic
scalar (1 + gamma lambda) to be nonzero.  The rotary-inertia and gyroscopic
parts of C3, C5 and C6 are generated column-by-column from the angular
momentum balance itself (applying it to unit rotation vectors) rather than
transcribed entrywise, which keeps the omega-coupling free of sign slips;
the elastic entries follow the closed-form coefficient tables.

With gamma = 0 and omega = 0 the eigenvalue enters only through lambda^2 and
the real and imaginary parts decouple into identical 12-dimensional systems.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np

from . import __version__ as _version
from .core import (
    IDX_D1, IDX_D2, IDX_D3, IDX_F, IDX_M,
    DegenerateConstitutiveError,
    Params,
    RodState,
    SingularRadiusError,
    curvatures_from_moments,
    torsional_stiffness,
)
from .collocation import Mesh
from .stationary import BcMode, cross3, ode_rhs

__all__ = [
    "NPERT",
    "CoefficientSet",
    "coefficients",
    "coefficients_fields",
    "system_matrix",
    "pert_rhs",
    "linearized_rhs",
    "alpha_prime",
    "pert_bc_residual",
    "linearized_bc_residual",
    "PerturbationSolution",
    "SystemStage",
]

NPERT = 12          # complex perturbation fields per point
I_XT = slice(0, 3)
I_AL = slice(3, 6)
I_FT = slice(6, 9)
I_MT = slice(9, 12)


@dataclass(frozen=True)
class CoefficientSet:
    """The sixteen 3x3 coefficient matrices at one arclength point (or, with a
    trailing axis, along a whole mesh)."""

    B1: np.ndarray; B2: np.ndarray; B3: np.ndarray
    B4: np.ndarray; B5: np.ndarray; B6: np.ndarray
    C1: np.ndarray; C2: np.ndarray; C3: np.ndarray
    C4: np.ndarray; C5: np.ndarray; C6: np.ndarray
    D1: np.ndarray; D2: np.ndarray; D3: np.ndarray; D4: np.ndarray


def _skew(v):
    """[v x] as (npts, 3, 3) for v of shape (3, npts)."""
    z = np.zeros_like(v[0])
    return np.stack([
        np.stack([z, -v[2], v[1]], axis=-1),
        np.stack([v[2], z, -v[0]], axis=-1),
        np.stack([-v[1], v[0], z], axis=-1),
    ], axis=-2)


def coefficients_fields(U: np.ndarray, p: Params) -> CoefficientSet:
    """Coefficient matrices along a field array U of shape (18, npts).

    Base-state derivatives (F', M') are obtained from the stationary balance
    laws, so U should hold (a discretisation of) an actual solution.
    """
    U = np.asarray(U, dtype=float)
    squeeze = U.ndim == 1
    if squeeze:
        U = U[:, None]
    npts = U.shape[1]
    F, M = U[IDX_F], U[IDX_M]
    d1, d2, d3 = U[IDX_D1], U[IDX_D2], U[IDX_D3]
    kap = curvatures_from_moments(M, p)
    dU = ode_rhs(U, p)
    Fp, Mp = dU[IDX_F], dU[IDX_M]
    gj = torsional_stiffness(p)
    w = p.omega
    z = np.zeros(npts)
    one = np.ones(npts)

    def mat(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    B1 = _skew(kap)
    B2 = w**2 * mat([[d1[0], d1[1], z], [d2[0], d2[1], z], [d3[0], d3[1], z]])
    B3 = -_skew(F)
    B4 = mat([
        [F[1] * kap[1] + F[2] * kap[2] - p.B * (d2[1] * d1[0] - d2[0] * d1[1]),
         Fp[2] - F[0] * kap[1],
         -Fp[1] - F[0] * kap[2]],
        [-Fp[2] - F[1] * kap[0],
         F[2] * kap[2] + F[0] * kap[0] - p.B * (d2[1] * d1[0] - d2[0] * d1[1]),
         Fp[0] - F[1] * kap[2]],
        [Fp[1] - F[2] * kap[0] - p.B * (d2[1] * d3[0] - d2[0] * d3[1]),
         -Fp[0] - F[2] * kap[1] + p.B * (d1[1] * d3[0] - d1[0] * d3[1]),
         F[0] * kap[0] + F[1] * kap[1]],
    ])
    B5 = mat([[d1[0], d1[1], d1[2]], [d2[0], d2[1], d2[2]], [d3[0], d3[1], d3[2]]])
    B6 = 2.0 * w * mat([[d1[1], -d1[0], z], [d2[1], -d2[0], z], [d3[1], -d3[0], z]])

    C1 = B1
    C2 = -_skew(M)
    C3e = mat([
        [M[2] * kap[2] + M[1] * kap[1], Mp[2] - M[0] * kap[1], -Mp[1] - M[0] * kap[2] - F[0]],
        [-Mp[2] - M[1] * kap[0], M[2] * kap[2] + M[0] * kap[0], Mp[0] - M[1] * kap[2] - F[1]],
        [Mp[1] - M[2] * kap[0] + F[0], -Mp[0] - M[2] * kap[1] + F[1], M[1] * kap[1] + M[0] * kap[0]],
    ])
    C4 = np.broadcast_to(np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
                         (npts, 3, 3)).copy()
    C5 = np.broadcast_to(p.P * np.diag([1.0, p.R, 1.0 + p.R]), (npts, 3, 3)).copy()

    # Rotary-inertia (C3) and gyroscopic (C6) parts of the angular momentum
    # balance, generated by applying the balance to alpha = d_j.
    def project(v):
        return np.stack([
            np.einsum("ip,ip->p", v, d1),
            np.einsum("ip,ip->p", v, d2),
            np.einsum("ip,ip->p", v, d3),
        ], axis=-1)  # (npts, 3)

    C3r = np.zeros((npts, 3, 3))
    C6 = np.zeros((npts, 3, 3))
    dirs = (d1, d2, d3)
    for j in range(3):
        dj = dirs[j]
        a1 = cross3(dj, d1)          # alpha x d1 for alpha = d_j
        a2 = cross3(dj, d2)
        # rotary: -P [ R((w.a1)(d1 x w) + (w.d1)(a1 x w)) + (...d2 terms...) ]
        def x_e3(v):
            return np.stack([v[1], -v[0], np.zeros(npts)])
        rot = -p.P * w**2 * (
            p.R * (a1[2] * x_e3(d1) + d1[2] * x_e3(a1))
            + (a2[2] * x_e3(d2) + d2[2] * x_e3(a2))
        )
        C3r[:, :, j] = project(rot)
        # gyroscopic: 2P [ R d1 x (w x a1) + d2 x (w x a2) ], w x v = w(e3 x v)
        def e3_x(v):
            return np.stack([-v[1], v[0], np.zeros(npts)])
        gyro = 2.0 * p.P * w * (p.R * cross3(d1, e3_x(a1)) + cross3(d2, e3_x(a2)))
        C6[:, :, j] = project(gyro)
    C3 = C3e + C3r

    D1 = np.broadcast_to(-np.diag([1.0, p.R, gj]), (npts, 3, 3)).copy()
    # constitutive coupling D2 = -K [kappa x], K = diag(1, R, gj): the exact
    # linearisation of M = K kappa with kappa^t = alpha' + kappa x alpha
    D2 = mat([
        [z, kap[2], -kap[1]],
        [-p.R * kap[2], z, p.R * kap[0]],
        [gj * kap[1], -gj * kap[0], z],
    ])
    D3 = p.gamma * mat([
        [z, -kap[2], kap[1]],
        [p.R * kap[2], z, -p.R * kap[0]],
        [-gj * kap[1], gj * kap[0], z],
    ])
    D4 = -p.gamma * D1

    cs = CoefficientSet(B1, B2, B3, B4, B5, B6, C1, C2, C3, C4, C5, C6, D1, D2, D3, D4)
    if squeeze:
        cs = CoefficientSet(**{k: getattr(cs, k)[0] for k in cs.__dataclass_fields__})
    return cs


def coefficients(base: RodState, p: Params) -> CoefficientSet:
    """Coefficient matrices at a single base state."""
    return coefficients_fields(base.to_vector(), p)


def _as_batch(cs: CoefficientSet) -> CoefficientSet:
    if cs.B1.ndim == 2:
        return CoefficientSet(**{k: getattr(cs, k)[None] for k in cs.__dataclass_fields__})
    return cs


def alpha_prime(cs: CoefficientSet, al, Mt, lam, p: Params):
    """Solve the constitutive row for alpha'.

    Singular exactly when 1 + gamma lambda = 0 (nonphysical for the damped
    problem but guarded against).
    """
    visc = 1.0 + p.gamma * lam
    if abs(visc) < 1e-12:
        raise DegenerateConstitutiveError(
            f"viscoelastic block singular: 1 + gamma*lambda = {visc}"
        )
    cs = _as_batch(cs)
    gj = torsional_stiffness(p)
    dinv = np.array([1.0, 1.0 / p.R, 1.0 / gj])
    rhsv = -np.asarray(Mt) - np.einsum("pij,jp->ip", cs.D2, al) \
        + lam * np.einsum("pij,jp->ip", cs.D3, al)
    # D1 = -diag(1, R, gj)
    return -dinv[:, None] * rhsv / visc


def system_matrix(U: np.ndarray, p: Params, lam: complex) -> np.ndarray:
    """Complex (npts, 12, 12) first-order system matrix v' = A(s; lambda) v."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    npts = U.shape[1]
    cs = _as_batch(coefficients_fields(U, p))
    gj = torsional_stiffness(p)
    visc = 1.0 + p.gamma * lam
    if abs(visc) < 1e-12:
        raise DegenerateConstitutiveError(
            f"viscoelastic block singular: 1 + gamma*lambda = {visc}"
        )
    S = (-np.diag([1.0, 1.0 / p.R, 1.0 / gj]))[None].astype(complex) / visc
    W = np.einsum("pij,pjk->pik", np.broadcast_to(S, (npts, 3, 3)),
                  -cs.D2 + lam * cs.D3)
    d3 = U[IDX_D3]
    Dmat = cs.B5  # rows are the directors
    X = -np.einsum("pij,pkj->pik", _skew(d3), Dmat)  # -[d3x] . Dmat^T

    A = np.zeros((npts, NPERT, NPERT), dtype=complex)
    A[:, I_XT, I_AL] = X
    A[:, I_AL, I_AL] = W
    A[:, I_AL, I_MT] = -np.broadcast_to(S, (npts, 3, 3))
    A[:, I_FT, I_XT] = -cs.B2 + lam**2 * cs.B5 + lam * cs.B6
    A[:, I_FT, I_AL] = -np.einsum("pij,pjk->pik", cs.B3, W) - cs.B4
    A[:, I_FT, I_FT] = -cs.B1
    A[:, I_FT, I_MT] = np.einsum("pij,pjk->pik", cs.B3, np.broadcast_to(S, (npts, 3, 3)))
    A[:, I_MT, I_AL] = (-np.einsum("pij,pjk->pik", cs.C2, W) - cs.C3
                        + lam**2 * cs.C5 + lam * cs.C6)
    A[:, I_MT, I_FT] = -cs.C4
    A[:, I_MT, I_MT] = -cs.C1 + np.einsum("pij,pjk->pik", cs.C2,
                                          np.broadcast_to(S, (npts, 3, 3)))
    return A


def pert_rhs(U: np.ndarray, v: np.ndarray, lam: complex, p: Params) -> np.ndarray:
    """Apply the linearised operator: v' = A(s; lambda) v, complex throughout."""
    A = system_matrix(U, p, lam)
    v = np.asarray(v, dtype=complex)
    if v.ndim == 1:
        v = v[:, None]
    return np.einsum("pij,jp->ip", A, v)


def linearized_rhs(pert, cs_or_base, lam: complex, p: Params) -> np.ndarray:
    """Derivative of the 24 real perturbation fields at a single point.

    ``pert`` is either a complex 12-vector or a real 24-vector ordered as the
    12 real parts followed by the 12 imaginary parts.
    """
    pert = np.asarray(pert)
    if pert.dtype.kind != "c" and pert.size == 2 * NPERT:
        v = pert[:NPERT] + 1j * pert[NPERT:]
    else:
        v = pert.astype(complex)
    if isinstance(cs_or_base, RodState):
        base = cs_or_base.to_vector()
    else:
        base = np.asarray(cs_or_base, dtype=float)
    out = pert_rhs(base, v, lam, p)[:, 0]
    return np.concatenate([out.real, out.imag])


def pert_bc_residual(va, vb, base_a, base_b, p: Params, lam: complex,
                     mode: BcMode, kappa_min: float = 1e-8) -> np.ndarray:
    """The 12 complex linearised boundary rows.

    ``va``/``vb`` are complex 12-vectors at s=0 and s=1; ``base_a``/``base_b``
    the 18-component base states there.  The final row mirrors the O(1) mode
    switch: the radius-condition linearisation about a bent base, the slide
    pin about the straight branch at omega = 0, the force-free condition at
    omega != 0.
    """
    va = np.asarray(va, dtype=complex)
    vb = np.asarray(vb, dtype=complex)
    ua = np.asarray(base_a, dtype=float)
    ub = np.asarray(base_b, dtype=float)
    r = np.empty(12, dtype=complex)
    r[0] = va[3]                  # alpha1(0)
    r[1] = va[5]                  # alpha3(0)
    r[2] = va[0]                  # x^t(0)
    # linearised end-force row: d13 F1t + d33 F3t + (d13 F3 - d33 F1) alpha2
    r[3] = ua[11] * va[6] + ua[17] * va[8] + (ua[11] * ua[2] - ua[17] * ua[0]) * va[4]
    r[4] = va[7]                  # F2t(0)
    r[5] = va[10]                 # M2t(0)
    r[6] = vb[0]                  # x^t(1)
    r[7] = vb[2]                  # z^t(1)
    r[8] = vb[3]                  # alpha1(1)
    r[9] = vb[5]                  # alpha3(1)
    r[10] = vb[10]                # M2t(1)
    if mode is BcMode.HELIX_CENTRED:
        kap1 = ub[3]
        if abs(kap1) < kappa_min:
            raise SingularRadiusError(
                f"linearised radius condition singular: |kappa1(1)| = {abs(kap1):.3e}"
            )
        csb = coefficients_fields(ub, p)
        alp = alpha_prime(csb, vb[I_AL, None], vb[I_MT, None], lam, p)[:, 0]
        kap0 = curvatures_from_moments(ub[IDX_M], p)
        kap1t = alp[0] + (kap0[1] * vb[5] - kap0[2] * vb[4])
        d1b, d2b, d3b = ub[IDX_D1], ub[IDX_D2], ub[IDX_D3]
        al_e = vb[3] * d1b + vb[4] * d2b + vb[5] * d3b
        d3t_e3 = al_e[0] * d3b[1] - al_e[1] * d3b[0]   # (alpha x d3) . e3
        c = ub[17]                                     # d3 . e3
        r[11] = vb[1] + (2.0 / kap1) * c * d3t_e3 + (1.0 - c**2) / kap1**2 * kap1t
    elif p.omega == 0.0:
        r[11] = vb[1]             # y^t(1): linearised slide pin
    else:
        # linearised F . v1 = 0 about a straight-compatible base
        r[11] = vb[7] + ub[0] * vb[5] - ub[2] * vb[3]
    return r


def linearized_bc_residual(pert_a, pert_b, base_a, base_b, p: Params,
                           lam: complex, mode: BcMode,
                           kappa_min: float = 1e-8) -> np.ndarray:
    """Real 24-vector of boundary rows (real parts then imaginary parts)."""
    pa = np.asarray(pert_a)
    pb = np.asarray(pert_b)
    if pa.dtype.kind != "c" and pa.size == 2 * NPERT:
        pa = pa[:NPERT] + 1j * pa[NPERT:]
        pb = pb[:NPERT] + 1j * pb[NPERT:]
    r = pert_bc_residual(pa, pb, base_a, base_b, p, lam, mode, kappa_min)
    return np.concatenate([r.real, r.imag])


class SystemStage(enum.Enum):
    """Dimension staging of the coupled base+perturbation systems."""

    STAGE30 = 30   # 18 base + one 12-dimensional block on a single axis
    STAGE42 = 42   # 18 base + full real/imaginary split


@dataclass
class PerturbationSolution:
    """Discretised complex eigenfunction with its eigenvalue and measures.

    Fields are stored as 24 real components per representation point: the 12
    real parts followed by the 12 imaginary parts, each ordered
    (x^t, alpha, F^t, M^t).
    """

    mesh: Mesh
    lambda_r: float
    lambda_i: float
    fields: np.ndarray           # (24, nrep)
    measure_r: float
    measure_i: float

    @property
    def lam(self) -> complex:
        return complex(self.lambda_r, self.lambda_i)

    @property
    def s(self) -> np.ndarray:
        return self.mesh.rep_points

    def complex_fields(self) -> np.ndarray:
        return self.fields[:NPERT] + 1j * self.fields[NPERT:]

    def component(self, name: str) -> np.ndarray:
        names = ["xt_x", "xt_y", "xt_z", "alpha_1", "alpha_2", "alpha_3",
                 "Ft_1", "Ft_2", "Ft_3", "Mt_1", "Mt_2", "Mt_3"]
        return self.complex_fields()[names.index(name)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# rodforge {_version} perturbation solution\n")
        buf.write(f"# lambda_r={self.lambda_r:.17g} lambda_i={self.lambda_i:.17g}\n")
        buf.write(f"# measure_r={self.measure_r:.17g} measure_i={self.measure_i:.17g}\n")
        names = ["xt_x", "xt_y", "xt_z", "alpha_1", "alpha_2", "alpha_3",
                 "Ft_1", "Ft_2", "Ft_3", "Mt_1", "Mt_2", "Mt_3"]
        cols = ["s"] + [f"{n}_r" for n in names] + [f"{n}_i" for n in names]
        buf.write(",".join(cols) + "\n")
        s = self.s
        for k in range(self.fields.shape[1]):
            row = [s[k]] + list(self.fields[:, k])
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()
