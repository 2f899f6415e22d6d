"""Builders for the coupled base+perturbation BVP systems.

Three system sizes are used by the eigenvalue machinery:

* pert-only (12 fields): the linearised operator over a frozen base solution,
  parametrised by the eigenvalue.  Its square Jacobian is the branch-point
  test function for the eigenvalue scan, and it hosts the eigenfunction
  "growing" solves.  Because the base block of the full 30-dimensional
  system is regular and constant along the scan, determinant sign changes of
  the full staged system and of this block coincide.
* stage 30 (18 base + 12 perturbation): one real block valid on a single
  eigenvalue axis (purely imaginary or purely real lambda), which requires
  the quadratic-eigenvalue regime gamma = omega = 0.  Used for parameter
  traces that keep eigenvalues on an axis.
* stage 42 (18 base + 12 real + 12 imaginary parts): the full split system
  for fully complex eigenvalues; free parameters (lambda_r, lambda_i, and a
  physical parameter) are balanced by two eigenfunction-measure constraints
  plus the continuation arclength row.

Eigenfunction measures are L2 norms of the 12 perturbation fields under the
collocation quadrature.
"""

from __future__ import annotations

import numpy as np

from .core import NF, Params, PreconditionError
from .collocation import DiscretizedSystem, Mesh, interp_fields
from .linearized import NPERT, pert_bc_residual, system_matrix
from .stationary import BcMode, boundary_residual, ode_rhs

__all__ = [
    "AXIS_IMAG",
    "AXIS_REAL",
    "resolve_params",
    "make_pert_system",
    "make_stage30_system",
    "make_stage42_system",
    "measure_of",
    "pert_l2_measure",
]

AXIS_IMAG = "imag"
AXIS_REAL = "real"

_PHYSICAL = ("B", "omega", "gamma", "R", "T", "P", "Gamma", "chi")
_NONNEGATIVE = ("gamma", "R", "P", "Gamma")


def resolve_params(p: Params, free: tuple, pars: np.ndarray) -> Params:
    """Overlay released physical parameters onto the base parameter set."""
    over = {name: float(val) for name, val in zip(free, pars) if name in _PHYSICAL}
    return p.with_(**over) if over else p


def param_lower_bounds(free: tuple) -> np.ndarray:
    return np.array([0.0 if name in _NONNEGATIVE else -np.inf for name in free])


def _param_fd(rhs, s, U, pars, names, out):
    """Parameter finite differences, one-sided at nonnegativity boundaries."""
    bounds = param_lower_bounds(names)
    for q in range(len(names)):
        h = 1e-6 * (1.0 + abs(pars[q]))
        pp = pars.copy(); pp[q] += h
        if pars[q] - h < bounds[q]:
            out[:, q, :] = (rhs(s, U, pp) - rhs(s, U, pars)) / h
        else:
            pm = pars.copy(); pm[q] -= h
            out[:, q, :] = (rhs(s, U, pp) - rhs(s, U, pm)) / (2.0 * h)
    return out


def _axis_lambda(axis: str, mu: float) -> complex:
    if axis == AXIS_IMAG:
        return 1j * mu
    if axis == AXIS_REAL:
        return complex(mu)
    raise ValueError(f"unknown axis {axis!r}")


def _require_quadratic(p: Params):
    if p.gamma != 0.0 or p.omega != 0.0:
        raise PreconditionError(
            "single-axis eigenvalue systems require gamma = 0 and omega = 0 "
            f"(got gamma={p.gamma}, omega={p.omega}); use the 42-dimensional "
            "split system instead"
        )


def measure_of(system: DiscretizedSystem, U: np.ndarray, components) -> float:
    val, _ = system.l2_norm_squared(U, components)
    return float(np.sqrt(max(val, 0.0)))


def pert_l2_measure(components, target: float):
    """Integral constraint  ||u||_L2^2 - target^2 = 0  over given components."""
    comps = tuple(components)

    def gfun(system: DiscretizedSystem, U: np.ndarray, pars: np.ndarray):
        val, dU = system.l2_norm_squared(U, comps)
        return val - target**2, dU, np.zeros(system.npar)

    return gfun


# ---------------------------------------------------------------------------
# pert-only system over a frozen base
# ---------------------------------------------------------------------------

def make_pert_system(mesh: Mesh, base_fields: np.ndarray, p: Params, *,
                     axis: str = AXIS_IMAG, bc_mode: BcMode,
                     free: tuple = ("mu",), measure_target: float | None = None,
                     kappa_min: float = 1e-8) -> DiscretizedSystem:
    """12-field linear system v' = A(s; lambda(mu)) v over a frozen base.

    ``free`` may contain "mu" (eigenvalue magnitude on the chosen axis); no
    physical parameters are released here since the base is frozen.
    """
    _require_quadratic(p)
    base_coll = interp_fields(mesh, base_fields, mesh.collocation_points)
    base_a = base_fields[:, 0].copy()
    base_b = base_fields[:, -1].copy()
    mu_index = free.index("mu") if "mu" in free else None
    fixed_mu = {"mu": 0.0}

    def lam_of(pars):
        mu = pars[mu_index] if mu_index is not None else fixed_mu["mu"]
        return _axis_lambda(axis, float(mu))

    def rhs(s, V, pars):
        A = system_matrix(base_coll, p, lam_of(pars)).real
        return np.einsum("pij,jp->ip", A, V)

    def rhs_jac(s, V, pars):
        A = system_matrix(base_coll, p, lam_of(pars)).real
        JU = A.transpose(1, 2, 0)
        Jpar = np.zeros((NPERT, len(free), V.shape[1]))
        if mu_index is not None:
            h = 1e-6 * (1.0 + abs(pars[mu_index]))
            pp = pars.copy(); pp[mu_index] += h
            pm = pars.copy(); pm[mu_index] -= h
            Jpar[:, mu_index, :] = (rhs(s, V, pp) - rhs(s, V, pm)) / (2 * h)
        return JU, Jpar

    def bc(va, vb, pars):
        r = pert_bc_residual(va.astype(complex), vb.astype(complex),
                             base_a, base_b, p, lam_of(pars), bc_mode, kappa_min)
        return r.real

    integrals = []
    if measure_target is not None:
        integrals.append(pert_l2_measure(range(NPERT), measure_target))
    system = DiscretizedSystem(mesh, NPERT, rhs, bc, nbc=NPERT,
                               npar=len(free), integrals=integrals,
                               rhs_jac=rhs_jac)
    system.set_mu = lambda mu: fixed_mu.__setitem__("mu", mu)  # for scans
    return system


def make_pert_scan_system(mesh: Mesh, base_fields: np.ndarray, p: Params, *,
                          axis: str = AXIS_IMAG, bc_mode: BcMode,
                          kappa_min: float = 1e-8) -> DiscretizedSystem:
    """Square pert-only system with the eigenvalue supplied out of band
    (via ``set_mu``); its Jacobian determinant is the scan test function."""
    return make_pert_system(mesh, base_fields, p, axis=axis, bc_mode=bc_mode,
                            free=(), measure_target=None, kappa_min=kappa_min)


# ---------------------------------------------------------------------------
# coupled stage systems
# ---------------------------------------------------------------------------

def _fd_block(fun, V, out_rows, cols, step=1e-7):
    """Central finite differences of ``fun(V)`` with respect to rows ``cols``."""
    npts = V.shape[1]
    J = np.empty((out_rows, len(cols), npts))
    for idx, c in enumerate(cols):
        h = step * (1.0 + np.abs(V[c]))
        Vp = V.copy(); Vp[c] = V[c] + h
        Vm = V.copy(); Vm[c] = V[c] - h
        J[:, idx, :] = (fun(Vp) - fun(Vm)) / (2.0 * h)
    return J


def make_stage30_system(mesh: Mesh, p: Params, *, axis: str = AXIS_IMAG,
                        bc_mode: BcMode, free: tuple,
                        measure_target: float | None = 1.0,
                        extra_rows: int = 0,
                        kappa_min: float = 1e-8) -> DiscretizedSystem:
    """Coupled 30-field system: base fields evolve with released parameters.

    ``free`` lists released scalars, e.g. ("B", "mu"); "mu" is the eigenvalue
    magnitude on ``axis``.  ``extra_rows`` reserves bordered rows (arclength).
    """
    n = NF + NPERT
    names = tuple(free)
    mu_index = names.index("mu") if "mu" in names else None

    def split(pars):
        p_eff = resolve_params(p, names, pars)
        _require_quadratic(p_eff)
        mu = float(pars[mu_index]) if mu_index is not None else 0.0
        return p_eff, _axis_lambda(axis, mu)

    def rhs(s, U, pars):
        p_eff, lam = split(pars)
        out = np.empty_like(U)
        out[:NF] = ode_rhs(U[:NF], p_eff)
        A = system_matrix(U[:NF], p_eff, lam).real
        out[NF:] = np.einsum("pij,jp->ip", A, U[NF:])
        return out

    def rhs_jac(s, U, pars):
        p_eff, lam = split(pars)
        npts = U.shape[1]
        JU = np.zeros((n, n, npts))
        JU[:NF, :NF, :] = _fd_block(lambda V: ode_rhs(V, p_eff), U[:NF], NF, range(NF))
        A = system_matrix(U[:NF], p_eff, lam).real
        JU[NF:, NF:, :] = A.transpose(1, 2, 0)
        v = U[NF:]
        pert_part = lambda Vb: np.einsum(
            "pij,jp->ip", system_matrix(Vb, p_eff, lam).real, v)
        JU[NF:, :NF, :] = _fd_block(pert_part, U[:NF], NPERT, range(NF))
        Jpar = np.empty((n, len(names), npts))
        _param_fd(rhs, s, U, pars, names, Jpar)
        return JU, Jpar

    def bc(ua, ub, pars):
        p_eff, lam = split(pars)
        rb = boundary_residual(ua[:NF], ub[:NF], p_eff, bc_mode, kappa_min)
        rp = pert_bc_residual(ua[NF:].astype(complex), ub[NF:].astype(complex),
                              ua[:NF], ub[:NF], p_eff, lam, bc_mode, kappa_min).real
        return np.concatenate([rb, rp])

    integrals = []
    if measure_target is not None:
        integrals.append(pert_l2_measure(range(NF, n), measure_target))
    return DiscretizedSystem(mesh, n, rhs, bc, nbc=n, npar=len(names),
                             integrals=integrals, linear_rows=extra_rows,
                             rhs_jac=rhs_jac,
                             par_lower_bounds=param_lower_bounds(names))


def make_stage42_system(mesh: Mesh, p: Params, *, bc_mode: BcMode, free: tuple,
                        measure_r_target: float | None = 1.0,
                        measure_i_target: float | None = 1.0,
                        extra_rows: int = 0,
                        kappa_min: float = 1e-8,
                        lam_fixed: complex | None = None) -> DiscretizedSystem:
    """Full split system: 18 base + 12 real + 12 imaginary perturbation fields.

    ``free`` may contain physical parameters plus "lam_r"/"lam_i"; components
    of lambda not released are taken from ``lam_fixed`` (default 0).
    """
    n = NF + 2 * NPERT
    names = tuple(free)
    ir = names.index("lam_r") if "lam_r" in names else None
    ii = names.index("lam_i") if "lam_i" in names else None
    lam0 = lam_fixed if lam_fixed is not None else 0.0 + 0.0j

    def split(pars):
        p_eff = resolve_params(p, names, pars)
        lr = float(pars[ir]) if ir is not None else lam0.real
        li = float(pars[ii]) if ii is not None else lam0.imag
        return p_eff, complex(lr, li)

    def rhs(s, U, pars):
        p_eff, lam = split(pars)
        out = np.empty_like(U)
        out[:NF] = ode_rhs(U[:NF], p_eff)
        A = system_matrix(U[:NF], p_eff, lam)
        v = U[NF:NF + NPERT] + 1j * U[NF + NPERT:]
        Av = np.einsum("pij,jp->ip", A, v)
        out[NF:NF + NPERT] = Av.real
        out[NF + NPERT:] = Av.imag
        return out

    def rhs_jac(s, U, pars):
        p_eff, lam = split(pars)
        npts = U.shape[1]
        JU = np.zeros((n, n, npts))
        JU[:NF, :NF, :] = _fd_block(lambda V: ode_rhs(V, p_eff), U[:NF], NF, range(NF))
        A = system_matrix(U[:NF], p_eff, lam)
        Ar = A.real.transpose(1, 2, 0)
        Ai = A.imag.transpose(1, 2, 0)
        JU[NF:NF + NPERT, NF:NF + NPERT, :] = Ar
        JU[NF:NF + NPERT, NF + NPERT:, :] = -Ai
        JU[NF + NPERT:, NF:NF + NPERT, :] = Ai
        JU[NF + NPERT:, NF + NPERT:, :] = Ar
        v = U[NF:NF + NPERT] + 1j * U[NF + NPERT:]

        def pert_part(Vb):
            Av = np.einsum("pij,jp->ip", system_matrix(Vb, p_eff, lam), v)
            return np.concatenate([Av.real, Av.imag])

        JU[NF:, :NF, :] = _fd_block(pert_part, U[:NF], 2 * NPERT, range(NF))
        Jpar = np.empty((n, len(names), npts))
        _param_fd(rhs, s, U, pars, names, Jpar)
        return JU, Jpar

    def bc(ua, ub, pars):
        p_eff, lam = split(pars)
        rb = boundary_residual(ua[:NF], ub[:NF], p_eff, bc_mode, kappa_min)
        va = ua[NF:NF + NPERT] + 1j * ua[NF + NPERT:]
        vb = ub[NF:NF + NPERT] + 1j * ub[NF + NPERT:]
        rp = pert_bc_residual(va, vb, ua[:NF], ub[:NF], p_eff, lam, bc_mode, kappa_min)
        return np.concatenate([rb, rp.real, rp.imag])

    integrals = []
    if measure_r_target is not None:
        integrals.append(pert_l2_measure(range(NF, NF + NPERT), measure_r_target))
    if measure_i_target is not None:
        integrals.append(pert_l2_measure(range(NF + NPERT, n), measure_i_target))
    return DiscretizedSystem(mesh, n, rhs, bc, nbc=n, npar=len(names),
                             integrals=integrals, linear_rows=extra_rows,
                             rhs_jac=rhs_jac,
                             par_lower_bounds=param_lower_bounds(names))
