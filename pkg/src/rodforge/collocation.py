"""Generic two-point BVP machinery: orthogonal collocation, damped Newton,
sparse LU with determinant-sign monitoring, and bordered rows for
continuation-style extended systems.

Discretisation: on each mesh subinterval the solution is the polynomial of
degree ``d`` interpolating its values at d+1 equispaced representation
points (endpoints shared between neighbours, so continuity is built in).
The ODE u' = f(s, u) is enforced at the d Gauss-Legendre points of every
subinterval.  For an n-field system on m subintervals this yields
n*(m*d) collocation equations for n*(m*d + 1) unknowns; boundary rows,
integral rows and bordered linear rows close (or extend) the system.

Unknown vector layout: all representation-point values in point-major order,
followed by the free scalar parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import (
    ConvergenceError,
    InvalidParameterError,
    RodforgeError,
    SingularSystemError,
)

__all__ = [
    "AssemblyError",
    "Mesh",
    "DiscretizedSystem",
    "newton",
    "NewtonInfo",
    "det_sign",
    "null_vector",
    "interp_fields",
]


class AssemblyError(RodforgeError):
    """The discretised system is dimensionally inconsistent."""


@lru_cache(maxsize=16)
def _reference(degree: int):
    """Reference interval data: Gauss points/weights on [0,1] and the Lagrange
    basis (values and derivatives) of the d+1 equispaced nodes at those points."""
    g, w = np.polynomial.legendre.leggauss(degree)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    nodes = np.linspace(0.0, 1.0, degree + 1)
    # L[i, k] = ell_i(g_k), Ld[i, k] = ell_i'(g_k)
    L = np.empty((degree + 1, degree))
    Ld = np.empty((degree + 1, degree))
    for i in range(degree + 1):
        ci = np.zeros(degree + 1)
        ci[i] = 1.0
        poly = np.polynomial.polynomial.Polynomial(
            np.polynomial.polynomial.polyfit(nodes, ci, degree)
        )
        L[i] = poly(g)
        Ld[i] = poly.deriv()(g)
    return g, w, nodes, L, Ld


@dataclass(frozen=True)
class Mesh:
    """Collocation mesh on [0,1]: breakpoints plus polynomial degree.

    The degree is the number of Gauss collocation points per subinterval,
    restricted to [2, 7].
    """

    breakpoints: np.ndarray
    degree: int = 4

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        object.__setattr__(self, "breakpoints", bp)
        if not (2 <= self.degree <= 7):
            raise InvalidParameterError(f"degree must lie in [2,7], got {self.degree}")
        if bp.ndim != 1 or bp.size < 2:
            raise InvalidParameterError("breakpoints must be a 1-D array of length >= 2")
        if abs(bp[0]) > 0 or abs(bp[-1] - 1.0) > 0:
            raise InvalidParameterError("breakpoints must span [0, 1] exactly")
        if np.any(np.diff(bp) <= 0):
            raise InvalidParameterError("breakpoints must be strictly increasing")

    @staticmethod
    def uniform(intervals: int = 64, degree: int = 4) -> "Mesh":
        return Mesh(np.linspace(0.0, 1.0, intervals + 1), degree)

    def refined(self, factor: int = 2) -> "Mesh":
        bp = self.breakpoints
        fine = np.concatenate(
            [np.linspace(bp[j], bp[j + 1], factor + 1)[:-1] for j in range(bp.size - 1)]
            + [bp[-1:]]
        )
        return Mesh(fine, self.degree)

    @property
    def intervals(self) -> int:
        return self.breakpoints.size - 1

    @property
    def rep_points(self) -> np.ndarray:
        """All representation points (m*d + 1 of them), strictly increasing."""
        d = self.degree
        bp = self.breakpoints
        h = np.diff(bp)
        _, _, nodes, _, _ = _reference(d)
        pts = (bp[:-1, None] + h[:, None] * nodes[None, :-1]).ravel()
        return np.append(pts, 1.0)

    @property
    def collocation_points(self) -> np.ndarray:
        g, _, _, _, _ = _reference(self.degree)
        bp = self.breakpoints
        h = np.diff(bp)
        return (bp[:-1, None] + h[:, None] * g[None, :]).ravel()


def interp_fields(mesh: Mesh, U: np.ndarray, s_new: np.ndarray) -> np.ndarray:
    """Evaluate the piecewise collocation polynomial at arbitrary points.

    U has shape (n, m*d+1) holding representation-point values.
    """
    d = mesh.degree
    bp = mesh.breakpoints
    s_new = np.atleast_1d(np.asarray(s_new, dtype=float))
    _, _, nodes, _, _ = _reference(d)
    j = np.clip(np.searchsorted(bp, s_new, side="right") - 1, 0, mesh.intervals - 1)
    t = (s_new - bp[j]) / (bp[j + 1] - bp[j])
    out = np.zeros((U.shape[0], s_new.size))
    # Lagrange evaluation per point (vectorised over the basis index)
    for i in range(d + 1):
        li = np.ones_like(t)
        for q in range(d + 1):
            if q != i:
                li *= (t - nodes[q]) / (nodes[i] - nodes[q])
        out += U[:, j * d + i] * li
    return out


@dataclass
class NewtonInfo:
    iterations: int = 0
    residual_norm: float = math.inf
    converged: bool = False
    step_history: list = field(default_factory=list)


class DiscretizedSystem:
    """Collocated two-point BVP with optional parameters and bordered rows.

    Parameters
    ----------
    mesh : Mesh
    nfields : ODE dimension n
    rhs : callable (s (npts,), U (n, npts), pars (npar,)) -> (n, npts)
    bc : callable (ua (n,), ub (n,), pars) -> (nbc,)
    nbc : number of boundary rows
    npar : number of free scalar parameters appended to the unknowns
    integrals : callables (system, U (n, nrep), pars) -> (value, dU, dpars)
    linear_rows : pairs (w, c) adding bordered rows  w . x - c = 0
    rhs_jac : optional callable returning (JU (n,n,npts), Jpar (n,npar,npts));
        finite differences are used when omitted
    """

    def __init__(self, mesh, nfields, rhs, bc, nbc, npar=0,
                 integrals=(), linear_rows=(), rhs_jac=None, fd_step=1e-7,
                 par_lower_bounds=None):
        self.mesh = mesh
        self.n = nfields
        self.rhs = rhs
        self.bc = bc
        self.nbc = nbc
        self.npar = npar
        self.integrals = list(integrals)
        self.rhs_jac = rhs_jac
        self.fd_step = fd_step
        self.par_lower_bounds = (np.full(npar, -np.inf) if par_lower_bounds is None
                                 else np.asarray(par_lower_bounds, dtype=float))

        d = mesh.degree
        m = mesh.intervals
        self.nrep = m * d + 1
        self.nfield_unknowns = self.n * self.nrep
        self.nunknowns = self.nfield_unknowns + npar
        if isinstance(linear_rows, int):
            # reserved bordered rows, to be filled in by the caller
            linear_rows = [(np.zeros(self.nunknowns), 0.0) for _ in range(linear_rows)]
        self.linear_rows = list(linear_rows)
        neq = self.n * m * d + nbc + len(self.integrals) + len(self.linear_rows)
        if neq != self.nunknowns:
            raise AssemblyError(
                f"system is not square: {neq} equations vs {self.nunknowns} unknowns "
                f"(n={self.n}, mesh {m}x{d}, nbc={nbc}, npar={npar}, "
                f"nint={len(self.integrals)}, nrows={len(self.linear_rows)})"
            )

        g, w, nodes, L, Ld = _reference(d)
        self._g, self._w, self._L, self._Ld = g, w, L, Ld
        bp = mesh.breakpoints
        self._h = np.diff(bp)
        self._s_coll = (bp[:-1, None] + self._h[:, None] * g[None, :]).ravel()
        self._local = (np.arange(m)[:, None] * d + np.arange(d + 1)[None, :])  # (m, d+1)
        self._build_index_template()

    # -- packing ------------------------------------------------------------

    def pack(self, U: np.ndarray, pars=()) -> np.ndarray:
        x = np.empty(self.nunknowns)
        x[: self.nfield_unknowns] = np.asarray(U).T.ravel()
        if self.npar:
            x[self.nfield_unknowns:] = np.asarray(pars, dtype=float)
        return x

    def unpack(self, x: np.ndarray):
        U = x[: self.nfield_unknowns].reshape(self.nrep, self.n).T
        pars = x[self.nfield_unknowns:]
        return U, pars

    # -- evaluation ---------------------------------------------------------

    def _coll_values(self, U):
        """Values and scaled derivatives of the interpolant at Gauss points."""
        Uloc = U[:, self._local]                       # (n, m, d+1)
        V = np.einsum("nmi,ik->nmk", Uloc, self._L)    # (n, m, d)
        Vp = np.einsum("nmi,ik->nmk", Uloc, self._Ld) / self._h[None, :, None]
        npts = self.mesh.intervals * self.mesh.degree
        return V.reshape(self.n, npts), Vp.reshape(self.n, npts)

    def residual(self, x: np.ndarray) -> np.ndarray:
        U, pars = self.unpack(x)
        V, Vp = self._coll_values(U)
        F = self.rhs(self._s_coll, V, pars)
        res = [(Vp - F).T.ravel()]
        res.append(np.asarray(self.bc(U[:, 0], U[:, -1], pars), dtype=float))
        for gfun in self.integrals:
            val, _, _ = gfun(self, U, pars)
            res.append(np.array([val]))
        for wrow, c in self.linear_rows:
            res.append(np.array([wrow @ x - c]))
        return np.concatenate(res)

    def _fd_rhs_jac(self, V, pars):
        n, npts = V.shape
        JU = np.empty((n, n, npts))
        for c in range(n):
            hstep = self.fd_step * (1.0 + np.abs(V[c]))
            Vp_ = V.copy(); Vp_[c] = V[c] + hstep
            Vm_ = V.copy(); Vm_[c] = V[c] - hstep
            JU[:, c, :] = (self.rhs(self._s_coll, Vp_, pars)
                           - self.rhs(self._s_coll, Vm_, pars)) / (2.0 * hstep)
        Jpar = np.empty((n, self.npar, npts))
        for q in range(self.npar):
            hstep = self.fd_step * (1.0 + abs(pars[q]))
            pp = pars.copy(); pp[q] += hstep
            if pars[q] - hstep < self.par_lower_bounds[q]:
                # one-sided difference at a parameter domain boundary
                Jpar[:, q, :] = (self.rhs(self._s_coll, V, pp)
                                 - self.rhs(self._s_coll, V, pars)) / hstep
            else:
                pm = pars.copy(); pm[q] -= hstep
                Jpar[:, q, :] = (self.rhs(self._s_coll, V, pp)
                                 - self.rhs(self._s_coll, V, pm)) / (2.0 * hstep)
        return JU, Jpar

    def _fd_bc_jac(self, ua, ub, pars):
        base = np.asarray(self.bc(ua, ub, pars), dtype=float)
        n = self.n
        J = np.empty((self.nbc, 2 * n + self.npar))
        for c in range(n):
            hstep = self.fd_step * (1.0 + abs(ua[c]))
            up = ua.copy(); up[c] += hstep
            um = ua.copy(); um[c] -= hstep
            J[:, c] = (np.asarray(self.bc(up, ub, pars)) - np.asarray(self.bc(um, ub, pars))) / (2 * hstep)
        for c in range(n):
            hstep = self.fd_step * (1.0 + abs(ub[c]))
            up = ub.copy(); up[c] += hstep
            um = ub.copy(); um[c] -= hstep
            J[:, n + c] = (np.asarray(self.bc(ua, up, pars)) - np.asarray(self.bc(ua, um, pars))) / (2 * hstep)
        for q in range(self.npar):
            hstep = self.fd_step * (1.0 + abs(pars[q]))
            pp = pars.copy(); pp[q] += hstep
            if pars[q] - hstep < self.par_lower_bounds[q]:
                J[:, 2 * n + q] = (np.asarray(self.bc(ua, ub, pp)) - base) / hstep
            else:
                pm = pars.copy(); pm[q] -= hstep
                J[:, 2 * n + q] = (np.asarray(self.bc(ua, ub, pp)) - np.asarray(self.bc(ua, ub, pm))) / (2 * hstep)
        return base, J

    def _build_index_template(self):
        n, d, m = self.n, self.mesh.degree, self.mesh.intervals
        j = np.arange(m)[:, None, None, None, None]
        k = np.arange(d)[None, :, None, None, None]
        r = np.arange(n)[None, None, :, None, None]
        i = np.arange(d + 1)[None, None, None, :, None]
        c = np.arange(n)[None, None, None, None, :]
        rows = ((j * d + k) * n + r) + 0 * i + 0 * c
        cols = ((j * d + i) * n + c) + 0 * k + 0 * r
        self._tmpl_rows = np.broadcast_to(rows, (m, d, n, d + 1, n)).ravel()
        self._tmpl_cols = np.broadcast_to(cols, (m, d, n, d + 1, n)).ravel()
        # parameter columns for collocation rows
        if self.npar:
            rowsp = ((j * d + k) * n + r)[..., 0, 0]
            self._tmpl_par_rows = np.broadcast_to(
                rowsp[..., None], (m, d, n, self.npar)
            ).ravel()
            q = np.arange(self.npar)[None, None, None, :]
            colsp = self.nfield_unknowns + q + 0 * rowsp[..., None]
            self._tmpl_par_cols = np.broadcast_to(colsp, (m, d, n, self.npar)).ravel()

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        U, pars = self.unpack(x)
        V, _ = self._coll_values(U)
        if self.rhs_jac is not None:
            JU, Jpar = self.rhs_jac(self._s_coll, V, pars)
        else:
            JU, Jpar = self._fd_rhs_jac(V, pars)

        n, d, m = self.n, self.mesh.degree, self.mesh.intervals
        npts = m * d
        # values[j,k,r,i,c] = Ld[i,k]/h_j * delta_rc - L[i,k] * JU[r,c,pt(j,k)]
        JU5 = JU.reshape(n, n, m, d).transpose(2, 3, 0, 1)          # (m,d,n,n)
        eye = np.eye(n)
        term1 = (self._Ld.T[None, :, None, :, None] / self._h[:, None, None, None, None]
                 * eye[None, None, :, None, :])
        term2 = self._L.T[None, :, None, :, None] * JU5[:, :, :, None, :]
        vals = (term1 - term2).ravel()

        rows = [self._tmpl_rows]
        cols = [self._tmpl_cols]
        data = [vals]
        if self.npar:
            rows.append(self._tmpl_par_rows)
            cols.append(self._tmpl_par_cols)
            data.append((-Jpar.reshape(n, self.npar, m, d).transpose(2, 3, 0, 1)).ravel())

        row0 = n * npts
        _, Jbc = self._fd_bc_jac(U[:, 0].copy(), U[:, -1].copy(), pars.copy())
        bc_cols = np.concatenate([
            np.arange(n),                                   # first point block
            self.nfield_unknowns - n + np.arange(n),        # last point block
            self.nfield_unknowns + np.arange(self.npar),
        ])
        rr, cc = np.meshgrid(row0 + np.arange(self.nbc), bc_cols, indexing="ij")
        rows.append(rr.ravel()); cols.append(cc.ravel()); data.append(Jbc.ravel())

        row = row0 + self.nbc
        for gfun in self.integrals:
            _, dU, dpars = gfun(self, U, pars)
            grad = np.concatenate([np.asarray(dU).T.ravel(), np.asarray(dpars, dtype=float)])
            nz = np.nonzero(grad)[0]
            rows.append(np.full(nz.size, row)); cols.append(nz); data.append(grad[nz])
            row += 1
        for wrow, _c in self.linear_rows:
            nz = np.nonzero(wrow)[0]
            rows.append(np.full(nz.size, row)); cols.append(nz); data.append(np.asarray(wrow)[nz])
            row += 1

        A = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.nunknowns, self.nunknowns),
        )
        return A.tocsc()

    # -- quadrature helpers ---------------------------------------------------

    def l2_norm_squared(self, U: np.ndarray, components) -> tuple:
        """Integral of the squared selected fields with its gradient in U."""
        comps = np.asarray(components, dtype=int)
        Uloc = U[comps][:, self._local]                      # (nc, m, d+1)
        V = np.einsum("nmi,ik->nmk", Uloc, self._L)          # (nc, m, d)
        wq = self._w[None, None, :] * self._h[None, :, None]
        val = float(np.sum(wq * V**2))
        dUloc = np.einsum("nmk,ik->nmi", 2.0 * wq * V, self._L)
        dUc = np.zeros((comps.size, U.shape[1]))
        for jj in range(self.mesh.intervals):
            dUc[:, self._local[jj]] += dUloc[:, jj, :]
        dU = np.zeros_like(U)
        dU[comps] = dUc
        return val, dU


def newton(system: DiscretizedSystem, x0: np.ndarray, tol: float = 1e-10,
           max_iter: int = 25, min_step: float = 2.0**-10,
           log: Callable[[str], None] | None = None):
    """Damped Newton iteration: halve the step while the residual grows.

    Returns (x, NewtonInfo); raises ConvergenceError / SingularSystemError.
    """
    x = np.asarray(x0, dtype=float).copy()
    info = NewtonInfo()
    r = system.residual(x)
    rn = float(np.max(np.abs(r)))
    for it in range(max_iter):
        info.iterations = it
        info.residual_norm = rn
        if log is not None:
            log(f"newton iter {it}: |r|_inf = {rn:.3e}")
        if rn <= tol:
            info.converged = True
            return x, info
        J = system.jacobian(x)
        try:
            lu = splu(J)
        except RuntimeError as exc:
            raise SingularSystemError(
                f"singular Jacobian in Newton iteration {it}: {exc}",
                cond_estimate=_crude_cond(J),
            ) from exc
        dx = lu.solve(-r)
        if not np.all(np.isfinite(dx)):
            raise SingularSystemError(
                f"non-finite Newton step at iteration {it}", cond_estimate=_crude_cond(J)
            )
        step = 1.0
        while True:
            x_new = x + step * dx
            r_new = system.residual(x_new)
            rn_new = float(np.max(np.abs(r_new)))
            if rn_new < rn or step <= min_step:
                break
            step *= 0.5
        info.step_history.append(step)
        if rn_new >= rn and step <= min_step:
            raise ConvergenceError(
                f"Newton stalled at iteration {it}: residual {rn:.3e}", residual_norm=rn
            )
        x, r, rn = x_new, r_new, rn_new
    info.residual_norm = rn
    if rn <= tol:
        info.converged = True
        return x, info
    raise ConvergenceError(
        f"Newton did not converge in {max_iter} iterations: residual {rn:.3e}",
        residual_norm=rn,
    )


def _perm_parity(perm: np.ndarray) -> int:
    """Sign of a permutation given as an index array."""
    perm = np.asarray(perm)
    seen = np.zeros(perm.size, dtype=bool)
    sign = 1
    for start in range(perm.size):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _crude_cond(A: sp.spmatrix) -> float | None:
    try:
        d = np.abs(A.diagonal())
        d = d[d > 0]
        return float(d.max() / d.min()) if d.size else None
    except Exception:
        return None


def det_sign(A: sp.spmatrix):
    """Sign of det(A) plus log10 |det| of the (equilibrated) factorisation.

    Row/column equilibration only rescales by positive factors, so the sign is
    exact; the log-magnitude serves as a near-singularity diagnostic.
    """
    A = A.tocsc()
    try:
        lu = splu(A, permc_spec="COLAMD")
    except RuntimeError:
        return 0, -math.inf
    du = lu.U.diagonal()
    if np.any(du == 0.0):
        return 0, -math.inf
    sign = _perm_parity(lu.perm_r) * _perm_parity(lu.perm_c)
    sign *= -1 if (np.count_nonzero(du < 0) % 2) else 1
    logmag = float(np.sum(np.log10(np.abs(du))))
    return sign, logmag


def null_vector(A: sp.spmatrix, shift: float = 0.0, iterations: int = 8,
                seed: int = 7) -> np.ndarray:
    """Approximate null vector by shifted inverse iteration.

    Intended for matrices that are nearly singular (at a branch point); the
    default zero shift is regularised automatically if factorisation fails.
    """
    n = A.shape[0]
    A = A.tocsc()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    eps = shift
    for attempt in range(6):
        try:
            lu = splu(A + eps * sp.identity(n, format="csc") if eps else A)
            break
        except RuntimeError:
            eps = 1e-12 if eps == 0.0 else eps * 100.0
    else:
        raise SingularSystemError("could not factorise for inverse iteration")
    for _ in range(iterations):
        y = lu.solve(x)
        ny = np.linalg.norm(y)
        if not np.isfinite(ny) or ny == 0.0:
            break
        x = y / ny
    return x
