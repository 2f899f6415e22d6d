"""Eigenvalue location and continuation for linear stability of stationary
and whirling states.

The procedure operates in three steps, using systems of increasing size:

1. scan: with the base frozen, the eigenvalue magnitude is swept along one
   axis (imaginary for conservative starts) and eigenvalues are detected as
   determinant sign changes of the collocated linear operator, then bisected.
2. grow: at a detected eigenvalue the (single-axis) eigenfunction is grown
   from the operator's null direction and Newton-polished against the
   normalisation ||v||_i = 1, refining the eigenvalue along the way.
3. trace: eigenpairs are continued in a physical parameter.  While the
   problem stays quadratic in the eigenvalue (gamma = omega = 0 and neither
   is being released) the 30-field single-axis system is used and the
   eigenvalue stays on its axis; otherwise the full 42-field split system
   runs with (lambda_r, lambda_i) free and both measures pinned.

Detected events: an imaginary pair reaching zero (pitchfork of the base), a
fold of an imaginary-axis trace in the parameter (two pairs colliding at
nonzero frequency: Hamiltonian-Hopf), the reverse collision where a complex
quadruple returns to the axis, and sign changes of lambda_r at nonzero
lambda_i (Hopf).
"""

from __future__ import annotations

import enum
import io
import json
import math
import warnings
from dataclasses import dataclass, field as dfield

import numpy as np

from . import __version__ as _version
from .core import (
    NF,
    ConvergenceError,
    DegenerateBranchPointError,
    Params,
    PreconditionError,
    RodforgeError,
)
from .collocation import det_sign, newton, null_vector
from .continuation import BifurcationEvent, EventKind, arclength_continue
from .linearized import NPERT, PerturbationSolution
from .stagesys import (
    AXIS_IMAG,
    AXIS_REAL,
    make_pert_scan_system,
    make_pert_system,
    make_stage30_system,
    make_stage42_system,
    measure_of,
)
from .stationary import BcMode, RodSolution

__all__ = [
    "Verdict",
    "EigenPair",
    "PairTrace",
    "EigenTrace",
    "find_imaginary_spectrum",
    "find_real_spectrum",
    "grow_imaginary_eigenfunction",
    "grow_real_eigenfunction",
    "eigenpairs",
    "trace_spectrum",
    "STABILITY_TOL",
]

STABILITY_TOL = 1e-8


class Verdict(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


@dataclass
class EigenPair:
    index: int                       # 1-based, ascending lambda_i at the start
    pert: PerturbationSolution

    @property
    def lam(self) -> complex:
        return self.pert.lam


@dataclass
class PairTrace:
    label: str
    pair_indices: tuple
    params: list = dfield(default_factory=list)
    lam_r: list = dfield(default_factory=list)
    lam_i: list = dfield(default_factory=list)
    truncated: str = ""
    final_base: np.ndarray | None = None      # (18, nrep) at the last point
    final_pert: np.ndarray | None = None      # (24, nrep) real/imag split
    final_measures: tuple = (0.0, 0.0)

    def arrays(self):
        return (np.asarray(self.params), np.asarray(self.lam_r),
                np.asarray(self.lam_i))


@dataclass
class EigenTrace:
    free_param: str
    pairs: list = dfield(default_factory=list)          # PairTrace
    events: list = dfield(default_factory=list)         # BifurcationEvent
    stability_tol: float = STABILITY_TOL

    def classification(self, grid: np.ndarray | None = None):
        """(param, Verdict) samples over the union of traced ranges.

        Unstable iff some tracked lambda_r exceeds the tolerance; marginal
        when the largest real part sits within it (conservative spectra);
        stable when every tracked real part is negative beyond it.
        """
        if grid is None:
            lo = min(min(tr.params) for tr in self.pairs if tr.params)
            hi = max(max(tr.params) for tr in self.pairs if tr.params)
            grid = np.linspace(lo, hi, 101)
        out = []
        for q in grid:
            worst = -math.inf
            seen = False
            for tr in self.pairs:
                par, lr, _ = tr.arrays()
                if par.size < 2:
                    continue
                order = np.argsort(par)
                if q < par[order[0]] - 1e-12 or q > par[order[-1]] + 1e-12:
                    continue
                worst = max(worst, float(np.interp(q, par[order], lr[order])))
                seen = True
            if not seen:
                continue
            if worst > self.stability_tol:
                verdict = Verdict.UNSTABLE
            elif worst >= -self.stability_tol:
                verdict = Verdict.MARGINAL
            else:
                verdict = Verdict.STABLE
            out.append((float(q), verdict))
        return out

    def to_csv(self, grid_points: int = 201) -> str:
        buf = io.StringIO()
        buf.write(f"# rodforge {_version} eigenvalue trace in {self.free_param}\n")
        los = [min(tr.params) for tr in self.pairs if tr.params]
        his = [max(tr.params) for tr in self.pairs if tr.params]
        if not los:
            return buf.getvalue()
        grid = np.linspace(min(los), max(his), grid_points)
        cols = [self.free_param]
        for tr in self.pairs:
            cols += [f"{tr.label}_lambda_r", f"{tr.label}_lambda_i"]
        buf.write(",".join(cols) + "\n")
        series = []
        for tr in self.pairs:
            par, lr, li = tr.arrays()
            order = np.argsort(par)
            par, lr, li = par[order], lr[order], li[order]
            inside = (grid >= par[0] - 1e-12) & (grid <= par[-1] + 1e-12)
            gr = np.where(inside, np.interp(grid, par, lr), np.nan)
            gi = np.where(inside, np.interp(grid, par, li), np.nan)
            series.append((gr, gi))
        for k, q in enumerate(grid):
            row = [f"{q:.17g}"]
            for gr, gi in series:
                row += [f"{gr[k]:.17g}", f"{gi[k]:.17g}"]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def events_json(self) -> str:
        return json.dumps([e.as_dict() for e in self.events], indent=2)


# ---------------------------------------------------------------------------
# step 1: eigenvalue scans
# ---------------------------------------------------------------------------

def _require_scannable(p: Params):
    if p.gamma != 0.0 or p.omega != 0.0:
        raise PreconditionError(
            "eigenvalue scanning requires a conservative non-whirling start "
            f"(gamma={p.gamma}, omega={p.omega}): eigenvalues may be fully "
            "complex and would not appear as branch points on one axis"
        )


def _scan_axis(base: RodSolution, axis: str, lam_lo: float, lam_hi: float,
               count: int, grid: float, bisect_tol: float,
               kappa_min: float) -> list:
    _require_scannable(base.params)
    system = make_pert_scan_system(base.mesh, base.fields, base.params,
                                   axis=axis, bc_mode=base.bc_mode,
                                   kappa_min=kappa_min)
    x0 = system.pack(np.zeros((NPERT, system.nrep)))

    def sgn(mu):
        system.set_mu(mu)
        return det_sign(system.jacobian(x0))[0]

    found = []
    mu_prev = lam_lo
    s_prev = sgn(mu_prev)
    mu = mu_prev
    while mu < lam_hi and len(found) < count:
        mu = min(mu + grid, lam_hi)
        s = sgn(mu)
        if s != 0 and s_prev != 0 and s != s_prev:
            lo, hi, slo = mu_prev, mu, s_prev
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                sm = sgn(mid)
                if sm == slo:
                    lo = mid
                else:
                    hi = mid
            found.append(0.5 * (lo + hi))
        mu_prev, s_prev = mu, s
    if len(found) < count:
        warnings.warn(
            f"found only {len(found)} of {count} requested eigenvalues in "
            f"({lam_lo}, {lam_hi}) on the {axis} axis", stacklevel=2)
    return found


def find_imaginary_spectrum(base: RodSolution, count: int = 5, *,
                            lam_lo: float = 1e-3, lam_hi: float = 120.0,
                            grid: float = 0.5, bisect_tol: float = 1e-8,
                            kappa_min: float = 1e-8) -> list:
    """Purely imaginary eigenvalues lambda = i mu, mu > 0, lowest first.

    Scans the determinant sign of the collocated linear operator along mu
    (the staged system's branch-point test) and bisects each sign change.
    """
    return _scan_axis(base, AXIS_IMAG, lam_lo, lam_hi, count, grid,
                      bisect_tol, kappa_min)


def find_real_spectrum(base: RodSolution, count: int = 4, *,
                       lam_lo: float = 1e-3, lam_hi: float = 40.0,
                       grid: float = 0.25, bisect_tol: float = 1e-8,
                       kappa_min: float = 1e-8) -> list:
    """Positive real eigenvalues (growth rates) of the frozen base."""
    return _scan_axis(base, AXIS_REAL, lam_lo, lam_hi, count, grid,
                      bisect_tol, kappa_min)


# ---------------------------------------------------------------------------
# step 2: growing eigenfunctions
# ---------------------------------------------------------------------------

def _pin_phase(v: np.ndarray) -> np.ndarray:
    """Fix the sign so the alpha_2 component is nonnegative at its largest
    node (eigenfunctions are defined up to scale)."""
    a2 = v[4]
    k = int(np.argmax(np.abs(a2)))
    return -v if a2[k] < 0 else v


def _second_null_is_small(J, xi, rtol: float = 1e-3) -> bool:
    from scipy.sparse.linalg import splu
    import scipy.sparse as sp

    n = J.shape[0]
    try:
        lu = splu(J.tocsc() + 1e-12 * sp.identity(n, format="csc"))
    except RuntimeError:
        return True
    rng = np.random.default_rng(23)
    y = rng.standard_normal(n)
    xin = xi / np.linalg.norm(xi)
    for _ in range(6):
        y = y - (y @ xin) * xin
        y = lu.solve(y)
        ny = np.linalg.norm(y)
        if ny == 0:
            return False
        y /= ny
    y = y - (y @ xin) * xin
    ny = np.linalg.norm(y)
    if ny == 0:
        return False
    y /= ny
    s2 = np.linalg.norm(J @ y)
    s1 = np.linalg.norm(J @ xin)
    return s2 < max(10.0 * s1, rtol * 1e-3)


def grow_imaginary_eigenfunction(base: RodSolution, mu: float, *,
                                 axis: str = AXIS_IMAG,
                                 kappa_min: float = 1e-8,
                                 check_simple: bool = True) -> PerturbationSolution:
    """Grow the eigenfunction at a detected eigenvalue i*mu (or mu on the
    real axis) and normalise its measure to one; mu is refined in the solve.
    """
    p = base.params
    scan = make_pert_scan_system(base.mesh, base.fields, p, axis=axis,
                                 bc_mode=base.bc_mode, kappa_min=kappa_min)
    scan.set_mu(mu)
    J = scan.jacobian(scan.pack(np.zeros((NPERT, scan.nrep))))
    xi = null_vector(J)
    if check_simple and _second_null_is_small(J, xi):
        raise DegenerateBranchPointError(
            f"eigenvalue at mu={mu:.8g} appears non-simple; cannot grow a "
            "unique eigenfunction")
    v0 = xi.reshape(-1, NPERT).T
    system = make_pert_system(base.mesh, base.fields, p, axis=axis,
                              bc_mode=base.bc_mode, free=("mu",),
                              measure_target=1.0, kappa_min=kappa_min)
    v0 = v0 / measure_of(system, v0, range(NPERT))
    x, _ = newton(system, system.pack(v0, [mu]), tol=1e-10, max_iter=20)
    V, pars = system.unpack(x)
    V = _pin_phase(V.copy())
    mu_ref = float(pars[0])
    fields = np.zeros((2 * NPERT, V.shape[1]))
    if axis == AXIS_IMAG:
        fields[NPERT:] = V
        lam_r, lam_i = 0.0, mu_ref
        m_r, m_i = 0.0, 1.0
    else:
        fields[:NPERT] = V
        lam_r, lam_i = mu_ref, 0.0
        m_r, m_i = 1.0, 0.0
    return PerturbationSolution(base.mesh, lam_r, lam_i, fields, m_r, m_i)


def grow_real_eigenfunction(base: RodSolution, pert: PerturbationSolution, *,
                            target: float = 1.0,
                            kappa_min: float = 1e-8) -> PerturbationSolution:
    """Grow the real part against the frozen imaginary measure.

    For conservative non-whirling starts the complex eigenspace is spanned by
    one real shape, so the real part is the same shape scaled to ``target``
    (and neither lambda_r nor lambda_i moves); the result is verified by a
    Newton polish of the full split system over the frozen base.
    """
    p = base.params
    n2 = 2 * NPERT
    vi = pert.fields[NPERT:]
    mi = pert.measure_i
    if mi <= 0:
        raise PreconditionError("imaginary part must be grown first")
    guess = np.empty((n2, vi.shape[1]))
    guess[:NPERT] = vi / mi * target
    guess[NPERT:] = vi

    mesh = base.mesh
    from .collocation import DiscretizedSystem, interp_fields
    from .linearized import pert_bc_residual, system_matrix
    from .stagesys import pert_l2_measure

    base_coll = interp_fields(mesh, base.fields, mesh.collocation_points)
    base_a, base_b = base.fields[:, 0].copy(), base.fields[:, -1].copy()

    def rhs(s, V, pars):
        lam = complex(pars[0], pars[1])
        A = system_matrix(base_coll, p, lam)
        v = V[:NPERT] + 1j * V[NPERT:]
        Av = np.einsum("pij,jp->ip", A, v)
        return np.concatenate([Av.real, Av.imag])

    def bc(va, vb, pars):
        lam = complex(pars[0], pars[1])
        r = pert_bc_residual(va[:NPERT] + 1j * va[NPERT:],
                             vb[:NPERT] + 1j * vb[NPERT:],
                             base_a, base_b, p, lam, base.bc_mode, kappa_min)
        return np.concatenate([r.real, r.imag])

    system = DiscretizedSystem(
        mesh, n2, rhs, bc, nbc=n2, npar=2,
        integrals=[pert_l2_measure(range(NPERT), target),
                   pert_l2_measure(range(NPERT, n2), pert.measure_i)])
    x0 = system.pack(guess, [pert.lambda_r, pert.lambda_i])
    x, _ = newton(system, x0, tol=1e-9, max_iter=25)
    V, pars = system.unpack(x)
    return PerturbationSolution(mesh, float(pars[0]), float(pars[1]),
                                V.copy(), target, pert.measure_i)


def eigenpairs(base: RodSolution, count: int = 5, **scan_kw) -> list:
    """Scan and grow the lowest eigenpairs about a frozen base."""
    mus = find_imaginary_spectrum(base, count, **scan_kw)
    return [EigenPair(k + 1, grow_imaginary_eigenfunction(base, mu))
            for k, mu in enumerate(mus)]


def pairs_at_end(result: "EigenTrace", base: RodSolution):
    """Rebuild (base solution, eigenpairs) at the endpoint of a finished trace
    so a further parameter trace can be chained onto it.

    Only traces that ran to the target (not truncated by events) are carried
    over.  The base snapshot comes from the first usable trace; all pair
    traces end on the same underlying solution.
    """
    new_base = None
    out = []
    for tr in result.pairs:
        if tr.truncated or tr.final_base is None or len(tr.pair_indices) != 1:
            continue
        qf = tr.params[-1]
        p_eff = base.params.with_(**{result.free_param: qf})
        if new_base is None:
            new_base = RodSolution(base.mesh, tr.final_base.copy(), p_eff,
                                   bc_mode=base.bc_mode)
        pert = PerturbationSolution(base.mesh, tr.lam_r[-1], tr.lam_i[-1],
                                    tr.final_pert.copy(),
                                    tr.final_measures[0], tr.final_measures[1])
        out.append(EigenPair(tr.pair_indices[0], pert))
    if new_base is None:
        raise PreconditionError("no pair trace reached the target parameter")
    return new_base, out


# ---------------------------------------------------------------------------
# step 3: parameter traces
# ---------------------------------------------------------------------------

def _quadratic_regime(p: Params, free_param: str) -> bool:
    return p.gamma == 0.0 and p.omega == 0.0 and free_param not in ("gamma", "omega")


def _trace_pair_quadratic(base: RodSolution, pair: EigenPair, free_param: str,
                          target: float, opts: dict):
    p = base.params
    mesh = base.mesh
    system = make_stage30_system(
        mesh, p, axis=AXIS_IMAG, bc_mode=base.bc_mode,
        free=(free_param, "mu"), measure_target=1.0, extra_rows=1,
        kappa_min=opts.get("kappa_min", 1e-8))
    p0 = getattr(p, free_param)
    mu0 = pair.pert.lambda_i
    U0 = np.vstack([base.fields, pair.pert.fields[NPERT:]])
    x0 = system.pack(U0, [p0, mu0])
    # settle onto the trace with the parameter pinned
    pin = np.zeros(system.nunknowns)
    pin[system.nfield_unknowns] = 1.0
    system.linear_rows[-1] = (pin, p0)
    x0, _ = newton(system, x0, tol=1e-9, max_iter=20)

    trace = PairTrace(label=f"pair{pair.index}", pair_indices=(pair.index,))
    events = []
    state = {"prev": None, "fold": False, "zero": False}

    def on_point(x):
        _, pars = system.unpack(x)
        trace.params.append(float(pars[0]))
        trace.lam_r.append(0.0)
        trace.lam_i.append(float(pars[1]))

    direction = +1 if target >= p0 else -1

    def stop_when(x):
        _, pars = system.unpack(x)
        q, mu = float(pars[0]), float(pars[1])
        if mu <= opts.get("mu_floor", 1e-6):
            state["zero"] = True
            return True
        if state["prev"] is not None and (q - state["prev"]) * direction < -1e-12:
            state["fold"] = True
            return True
        state["prev"] = q
        return False

    xs, reason = arclength_continue(
        system, x0, primary=0, target=target,
        initial_step=opts.get("initial_step", 0.1),
        max_step=opts.get("max_step", 0.5),
        min_step=opts.get("min_step", 1e-6),
        max_steps=opts.get("max_steps", 3000),
        direction=direction, on_point=on_point, stop_when=stop_when)

    final = xs[-1]
    Uf, _ = system.unpack(final)
    trace.final_base = Uf[:NF].copy()
    pert24 = np.zeros((2 * NPERT, Uf.shape[1]))
    pert24[NPERT:] = Uf[NF:]
    trace.final_pert = pert24
    trace.final_measures = (0.0, 1.0)
    if state["zero"]:
        par = np.asarray(trace.params)
        mus = np.asarray(trace.lam_i)
        loc = par[-1]
        if par.size >= 2 and abs(mus[-2] ** 2 - mus[-1] ** 2) > 0:
            # lambda_i^2 is linear in the parameter near a collision at zero
            wgt = mus[-2] ** 2 / (mus[-2] ** 2 - mus[-1] ** 2)
            loc = float(par[-2] + wgt * (par[-1] - par[-2]))
        events.append(BifurcationEvent(
            EventKind.PITCHFORK, {free_param: loc},
            {"pairs": [pair.index], "lambda": [0.0, 0.0]}))
        trace.truncated = "collided-at-zero"
        if len(trace.params) >= 2 and trace.lam_i[-1] < 0:
            # drop the overshoot point on the conjugate side of the axis
            for seq in (trace.params, trace.lam_r, trace.lam_i):
                seq.pop()
    elif state["fold"]:
        par = np.asarray(trace.params[-3:])
        mus = np.asarray(trace.lam_i[-3:])
        loc, mu_c = _parabola_vertex(par, mus)
        events.append(BifurcationEvent(
            EventKind.HAMILTONIAN_HOPF, {free_param: loc},
            {"pairs": [pair.index], "lambda_i": mu_c}))
        trace.truncated = "hh-collision"
    elif reason == "stall":
        trace.truncated = "stall"
    return trace, events, (system, final)


def _parabola_vertex(par, mus):
    """Vertex of q(mu) through the last three points (fold refinement)."""
    if par.size < 3 or np.unique(mus).size < 3:
        return float(par[-1]), float(mus[-1])
    c = np.polyfit(mus, par, 2)
    mu_c = -c[1] / (2.0 * c[0])
    q_c = float(np.polyval(c, mu_c))
    return q_c, float(mu_c)


def _trace_pair_complex(base: RodSolution, start_fields: np.ndarray,
                        lam0: complex, pair_indices: tuple, label: str,
                        free_param: str, p_start: float, target: float,
                        opts: dict, measure_r: float = 1.0,
                        measure_i: float = 1.0):
    """Trace a (possibly fully complex) eigenpair with the 42-field system."""
    p = base.params
    mesh = base.mesh
    if measure_i <= 0.0:
        raise PreconditionError(
            "complex traces start from grown imaginary eigenfunctions")
    system = make_stage42_system(
        mesh, p, bc_mode=base.bc_mode, free=(free_param, "lam_r", "lam_i"),
        measure_r_target=measure_r, measure_i_target=measure_i, extra_rows=1,
        kappa_min=opts.get("kappa_min", 1e-8))
    x0 = system.pack(start_fields, [p_start, lam0.real, lam0.imag])
    pin = np.zeros(system.nunknowns)
    pin[system.nfield_unknowns] = 1.0
    system.linear_rows[-1] = (pin, p_start)
    x0, _ = newton(system, x0, tol=1e-9, max_iter=25)

    trace = PairTrace(label=label, pair_indices=pair_indices)

    def on_point(x):
        _, pars = system.unpack(x)
        trace.params.append(float(pars[0]))
        trace.lam_r.append(float(pars[1]))
        trace.lam_i.append(float(pars[2]))

    stop_fn = opts.get("stop_when")

    def stop_when(x):
        if stop_fn is None:
            return False
        _, pars = system.unpack(x)
        return stop_fn(float(pars[0]), complex(pars[1], pars[2]))

    xs, reason = arclength_continue(
        system, x0, primary=0, target=target,
        initial_step=opts.get("initial_step", 0.05),
        max_step=opts.get("max_step", 0.25),
        min_step=opts.get("min_step", 1e-7),
        max_steps=opts.get("max_steps", 4000),
        direction=+1 if target >= p_start else -1,
        on_point=on_point, stop_when=stop_when)
    if reason == "stall":
        trace.truncated = "stall"
    Uf, _ = system.unpack(xs[-1])
    trace.final_base = Uf[:NF].copy()
    trace.final_pert = Uf[NF:].copy()
    trace.final_measures = (measure_r, measure_i)
    return trace, (system, xs)


def _refine_crossing(system, xs, k, refine_tol: float = 1e-8,
                     max_iter: int = 40):
    """Pinned-parameter secant/bisection refinement of a lambda_r sign change
    between accepted states xs[k-1] and xs[k].

    Returns (param, lambda_i) at |lambda_r| <= refine_tol, or None.
    """
    ip = system.nfield_unknowns
    x_lo, x_hi = xs[k - 1].copy(), xs[k].copy()
    q_lo, r_lo = x_lo[ip], x_lo[ip + 1]
    q_hi, r_hi = x_hi[ip], x_hi[ip + 1]
    if r_lo == r_hi:
        return None
    x_near = x_lo
    for _ in range(max_iter):
        q_mid = q_lo - r_lo * (q_hi - q_lo) / (r_hi - r_lo)   # secant
        if not (min(q_lo, q_hi) <= q_mid <= max(q_lo, q_hi)):
            q_mid = 0.5 * (q_lo + q_hi)
        pin = np.zeros(system.nunknowns)
        pin[ip] = 1.0
        system.linear_rows[-1] = (pin, q_mid)
        guess = x_near.copy()
        guess[ip] = q_mid
        try:
            x_mid, _ = newton(system, guess, tol=1e-10, max_iter=15)
        except RodforgeError:
            return None
        r_mid = x_mid[ip + 1]
        if abs(r_mid) <= refine_tol:
            return float(x_mid[ip]), float(x_mid[ip + 2])
        if r_mid * r_lo < 0:
            q_hi, r_hi, x_near = q_mid, r_mid, x_mid
        else:
            q_lo, r_lo, x_near = q_mid, r_mid, x_mid
    return None


def _hopf_events(trace: PairTrace, free_param: str, refiner=None) -> list:
    """Sign changes of lambda_r at nonzero lambda_i along a complex trace."""
    events = []
    par, lr, li = trace.arrays()
    for k in range(1, par.size):
        if lr[k - 1] == 0.0 and lr[k] == 0.0:
            continue
        if lr[k - 1] * lr[k] < 0.0 and min(abs(li[k - 1]), abs(li[k])) > 1e-6:
            q = float(par[k - 1] - lr[k - 1] * (par[k] - par[k - 1])
                      / (lr[k] - lr[k - 1]))
            lam_i = float(np.interp(q, par[k - 1:k + 1], li[k - 1:k + 1])) \
                if par[k] != par[k - 1] else float(li[k])
            if refiner is not None:
                refined = refiner(q, k)
                if refined is not None and math.isfinite(refined[1]):
                    q, lam_i = refined
            events.append(BifurcationEvent(
                EventKind.HOPF, {free_param: q},
                {"pairs": list(trace.pair_indices), "lambda_i": lam_i,
                 "direction": "destabilising" if lr[k] > lr[k - 1] else "stabilising"}))
    return events


def _merge_hh_events(events: list, free_param: str, tol: float = 0.05) -> list:
    """Collisions are seen once from each colliding pair; merge duplicates."""
    out = []
    for ev in events:
        if ev.kind is not EventKind.HAMILTONIAN_HOPF:
            out.append(ev)
            continue
        merged = False
        for other in out:
            if other.kind is EventKind.HAMILTONIAN_HOPF and \
                    abs(other.location[free_param] - ev.location[free_param]) < tol and \
                    abs(other.eigen_data["lambda_i"] - ev.eigen_data["lambda_i"]) < 0.5:
                pairs = sorted(set(other.eigen_data["pairs"]) | set(ev.eigen_data["pairs"]))
                other.eigen_data["pairs"] = pairs
                other.location[free_param] = 0.5 * (
                    other.location[free_param] + ev.location[free_param])
                merged = True
                break
        if not merged:
            out.append(ev)
    return out


def trace_spectrum(base: RodSolution, pairs: list, free_param: str,
                   prange: tuple, *, follow_complex: bool = True,
                   **options) -> EigenTrace:
    """Trace eigenpairs of ``base`` in ``free_param`` over ``prange``.

    ``pairs`` is a list of EigenPair from :func:`eigenpairs`; both measures
    are held fixed during the runs.  In the quadratic regime imaginary pairs
    are traced on their axis and collisions show up as parameter folds; with
    ``follow_complex`` the post-collision quadruple is picked up by the split
    system and followed until it returns to the axis (reverse collision).
    """
    p0, target = prange
    result = EigenTrace(free_param=free_param)
    raw_events = []
    fold_states = {}

    if _quadratic_regime(base.params, free_param):
        for pair in pairs:
            trace, events, final_state = _trace_pair_quadratic(
                base, pair, free_param, target, dict(options))
            result.pairs.append(trace)
            raw_events.extend(events)
            for ev in events:
                if ev.kind is EventKind.HAMILTONIAN_HOPF:
                    fold_states[pair.index] = (final_state, ev)
        result.events = _merge_hh_events(raw_events, free_param)

        if follow_complex:
            done = set()
            for ev in [e for e in result.events
                       if e.kind is EventKind.HAMILTONIAN_HOPF]:
                key = tuple(ev.eigen_data["pairs"])
                if key in done:
                    continue
                done.add(key)
                seg = _follow_complex_segment(base, ev, fold_states,
                                              free_param, target, dict(options))
                if seg is not None:
                    trace, rev = seg
                    result.pairs.append(trace)
                    if rev is not None:
                        result.events.append(rev)
    else:
        for pair in pairs:
            fields = np.vstack([base.fields, pair.pert.fields])
            mr = pair.pert.measure_r
            if mr == 0.0:
                # seed the real part with the imaginary shape (quadratic start)
                fields[NF:NF + NPERT] = pair.pert.fields[NPERT:]
                mr = pair.pert.measure_i
            trace, (system, xs) = _trace_pair_complex(
                base, fields, pair.lam, (pair.index,), f"pair{pair.index}",
                free_param, getattr(base.params, free_param), target,
                dict(options), measure_r=mr, measure_i=pair.pert.measure_i)

            def refiner(q, k, _sys=system, _xs=xs):
                out = _refine_crossing(_sys, _xs, k)
                return out if out is not None else (q, float("nan"))

            result.pairs.append(trace)
            result.events.extend(_hopf_events(trace, free_param, refiner))
    return result


def _follow_complex_segment(base: RodSolution, ev: BifurcationEvent,
                            fold_states: dict, free_param: str, target: float,
                            opts: dict):
    """Restart past a collision with a small positive growth rate and follow
    the complex quadruple until lambda_r returns to zero."""
    idx = ev.eigen_data["pairs"][0]
    if idx not in fold_states:
        return None
    (system30, x30), _ = fold_states[idx]
    U30, pars30 = system30.unpack(x30)
    q_fold = ev.location[free_param]
    mu_fold = ev.eigen_data["lambda_i"]
    base_fields = U30[:NF]
    v = U30[NF:]

    fields = np.vstack([base_fields, v, v])
    delta0 = opts.get("complex_restart_offset", 0.02)
    state = {"armed": False, "crossed": False}

    def stop_when(q, lam):
        # arm once the growth rate has genuinely lifted off the axis, stop
        # when it comes back (reverse collision)
        if abs(lam.real) > 1e-4:
            state["armed"] = True
        if state["armed"] and abs(lam.real) <= STABILITY_TOL:
            state["crossed"] = True
            return True
        return False

    opts2 = dict(opts)
    opts2["stop_when"] = stop_when
    last_exc = None
    trace = None
    for delta in (delta0, 4 * delta0, 16 * delta0):
        for lam_r_seed in (1e-2, 1e-1, 1e-3):
            try:
                trace, (system, xs) = _trace_pair_complex(
                    base, fields, complex(lam_r_seed, mu_fold),
                    tuple(ev.eigen_data["pairs"]),
                    "+".join(f"pair{i}" for i in ev.eigen_data["pairs"]) + "_complex",
                    free_param, q_fold + delta, target, opts2,
                    measure_r=1.0, measure_i=1.0)
                break
            except RodforgeError as exc:
                last_exc = exc
        if trace is not None:
            break
    if trace is None:
        warnings.warn(f"could not follow complex segment past "
                      f"{free_param}={q_fold:.4g}: {last_exc}", stacklevel=2)
        return None

    rev = None
    par, lr, li = trace.arrays()
    if state["crossed"] and par.size >= 2:
        out = _refine_crossing(system, xs, len(xs) - 1)
        if out is not None:
            q, lam_i_rev = out
        else:
            q, lam_i_rev = float(par[-1]), float(li[-1])
        rev = BifurcationEvent(
            EventKind.REVERSE_HAMILTONIAN_HOPF, {free_param: q},
            {"pairs": list(ev.eigen_data["pairs"]), "lambda_i": lam_i_rev})
        trace.truncated = "returned-to-axis"
    return trace, rev
