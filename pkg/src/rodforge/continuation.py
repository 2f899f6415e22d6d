"""Pseudo-arclength continuation: the generic predictor-corrector engine,
stationary solution branches with pitchfork detection and switching, whirl
sweeps, and two-parameter event loci.

The engine works on any :class:`DiscretizedSystem` whose last bordered row is
reserved for the arclength constraint.  Tangents are computed from the
bordered Jacobian itself (solve J t = e_arc), measured in a weighted norm
that balances field and parameter scales.  Steps double after fast Newton
convergence and halve on failure, within caps.

Pitchforks on stationary branches are detected by determinant sign changes
of the square (parameter-pinned) Jacobian between accepted points and then
bisected in the continuation parameter.  Switching steps onto the
bifurcating branch through an amplitude-pinned bordered solve along the
approximate null direction, then re-solves under the helix-centred boundary
mode.
"""

from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass, field as dfield

import numpy as np

from . import __version__ as _version
from .core import (
    NF,
    ConvergenceError,
    DegenerateBranchPointError,
    Params,
    RodforgeError,
)
from .collocation import DiscretizedSystem, Mesh, det_sign, newton, null_vector
from .stationary import BcMode, RodSolution, _make_system, boundary_residual, ode_rhs

__all__ = [
    "EventKind",
    "BifurcationEvent",
    "BranchPoint",
    "Branch",
    "StallError",
    "arclength_continue",
    "continue_branch",
    "switch_branch",
    "continue_in_omega",
    "trace_hopf_locus",
]


class StallError(ConvergenceError):
    """Continuation step collapsed below the minimum step size."""


class EventKind(enum.Enum):
    PITCHFORK = "pitchfork"
    FOLD = "fold"
    HOPF = "hopf"
    HAMILTONIAN_HOPF = "hamiltonian-hopf"
    REVERSE_HAMILTONIAN_HOPF = "reverse-hamiltonian-hopf"


@dataclass
class BifurcationEvent:
    kind: EventKind
    location: dict                    # parameter name -> value at the event
    eigen_data: dict | None = None    # colliding pair indices / eigenvalues

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "location": self.location,
            "eigen_data": self.eigen_data,
        }


@dataclass
class BranchPoint:
    params: dict
    r_over_L: float
    kappa_end: float
    z_slide: float
    det_sign: int
    event: str = ""


@dataclass
class Branch:
    free_param: str
    points: list = dfield(default_factory=list)
    events: list = dfield(default_factory=list)
    solutions: dict = dfield(default_factory=dict)   # tag -> RodSolution
    truncated: str = ""

    @property
    def param_values(self) -> np.ndarray:
        return np.array([pt.params[self.free_param] for pt in self.points])

    @property
    def r_values(self) -> np.ndarray:
        return np.array([pt.r_over_L for pt in self.points])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# rodforge {_version} branch, free parameter {self.free_param}\n")
        names = list(self.points[0].params) if self.points else [self.free_param]
        cols = names + ["r_over_L", "kappa_end", "z_slide", "det_sign", "event"]
        buf.write(",".join(cols) + "\n")
        for pt in self.points:
            row = [f"{pt.params[k]:.17g}" for k in names]
            row += [f"{pt.r_over_L:.17g}", f"{pt.kappa_end:.17g}",
                    f"{pt.z_slide:.17g}", str(pt.det_sign), pt.event]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def events_json(self) -> str:
        return json.dumps([e.as_dict() for e in self.events], indent=2)


# ---------------------------------------------------------------------------
# generic engine
# ---------------------------------------------------------------------------

def _weights(system: DiscretizedSystem) -> np.ndarray:
    w = np.full(system.nunknowns, 1.0 / math.sqrt(system.nfield_unknowns))
    if system.npar:
        w[system.nfield_unknowns:] = 1.0
    return w


def _tangent(system: DiscretizedSystem, x: np.ndarray, prev_row: np.ndarray,
             weights: np.ndarray) -> np.ndarray:
    """Unit tangent (weighted norm) of the solution path at x."""
    from scipy.sparse.linalg import splu

    arc_index = system.nunknowns - 1  # arclength row is the last equation
    system.linear_rows[-1] = (prev_row, prev_row @ x)
    J = system.jacobian(x)
    rhs = np.zeros(system.nunknowns)
    rhs[arc_index] = 1.0
    t = splu(J).solve(rhs)
    nrm = np.linalg.norm(weights * t)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise ConvergenceError("tangent computation failed")
    return t / nrm


def arclength_continue(system: DiscretizedSystem, x0: np.ndarray, *,
                       primary: int, target: float,
                       initial_step: float = 0.5, max_step: float = 5.0,
                       min_step: float = 1e-4, max_steps: int = 2000,
                       direction: int = +1, fast_iters: int = 3,
                       newton_tol: float = 1e-10, newton_iter: int = 12,
                       on_point=None, stop_when=None):
    """March the bordered system from x0 until ``primary`` reaches ``target``.

    ``primary`` is an index into the parameter block (0-based among the free
    parameters).  Returns (list of accepted x, reason).  ``on_point(x)`` is
    called at each accepted point; ``stop_when(x)`` may end the run early.
    """
    ipar = system.nfield_unknowns + primary
    weights = _weights(system)
    x = np.asarray(x0, dtype=float).copy()
    pts = [x.copy()]
    if on_point is not None:
        on_point(x)

    prev_row = np.zeros(system.nunknowns)
    prev_row[ipar] = 1.0
    t = _tangent(system, x, prev_row, weights)
    if t[ipar] * direction < 0:
        t = -t
    ds = initial_step
    reason = "max_steps"
    for _ in range(max_steps):
        accepted = False
        while ds >= min_step:
            x_pred = x + ds * t
            row = weights**2 * t
            system.linear_rows[-1] = (row, row @ x_pred)
            try:
                x_new, info = newton(system, x_pred, tol=newton_tol,
                                     max_iter=newton_iter)
                accepted = True
                break
            except RodforgeError:
                ds *= 0.5
        if not accepted:
            reason = "stall"
            break

        crossed = (x_new[ipar] - target) * direction >= 0.0
        if crossed:
            # land exactly on the target parameter value
            pin = np.zeros(system.nunknowns)
            pin[ipar] = 1.0
            system.linear_rows[-1] = (pin, target)
            try:
                x_new, info = newton(system, x_new, tol=newton_tol,
                                     max_iter=newton_iter)
            except RodforgeError:
                pass  # keep the crossing point if the landing solve fails
            x = x_new
            pts.append(x.copy())
            if on_point is not None:
                on_point(x)
            reason = "target"
            break

        x = x_new
        pts.append(x.copy())
        if on_point is not None:
            on_point(x)
        if stop_when is not None and stop_when(x):
            reason = "stopped"
            break
        t_new = _tangent(system, x, weights**2 * t, weights)
        if t_new @ (weights**2 * t) < 0:
            t_new = -t_new
        t = t_new
        if info.iterations <= fast_iters:
            ds = min(2.0 * ds, max_step)
    return pts, reason


# ---------------------------------------------------------------------------
# stationary branches
# ---------------------------------------------------------------------------

def _branch_system(mesh: Mesh, p: Params, mode: BcMode, free_param: str,
                   kappa_min: float = 1e-8) -> DiscretizedSystem:
    def rhs(s, U, pars):
        return ode_rhs(U, p.with_(**{free_param: float(pars[0])}))

    def bc(ua, ub, pars):
        return boundary_residual(ua, ub, p.with_(**{free_param: float(pars[0])}),
                                 mode, kappa_min)

    return DiscretizedSystem(mesh, NF, rhs, bc, nbc=NF, npar=1, linear_rows=1)


def _square_det(mesh: Mesh, fields: np.ndarray, p: Params, mode: BcMode):
    system = _make_system(mesh, p, mode)
    return det_sign(system.jacobian(system.pack(fields)))


def _diag_point(solution: RodSolution, params: dict, sign: int) -> BranchPoint:
    return BranchPoint(
        params=dict(params),
        r_over_L=solution.r_over_L,
        kappa_end=solution.kappa_end,
        z_slide=solution.z_slide,
        det_sign=sign,
    )


def continue_branch(start: RodSolution, free_param: str, prange: tuple,
                    *, mode: BcMode | None = None,
                    initial_step: float = 0.5, max_step: float = 5.0,
                    min_step: float = 1e-4, max_steps: int = 2000,
                    detect_branch_points: bool = True,
                    bp_tol: float = 1e-8, store: str = "ends") -> Branch:
    """Continue a stationary solution in one parameter over ``prange``.

    Determinant signs of the parameter-pinned Jacobian are monitored between
    accepted points; sign changes are bisected to ``bp_tol`` in the parameter
    and recorded as pitchfork events (fold events when the path itself turns).
    """
    mode = mode or start.bc_mode
    p = start.params
    mesh = start.mesh
    system = _branch_system(mesh, p, mode, free_param)
    p0 = getattr(p, free_param)
    lo, hi = prange
    if not math.isclose(p0, lo, rel_tol=0, abs_tol=1e-12):
        p0 = lo
    direction = +1 if hi >= p0 else -1
    branch = Branch(free_param=free_param)

    records = []

    def on_point(x):
        U, pars = system.unpack(x)
        val = float(pars[0])
        p_eff = p.with_(**{free_param: val})
        sol = RodSolution(mesh, U.copy(), p_eff, bc_mode=mode)
        sign, _ = _square_det(mesh, U, p_eff, mode)
        records.append((val, sol, sign))
        branch.points.append(_diag_point(sol, {free_param: val}, sign))

    x0 = system.pack(start.fields, [p0])
    pts, reason = arclength_continue(
        system, x0, primary=0, target=hi, initial_step=initial_step,
        max_step=max_step, min_step=min_step, max_steps=max_steps,
        direction=direction, on_point=on_point)
    if reason == "stall":
        branch.truncated = "stall"

    if detect_branch_points:
        for k in range(len(records) - 1):
            v0, s0, g0 = records[k]
            v1, s1, g1 = records[k + 1]
            if g0 != 0 and g1 != 0 and g0 != g1 and abs(v1 - v0) > 0:
                loc = _bisect_branch_point(mesh, p, mode, free_param,
                                           s0, v0, g0, v1, bp_tol)
                ev = BifurcationEvent(EventKind.PITCHFORK, {free_param: loc})
                branch.events.append(ev)
                branch.points[k + 1].event = EventKind.PITCHFORK.value
    if records:
        branch.solutions["start"] = records[0][1]
        branch.solutions["end"] = records[-1][1]
        if store == "all":
            branch.solutions.update({f"pt{i}": r[1] for i, r in enumerate(records)})
    if branch.truncated == "stall":
        raise StallError("continuation stalled", partial=branch)
    return branch


def _bisect_branch_point(mesh, p, mode, free_param, sol_lo, v_lo, sign_lo,
                         v_hi, tol) -> float:
    """Bisect a determinant sign change in the parameter, re-solving at each
    midpoint from the nearer flank."""
    fields = sol_lo.fields.copy()
    lo, hi = v_lo, v_hi
    while abs(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        p_mid = p.with_(**{free_param: mid})
        system = _make_system(mesh, p_mid, mode)
        try:
            x, _ = newton(system, system.pack(fields), tol=1e-10, max_iter=12)
            fields, _ = system.unpack(x)
        except RodforgeError:
            break
        sign, _ = det_sign(system.jacobian(system.pack(fields)))
        if sign == 0:
            return mid
        if sign == sign_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def switch_branch(branch_or_solution, event: BifurcationEvent, *,
                  direction: int = +1, amplitude: float = 0.1,
                  continue_range: tuple | None = None,
                  initial_step: float = 0.5, max_step: float = 5.0,
                  max_steps: int = 2000, store: str = "ends") -> Branch:
    """Step onto the branch bifurcating at a detected pitchfork.

    The approximate null direction of the pinned Jacobian seeds an
    amplitude-pinned bordered solve (the free parameter relaxes), after which
    the solution is re-solved under HELIX_CENTRED boundary conditions and,
    when ``continue_range`` is given, continued in the free parameter.
    """
    if isinstance(branch_or_solution, Branch):
        base_sol = branch_or_solution.solutions["start"]
        free_param = branch_or_solution.free_param
    else:
        base_sol = branch_or_solution
        free_param = next(iter(event.location))
    pstar = event.location[free_param]
    p = base_sol.params.with_(**{free_param: pstar})
    mesh = base_sol.mesh
    mode0 = base_sol.bc_mode

    square = _make_system(mesh, p, mode0)
    xs = square.pack(base_sol.fields)
    xs, _ = newton(square, xs, tol=1e-10, max_iter=12)
    J = square.jacobian(xs)
    xi = null_vector(J)
    # normalise the null direction by its RMS field size
    xi /= math.sqrt(float(xi @ xi) / xi.size)
    resid = J @ xi
    if np.linalg.norm(resid) > 1e-3 * np.linalg.norm(xi):
        raise DegenerateBranchPointError(
            f"null direction residual {np.linalg.norm(resid):.2e}: "
            "branch point is not simple enough to switch")

    system = _branch_system(mesh, p, mode0, free_param)
    Ubase, _ = square.unpack(xs)
    amp = amplitude * direction
    last_error = None
    for attempt in range(6):
        row = np.zeros(system.nunknowns)
        row[: system.nfield_unknowns] = xi
        cval = float(xi @ xs) + amp
        system.linear_rows[-1] = (row, cval)
        guess = system.pack(Ubase + amp * xi.reshape(-1, NF).T, [pstar])
        try:
            x1, _ = newton(system, guess, tol=1e-10, max_iter=20)
            break
        except RodforgeError as exc:
            last_error = exc
            amp *= 0.5
    else:
        raise ConvergenceError(f"branch switching failed: {last_error}")

    U1, pars1 = system.unpack(x1)
    p1 = p.with_(**{free_param: float(pars1[0])})
    # re-solve once under the helix-centred radius condition
    from .stationary import solve as solve_stationary

    sol1 = solve_stationary(RodSolution(mesh, U1.copy(), p1, bc_mode=mode0),
                            p1, BcMode.HELIX_CENTRED)
    if continue_range is None:
        br = Branch(free_param=free_param)
        sign, _ = _square_det(mesh, sol1.fields, p1, BcMode.HELIX_CENTRED)
        br.points.append(_diag_point(sol1, {free_param: getattr(p1, free_param)}, sign))
        br.solutions["start"] = sol1
        br.solutions["end"] = sol1
        return br
    return continue_branch(sol1, free_param, continue_range,
                           mode=BcMode.HELIX_CENTRED, initial_step=initial_step,
                           max_step=max_step, max_steps=max_steps,
                           detect_branch_points=False, store=store)


def continue_in_omega(start: RodSolution, omega_range: tuple, **kw) -> Branch:
    """Continue a (helix-centred) solution in the whirl rate."""
    return continue_branch(start, "omega", omega_range,
                           mode=BcMode.HELIX_CENTRED,
                           detect_branch_points=kw.pop("detect_branch_points", False),
                           **kw)


# ---------------------------------------------------------------------------
# Hopf locus (two-parameter continuation at lambda_r = 0)
# ---------------------------------------------------------------------------

def trace_hopf_locus(seed_state: np.ndarray, mesh: Mesh, p: Params, *,
                     plane: tuple = ("omega", "B"), lam_i0: float,
                     bc_mode: BcMode = BcMode.HELIX_CENTRED,
                     initial_step: float = 0.1, max_step: float = 0.5,
                     min_step: float = 1e-5, max_steps: int = 400,
                     amplitude_floor: float = 5e-3,
                     direction: int = +1):
    """Trace the curve of marginal-stability points (lambda_r = 0, lambda_i
    free) in a two-parameter plane, starting from a located Hopf point.

    ``seed_state`` packs the 42 stage fields at the seed; lambda_r is pinned
    to zero by construction.  The run terminates when the underlying solution
    amplitude collapses (the locus meets the pitchfork set), when a parameter
    leaves its admissible range, or after ``max_steps``.
    """
    from .stagesys import make_stage42_system

    q1, q2 = plane
    system = make_stage42_system(mesh, p, bc_mode=bc_mode,
                                 free=("lam_i", q1, q2), extra_rows=1,
                                 lam_fixed=0.0)
    x0 = np.concatenate([seed_state,
                         [lam_i0, getattr(p, q1), getattr(p, q2)]])
    x0, _ = _land_on_locus(system, x0)

    points = []

    def on_point(x):
        U, pars = system.unpack(x)
        r = float(np.max(np.hypot(U[6], U[7])))
        points.append({
            "lam_i": float(pars[0]), q1: float(pars[1]), q2: float(pars[2]),
            "r_over_L": r,
        })

    def stop_when(x):
        U, _ = system.unpack(x)
        return float(np.max(np.hypot(U[6], U[7]))) < amplitude_floor

    _, reason = arclength_continue(
        system, x0, primary=1, target=math.inf if direction > 0 else -math.inf,
        initial_step=initial_step, max_step=max_step, min_step=min_step,
        max_steps=max_steps, direction=direction, on_point=on_point,
        stop_when=stop_when)
    return points, reason


def _land_on_locus(system, x0):
    """Converge the seed onto the locus with the primary parameter pinned."""
    pin = np.zeros(system.nunknowns)
    pin[system.nfield_unknowns + 1] = 1.0
    system.linear_rows[-1] = (pin, x0[system.nfield_unknowns + 1])
    return newton(system, x0, tol=1e-9, max_iter=25)
