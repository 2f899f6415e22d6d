"""Closed-form results: buckling loads, unperturbed spectra, exact helices.

The helical family is parametrised by the helical angle theta (angle between
the local tangent and the whirl axis) and the mode integer n (number of half
turns).  With parallel supports (chi = 0) the kinematic end conditions force

    Omega = n pi + chi,   nu = -n pi,   phi0 in {0, pi},
    psi0 = pi/2 - chi - phi0,

and the centreline is

    x = r cos(Omega s + psi0),  y = r sin(Omega s + psi0),
    z = 1 + (s - 1) cos(theta),          r = sin(theta)/Omega.

The magnetic load carried by a helix follows from the bending moment balance;
in dimensionless form (gj = Gamma (1+R)/2):

    B = (1 - gj) Omega^3 - gj nu Omega^2/cos(theta) + T Omega/cos(theta)
        - omega^2/Omega + P omega^2 Omega.

Setting theta = 0 gives the buckling loads; isotropy (R = 1) is required for
a helix to balance the moment equations at chi = 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import (
    NF,
    InvalidParameterError,
    Params,
    RodState,
    RodforgeError,
    torsional_stiffness,
    trivial_fields,
)

__all__ = [
    "Handedness",
    "HelixSolution",
    "Spectrum",
    "HelixAdmissibility",
    "InfiniteLoadError",
    "RootFindingError",
    "static_buckling_load",
    "whirl_buckling_load",
    "helix_B",
    "helix_solution",
    "helix_from_B",
    "helix_from_curvature",
    "helix_fields",
    "helix_state",
    "helix_fields_derivative",
    "end_torque",
    "anisotropic_helix_admissible",
    "unperturbed_spectrum",
    "y_mode_condition",
]


class InfiniteLoadError(RodforgeError):
    """The circular limit theta = pi/2 carries an unbounded magnetic load."""


class RootFindingError(RodforgeError):
    """A bracketed root search failed; carries the attempted bracket."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class Handedness(enum.Enum):
    RIGHT = "right"
    LEFT = "left"


@dataclass(frozen=True)
class HelixSolution:
    """Closed-form helix metadata (all quantities dimensionless, L = 1)."""

    theta: float
    n: int
    chi: float
    Omega: float
    nu: float
    psi0: float
    phi0: float
    r: float
    B: float
    end_torque: float
    handedness: Handedness

    @property
    def total_curvature(self) -> float:
        return abs(self.Omega) * math.sin(self.theta)

    def as_dict(self) -> dict:
        return {
            "theta": self.theta,
            "n": self.n,
            "chi": self.chi,
            "Omega": self.Omega,
            "nu": self.nu,
            "psi0": self.psi0,
            "phi0": self.phi0,
            "r": self.r,
            "B": self.B,
            "end_torque": self.end_torque,
            "total_curvature": self.total_curvature,
            "handedness": self.handedness.value,
        }


@dataclass(frozen=True)
class Spectrum:
    """Eigenfrequencies of the unperturbed straight rod (T=gamma=omega=B=0)."""

    x_modes: tuple
    y_modes: tuple
    torsion_modes: tuple

    def all_modes(self):
        """Merged (value, family, n) triples sorted by value."""
        out = [(v, "x", i + 1) for i, v in enumerate(self.x_modes)]
        out += [(v, "y", i + 1) for i, v in enumerate(self.y_modes)]
        out += [(v, "torsion", i + 1) for i, v in enumerate(self.torsion_modes)]
        return sorted(out)

    def as_dict(self) -> dict:
        return {
            "x_modes": list(self.x_modes),
            "y_modes": list(self.y_modes),
            "torsion_modes": list(self.torsion_modes),
        }


@dataclass(frozen=True)
class HelixAdmissibility:
    admissible: bool
    modes: str          # "all", "n=0", or "none"
    reason: str

    def as_dict(self) -> dict:
        return {"admissible": self.admissible, "modes": self.modes, "reason": self.reason}


def static_buckling_load(n: int, R: float) -> float:
    """Static pitchfork load B = (n pi)^3 sqrt(R)."""
    if n < 1 or int(n) != n:
        raise InvalidParameterError(f"mode number must be a positive integer, got {n}")
    if R <= 0.0:
        raise InvalidParameterError(f"R must be positive, got {R}")
    return (n * math.pi) ** 3 * math.sqrt(R)


def whirl_buckling_load(n: int, p: Params) -> float:
    """Whirl pitchfork load for an isotropic rod.

    For chi = 0: B = n^3 pi^3 + n pi T - omega^2/(n pi) + n pi omega^2 P.
    Tension and rotary inertia stiffen, whirl softens.  A support twist chi
    shifts Omega to n pi + chi and adds the torque term -gj chi Omega^2.
    """
    if n < 1 or int(n) != n:
        raise InvalidParameterError(f"mode number must be a positive integer, got {n}")
    if abs(p.R - 1.0) > 1e-12:
        raise InvalidParameterError("whirl buckling formula requires an isotropic rod (R=1)")
    gj = torsional_stiffness(p)
    Om = n * math.pi + p.chi
    return (
        Om**3
        - gj * p.chi * Om**2
        + p.T * Om
        - p.omega**2 / Om
        + p.P * p.omega**2 * Om
    )


def _check_helix_domain(theta: float, n: int, p: Params) -> None:
    if abs(p.R - 1.0) > 1e-12:
        raise InvalidParameterError("exact helices require an isotropic rod (R=1)")
    if not (0.0 <= theta < 0.5 * math.pi):
        if abs(theta - 0.5 * math.pi) < 1e-14:
            raise InfiniteLoadError("theta = pi/2 is the circular limit; B diverges")
        raise InvalidParameterError(f"theta must lie in [0, pi/2), got {theta}")
    if n * math.pi + p.chi == 0.0:
        raise InvalidParameterError("Omega = n pi + chi must be nonzero")


def helix_B(theta: float, n: int, p: Params) -> float:
    """Magnetic load carried by the helix with angle theta and n half turns."""
    _check_helix_domain(theta, n, p)
    gj = torsional_stiffness(p)
    Om = n * math.pi + p.chi
    nu = -n * math.pi
    ct = math.cos(theta)
    return (
        (1.0 - gj) * Om**3
        - gj * nu * Om**2 / ct
        + p.T * Om / ct
        - p.omega**2 / Om
        + p.P * p.omega**2 * Om
    )


def end_torque_value(theta: float, n: int, p: Params) -> float:
    """Axial torque at the lower support: M = Omega sin^2(theta) + gj kappa3 cos(theta)."""
    gj = torsional_stiffness(p)
    Om = n * math.pi + p.chi
    nu = -n * math.pi
    return Om * math.sin(theta) ** 2 + gj * (nu + Om * math.cos(theta)) * math.cos(theta)


def end_torque(h: HelixSolution, p: Params) -> float:
    return h.end_torque


def helix_solution(theta: float, n: int, p: Params, phi0: float = 0.0) -> HelixSolution:
    """Assemble the full closed-form helix record for (theta, n)."""
    _check_helix_domain(theta, n, p)
    if phi0 not in (0.0, math.pi):
        raise InvalidParameterError(f"phi0 must be 0 or pi, got {phi0}")
    Om = n * math.pi + p.chi
    nu = -n * math.pi
    psi0 = 0.5 * math.pi - p.chi - phi0
    r = math.sin(theta) / Om
    return HelixSolution(
        theta=theta,
        n=n,
        chi=p.chi,
        Omega=Om,
        nu=nu,
        psi0=psi0,
        phi0=phi0,
        r=r,
        B=helix_B(theta, n, p),
        end_torque=end_torque_value(theta, n, p),
        handedness=Handedness.RIGHT if Om > 0 else Handedness.LEFT,
    )


def helix_from_B(B: float, n: int, p: Params, phi0: float = 0.0) -> HelixSolution:
    """Invert helix_B for theta on (0, pi/2); B must exceed the buckling load."""
    B0 = helix_B(0.0, n, p)
    if B <= B0:
        raise InvalidParameterError(
            f"B = {B} does not exceed the mode-{n} buckling load {B0:.6g}"
        )
    lo, hi = 1e-12, 0.5 * math.pi - 1e-12
    f = lambda th: helix_B(th, n, p) - B
    if f(hi) < 0.0:
        raise RootFindingError("B beyond the resolvable range", bracket=(lo, hi))
    theta = brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16)
    return helix_solution(theta, n, p, phi0=phi0)


def helix_from_curvature(kappa: float, n: int, p: Params, phi0: float = 0.0) -> HelixSolution:
    """Helix of prescribed total curvature kappa = Omega sin(theta)."""
    Om = n * math.pi + p.chi
    st = kappa / abs(Om)
    if not (0.0 < st < 1.0):
        raise InvalidParameterError(
            f"curvature {kappa} not attainable by mode {n}: need 0 < kappa < |Omega|"
        )
    return helix_solution(math.asin(st), n, p, phi0=phi0)


def _euler_frame(theta, psi, phi):
    """Directors from Euler angles; rows of shape (3, ...) in {e1,e2,e3}."""
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    ss, cs = np.sin(psi), np.cos(psi)
    d1 = np.stack([sp * cs + cp * ct * ss, sp * ss - cp * ct * cs, cp * st])
    d2 = np.stack([cp * cs - sp * ct * ss, cp * ss + sp * ct * cs, -sp * st])
    d3 = np.stack([-st * ss, st * cs, ct * np.ones_like(ss)])
    return d1, d2, d3


def helix_fields(theta: float, n: int, p: Params, s, phi0: float = 0.0) -> np.ndarray:
    """Exact helix sampled at arclengths ``s``; returns shape (18, len(s)).

    The internal axial force is F.e3 = -T, matching the boundary condition
    satisfied by the straight state.  Accepts complex ``s`` (complex-step).
    """
    s = np.atleast_1d(np.asarray(s))
    if not np.iscomplexobj(s):
        s = s.astype(float)
    if theta == 0.0:
        return trivial_fields(p, s.real)
    h = helix_solution(theta, n, p, phi0=phi0)
    Om, nu = h.Omega, h.nu
    psi = Om * s + h.psi0
    phi = nu * s + h.phi0
    d1, d2, d3 = _euler_frame(theta, psi, phi)

    u = np.empty((NF, s.size), dtype=s.dtype)
    u[6] = h.r * np.cos(psi)
    u[7] = h.r * np.sin(psi)
    u[8] = 1.0 + (s - 1.0) * math.cos(theta)

    Q = h.B + p.omega**2 / Om
    Fe = np.stack([-Q * h.r * np.sin(psi), Q * h.r * np.cos(psi),
                   np.full(s.size, -p.T, dtype=s.dtype)])
    u[0] = np.einsum("ij,ij->j", Fe, d1)
    u[1] = np.einsum("ij,ij->j", Fe, d2)
    u[2] = np.einsum("ij,ij->j", Fe, d3)

    kappa1 = Om * math.sin(theta) * np.cos(phi)
    kappa2 = -Om * math.sin(theta) * np.sin(phi)
    kappa3 = np.full(s.size, nu + Om * math.cos(theta), dtype=s.dtype)
    gj = torsional_stiffness(p)
    u[3] = kappa1
    u[4] = p.R * kappa2
    u[5] = gj * kappa3

    u[9:12] = d1
    u[12:15] = d2
    u[15:18] = d3
    return u


def helix_state(theta: float, n: int, p: Params, s: float, phi0: float = 0.0) -> RodState:
    return RodState.from_vector(helix_fields(theta, n, p, np.array([s]), phi0=phi0)[:, 0].real)


def helix_fields_derivative(theta: float, n: int, p: Params, s, phi0: float = 0.0) -> np.ndarray:
    """d/ds of helix_fields by complex step; exact to machine precision."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    h = 1e-100
    return helix_fields(theta, n, p, s + 1j * h, phi0=phi0).imag / h


def anisotropic_helix_admissible(p: Params, chi: float | None = None) -> HelixAdmissibility:
    """Whether the parameter set admits exact helical equilibria.

    The twisting-moment balance of an anisotropic rod forces phi = 0 or pi,
    hence nu = 0; with parallel supports that leaves only the straight state.
    """
    chi = p.chi if chi is None else chi
    if abs(p.R - 1.0) <= 1e-12:
        return HelixAdmissibility(True, "all", "isotropic rod: every mode n is helical")
    if chi != 0.0:
        return HelixAdmissibility(
            True, "n=0",
            "anisotropic rod with twisted supports: only the n=0, Omega=chi family",
        )
    return HelixAdmissibility(
        False, "none",
        "anisotropic rod with parallel supports cannot buckle into a helix",
    )


def y_mode_condition(mu: float, p: Params) -> float:
    """Characteristic function for lateral modes hinged about the support axis.

    Roots of beta cos(alpha) sinh(beta) + alpha sin(alpha) cosh(beta) = 0,
    scaled by cosh(beta) for overflow safety.
    """
    disc = math.sqrt(mu**4 * p.P**2 + 4.0 * mu**2)
    alpha = math.sqrt(0.5 * mu**2 * p.P + 0.5 * disc)
    beta = math.sqrt(0.5 * disc - 0.5 * mu**2 * p.P)
    return beta * math.cos(alpha) * math.tanh(beta) + alpha * math.sin(alpha)


def _y_mode_p0_roots(count: int):
    """Roots of tan(x) = -tanh(x); x_k ~ (k + 3/4) pi."""
    g = lambda x: math.cos(x) * math.tanh(x) + math.sin(x)
    roots = []
    for k in range(1, count + 1):
        guess = (k - 0.25) * math.pi
        roots.append(brentq(g, guess - 0.4, guess + 0.4, xtol=1e-14))
    return roots


def unperturbed_spectrum(p: Params, count: int = 5) -> Spectrum:
    """Closed-form / transcendental eigenfrequencies at T=gamma=omega=B=0.

    x-bending modes:   mu = n^2 pi^2 / sqrt(n^2 pi^2 P + 1/R)
    torsional modes:   mu = n pi sqrt(Gamma/(2P))
    y-bending modes:   roots of the transcendental condition, bracketed from
                       the P=0 limit tan(x) = -tanh(x) widened by 20%.
    """
    if count < 1:
        raise InvalidParameterError(f"count must be >= 1, got {count}")
    ns = np.arange(1, count + 1, dtype=float)
    x_modes = tuple(
        float(n**2 * math.pi**2 / math.sqrt(n**2 * math.pi**2 * p.P + 1.0 / p.R))
        for n in ns
    )
    torsion_modes = tuple(float(n * math.pi * math.sqrt(p.Gamma / (2.0 * p.P))) for n in ns)

    y_modes = []
    for x0 in _y_mode_p0_roots(count):
        mu0 = x0**2
        lo, hi = 0.8 * mu0, 1.2 * mu0
        flo, fhi = y_mode_condition(lo, p), y_mode_condition(hi, p)
        if flo * fhi > 0.0:
            raise RootFindingError(
                f"no sign change for y-mode near mu ~ {mu0:.6g}: "
                f"f({lo:.6g})={flo:.3g}, f({hi:.6g})={fhi:.3g}",
                bracket=(lo, hi),
            )
        y_modes.append(float(brentq(lambda m: y_mode_condition(m, p), lo, hi, xtol=1e-13)))
    return Spectrum(x_modes=x_modes, y_modes=tuple(y_modes), torsion_modes=torsion_modes)
