"""Parameter model, director-frame kinematics and the straight-rod state.

All computations run on the dimensionless form of the rod equations.  The
dimensionless groups are

    P = I1/(A L^2)          rotary inertia ratio
    R = I2/I1               bending stiffness ratio
    B = B0 I L^3 / (E I1)   magnetic load (current x flux density vs bending)
    Gamma = 2G/E            shear-to-Young ratio (1/Gamma - 1 = Poisson ratio)
    gamma = gamma_v omega_c internal damping, omega_c = sqrt(E I1/(rho A L^4))
    T = T_dim L^2/(E I1)    end force
    omega = omega_dim/omega_c  whirl rate

State components are ordered (F1,F2,F3, M1,M2,M3, x,y,z, d1,d2,d3): forces and
moments in director components, centreline and directors in components of the
rotating frame {e1,e2,e3}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

__all__ = [
    "RodforgeError",
    "InvalidParameterError",
    "ConvergenceError",
    "SingularSystemError",
    "SingularRadiusError",
    "DegenerateConstitutiveError",
    "DegenerateBranchPointError",
    "PreconditionError",
    "Params",
    "DimensionalParams",
    "nondimensionalize",
    "FrameState",
    "RodState",
    "NF", "IDX_F", "IDX_M", "IDX_X", "IDX_D1", "IDX_D2", "IDX_D3",
    "trivial_state",
    "trivial_fields",
    "orthonormality_defect",
    "curvatures_from_moments",
    "moments_from_curvatures",
    "torsional_stiffness",
    "parse_param_file",
    "format_param_file",
]


class RodforgeError(Exception):
    """Base class for all rodforge errors."""


class InvalidParameterError(RodforgeError, ValueError):
    """A physical or configuration parameter is out of its admissible domain."""


class ConvergenceError(RodforgeError):
    """Newton or continuation failed to converge."""

    def __init__(self, message, residual_norm=None, partial=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.partial = partial


class SingularSystemError(RodforgeError):
    """A linear solve hit a (numerically) singular matrix."""

    def __init__(self, message, cond_estimate=None):
        super().__init__(message)
        self.cond_estimate = cond_estimate


class SingularRadiusError(RodforgeError):
    """The helix-radius boundary condition was evaluated at kappa_1(1) ~ 0."""


class DegenerateConstitutiveError(RodforgeError):
    """The viscoelastic block (1 + gamma*lambda) is singular."""


class DegenerateBranchPointError(RodforgeError):
    """A branch point is not simple; switching is not defined."""


class PreconditionError(RodforgeError):
    """A numerical procedure was started outside its domain of applicability."""


# state layout: 18 components per arclength point
NF = 18
IDX_F = slice(0, 3)
IDX_M = slice(3, 6)
IDX_X = slice(6, 9)
IDX_D1 = slice(9, 12)
IDX_D2 = slice(12, 15)
IDX_D3 = slice(15, 18)

_PARAM_KEYS = ("P", "R", "B", "Gamma", "gamma", "omega", "T", "chi")


@dataclass(frozen=True)
class Params:
    """Dimensionless parameter set (canonical representation).

    Defaults follow the reference scenario P=0.001, R=1, Gamma=0.76923
    (Poisson ratio 0.3); the dimensional columns that accompany those values
    in the source data are internally inconsistent and are not used.
    """

    P: float = 0.001
    R: float = 1.0
    B: float = 0.0
    Gamma: float = 0.76923
    gamma: float = 0.0
    omega: float = 0.0
    T: float = 0.0
    chi: float = 0.0

    def __post_init__(self):
        if not (self.P > 0.0):
            raise InvalidParameterError(f"P must be positive, got {self.P}")
        if not (self.R > 0.0):
            raise InvalidParameterError(f"R must be positive, got {self.R}")
        if not (self.Gamma > 0.0):
            raise InvalidParameterError(f"Gamma must be positive, got {self.Gamma}")
        if self.gamma < 0.0:
            raise InvalidParameterError(f"gamma must be nonnegative, got {self.gamma}")

    def with_(self, **kw) -> "Params":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in _PARAM_KEYS}


@dataclass(frozen=True)
class DimensionalParams:
    """Dimensional inputs; used only to construct a :class:`Params`.

    Either ``poisson`` or ``G`` must be given (exactly one).  The torsion
    constant defaults to J = I1 + I2, valid for sections symmetric with
    respect to the principal axes.
    """

    L: float                 # length [m]
    A: float                 # cross-section area [m^2]
    E: float                 # Young's modulus [Pa]
    rho: float               # mass density [kg/m^3]
    I1: float                # second moment of area about d1 [m^4]
    I2: float                # second moment of area about d2 [m^4]
    poisson: float | None = None
    G: float | None = None   # shear modulus [Pa]
    J: float | None = None   # torsion constant [m^4]; default I1+I2
    current: float = 0.0     # electric current [A]
    B0: float = 0.0          # magnetic flux density [T]
    gamma_v: float = 0.0     # viscoelastic coefficient [s]
    T_dim: float = 0.0       # end force [N]
    omega_dim: float = 0.0   # angular velocity [rad/s]
    chi: float = 0.0         # support twist angle [rad]

    def __post_init__(self):
        for name in ("L", "A", "E", "rho", "I1", "I2"):
            if not (getattr(self, name) > 0.0):
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if (self.poisson is None) == (self.G is None):
            raise InvalidParameterError("specify exactly one of poisson or G")
        if self.poisson is not None and not (-1.0 < self.poisson < 0.5):
            raise InvalidParameterError(f"poisson must lie in (-1, 0.5), got {self.poisson}")
        if self.gamma_v < 0.0:
            raise InvalidParameterError(f"gamma_v must be nonnegative, got {self.gamma_v}")

    @property
    def shear_modulus(self) -> float:
        if self.G is not None:
            return self.G
        return self.E / (2.0 * (1.0 + self.poisson))

    @property
    def torsion_constant(self) -> float:
        return self.J if self.J is not None else self.I1 + self.I2


def nondimensionalize(dp: DimensionalParams) -> Params:
    """Map dimensional inputs to the dimensionless parameter set."""
    omega_c = math.sqrt(dp.E * dp.I1 / (dp.rho * dp.A * dp.L**4))
    return Params(
        P=dp.I1 / (dp.A * dp.L**2),
        R=dp.I2 / dp.I1,
        B=dp.B0 * dp.current * dp.L**3 / (dp.E * dp.I1),
        Gamma=2.0 * dp.shear_modulus / dp.E,
        gamma=dp.gamma_v * omega_c,
        omega=dp.omega_dim / omega_c,
        T=dp.T_dim * dp.L**2 / (dp.E * dp.I1),
        chi=dp.chi,
    )


@dataclass(frozen=True)
class FrameState:
    """Director triad; each director holds its {e1,e2,e3} components."""

    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray

    def matrix(self) -> np.ndarray:
        """Rows are the directors, i.e. entry (i, j) = d_i . e_j."""
        return np.stack([np.asarray(self.d1), np.asarray(self.d2), np.asarray(self.d3)])


@dataclass(frozen=True)
class RodState:
    """Pointwise 18-component state of the rod."""

    x: np.ndarray       # centreline position, rotating-frame components
    F: np.ndarray       # force, director components
    M: np.ndarray       # moment, director components
    frame: FrameState

    def to_vector(self) -> np.ndarray:
        u = np.empty(NF)
        u[IDX_F] = self.F
        u[IDX_M] = self.M
        u[IDX_X] = self.x
        u[IDX_D1] = self.frame.d1
        u[IDX_D2] = self.frame.d2
        u[IDX_D3] = self.frame.d3
        return u

    @staticmethod
    def from_vector(u: np.ndarray) -> "RodState":
        u = np.asarray(u, dtype=float)
        return RodState(
            x=u[IDX_X].copy(),
            F=u[IDX_F].copy(),
            M=u[IDX_M].copy(),
            frame=FrameState(u[IDX_D1].copy(), u[IDX_D2].copy(), u[IDX_D3].copy()),
        )


def trivial_fields(p: Params, s: np.ndarray) -> np.ndarray:
    """Straight untwisted rod as field array of shape (18, len(s)).

    x = s e3, F = -T e3 in director components, M = 0, d_i = e_i.  This is an
    exact solution of the quasi-stationary system for every T and omega.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    u = np.zeros((NF, s.size))
    u[2] = -p.T          # F3
    u[8] = s             # z
    u[9] = 1.0           # d1 . e1
    u[13] = 1.0          # d2 . e2
    u[17] = 1.0          # d3 . e3
    return u


def trivial_state(p: Params, s: float) -> RodState:
    """Straight untwisted rod state at arclength ``s``."""
    return RodState.from_vector(trivial_fields(p, np.array([s]))[:, 0])


def orthonormality_defect(f: FrameState) -> float:
    """Max over the six Gram conditions of |d_i . d_j - delta_ij|."""
    D = f.matrix()
    G = D @ D.T
    return float(np.max(np.abs(G - np.eye(3))))


def curvatures_from_moments(M, p: Params):
    """Invert the constitutive law: kappa = (M1, M2/R, 2 M3/(Gamma (1+R)))."""
    M = np.asarray(M, dtype=float)
    out = np.empty_like(M)
    out[0] = M[0]
    out[1] = M[1] / p.R
    out[2] = 2.0 * M[2] / (p.Gamma * (1.0 + p.R))
    return out


def moments_from_curvatures(kappa, p: Params):
    """Constitutive law M = (kappa1, R kappa2, Gamma(1+R)/2 kappa3)."""
    kappa = np.asarray(kappa, dtype=float)
    out = np.empty_like(kappa)
    out[0] = kappa[0]
    out[1] = p.R * kappa[1]
    out[2] = 0.5 * p.Gamma * (1.0 + p.R) * kappa[2]
    return out


def torsional_stiffness(p: Params) -> float:
    """Dimensionless torsional rigidity GJ/(E I1) = Gamma (1+R)/2."""
    return 0.5 * p.Gamma * (1.0 + p.R)


def parse_param_file(text: str) -> Params:
    """Parse a flat ``key=value`` parameter file.

    Unknown keys are rejected.  Blank lines and ``#`` comments are allowed.
    """
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _PARAM_KEYS:
            raise InvalidParameterError(f"line {lineno}: unknown parameter key {key!r}")
        if key in values:
            raise InvalidParameterError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = float(val.strip())
        except ValueError as exc:
            raise InvalidParameterError(f"line {lineno}: bad value for {key}: {val.strip()!r}") from exc
    return Params(**values)


def format_param_file(p: Params | Mapping[str, float]) -> str:
    if isinstance(p, Params):
        p = p.as_dict()
    return "".join(f"{k} = {p[k]:.17g}\n" for k in _PARAM_KEYS)
