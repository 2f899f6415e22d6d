"""rodforge: equilibria, bifurcations and stability of a current-carrying
whirling elastic rod in a uniform axial magnetic field.

Subpackages by role:

* ``core``         parameters, state layout, straight-rod state
* ``oracle``       closed-form buckling loads, spectra and helices
* ``collocation``  generic collocated BVP machinery (Newton, det-sign)
* ``stationary``   the 18-equation quasi-stationary whirl BVP
* ``linearized``   the 12-complex-equation perturbation system
* ``eigentrace``   eigenvalue scanning, growing and parameter tracing
* ``continuation`` branch continuation, branch switching, event loci
* ``cli``          command-line front end
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ConvergenceError,
    DimensionalParams,
    InvalidParameterError,
    Params,
    RodforgeError,
    RodState,
    FrameState,
    SingularRadiusError,
    SingularSystemError,
    curvatures_from_moments,
    nondimensionalize,
    orthonormality_defect,
    trivial_state,
)
