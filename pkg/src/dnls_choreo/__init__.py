"""Choreographies of the discrete nonlinear Schrodinger lattice.

Periodic orbits are computed in the rotating frame by Gauss collocation and
pseudo-arclength continuation, starting from the polygonal relative
equilibrium.  Orbits whose period is commensurate with the frame period are
choreographies in the non-rotating frame.
"""
from .choreography import (build_nonrotating, choreography_residual, classify_orbit,
                           modular_inverse, resonance_admissible, winding_number)
from .collocation import ConstraintSet, RotatingOrbit, newton_solve
from .continuation import (ContinuationSettings, StopAt, continue_branch, detect_resonances,
                           lock_ratio_continue, locate_resonance)
from .errors import (CenterOnCurve, ConfigError, DNLSError, NoBracket, NoConvergence,  # noqa: F401
                     NotCoprime, RatioMismatch, SingularJacobian, StallError)
from .floquet import floquet, integrate_verify, monodromy, multipliers
from .lattice import LatticeParams, hamiltonian, omega_of_a, polygonal_equilibrium
from .spectral import lyapunov_starter, mode_condition, normal_modes

__version__ = "0.1.0"
