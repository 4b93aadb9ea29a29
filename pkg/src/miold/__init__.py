"""Input-output linearization and decoupling of mechanical control systems.

The pipeline: describe a system (``model``), compute relative half-degrees
and the MR1/MR2 conditions (``geometry``), build the mechanical
transformation and feedback (``synthesis``), and check the closed loop by
simulation (``sim``).
"""

from .model import LagrangianSpec, MechanicalSystem, load_system
from .geometry import Point, check_mf_linearizable, full_relative_degree, half_degree
from .synthesis import (
    FeedbackLaw, NormalFormDescription, SynthesisError, closed_loop_system, flatness_remark,
    normal_form_system, synthesize,
)
from .sim import closed_loop_run, decoupling_certificate, integrate

__version__ = "0.1.0"

__all__ = [
    "LagrangianSpec", "MechanicalSystem", "load_system", "Point", "check_mf_linearizable",
    "full_relative_degree", "half_degree", "FeedbackLaw", "NormalFormDescription",
    "SynthesisError", "closed_loop_system", "flatness_remark", "normal_form_system",
    "synthesize", "closed_loop_run", "decoupling_certificate", "integrate",
]
