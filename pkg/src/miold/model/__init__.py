"""Mechanical control systems, their construction from Lagrangians, transformations and files."""

from .system import MechanicalSystem, ValidationError, quadratic_form, tangent_lift, velocity_name
from .lagrange import LagrangianSpec, from_lagrangian
from .transform import (
    MechanicalTransformation, NotInvertibleError, apply_feedback, apply_transformation,
    invert_map, jacobian, pushforward, pushforward_frame,
)
from .files import (
    SystemFile, SystemFileError, corpus_dir, corpus_names, load_system, loads_system, parse_point,
)

__all__ = [
    "MechanicalSystem", "ValidationError", "quadratic_form", "tangent_lift", "velocity_name",
    "LagrangianSpec", "from_lagrangian", "MechanicalTransformation", "NotInvertibleError",
    "apply_feedback", "apply_transformation", "invert_map", "jacobian", "pushforward",
    "pushforward_frame", "SystemFile", "SystemFileError", "corpus_dir", "corpus_names",
    "load_system", "loads_system", "parse_point",
]
