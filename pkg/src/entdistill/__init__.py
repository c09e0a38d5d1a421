"""Interferometric distillation and concurrence determination for two-qubit states."""

from entdistill.detection import (
    concurrence_from_visibilities,
    cross_correlation,
    decompose_q,
    lorentz_singular_values,
    q_matrix,
    visibilities,
)
from entdistill.optics import LocalOp, apply_local, distill, erase_marginal
from entdistill.qstate import (
    fixture,
    from_r_matrix,
    marginal,
    random_state,
    to_r_matrix,
    wootters_concurrence,
)

__all__ = [
    "LocalOp",
    "apply_local",
    "concurrence_from_visibilities",
    "cross_correlation",
    "decompose_q",
    "distill",
    "erase_marginal",
    "fixture",
    "from_r_matrix",
    "lorentz_singular_values",
    "marginal",
    "q_matrix",
    "random_state",
    "to_r_matrix",
    "visibilities",
    "wootters_concurrence",
]

__version__ = "0.1.0"
