"""Brain graph super-resolution with dual-graph edge learning.

Submodules: ``autodiff`` (tape-based gradients), ``graphs`` (connectome and
dual/line-graph machinery), ``layers`` (graph transformer block), ``models``
(STP-GSR and baselines), ``training`` (Adam + cross-validation), ``metrics``
(weighted topology measures), ``data`` (datasets, checkpoints, reports) and
``cli`` (command-line entry point).
"""

from .errors import (
    ConvergenceError,
    DomainError,
    ShapeError,
    TrainingDiverged,
    ValidationError,
)
from .graphs import (
    DualTopology,
    build_dual_complete,
    build_dual_directed,
    build_dual_undirected,
    devectorize,
    dual_index,
    line_graph_bruteforce,
    upper_tri_vectorize,
    validate_connectome,
)
from .models import AutoencoderModel, DirectSrModel, StpGsrModel, build_model
from .training import TrainConfig, cross_validate, kfold_split, train

__version__ = "0.1.0"

__all__ = [
    "AutoencoderModel",
    "ConvergenceError",
    "DirectSrModel",
    "DomainError",
    "DualTopology",
    "ShapeError",
    "StpGsrModel",
    "TrainConfig",
    "TrainingDiverged",
    "ValidationError",
    "build_dual_complete",
    "build_dual_directed",
    "build_dual_undirected",
    "build_model",
    "cross_validate",
    "devectorize",
    "dual_index",
    "kfold_split",
    "line_graph_bruteforce",
    "train",
    "upper_tri_vectorize",
    "validate_connectome",
    "__version__",
]
