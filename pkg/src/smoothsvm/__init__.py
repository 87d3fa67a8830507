"""Debiased inference for the convolution-smoothed l1-penalised SVM,
offline and on streaming batches."""

__version__ = "0.1.0"

from .estimators import OnlineSmoothedSVMInference, SmoothedSVMInference  # noqa: E402
from .exceptions import (  # noqa: E402
    ChecksumError,
    ConvergenceError,
    DimensionError,
    InfeasibleError,
    InvalidArgumentError,
    NumericalError,
    ParseError,
    SmoothSVMError,
    StateFormatError,
    TruncationError,
    VersionMismatchError,
)
from .offline import InferenceConfig, InferenceResult, run_offline  # noqa: E402
from .online import OnlineState, init_state, update_batch  # noqa: E402
from .smoothing import Dataset, default_bandwidth, smoothed_hinge  # noqa: E402

__all__ = [
    "ChecksumError",
    "ConvergenceError",
    "Dataset",
    "DimensionError",
    "InferenceConfig",
    "InferenceResult",
    "InfeasibleError",
    "InvalidArgumentError",
    "NumericalError",
    "OnlineSmoothedSVMInference",
    "OnlineState",
    "ParseError",
    "SmoothSVMError",
    "SmoothedSVMInference",
    "StateFormatError",
    "TruncationError",
    "VersionMismatchError",
    "default_bandwidth",
    "init_state",
    "run_offline",
    "smoothed_hinge",
    "update_batch",
]
