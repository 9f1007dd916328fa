"""
deepfpc: 1-bit compressed sensing with fixed point continuation.

Provides the FPC-l1/FPC-l2 solvers, their unfolded DeepFPC networks with
a batched forward pass and hand-written backward pass, ADAM training,
and the noise experiments built on top of them.
"""

from .errors import (
    DeepFpcError,
    InvalidArgument,
    InvalidState,
    FormatError,
    UsageError,
    ShrinkageCollapse,
    ZeroOutput,
    Divergence,
)
from .operators import Threshold, soft_threshold, sign, relu
from .signals import (
    Stream,
    NoiseKind,
    NoiseSpec,
    SparseSignal,
    SignalBatch,
    MeasurementBatch,
    Dataset,
    draw_sensing_matrix,
    generate_signals,
    measure,
    make_dataset,
    add_gaussian_noise,
    flip_signs,
    apply_noise,
    nmse_db,
    mean_nmse_db,
)
from .solvers import Variant, FpcConfig, FpcTrace, fpc_solve, fpc_solve_batch
from .network import (
    LayerParams,
    UnfoldedModel,
    ExtendedBatch,
    init_model,
    forward_batched,
    forward_single,
    forward_readouts,
    build_extended,
    backward,
)
from .training import TrainConfig, AdamState, TrainHistory, train, evaluate_model
from .formats import read_dataset, write_dataset, read_model, write_model
from .experiments import (
    ExperimentConfig,
    ExperimentResult,
    run_table1,
    run_snr_sweep,
    run_flip_sweep,
    run_algorithm_noise_comparison,
    calibrate_fpc,
)

__version__ = "0.1.0"
__all__ = [
    "DeepFpcError",
    "InvalidArgument",
    "InvalidState",
    "FormatError",
    "UsageError",
    "ShrinkageCollapse",
    "ZeroOutput",
    "Divergence",
    "Threshold",
    "soft_threshold",
    "sign",
    "relu",
    "Stream",
    "NoiseKind",
    "NoiseSpec",
    "SparseSignal",
    "SignalBatch",
    "MeasurementBatch",
    "Dataset",
    "draw_sensing_matrix",
    "generate_signals",
    "measure",
    "make_dataset",
    "add_gaussian_noise",
    "flip_signs",
    "apply_noise",
    "nmse_db",
    "mean_nmse_db",
    "Variant",
    "FpcConfig",
    "FpcTrace",
    "fpc_solve",
    "fpc_solve_batch",
    "LayerParams",
    "UnfoldedModel",
    "ExtendedBatch",
    "init_model",
    "forward_batched",
    "forward_single",
    "forward_readouts",
    "build_extended",
    "backward",
    "TrainConfig",
    "AdamState",
    "TrainHistory",
    "train",
    "evaluate_model",
    "read_dataset",
    "write_dataset",
    "read_model",
    "write_model",
    "ExperimentConfig",
    "ExperimentResult",
    "run_table1",
    "run_snr_sweep",
    "run_flip_sweep",
    "run_algorithm_noise_comparison",
    "calibrate_fpc",
]
