"""Hybrid quantum-classical classification of 3D point clouds.

Pipeline: point clouds are normalized and voxelized into binary occupancy
grids; a bank of trainable quantum circuit filters sweeps the grid and
reads out per-qubit expectation values as feature channels; a small dense
head classifies the flattened features.  Training couples cross-entropy
with a fidelity-based penalty that pushes the filters toward diverse
features.  Everything runs on an exact statevector simulator with
reverse-mode gradients; runs are deterministic per seed.
"""

from .circuit import FilterParams, init_filter_params, num_filter_params
from .config import ConfigError, TrainConfig, format_config, load_config_file
from .data import (
    LabeledCloud,
    Mesh,
    load_manifest_dataset,
    parse_off,
    sample_surface,
    synth_dataset,
    train_test_split,
)
from .estimators import QuanvClassifier, QuanvolutionTransformer, VoxelGridTransformer
from .io import (
    load_checkpoint,
    read_feature_tensor,
    read_voxel_grid,
    save_checkpoint,
    write_feature_tensor,
    write_voxel_grid,
)
from .model import DenseHead, ce_loss, inter_feature_distance, rf_loss, total_loss
from .qstate import Gate, Observable, StateVector, expectation_z, fidelity, run_program
from .quanv import QuanvLayer, feature_dims, quanvolve
from .train import (
    Adam,
    Checkpoint,
    MetricsLog,
    evaluate,
    run_lambda_sweep,
    run_scaling_experiment,
    train,
    train_on_grids,
)
from .voxel import PointCloud, VoxelGrid, normalize_bounds, voxelize

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Checkpoint",
    "ConfigError",
    "DenseHead",
    "FilterParams",
    "Gate",
    "LabeledCloud",
    "Mesh",
    "MetricsLog",
    "Observable",
    "PointCloud",
    "QuanvClassifier",
    "QuanvLayer",
    "QuanvolutionTransformer",
    "StateVector",
    "TrainConfig",
    "VoxelGrid",
    "VoxelGridTransformer",
    "ce_loss",
    "evaluate",
    "expectation_z",
    "feature_dims",
    "fidelity",
    "format_config",
    "init_filter_params",
    "inter_feature_distance",
    "load_checkpoint",
    "load_config_file",
    "load_manifest_dataset",
    "normalize_bounds",
    "num_filter_params",
    "parse_off",
    "quanvolve",
    "read_feature_tensor",
    "read_voxel_grid",
    "rf_loss",
    "run_lambda_sweep",
    "run_program",
    "run_scaling_experiment",
    "sample_surface",
    "save_checkpoint",
    "synth_dataset",
    "total_loss",
    "train",
    "train_on_grids",
    "train_test_split",
    "voxelize",
    "write_feature_tensor",
    "write_voxel_grid",
]
