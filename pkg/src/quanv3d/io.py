"""Binary artifact formats: grid dumps, feature dumps, checkpoints.

All multi-byte integers and floats are little-endian; see FORMATS.md at the
repository root for the byte-exact layout of each file.

* grid dump: three uint32 dims then one occupancy byte per voxel, first
  axis slowest (C order).
* feature dump: four uint32 (channels, oW, oH, oD) then float64 values in
  C order.
* checkpoint: a NumPy ``.npz`` archive with a format-version marker, the
  training config as JSON, per-filter parameter vectors, the head weights,
  and the class names.  Loading rejects unknown versions.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .circuit import FilterParams
from .model import DenseHead
from .voxel import VoxelGrid

__all__ = [
    "FormatError",
    "CHECKPOINT_VERSION",
    "write_voxel_grid",
    "read_voxel_grid",
    "write_feature_tensor",
    "read_feature_tensor",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1

_GRID_HEADER = struct.Struct("<3I")
_FEATURE_HEADER = struct.Struct("<4I")


class FormatError(ValueError):
    """A file does not match its documented byte layout."""


def write_voxel_grid(path: Union[str, Path], grid: VoxelGrid) -> None:
    occ = grid.occupancy
    with Path(path).open("wb") as fh:
        fh.write(_GRID_HEADER.pack(*occ.shape))
        fh.write(occ.tobytes(order="C"))


def read_voxel_grid(path: Union[str, Path]) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _GRID_HEADER.size:
        raise FormatError(f"{path}: too short for a grid header")
    dims = _GRID_HEADER.unpack_from(raw)
    want = dims[0] * dims[1] * dims[2]
    body = raw[_GRID_HEADER.size:]
    if len(body) != want:
        raise FormatError(
            f"{path}: header promises {want} voxels, found {len(body)} bytes"
        )
    occ = np.frombuffer(body, dtype=np.uint8).reshape(dims)
    return VoxelGrid(occ)


def write_feature_tensor(path: Union[str, Path], features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f8")
    if feats.ndim != 4:
        raise FormatError(f"feature tensor must be 4-D, got shape {feats.shape}")
    with Path(path).open("wb") as fh:
        fh.write(_FEATURE_HEADER.pack(*feats.shape))
        fh.write(feats.tobytes(order="C"))


def read_feature_tensor(path: Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise FormatError(f"{path}: too short for a feature header")
    shape = _FEATURE_HEADER.unpack_from(raw)
    want = int(np.prod(shape)) * 8
    body = raw[_FEATURE_HEADER.size:]
    if len(body) != want:
        raise FormatError(
            f"{path}: header promises {want} bytes of values, found {len(body)}"
        )
    return np.frombuffer(body, dtype="<f8").reshape(shape).copy()


def save_checkpoint(path: Union[str, Path], checkpoint) -> None:
    """Write a :class:`~quanv3d.train.Checkpoint`; round-trips bit-exactly."""
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "config_json": np.array(checkpoint.config.to_json()),
        "class_names": np.array(list(checkpoint.class_names)),
        "head_w1": checkpoint.head.w1,
        "head_b1": checkpoint.head.b1,
        "head_w2": checkpoint.head.w2,
        "head_b2": checkpoint.head.b2,
    }
    for i, fp in enumerate(checkpoint.filters):
        arrays[f"filter_{i}"] = fp.values
    np.savez(path, **arrays)


def load_checkpoint(path: Union[str, Path]):
    """Read a checkpoint written by :func:`save_checkpoint`."""
    from .config import TrainConfig
    from .train import Checkpoint

    try:
        with np.load(path, allow_pickle=False) as archive:
            data = {key: archive[key] for key in archive.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a readable checkpoint ({exc})") from None
    if "format_version" not in data:
        raise FormatError(f"{path}: missing format version marker")
    version = int(data["format_version"])
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: checkpoint version {version} unsupported "
            f"(this build reads version {CHECKPOINT_VERSION})"
        )
    config = TrainConfig.from_json(str(data["config_json"]))
    config = config.normalized()
    filters = []
    for i, kernel in enumerate(config.kernel_sizes):
        key = f"filter_{i}"
        if key not in data:
            raise FormatError(f"{path}: missing parameters for filter {i}")
        filters.append(FilterParams(data[key], kernel, config.num_qubits))
    head = DenseHead(data["head_w1"], data["head_b1"], data["head_w2"], data["head_b2"])
    class_names = tuple(str(c) for c in data["class_names"])
    return Checkpoint(filters=tuple(filters), head=head, config=config,
                      class_names=class_names)
