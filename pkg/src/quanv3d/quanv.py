"""Sliding-window application of circuit filters over a voxel grid.

Filters of different kernel sizes share one output lattice: window origins
step by ``stride`` from the grid corner, and the number of sites per axis is
``(axis - kernel_max) // stride + 1`` where ``kernel_max`` is the largest
kernel in the layer.  A smaller filter reads the corner-aligned sub-window of
each site, so all filters stay spatially registered with one another.

The output feature tensor has shape ``(M * q, oW, oH, oD)``; filter ``m``
owns the contiguous channel block ``[m*q, (m+1)*q)``, one channel per qubit.
No padding is applied anywhere.

Patches are flattened in C order (slowest axis first) to match
:class:`~quanv3d.circuit.EncodingPatch`.  Work is chunked into fixed-size
blocks of patch rows; worker threads only ever split on those same chunk
boundaries, so threaded and single-threaded runs reduce in the same order
and produce bit-identical features.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .circuit import FilterParams, filter_batch_backward, run_filter_batch
from .voxel import VoxelGrid

__all__ = [
    "GridShapeError",
    "QuanvLayer",
    "feature_dims",
    "extract_patches",
    "quanvolve",
    "quanvolve_backward",
]

ALLOWED_KERNEL_SIZES = (2, 3, 4)

#: patch rows processed per unit of work; fixed so that chunk boundaries (and
#: therefore floating-point reduction order) never depend on the thread count
CHUNK_ROWS = 4096


class GridShapeError(ValueError):
    """A grid too small for the layer's largest kernel, or mismatched shapes."""


@dataclass(frozen=True)
class QuanvLayer:
    """A bank of circuit filters swept together over a grid."""

    filters: Tuple[FilterParams, ...]
    stride: int = 2

    def __post_init__(self):
        filters = tuple(self.filters)
        if not filters:
            raise ValueError("a layer needs at least one filter")
        for f in filters:
            if f.kernel_size not in ALLOWED_KERNEL_SIZES:
                raise ValueError(
                    f"kernel size {f.kernel_size} unsupported; "
                    f"choose from {ALLOWED_KERNEL_SIZES}"
                )
        qs = {f.num_qubits for f in filters}
        if len(qs) > 1:
            raise ValueError(f"filters disagree on qubit count: {sorted(qs)}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "filters", filters)

    @property
    def num_filters(self) -> int:
        return len(self.filters)

    @property
    def num_qubits(self) -> int:
        return self.filters[0].num_qubits

    @property
    def kernel_max(self) -> int:
        return max(f.kernel_size for f in self.filters)

    @property
    def num_channels(self) -> int:
        return self.num_filters * self.num_qubits

    def replace_filters(self, filters: Sequence[FilterParams]) -> "QuanvLayer":
        return QuanvLayer(tuple(filters), self.stride)


def feature_dims(grid_dims: Tuple[int, int, int], layer: QuanvLayer) -> Tuple[int, int, int]:
    """Output lattice shape ``(axis - kernel_max) // stride + 1`` per axis."""
    k = layer.kernel_max
    if any(d < k for d in grid_dims):
        raise GridShapeError(
            f"grid dims {tuple(grid_dims)} smaller than largest kernel {k}"
        )
    return tuple((d - k) // layer.stride + 1 for d in grid_dims)


def extract_patches(occupancy: np.ndarray, kernel_size: int, stride: int,
                    out_dims: Tuple[int, int, int]) -> np.ndarray:
    """All windows as a ``(num_sites, kernel_size**3)`` float array.

    Sites are ordered C-style over the output lattice (w slowest); each
    window is likewise flattened C-style.
    """
    windows = np.lib.stride_tricks.sliding_window_view(
        occupancy, (kernel_size,) * 3
    )
    strided = windows[::stride, ::stride, ::stride]
    strided = strided[: out_dims[0], : out_dims[1], : out_dims[2]]
    return strided.reshape(-1, kernel_size**3).astype(np.float64)


def _chunk_ranges(total: int) -> List[Tuple[int, int]]:
    return [(s, min(s + CHUNK_ROWS, total)) for s in range(0, total, CHUNK_ROWS)]


def _run_chunked(patches: np.ndarray, params: FilterParams, want_states: bool,
                 threads: int):
    batch = patches.shape[0]
    obs = np.empty((batch, params.num_qubits), dtype=np.float64)
    states = (
        np.empty((batch, 2**params.num_qubits), dtype=np.complex128)
        if want_states else None
    )

    def work(rng: Tuple[int, int]) -> None:
        s, e = rng
        if want_states:
            o, st = run_filter_batch(patches[s:e], params, return_states=True)
            states[s:e] = st
        else:
            o = run_filter_batch(patches[s:e], params)
        obs[s:e] = o

    ranges = _chunk_ranges(batch)
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, ranges))
    else:
        for r in ranges:
            work(r)
    return (obs, states) if want_states else obs


def _backward_chunked(patches: np.ndarray, params: FilterParams,
                      states: np.ndarray, cotangents: np.ndarray,
                      threads: int) -> np.ndarray:
    ranges = _chunk_ranges(patches.shape[0])

    def work(rng: Tuple[int, int]) -> np.ndarray:
        s, e = rng
        return filter_batch_backward(patches[s:e], params, states[s:e],
                                     cotangents[s:e])

    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, ranges))
    else:
        parts = [work(r) for r in ranges]
    # summed in fixed chunk order regardless of thread count
    total = np.zeros_like(params.values)
    for p in parts:
        total += p
    return total


def quanvolve(grid: VoxelGrid, layer: QuanvLayer, *, threads: int = 1,
              return_states: bool = False):
    """Sweep every filter over the grid.

    Returns the ``(M*q, oW, oH, oD)`` feature tensor; with ``return_states``
    also a list of M ``(num_sites, 2**q)`` final-state arrays (needed by the
    feature-diversity loss and the backward pass).
    """
    out_dims = feature_dims(grid.dims, layer)
    q = layer.num_qubits
    num_sites = int(np.prod(out_dims))
    features = np.empty((layer.num_channels,) + out_dims, dtype=np.float64)
    all_states: List[np.ndarray] = []
    occ = grid.occupancy
    for m, params in enumerate(layer.filters):
        patches = extract_patches(occ, params.kernel_size, layer.stride, out_dims)
        if return_states:
            obs, states = _run_chunked(patches, params, True, threads)
            all_states.append(states)
        else:
            obs = _run_chunked(patches, params, False, threads)
        block = obs.T.reshape((q,) + out_dims)
        features[m * q:(m + 1) * q] = block
    if return_states:
        return features, all_states
    return features


def quanvolve_backward(grid: VoxelGrid, layer: QuanvLayer, upstream: np.ndarray,
                       *, states: Optional[List[np.ndarray]] = None,
                       threads: int = 1) -> List[np.ndarray]:
    """Gradients of ``sum(upstream * features)`` for each filter's parameters.

    ``upstream`` must match the feature tensor shape.  Passing the ``states``
    captured by :func:`quanvolve` skips the forward recomputation.
    """
    from .qstate import _z_signs

    out_dims = feature_dims(grid.dims, layer)
    q = layer.num_qubits
    want_shape = (layer.num_channels,) + out_dims
    if upstream.shape != want_shape:
        raise GridShapeError(
            f"upstream shape {upstream.shape} does not match features {want_shape}"
        )
    signs = _z_signs(q)
    grads: List[np.ndarray] = []
    occ = grid.occupancy
    for m, params in enumerate(layer.filters):
        patches = extract_patches(occ, params.kernel_size, layer.stride, out_dims)
        if states is not None:
            st = states[m]
        else:
            _, st = _run_chunked(patches, params, True, threads)
        u = upstream[m * q:(m + 1) * q].reshape(q, -1).T  # (num_sites, q)
        cot = (u @ signs) * st
        grads.append(_backward_chunked(patches, params, st, cot, threads))
    return grads
