"""Trainable data-reuploading filter circuits.

A filter maps a binary patch of ``kernel_size**3`` voxels to ``num_qubits``
Pauli-Z expectations.  The patch is too long to encode in one pass, so it is
split into ``num_qubits``-sized slices that are uploaded one block at a time:

    block l:  RY(pi * x[l*q + i]) on qubit i        (encoding slice l)
              ROT(phi, theta, omega) on every qubit  (trainable)
              CRY ring: control i -> target (i+1) % q (trainable)

followed by one extra trainable layer after the last slice.  Slices that run
past the end of the patch are padded with zeros (an RY(0) identity).  With
``ceil(kernel_size**3 / num_qubits)`` upload blocks plus the final layer,
the parameter count is ``(blocks + 1) * 4 * num_qubits`` — e.g. 48 for a
2x2x2 patch on four qubits.

Parameter layout (the only place it is defined): layer ``l`` occupies the
contiguous range ``[l*4q, (l+1)*4q)``; within a layer the first ``3q`` values
are the per-qubit ROT angles ``(phi, theta, omega)`` in qubit order and the
last ``q`` are the CRY ring angles in control order.

Two execution paths exist on purpose: :func:`run_filter` builds an explicit
gate program and runs it one state at a time (the auditable reference), while
:func:`run_filter_batch` drives the same layout over a whole (B, 2**q)
amplitude array at once and is what the convolution layer actually calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple, Union

import numpy as np

from .qstate import (
    Gate,
    GateKind,
    StateVector,
    _all_expectations,
    _apply_gate_inplace,
    _apply_ry_rows_inplace,
    _deriv_apply,
    _z_signs,
    apply_gate,
)

__all__ = [
    "LayoutError",
    "EncodingPatch",
    "FilterParams",
    "num_filter_params",
    "init_filter_params",
    "build_filter_program",
    "run_filter",
    "run_filter_batch",
    "filter_batch_backward",
]

PARAM_INIT_SCALE = math.pi / 8


class LayoutError(ValueError):
    """A parameter vector does not match the layout implied by its filter."""


@dataclass(frozen=True)
class EncodingPatch:
    """A flattened binary voxel patch of ``kernel_size**3`` values."""

    values: np.ndarray
    kernel_size: int

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        want = self.kernel_size**3
        if vals.shape != (want,):
            raise LayoutError(
                f"patch for kernel size {self.kernel_size} needs {want} values, "
                f"got shape {vals.shape}"
            )
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise LayoutError("patch values must be exactly 0 or 1")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def _num_blocks(kernel_size: int, num_qubits: int) -> int:
    return math.ceil(kernel_size**3 / num_qubits)


def num_filter_params(kernel_size: int, num_qubits: int) -> int:
    """Trainable parameter count: ``(upload blocks + 1) * 4 * num_qubits``."""
    return (_num_blocks(kernel_size, num_qubits) + 1) * 4 * num_qubits


@dataclass(frozen=True)
class FilterParams:
    """A filter's trainable parameter vector plus the shape that defines it."""

    values: np.ndarray
    kernel_size: int
    num_qubits: int = 4

    def __post_init__(self):
        # private copy: callers keep mutable ownership of their array
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if self.kernel_size < 1:
            raise LayoutError(f"kernel size must be >= 1, got {self.kernel_size}")
        if self.num_qubits < 1:
            raise LayoutError(f"need at least one qubit, got {self.num_qubits}")
        want = num_filter_params(self.kernel_size, self.num_qubits)
        if vals.shape != (want,):
            raise LayoutError(
                f"kernel size {self.kernel_size} on {self.num_qubits} qubit(s) "
                f"takes {want} parameters, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise LayoutError("filter parameters must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def num_blocks(self) -> int:
        return _num_blocks(self.kernel_size, self.num_qubits)

    @property
    def num_layers(self) -> int:
        return self.num_blocks + 1

    def rot_slot(self, layer: int, qubit: int, angle: int) -> int:
        """Flat index of ROT angle ``angle`` (0=phi, 1=theta, 2=omega)."""
        q = self.num_qubits
        return layer * 4 * q + 3 * qubit + angle

    def cry_slot(self, layer: int, control: int) -> int:
        """Flat index of the CRY angle whose control is ``control``."""
        q = self.num_qubits
        return layer * 4 * q + 3 * q + control

    def replace_values(self, values: np.ndarray) -> "FilterParams":
        return FilterParams(values, self.kernel_size, self.num_qubits)


def init_filter_params(kernel_size: int, num_qubits: int,
                       rng: np.random.Generator) -> FilterParams:
    """Fresh parameters drawn uniformly from [-pi/8, pi/8]."""
    n = num_filter_params(kernel_size, num_qubits)
    values = rng.uniform(-PARAM_INIT_SCALE, PARAM_INIT_SCALE, size=n)
    return FilterParams(values, kernel_size, num_qubits)


# ---------------------------------------------------------------------------
# program template
#
# Steps are ("enc", qubit, feature) for an encoding RY (feature == -1 means a
# zero pad) or ("gate", Gate) for a trainable gate with bound slots.  Both the
# reference and the batched paths walk this same list.

_Step = Union[Tuple[str, int, int], Tuple[str, Gate]]


@lru_cache(maxsize=None)
def _template(kernel_size: int, num_qubits: int) -> List[_Step]:
    q = num_qubits
    patch_len = kernel_size**3
    probe = FilterParams(np.zeros(num_filter_params(kernel_size, q)), kernel_size, q)
    steps: List[_Step] = []

    def trainable_layer(layer: int) -> None:
        for i in range(q):
            slots = tuple(probe.rot_slot(layer, i, a) for a in range(3))
            steps.append(("gate", Gate(GateKind.ROT, i, None, (0.0, 0.0, 0.0), slots)))
        if q >= 2:
            for i in range(q):
                slot = probe.cry_slot(layer, i)
                steps.append(
                    ("gate", Gate(GateKind.CRY, (i + 1) % q, i, (0.0,), (slot,)))
                )

    for block in range(probe.num_blocks):
        for i in range(q):
            feature = block * q + i
            steps.append(("enc", i, feature if feature < patch_len else -1))
        trainable_layer(block)
    trainable_layer(probe.num_blocks)
    return steps


def build_filter_program(patch: EncodingPatch, params: FilterParams) -> List[Gate]:
    """The filter as an explicit bound gate list (encoding angles included)."""
    if patch.kernel_size != params.kernel_size:
        raise LayoutError(
            f"patch kernel size {patch.kernel_size} does not match "
            f"filter kernel size {params.kernel_size}"
        )
    program: List[Gate] = []
    for step in _template(params.kernel_size, params.num_qubits):
        if step[0] == "enc":
            _, qubit, feature = step
            x = patch.values[feature] if feature >= 0 else 0.0
            program.append(Gate(GateKind.RY, qubit, None, (math.pi * x,)))
        else:
            program.append(step[1].bind(params.values))
    return program


def run_filter(patch: EncodingPatch, params: FilterParams) -> np.ndarray:
    """Reference single-patch execution; returns the q Pauli-Z expectations."""
    program = build_filter_program(patch, params)
    state = StateVector.zero(params.num_qubits)
    for gate in program:
        state = apply_gate(state, gate)
    probs = np.abs(state.amplitudes) ** 2
    return probs @ _z_signs(params.num_qubits).T


# ---------------------------------------------------------------------------
# batched execution


def _check_patch_array(patches: np.ndarray, kernel_size: int) -> np.ndarray:
    patches = np.ascontiguousarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[1] != kernel_size**3:
        raise LayoutError(
            f"expected patch array of shape (B, {kernel_size**3}), "
            f"got {patches.shape}"
        )
    return patches


def run_filter_batch(patches: np.ndarray, params: FilterParams,
                     return_states: bool = False):
    """Run the filter over B patches at once.

    ``patches`` is (B, kernel_size**3) with 0/1 entries.  Returns the (B, q)
    expectation array, plus the final (B, 2**q) states when
    ``return_states`` is set (the diversity loss and the backward pass both
    need them).
    """
    patches = _check_patch_array(patches, params.kernel_size)
    q = params.num_qubits
    batch = patches.shape[0]
    amps = np.zeros((batch, 2**q), dtype=np.complex128)
    amps[:, 0] = 1.0
    for step in _template(params.kernel_size, q):
        if step[0] == "enc":
            _, qubit, feature = step
            if feature < 0:
                continue  # zero pad: RY(0) is the identity
            _apply_ry_rows_inplace(amps, 0.5 * math.pi * patches[:, feature], qubit)
        else:
            gate = step[1]
            angles = gate.resolved_angles(params.values)
            _apply_gate_inplace(amps, gate.kind, angles, gate.target, gate.control)
    obs = _all_expectations(amps, q)
    if return_states:
        return obs, amps
    return obs


def filter_batch_backward(patches: np.ndarray, params: FilterParams,
                          final_states: np.ndarray,
                          cotangents: np.ndarray) -> np.ndarray:
    """Pull a loss cotangent back through the filter onto its parameters.

    ``final_states`` must be the (B, 2**q) output of :func:`run_filter_batch`
    for the same patches, and ``cotangents`` the (B, 2**q) array w with
    dL = 2 Re <w_b, d psi_b> summed over the batch.  Returns dL/dparams.
    The walk is the adjoint one: states are recovered by unapplying gates,
    so nothing beyond the two (B, 2**q) buffers is held in memory.
    """
    patches = _check_patch_array(patches, params.kernel_size)
    if final_states.shape != cotangents.shape:
        raise LayoutError("final_states and cotangents must have the same shape")
    amps = final_states.copy()
    cot = np.ascontiguousarray(cotangents, dtype=np.complex128).copy()
    grads = np.zeros_like(params.values)
    for step in reversed(_template(params.kernel_size, params.num_qubits)):
        if step[0] == "enc":
            _, qubit, feature = step
            if feature < 0:
                continue
            half = -0.5 * math.pi * patches[:, feature]
            _apply_ry_rows_inplace(amps, half, qubit)
            _apply_ry_rows_inplace(cot, half, qubit)
        else:
            gate = step[1]
            angles = gate.resolved_angles(params.values)
            _apply_gate_inplace(amps, gate.kind, angles, gate.target, gate.control,
                                adjoint=True)
            for which, slot in enumerate(gate.slots):
                if slot is None:
                    continue
                shifted = _deriv_apply(amps, gate.kind, angles, which,
                                       gate.target, gate.control)
                grads[slot] += 2.0 * float(np.real(np.vdot(cot, shifted)))
            _apply_gate_inplace(cot, gate.kind, angles, gate.target, gate.control,
                                adjoint=True)
    return grads
