"""Exact dense statevector simulation for small qubit registers.

A register of ``q`` qubits is a complex vector of ``2**q`` amplitudes
(``complex128`` throughout).  Nothing here is approximate or sampled: gates
are applied as exact matrix arithmetic, which is what makes the simulator
usable as a differentiable layer inside a classical training loop.

Bit convention
--------------
Qubit ``i`` corresponds to bit ``i`` of the basis-state index (little-endian):
amplitude ``k`` belongs to the basis state whose qubit-``i`` value is
``(k >> i) & 1``.  In ket labels written ``|q0 q1 ... >`` the *leftmost*
character is qubit 0, so for two qubits ``|10>`` (qubit 0 set) is amplitude
index 1 and ``|01>`` (qubit 1 set) is amplitude index 2.  Qubit indices are
0-based everywhere in this package.

Gate set
--------
``RX``, ``RY``, ``RZ`` are the usual half-angle rotations, e.g.::

    RY(t) = [[cos(t/2), -sin(t/2)],
             [sin(t/2),  cos(t/2)]]

``ROT(phi, theta, omega) = RZ(omega) @ RY(theta) @ RZ(phi)`` is the general
Euler rotation, ``CRY`` a controlled RY, and ``CNOT`` a controlled X.

Gradients
---------
``backprop_expectation`` and ``backprop_fidelity`` differentiate a gate
program with respect to its bound parameters using reverse-mode (adjoint)
accumulation: the program is unapplied gate by gate, so memory stays constant
in circuit depth instead of growing linearly with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "InvalidQubitError",
    "StateShapeError",
    "UnboundParameterError",
    "UnsupportedGradientError",
    "GateKind",
    "Gate",
    "Observable",
    "StateVector",
    "gate_unitary",
    "apply_gate",
    "run_program",
    "expectation_z",
    "fidelity",
    "backprop_expectation",
    "backprop_fidelity",
]


class InvalidQubitError(ValueError):
    """A gate or observable references a qubit outside the register."""


class StateShapeError(ValueError):
    """Two states (or a state and an operator) have incompatible dimensions."""


class UnboundParameterError(ValueError):
    """A gate with open parameter slots was used where angles are required."""


class UnsupportedGradientError(ValueError):
    """A parameter slot sits on a gate kind with no differentiation rule."""


class GateKind(Enum):
    RX = "rx"
    RY = "ry"
    RZ = "rz"
    ROT = "rot"
    CRY = "cry"
    CNOT = "cnot"


#: number of angle parameters each gate kind takes
NUM_ANGLES = {
    GateKind.RX: 1,
    GateKind.RY: 1,
    GateKind.RZ: 1,
    GateKind.ROT: 3,
    GateKind.CRY: 1,
    GateKind.CNOT: 0,
}

_CONTROLLED = frozenset({GateKind.CRY, GateKind.CNOT})


@dataclass(frozen=True)
class Gate:
    """One gate in a program.

    ``angles`` holds concrete values; ``slots`` (same length, entries either
    ``None`` or an index into a parameter vector) marks which angles are
    trainable.  A slotted angle is resolved by :meth:`bind`; its stored value
    is ignored until then.
    """

    kind: GateKind
    target: int
    control: Optional[int] = None
    angles: tuple = ()
    slots: tuple = ()

    def __post_init__(self):
        want = NUM_ANGLES[self.kind]
        if len(self.angles) != want:
            raise ValueError(
                f"{self.kind.value} takes {want} angle(s), got {len(self.angles)}"
            )
        if self.slots and len(self.slots) != want:
            raise ValueError(
                f"slots must be empty or match angle count {want}, got {len(self.slots)}"
            )
        if self.kind in _CONTROLLED:
            if self.control is None:
                raise ValueError(f"{self.kind.value} requires a control qubit")
            if self.control == self.target:
                raise ValueError("control and target must differ")
        elif self.control is not None:
            raise ValueError(f"{self.kind.value} does not take a control qubit")

    @property
    def is_parameterized(self) -> bool:
        return any(s is not None for s in self.slots)

    def resolved_angles(self, params: Optional[np.ndarray]) -> tuple:
        """Angles with every slot replaced by its entry of ``params``."""
        if not self.is_parameterized:
            return self.angles
        if params is None:
            raise UnboundParameterError(
                f"{self.kind.value} gate has open parameter slots and no params given"
            )
        return tuple(
            params[s] if s is not None else a for a, s in zip(self.angles, self.slots)
        )

    def bind(self, params: np.ndarray) -> "Gate":
        """Return a copy with all slots resolved to concrete angles."""
        return Gate(self.kind, self.target, self.control,
                    self.resolved_angles(params), ())


@dataclass(frozen=True)
class Observable:
    """Pauli-Z measurement on a single qubit (0-based index)."""

    qubit: int

    def __post_init__(self):
        if self.qubit < 0:
            raise InvalidQubitError(f"qubit index must be >= 0, got {self.qubit}")


@dataclass(frozen=True)
class StateVector:
    """An exact ``2**num_qubits`` amplitude vector.

    Treated as immutable: the wrapped array is marked read-only, and every
    operation returns a fresh instance.
    """

    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        amps = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if self.num_qubits < 1:
            raise StateShapeError(f"need at least one qubit, got {self.num_qubits}")
        if amps.shape != (2**self.num_qubits,):
            raise StateShapeError(
                f"expected {2**self.num_qubits} amplitudes for "
                f"{self.num_qubits} qubit(s), got shape {amps.shape}"
            )
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, num_qubits: int) -> "StateVector":
        """The all-zeros computational basis state ``|0...0>``."""
        amps = np.zeros(2**num_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(amps, num_qubits)

    @classmethod
    def basis(cls, num_qubits: int, index: int) -> "StateVector":
        """Computational basis state with amplitude 1 at ``index``."""
        if not 0 <= index < 2**num_qubits:
            raise StateShapeError(f"basis index {index} out of range")
        amps = np.zeros(2**num_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(amps, num_qubits)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


# ---------------------------------------------------------------------------
# gate matrices


def _rz(angle: float) -> np.ndarray:
    half = 0.5 * angle
    return np.array(
        [[np.exp(-1j * half), 0.0], [0.0, np.exp(1j * half)]], dtype=np.complex128
    )


def _ry(angle: float) -> np.ndarray:
    half = 0.5 * angle
    c, s = math.cos(half), math.sin(half)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def _rx(angle: float) -> np.ndarray:
    half = 0.5 * angle
    c, s = math.cos(half), math.sin(half)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)


def _base_matrix(kind: GateKind, angles: Sequence[float]) -> np.ndarray:
    """The 2x2 matrix acting on the target qubit (RY part for CRY, X for CNOT)."""
    if kind is GateKind.RX:
        return _rx(angles[0])
    if kind is GateKind.RY or kind is GateKind.CRY:
        return _ry(angles[0])
    if kind is GateKind.RZ:
        return _rz(angles[0])
    if kind is GateKind.ROT:
        phi, theta, omega = angles
        return _rz(omega) @ _ry(theta) @ _rz(phi)
    if kind is GateKind.CNOT:
        return _X
    raise ValueError(f"unknown gate kind {kind!r}")


def _drz(angle: float) -> np.ndarray:
    half = 0.5 * angle
    return np.array(
        [[-0.5j * np.exp(-1j * half), 0.0], [0.0, 0.5j * np.exp(1j * half)]],
        dtype=np.complex128,
    )


def _dry(angle: float) -> np.ndarray:
    half = 0.5 * angle
    c, s = math.cos(half), math.sin(half)
    return 0.5 * np.array([[-s, -c], [c, -s]], dtype=np.complex128)


def _drx(angle: float) -> np.ndarray:
    half = 0.5 * angle
    c, s = math.cos(half), math.sin(half)
    return 0.5 * np.array([[-s, -1j * c], [-1j * c, -s]], dtype=np.complex128)


def _deriv_matrix(kind: GateKind, angles: Sequence[float], which: int) -> np.ndarray:
    """d(base matrix)/d(angles[which]); for CRY this is the controlled block."""
    if kind is GateKind.RX:
        return _drx(angles[0])
    if kind is GateKind.RY or kind is GateKind.CRY:
        return _dry(angles[0])
    if kind is GateKind.RZ:
        return _drz(angles[0])
    if kind is GateKind.ROT:
        phi, theta, omega = angles
        if which == 0:
            return _rz(omega) @ _ry(theta) @ _drz(phi)
        if which == 1:
            return _rz(omega) @ _dry(theta) @ _rz(phi)
        return _drz(omega) @ _ry(theta) @ _rz(phi)
    raise UnsupportedGradientError(
        f"no differentiation rule for parameterized {kind.value} gate"
    )


def gate_unitary(gate: Gate) -> np.ndarray:
    """The gate's full unitary: 2x2, or 4x4 for controlled kinds.

    For controlled gates the 4x4 acts on the 2-bit sub-index
    ``2*control_bit + target_bit`` (control is the high bit).
    """
    mat = _base_matrix(gate.kind, gate.resolved_angles(None))
    if gate.kind not in _CONTROLLED:
        return mat
    full = np.eye(4, dtype=np.complex128)
    full[2:, 2:] = mat
    return full


# ---------------------------------------------------------------------------
# in-place application kernels
#
# All kernels view a contiguous amplitude buffer as (-1, 2, 2**target) so the
# middle axis is the target bit; the leading axis absorbs both any batch
# dimension and the higher-order bits.  They mutate their input.


def _apply_1q_inplace(amps: np.ndarray, mat: np.ndarray, target: int) -> None:
    view = amps.reshape(-1, 2, 1 << target)
    x0 = view[:, 0, :]
    x1 = view[:, 1, :]
    t0 = mat[0, 0] * x0 + mat[0, 1] * x1
    t1 = mat[1, 0] * x0 + mat[1, 1] * x1
    view[:, 0, :] = t0
    view[:, 1, :] = t1


def _ctrl_views(amps: np.ndarray, control: int, target: int):
    """Views (x0, x1) of the target-bit halves inside the control=1 subspace."""
    hi, lo = (control, target) if control > target else (target, control)
    view = amps.reshape(-1, 2, 1 << (hi - lo - 1), 2, 1 << lo)
    if control > target:
        return view[:, 1, :, 0, :], view[:, 1, :, 1, :]
    return view[:, 0, :, 1, :], view[:, 1, :, 1, :]


def _apply_ctrl_inplace(amps: np.ndarray, mat: np.ndarray, control: int, target: int) -> None:
    x0, x1 = _ctrl_views(amps, control, target)
    t0 = mat[0, 0] * x0 + mat[0, 1] * x1
    t1 = mat[1, 0] * x0 + mat[1, 1] * x1
    x0[...] = t0
    x1[...] = t1


def _apply_ry_rows_inplace(amps: np.ndarray, half_angles: np.ndarray, target: int) -> None:
    """Apply RY with a separate angle per batch row; ``amps`` is (B, 2**q)."""
    batch = amps.shape[0]
    view = amps.reshape(batch, -1, 2, 1 << target)
    c = np.cos(half_angles)[:, None, None]
    s = np.sin(half_angles)[:, None, None]
    x0 = view[:, :, 0, :]
    x1 = view[:, :, 1, :]
    t0 = c * x0 - s * x1
    t1 = s * x0 + c * x1
    view[:, :, 0, :] = t0
    view[:, :, 1, :] = t1


def _apply_gate_inplace(amps: np.ndarray, kind: GateKind, angles: Sequence[float],
                        target: int, control: Optional[int], adjoint: bool = False) -> None:
    mat = _base_matrix(kind, angles)
    if adjoint:
        mat = mat.conj().T
    if kind in _CONTROLLED:
        _apply_ctrl_inplace(amps, mat, control, target)
    else:
        _apply_1q_inplace(amps, mat, target)


def _deriv_apply(amps: np.ndarray, kind: GateKind, angles: Sequence[float],
                 which: int, target: int, control: Optional[int]) -> np.ndarray:
    """Fresh array ``dU @ amps`` where dU is the gate derivative (not unitary)."""
    dmat = _deriv_matrix(kind, angles, which)
    if kind in _CONTROLLED:
        # derivative is zero outside the control=1 subspace
        out = np.zeros_like(amps)
        x0, x1 = _ctrl_views(amps, control, target)
        o0, o1 = _ctrl_views(out, control, target)
        o0[...] = dmat[0, 0] * x0 + dmat[0, 1] * x1
        o1[...] = dmat[1, 0] * x0 + dmat[1, 1] * x1
        return out
    out = np.empty_like(amps)
    iview = amps.reshape(-1, 2, 1 << target)
    oview = out.reshape(-1, 2, 1 << target)
    x0 = iview[:, 0, :]
    x1 = iview[:, 1, :]
    oview[:, 0, :] = dmat[0, 0] * x0 + dmat[0, 1] * x1
    oview[:, 1, :] = dmat[1, 0] * x0 + dmat[1, 1] * x1
    return out


# ---------------------------------------------------------------------------
# public single-state operations


def _check_gate_qubits(gate: Gate, num_qubits: int) -> None:
    if not 0 <= gate.target < num_qubits:
        raise InvalidQubitError(
            f"target {gate.target} out of range for {num_qubits} qubit(s)"
        )
    if gate.control is not None and not 0 <= gate.control < num_qubits:
        raise InvalidQubitError(
            f"control {gate.control} out of range for {num_qubits} qubit(s)"
        )


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """Apply one gate and return the new state; the input is untouched."""
    _check_gate_qubits(gate, state.num_qubits)
    angles = gate.resolved_angles(None)
    amps = state.amplitudes.copy()
    _apply_gate_inplace(amps, gate.kind, angles, gate.target, gate.control)
    return StateVector(amps, state.num_qubits)


def run_program(program: Sequence[Gate], num_qubits: int,
                params: Optional[np.ndarray] = None,
                initial: Optional[StateVector] = None) -> StateVector:
    """Run a gate list from ``|0...0>`` (or ``initial``), binding any slots."""
    state = StateVector.zero(num_qubits) if initial is None else initial
    amps = state.amplitudes.copy()
    for gate in program:
        _check_gate_qubits(gate, num_qubits)
        angles = gate.resolved_angles(params)
        _apply_gate_inplace(amps, gate.kind, angles, gate.target, gate.control)
    return StateVector(amps, num_qubits)


@lru_cache(maxsize=None)
def _z_signs(num_qubits: int) -> np.ndarray:
    """(q, 2**q) array of Z eigenvalue signs: +1 where the qubit's bit is 0."""
    idx = np.arange(2**num_qubits)
    signs = np.empty((num_qubits, 2**num_qubits), dtype=np.float64)
    for k in range(num_qubits):
        signs[k] = 1.0 - 2.0 * ((idx >> k) & 1)
    signs.flags.writeable = False
    return signs


def expectation_z(state: StateVector, obs: Observable) -> float:
    """The expectation of Pauli-Z on one qubit; always in [-1, 1]."""
    if obs.qubit >= state.num_qubits:
        raise InvalidQubitError(
            f"observable qubit {obs.qubit} out of range for {state.num_qubits} qubit(s)"
        )
    probs = np.abs(state.amplitudes) ** 2
    return float(probs @ _z_signs(state.num_qubits)[obs.qubit])


def _all_expectations(amps: np.ndarray, num_qubits: int) -> np.ndarray:
    """All q Pauli-Z expectations for a (B, 2**q) batch; returns (B, q)."""
    probs = amps.real**2 + amps.imag**2
    return probs @ _z_signs(num_qubits).T


def fidelity(a: StateVector, b: StateVector) -> float:
    """Squared overlap ``|<a|b>|**2`` of two pure states (in [0, 1])."""
    if a.num_qubits != b.num_qubits:
        raise StateShapeError(
            f"cannot compare states on {a.num_qubits} and {b.num_qubits} qubit(s)"
        )
    return float(np.abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


# ---------------------------------------------------------------------------
# reverse-mode differentiation


def _backward_accumulate(program: Sequence[Gate], params: np.ndarray,
                         amps: np.ndarray, cotangent: np.ndarray,
                         grads: np.ndarray) -> None:
    """Walk the program backwards, unapplying gates and accumulating grads.

    ``amps`` must hold the post-program state and ``cotangent`` the vector w
    with dL = 2 Re <w, d psi>; both are mutated in place.  Works on any
    (..., 2**q) contiguous buffer, so batched callers reuse it directly.
    """
    for gate in reversed(program):
        angles = gate.resolved_angles(params)
        _apply_gate_inplace(amps, gate.kind, angles, gate.target, gate.control,
                            adjoint=True)
        if gate.is_parameterized:
            for which, slot in enumerate(gate.slots):
                if slot is None:
                    continue
                shifted = _deriv_apply(amps, gate.kind, angles, which,
                                       gate.target, gate.control)
                grads[slot] += 2.0 * float(np.real(np.vdot(cotangent, shifted)))
        _apply_gate_inplace(cotangent, gate.kind, angles, gate.target, gate.control,
                            adjoint=True)


def backprop_expectation(program: Sequence[Gate], params: np.ndarray,
                         num_qubits: int, obs: Observable):
    """Value and parameter gradient of ``<Z_obs>`` after running ``program``.

    Returns ``(value, grads)`` with ``grads`` indexed like ``params``.  The
    gradient is exact (no shot noise, no finite differencing): with final
    state psi and M the diagonal Z observable, the cotangent ``w = M psi``
    is pulled back through the adjoint of each gate while the state itself
    is unapplied, so no intermediate states are ever stored.
    """
    params = np.asarray(params, dtype=np.float64)
    if obs.qubit >= num_qubits:
        raise InvalidQubitError(
            f"observable qubit {obs.qubit} out of range for {num_qubits} qubit(s)"
        )
    for gate in program:
        _check_gate_qubits(gate, num_qubits)
    final = run_program(program, num_qubits, params)
    value = expectation_z(final, obs)

    amps = final.amplitudes.copy()
    cotangent = _z_signs(num_qubits)[obs.qubit] * amps
    grads = np.zeros_like(params)
    _backward_accumulate(program, params, amps, cotangent, grads)
    return value, grads


def backprop_fidelity(program_a: Sequence[Gate], program_b: Sequence[Gate],
                      params_a: np.ndarray, params_b: np.ndarray,
                      num_qubits: int):
    """Value and gradients of ``|<psi_a|psi_b>|**2`` for two programs.

    Both programs start from ``|0...0>``.  Returns
    ``(value, grads_a, grads_b)``.  With overlap ``c = <psi_a|psi_b>`` the
    cotangents are ``conj(c) * psi_b`` for side a and ``c * psi_a`` for
    side b; each side is then pulled back exactly as in
    :func:`backprop_expectation`.
    """
    params_a = np.asarray(params_a, dtype=np.float64)
    params_b = np.asarray(params_b, dtype=np.float64)
    psi_a = run_program(program_a, num_qubits, params_a)
    psi_b = run_program(program_b, num_qubits, params_b)
    c = np.vdot(psi_a.amplitudes, psi_b.amplitudes)
    value = float(np.abs(c) ** 2)

    grads_a = np.zeros_like(params_a)
    amps_a = psi_a.amplitudes.copy()
    cot_a = np.conj(c) * psi_b.amplitudes
    _backward_accumulate(program_a, params_a, amps_a, cot_a.copy(), grads_a)

    grads_b = np.zeros_like(params_b)
    amps_b = psi_b.amplitudes.copy()
    cot_b = c * psi_a.amplitudes
    _backward_accumulate(program_b, params_b, amps_b, cot_b.copy(), grads_b)
    return value, grads_a, grads_b
