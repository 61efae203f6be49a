"""Classical model pieces: losses, the dense head, and feature diagnostics.

The training objective per batch is

    mean_over_samples( cross_entropy + lambda * overlap_penalty )

where the overlap penalty of a sample averages, over all patch sites, the
mean pairwise fidelity between the M filters' output states at that site.
Driving it down pushes the filters toward mutually orthogonal states, i.e.
toward extracting different features from the same patch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .qstate import StateVector

__all__ = [
    "InsufficientFiltersError",
    "PROB_FLOOR",
    "DenseHead",
    "head_forward",
    "head_backward",
    "softmax",
    "ce_loss",
    "rf_loss",
    "batch_overlap_penalty",
    "total_loss",
    "LossReport",
    "inter_feature_distance",
]

#: probabilities are clamped here before the log to keep the loss finite
PROB_FLOOR = 1e-12


class InsufficientFiltersError(ValueError):
    """Pairwise-overlap quantities need at least two filters."""


# ---------------------------------------------------------------------------
# losses


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss(probs: np.ndarray, true_class: int) -> float:
    """Cross entropy ``-log p[true_class]`` of one probability vector.

    Probabilities below ``PROB_FLOOR`` are clamped (with a warning) so the
    loss stays finite.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= true_class < probs.shape[-1]:
        raise ValueError(
            f"true class {true_class} out of range for {probs.shape[-1]} classes"
        )
    p = float(probs[true_class])
    if p < PROB_FLOOR:
        warnings.warn(
            f"probability {p:.3e} clamped to {PROB_FLOOR:.0e} in cross entropy",
            RuntimeWarning,
        )
        p = PROB_FLOOR
    return -float(np.log(p))


def rf_loss(states: Sequence[StateVector]) -> float:
    """Mean pairwise fidelity over all ordered filter pairs.

    ``(1 / (M*(M-1))) * sum_{m != m'} |<psi_m|psi_m'>|**2`` — 1.0 when all
    states coincide, 0.0 when mutually orthogonal.
    """
    m = len(states)
    if m < 2:
        raise InsufficientFiltersError(
            f"pairwise overlap needs at least two states, got {m}"
        )
    qs = {s.num_qubits for s in states}
    if len(qs) > 1:
        raise ValueError(f"states disagree on qubit count: {sorted(qs)}")
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            total += 2.0 * float(
                np.abs(np.vdot(states[i].amplitudes, states[j].amplitudes)) ** 2
            )
    return total / (m * (m - 1))


def batch_overlap_penalty(states_per_filter: Sequence[np.ndarray]) -> np.ndarray:
    """Per-patch mean pairwise fidelity for a batch of patch sites.

    Each entry of ``states_per_filter`` is the (B, 2**q) final-state array of
    one filter over the same B patches.  Returns a (B,) array.
    """
    m = len(states_per_filter)
    if m < 2:
        raise InsufficientFiltersError(
            f"pairwise overlap needs at least two filters, got {m}"
        )
    batch = states_per_filter[0].shape[0]
    total = np.zeros(batch, dtype=np.float64)
    for i in range(m):
        for j in range(i + 1, m):
            c = np.sum(np.conj(states_per_filter[i]) * states_per_filter[j], axis=1)
            total += 2.0 * (c.real**2 + c.imag**2)
    return total / (m * (m - 1))


@dataclass(frozen=True)
class LossReport:
    """Batch-mean loss terms; ``total = ce + lam * rf``."""

    ce: float
    rf: float
    lam: float

    @property
    def total(self) -> float:
        return self.ce + self.lam * self.rf


def total_loss(probs: np.ndarray, labels: np.ndarray,
               patch_states: Sequence[Sequence[np.ndarray]],
               lam: float) -> LossReport:
    """Batch objective from head probabilities and per-patch filter states.

    ``patch_states[s]`` holds, for sample s, one (num_sites, 2**q) state
    array per filter.  With a single filter the overlap term is 0 by
    convention (there is no pair to compare).
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n = probs.shape[0]
    if labels.shape != (n,) or len(patch_states) != n:
        raise ValueError("probs, labels and patch_states must agree on batch size")
    ce = float(np.mean([ce_loss(probs[s], int(labels[s])) for s in range(n)]))
    rf_vals = []
    for per_filter in patch_states:
        if len(per_filter) < 2:
            rf_vals.append(0.0)
        else:
            rf_vals.append(float(np.mean(batch_overlap_penalty(per_filter))))
    return LossReport(ce=ce, rf=float(np.mean(rf_vals)), lam=float(lam))


# ---------------------------------------------------------------------------
# dense head


@dataclass
class DenseHead:
    """features -> ReLU(hidden) -> softmax classifier."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int, num_classes: int,
                   rng: np.random.Generator) -> "DenseHead":
        if min(input_dim, hidden_dim, num_classes) < 1:
            raise ValueError("all head dimensions must be >= 1")
        w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, hidden_dim))
        w2 = rng.normal(0.0, np.sqrt(1.0 / hidden_dim), size=(hidden_dim, num_classes))
        return cls(w1, np.zeros(hidden_dim), w2, np.zeros(num_classes))

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    def parameters(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


def head_forward(head: DenseHead, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Probabilities (N, C) for a feature batch (N, input_dim), plus cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != head.input_dim:
        raise ValueError(
            f"expected features of shape (N, {head.input_dim}), got {x.shape}"
        )
    pre = x @ head.w1 + head.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ head.w2 + head.b2
    probs = softmax(logits)
    return probs, {"x": x, "pre": pre, "hidden": hidden, "probs": probs}


def head_backward(head: DenseHead, cache: Dict[str, np.ndarray],
                  labels: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """Gradients of the batch-mean cross entropy.

    Returns ``([dw1, db1, dw2, db2], dx)`` where ``dx`` flows back into the
    feature tensor.
    """
    x, pre, hidden, probs = cache["x"], cache["pre"], cache["hidden"], cache["probs"]
    n, c = probs.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    dw2 = hidden.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dhidden = dlogits @ head.w2.T
    dhidden[pre <= 0.0] = 0.0
    dw1 = x.T @ dhidden
    db1 = dhidden.sum(axis=0)
    dx = dhidden @ head.w1.T
    return [dw1, db1, dw2, db2], dx


# ---------------------------------------------------------------------------
# diagnostics


def inter_feature_distance(features: np.ndarray, num_filters: int,
                           num_qubits: int) -> float:
    """Mean size-normalized L2 distance between per-filter feature blocks.

    Splits the leading channel axis into M blocks of q channels, computes
    ``||block_i - block_j||_2 / block_size`` for every unordered pair and
    averages.  Scale-free in the lattice size, so values are comparable
    across grid resolutions; larger means more diverse filters.
    """
    if num_filters < 2:
        raise InsufficientFiltersError(
            f"distance needs at least two filters, got {num_filters}"
        )
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != num_filters * num_qubits:
        raise ValueError(
            f"expected {num_filters * num_qubits} channels, got {features.shape[0]}"
        )
    blocks = features.reshape(num_filters, -1)
    size = blocks.shape[1]
    total = 0.0
    pairs = 0
    for i in range(num_filters):
        for j in range(i + 1, num_filters):
            total += float(np.linalg.norm(blocks[i] - blocks[j])) / size
            pairs += 1
    return total / pairs
