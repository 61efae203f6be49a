"""Training engine: Adam, the batch step, experiments, metrics.

The trainable state is the M filter parameter vectors plus the dense head.
Each batch step runs every filter over every sample's patches in one batched
call, assembles the feature tensors, and pulls one combined cotangent back
through the circuits:

* the cross-entropy path arrives via the head as an upstream gradient on the
  feature tensor, converted to a state cotangent through the Z observables;
* the overlap-penalty path couples each filter's state at a patch to every
  other filter's state at the same patch.

Runs are deterministic for a fixed seed and thread count 1; the threaded
path splits work only on fixed chunk boundaries, so it is bit-identical to
the single-threaded one as well.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .circuit import FilterParams, init_filter_params
from .config import ALLOWED_KERNEL_SIZES, ConfigError, TrainConfig
from .data import LabeledCloud
from .model import (
    DenseHead,
    PROB_FLOOR,
    batch_overlap_penalty,
    head_backward,
    head_forward,
    inter_feature_distance,
)
from .qstate import _z_signs
from .quanv import QuanvLayer, extract_patches, feature_dims
from .quanv import _run_chunked, _backward_chunked
from .voxel import PointCloud, VoxelGrid, normalize_bounds, voxelize

__all__ = [
    "Adam",
    "EpochRecord",
    "MetricsLog",
    "Checkpoint",
    "prepare_grids",
    "train",
    "train_on_grids",
    "evaluate",
    "evaluate_grids",
    "predict_proba_grids",
    "mixed_kernel_sizes",
    "fixed_kernel_sizes",
    "run_lambda_sweep",
    "run_scaling_experiment",
]

#: per-epoch feature-diversity diagnostics are averaged over this many
#: training samples (the first ones, in dataset order)
PROBE_SAMPLES = 8


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params: List[np.ndarray], learning_rate: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(
                f"expected {len(self.params)} gradient arrays, got {len(grads)}"
            )
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    ce: float
    rf: float
    total: float
    accuracy: float
    feature_distance: float
    wall_clock: float

    def to_json(self, include_timing: bool = True) -> str:
        data = {
            "epoch": self.epoch,
            "ce": self.ce,
            "rf": self.rf,
            "total": self.total,
            "accuracy": self.accuracy,
            "feature_distance": self.feature_distance,
        }
        if include_timing:
            data["wall_clock"] = self.wall_clock
        return json.dumps(data, sort_keys=True)


@dataclass
class MetricsLog:
    """Per-epoch training records, serializable as JSON lines."""

    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def canonical_lines(self) -> List[str]:
        """JSONL with timing stripped — the determinism-comparable form."""
        return [r.to_json(include_timing=False) for r in self.records]

    def fingerprint(self) -> str:
        digest = hashlib.sha256("\n".join(self.canonical_lines()).encode())
        return digest.hexdigest()

    def to_jsonl(self, path: Union[str, Path]) -> None:
        Path(path).write_text(
            "".join(r.to_json() + "\n" for r in self.records), encoding="utf-8"
        )

    @classmethod
    def from_jsonl(cls, path: Union[str, Path]) -> "MetricsLog":
        records = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            records.append(EpochRecord(
                epoch=int(data["epoch"]), ce=data["ce"], rf=data["rf"],
                total=data["total"], accuracy=data["accuracy"],
                feature_distance=data["feature_distance"],
                wall_clock=data.get("wall_clock", 0.0),
            ))
        return cls(records)


@dataclass(frozen=True)
class Checkpoint:
    """Everything needed to run inference: filters, head, config, classes."""

    filters: Tuple[FilterParams, ...]
    head: DenseHead
    config: TrainConfig
    class_names: Tuple[str, ...]

    @property
    def layer(self) -> QuanvLayer:
        return QuanvLayer(self.filters, self.config.stride)

    @property
    def num_classes(self) -> int:
        return self.head.num_classes


# ---------------------------------------------------------------------------
# grid preparation


def _grid_cache_key(cloud: PointCloud, dims: Tuple[int, int, int],
                    threshold: int) -> str:
    h = hashlib.sha256()
    h.update(cloud.vertices.tobytes())
    h.update(repr((cloud.bounds, dims, threshold)).encode())
    return h.hexdigest()[:24]


def prepare_grids(samples: Sequence[LabeledCloud], config: TrainConfig,
                  cache_dir: Optional[Union[str, Path]] = None):
    """Normalize and voxelize every sample once.

    Returns ``(grids, labels, class_names)`` with ``grids`` a uint8 array of
    shape (n, Wv, Hv, Dv).  With ``cache_dir`` set, each grid is stored
    under a content hash of (vertices, bounds, dims, threshold) and reused
    across calls.
    """
    if not samples:
        raise ConfigError("dataset is empty")
    config = config.normalized()
    dims = config.grid_dims
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    grids = np.empty((len(samples),) + dims, dtype=np.uint8)
    for i, sample in enumerate(samples):
        path = None
        if cache is not None:
            key = _grid_cache_key(sample.cloud, dims, config.threshold)
            path = cache / f"{key}.vxg"
            if path.exists():
                from .io import read_voxel_grid

                grids[i] = read_voxel_grid(path).occupancy
                continue
        grid = voxelize(normalize_bounds(sample.cloud), dims, config.threshold)
        grids[i] = grid.occupancy
        if path is not None:
            from .io import write_voxel_grid

            write_voxel_grid(path, grid)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    if labels.min() < 0:
        raise ConfigError("labels must be non-negative")
    names: Dict[int, str] = {}
    for s in samples:
        names.setdefault(s.label, s.class_name or str(s.label))
    class_names = tuple(names.get(c, str(c)) for c in range(int(labels.max()) + 1))
    return grids, labels, class_names


# ---------------------------------------------------------------------------
# batched forward/backward


def _batch_features(grids: np.ndarray, layer: QuanvLayer, threads: int,
                    want_states: bool):
    """Features for a grid batch, plus per-filter patches and states.

    ``grids`` is (n, Wv, Hv, Dv).  Features come back as
    (n, M*q, oW, oH, oD); patches and states are per filter, flattened over
    (sample, site) rows in sample-major order.
    """
    n = grids.shape[0]
    out_dims = feature_dims(grids.shape[1:], layer)
    sites = int(np.prod(out_dims))
    q = layer.num_qubits
    features = np.empty((n, layer.num_channels) + out_dims, dtype=np.float64)
    patches_per_filter = []
    states_per_filter = []
    for m, params in enumerate(layer.filters):
        k = params.kernel_size
        patches = np.concatenate(
            [extract_patches(grids[i], k, layer.stride, out_dims) for i in range(n)]
        )
        if want_states:
            obs, states = _run_chunked(patches, params, True, threads)
            states_per_filter.append(states)
        else:
            obs = _run_chunked(patches, params, False, threads)
        block = obs.reshape(n, sites, q).transpose(0, 2, 1)
        features[:, m * q:(m + 1) * q] = block.reshape((n, q) + out_dims)
        patches_per_filter.append(patches)
    return features, patches_per_filter, states_per_filter, out_dims


def _clamped_log_probs(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = probs[np.arange(probs.shape[0]), labels]
    if np.any(p < PROB_FLOOR):
        warnings.warn(
            f"{int(np.sum(p < PROB_FLOOR))} probabilities clamped to "
            f"{PROB_FLOOR:.0e} in cross entropy",
            RuntimeWarning,
        )
        p = np.maximum(p, PROB_FLOOR)
    return -np.log(p)


def _batch_step(grids: np.ndarray, labels: np.ndarray, layer: QuanvLayer,
                head: DenseHead, lam: float, threads: int):
    """One combined forward/backward pass over a batch.

    Returns ``(ce_sum, rf_sum, correct, filter_grads, head_grads)`` where
    the sums are over samples (callers divide by the dataset size).
    """
    n = grids.shape[0]
    m_filters = layer.num_filters
    q = layer.num_qubits
    signs = _z_signs(q)
    features, patches, states, out_dims = _batch_features(grids, layer, threads, True)
    sites = int(np.prod(out_dims))

    x = features.reshape(n, -1)
    probs, cache = head_forward(head, x)
    ce_each = _clamped_log_probs(probs, labels)
    correct = int(np.sum(np.argmax(probs, axis=1) == labels))

    if m_filters >= 2:
        rf_rows = batch_overlap_penalty(states)  # (n * sites,)
        rf_each = rf_rows.reshape(n, sites).mean(axis=1)
    else:
        rf_each = np.zeros(n)

    head_grads, dx = head_backward(head, cache, labels)
    upstream = dx.reshape(features.shape)

    overlaps = {}
    if lam > 0.0 and m_filters >= 2:
        for i in range(m_filters):
            for j in range(m_filters):
                if i != j and (i, j) not in overlaps:
                    c = np.sum(np.conj(states[i]) * states[j], axis=1)
                    overlaps[(i, j)] = c
                    overlaps[(j, i)] = np.conj(c)

    filter_grads = []
    rf_scale = lam / (n * sites) * 2.0 / (m_filters * (m_filters - 1)) \
        if m_filters >= 2 else 0.0
    for m, params in enumerate(layer.filters):
        u = upstream[:, m * q:(m + 1) * q].reshape(n, q, sites)
        u = u.transpose(0, 2, 1).reshape(n * sites, q)
        cot = (u @ signs) * states[m]
        if lam > 0.0 and m_filters >= 2:
            for other in range(m_filters):
                if other == m:
                    continue
                c = overlaps[(m, other)]
                cot += rf_scale * np.conj(c)[:, None] * states[other]
        filter_grads.append(
            _backward_chunked(patches[m], params, states[m], cot, threads)
        )
    return float(ce_each.sum()), float(rf_each.sum()), correct, filter_grads, head_grads


# ---------------------------------------------------------------------------
# training


def _probe_distance(grids: np.ndarray, layer: QuanvLayer, threads: int) -> float:
    """Mean inter-filter feature distance over the probe samples."""
    if layer.num_filters < 2:
        return 0.0
    probe = grids[: min(PROBE_SAMPLES, grids.shape[0])]
    features, _, _, _ = _batch_features(probe, layer, threads, False)
    vals = [
        inter_feature_distance(features[i], layer.num_filters, layer.num_qubits)
        for i in range(features.shape[0])
    ]
    return float(np.mean(vals))


def train_on_grids(grids: np.ndarray, labels: np.ndarray, config: TrainConfig,
                   class_names: Optional[Sequence[str]] = None,
                   log_path: Optional[Union[str, Path]] = None):
    """Train filters and head on pre-voxelized grids.

    Returns ``(checkpoint, metrics_log)``.  The per-epoch log records the
    running training loss terms, training accuracy, and the probe feature
    distance; with ``log_path`` the JSONL file is (re)written every epoch.
    """
    config = config.normalized()
    grids = np.ascontiguousarray(grids, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.int64)
    n = grids.shape[0]
    if n == 0:
        raise ConfigError("dataset is empty")
    if labels.shape != (n,):
        raise ConfigError(f"expected {n} labels, got shape {labels.shape}")
    if grids.shape[1:] != config.grid_dims:
        raise ConfigError(
            f"grids have dims {grids.shape[1:]} but config says {config.grid_dims}"
        )
    num_classes = int(labels.max()) + 1
    if class_names is None:
        class_names = tuple(str(c) for c in range(num_classes))
    else:
        class_names = tuple(class_names)
        if len(class_names) != num_classes:
            raise ConfigError(
                f"{num_classes} classes in labels but {len(class_names)} names"
            )

    rng = np.random.default_rng(config.seed)
    filters = [
        init_filter_params(k, config.num_qubits, rng) for k in config.kernel_sizes
    ]
    layer = QuanvLayer(tuple(filters), config.stride)
    out_dims = feature_dims(config.grid_dims, layer)
    input_dim = layer.num_channels * int(np.prod(out_dims))
    head = DenseHead.initialize(input_dim, config.hidden_units, num_classes, rng)

    filter_values = [f.values.copy() for f in filters]
    opt = Adam(filter_values + head.parameters(), config.learning_rate)

    log = MetricsLog()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        ce_sum = rf_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            current = layer.replace_filters(
                [f.replace_values(v) for f, v in zip(filters, filter_values)]
            )
            ce_b, rf_b, ok_b, fgrads, hgrads = _batch_step(
                grids[idx], labels[idx], current, head, config.rf_lambda,
                config.threads,
            )
            ce_sum += ce_b
            rf_sum += rf_b
            correct += ok_b
            opt.step(fgrads + hgrads)
        current = layer.replace_filters(
            [f.replace_values(v) for f, v in zip(filters, filter_values)]
        )
        record = EpochRecord(
            epoch=epoch + 1,
            ce=ce_sum / n,
            rf=rf_sum / n,
            total=ce_sum / n + config.rf_lambda * rf_sum / n,
            accuracy=100.0 * correct / n,
            feature_distance=_probe_distance(grids, current, config.threads),
            wall_clock=time.perf_counter() - t0,
        )
        log.append(record)
        if log_path is not None:
            log.to_jsonl(log_path)

    final_filters = tuple(
        f.replace_values(v) for f, v in zip(filters, filter_values)
    )
    checkpoint = Checkpoint(final_filters, head, config, class_names)
    return checkpoint, log


def train(samples: Sequence[LabeledCloud], config: TrainConfig,
          cache_dir: Optional[Union[str, Path]] = None,
          log_path: Optional[Union[str, Path]] = None):
    """Voxelize a labeled cloud dataset and train on it."""
    grids, labels, class_names = prepare_grids(samples, config, cache_dir)
    return train_on_grids(grids, labels, config, class_names, log_path)


# ---------------------------------------------------------------------------
# inference


def predict_proba_grids(checkpoint: Checkpoint, grids: np.ndarray,
                        threads: Optional[int] = None) -> np.ndarray:
    """Class probabilities (n, C) for pre-voxelized grids."""
    config = checkpoint.config
    threads = config.threads if threads is None else threads
    grids = np.ascontiguousarray(grids, dtype=np.uint8)
    if grids.shape[1:] != config.grid_dims:
        raise ConfigError(
            f"grids have dims {grids.shape[1:]} but checkpoint expects "
            f"{config.grid_dims}"
        )
    layer = checkpoint.layer
    out = []
    for start in range(0, grids.shape[0], config.eval_batch_size):
        chunk = grids[start:start + config.eval_batch_size]
        features, _, _, _ = _batch_features(chunk, layer, threads, False)
        probs, _ = head_forward(checkpoint.head, features.reshape(chunk.shape[0], -1))
        out.append(probs)
    return np.concatenate(out)


def evaluate_grids(checkpoint: Checkpoint, grids: np.ndarray, labels: np.ndarray,
                   threads: Optional[int] = None) -> float:
    """Top-1 accuracy as a percentage."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.max() >= checkpoint.num_classes:
        raise ConfigError(
            f"label {int(labels.max())} out of range for a "
            f"{checkpoint.num_classes}-class checkpoint"
        )
    probs = predict_proba_grids(checkpoint, grids, threads)
    return 100.0 * float(np.mean(np.argmax(probs, axis=1) == labels))


def evaluate(checkpoint: Checkpoint, samples: Sequence[LabeledCloud],
             cache_dir: Optional[Union[str, Path]] = None,
             threads: Optional[int] = None) -> float:
    """Voxelize a labeled dataset and measure top-1 accuracy (percent)."""
    grids, labels, _ = prepare_grids(samples, checkpoint.config, cache_dir)
    return evaluate_grids(checkpoint, grids, labels, threads)


def _dataset_distance(checkpoint: Checkpoint, grids: np.ndarray,
                      threads: Optional[int] = None) -> float:
    """Mean inter-filter feature distance over a grid set."""
    config = checkpoint.config
    threads = config.threads if threads is None else threads
    return _probe_distance(grids, checkpoint.layer, threads)


# ---------------------------------------------------------------------------
# experiments


def mixed_kernel_sizes(num_filters: int) -> Tuple[int, ...]:
    """Round-robin over the supported kernel sizes: 2, 3, 4, 2, ..."""
    return tuple(
        ALLOWED_KERNEL_SIZES[i % len(ALLOWED_KERNEL_SIZES)]
        for i in range(num_filters)
    )


def fixed_kernel_sizes(num_filters: int, kernel_size: int = 4) -> Tuple[int, ...]:
    return (kernel_size,) * num_filters


def _split_grids(samples, config, cache_dir, test_fraction=0.2):
    from .data import train_test_split

    train_set, test_set = train_test_split(samples, test_fraction, config.seed)
    g_train, y_train, names = prepare_grids(train_set, config, cache_dir)
    g_test, y_test, _ = prepare_grids(test_set, config, cache_dir)
    return g_train, y_train, names, g_test, y_test


def run_lambda_sweep(samples: Sequence[LabeledCloud], config: TrainConfig,
                     lambdas: Sequence[float],
                     cache_dir: Optional[Union[str, Path]] = None) -> List[Dict]:
    """Train once per penalty weight; report held-out accuracy and diversity.

    Duplicate weights are dropped with a warning.  Each run shares the same
    seed and 80/20 split, so rows differ only in the penalty.
    """
    seen = []
    for lam in lambdas:
        if lam in seen:
            warnings.warn(f"duplicate lambda {lam} dropped from sweep")
            continue
        seen.append(lam)
    if not seen:
        raise ConfigError("lambda sweep needs at least one value")
    config = config.normalized()
    g_train, y_train, names, g_test, y_test = _split_grids(samples, config, cache_dir)
    rows = []
    for lam in seen:
        cfg = replace(config, rf_lambda=float(lam))
        ckpt, _ = train_on_grids(g_train, y_train, cfg, names)
        rows.append({
            "rf_lambda": float(lam),
            "accuracy": evaluate_grids(ckpt, g_test, y_test),
            "feature_distance": _dataset_distance(ckpt, g_test),
        })
    return rows


def run_scaling_experiment(samples: Sequence[LabeledCloud], config: TrainConfig,
                           filter_counts: Sequence[int], strategy: str,
                           cache_dir: Optional[Union[str, Path]] = None) -> List[Dict]:
    """Train at several filter counts with mixed or fixed kernel sizes."""
    if strategy not in ("mixed", "fixed"):
        raise ConfigError(f"strategy must be 'mixed' or 'fixed', got {strategy!r}")
    config = config.normalized()
    g_train, y_train, names, g_test, y_test = _split_grids(samples, config, cache_dir)
    rows = []
    for count in filter_counts:
        ks = mixed_kernel_sizes(count) if strategy == "mixed" \
            else fixed_kernel_sizes(count)
        cfg = replace(config, num_filters=int(count), kernel_sizes=ks).normalized()
        ckpt, _ = train_on_grids(g_train, y_train, cfg, names)
        rows.append({
            "num_filters": int(count),
            "strategy": strategy,
            "kernel_sizes": ",".join(str(k) for k in ks),
            "accuracy": evaluate_grids(ckpt, g_test, y_test),
        })
    return rows
