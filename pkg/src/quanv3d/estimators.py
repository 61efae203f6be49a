"""Scikit-learn style wrappers around the pipeline stages.

Three estimators cover the three natural cut points: clouds -> occupancy
grids (:class:`VoxelGridTransformer`), grids -> quanvolution features
(:class:`QuanvolutionTransformer`), and clouds-or-grids -> class labels
(:class:`QuanvClassifier`).  They follow the usual contract: ``__init__``
stores arguments verbatim, ``fit`` validates and sets trailing-underscore
attributes, ``get_params``/``set_params`` come from ``BaseEstimator``, so
they compose with pipelines and grid search.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .circuit import FilterParams, init_filter_params
from .config import TrainConfig
from .model import inter_feature_distance
from .quanv import QuanvLayer
from .train import _batch_features, predict_proba_grids, train_on_grids
from .voxel import PointCloud, normalize_bounds, voxelize

__all__ = [
    "VoxelGridTransformer",
    "QuanvolutionTransformer",
    "QuanvClassifier",
]

_RAW_BOUNDS = (1.0, 1.0, 1.0)


def _as_cloud(sample) -> PointCloud:
    """Accept a PointCloud, a LabeledCloud-like object, or an (N, 3) array."""
    if isinstance(sample, PointCloud):
        return sample
    inner = getattr(sample, "cloud", None)
    if isinstance(inner, PointCloud):
        return inner
    return PointCloud(np.asarray(sample, dtype=np.float64), _RAW_BOUNDS)


def _grid_stack(X, dims: Tuple[int, int, int], threshold: int) -> np.ndarray:
    """Clouds or a pre-voxelized (n, Wv, Hv, Dv) stack -> uint8 grid stack."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        stack = np.ascontiguousarray(X, dtype=np.uint8)
        if stack.shape[1:] != dims:
            raise ValueError(
                f"grids have dims {stack.shape[1:]}, expected {dims}"
            )
        return stack
    grids = np.empty((len(X),) + dims, dtype=np.uint8)
    for i, sample in enumerate(X):
        cloud = normalize_bounds(_as_cloud(sample))
        grids[i] = voxelize(cloud, dims, threshold).occupancy
    return grids


def _cube(dims) -> Tuple[int, int, int]:
    if isinstance(dims, (int, np.integer)):
        return (int(dims),) * 3
    out = tuple(int(d) for d in dims)
    if len(out) != 3:
        raise ValueError(f"grid_dims must be an int or three ints, got {dims!r}")
    return out


class VoxelGridTransformer(BaseEstimator, TransformerMixin):
    """Turn point clouds into binary occupancy grids.

    Parameters
    ----------
    grid_dims : int or (int, int, int), default=32
        Output grid shape; a single number means a cube.
    threshold : int, default=1
        Minimum points per voxel for occupancy.
    """

    def __init__(self, grid_dims=32, threshold=1):
        self.grid_dims = grid_dims
        self.threshold = threshold

    def fit(self, X, y=None):
        self.dims_ = _cube(self.grid_dims)
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "dims_"):
            raise NotFittedError("VoxelGridTransformer is not fitted")
        return _grid_stack(X, self.dims_, self.threshold)


class QuanvolutionTransformer(BaseEstimator, TransformerMixin):
    """Map occupancy grids to flattened quanvolution features.

    With ``filters=None``, ``fit`` draws fresh filter parameters from
    ``seed`` — the classic fixed-random-filter preprocessing.  Passing the
    ``filters`` tuple of a trained checkpoint reuses learned filters
    instead.
    """

    def __init__(self, num_filters=2, kernel_sizes=(2,), stride=2,
                 num_qubits=4, seed=0, threads=1,
                 filters: Optional[Tuple[FilterParams, ...]] = None):
        self.num_filters = num_filters
        self.kernel_sizes = kernel_sizes
        self.stride = stride
        self.num_qubits = num_qubits
        self.seed = seed
        self.threads = threads
        self.filters = filters

    def fit(self, X, y=None):
        if self.filters is not None:
            self.layer_ = QuanvLayer(tuple(self.filters), self.stride)
            return self
        cfg = TrainConfig(
            num_filters=self.num_filters,
            kernel_sizes=tuple(np.atleast_1d(self.kernel_sizes).tolist()),
            stride=self.stride,
            num_qubits=self.num_qubits,
            seed=self.seed,
        ).normalized()
        rng = np.random.default_rng(cfg.seed)
        params = tuple(
            init_filter_params(k, cfg.num_qubits, rng) for k in cfg.kernel_sizes
        )
        self.layer_ = QuanvLayer(params, cfg.stride)
        return self

    def transform(self, X) -> np.ndarray:
        """(n, Wv, Hv, Dv) grids -> (n, channels * sites) feature matrix."""
        if not hasattr(self, "layer_"):
            raise NotFittedError("QuanvolutionTransformer is not fitted")
        grids = np.ascontiguousarray(X, dtype=np.uint8)
        if grids.ndim != 4:
            raise ValueError(f"expected a 4-D grid stack, got shape {grids.shape}")
        features, _, _, _ = _batch_features(grids, self.layer_, self.threads, False)
        return features.reshape(grids.shape[0], -1)

    def feature_distance(self, X) -> float:
        """Mean pairwise distance between per-filter feature blocks."""
        layer = getattr(self, "layer_", None)
        if layer is None:
            raise NotFittedError("QuanvolutionTransformer is not fitted")
        grids = np.ascontiguousarray(X, dtype=np.uint8)
        features, _, _, _ = _batch_features(grids, layer, self.threads, False)
        per_sample = [
            inter_feature_distance(f, layer.num_filters, layer.num_qubits)
            for f in features
        ]
        return float(np.mean(per_sample))


class QuanvClassifier(BaseEstimator, ClassifierMixin):
    """End-to-end classifier: voxelize, quanvolve, dense head.

    ``X`` may be a sequence of point clouds / (N, 3) arrays or an already
    voxelized ``(n, Wv, Hv, Dv)`` uint8 stack; ``y`` holds arbitrary label
    values, surfaced after fitting as ``classes_``.  Training details land
    in ``checkpoint_`` and ``metrics_``.
    """

    def __init__(self, num_filters=2, kernel_sizes=(2,), rf_lambda=0.1,
                 learning_rate=0.001, batch_size=8, epochs=30, grid_dims=16,
                 threshold=1, stride=2, hidden_units=128, seed=0, threads=1):
        self.num_filters = num_filters
        self.kernel_sizes = kernel_sizes
        self.rf_lambda = rf_lambda
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.grid_dims = grid_dims
        self.threshold = threshold
        self.stride = stride
        self.hidden_units = hidden_units
        self.seed = seed
        self.threads = threads

    def _config(self) -> TrainConfig:
        return TrainConfig(
            num_filters=self.num_filters,
            kernel_sizes=tuple(np.atleast_1d(self.kernel_sizes).tolist()),
            rf_lambda=self.rf_lambda,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            grid_dims=_cube(self.grid_dims),
            threshold=self.threshold,
            stride=self.stride,
            hidden_units=self.hidden_units,
            seed=self.seed,
            threads=self.threads,
        ).normalized()

    def fit(self, X, y):
        cfg = self._config()
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(X):
            raise ValueError(
                f"y must be 1-D with one label per sample, got shape {y.shape}"
            )
        self.classes_, labels = np.unique(y, return_inverse=True)
        grids = _grid_stack(X, cfg.grid_dims, cfg.threshold)
        names = [str(c) for c in self.classes_]
        self.checkpoint_, self.metrics_ = train_on_grids(grids, labels, cfg, names)
        return self

    def predict_proba(self, X) -> np.ndarray:
        checkpoint = getattr(self, "checkpoint_", None)
        if checkpoint is None:
            raise NotFittedError("QuanvClassifier is not fitted")
        cfg = checkpoint.config
        grids = _grid_stack(X, cfg.grid_dims, cfg.threshold)
        return predict_proba_grids(checkpoint, grids, self.threads)

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
