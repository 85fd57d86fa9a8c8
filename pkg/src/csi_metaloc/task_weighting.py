"""Task-importance weighting from distributional distances.

Training tasks whose sample distribution sits close to the target task should
steer the meta-update more. The pipeline is:

1. represent each task by a point cloud over its support samples
   (:func:`task_features`),
2. measure the distance between the target cloud and each training cloud
   (Wasserstein-1 by default; CORAL and multi-kernel MMD as alternatives),
3. turn negated distances into simplex weights with a softmax
   (:func:`softmax_weights`),
4. renormalize the weights of each sampled meta-batch so they sum to one
   over the batch (:func:`renormalize_batch`).

Between equal-size empirical clouds with uniform weights, Wasserstein-1
reduces to a min-cost perfect matching on the Euclidean cost matrix, which is
solved exactly; no entropic regularization is involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .csi_data import ChannelNormalizer
from .errors import ArgumentError, ShapeError

_FEATURE_MODES = ("raw", "embed")


@dataclass(frozen=True)
class TaskCloud:
    """Empirical distribution of one task: each row is one sample's features."""

    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ShapeError(f"a task cloud must be a non-empty (n, d) matrix, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ArgumentError("task cloud contains non-finite entries")
        points = points.copy()
        points.flags.writeable = False
        object.__setattr__(self, "points", points)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class TaskWeightVector:
    """Nonnegative weights on the probability simplex."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ShapeError(f"weights must form a non-empty vector, got shape {w.shape}")
        if np.any(w < 0):
            raise ArgumentError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ArgumentError(f"weights must sum to 1 within 1e-9, got {w.sum()!r}")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size

    def __getitem__(self, i: int) -> float:
        return float(self.weights[i])


def task_features(
    task,
    mode: str = "raw",
    spec=None,
    params=None,
    normalizer: ChannelNormalizer | None = None,
) -> TaskCloud:
    """Build a task's point cloud from its support set.

    ``raw`` flattens each support image into a vector. ``embed`` runs the
    support set through the current meta-model and takes the penultimate
    (pre-fc) activations, which requires ``spec`` and ``params``.
    """
    if mode not in _FEATURE_MODES:
        raise ArgumentError(f"unknown feature mode {mode!r}, expected one of {_FEATURE_MODES}")
    records = list(task.support)
    if not records:
        raise ArgumentError(f"task {task.key} has an empty support set")
    batch = np.stack([r.image.pixels for r in records]).astype(np.float64)
    if mode == "raw":
        return TaskCloud(batch.reshape(len(records), -1))
    if spec is None or params is None:
        raise ArgumentError("embed mode needs the current model spec and parameters")
    import torch

    from .inner_model import params_to_tensors, penultimate_features

    if normalizer is not None:
        batch = normalizer.apply(batch)
    x = torch.from_numpy(batch.astype(params.dtype))
    with torch.no_grad():
        feats = penultimate_features(spec, params_to_tensors(params), x)
    return TaskCloud(feats.numpy().astype(np.float64))


def _paired_clouds(a: TaskCloud, b: TaskCloud, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if a.dim != b.dim:
        raise ShapeError(f"cloud dimensions differ: {a.dim} vs {b.dim}")
    pa, pb = a.points, b.points
    if a.size != b.size:
        rng = np.random.default_rng(seed)
        n = min(a.size, b.size)
        if a.size > n:
            pa = pa[np.sort(rng.choice(a.size, size=n, replace=False))]
        else:
            pb = pb[np.sort(rng.choice(b.size, size=n, replace=False))]
    return pa, pb


def wasserstein_distance(a: TaskCloud, b: TaskCloud, seed: int = 0) -> float:
    """Exact W-1 distance between equal-weight empirical clouds.

    Solves the n x n assignment problem on the Euclidean cost matrix and
    returns the mean matched cost: min over pairings of (1/n) sum |a_i -
    b_sigma(i)|. Unequal cloud sizes are reconciled by seeded subsampling of
    the larger cloud.
    """
    pa, pb = _paired_clouds(a, b, seed)
    cost = cdist(pa, pb, metric="euclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def coral_distance(a: TaskCloud, b: TaskCloud) -> float:
    """Second-order statistics alignment: |Cov(A) - Cov(B)|_F^2 / (4 d^2).

    Covariances are unbiased sample covariances; the distance is invariant to
    constant shifts of either cloud.
    """
    if a.dim != b.dim:
        raise ShapeError(f"cloud dimensions differ: {a.dim} vs {b.dim}")
    if a.size < 2 or b.size < 2:
        raise ArgumentError("covariance alignment needs at least 2 points per cloud")
    ca = np.cov(a.points, rowvar=False).reshape(a.dim, a.dim)
    cb = np.cov(b.points, rowvar=False).reshape(b.dim, b.dim)
    d = a.dim
    return float(np.sum((ca - cb) ** 2) / (4.0 * d * d))


def _gaussian_gram(x: np.ndarray, y: np.ndarray, bandwidth: float) -> np.ndarray:
    sq = cdist(x, y, metric="sqeuclidean")
    return np.exp(-sq / (2.0 * bandwidth**2))


def mk_mmd_distance(
    a: TaskCloud, b: TaskCloud, bandwidths: Sequence[float] | None = None
) -> float:
    """Unbiased MMD^2 averaged over a bank of Gaussian kernels.

    The default bank uses bandwidths {m/4, m/2, m, 2m, 4m} where m is the
    median pairwise distance over the joint cloud (falling back to 1.0 when
    the joint cloud is degenerate). Negative unbiased estimates are clamped
    to zero.
    """
    if a.dim != b.dim:
        raise ShapeError(f"cloud dimensions differ: {a.dim} vs {b.dim}")
    if a.size < 2 or b.size < 2:
        raise ArgumentError("the unbiased MMD estimate needs at least 2 points per cloud")
    x, y = a.points, b.points
    if bandwidths is None:
        joint = np.concatenate([x, y])
        pairwise = cdist(joint, joint, metric="euclidean")
        median = float(np.median(pairwise[np.triu_indices(len(joint), k=1)]))
        if median <= 0.0:
            median = 1.0
        bandwidths = [median / 4, median / 2, median, 2 * median, 4 * median]
    n, m = len(x), len(y)
    total = 0.0
    for bw in bandwidths:
        kxx = _gaussian_gram(x, x, bw)
        kyy = _gaussian_gram(y, y, bw)
        kxy = _gaussian_gram(x, y, bw)
        xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
        yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
        xy = kxy.mean()
        total += xx + yy - 2.0 * xy
    return max(total / len(bandwidths), 0.0)


_DISTANCE_FUNCTIONS = {
    "w_dis": wasserstein_distance,
    "coral": coral_distance,
    "mk_mmd": mk_mmd_distance,
}


def distance_function(mode: str):
    if mode not in _DISTANCE_FUNCTIONS:
        raise ArgumentError(f"unknown weighting mode {mode!r}, expected one of {sorted(_DISTANCE_FUNCTIONS)}")
    return _DISTANCE_FUNCTIONS[mode]


def softmax_weights(distances: Sequence[float] | np.ndarray) -> TaskWeightVector:
    """Contribution weights: softmax of negated distances, stabilized."""
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or d.size < 1:
        raise ShapeError(f"distances must form a non-empty vector, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ArgumentError("distances must be finite")
    z = -d
    z = z - z.max()
    e = np.exp(z)
    return TaskWeightVector(e / e.sum())


def renormalize_batch(raw_weights: Sequence[float] | np.ndarray) -> TaskWeightVector:
    """Rescale a batch's raw weights to sum to one over the batch."""
    w = np.asarray(raw_weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise ShapeError(f"batch weights must form a non-empty vector, got shape {w.shape}")
    if np.any(w < 0):
        raise ArgumentError("batch weights must be nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise ArgumentError("batch weights must not all be zero")
    return TaskWeightVector(w / total)


def compute_task_distances(
    target_task,
    training_tasks: Sequence,
    mode: str = "w_dis",
    feature_mode: str = "raw",
    spec=None,
    params=None,
    normalizer: ChannelNormalizer | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Distance from the target task to each training task, in task order."""
    fn = distance_function(mode)
    target_cloud = task_features(target_task, feature_mode, spec, params, normalizer)
    distances = np.empty(len(training_tasks), dtype=np.float64)
    for i, task in enumerate(training_tasks):
        cloud = task_features(task, feature_mode, spec, params, normalizer)
        if mode == "w_dis":
            distances[i] = fn(target_cloud, cloud, seed=seed)
        else:
            distances[i] = fn(target_cloud, cloud)
    return distances


def weight_report(
    task_keys: Sequence,
    distances: np.ndarray,
    raw_weights: TaskWeightVector,
    batch_weights: Mapping[int, float] | None = None,
) -> dict[str, dict[str, float]]:
    """JSON-ready report: task id -> distance, raw weight, last batch weight."""
    report = {}
    for i, key in enumerate(task_keys):
        entry = {"distance": float(distances[i]), "raw_weight": float(raw_weights[i])}
        if batch_weights is not None and i in batch_weights:
            entry["batch_weight"] = float(batch_weights[i])
        report[str(key)] = entry
    return report
