"""Task construction: RP splits, support/query sampling, meta-batches.

A task is one (subarea, posture) localization problem. Its support set holds
``k_support`` samples from each support RP and its query set ``k_query``
samples from each query RP; support and query RP pools partition the
subarea's RPs, so no location (let alone sample) leaks between the two sides.
The same per-area split is shared by every posture of that area, mirroring a
survey where the split is fixed once per site.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .csi_data import FingerprintDataset, FingerprintRecord, RefPoint, SampleRef, TaskKey
from .errors import ArgumentError, DataError


@dataclass(frozen=True)
class RPSplit:
    """Disjoint support/query reference-point pools of one subarea."""

    support: tuple[RefPoint, ...]
    query: tuple[RefPoint, ...]

    def __post_init__(self):
        support_ids = {rp.id for rp in self.support}
        query_ids = {rp.id for rp in self.query}
        if support_ids & query_ids:
            raise ArgumentError(f"support/query RP pools overlap: {sorted(support_ids & query_ids)}")
        if not self.support or not self.query:
            raise ArgumentError("both support and query RP pools must be non-empty")


@dataclass(frozen=True)
class Task:
    """One localization task with materialized support and query sets."""

    key: TaskKey
    support: tuple[FingerprintRecord, ...]
    query: tuple[FingerprintRecord, ...]
    split: RPSplit

    @property
    def area_id(self) -> int:
        return self.key.area_id

    @property
    def posture_id(self) -> int:
        return self.key.posture_id


@dataclass(frozen=True)
class TaskSet:
    """Training tasks plus the held-out target task."""

    training_tasks: tuple[Task, ...]
    target_task: Task

    def __post_init__(self):
        if not self.training_tasks:
            raise ArgumentError("a task set needs at least one training task")
        if any(t.key == self.target_task.key for t in self.training_tasks):
            raise ArgumentError(f"target task {self.target_task.key} also appears in the training list")

    @property
    def num_training_tasks(self) -> int:
        return len(self.training_tasks)


def split_rps(
    rps: Sequence[RefPoint], support_fraction: float, seed: int
) -> RPSplit:
    """Deterministic seeded partition of a subarea's RPs.

    The support side gets ``round(fraction * len(rps))`` points (half-up
    rounding); the remainder becomes the query pool. Both sides must end up
    non-empty.
    """
    rps = list(rps)
    if len(rps) < 2:
        raise ArgumentError(f"need at least 2 RPs to split, got {len(rps)}")
    if not (0.0 < support_fraction < 1.0):
        raise ArgumentError(f"support_fraction must lie in (0, 1), got {support_fraction}")
    n_support = int(np.floor(support_fraction * len(rps) + 0.5))
    if n_support == 0 or n_support == len(rps):
        raise ArgumentError(
            f"support_fraction {support_fraction} leaves an empty pool for {len(rps)} RPs"
        )
    order = np.random.default_rng(seed).permutation(len(rps))
    support = tuple(rps[i] for i in sorted(order[:n_support]))
    query = tuple(rps[i] for i in sorted(order[n_support:]))
    return RPSplit(support, query)


def _draw_records(
    samples_by_rp: Mapping[int, Sequence],
    key: TaskKey,
    pool: Sequence[RefPoint],
    k: int,
    rng: np.random.Generator,
) -> list[FingerprintRecord]:
    records = []
    for rp in pool:
        stored = samples_by_rp.get(rp.id, ())
        if len(stored) < k:
            raise DataError(
                f"task {key} rp {rp.id} has {len(stored)} stored samples, need {k}"
            )
        chosen = rng.choice(len(stored), size=k, replace=False)
        for idx in sorted(int(i) for i in chosen):
            records.append(
                FingerprintRecord(rp, stored[idx], SampleRef(key.area_id, key.posture_id, rp.id, idx))
            )
    return records


def sample_task(
    dataset: FingerprintDataset,
    key: TaskKey,
    split: RPSplit,
    k_support: int,
    k_query: int,
    seed: int,
) -> Task:
    """Draw a task: k_support samples per support RP, k_query per query RP.

    Sampling is without replacement within each RP; every RP gets its own
    substream so changing one pool does not reshuffle the other.
    """
    if k_support < 1 or k_query < 1:
        raise ArgumentError("k_support and k_query must be >= 1")
    samples_by_rp = dataset.samples[key]
    sup_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key.area_id, key.posture_id, 0)))
    )
    qry_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key.area_id, key.posture_id, 1)))
    )
    support = _draw_records(samples_by_rp, key, split.support, k_support, sup_rng)
    query = _draw_records(samples_by_rp, key, split.query, k_query, qry_rng)
    return Task(key, tuple(support), tuple(query), split)


def sample_meta_batch(task_set: TaskSet, batch_size: int, seed: int) -> list[Task]:
    """Uniformly draw ``batch_size`` distinct training tasks."""
    m = task_set.num_training_tasks
    if batch_size < 1 or batch_size > m:
        raise ArgumentError(f"batch size {batch_size} must lie in [1, {m}]")
    idx = np.random.default_rng(seed).choice(m, size=batch_size, replace=False)
    return [task_set.training_tasks[int(i)] for i in idx]


def build_task_set(
    dataset: FingerprintDataset,
    target_key: TaskKey,
    k_support: int,
    k_query: int,
    support_fraction: float = 0.8,
    seed: int = 0,
) -> TaskSet:
    """Assemble the full task set around one held-out target task.

    Every subarea is split into support/query RP pools once (seeded per
    area); all postures of the area share that split. The target task is
    sampled with the same (k_support, k_query) and excluded from training.
    """
    if target_key not in dataset.samples:
        raise DataError(f"target task {target_key} not present in the dataset")
    splits = {
        area.id: split_rps(dataset.area_rps(area.id), support_fraction, seed=seed + area.id)
        for area in dataset.areas
    }
    training = []
    target = None
    for key in dataset.task_keys:
        task = sample_task(dataset, key, splits[key.area_id], k_support, k_query, seed)
        if key == target_key:
            target = task
        else:
            training.append(task)
    assert target is not None
    return TaskSet(tuple(training), target)
