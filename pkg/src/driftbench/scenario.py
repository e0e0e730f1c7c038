"""Task streams over a FeatureSet: incremental, lifelong, and mixed
orderings, task-order permutation, and subset sampling.

Builders are pure: data layout is fixed (sorted labels, contiguous groups)
and randomness enters only through permute_tasks / sample_subset seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureSet
from .errors import ConfigurationError, ScenarioError
from .rng import Xoshiro256StarStar, derive_seed

INCREMENTAL = "incremental"
LIFELONG = "lifelong"
MIXED = "mixed"


@dataclass(frozen=True)
class TaskView:
    """An ordered slice of the parent FeatureSet forming one task."""

    task_index: int
    example_indices: np.ndarray
    classes_present: frozenset[int]
    domains_present: frozenset[int]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TaskView):
            return NotImplemented
        return (
            self.task_index == other.task_index
            and np.array_equal(self.example_indices, other.example_indices)
            and self.classes_present == other.classes_present
            and self.domains_present == other.domains_present
        )

    def __hash__(self):
        return hash((self.task_index, self.classes_present, self.domains_present))


@dataclass(frozen=True)
class Scenario:
    source: FeatureSet
    tasks: tuple[TaskView, ...]
    drift_kind: str

    @property
    def nb_tasks(self) -> int:
        return len(self.tasks)

    def describe(self) -> str:
        return f"{self.drift_kind}[{self.nb_tasks}]"


def _make_view(feature_set: FeatureSet, task_index: int, indices: np.ndarray) -> TaskView:
    if len(indices) == 0:
        raise ScenarioError(f"task {task_index} would be empty")
    return TaskView(
        task_index=task_index,
        example_indices=np.asarray(indices, dtype=np.int64),
        classes_present=frozenset(int(c) for c in np.unique(feature_set.class_labels[indices])),
        domains_present=frozenset(int(d) for d in np.unique(feature_set.domain_labels[indices])),
    )


def build_incremental(feature_set: FeatureSet, nb_tasks: int) -> Scenario:
    """Partition sorted classes into nb_tasks contiguous groups of equal size."""
    classes = feature_set.observed_classes()
    if nb_tasks < 1:
        raise ConfigurationError("nb_tasks must be >= 1")
    if len(classes) % nb_tasks != 0:
        raise ConfigurationError(
            f"nb_tasks={nb_tasks} does not divide the {len(classes)} observed classes"
        )
    per_task = len(classes) // nb_tasks
    tasks = []
    for t in range(nb_tasks):
        group = classes[t * per_task : (t + 1) * per_task]
        indices = np.flatnonzero(np.isin(feature_set.class_labels, group))
        tasks.append(_make_view(feature_set, t, indices))
    return Scenario(feature_set, tuple(tasks), INCREMENTAL)


def build_lifelong(feature_set: FeatureSet, nb_tasks: int) -> Scenario:
    """Partition sorted domains into nb_tasks groups; every class must appear in every task."""
    domains = feature_set.observed_domains()
    if nb_tasks < 1:
        raise ConfigurationError("nb_tasks must be >= 1")
    if nb_tasks > len(domains):
        raise ConfigurationError(
            f"nb_tasks={nb_tasks} exceeds the {len(domains)} observed domains"
        )
    if len(domains) % nb_tasks != 0:
        raise ConfigurationError(
            f"nb_tasks={nb_tasks} does not divide the {len(domains)} observed domains"
        )
    per_task = len(domains) // nb_tasks
    full_class_set = frozenset(int(c) for c in feature_set.observed_classes())
    tasks = []
    for t in range(nb_tasks):
        group = domains[t * per_task : (t + 1) * per_task]
        indices = np.flatnonzero(np.isin(feature_set.domain_labels, group))
        view = _make_view(feature_set, t, indices)
        if view.classes_present != full_class_set:
            missing = sorted(full_class_set - view.classes_present)
            raise ScenarioError(
                f"lifelong task {t} (domains {list(group)}) is missing classes {missing}"
            )
        tasks.append(view)
    return Scenario(feature_set, tuple(tasks), LIFELONG)


def build_mixed(feature_set: FeatureSet) -> Scenario:
    """One task per (class, domain) pair, ascending order before permutation."""
    classes = feature_set.observed_classes()
    domains = feature_set.observed_domains()
    tasks = []
    t = 0
    for c in classes:
        for d in domains:
            indices = np.flatnonzero(
                (feature_set.class_labels == c) & (feature_set.domain_labels == d)
            )
            if len(indices) == 0:
                raise ScenarioError(f"(class {c}, domain {d}) pair has no examples")
            tasks.append(_make_view(feature_set, t, indices))
            t += 1
    return Scenario(feature_set, tuple(tasks), MIXED)


def permute_tasks(scenario: Scenario, seed: int) -> Scenario:
    """Reorder tasks with a seeded uniform permutation; seed 0 keeps the original order."""
    if seed == 0:
        return scenario
    rng = Xoshiro256StarStar(derive_seed(seed, "task-order"))
    order = rng.permutation(scenario.nb_tasks)
    tasks = tuple(scenario.tasks[i] for i in order)
    return Scenario(scenario.source, tasks, scenario.drift_kind)


def sample_subset(
    feature_set: FeatureSet, size: int, seed: int, stratified: bool = False
) -> FeatureSet:
    """Uniform sample without replacement of min(size, n) examples.

    Stratified mode draws proportionally per class; it is off by default to
    match plain random retention.
    """
    if size < 1:
        raise ConfigurationError("subset size must be >= 1")
    n = len(feature_set)
    if size >= n:
        return feature_set
    rng = Xoshiro256StarStar(derive_seed(seed, "subset", size))
    if not stratified:
        return feature_set.take(rng.sample_without_replacement(n, size))
    picked = []
    classes = feature_set.observed_classes()
    # Largest-remainder apportionment of the budget over classes.
    counts = np.array([np.sum(feature_set.class_labels == c) for c in classes])
    quota = size * counts / counts.sum()
    alloc = np.floor(quota).astype(int)
    remainder_order = np.argsort(-(quota - alloc), kind="stable")
    for i in remainder_order[: size - alloc.sum()]:
        alloc[i] += 1
    for c, k in zip(classes, alloc):
        pool = np.flatnonzero(feature_set.class_labels == c)
        if k > 0:
            picked.append(pool[rng.sample_without_replacement(len(pool), int(k))])
    return feature_set.take(np.sort(np.concatenate(picked)))
