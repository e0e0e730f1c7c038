"""Continual training protocols and accuracy metrics.

The regime is single-head: no task label ever reaches the head, at training
or at test time. Gradient heads run epochs_per_task epochs of shuffled
mini-batches per task; similarity heads observe each task exactly once
(re-observing would corrupt their counts). After every epoch the head is
evaluated on the full test set, including classes it has never seen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureSet
from .errors import ConfigurationError, ShapeError, ValidationError
from .gradient_heads import (
    GradientHead,
    MaskMode,
    loss_and_gradient,
    sgd_momentum_step,
    _logits_batch,
)
from .rng import Xoshiro256StarStar, derive_seed
from .scenario import INCREMENTAL, LIFELONG, Scenario, TaskView
from .similarity_heads import KnnState, PrototypeState, SldaState

SIMILARITY_TYPES = (KnnState, PrototypeState, SldaState)


@dataclass(frozen=True)
class TrainConfig:
    epochs_per_task: int = 5
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    shuffle_seed: int = 0
    eval_every_epoch: bool = True

    def validate(self) -> None:
        if self.epochs_per_task < 1:
            raise ConfigurationError("epochs_per_task must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass(frozen=True)
class ReplayConfig:
    buffer_cap_per_class: int = 2000
    replay_balance: float = 1.0
    selection_seed: int = 0

    def validate(self) -> None:
        if self.buffer_cap_per_class < 1:
            raise ConfigurationError("buffer_cap_per_class must be >= 1")
        if not 0 < self.replay_balance <= 1:
            raise ConfigurationError("replay_balance must lie in (0, 1]")


@dataclass
class RunRecord:
    run_id: str
    head: str
    scenario: str
    task_index: int
    epoch: int
    overall_test_accuracy: float
    per_task_test_accuracy: np.ndarray
    per_class_accuracy: np.ndarray
    wall_time: float = field(default=0.0, compare=False)


def _is_similarity(head) -> bool:
    return isinstance(head, SIMILARITY_TYPES)


def _check_dims(head, feature_set: FeatureSet) -> None:
    head_dim = head.dim
    if head_dim != feature_set.dim:
        raise ShapeError(f"head dimension {head_dim} != feature dimension {feature_set.dim}")


def predict_batch(head, Z: np.ndarray) -> np.ndarray:
    if _is_similarity(head):
        return head.predict_batch(Z)
    return np.argmax(_logits_batch(head, np.asarray(Z, dtype=np.float64)), axis=1)


def _task_footprint(task: TaskView, test_set: FeatureSet, drift_kind: str) -> np.ndarray:
    classes = np.fromiter(task.classes_present, dtype=np.int64)
    domains = np.fromiter(task.domains_present, dtype=np.int64)
    if drift_kind == INCREMENTAL:
        return np.isin(test_set.class_labels, classes)
    if drift_kind == LIFELONG:
        return np.isin(test_set.domain_labels, domains)
    return np.isin(test_set.class_labels, classes) & np.isin(test_set.domain_labels, domains)


def evaluate(head, test_set: FeatureSet, scenario: Scenario) -> tuple[float, np.ndarray, np.ndarray]:
    """(overall, per-task, per-class) accuracy on the full test set.

    Per-task accuracy restricts to each task's class/domain footprint in the
    test set (NaN when the footprint is empty there). Per-class entries are
    NaN for labels absent from the test set.
    """
    if len(test_set) == 0:
        raise ValidationError("test set is empty")
    _check_dims(head, test_set)
    predictions = predict_batch(head, test_set.features)
    correct = predictions == test_set.class_labels
    overall = float(correct.mean())
    per_task = np.full(scenario.nb_tasks, np.nan)
    for i, task in enumerate(scenario.tasks):
        mask = _task_footprint(task, test_set, scenario.drift_kind)
        if mask.any():
            per_task[i] = float(correct[mask].mean())
    per_class = np.full(test_set.num_classes, np.nan)
    for c in range(test_set.num_classes):
        mask = test_set.class_labels == c
        if mask.any():
            per_class[c] = float(correct[mask].mean())
    return overall, per_task, per_class


def _record(run_id, head, scenario, task_pos, epoch, test_set, started) -> RunRecord:
    overall, per_task, per_class = evaluate(head, test_set, scenario)
    return RunRecord(
        run_id=run_id,
        head=head.describe(),
        scenario=scenario.describe(),
        task_index=task_pos,
        epoch=epoch,
        overall_test_accuracy=overall,
        per_task_test_accuracy=per_task,
        per_class_accuracy=per_class,
        wall_time=time.perf_counter() - started,
    )


def _observe_task(head, feature_set: FeatureSet, task: TaskView) -> None:
    for i in task.example_indices:
        head.observe(feature_set.features[i], int(feature_set.class_labels[i]))


def _gradient_epoch(
    head: GradientHead,
    feature_set: FeatureSet,
    indices: np.ndarray,
    config: TrainConfig,
    epoch_seed: int,
) -> None:
    order = indices.copy()
    Xoshiro256StarStar(epoch_seed).shuffle(order)
    for start in range(0, len(order), config.batch_size):
        batch = order[start : start + config.batch_size]
        Z = feature_set.features[batch]
        Y = feature_set.class_labels[batch]
        _, grads = loss_and_gradient(head, Z, Y, mask=head.mask)
        sgd_momentum_step(head, grads, config.lr, config.momentum)


def train_scenario(
    head,
    scenario: Scenario,
    test_set: FeatureSet,
    config: TrainConfig,
    run_id: str = "run",
) -> list[RunRecord]:
    """Train over the scenario's tasks in order; evaluate on the full test set."""
    config.validate()
    train_set = scenario.source
    _check_dims(head, train_set)
    _check_dims(head, test_set)
    started = time.perf_counter()
    records = []
    for task_pos, task in enumerate(scenario.tasks):
        if _is_similarity(head):
            _observe_task(head, train_set, task)
            records.append(_record(run_id, head, scenario, task_pos, 0, test_set, started))
            continue
        # Fresh momentum per task, so masked classes cannot drift through
        # velocity accumulated on earlier tasks.
        head.reset_velocity()
        for epoch in range(config.epochs_per_task):
            epoch_seed = derive_seed(config.shuffle_seed, "shuffle", task_pos, epoch)
            _gradient_epoch(head, train_set, task.example_indices, config, epoch_seed)
            if config.eval_every_epoch or epoch == config.epochs_per_task - 1:
                records.append(
                    _record(run_id, head, scenario, task_pos, epoch, test_set, started)
                )
    return records


def train_subset(
    head,
    train_set: FeatureSet,
    test_set: FeatureSet,
    subset_size: int,
    seed: int,
    config: TrainConfig,
    run_id: str = "subset",
) -> RunRecord:
    """Sample a training subset, train i.i.d. as a single task, evaluate once."""
    from .scenario import sample_subset

    subset = sample_subset(train_set, subset_size, seed)
    indices = np.arange(len(subset))
    task = TaskView(
        task_index=0,
        example_indices=indices,
        classes_present=frozenset(int(c) for c in subset.observed_classes()),
        domains_present=frozenset(int(d) for d in subset.observed_domains()),
    )
    scenario = Scenario(subset, (task,), INCREMENTAL)
    records = train_scenario(head, scenario, test_set, config, run_id)
    return records[-1]


class ReplayBuffer:
    """Per-class reservoir of training indices, capped and randomly selected."""

    def __init__(self, cap_per_class: int, rng: Xoshiro256StarStar):
        self.cap = cap_per_class
        self._rng = rng
        self.slots: dict[int, np.ndarray] = {}

    def add_task(self, feature_set: FeatureSet, task: TaskView) -> None:
        for c in sorted(task.classes_present):
            pool = task.example_indices[
                feature_set.class_labels[task.example_indices] == c
            ]
            if len(pool) > self.cap:
                pool = pool[self._rng.sample_without_replacement(len(pool), self.cap)]
            self.slots[c] = pool

    def classes(self) -> list[int]:
        return sorted(self.slots)


def compose_replay_batch(
    new_pools: dict[int, np.ndarray],
    buffer: ReplayBuffer,
    batch_size: int,
    replay_balance: float,
    rng: Xoshiro256StarStar,
) -> np.ndarray:
    """Sample one mini-batch with per-class weights: new classes 1, buffered
    classes replay_balance, realizing the target ratio in expectation."""
    classes = sorted(new_pools) + buffer.classes()
    weights = np.array(
        [1.0] * len(new_pools) + [replay_balance] * len(buffer.classes())
    )
    cum = np.cumsum(weights / weights.sum())
    batch = np.empty(batch_size, dtype=np.int64)
    for i in range(batch_size):
        slot = min(int(np.searchsorted(cum, rng.uniform(), side="right")), len(classes) - 1)
        c = classes[slot]
        pool = new_pools.get(c)
        if pool is None:
            pool = buffer.slots[c]
        batch[i] = pool[rng.randbelow(len(pool))]
    return batch


def train_with_replay(
    head: GradientHead,
    scenario: Scenario,
    test_set: FeatureSet,
    config: TrainConfig,
    replay: ReplayConfig,
    run_id: str = "replay",
) -> list[RunRecord]:
    """Incremental training with a vanilla replay buffer.

    After each task, up to buffer_cap_per_class randomly selected examples
    per new class enter the buffer. Later mini-batches are composed by
    weighted class sampling so each buffered class contributes
    replay_balance x the instances of a new class, in expectation.
    """
    config.validate()
    replay.validate()
    if scenario.drift_kind != INCREMENTAL:
        raise ConfigurationError("replay training requires an incremental scenario")
    if not isinstance(head, GradientHead):
        raise ConfigurationError("replay training applies to gradient heads")
    train_set = scenario.source
    _check_dims(head, train_set)
    _check_dims(head, test_set)
    selection_rng = Xoshiro256StarStar(derive_seed(replay.selection_seed, "replay-select"))
    buffer = ReplayBuffer(replay.buffer_cap_per_class, selection_rng)
    started = time.perf_counter()
    records = []
    for task_pos, task in enumerate(scenario.tasks):
        head.reset_velocity()
        new_pools = {
            int(c): task.example_indices[
                train_set.class_labels[task.example_indices] == c
            ]
            for c in sorted(task.classes_present)
        }
        n_batches = max(1, -(-len(task.example_indices) // config.batch_size))
        for epoch in range(config.epochs_per_task):
            if buffer.slots:
                batch_rng = Xoshiro256StarStar(
                    derive_seed(config.shuffle_seed, "replay-batch", task_pos, epoch)
                )
                for _ in range(n_batches):
                    batch = compose_replay_batch(
                        new_pools, buffer, config.batch_size, replay.replay_balance, batch_rng
                    )
                    Z = train_set.features[batch]
                    Y = train_set.class_labels[batch]
                    _, grads = loss_and_gradient(head, Z, Y, mask=head.mask)
                    sgd_momentum_step(head, grads, config.lr, config.momentum)
            else:
                epoch_seed = derive_seed(config.shuffle_seed, "shuffle", task_pos, epoch)
                _gradient_epoch(head, train_set, task.example_indices, config, epoch_seed)
            if config.eval_every_epoch or epoch == config.epochs_per_task - 1:
                records.append(
                    _record(run_id, head, scenario, task_pos, epoch, test_set, started)
                )
        buffer.add_task(train_set, task)
    return records
