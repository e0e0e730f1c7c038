import numpy as np
import pytest

from driftbench.data import SyntheticSpec, generate_synthetic
from driftbench.errors import ConfigurationError, ValidationError
from driftbench.gradient_heads import HeadKind, MaskMode, init_head
from driftbench.rng import Xoshiro256StarStar
from driftbench.scenario import build_incremental, build_lifelong
from driftbench.similarity_heads import PrototypeState, SldaState
from driftbench.training import (
    ReplayBuffer,
    ReplayConfig,
    TrainConfig,
    compose_replay_batch,
    evaluate,
    train_scenario,
    train_subset,
    train_with_replay,
)


def make_data(stddev=0.3, num_classes=10, modes=2, train_per_mode=10, test_per_mode=5, dim=8, seed=0):
    spec = SyntheticSpec(
        num_classes=num_classes, modes_per_class=modes, dim=dim,
        center_scale=1.0, stddev=stddev, train_per_mode=train_per_mode,
        test_per_mode=test_per_mode, seed=seed,
    )
    return generate_synthetic(spec)


class TestEvaluate:
    def test_perfect_predictor(self):
        train, test = make_data(stddev=0.15, dim=16)
        scenario = build_incremental(train, 5)
        head = SldaState(test.num_classes, test.dim)
        for ex in train:
            head.observe(ex.features, ex.class_label)
        overall, per_task, per_class = evaluate(head, test, scenario)
        assert overall == 1.0
        assert np.all(per_task == 1.0)
        assert np.all(per_class[np.isfinite(per_class)] == 1.0)

    def test_constant_predictor_on_balanced_set(self):
        train, test = make_data()
        scenario = build_incremental(train, 5)
        head = PrototypeState(PrototypeState.MEAN, test.num_classes, test.dim)
        head.observe(np.zeros(test.dim), 0)  # only class 0 ever predicted
        overall, _, _ = evaluate(head, test, scenario)
        assert overall == pytest.approx(0.1)

    def test_overall_is_weighted_mean_of_per_task(self):
        train, test = make_data(num_classes=6, stddev=1.5)
        scenario = build_incremental(train, 3)
        head = init_head(HeadKind.LINEAR, 6, test.dim, seed=3)
        overall, per_task, _ = evaluate(head, test, scenario)
        weights = []
        for task in scenario.tasks:
            classes = np.fromiter(task.classes_present, dtype=np.int64)
            weights.append(np.isin(test.class_labels, classes).sum())
        weighted = np.average(per_task, weights=weights)
        assert overall == pytest.approx(weighted, abs=1e-12)

    def test_empty_test_set_rejected(self):
        train, test = make_data()
        scenario = build_incremental(train, 5)
        head = init_head(HeadKind.LINEAR, 10, train.dim, seed=0)
        empty = train.take(np.array([], dtype=int))
        with pytest.raises(ValidationError):
            evaluate(head, empty, scenario)


class TestTrainScenario:
    def test_record_count_gradient_head(self):
        train, test = make_data()
        scenario = build_incremental(train, 5)
        head = init_head(HeadKind.LINEAR, 10, train.dim, seed=1)
        config = TrainConfig(epochs_per_task=5, batch_size=16, lr=0.01, shuffle_seed=0)
        records = train_scenario(head, scenario, test, config)
        assert len(records) == 25
        assert [(r.task_index, r.epoch) for r in records] == [
            (t, e) for t in range(5) for e in range(5)
        ]

    def test_record_count_eval_at_task_end_only(self):
        train, test = make_data()
        scenario = build_incremental(train, 5)
        head = init_head(HeadKind.LINEAR, 10, train.dim, seed=1)
        config = TrainConfig(epochs_per_task=3, batch_size=16, lr=0.01, eval_every_epoch=False)
        records = train_scenario(head, scenario, test, config)
        assert len(records) == 5
        assert all(r.epoch == 2 for r in records)

    def test_similarity_heads_single_pass(self):
        train, test = make_data()
        scenario = build_incremental(train, 5)
        head = SldaState(10, train.dim)
        config = TrainConfig(epochs_per_task=5)
        records = train_scenario(head, scenario, test, config)
        assert len(records) == 5  # one observe pass per task, one record each
        assert head.total == len(train)

    def test_determinism(self):
        train, test = make_data()
        scenario = build_incremental(train, 5)
        config = TrainConfig(epochs_per_task=2, batch_size=8, lr=0.1, shuffle_seed=7)
        runs = []
        for _ in range(2):
            head = init_head(HeadKind.WEIGHT_NORM, 10, train.dim, seed=2)
            runs.append(train_scenario(head, scenario, test, config))
        for a, b in zip(*runs):
            assert a.overall_test_accuracy == b.overall_test_accuracy
            assert np.array_equal(
                a.per_task_test_accuracy, b.per_task_test_accuracy, equal_nan=True
            )

    def test_single_task_scenario_is_iid_training(self):
        train, test = make_data(stddev=0.15, dim=16)
        scenario = build_incremental(train, 1)
        head = init_head(HeadKind.WEIGHT_NORM, 10, train.dim, seed=3)
        config = TrainConfig(epochs_per_task=5, batch_size=16, lr=0.1)
        records = train_scenario(head, scenario, test, config)
        assert records[-1].overall_test_accuracy >= 0.9

    def test_incremental_linear_forgets_early_tasks(self):
        train, test = make_data(stddev=0.2, train_per_mode=20)
        scenario = build_incremental(train, 5)
        head = init_head(HeadKind.LINEAR, 10, train.dim, seed=4)
        config = TrainConfig(epochs_per_task=5, batch_size=16, lr=0.01)
        records = train_scenario(head, scenario, test, config)
        final = records[-1]
        # last-task accuracy dominates; task 0 collapses
        assert final.per_task_test_accuracy[4] > 0.85
        assert final.per_task_test_accuracy[0] < 0.4

    def test_masked_head_trains_with_its_own_mask(self):
        train, test = make_data(stddev=0.2)
        scenario = build_incremental(train, 5)
        head = init_head(HeadKind.COS_LAYER, 10, train.dim, seed=5, mask=MaskMode.SINGLE)
        init_A = head.A.copy()
        config = TrainConfig(epochs_per_task=1, batch_size=16, lr=0.1)
        train_scenario(head, scenario, test, config)
        # every class was a target at some point, so every row moved
        assert np.all(np.any(head.A != init_A, axis=1))


class TestTrainSubset:
    def test_subset_all_weightnorm_separable(self):
        train, test = make_data(stddev=0.15, dim=16, train_per_mode=20)
        head = init_head(HeadKind.WEIGHT_NORM, 10, train.dim, seed=6)
        config = TrainConfig(epochs_per_task=5, batch_size=16, lr=0.1)
        record = train_subset(head, train, test, len(train), seed=0, config=config)
        assert record.overall_test_accuracy >= 0.95

    def test_tiny_subset_meanlayer_beats_chance(self):
        train, test = make_data(stddev=0.5)
        head = PrototypeState(PrototypeState.MEAN, 10, train.dim)
        config = TrainConfig()
        record = train_subset(head, train, test, 10, seed=1, config=config)
        assert record.overall_test_accuracy > 1.0 / 10


class TestReplay:
    def test_buffer_respects_cap(self):
        train, _ = make_data(train_per_mode=30)
        scenario = build_incremental(train, 5)
        buffer = ReplayBuffer(cap_per_class=7, rng=Xoshiro256StarStar(0))
        buffer.add_task(train, scenario.tasks[0])
        for c, pool in buffer.slots.items():
            assert len(pool) <= 7
            assert np.all(train.class_labels[pool] == c)

    def test_balance_one_gives_equal_representation(self):
        train, _ = make_data()
        scenario = build_incremental(train, 5)
        rng = Xoshiro256StarStar(1)
        buffer = ReplayBuffer(cap_per_class=100, rng=rng)
        buffer.add_task(train, scenario.tasks[0])
        buffer.add_task(train, scenario.tasks[1])
        task = scenario.tasks[2]
        new_pools = {
            int(c): task.example_indices[train.class_labels[task.example_indices] == c]
            for c in sorted(task.classes_present)
        }
        counts = np.zeros(10)
        for _ in range(4000):
            batch = compose_replay_batch(new_pools, buffer, 6, 1.0, rng)
            for c in train.class_labels[batch]:
                counts[c] += 1
        active = counts[counts > 0]
        assert len(active) == 6  # 2 new + 4 buffered classes
        freqs = active / active.sum()
        assert np.max(np.abs(freqs - 1 / 6)) < 0.02

    def test_composition_matches_balance_distribution(self):
        # 2 new classes weight 1, 2 old classes weight 0.25 -> p_new = 0.4, p_old = 0.1
        train, _ = make_data(num_classes=4)
        scenario = build_incremental(train, 2)
        rng = Xoshiro256StarStar(2)
        buffer = ReplayBuffer(cap_per_class=100, rng=rng)
        buffer.add_task(train, scenario.tasks[0])
        task = scenario.tasks[1]
        new_pools = {
            int(c): task.example_indices[train.class_labels[task.example_indices] == c]
            for c in sorted(task.classes_present)
        }
        counts = np.zeros(4)
        n_batches, batch_size = 10000, 8
        for _ in range(n_batches):
            batch = compose_replay_batch(new_pools, buffer, batch_size, 0.25, rng)
            for c in train.class_labels[batch]:
                counts[c] += 1
        freqs = counts / (n_batches * batch_size)
        expected = np.array([0.1, 0.1, 0.4, 0.4])
        assert np.max(np.abs(freqs - expected)) < 0.02

    def test_requires_incremental_scenario(self):
        train, test = make_data(modes=4)
        scenario = build_lifelong(train, 4)
        head = init_head(HeadKind.WEIGHT_NORM, 10, train.dim, seed=0)
        with pytest.raises(ConfigurationError):
            train_with_replay(head, scenario, test, TrainConfig(), ReplayConfig())

    def test_bad_balance_rejected(self):
        with pytest.raises(ConfigurationError):
            ReplayConfig(replay_balance=0.0).validate()
        with pytest.raises(ConfigurationError):
            ReplayConfig(replay_balance=1.5).validate()

    def test_replay_run_end_to_end(self):
        train, test = make_data(stddev=0.2)
        scenario = build_incremental(train, 5)
        head = init_head(HeadKind.WEIGHT_NORM, 10, train.dim, seed=1, mask=MaskMode.GROUP)
        config = TrainConfig(epochs_per_task=2, batch_size=8, lr=0.1, shuffle_seed=3)
        records = train_with_replay(
            head, scenario, test, config, ReplayConfig(replay_balance=0.5, selection_seed=1)
        )
        assert len(records) == 10
        # replayed training retains early tasks far better than forgetting to ~0
        assert records[-1].per_task_test_accuracy[0] > 0.3

    def test_replay_determinism(self):
        train, test = make_data()
        scenario = build_incremental(train, 5)
        config = TrainConfig(epochs_per_task=1, batch_size=8, lr=0.1, shuffle_seed=5)
        finals = []
        for _ in range(2):
            head = init_head(HeadKind.WEIGHT_NORM, 10, train.dim, seed=2)
            records = train_with_replay(
                head, scenario, test, config, ReplayConfig(replay_balance=0.5, selection_seed=9)
            )
            finals.append(records[-1].overall_test_accuracy)
        assert finals[0] == finals[1]
