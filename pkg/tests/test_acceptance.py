"""Acceptance suite: one test per criterion, one [PASS]/[FAIL] line each.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Every experiment here is fully seeded, so results are identical on rerun.
"""

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import pytest

from driftbench.data import FeatureSet, SyntheticSpec, generate_synthetic, read_feature_file, write_feature_file
from driftbench.errors import CorruptionError, FormatError, ValidationError
from driftbench.gradient_heads import (
    GradientHead,
    HeadGrads,
    HeadKind,
    MaskMode,
    init_head,
    loss_and_gradient,
    sgd_momentum_step,
)
from driftbench.rng import derive_seed
from driftbench.scenario import build_incremental, build_lifelong, permute_tasks
from driftbench.similarity_heads import KnnState, PrototypeState, SldaState
from driftbench.training import (
    ReplayConfig,
    TrainConfig,
    evaluate,
    train_scenario,
    train_subset,
    train_with_replay,
)

ALL_KINDS = list(HeadKind)


@contextmanager
def criterion(num: int, description: str, budget_seconds: float | None = None):
    start = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"\n[FAIL] criterion {num}: {description}")
        raise
    elapsed = time.perf_counter() - start
    if budget_seconds is not None:
        assert elapsed < budget_seconds, f"criterion {num} took {elapsed:.1f}s (budget {budget_seconds}s)"
    print(f"\n[PASS] criterion {num}: {description} ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# criterion 1: analytic gradients vs central finite differences
# ---------------------------------------------------------------------------

def _finite_difference(head, Z, Y, step=1e-5):
    out = HeadGrads.zeros(head.num_classes, head.dim)
    for arr, g in ((head.A, out.A), (head.b, out.b), (head.gamma, out.gamma)):
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_and_gradient(head, Z, Y)[0]
            flat[i] = orig - step
            down = loss_and_gradient(head, Z, Y)[0]
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
    return out


def _rel_err(a, fd):
    return float(np.linalg.norm(a - fd) / max(np.linalg.norm(fd), 1e-8))


def test_criterion_1_gradient_correctness():
    with criterion(1, "analytic gradients match finite differences (rel err <= 1e-4)", 10.0):
        rng = np.random.default_rng(100)
        for i in range(20):
            kind = ALL_KINDS[i % len(ALL_KINDS)]
            N = int(rng.integers(2, 6))
            h = int(rng.integers(2, 17))
            head = GradientHead(
                kind,
                rng.normal(size=(N, h)),
                rng.normal(size=N) * 0.3,
                1.0 + 0.2 * rng.normal(size=N),
            )
            B = int(rng.integers(1, 9))
            Z = rng.normal(size=(B, h))
            Y = rng.integers(0, N, size=B)
            _, grads = loss_and_gradient(head, Z, Y)
            fd = _finite_difference(head, Z, Y)
            assert _rel_err(grads.A, fd.A) <= 1e-4, (kind, N, h)
            if kind in (HeadKind.LINEAR, HeadKind.ORIGINAL_WEIGHT_NORM):
                assert _rel_err(grads.b, fd.b) <= 1e-4, kind
            if kind is HeadKind.ORIGINAL_WEIGHT_NORM:
                assert _rel_err(grads.gamma, fd.gamma) <= 1e-4


# ---------------------------------------------------------------------------
# criterion 2: masking conservation, bit-exact
# ---------------------------------------------------------------------------

def _excluded_class_dataset(num_classes=6, excluded=5, dim=7, n=40, seed=200):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes - 1, size=n)  # never `excluded`
    assert excluded not in set(labels.tolist())
    return FeatureSet(dim, num_classes, rng.normal(size=(n, dim)), labels,
                      np.zeros(n, dtype=int))


def test_criterion_2_masking_conservation():
    with criterion(2, "masked training leaves excluded classes bit-identical", 5.0):
        fs = _excluded_class_dataset()
        scenario = build_incremental(fs, 1)
        for mask in (MaskMode.SINGLE, MaskMode.GROUP):
            for kind in ALL_KINDS:
                head = init_head(kind, 6, 7, seed=derive_seed(2, kind.value), mask=mask)
                before_A = head.A[5].copy()
                before_b = float(head.b[5])
                before_gamma = float(head.gamma[5])
                config = TrainConfig(epochs_per_task=3, batch_size=8, lr=0.1, shuffle_seed=0)
                train_scenario(head, scenario, fs, config)
                assert np.array_equal(head.A[5], before_A), (mask, kind)
                assert head.b[5] == before_b, (mask, kind)
                assert head.gamma[5] == before_gamma, (mask, kind)


# ---------------------------------------------------------------------------
# criterion 3: SLDA streaming equivalence
# ---------------------------------------------------------------------------

def test_criterion_3_slda_streaming_equivalence():
    with criterion(3, "SLDA matches reference recursion replay + explicit inverse (<= 1e-8)", 5.0):
        rng = np.random.default_rng(300)
        num_classes, h = 5, 8
        stream = [(rng.normal(size=h), int(rng.integers(0, num_classes))) for _ in range(200)]
        state = SldaState(num_classes, h)
        for z, y in stream:
            state.observe(z, y)
        # independent replay of the recursions
        means = np.zeros((num_classes, h))
        counts = np.zeros(num_classes)
        sigma = np.zeros((h, h))
        t = 0
        for z, y in stream:
            diff = z - means[y]
            sigma = (t * sigma + np.outer(diff, diff) * t / (t + 1)) / (t + 1)
            means[y] = (counts[y] * means[y] + z) / (counts[y] + 1)
            counts[y] += 1
            t += 1
        eps = state.shrinkage
        lam = np.linalg.inv((1 - eps) * sigma + eps * np.eye(h))
        ref_w = means @ lam
        ref_b = -0.5 * np.einsum("ij,ij->i", means, ref_w)
        assert np.max(np.abs(state.sigma - sigma)) <= 1e-8
        W, bias = state._weights()
        observed = counts > 0
        assert np.max(np.abs(W[observed] - ref_w[observed])) <= 1e-8
        assert np.max(np.abs(bias[observed] - ref_b[observed])) <= 1e-8


# ---------------------------------------------------------------------------
# criterion 4: similarity-head oracles
# ---------------------------------------------------------------------------

def _knn_oracle(stored_Z, stored_y, z, k, num_classes):
    d = np.linalg.norm(stored_Z - z, axis=1)
    order = sorted(range(len(d)), key=lambda i: (d[i], i))[:k]
    votes = np.zeros(num_classes, dtype=int)
    for i in order:
        votes[stored_y[i]] += 1
    return int(np.argmax(votes))


def test_criterion_4_similarity_head_oracles():
    with criterion(4, "KNN/Mean/identity-covariance-SLDA match their oracles", 10.0):
        rng = np.random.default_rng(400)
        # KNN vs brute force on 500 points
        Z = rng.normal(size=(500, 6))
        y = rng.integers(0, 5, size=500)
        for k in (1, 3, 5):
            state = KnnState(k, num_classes=5, dim=6)
            for z, label in zip(Z, y):
                state.observe(z, int(label))
            queries = rng.normal(size=(60, 6))
            got = state.predict_batch(queries)
            for q, pred in zip(queries, got):
                assert pred == _knn_oracle(Z, y, q, k, 5)
        # streaming mean vs batch mean
        state = PrototypeState(PrototypeState.MEAN, num_classes=5, dim=6)
        for z, label in zip(Z, y):
            state.observe(z, int(label))
        for c in range(5):
            assert np.max(np.abs(state.means[c] - Z[y == c].mean(axis=0))) <= 1e-10
        # identity-covariance SLDA argmax == nearest-mean argmax
        means = rng.normal(size=(5, 6))
        slda = SldaState(num_classes=5, dim=6)
        slda.counts = np.full(5, 10)
        slda.means = means.copy()
        slda.sigma = np.eye(6)
        proto = PrototypeState(PrototypeState.MEAN, num_classes=5, dim=6)
        proto.counts = np.full(5, 10)
        proto.means = means.copy()
        queries = rng.normal(size=(100, 6))
        assert np.array_equal(slda.predict_batch(queries), proto.predict_batch(queries))


# ---------------------------------------------------------------------------
# criteria 5 + 6: incremental qualitative reproduction and norm/bias unbalance
# ---------------------------------------------------------------------------

@dataclass
class IncrementalStudy:
    wn_iid: float = 0.0
    slda_iid: float = 0.0
    mean_iid: float = 0.0
    finals: dict = field(default_factory=dict)
    norm_wins: int = 0
    bias_wins: int = 0
    elapsed: float = 0.0


@pytest.fixture(scope="module")
def incremental_study() -> IncrementalStudy:
    start = time.perf_counter()
    spec = SyntheticSpec(num_classes=10, modes_per_class=5, dim=32, center_scale=1.0,
                         stddev=0.30, train_per_mode=20, test_per_mode=8, seed=0)
    train, test = generate_synthetic(spec)
    base = build_incremental(train, 5)
    iid = build_incremental(train, 1)
    study = IncrementalStudy(finals={"linear": [], "cos_single": [], "slda": [], "mean": []})

    wn_accs = []
    for s in range(8):
        head = init_head(HeadKind.WEIGHT_NORM, 10, 32, seed=derive_seed(s, "head"))
        recs = train_scenario(
            head, iid, test,
            TrainConfig(epochs_per_task=5, batch_size=32, lr=0.1, shuffle_seed=s),
        )
        wn_accs.append(recs[-1].overall_test_accuracy)
    study.wn_iid = float(np.mean(wn_accs))

    slda_iid = SldaState(10, 32)
    mean_iid = PrototypeState(PrototypeState.MEAN, 10, 32)
    for ex in train:
        slda_iid.observe(ex.features, ex.class_label)
        mean_iid.observe(ex.features, ex.class_label)
    study.slda_iid = evaluate(slda_iid, test, base)[0]
    study.mean_iid = evaluate(mean_iid, test, base)[0]

    for s in range(8):
        sc = permute_tasks(base, s)
        lin = init_head(HeadKind.LINEAR, 10, 32, seed=derive_seed(s, "head"))
        recs = train_scenario(
            lin, sc, test,
            TrainConfig(epochs_per_task=5, batch_size=32, lr=0.01, shuffle_seed=s),
        )
        study.finals["linear"].append(recs[-1].overall_test_accuracy)
        first = list(sc.tasks[0].classes_present)
        last = list(sc.tasks[-1].classes_present)
        norms = np.linalg.norm(lin.A, axis=1)
        study.norm_wins += int(norms[last].mean() > norms[first].mean())
        study.bias_wins += int(lin.b[last].mean() > lin.b[first].mean())

        cos = init_head(HeadKind.COS_LAYER, 10, 32, seed=derive_seed(s, "head"),
                        mask=MaskMode.SINGLE)
        recs = train_scenario(
            cos, sc, test,
            TrainConfig(epochs_per_task=5, batch_size=32, lr=0.1, shuffle_seed=s),
        )
        study.finals["cos_single"].append(recs[-1].overall_test_accuracy)

        for name, head in (("slda", SldaState(10, 32)),
                           ("mean", PrototypeState(PrototypeState.MEAN, 10, 32))):
            recs = train_scenario(head, sc, test, TrainConfig())
            study.finals[name].append(recs[-1].overall_test_accuracy)

    study.elapsed = time.perf_counter() - start
    return study


def test_criterion_5_incremental_forgetting_ordering(incremental_study):
    with criterion(5, "incremental: Linear < CosLayer-single and < SLDA; SLDA/Mean retain >= 90%"):
        study = incremental_study
        assert study.elapsed < 120.0, f"study took {study.elapsed:.1f}s (budget 120s)"
        assert study.wn_iid >= 0.95, f"data not separable enough: WeightNorm iid {study.wn_iid:.3f}"
        linear = float(np.mean(study.finals["linear"]))
        cos_single = float(np.mean(study.finals["cos_single"]))
        slda = float(np.mean(study.finals["slda"]))
        mean = float(np.mean(study.finals["mean"]))
        assert linear < cos_single, (linear, cos_single)
        assert linear < slda, (linear, slda)
        assert slda >= 0.9 * study.slda_iid
        assert mean >= 0.9 * study.mean_iid


def test_criterion_6_norm_bias_unbalance(incremental_study):
    with criterion(6, "linear head norm/bias grows for last-task classes in >= 6 of 8 seeds"):
        assert incremental_study.norm_wins >= 6, incremental_study.norm_wins
        assert incremental_study.bias_wins >= 6, incremental_study.bias_wins


# ---------------------------------------------------------------------------
# criterion 7: lifelong masking claim
# ---------------------------------------------------------------------------

def test_criterion_7_lifelong_masking():
    with criterion(7, "lifelong: WeightNorm no-mask >= WeightNorm single-mask - 0.02", 120.0):
        spec = SyntheticSpec(num_classes=10, modes_per_class=8, dim=32, center_scale=1.0,
                             stddev=0.30, train_per_mode=15, test_per_mode=5, seed=0)
        train, test = generate_synthetic(spec)
        base = build_lifelong(train, 8)
        nomask, single = [], []
        for s in range(8):
            sc = permute_tasks(base, s)
            for mask, out in ((MaskMode.NONE, nomask), (MaskMode.SINGLE, single)):
                head = init_head(HeadKind.WEIGHT_NORM, 10, 32,
                                 seed=derive_seed(s, "head"), mask=mask)
                recs = train_scenario(
                    head, sc, test,
                    TrainConfig(epochs_per_task=5, batch_size=32, lr=0.1, shuffle_seed=s),
                )
                out.append(recs[-1].overall_test_accuracy)
        assert np.mean(nomask) >= np.mean(single) - 0.02, (np.mean(nomask), np.mean(single))


# ---------------------------------------------------------------------------
# criterion 8: subset monotonicity
# ---------------------------------------------------------------------------

def test_criterion_8_subset_monotonicity():
    with criterion(8, "mean final accuracy non-decreasing over subset sizes {100,200,500,1000,All}", 120.0):
        spec = SyntheticSpec(num_classes=10, modes_per_class=5, dim=32, center_scale=1.0,
                             stddev=0.8, train_per_mode=40, test_per_mode=8, seed=0)
        train, test = generate_synthetic(spec)
        sizes = [100, 200, 500, 1000, len(train)]

        def build(name, seed):
            if name == "weightnorm":
                return init_head(HeadKind.WEIGHT_NORM, 10, 32, seed=seed), 0.1
            if name == "linear":
                return init_head(HeadKind.LINEAR, 10, 32, seed=seed), 0.01
            if name == "mean":
                return PrototypeState(PrototypeState.MEAN, 10, 32), 0.1
            return SldaState(10, 32), 0.1

        for name in ("weightnorm", "linear", "mean", "slda"):
            means = []
            for size in sizes:
                accs = []
                for s in range(8):
                    head, lr = build(name, derive_seed(s, "head"))
                    cfg = TrainConfig(epochs_per_task=5, batch_size=32, lr=lr, shuffle_seed=s)
                    rec = train_subset(head, train, test, size,
                                       seed=derive_seed(s, "pick"), config=cfg)
                    accs.append(rec.overall_test_accuracy)
                means.append(float(np.mean(accs)))
            assert all(means[i] <= means[i + 1] + 1e-12 for i in range(len(means) - 1)), \
                (name, means)


# ---------------------------------------------------------------------------
# criterion 9: replay balance, group masking helps
# ---------------------------------------------------------------------------

def test_criterion_9_replay_group_masking():
    with criterion(9, "replay balance 0.25, batch 8: WeightNorm group-mask >= no-mask over 3 seeds", 120.0):
        # low latent dimension makes class directions correlate, creating the
        # interference that masking protects against
        spec = SyntheticSpec(num_classes=10, modes_per_class=1, dim=4, center_scale=1.0,
                             stddev=0.3, train_per_mode=20, test_per_mode=8, seed=0)
        train, test = generate_synthetic(spec)
        base = build_incremental(train, 5)
        group, nomask = [], []
        for s in range(3):
            sc = permute_tasks(base, s)
            for mask, out in ((MaskMode.GROUP, group), (MaskMode.NONE, nomask)):
                head = init_head(HeadKind.WEIGHT_NORM, 10, 4,
                                 seed=derive_seed(s, "head"), mask=mask)
                cfg = TrainConfig(epochs_per_task=5, batch_size=8, lr=0.1, shuffle_seed=s)
                recs = train_with_replay(
                    head, sc, test, cfg,
                    ReplayConfig(buffer_cap_per_class=2000, replay_balance=0.25,
                                 selection_seed=derive_seed(s, "sel")),
                )
                out.append(recs[-1].overall_test_accuracy)
        assert np.mean(group) >= np.mean(nomask), (np.mean(group), np.mean(nomask))


# ---------------------------------------------------------------------------
# criterion 10: file format roundtrips and corruption handling
# ---------------------------------------------------------------------------

def test_criterion_10_file_format(tmp_path):
    with criterion(10, "1000 random roundtrips + 3 corrupted files rejected with the right errors", 60.0):
        rng = np.random.default_rng(1000)
        path = tmp_path / "roundtrip.fset"
        for _ in range(1000):
            n = int(rng.integers(0, 12))
            dim = int(rng.integers(1, 9))
            num_classes = int(rng.integers(1, 6))
            fs = FeatureSet(
                dim, num_classes,
                rng.normal(size=(n, dim)),
                rng.integers(0, num_classes, size=n),
                rng.integers(0, 4, size=n),
            )
            write_feature_file(fs, path)
            assert read_feature_file(path) == fs

        fs = FeatureSet(3, 2, rng.normal(size=(5, 3)),
                        rng.integers(0, 2, size=5), np.zeros(5, dtype=int))
        # bad magic -> FormatError
        bad = tmp_path / "magic.fset"
        write_feature_file(fs, bad)
        raw = bytearray(bad.read_bytes())
        raw[:4] = b"XXXX"
        bad.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_feature_file(bad)
        # truncated body -> CorruptionError
        trunc = tmp_path / "trunc.fset"
        write_feature_file(fs, trunc)
        trunc.write_bytes(trunc.read_bytes()[:-4])
        with pytest.raises(CorruptionError):
            read_feature_file(trunc)
        # NaN payload -> ValidationError
        nan = tmp_path / "nan.fset"
        write_feature_file(fs, nan)
        raw = bytearray(nan.read_bytes())
        raw[32:36] = np.float32("nan").tobytes()
        nan.write_bytes(bytes(raw))
        with pytest.raises(ValidationError):
            read_feature_file(nan)
