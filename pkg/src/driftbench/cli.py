"""Command-line entry point: generate / run / diagnose / report.

Experiment configs are flat-key JSON documents (schema in the README).
Exit codes: 0 success, 1 run failure(s), 2 configuration/validation error.
DRIFTBENCH_JOBS overrides --jobs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, diagnostics
from .data import FeatureSet, SyntheticSpec, generate_synthetic, read_feature_file, write_feature_file
from .errors import ConfigurationError, DriftbenchError, FeatureFileError, ValidationError
from .gradient_heads import GradientHead, HeadKind, MaskMode, default_learning_rate, init_head
from .rng import derive_seed
from .scenario import (
    INCREMENTAL,
    LIFELONG,
    MIXED,
    Scenario,
    build_incremental,
    build_lifelong,
    build_mixed,
    permute_tasks,
)
from .similarity_heads import KnnState, PrototypeState, SldaState
from .training import ReplayConfig, RunRecord, TrainConfig, train_scenario, train_subset, train_with_replay

RESULTS_COLUMNS = [
    "run_id", "seed", "scenario", "head", "mask",
    "task_index", "epoch", "metric_name", "metric_value",
]

_GRADIENT_KINDS = {k.value: k for k in HeadKind}
_MASKS = {"single": MaskMode.SINGLE, "group": MaskMode.GROUP}


@dataclass(frozen=True)
class HeadSpec:
    """Parsed head descriptor, e.g. "coslayer:single", "knn:5", "slda"."""

    name: str
    kind: HeadKind | None = None
    mask: MaskMode = MaskMode.NONE
    knn_k: int = 5

    @property
    def is_gradient(self) -> bool:
        return self.kind is not None

    @staticmethod
    def parse(text: str) -> "HeadSpec":
        base, _, arg = text.partition(":")
        base = base.strip().lower()
        arg = arg.strip().lower()
        if base in _GRADIENT_KINDS:
            mask = MaskMode.NONE
            if arg:
                if arg not in _MASKS:
                    raise ConfigurationError(f"unknown mask {arg!r} in head {text!r}")
                mask = _MASKS[arg]
            return HeadSpec(text, kind=_GRADIENT_KINDS[base], mask=mask)
        if base == "knn":
            k = int(arg) if arg else 5
            if k < 1:
                raise ConfigurationError(f"knn k must be >= 1 in head {text!r}")
            return HeadSpec(text, knn_k=k)
        if base in ("mean", "median", "slda"):
            if arg:
                raise ConfigurationError(f"head {base!r} takes no argument ({text!r})")
            return HeadSpec(text)
        raise ConfigurationError(f"unknown head {text!r}")

    def build(self, num_classes: int, dim: int, seed: int):
        if self.is_gradient:
            return init_head(self.kind, num_classes, dim, seed, self.mask)
        base = self.name.partition(":")[0].strip().lower()
        if base == "knn":
            return KnnState(self.knn_k, num_classes, dim)
        if base == "mean":
            return PrototypeState(PrototypeState.MEAN, num_classes, dim)
        if base == "median":
            return PrototypeState(PrototypeState.MEDIAN, num_classes, dim)
        return SldaState(num_classes, dim)

    def learning_rate(self, override: float | None) -> float:
        if override is not None:
            return override
        if self.is_gradient:
            return default_learning_rate(self.kind)
        return 0.1  # unused by similarity heads


_CONFIG_KEYS = {
    "data.source": str,
    "data.train": str,
    "data.test": str,
    "data.classes": int,
    "data.modes": int,
    "data.dim": int,
    "data.center_scale": float,
    "data.stddev": float,
    "data.train_per_mode": int,
    "data.test_per_mode": int,
    "data.seed": int,
    "scenario.kind": str,
    "scenario.nb_tasks": int,
    "heads": list,
    "seeds": list,
    "train.epochs_per_task": int,
    "train.batch_size": int,
    "train.lr": float,
    "train.momentum": float,
    "train.eval_every_epoch": bool,
    "replay.enabled": bool,
    "replay.buffer_cap_per_class": int,
    "replay.balance": float,
    "subset.sizes": list,
    "output.dir": str,
}


@dataclass
class ExperimentConfig:
    raw: dict

    data_source: str = "synthetic"
    train_path: str | None = None
    test_path: str | None = None
    synthetic: SyntheticSpec | None = None
    scenario_kind: str = INCREMENTAL
    nb_tasks: int = 5
    heads: list[HeadSpec] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: list(range(8)))
    train: TrainConfig = field(default_factory=TrainConfig)
    lr_override: float | None = None
    replay: ReplayConfig | None = None
    subset_sizes: list[int | str] | None = None
    output_dir: str = "results"

    @staticmethod
    def from_flat_dict(doc: dict) -> "ExperimentConfig":
        for key, value in doc.items():
            if key not in _CONFIG_KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
            expected = _CONFIG_KEYS[key]
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                continue
            if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise ConfigurationError(
                    f"config key {key!r} expects {expected.__name__}, got {type(value).__name__}"
                )
        cfg = ExperimentConfig(raw=dict(doc))
        cfg.data_source = doc.get("data.source", "synthetic")
        if cfg.data_source == "synthetic":
            cfg.synthetic = SyntheticSpec(
                num_classes=doc.get("data.classes", 10),
                modes_per_class=doc.get("data.modes", 5),
                dim=doc.get("data.dim", 32),
                center_scale=doc.get("data.center_scale", 1.0),
                stddev=doc.get("data.stddev", 0.35),
                train_per_mode=doc.get("data.train_per_mode", 20),
                test_per_mode=doc.get("data.test_per_mode", 8),
                seed=doc.get("data.seed", 0),
            )
            cfg.synthetic.validate()
        elif cfg.data_source == "files":
            for key in ("data.train", "data.test"):
                if key not in doc:
                    raise ConfigurationError(f"data.source=files requires {key!r}")
                if not Path(doc[key]).exists():
                    raise ConfigurationError(f"{key!r}: no such file {doc[key]!r}")
            cfg.train_path = doc["data.train"]
            cfg.test_path = doc["data.test"]
        else:
            raise ConfigurationError(f"data.source must be 'synthetic' or 'files', got {cfg.data_source!r}")
        cfg.scenario_kind = doc.get("scenario.kind", INCREMENTAL)
        if cfg.scenario_kind not in (INCREMENTAL, LIFELONG, MIXED):
            raise ConfigurationError(f"unknown scenario.kind {cfg.scenario_kind!r}")
        cfg.nb_tasks = doc.get("scenario.nb_tasks", 5)
        heads = doc.get("heads", ["linear"])
        if not heads:
            raise ConfigurationError("heads must list at least one head")
        cfg.heads = [HeadSpec.parse(str(h)) for h in heads]
        cfg.seeds = [int(s) for s in doc.get("seeds", list(range(8)))]
        if not cfg.seeds:
            raise ConfigurationError("seeds must list at least one seed")
        cfg.lr_override = doc.get("train.lr")
        cfg.train = TrainConfig(
            epochs_per_task=doc.get("train.epochs_per_task", 5),
            batch_size=doc.get("train.batch_size", 32),
            lr=cfg.lr_override if cfg.lr_override is not None else 0.1,
            momentum=doc.get("train.momentum", 0.9),
            eval_every_epoch=doc.get("train.eval_every_epoch", True),
        )
        cfg.train.validate()
        if doc.get("replay.enabled", False):
            cfg.replay = ReplayConfig(
                buffer_cap_per_class=doc.get("replay.buffer_cap_per_class", 2000),
                replay_balance=doc.get("replay.balance", 1.0),
            )
            cfg.replay.validate()
        if "subset.sizes" in doc:
            sizes = []
            for s in doc["subset.sizes"]:
                if isinstance(s, str):
                    if s.lower() != "all":
                        raise ConfigurationError(f"subset.sizes entries are ints or 'all', got {s!r}")
                    sizes.append("all")
                else:
                    if int(s) < 1:
                        raise ConfigurationError("subset.sizes entries must be >= 1")
                    sizes.append(int(s))
            cfg.subset_sizes = sizes
        cfg.output_dir = doc.get("output.dir", "results")
        return cfg

    def load_data(self) -> tuple[FeatureSet, FeatureSet]:
        if self.data_source == "synthetic":
            return generate_synthetic(self.synthetic)
        return read_feature_file(self.train_path), read_feature_file(self.test_path)

    def build_scenario(self, train_set: FeatureSet) -> Scenario:
        if self.scenario_kind == INCREMENTAL:
            return build_incremental(train_set, self.nb_tasks)
        if self.scenario_kind == LIFELONG:
            return build_lifelong(train_set, self.nb_tasks)
        return build_mixed(train_set)


@dataclass(frozen=True)
class RunTicket:
    """One grid cell: picklable description of a single run."""

    config_doc: dict
    head: str
    seed: int
    subset_size: int | str | None = None

    @property
    def run_id(self) -> str:
        parts = [self.head, f"s{self.seed}"]
        if self.subset_size is not None:
            parts.insert(1, f"subset{self.subset_size}")
        return "-".join(parts)


def execute_run(ticket: RunTicket):
    """Run one grid cell; workers rebuild data deterministically from config.

    Returns (records, trained head).
    """
    cfg = ExperimentConfig.from_flat_dict(ticket.config_doc)
    spec = HeadSpec.parse(ticket.head)
    train_set, test_set = cfg.load_data()
    train_cfg = TrainConfig(
        epochs_per_task=cfg.train.epochs_per_task,
        batch_size=cfg.train.batch_size,
        lr=spec.learning_rate(cfg.lr_override),
        momentum=cfg.train.momentum,
        shuffle_seed=derive_seed(ticket.seed, "shuffle-root"),
        eval_every_epoch=cfg.train.eval_every_epoch,
    )
    head = spec.build(train_set.num_classes, train_set.dim, derive_seed(ticket.seed, "head"))
    if ticket.subset_size is not None:
        size = len(train_set) if ticket.subset_size == "all" else int(ticket.subset_size)
        record = train_subset(
            head, train_set, test_set, size, derive_seed(ticket.seed, "subset"),
            train_cfg, run_id=ticket.run_id,
        )
        record.scenario = f"subset[{ticket.subset_size}]"
        return [record], head
    scenario = permute_tasks(cfg.build_scenario(train_set), ticket.seed)
    if cfg.replay is not None:
        replay = ReplayConfig(
            buffer_cap_per_class=cfg.replay.buffer_cap_per_class,
            replay_balance=cfg.replay.replay_balance,
            selection_seed=derive_seed(ticket.seed, "replay"),
        )
        records = train_with_replay(head, scenario, test_set, train_cfg, replay, run_id=ticket.run_id)
    else:
        records = train_scenario(head, scenario, test_set, train_cfg, run_id=ticket.run_id)
    return records, head


def _record_rows(ticket: RunTicket, records: list[RunRecord]) -> list[list]:
    spec = HeadSpec.parse(ticket.head)
    mask = spec.mask.value if spec.is_gradient else "none"
    rows = []
    for rec in records:
        base = [rec.run_id, ticket.seed, rec.scenario, rec.head, mask, rec.task_index, rec.epoch]
        rows.append(base + ["overall_accuracy", rec.overall_test_accuracy])
        for i, acc in enumerate(rec.per_task_test_accuracy):
            if not math.isnan(acc):
                rows.append(base + [f"per_task_accuracy_{i}", acc])
        for c, acc in enumerate(rec.per_class_accuracy):
            if not math.isnan(acc):
                rows.append(base + [f"per_class_accuracy_{c}", acc])
    return rows


def cmd_generate(args) -> int:
    for name in ("classes", "modes", "dim", "train_per_mode", "test_per_mode"):
        if getattr(args, name) < 1:
            raise ConfigurationError(f"{name} must be >= 1")
    if args.center_scale <= 0:
        raise ConfigurationError("center_scale must be > 0")
    if args.stddev <= 0:
        raise ConfigurationError("stddev must be > 0")
    spec = SyntheticSpec(
        num_classes=args.classes,
        modes_per_class=args.modes,
        dim=args.dim,
        center_scale=args.center_scale,
        stddev=args.stddev,
        train_per_mode=args.train_per_mode,
        test_per_mode=args.test_per_mode,
        seed=args.seed,
    )
    train_set, test_set = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_file(train_set, out / "train.fset")
    write_feature_file(test_set, out / "test.fset")
    print(f"train: {len(train_set)} examples, dim={train_set.dim}, classes={train_set.num_classes}")
    print(f"test:  {len(test_set)} examples, dim={test_set.dim}, classes={test_set.num_classes}")
    print(f"wrote {out / 'train.fset'} and {out / 'test.fset'}")
    return 0


def _resolve_jobs(args) -> int:
    env = os.environ.get("DRIFTBENCH_JOBS")
    if env is not None:
        try:
            jobs = int(env)
        except ValueError:
            raise ConfigurationError(f"DRIFTBENCH_JOBS must be an integer, got {env!r}")
    else:
        jobs = args.jobs
    if jobs < 1:
        raise ConfigurationError("jobs must be >= 1")
    return jobs


def cmd_run(args) -> int:
    with open(args.config) as fh:
        doc = json.load(fh)
    cfg = ExperimentConfig.from_flat_dict(doc)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = _resolve_jobs(args)

    tickets = []
    for head in cfg.heads:
        for seed in cfg.seeds:
            if cfg.subset_sizes:
                for size in cfg.subset_sizes:
                    tickets.append(RunTicket(doc, head.name, seed, size))
            else:
                tickets.append(RunTicket(doc, head.name, seed))

    manifest = {"config": doc, "jobs": jobs, "runs": []}
    results_path = out / "results.csv"
    failures = 0
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_COLUMNS)
        fh.flush()

        def consume(ticket: RunTicket, outcome) -> None:
            nonlocal failures
            entry = {"run_id": ticket.run_id, "head": ticket.head, "seed": ticket.seed}
            if ticket.subset_size is not None:
                entry["subset_size"] = ticket.subset_size
            if isinstance(outcome, Exception):
                failures += 1
                entry["status"] = "failed"
                entry["error"] = f"{type(outcome).__name__}: {outcome}"
                print(f"[FAIL] {ticket.run_id}: {entry['error']}", file=sys.stderr)
            else:
                records, head = outcome
                entry["status"] = "ok"
                for row in _record_rows(ticket, records):
                    writer.writerow(row)
                fh.flush()
                if args.save_checkpoints:
                    ckpt_dir = out / "checkpoints"
                    ckpt_dir.mkdir(exist_ok=True)
                    checkpoint.save_head(head, ckpt_dir / f"{ticket.run_id}.head")
                if args.diagnostics and isinstance(head, GradientHead):
                    diag_dir = out / "diag" / ticket.run_id
                    diag_dir.mkdir(parents=True, exist_ok=True)
                    norms, biases = diagnostics.norm_bias_report(head)
                    _write_csv(diag_dir / "norm_bias.csv", ["class", "row_norm", "bias"],
                               [[i, norms[i], biases[i]] for i in range(len(norms))])
                    entry["diagnostics"] = {"norm_bias": str(diag_dir / "norm_bias.csv")}
                final = records[-1].overall_test_accuracy if records else float("nan")
                print(f"[ok] {ticket.run_id}: final overall accuracy {final:.4f}")
            manifest["runs"].append(entry)
            with open(out / "run.json", "w") as mfh:
                json.dump(manifest, mfh, indent=2)

        if jobs == 1:
            for ticket in tickets:
                try:
                    consume(ticket, execute_run(ticket))
                except DriftbenchError as exc:
                    consume(ticket, exc)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [(t, pool.submit(execute_run, t)) for t in tickets]
                for ticket, fut in futures:
                    try:
                        consume(ticket, fut.result())
                    except DriftbenchError as exc:
                        consume(ticket, exc)
    print(f"wrote {results_path}")
    return 1 if failures else 0


def cmd_diagnose(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    heads = [checkpoint.load_head(p) for p in args.checkpoint]
    for head in heads:
        if not isinstance(head, GradientHead):
            raise ConfigurationError("diagnose requires gradient-head checkpoints")
    if len(heads) > 2:
        raise ConfigurationError("diagnose takes one or two checkpoints")
    head = heads[0]
    norms, biases = diagnostics.norm_bias_report(head)
    _write_csv(out / "norm_bias.csv", ["class", "row_norm", "bias"],
               [[i, norms[i], biases[i]] for i in range(len(norms))])
    if len(heads) == 2:
        if heads[0].A.shape != heads[1].A.shape:
            raise ConfigurationError("checkpoints have mismatched shapes")
        before = diagnostics.Snapshot(0, heads[0].A, heads[0].b, heads[0].gamma)
        after = diagnostics.Snapshot(1, heads[1].A, heads[1].b, heads[1].gamma)
        delta = diagnostics.weight_delta(before, after)
        rows = [[i] + list(delta.A[i]) + [delta.b[i], delta.gamma[i]] for i in range(delta.A.shape[0])]
        header = ["class"] + [f"dA_{j}" for j in range(delta.A.shape[1])] + ["db", "dgamma"]
        _write_csv(out / "weight_delta.csv", header, rows)
    if args.data:
        dataset = read_feature_file(args.data)
        report = diagnostics.interference_report(head, dataset)
        _write_matrix_csv(out / "vector_angles.csv", report.vector_angle_matrix)
        _write_matrix_csv(out / "class_vector_angles.csv", report.class_to_vector_mean_angle)
        _write_matrix_csv(out / "interference_risk.csv", report.risk_matrix)
        with open(out / "interference_meta.json", "w") as fh:
            json.dump(
                {"risk_convention": report.risk_convention,
                 "skipped_zero_norm": report.skipped_zero_norm},
                fh, indent=2,
            )
    print(f"wrote diagnostics to {out}")
    return 0


def cmd_report(args) -> int:
    finals: dict[str, dict] = {}
    with open(args.results, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{args.results}: empty results file")
        if header != RESULTS_COLUMNS:
            raise ConfigurationError(f"{args.results}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RESULTS_COLUMNS):
                raise ConfigurationError(f"{args.results}:{lineno}: expected {len(RESULTS_COLUMNS)} columns")
            run_id, seed, scenario, head, mask, task_index, epoch, metric, value = row
            if metric != "overall_accuracy":
                continue
            try:
                key_pos = (int(task_index), int(epoch))
                acc = float(value)
            except ValueError as exc:
                raise ConfigurationError(f"{args.results}:{lineno}: {exc}")
            slot = finals.setdefault(run_id, {"head": head, "scenario": scenario,
                                              "seed": seed, "pos": (-1, -1), "acc": float("nan")})
            if key_pos >= slot["pos"]:
                slot["pos"] = key_pos
                slot["acc"] = acc
    groups: dict[tuple[str, str], list[float]] = {}
    for slot in finals.values():
        groups.setdefault((slot["head"], slot["scenario"]), []).append(slot["acc"])
    rows = []
    for (head, scenario), accs in sorted(groups.items()):
        arr = np.asarray(accs)
        rows.append([head, scenario, len(arr), float(arr.mean()), float(arr.std())])
    header = ["head", "scenario", "n_runs", "mean_final_accuracy", "std_population"]
    out_path = Path(args.out) if args.out else Path(args.results).parent / "summary.csv"
    _write_csv(out_path, header, rows)
    width = max((len(r[0]) for r in rows), default=4)
    print(f"{'head'.ljust(width)}  scenario         n  mean    std(pop)")
    for head, scenario, n, mean, std in rows:
        print(f"{head.ljust(width)}  {scenario:15s}  {n}  {mean:.4f}  {std:.4f}")
    print(f"wrote {out_path}")
    return 0


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_matrix_csv(path, matrix: np.ndarray) -> None:
    _write_csv(path, [f"c{j}" for j in range(matrix.shape[1])],
               [list(row) for row in matrix])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftbench",
                                     description="Continual-learning lab for classifier heads")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write synthetic FSET1 feature files")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--modes", type=int, required=True)
    gen.add_argument("--dim", type=int, required=True)
    gen.add_argument("--center-scale", type=float, default=1.0)
    gen.add_argument("--stddev", type=float, default=0.35)
    gen.add_argument("--train-per-mode", type=int, default=20)
    gen.add_argument("--test-per-mode", type=int, default=8)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="run a heads x seeds experiment grid")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="override output.dir")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--no-checkpoints", dest="save_checkpoints", action="store_false")
    run.add_argument("--diagnostics", action="store_true",
                     help="emit per-run norm/bias CSVs under diag/<run_id>/")
    run.set_defaults(func=cmd_run, save_checkpoints=True)

    diag = sub.add_parser("diagnose", help="emit norm/bias, weight-delta, interference CSVs")
    diag.add_argument("--checkpoint", action="append", required=True,
                      help="HEAD checkpoint (give twice for weight deltas)")
    diag.add_argument("--data", default=None, help="FSET1 file for interference matrices")
    diag.add_argument("--out", required=True)
    diag.set_defaults(func=cmd_diagnose)

    rep = sub.add_parser("report", help="summarize a results.csv")
    rep.add_argument("--results", required=True)
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ValidationError, FeatureFileError,
            json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DriftbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
