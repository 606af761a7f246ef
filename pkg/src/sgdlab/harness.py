"""Experiment orchestration: sweeps, equal-temperature runs, CSV emission.

A sweep trains one run per (protocol, seed) pair from a single resolved
config, writes one CSV per run plus an aggregate CSV, and records a JSON
manifest carrying the full config and its hash so any output can be
regenerated from the manifest alone.  Aggregates are recomputed from the
per-run CSV files rather than from in-memory state, which makes
re-aggregation idempotent by construction.

Individual run divergence is recorded per run without aborting the sweep.
Runs are independent (own seed stream, own output file) and may execute
in parallel; aggregate ordering is by (protocol, seed) regardless of
completion order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DivergenceError
from .mnist import load_mnist_subset, write_digit_dataset, TRAIN_IMAGES
from .objectives import LogisticRegression, Objective, QuadraticEnsemble
from .optimizer import (HyperParams, TrainingRecord, read_run_csv, train,
                        write_run_csv, write_run_summary)
from .protocols import ProtocolKind, ProtocolSpec
from .thermo import same_temperature

TEMPERATURE_MATCH_RTOL = 1e-6


# ---------------------------------------------------------------------------
# Objective construction from config dictionaries
# ---------------------------------------------------------------------------

def build_objective(spec: dict, work_dir) -> Objective:
    """Instantiate the objective described by a config dictionary.

    Kinds: quadratic | logistic | digits | mnist.  The digits kind writes
    (or reuses) a deterministic surrogate dataset in IDX format under
    work_dir and loads it through the same path as real MNIST files.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    seed = int(spec.pop("seed", 0))
    rng = np.random.Generator(np.random.PCG64(seed))

    if kind == "quadratic":
        return QuadraticEnsemble.isotropic(
            dim=int(spec.pop("dim", 3)),
            samples=int(spec.pop("samples", 64)),
            rng=rng,
            spread=float(spec.pop("spread", 1.0)),
            curvature=float(spec.pop("curvature", 1.0)),
        )
    if kind == "logistic":
        return LogisticRegression.synthetic(
            dim=int(spec.pop("dim", 8)),
            samples=int(spec.pop("samples", 512)),
            rng=rng,
            test_samples=int(spec.pop("test_samples", 256)),
            separation=float(spec.pop("separation", 1.5)),
        )
    if kind == "digits":
        n_train = int(spec.pop("n_train", 2000))
        n_test = int(spec.pop("n_test", 1000))
        hidden = int(spec.pop("hidden", 100))
        pool_train = int(spec.pop("pool_train", 2 * n_train))
        pool_test = int(spec.pop("pool_test", 2 * n_test))
        base = Path(spec.pop("data_dir", Path(work_dir) / "data"))
        data_dir = base / f"digits_tr{pool_train}_te{pool_test}_s{seed}"
        if not (data_dir / TRAIN_IMAGES).exists():
            write_digit_dataset(data_dir, pool_train, pool_test, seed)
        return load_mnist_subset(data_dir, n_train, n_test, seed, hidden=hidden)
    if kind == "mnist":
        data_dir = spec.pop("data_dir", None)
        if data_dir is None:
            raise ConfigError("mnist objective requires data_dir")
        return load_mnist_subset(data_dir,
                                 int(spec.pop("n_train", 2000)),
                                 int(spec.pop("n_test", 1000)),
                                 seed,
                                 hidden=int(spec.pop("hidden", 100)))
    raise ConfigError(f"unknown objective kind {kind!r}")


def protocol_from_dict(entry: dict, base_rate: float) -> ProtocolSpec:
    entry = dict(entry)
    name = entry.pop("protocol", entry.pop("kind", None))
    if name == "constant":
        return ProtocolSpec.constant(base_rate)
    if name == "random":
        return ProtocolSpec.random(base_rate, float(entry.pop("delta", 1.0)))
    if name == "cyclic":
        if "period" not in entry:
            raise ConfigError("cyclic protocol requires a period")
        return ProtocolSpec.cyclic(base_rate, int(entry.pop("period")))
    raise ConfigError(f"unknown protocol {name!r}; expected constant, random or cyclic")


def protocol_to_dict(spec: ProtocolSpec) -> dict:
    if spec.kind is ProtocolKind.RANDOM_UNIFORM:
        return {"protocol": "random", "delta": spec.half_width}
    if spec.kind is ProtocolKind.CYCLIC_COSINE:
        return {"protocol": "cyclic", "period": spec.period}
    return {"protocol": "constant"}


# ---------------------------------------------------------------------------
# Sweep configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    objective: dict
    lr: float
    batch_size: int
    epochs: int
    protocols: list[dict]
    seeds: list[int]
    out_dir: str
    momentum: float = 0.0
    nesterov: bool = False
    weight_decay: float = 0.0
    jobs: int = 1

    def __post_init__(self):
        if not self.protocols:
            raise ConfigError("at least one protocol is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        # fail fast on malformed protocol entries
        for entry in self.protocols:
            protocol_from_dict(entry, self.lr)

    @classmethod
    def from_dict(cls, data: dict, out_dir=None) -> "ExperimentConfig":
        data = dict(data)
        data.pop("config_version", None)
        if out_dir is not None:
            data["out_dir"] = str(out_dir)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "protocols": self.protocols,
            "seeds": list(self.seeds),
            "out_dir": str(self.out_dir),
            "momentum": self.momentum,
            "nesterov": self.nesterov,
            "weight_decay": self.weight_decay,
            "jobs": self.jobs,
        }

    def protocol_specs(self) -> list[ProtocolSpec]:
        return [protocol_from_dict(p, self.lr) for p in self.protocols]

    def hyper_for(self, protocol: ProtocolSpec) -> HyperParams:
        return HyperParams(batch_size=self.batch_size, protocol=protocol,
                           momentum=self.momentum, nesterov=self.nesterov,
                           weight_decay=self.weight_decay)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Protocol sweeps
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    protocol_label: str
    seed: int
    record: TrainingRecord | None
    error: str | None = None
    csv_path: str | None = None

    @property
    def diverged(self) -> bool:
        return self.error is not None


@dataclass
class SweepResult:
    runs: list[RunResult]
    aggregate: list[dict]
    out_dir: Path
    manifest_path: Path

    @property
    def all_diverged(self) -> bool:
        return all(r.diverged for r in self.runs)


def _train_task(objective, hyper, epochs, seed):
    try:
        return train(objective, hyper, epochs, seed), None
    except DivergenceError as exc:
        return None, str(exc)


def run_protocol_sweep(config: ExperimentConfig) -> SweepResult:
    out_dir = Path(config.out_dir)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()

    objective = build_objective(config.objective, out_dir)
    tasks = [(protocol, seed)
             for protocol in config.protocol_specs()
             for seed in config.seeds]

    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(
                _train_task,
                *zip(*[(objective, config.hyper_for(p), config.epochs, s)
                       for p, s in tasks])))
    else:
        outcomes = [_train_task(objective, config.hyper_for(p), config.epochs, s)
                    for p, s in tasks]

    results: list[RunResult] = []
    for (protocol, seed), (record, error) in zip(tasks, outcomes):
        label = protocol.label()
        result = RunResult(protocol_label=label, seed=seed, record=record, error=error)
        if record is not None:
            csv_path = runs_dir / f"{label}__seed{seed}.csv"
            write_run_csv(record, csv_path)
            write_run_summary(record, runs_dir / f"{label}__seed{seed}.summary.json",
                              extra={"protocol": label, "seed": seed})
            result.csv_path = str(csv_path)
        results.append(result)

    aggregate = aggregate_sweep(results)
    write_aggregate_csv(aggregate, out_dir / "aggregate.csv")

    resolved = config.to_dict()
    manifest = {
        "config": resolved,
        "config_hash": config_hash(resolved),
        "package_version": __version__,
        "wall_clock_s": time.time() - started,
        "runs": [{"protocol": r.protocol_label, "seed": r.seed,
                  "csv": r.csv_path, "error": r.error} for r in results],
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    return SweepResult(runs=results, aggregate=aggregate, out_dir=out_dir,
                       manifest_path=manifest_path)


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate_sweep(results: list[RunResult]) -> list[dict]:
    """Per-protocol statistics, recomputed from the per-run CSV files."""
    by_protocol: dict[str, list[RunResult]] = {}
    for r in results:
        by_protocol.setdefault(r.protocol_label, []).append(r)

    rows = []
    for label, group in by_protocol.items():
        finished = [r for r in group if not r.diverged]
        row: dict = {"protocol": label, "runs": len(group),
                     "diverged": len(group) - len(finished)}
        if finished:
            epochs = [read_run_csv(r.csv_path) for r in finished]
            final_loss = [e[-1].train_loss for e in epochs]
            row["final_loss_mean"], row["final_loss_std"] = _mean_std(final_loss)
            if epochs[0][-1].test_acc is not None:
                best = [max(s.test_acc for s in e) for e in epochs]
                final = [e[-1].test_acc for e in epochs]
                row["best_acc_mean"], row["best_acc_std"] = _mean_std(best)
                row["final_acc_mean"], row["final_acc_std"] = _mean_std(final)
        rows.append(row)
    return rows


AGGREGATE_COLUMNS = ["protocol", "runs", "diverged",
                     "final_loss_mean", "final_loss_std",
                     "best_acc_mean", "best_acc_std",
                     "final_acc_mean", "final_acc_std"]


def write_aggregate_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            out = []
            for col in AGGREGATE_COLUMNS:
                value = row.get(col, "")
                if isinstance(value, float):
                    value = repr(value)
                out.append(value)
            writer.writerow(out)


def reaggregate_from_directory(out_dir) -> list[dict]:
    """Rebuild aggregate rows from the manifest and the per-run CSVs."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    results = [RunResult(protocol_label=r["protocol"], seed=r["seed"], record=None,
                         error=r["error"], csv_path=r["csv"])
               for r in manifest["runs"]]
    return aggregate_sweep(results)


# ---------------------------------------------------------------------------
# Equal-temperature experiments
# ---------------------------------------------------------------------------

@dataclass
class EqualTemperatureConfig:
    """A group of hyperparameter tuples predicted equivalent, plus a
    control tuple at a deliberately different temperature."""

    objective: dict
    group: list[dict]          # each {"lr", "batch_size", "momentum"}
    control: dict
    epochs: int
    seeds: list[int]
    out_dir: str
    delta: float = 1.0         # random-protocol half width used for every run
    nesterov: bool = False
    weight_decay: float = 0.0
    jobs: int = 1

    @classmethod
    def from_dict(cls, data: dict, out_dir=None) -> "EqualTemperatureConfig":
        data = dict(data)
        data.pop("config_version", None)
        if out_dir is not None:
            data["out_dir"] = str(out_dir)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad equal-temperature config: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "objective": self.objective, "group": self.group,
            "control": self.control, "epochs": self.epochs,
            "seeds": list(self.seeds), "out_dir": str(self.out_dir),
            "delta": self.delta, "nesterov": self.nesterov,
            "weight_decay": self.weight_decay, "jobs": self.jobs,
        }


def _tuple_of(member: dict) -> tuple[float, int, float]:
    try:
        return (float(member["lr"]), int(member["batch_size"]),
                float(member.get("momentum", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"hyperparameter tuple missing {exc}") from None


def _member_label(member: dict) -> str:
    lr, C, mu = _tuple_of(member)
    return f"lr{lr:g}_C{C}_mu{mu:g}"


def pooled_std(a: list[float], b: list[float]) -> float:
    """Classic two-sample pooled standard deviation."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    dof = len(a) + len(b) - 2
    if dof <= 0:
        return 0.0
    var = ((len(a) - 1) * a.var(ddof=1) if len(a) > 1 else 0.0)
    var += ((len(b) - 1) * b.var(ddof=1) if len(b) > 1 else 0.0)
    return float(np.sqrt(var / dof))


@dataclass
class EqualTemperatureReport:
    member_stats: list[dict]
    control_stats: dict
    group_equivalent: bool
    control_separated: bool
    details: dict

    @property
    def verdict(self) -> bool:
        return self.group_equivalent and self.control_separated


def run_equal_temperature_experiment(config: EqualTemperatureConfig) -> EqualTemperatureReport:
    """Train the equal-temperature group and its control, then apply the
    two-sample criterion: group members should agree on final test
    accuracy within one pooled standard deviation, while the control
    should separate from the group by more than one pooled standard
    deviation in mean training loss at matched epochs.
    """
    if len(config.seeds) < 2:
        raise ConfigError("equal-temperature statistics need at least two seeds")
    group_tuples = [_tuple_of(m) for m in config.group]
    control_tuple = _tuple_of(config.control)
    for i in range(len(group_tuples)):
        for j in range(i + 1, len(group_tuples)):
            if not same_temperature(group_tuples[i], group_tuples[j],
                                    rel_tol=TEMPERATURE_MATCH_RTOL):
                raise ConfigError(f"group members {i} and {j} do not share an "
                                  f"effective temperature")
    if same_temperature(control_tuple, group_tuples[0],
                        rel_tol=TEMPERATURE_MATCH_RTOL):
        raise ConfigError("control tuple matches the group temperature; "
                          "it must differ to act as a counter-check")

    out_dir = Path(config.out_dir)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    objective = build_objective(config.objective, out_dir)

    def run_member(member: dict) -> dict:
        lr, C, mu = _tuple_of(member)
        protocol = ProtocolSpec.random(lr, config.delta)
        hyper = HyperParams(batch_size=C, protocol=protocol, momentum=mu,
                            nesterov=config.nesterov,
                            weight_decay=config.weight_decay)
        label = _member_label(member)
        final_acc, final_loss = [], []
        for seed in config.seeds:
            record = train(objective, hyper, config.epochs, seed)
            write_run_csv(record, runs_dir / f"{label}__seed{seed}.csv")
            final_acc.append(record.final_test_acc)
            final_loss.append(record.final_train_loss)
        acc_mean, acc_std = _mean_std(final_acc)
        loss_mean, loss_std = _mean_std(final_loss)
        return {"label": label, "lr": lr, "batch_size": C, "momentum": mu,
                "final_acc": final_acc, "final_loss": final_loss,
                "final_acc_mean": acc_mean, "final_acc_std": acc_std,
                "final_loss_mean": loss_mean, "final_loss_std": loss_std}

    member_stats = [run_member(m) for m in config.group]
    control_stats = run_member(config.control)

    # group equivalence: pairwise final-accuracy means within one pooled sd
    group_equivalent = True
    pairwise = []
    for i in range(len(member_stats)):
        for j in range(i + 1, len(member_stats)):
            a, b = member_stats[i], member_stats[j]
            sp = pooled_std(a["final_acc"], b["final_acc"])
            gap = abs(a["final_acc_mean"] - b["final_acc_mean"])
            ok = gap <= sp
            pairwise.append({"members": [a["label"], b["label"]],
                             "gap": gap, "pooled_std": sp, "within": ok})
            group_equivalent &= ok

    # control separation: mean training loss at the final (matched) epoch
    group_losses = [v for m in member_stats for v in m["final_loss"]]
    sp_loss = pooled_std(group_losses, control_stats["final_loss"])
    loss_gap = abs(float(np.mean(group_losses)) - control_stats["final_loss_mean"])
    control_separated = loss_gap > sp_loss

    details = {"pairwise_accuracy": pairwise,
               "control_loss_gap": loss_gap,
               "control_loss_pooled_std": sp_loss}
    report = EqualTemperatureReport(member_stats=member_stats,
                                    control_stats=control_stats,
                                    group_equivalent=group_equivalent,
                                    control_separated=control_separated,
                                    details=details)

    payload = {
        "config": config.to_dict(),
        "config_hash": config_hash(config.to_dict()),
        "package_version": __version__,
        "members": member_stats,
        "control": control_stats,
        "group_equivalent": group_equivalent,
        "control_separated": control_separated,
        "details": details,
    }
    (out_dir / "equal_temperature.json").write_text(json.dumps(payload, indent=2) + "\n")

    with open(out_dir / "equal_temperature.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["label", "role", "lr", "batch_size", "momentum",
                         "final_acc_mean", "final_acc_std",
                         "final_loss_mean", "final_loss_std"])
        for role, stats in ([("group", m) for m in member_stats]
                            + [("control", control_stats)]):
            writer.writerow([stats["label"], role, repr(stats["lr"]),
                             stats["batch_size"], repr(stats["momentum"]),
                             repr(stats["final_acc_mean"]), repr(stats["final_acc_std"]),
                             repr(stats["final_loss_mean"]), repr(stats["final_loss_std"])])

    return report
