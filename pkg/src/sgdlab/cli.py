"""Command-line interface.

Subcommands: train, sweep-protocols, equal-temperature, estimate-diffusion,
sample-stationary, weak-error, temperature, verify-gibbs.

Exit codes: 0 success, 2 config error, 3 divergence in all runs,
4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .diffusion import (BatchScheme, MomentMode, analytic_covariance,
                        empirical_covariance, isotropic_scalar)
from .errors import (CapacityError, ConfigError, DivergenceError,
                     IdxFormatError, MisuseError)
from .harness import (EqualTemperatureConfig, ExperimentConfig,
                      build_objective, protocol_from_dict,
                      run_equal_temperature_experiment, run_protocol_sweep)
from .objectives import QuadraticEnsemble
from .optimizer import HyperParams, train, write_run_csv, write_run_summary
from .sde import SdeParams, sample_stationary, weak_error_probe
from .thermo import GibbsDensity, compare_to_gibbs, effective_temperature

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VERIFY = 4

DEFAULT_OBJECTIVE = {"kind": "digits", "n_train": 2000, "n_test": 1000, "seed": 1}

# desk-scale protocol comparison: one run per protocol and seed
DEFAULT_SWEEP = {
    "objective": DEFAULT_OBJECTIVE,
    "lr": 0.005,
    "batch_size": 256,
    "momentum": 0.9,
    "nesterov": True,
    "weight_decay": 0.0,
    "epochs": 30,
    "seeds": [1, 2, 3, 4, 5],
    "protocols": [
        {"protocol": "constant"},
        {"protocol": "random", "delta": 1.0},
        {"protocol": "cyclic", "period": 6},
        {"protocol": "cyclic", "period": 18},
        {"protocol": "cyclic", "period": 30},
    ],
}

# equal-temperature pair (halving both lr and batch size) plus the
# different-temperature counter-check at the same batch size
DEFAULT_EQUAL_TEMP = {
    "objective": DEFAULT_OBJECTIVE,
    "group": [
        {"lr": 2e-4, "batch_size": 60, "momentum": 0.0},
        {"lr": 1e-4, "batch_size": 30, "momentum": 0.0},
    ],
    "control": {"lr": 1e-4, "batch_size": 60, "momentum": 0.0},
    "epochs": 30,
    "seeds": [1, 2, 3, 4, 5],
    "delta": 1.0,
}


def _load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None


def _cmd_train(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    objective_cfg = cfg.get("objective", dict(DEFAULT_OBJECTIVE))
    if args.data_dir:
        objective_cfg = {"kind": "mnist", "data_dir": args.data_dir,
                         "n_train": args.n_train, "n_test": args.n_test,
                         "seed": cfg.get("objective", {}).get("seed", 1)}

    lr = args.lr if args.lr is not None else cfg.get("lr", 0.005)
    protocol_entry = {"protocol": args.protocol or cfg.get("protocol", "constant")}
    delta = args.delta if args.delta is not None else cfg.get("delta", 1.0)
    period = args.period if args.period is not None else cfg.get("period", 6)
    if protocol_entry["protocol"] == "random":
        protocol_entry["delta"] = delta
    if protocol_entry["protocol"] == "cyclic":
        protocol_entry["period"] = period
    protocol = protocol_from_dict(protocol_entry, lr)

    hyper = HyperParams(
        batch_size=args.batch_size if args.batch_size is not None else cfg.get("batch_size", 256),
        protocol=protocol,
        momentum=args.momentum if args.momentum is not None else cfg.get("momentum", 0.0),
        nesterov=args.nesterov or cfg.get("nesterov", False),
        weight_decay=args.weight_decay if args.weight_decay is not None else cfg.get("weight_decay", 0.0),
    )
    epochs = args.epochs if args.epochs is not None else cfg.get("epochs", 30)
    seed = args.seed if args.seed is not None else cfg.get("seed", 1)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    objective = build_objective(objective_cfg, out_dir)
    record = train(objective, hyper, epochs, seed)
    write_run_csv(record, out_dir / "run.csv")
    write_run_summary(record, out_dir / "run_summary.json",
                      extra={"protocol": protocol.label(), "seed": seed})
    last = record.epochs[-1]
    print(f"run complete: {record.steps} steps, final loss {last.train_loss:.6g}"
          + (f", test acc {last.test_acc:.4f}" if last.test_acc is not None else ""))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    data = _load_config(args.config) if args.config else dict(DEFAULT_SWEEP)
    data["out_dir"] = args.out_dir
    if args.jobs:
        data["jobs"] = args.jobs
    config = ExperimentConfig.from_dict(data)
    result = run_protocol_sweep(config)
    for row in result.aggregate:
        best = row.get("best_acc_mean")
        loss = row.get("final_loss_mean")
        print(f"{row['protocol']}: runs={row['runs']} diverged={row['diverged']}"
              + (f" best_acc={best:.4f}+-{row['best_acc_std']:.4f}" if best is not None else "")
              + (f" final_loss={loss:.6g}" if loss is not None else ""))
    if result.all_diverged:
        print("all runs diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_equal_temperature(args) -> int:
    data = _load_config(args.config) if args.config else dict(DEFAULT_EQUAL_TEMP)
    data["out_dir"] = args.out_dir
    if args.jobs:
        data["jobs"] = args.jobs
    config = EqualTemperatureConfig.from_dict(data)
    report = run_equal_temperature_experiment(config)
    for stats in report.member_stats:
        print(f"group {stats['label']}: final acc {stats['final_acc_mean']:.4f}"
              f"+-{stats['final_acc_std']:.4f}")
    c = report.control_stats
    print(f"control {c['label']}: final acc {c['final_acc_mean']:.4f}"
          f"+-{c['final_acc_std']:.4f}")
    print(f"group equivalent: {report.group_equivalent}; "
          f"control separated: {report.control_separated}")
    return EXIT_OK if report.verdict else EXIT_VERIFY


def _cmd_estimate_diffusion(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    obj = QuadraticEnsemble.isotropic(args.dim, args.samples, rng,
                                      spread=args.spread)
    x = obj.minimum + args.offset * np.ones(args.dim)
    report = analytic_covariance(obj, x, args.delta, args.batch_size,
                                 scheme=BatchScheme(args.scheme),
                                 mode=MomentMode(args.mode))
    empirical = empirical_covariance(obj, x, args.delta, args.batch_size,
                                     args.draws, rng)
    fro = float(np.linalg.norm(report.sigma))
    err = float(np.linalg.norm(empirical - report.sigma)) / fro if fro else 0.0

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "dim": args.dim, "samples": args.samples, "batch_size": args.batch_size,
        "delta": args.delta, "draws": args.draws, "seed": args.seed,
        "moment_mode": report.moment_mode.value,
        "batch_scheme": report.batch_scheme.value,
        "isotropic_scalar": isotropic_scalar(report),
        "sigma": report.sigma.tolist(),
        "dhat": report.dhat.tolist(),
        "d_offdiag": report.d_offdiag.tolist(),
        "empirical_sigma": empirical.tolist(),
        "frobenius_rel_error": err,
    }
    (out_dir / "diffusion_report.json").write_text(json.dumps(payload, indent=2) + "\n")
    with open(out_dir / "diffusion_comparison.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["quantity", "frobenius_norm"])
        writer.writerow(["sigma_analytic", repr(fro)])
        writer.writerow(["sigma_empirical", repr(float(np.linalg.norm(empirical)))])
        writer.writerow(["difference", repr(float(np.linalg.norm(empirical - report.sigma)))])
        writer.writerow(["relative_error", repr(err)])
    print(f"D = {isotropic_scalar(report):.6g}; empirical vs analytic "
          f"Frobenius relative error {err:.4f}")
    return EXIT_OK


def _stationary_params(args) -> SdeParams:
    return SdeParams(lr=args.lr, momentum=args.momentum,
                     diffusion=args.diffusion, batch_size=args.batch_size,
                     dt=args.dt)


def _cmd_sample_stationary(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    params = _stationary_params(args)
    xs, vs = sample_stationary(args.curvature, params, args.samples, rng,
                               n_chains=args.chains, method=args.method)
    T = params.temperature
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "moments.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["quantity", "empirical", "analytic"])
        writer.writerow(["var_x", repr(float(xs.var())), repr(params.lr * T / args.curvature)])
        writer.writerow(["var_v", repr(float(vs.var())), repr(T)])
        writer.writerow(["mean_x", repr(float(xs.mean())), repr(0.0)])
        writer.writerow(["mean_v", repr(float(vs.mean())), repr(0.0)])
    for name, data in (("position", xs), ("velocity", vs)):
        counts, edges = np.histogram(data.ravel(), bins=args.bins)
        with open(out_dir / f"{name}_histogram.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["bin_left", "bin_right", "count"])
            for k in range(len(counts)):
                writer.writerow([repr(float(edges[k])), repr(float(edges[k + 1])),
                                 int(counts[k])])
    print(f"collected {len(xs)} samples; Var(V)/T = {float(vs.var()) / T:.4f}, "
          f"Var(X)/(lT/k) = {float(xs.var()) / (params.lr * T / args.curvature):.4f}")
    return EXIT_OK


def _cmd_weak_error(args) -> int:
    rng = np.random.Generator(np.random.PCG64(0))
    obj = QuadraticEnsemble(np.array([[args.curvature]]),
                            rng.standard_normal((args.samples, 1)))
    l_values = [float(v) for v in args.l_values.split(",")]
    result = weak_error_probe(obj, args.momentum, l_values, args.horizon)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "weak_error.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["l", "mean_error"])
        for l, err in result.points:
            writer.writerow([repr(l), repr(err)])
    print(f"log-log slope: {result.slope:.4f}")
    if not args.slope_min <= result.slope <= args.slope_max:
        print(f"slope outside [{args.slope_min}, {args.slope_max}]", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _cmd_temperature(args) -> int:
    params = effective_temperature(args.lr, args.diffusion, args.batch_size,
                                   args.momentum)
    print(f"T = {params.temperature:.8g}")
    print(f"beta = {params.beta:.8g}")
    return EXIT_OK


def _cmd_verify_gibbs(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed))
    params = _stationary_params(args)
    xs, vs = sample_stationary(args.curvature, params, args.samples, rng,
                               n_chains=args.chains, method="exact")
    quad = QuadraticEnsemble(np.array([[args.curvature]]), np.zeros((1, 1)))
    density = GibbsDensity(quad, params.lr, params.temperature)
    comparison = compare_to_gibbs(xs, vs, density, var_rtol=args.var_rtol)
    print(f"Var(V)/T = {comparison.v_var_ratio[0]:.4f}; "
          f"Var(X)/(lT/k) = {comparison.x_var_ratio[0]:.4f}")
    if comparison.passed:
        print("gibbs verification passed")
        return EXIT_OK
    for failure in comparison.failures:
        print(f"FAIL: {failure}", file=sys.stderr)
    return EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdlab",
                                     description="SGD learning-rate protocol laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a single run")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default="out/train")
    p.add_argument("--protocol", choices=["constant", "random", "cyclic"], default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--period", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--nesterov", action="store_true")
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data-dir", default=None,
                   help="directory with IDX files (switches to the mnist objective)")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=1000)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep-protocols", help="train every (protocol, seed) pair")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default="out/sweep")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("equal-temperature",
                       help="compare trainings at equal effective temperature")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default="out/equal_temperature")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_equal_temperature)

    p = sub.add_parser("estimate-diffusion",
                       help="analytic vs Monte Carlo noise covariance on a quadratic bed")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--draws", type=int, default=200_000)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--offset", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--mode", choices=[m.value for m in MomentMode], default="exact")
    p.add_argument("--scheme", choices=[s.value for s in BatchScheme],
                   default="subset-enumeration")
    p.add_argument("--out-dir", default="out/diffusion")
    p.set_defaults(func=_cmd_estimate_diffusion)

    def add_sde_args(p):
        p.add_argument("--curvature", type=float, default=1.0)
        p.add_argument("--lr", type=float, default=0.005)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--batch-size", type=int, default=256)
        p.add_argument("--diffusion", type=float, default=1.0)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--samples", type=int, default=100_000)
        p.add_argument("--chains", type=int, default=100)
        p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("sample-stationary",
                       help="draw stationary samples on a quadratic potential")
    add_sde_args(p)
    p.add_argument("--method", choices=["exact", "em"], default="exact")
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--out-dir", default="out/stationary")
    p.set_defaults(func=_cmd_sample_stationary)

    p = sub.add_parser("weak-error",
                       help="mean-trajectory error of the SDE vs the discrete chain")
    p.add_argument("--l-values", default="0.1,0.05,0.025,0.0125")
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--curvature", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--slope-min", type=float, default=0.8)
    p.add_argument("--slope-max", type=float, default=1.5)
    p.add_argument("--out-dir", default="out/weak_error")
    p.set_defaults(func=_cmd_weak_error)

    p = sub.add_parser("temperature", help="print the effective temperature")
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--diffusion", type=float, required=True)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--momentum", type=float, default=0.0)
    p.set_defaults(func=_cmd_temperature)

    p = sub.add_parser("verify-gibbs",
                       help="sample the stationary state and check it against "
                            "the analytic Gibbs density")
    add_sde_args(p)
    p.add_argument("--var-rtol", type=float, default=0.05)
    p.set_defaults(func=_cmd_verify_gibbs)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MisuseError, IdxFormatError, CapacityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
