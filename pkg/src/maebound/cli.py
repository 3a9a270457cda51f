"""Command-line entry point: ``maebound <subcommand> [options]``.

Exit codes: 0 success, 1 configuration/usage error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bounds
from .data import dataset_to_bytes, synth_smooth_dataset
from .errors import ConfigError, FormatError, MaeBoundError, NumericError, ParameterError
from .experiment import load_config, load_experiment_data, run_experiment
from .network import NetworkSpec, init_network, network_to_bytes
from .numerics import Rng
from .rademacher import run_suite
from .report import atomic_write, dumps_json, emit_curves
from .training import TrainLog, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _widths(text: str) -> tuple:
    try:
        return tuple(int(w) for w in text.split("-") if w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"widths must look like 64-64-128, got {text!r}")


def _bound_inputs(a) -> bounds.BoundInputs:
    return bounds.BoundInputs(q=a.q, d=a.d, N=a.N, k=a.k, n_k=a.n_k, r=a.r, lam=a.lam,
                              lam_prime=a.lam_prime, s=a.s, delta=a.delta)


def _add_bound_args(p, depth=True):
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--r", type=float, required=True, help="differential order of the target")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--lam-prime", type=float, default=1.0)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.95)
    if depth:
        p.add_argument("--k", type=int, required=True, help="number of hidden layers")
        p.add_argument("--n-k", type=int, required=True, help="top hidden layer width")


def _emit(text: str, out: Path, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write(out / name, text)
        print(out / name)


def cmd_calibrate(a) -> int:
    inp = bounds.BoundInputs(q=a.q, d=a.d, N=a.N, k=1, n_k=a.l1, r=a.r, lam=a.lam,
                             lam_prime=a.lam_prime, s=a.s, delta=a.delta)
    cal = bounds.calibrate(a.mae1, a.mae2, a.l1, a.l2, inp)
    _emit(dumps_json(cal.to_dict()), a.out, "calibration.json")
    return EXIT_OK


def cmd_bound(a) -> int:
    inp = _bound_inputs(a)
    base = bounds.BoundInputs(q=a.q, d=a.d, N=a.N, k=1, n_k=a.l1, r=a.r, lam=a.lam,
                              lam_prime=a.lam_prime, s=a.s, delta=a.delta)
    cal = bounds.calibrate(a.mae1, a.mae2, a.l1, a.l2, base)
    rep = bounds.mae_upper_bound(cal, inp, a.architecture, include_hoeffding=a.include_hoeffding)
    _emit(dumps_json(rep.to_dict()), a.out, "bound.json")
    return EXIT_OK


def cmd_experiment(a) -> int:
    if a.config is None:
        raise ConfigError("experiment needs --config")
    cfg = load_config(a.config, a.seed)
    out = a.out or Path("runs") / f"seed{cfg.seed}"
    report = run_experiment(cfg, out)
    for row in report["rows"]:
        mae = "failed" if row["failed"] else f"{row['test_mae']:.6g}"
        print(f"{row['name']:>6} {row['structure']:<28} MAE={mae} MAE_B={row['MAE_B']:.6g}")
    print(out / "report.json")
    return EXIT_OK


def cmd_train(a) -> int:
    if a.config is None:
        raise ConfigError("train needs --config")
    cfg = load_config(a.config, a.seed)
    train_set, test_set = load_experiment_data(cfg)
    tcfg = cfg.train_config()
    spec = NetworkSpec(train_set.input_dim, train_set.output_dim, a.widths, float(cfg.model["sharpness"]))
    net = init_network(spec, Rng(cfg.seed).child("init", a.name), tcfg.lambda_hidden, tcfg.top_mode)
    net, log = train(net, train_set, test_set, tcfg)
    out = a.out or Path(".")
    atomic_write(out / f"{a.name}.maeb", network_to_bytes(net))
    emit_curves(log, out / f"{a.name}_log.csv", a.name)
    print(f"final train MAE {log.final_train_mae:.6g}, test MAE {log.final_test_mae:.6g}")
    return EXIT_OK


def cmd_rademacher(a) -> int:
    lines = run_suite(seed=a.seed or 0, draws=a.draws, trials=a.trials)
    text = "".join(r.to_json() + "\n" for r in lines)
    _emit(text, a.out, "rademacher.jsonl")
    failed = [r for r in lines if not r.holds]
    if failed:
        print(f"{len(failed)} check(s) did not hold", file=sys.stderr)
    return EXIT_OK


def cmd_synth_data(a) -> int:
    seed = a.seed or 0
    ds, teacher = synth_smooth_dataset(a.d, a.q, a.n, seed, seed + 1, a.noise_variance)
    out = a.out or Path(".")
    atomic_write(out / "synthetic.maed", dataset_to_bytes(ds))
    atomic_write(out / "teacher.maeb", network_to_bytes(teacher))
    print(out / "synthetic.maed")
    return EXIT_OK


def cmd_emit_curves(a) -> int:
    try:
        text = Path(a.log).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {a.log}: {exc}") from exc
    log = TrainLog.from_csv(text)
    out = a.out or Path(a.log).parent
    csv_path, svg_path = emit_curves(log, out / Path(a.log).stem, Path(a.log).stem)
    print(svg_path)
    return EXIT_OK


def _global_flags(p, default):
    p.add_argument("--config", type=Path, default=default, help="TOML experiment config")
    p.add_argument("--seed", type=int, default=default, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, default=default, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=False if default is None else default)
    return p


def build_parser() -> argparse.ArgumentParser:
    top = _global_flags(argparse.ArgumentParser(add_help=False), None)
    # subcommands accept the same flags; SUPPRESS keeps them from clobbering top-level values
    common = _global_flags(argparse.ArgumentParser(add_help=False), argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="maebound", description=__doc__.splitlines()[0], parents=[top])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one network from a config's data")
    p.add_argument("--widths", type=_widths, required=True, help="hidden widths, e.g. 64-64-128")
    p.add_argument("--name", default="model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", parents=[common], help="solve the two-anchor system for c and b")
    _add_bound_args(p, depth=False)
    p.add_argument("--mae1", type=float, required=True)
    p.add_argument("--mae2", type=float, required=True)
    p.add_argument("--l1", type=int, required=True)
    p.add_argument("--l2", type=int, required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bound", parents=[common], help="AE/EE/OE decomposition for one architecture")
    _add_bound_args(p)
    p.add_argument("--mae1", type=float, required=True)
    p.add_argument("--mae2", type=float, required=True)
    p.add_argument("--l1", type=int, required=True)
    p.add_argument("--l2", type=int, required=True)
    p.add_argument("--architecture", default="")
    p.add_argument("--include-hoeffding", action="store_true")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("experiment", parents=[common], help="anchors -> calibration -> DNNs -> report")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("rademacher", parents=[common], help="run the Rademacher check suite")
    p.add_argument("--draws", type=int, default=10_000, help="Monte-Carlo sign draws")
    p.add_argument("--trials", type=int, default=60, help="sample sets for symmetrization")
    p.set_defaults(func=cmd_rademacher)

    p = sub.add_parser("synth-data", parents=[common], help="write a synthetic teacher dataset")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--q", type=int, default=16)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--noise-variance", type=float, default=0.0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("emit-curves", parents=[common], help="CSV + SVG curves from a training log CSV")
    p.add_argument("log", help="CSV with header epoch,train_mae,test_mae,max_grad_norm")
    p.set_defaults(func=cmd_emit_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParameterError, FormatError, MaeBoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
