"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the pytest terminal
summary under "acceptance criteria".
"""
import math
from dataclasses import replace
from pathlib import Path

import mpmath
import numpy as np
import pytest

from maebound.bounds import (
    BoundInputs,
    OptErrorInputs,
    anchor_inputs,
    approximation_error_bound,
    calibrate,
    estimation_error_bound,
    hoeffding_deviation,
    mae_upper_bound,
    optimization_error_bound,
)
from maebound.experiment import load_config, load_experiment_data, run_experiment, verify_report
from maebound.network import NetworkSpec, backprop_mae, forward, init_network, measure_norm_budget
from maebound.numerics import Rng, finite_diff_grad
from maebound.rademacher import run_suite
from maebound.training import TrainLog, mae_loss, train

ROOT = Path(__file__).resolve().parents[1]
MNIST_CONFIG = ROOT / "configs" / "mnist_desk.toml"
SYNTH_CONFIG = ROOT / "configs" / "synthetic.toml"
SEEDS = (0, 1, 2, 3, 4)


def test_calibration_oracle(record_criterion):
    base = BoundInputs(q=784, d=784, N=60000, k=1, n_k=1024, r=1176.0, lam_prime=1.0, s=1.0)
    cal = calibrate(0.1318, 0.1292, 1024, 2048, base)
    with mpmath.workdps(60):
        e = mpmath.mpf(1176) / 784
        p1, p2 = mpmath.mpf(1024) ** e, mpmath.mpf(2048) ** e
        gap = mpmath.mpf("0.1318") - mpmath.mpf("0.1292")
        c_ref = gap * p1 * p2 / (784 * (p2 - p1))
        b_ref = mpmath.mpf("0.1318") - gap * p2 / (p2 - p1) - 2 * 784 / mpmath.sqrt(60000)
    ok = (abs(cal.c - 0.16810) <= 1e-4 and abs(cal.c - float(c_ref)) <= 1e-12
          and b_ref < 0 and cal.b == 0.0 and cal.b_clamped)
    record_criterion(1, ok, f"c={cal.c:.8f} (mp {float(c_ref):.8f}), b={cal.b}, b_clamped={cal.b_clamped}")
    assert ok


def test_anchor_round_trip(record_criterion):
    cal = calibrate(0.9, 0.8, 4, 16, BoundInputs(q=1, d=2, N=10000, k=1, n_k=4, r=1.0))
    m1 = mae_upper_bound(cal, anchor_inputs(cal, 1)).MAE_B
    m2 = mae_upper_bound(cal, anchor_inputs(cal, 2)).MAE_B
    e1, e2 = abs(m1 - 0.9) / 0.9, abs(m2 - 0.8) / 0.8
    ok = e1 <= 1e-12 and e2 <= 1e-12 and abs(cal.c - 0.4) < 1e-12 and abs(cal.b - 0.68) < 1e-12
    record_criterion(2, ok, f"MAE_B at anchors {m1!r}, {m2!r} (rel err {e1:.1e}, {e2:.1e})")
    assert ok


def test_bound_formula_oracle(record_criterion):
    mnist = dict(q=784, d=784, N=60000, r=1176.0, lam=1.0, lam_prime=1.0, s=1.0)
    ee = estimation_error_bound(BoundInputs(k=4, n_k=2048, **mnist))
    h = hoeffding_deviation(60000, 0.95)
    ae = approximation_error_bound(0.16810, BoundInputs(k=4, n_k=2048, **mnist))
    oe = optimization_error_bound(OptErrorInputs(mu=0.02, M=1.0, beta=1.0, gamma=0.1))
    ae_direct = 0.16810 * 784 / 2051 ** 1.5
    ok = (abs(ee - 6.40129) <= 1e-4 and abs(ee - 2 * 784 / math.sqrt(60000)) <= 1e-12
          and abs(h - 5.5445e-3) <= 1e-7 and abs(ae - ae_direct) <= 1e-6 * ae_direct
          and abs(ae - 1.4188e-3) <= 5e-8 and oe == pytest.approx(0.1, abs=1e-15))
    record_criterion(3, ok, f"EE={ee:.6f} hoeffding={h:.7e} AE={ae:.7e} OE={oe!r}")
    assert ok


def _gradient_instance(rng: Rng, n_hidden: int, t: float):
    gen = rng.generator()
    d, q = int(gen.integers(2, 5)), int(gen.integers(1, 4))
    widths = tuple(int(w) for w in gen.integers(2, 6, size=n_hidden))
    net = init_network(NetworkSpec(d, q, widths, sharpness=t), rng.child("net"))
    x = gen.uniform(-1, 1, (int(gen.integers(1, 5)), d))
    pred = forward(net, x)
    # keep every residual coordinate well away from the |.| kink
    y = pred + gen.choice([-1.0, 1.0], size=pred.shape) * gen.uniform(0.01, 0.5, size=pred.shape)
    return net, x, y


def test_gradient_correctness(record_criterion):
    worst, count = 0.0, 0
    for n_hidden in (1, 2, 3):
        for t in (10.0, 50.0):
            for i in range(20):
                net, x, y = _gradient_instance(Rng(11).child(n_hidden, int(t), i), n_hidden, t)
                assert np.min(np.abs(forward(net, x) - y)) > 1e-3
                grads = backprop_mae(net, x, y)
                params = net.parameters()
                sizes = np.cumsum([p.size for p in params])[:-1]

                def loss(flat):
                    ps = [c.reshape(p.shape) for c, p in zip(np.split(flat, sizes), params)]
                    return mae_loss(forward(net.with_parameters(ps), x), y)

                # relative error of the whole gradient: single blocks behind
                # saturated units can be ~1e-10, below finite-difference resolution
                fd = finite_diff_grad(loss, np.concatenate([p.ravel() for p in params]), h=1e-6)
                full = np.concatenate([g.ravel() for g in grads])
                worst = max(worst, np.linalg.norm(full - fd) / np.linalg.norm(fd))
                count += 1
    ok = count >= 100 and worst <= 1e-4
    record_criterion(4, ok, f"{count} instances, weight-matrix counts 2-4, t in (10, 50), "
                            f"worst relative error {worst:.2e}")
    assert ok


def test_constraint_enforcement(record_criterion):
    cfg = load_config(SYNTH_CONFIG)
    tr, te = load_experiment_data(cfg)
    tcfg = replace(cfg.train_config(), epochs=20)
    worst = [0.0]
    steps = [0]

    def check(step, net):
        lam, lam_p = measure_norm_budget(net)
        hidden = [np.abs(np.linalg.norm(w, axis=1) - 1.0).max() for w in net.weights[:-1]]
        top = np.abs(np.abs(net.weights[-1]).sum(axis=1) - 1.0).max()
        worst[0] = max(worst[0], abs(lam - 1.0), abs(lam_p - 1.0), *hidden, top)
        steps[0] = step

    for widths in [(cfg.anchors[0],)] + cfg.dnns:
        net = init_network(NetworkSpec(tr.input_dim, tr.output_dim, widths), Rng(0).child("c5", *widths))
        _, log = train(net, tr, te, tcfg, on_step=check)
        assert log.epochs == 20
    ok = worst[0] <= 1e-12 and steps[0] > 0
    record_criterion(5, ok, f"max |norm - 1| over all steps and rows: {worst[0]:.2e}")
    assert ok


def test_rademacher_suite(record_criterion):
    records = run_suite(seed=0, draws=10_000, trials=60)
    exact = {r.params.get("instance"): r for r in records if r.check == "exact_value"}
    named = (exact["singleton"].lhs == 0.0 and exact["two_constants_N2"].lhs == 0.5
             and exact["signed_identity_S12"].lhs == 1.0)
    exact_checks = [r for r in records if r.seed is None]
    mc = [r for r in records if r.check == "mc_agreement"]
    mc_ok = all(abs(r.lhs - r.rhs) <= 3 * r.std_error + 1e-12 for r in mc)
    failed = [r.check for r in records if not r.holds]
    ok = named and mc_ok and not failed
    record_criterion(6, ok, f"{len(records)} records ({len(exact_checks)} exact, {len(mc)} MC agreement), "
                            f"failures: {failed or 'none'}")
    assert ok


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """The desk-scale MNIST pipeline for every seed, plus a rerun of the first."""
    base = tmp_path_factory.mktemp("desk")
    reports = {}
    for seed in SEEDS:
        cfg = load_config(MNIST_CONFIG, seed=seed)
        reports[seed] = run_experiment(cfg, base / f"seed{seed}")
    rerun = run_experiment(load_config(MNIST_CONFIG, seed=SEEDS[0]), base / "rerun")
    return base, reports, rerun


def _rows(report):
    return {r["name"]: r for r in report["rows"]}


def test_desk_scale_depth_ordering(desk_runs, record_criterion):
    _, reports, _ = desk_runs
    wins, ae_ok, lines = 0, True, []
    for seed, rep in reports.items():
        verify_report(rep)
        rows = _rows(rep)
        shallow, deep = rows["DNN1"], rows["DNN2"]
        assert shallow["width_constraint_waived"] and deep["width_constraint_waived"]
        wins += deep["test_mae"] <= shallow["test_mae"]
        ae_ok &= deep["AE"] < shallow["AE"]
        lines.append(f"s{seed}:{deep['test_mae']:.3f}/{shallow['test_mae']:.3f}")
    ok = wins >= 3 and ae_ok
    record_criterion(7, ok, f"deeper test MAE <= shallower on {wins}/5 seeds, AE monotone={ae_ok} "
                            f"(deep/shallow {' '.join(lines)})")
    assert ae_ok
    assert wins >= 3


def test_bound_dominance_synthetic(tmp_path, record_criterion):
    rep = run_experiment(load_config(SYNTH_CONFIG), tmp_path)
    verify_report(rep)
    dnns = [r for r in rep["rows"] if r["role"] == "dnn"]
    ok = bool(dnns) and all(not r["failed"] and r["MAE_B"] >= r["test_mae"] for r in dnns)
    detail = ", ".join(f"{r['name']} MAE={r['test_mae']:.4f} MAE_B={r['MAE_B']:.4f}" for r in dnns)
    record_criterion(8, ok, f"{detail}, b_clamped={rep['calibration']['b_clamped']}")
    assert ok


def test_training_curves(desk_runs, record_criterion):
    base, reports, _ = desk_runs
    decreasing, deeper_wins = True, 0
    for seed, rep in reports.items():
        for row in rep["rows"]:
            log = TrainLog.from_csv((base / f"seed{seed}" / f"{row['name']}_log.csv").read_text())
            assert (base / f"seed{seed}" / f"{row['name']}_log.svg").read_text().count("<polyline") == 2
            assert log.final_train_mae == pytest.approx(row["train_mae"], rel=1e-9)
            decreasing &= row["train_mae"] <= row["initial_train_mae"]
        rows = _rows(rep)
        deeper_wins += rows["DNN2"]["train_mae"] <= rows["DNN1"]["train_mae"]
    ok = decreasing and deeper_wins >= 3
    record_criterion(9, ok, f"final <= initial train MAE for every model: {decreasing}; "
                            f"deeper final train MAE <= shallower on {deeper_wins}/5 seeds")
    assert decreasing
    assert deeper_wins >= 3


def test_determinism(desk_runs, record_criterion):
    base, _, _ = desk_runs
    first, again = base / f"seed{SEEDS[0]}", base / "rerun"
    names = ["report.json"] + sorted(p.name for p in first.glob("*.csv"))
    same = [(first / n).read_bytes() == (again / n).read_bytes() for n in names]
    ok = all(same) and len(names) == 5
    record_criterion(10, ok, f"{sum(same)}/{len(names)} files byte-identical on rerun")
    assert ok
