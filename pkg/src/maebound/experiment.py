"""Anchor ANNs -> calibration -> DNNs -> decomposition report.

Configuration files are TOML with dotted sections, e.g.::

    seed = 0

    [data]
    source = "idx"
    images = "../data/mnist5k-images-idx3-ubyte.gz"
    n_train = 2000
    n_test = 500
    variance = 1.0

    [roster]
    anchors = [64, 128]
    dnns = [[64, 64, 64, 128], [64, 64, 64, 64, 64, 128]]

    [train]
    learning_rate = 0.02
    momentum = 0.2

    [bound]
    r = 1176
    waive_width = true

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bounds import BoundInputs, calibrate, mae_upper_bound
from .data import corrupt_agrn, load_idx, split, synth_smooth_dataset
from .errors import ConfigError, NumericError, ParameterError
from .network import DEFAULT_SHARPNESS, NetworkSpec, init_network, network_to_bytes
from .numerics import Rng
from .report import atomic_write, decomposition_table, dumps_json, emit_curves
from .training import TrainConfig, train

log = logging.getLogger(__name__)

REPORT_VERSION = 1

DATA_DEFAULTS = {
    "source": "synthetic",
    "images": None,
    "n_train": 2000,
    "n_test": 500,
    "variance": 1.0,
    "d": 16,
    "q": 16,
    "n": 2000,
    "noise_variance": 0.0,
    "test_fraction": 0.2,
    "teacher_width": None,
}
BOUND_DEFAULTS = {
    "r": None,
    "delta": 0.95,
    "per_dimension": False,
    "include_hoeffding": False,
    "waive_width": False,
}
MODEL_DEFAULTS = {"sharpness": DEFAULT_SHARPNESS}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"seed", "per_dimension"}


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: dict = field(default_factory=dict)
    anchors: tuple = (32, 64)
    dnns: list = field(default_factory=list)
    names: list = None
    train: dict = field(default_factory=dict)
    bound: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        self.data = {**DATA_DEFAULTS, **self.data}
        self.bound = {**BOUND_DEFAULTS, **self.bound}
        self.model = {**MODEL_DEFAULTS, **self.model}
        self.anchors = tuple(int(a) for a in self.anchors)
        self.dnns = [tuple(int(w) for w in widths) for widths in self.dnns]
        self.validate()

    def validate(self) -> None:
        if len(self.anchors) != 2 or not self.anchors[1] > self.anchors[0] >= 1:
            raise ConfigError(f"roster.anchors must be two widths l1 < l2, got {list(self.anchors)}")
        for widths in self.dnns:
            if len(widths) < 2 or min(widths) < 1:
                raise ConfigError(f"every DNN needs at least 2 positive hidden widths, got {list(widths)}")
        if self.bound["r"] is None or not float(self.bound["r"]) > 0:
            raise ConfigError("bound.r (differential order) must be given and positive")
        if self.data["source"] not in ("idx", "synthetic"):
            raise ConfigError(f"data.source must be 'idx' or 'synthetic', got {self.data['source']!r}")
        if self.data["source"] == "idx" and not self.data["images"]:
            raise ConfigError("data.images is required for source = 'idx'")
        unknown = set(self.train) - _TRAIN_FIELDS
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        if self.names is not None and len(self.names) != len(self.dnns):
            raise ConfigError("roster.names must name every DNN")
        try:
            self.train_config()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=int(self.seed), per_dimension=bool(self.bound["per_dimension"]), **self.train)

    def roster(self) -> list:
        """``(name, role, hidden_widths)`` for every model, anchors first."""
        out = [("ANN1", "anchor", (self.anchors[0],)), ("ANN2", "anchor", (self.anchors[1],))]
        names = self.names or [f"DNN{i + 1}" for i in range(len(self.dnns))]
        out += [(n, "dnn", w) for n, w in zip(names, self.dnns)]
        return out

    def to_dict(self) -> dict:
        """Canonical echo of everything that determines the results."""
        return {
            "seed": int(self.seed),
            "data": dict(self.data),
            "roster": {"anchors": list(self.anchors), "dnns": [list(w) for w in self.dnns],
                       "names": [r[0] for r in self.roster()[2:]]},
            "train": {k: v for k, v in vars(self.train_config()).items()},
            "bound": dict(self.bound),
            "model": dict(self.model),
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def config_from_dict(raw: dict, base_dir=".") -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    known = {"seed", "data", "roster", "train", "bound", "model", "out"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    roster = raw.get("roster", {})
    bad = set(roster) - {"anchors", "dnns", "names"}
    if bad:
        raise ConfigError(f"unknown roster keys: {sorted(bad)}")
    for section, allowed in (("data", DATA_DEFAULTS), ("bound", BOUND_DEFAULTS), ("model", MODEL_DEFAULTS)):
        extra = set(raw.get(section, {})) - set(allowed)
        if extra:
            raise ConfigError(f"unknown {section} keys: {sorted(extra)}")
    try:
        return ExperimentConfig(
            seed=int(raw.get("seed", 0)),
            data=raw.get("data", {}),
            anchors=roster.get("anchors", (32, 64)),
            dnns=roster.get("dnns", []),
            names=roster.get("names"),
            train=raw.get("train", {}),
            bound=raw.get("bound", {}),
            model=raw.get("model", {}),
            base_dir=Path(base_dir),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path, seed: int = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if seed is not None:
        raw["seed"] = seed
    return config_from_dict(raw, path.parent)


def load_experiment_data(cfg: ExperimentConfig):
    """Build ``(train, test)`` from the config's data section."""
    d = cfg.data
    rng = Rng(cfg.seed)
    if d["source"] == "idx":
        images = load_idx(cfg.resolve(d["images"]))
        need = int(d["n_train"]) + int(d["n_test"])
        if need > len(images):
            raise ConfigError(f"asked for {need} images, file holds {len(images)}")
        pick = np.sort(rng.child("subset").generator().permutation(len(images))[:need])
        pool = corrupt_agrn(images.pixels[pick], float(d["variance"]), rng.child("noise"))
        order = rng.child("split").generator().permutation(need)
        return pool.subset(np.sort(order[:int(d["n_train"])])), pool.subset(np.sort(order[int(d["n_train"]):]))
    ds, _ = synth_smooth_dataset(int(d["d"]), int(d["q"]), int(d["n"]),
                                 teacher_seed=int(rng.child("teacher").generator().integers(2**63)),
                                 noise_seed=int(rng.child("noise").generator().integers(2**63)),
                                 noise_variance=float(d["noise_variance"]),
                                 teacher_width=d["teacher_width"])
    return split(ds, float(d["test_fraction"]), rng.child("split"))


def _train_model(name, widths, cfg, train_set, test_set, tcfg):
    spec = NetworkSpec(train_set.input_dim, train_set.output_dim, widths, float(cfg.model["sharpness"]))
    net = init_network(spec, Rng(cfg.seed).child("init", name), tcfg.lambda_hidden, tcfg.top_mode)
    return train(net, train_set, test_set, tcfg)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run the full pipeline; write files to ``out_dir`` when given.

    Returns the report dictionary. Anchor training failures raise
    :class:`NumericError`; DNN failures are recorded as failed rows.
    """
    train_set, test_set = load_experiment_data(cfg)
    tcfg = cfg.train_config()
    d, q, n = train_set.input_dim, train_set.output_dim, len(train_set)
    if not cfg.bound["waive_width"]:
        narrow = [name for name, _, w in cfg.roster() if min(w) < d + 2]
        if narrow:
            raise ConfigError(f"hidden widths below d+2={d + 2} in {narrow}; set bound.waive_width = true")
    s_measured = train_set.max_input_norm()
    per_dim = bool(cfg.bound["per_dimension"])
    # a per-coordinate MAE is an average of q scalar regressions, each bounded with q = 1
    q_bound = 1 if per_dim else q
    out = Path(out_dir) if out_dir is not None else None

    trained = {}
    logs = {}
    for name, role, widths in cfg.roster():
        log.info("training %s %s", name, widths)
        try:
            net, tlog = _train_model(name, widths, cfg, train_set, test_set, tcfg)
        except NumericError as exc:
            if role == "anchor":
                raise NumericError(f"anchor {name} diverged: {exc}", exc.epoch) from exc
            trained[name] = None
            logs[name] = str(exc)
            continue
        trained[name] = net
        logs[name] = tlog
        if out is not None:
            emit_curves(tlog, out / f"{name}_log.csv", title=f"{name} {'-'.join(map(str, widths))}")
            atomic_write(out / f"{name}.maeb", network_to_bytes(net))

    a1, a2 = logs["ANN1"], logs["ANN2"]
    lam_prime_cal = max(a1.lam_prime, a2.lam_prime)
    base = BoundInputs(q=q_bound, d=d, N=n, k=1, n_k=cfg.anchors[0], r=float(cfg.bound["r"]),
                       lam=tcfg.lambda_hidden, lam_prime=lam_prime_cal, s=s_measured,
                       delta=float(cfg.bound["delta"]))
    cal = calibrate(a1.final_test_mae, a2.final_test_mae, cfg.anchors[0], cfg.anchors[1], base)

    rows = []
    for name, role, widths in cfg.roster():
        tlog = logs[name]
        failed = not hasattr(tlog, "train_mae")
        lam_prime = lam_prime_cal if failed else (tlog.lam_prime if tcfg.top_mode == "measure" else lam_prime_cal)
        if role == "anchor":
            lam_prime = lam_prime_cal
        inp = BoundInputs(q=q_bound, d=d, N=n, k=len(widths), n_k=widths[-1], r=base.r,
                          lam=tcfg.lambda_hidden, lam_prime=lam_prime, s=s_measured,
                          delta=base.delta, min_width=min(widths))
        rep = mae_upper_bound(cal, inp, name, include_hoeffding=bool(cfg.bound["include_hoeffding"]))
        row = {
            "name": name,
            "role": role,
            "structure": "-".join(str(v) for v in (d,) + tuple(widths) + (q,)),
            "hidden_widths": list(widths),
            "k": len(widths),
            "n_k": widths[-1],
            "AE": rep.AE, "EE": rep.EE, "OE": rep.OE, "hoeffding": rep.hoeffding, "MAE_B": rep.MAE_B,
            "b_clamped": rep.b_clamped,
            "violations": rep.violations,
            "width_constraint_waived": bool(cfg.bound["waive_width"]) and any("d+2" in v for v in rep.violations),
            "failed": failed,
        }
        if failed:
            row.update(error=tlog, test_mae=None, train_mae=None, initial_train_mae=None,
                       initial_test_mae=None, max_grad_norm=None, lam=None, lam_prime=None,
                       onset_epoch=None, bound_dominates=None)
        else:
            row.update(
                test_mae=tlog.final_test_mae, train_mae=tlog.final_train_mae,
                initial_train_mae=tlog.initial_train_mae, initial_test_mae=tlog.initial_test_mae,
                max_grad_norm=max(tlog.max_grad_norm) if tlog.max_grad_norm else 0.0,
                lam=tlog.lam, lam_prime=tlog.lam_prime, onset_epoch=tlog.onset_epoch,
                bound_dominates=rep.MAE_B >= tlog.final_test_mae,
            )
        rows.append(row)

    report = {
        "report_version": REPORT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": int(cfg.seed),
        "data": {"n_train": n, "n_test": len(test_set), "d": d, "q": q,
                 "provenance": train_set.provenance, "targets_scaled_with_inputs": True},
        "measured": {"s": s_measured, "s_nominal": 1.0, "lam": tcfg.lambda_hidden,
                     "lam_prime": lam_prime_cal, "top_mode": tcfg.top_mode},
        "calibration": _calibration_dict(cal),
        "rows": rows,
    }
    if out is not None:
        atomic_write(out / "report.json", dumps_json(report))
        atomic_write(out / "decomposition.md", decomposition_table(rows))
    return report


def _calibration_dict(cal) -> dict:
    return {"c": cal.c, "c_raw": cal.c_raw, "c_clamped": cal.c_clamped,
            "b": cal.b, "b_raw": cal.b_raw, "b_clamped": cal.b_clamped,
            "l1": cal.l1, "l2": cal.l2, "mae1": cal.mae1, "mae2": cal.mae2,
            "q": cal.inputs.q, "d": cal.inputs.d, "N": cal.inputs.N, "r": cal.inputs.r,
            "r_over_d": cal.inputs.exponent, "lam_prime": cal.inputs.lam_prime, "s": cal.inputs.s}


def verify_report(report: dict) -> None:
    """Re-check row arithmetic after deserialization."""
    for row in report["rows"]:
        if row["MAE_B"] != row["AE"] + row["EE"] + row["OE"] + row.get("hoeffding", 0.0):
            raise ParameterError(f"row {row['name']}: MAE_B != AE + EE + OE")
    if len(report["rows"]) != len(report["config"]["roster"]["dnns"]) + 2:
        raise ParameterError("row count does not match the roster")
