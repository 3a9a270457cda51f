"""Losses, momentum SGD with per-step renormalization, and the epoch loop."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import Dataset
from .errors import DimensionError, NumericError, ParameterError
from .network import (
    Network,
    backprop,
    forward,
    mae_output_grad,
    measure_norm_budget,
    renormalize,
)
from .numerics import Rng

LOG_HEADER = ("epoch", "train_mae", "test_mae", "max_grad_norm")


def _paired(predictions, targets):
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if p.shape[0] != t.shape[0]:
        raise ParameterError(f"{p.shape[0]} predictions vs {t.shape[0]} targets")
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} differs from target shape {t.shape}")
    if p.shape[0] == 0:
        raise ParameterError("need at least one pair")
    return p, t


def mae_loss(predictions, targets, per_dimension: bool = False) -> float:
    """Mean over pairs of the L1 distance; optionally also averaged over coordinates."""
    p, t = _paired(predictions, targets)
    loss = float(np.mean(np.abs(p - t).sum(axis=1)))
    return loss / p.shape[1] if per_dimension else loss


def mse_loss(predictions, targets) -> float:
    """Mean over pairs of the squared L2 distance."""
    p, t = _paired(predictions, targets)
    r = p - t
    return float(np.mean(np.einsum("ij,ij->i", r, r)))


def _mse_output_grad(pred, target):
    return 2.0 * (pred - target) / pred.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    momentum: float = 0.2
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    lambda_hidden: float = 1.0
    top_mode: str = "normalize"
    loss: str = "mae"
    # "step" | "epoch" | "off"
    renormalize: str = "step"
    per_dimension: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ParameterError("epochs must be >= 0 and batch_size > 0")
        if self.loss not in ("mae", "mse"):
            raise ParameterError(f"unknown loss {self.loss!r}")
        if self.top_mode not in ("normalize", "measure"):
            raise ParameterError(f"unknown top_mode {self.top_mode!r}")
        if self.renormalize not in ("step", "epoch", "off"):
            raise ParameterError(f"unknown renormalize policy {self.renormalize!r}")
        if not self.lambda_hidden > 0:
            raise ParameterError("lambda_hidden must be positive")


@dataclass
class TrainLog:
    seed: int
    initial_train_mae: float
    initial_test_mae: float
    train_mae: list = field(default_factory=list)
    test_mae: list = field(default_factory=list)
    max_grad_norm: list = field(default_factory=list)
    lam: float = 0.0
    lam_prime: float = 0.0
    s: float = 0.0
    steps: int = 0
    wall_clock: list = field(default_factory=list, compare=False)

    @property
    def epochs(self) -> int:
        return len(self.train_mae)

    @property
    def final_train_mae(self) -> float:
        return self.train_mae[-1] if self.train_mae else self.initial_train_mae

    @property
    def final_test_mae(self) -> float:
        return self.test_mae[-1] if self.test_mae else self.initial_test_mae

    @property
    def onset_epoch(self) -> Optional[int]:
        """First epoch whose train MAE is below the initial one (diagnostic only)."""
        for i, v in enumerate(self.train_mae, start=1):
            if v < self.initial_train_mae:
                return i
        return None

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for i in range(self.epochs):
            w.writerow([i + 1] + [f"{v:.10g}" for v in
                                  (self.train_mae[i], self.test_mae[i], self.max_grad_norm[i])])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int = 0) -> "TrainLog":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != LOG_HEADER:
            raise ParameterError(f"CSV header must be {','.join(LOG_HEADER)}")
        body = [[float(v) for v in r[1:]] for r in rows[1:] if r]
        if not body:
            raise ParameterError("CSV log has no epochs")
        cols = list(zip(*body))
        return cls(seed, cols[0][0], cols[1][0], list(cols[0]), list(cols[1]), list(cols[2]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock")
        return d


def grad_norm_bound(log) -> float:
    """Empirical gradient-norm bound: the largest logged gradient L2 norm."""
    norms = log.max_grad_norm if isinstance(log, TrainLog) else list(log)
    if len(norms) == 0:
        raise ParameterError("gradient-norm log is empty")
    return float(max(norms))


def _flat_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def sgd_step(net: Network, grads, velocity, learning_rate: float, momentum: float,
             lambda_hidden: float = 1.0, top_mode: str = "normalize", renorm: bool = True):
    """One momentum step ``v <- m v + g; w <- w - lr v``, then renormalization.

    ``velocity`` may be None for a zero start. Returns ``(net, velocity)``.
    """
    params = net.parameters()
    if len(grads) != len(params):
        raise DimensionError(f"{len(grads)} gradients for {len(params)} parameters")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_v, new_p = [], []
    for p, g, v in zip(params, grads, velocity):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
        v = momentum * v + g
        new_v.append(v)
        new_p.append(p - learning_rate * v)
    out = net.with_parameters(new_p)
    if renorm:
        out = renormalize(out, lambda_hidden, top_mode)
    return out, new_v


def evaluate_mae(net: Network, ds: Dataset, per_dimension: bool = False) -> float:
    return mae_loss(forward(net, ds.x), ds.y, per_dimension)


def train(net: Network, train_set: Dataset, test_set: Dataset, config: TrainConfig,
          on_step: Callable[[int, Network], None] = None):
    """Mini-batch momentum SGD. Returns ``(trained_net, log)``.

    Batches are drawn from a fresh permutation per epoch
    (``Rng(seed).child("shuffle", epoch)``). ``on_step(step, net)`` is called
    after every update, post renormalization.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise ParameterError("train and test sets must be non-empty")
    spec = net.spec
    for ds in (train_set, test_set):
        if ds.input_dim != spec.input_dim or ds.output_dim != spec.output_dim:
            raise DimensionError("dataset dims do not match the network")
    out_grad = mae_output_grad if config.loss == "mae" else _mse_output_grad
    pd = config.per_dimension
    log = TrainLog(config.seed, evaluate_mae(net, train_set, pd), evaluate_mae(net, test_set, pd))
    shuffle = Rng(config.seed).child("shuffle")
    velocity = None
    step = 0
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        perm = shuffle.child(epoch).generator().permutation(n)
        worst = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, yb = train_set.x[idx], train_set.y[idx]
            # overflow is caught by the finiteness check below
            with np.errstate(over="ignore", invalid="ignore"):
                pred = forward(net, xb)
                grads = backprop(net, xb, out_grad(pred, yb))
                gnorm = _flat_norm(grads)
            if not np.isfinite(gnorm):
                raise NumericError(f"non-finite gradient in epoch {epoch}", epoch)
            worst = max(worst, gnorm)
            net, velocity = sgd_step(net, grads, velocity, config.learning_rate, config.momentum,
                                     config.lambda_hidden, config.top_mode,
                                     renorm=config.renormalize == "step")
            step += 1
            if on_step is not None:
                on_step(step, net)
        if config.renormalize == "epoch":
            net = renormalize(net, config.lambda_hidden, config.top_mode)
        with np.errstate(over="ignore", invalid="ignore"):
            tr = evaluate_mae(net, train_set, pd)
            te = evaluate_mae(net, test_set, pd)
        if not (np.isfinite(tr) and np.isfinite(te)):
            raise NumericError(f"loss diverged in epoch {epoch}", epoch)
        log.train_mae.append(tr)
        log.test_mae.append(te)
        log.max_grad_norm.append(worst)
        log.wall_clock.append(time.perf_counter() - tic)
    log.steps = step
    log.lam, log.lam_prime = measure_norm_budget(net)
    log.s = train_set.max_input_norm()
    return net, log
