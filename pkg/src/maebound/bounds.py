"""Closed-form MAE bound terms, two-anchor calibration and the decomposition report.

Depth convention: ``BoundInputs.k`` counts *hidden* (smooth-ReLU) layers and
``n_k`` is the width of the top hidden layer. A single-hidden-layer anchor
network therefore sits at ``k=1``, where the approximation term has base
``n_k`` and the estimation term carries no hidden-layer budget factor, which
is exactly the anchor system the calibration solves. Depth ``k < 2`` is
reported as a validity violation, never rejected.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

from .errors import DegenerateAnchorError, ParameterError


@dataclass(frozen=True)
class BoundInputs:
    q: int
    d: int
    N: int
    k: int
    n_k: int
    r: float
    lam: float = 1.0
    lam_prime: float = 1.0
    s: float = 1.0
    delta: float = 0.95
    # narrowest hidden layer, for the n_j >= d+2 check; defaults to n_k
    min_width: int = None

    def __post_init__(self):
        if self.q <= 0 or self.d <= 0:
            raise ParameterError("q and d must be positive")
        if self.k < 1 or self.n_k < 1:
            raise ParameterError("k and n_k must be positive")
        if not self.r > 0:
            raise ParameterError("differential order r must be positive")
        if min(self.lam, self.lam_prime, self.s) < 0:
            raise ParameterError("norm budgets and input bound must be non-negative")
        if not 0 < self.delta < 1:
            raise ParameterError("delta must lie in (0, 1)")

    @property
    def exponent(self) -> float:
        return self.r / self.d

    def violations(self) -> list:
        out = []
        if self.k < 2:
            out.append(f"k={self.k} < 2 hidden layers")
        narrow = self.n_k if self.min_width is None else min(self.min_width, self.n_k)
        if narrow < self.d + 2:
            out.append(f"hidden width {narrow} < d+2={self.d + 2}")
        return out


@dataclass(frozen=True)
class OptErrorInputs:
    mu: float
    M: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class Calibration:
    c: float
    b: float
    b_clamped: bool
    l1: int
    l2: int
    mae1: float
    mae2: float
    inputs: BoundInputs
    # values before the max(., 0) clamps
    b_raw: float = 0.0
    c_raw: float = 0.0
    c_clamped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BoundReport:
    architecture: str
    AE: float
    EE: float
    OE: float
    MAE_B: float
    b_clamped: bool
    violations: list = field(default_factory=list)
    inputs: BoundInputs = None
    hoeffding: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inputs"]["r_over_d"] = self.inputs.exponent
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        d = dict(d)
        inputs = dict(d.pop("inputs"))
        inputs.pop("r_over_d", None)
        rep = cls(inputs=BoundInputs(**inputs), **d)
        if rep.MAE_B != rep.AE + rep.EE + rep.OE + rep.hoeffding:
            raise ParameterError(f"{rep.architecture}: MAE_B does not equal AE+EE+OE")
        return rep


def estimation_error_bound(inp: BoundInputs) -> float:
    """``2 q lam' lam^(k-1) s / sqrt(N)``."""
    if inp.N < 1:
        raise ParameterError("N must be at least 1")
    return 2.0 * inp.q * inp.lam_prime * inp.lam ** (inp.k - 1) * inp.s / math.sqrt(inp.N)


def hoeffding_deviation(N: int, delta: float) -> float:
    """Deviation term ``sqrt(ln(2 / (1 - delta)) / (2N))`` at confidence delta."""
    if N < 1:
        raise ParameterError("N must be at least 1")
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    return math.sqrt(math.log(2.0 / (1.0 - delta)) / (2.0 * N))


def approximation_error_bound(c: float, inp: BoundInputs) -> float:
    """``c q / (n_k + k - 1)^(r/d)``."""
    if c < 0:
        raise ParameterError("c must be non-negative")
    return c * inp.q / (inp.n_k + inp.k - 1) ** inp.exponent


def optimization_error_bound(inp: OptErrorInputs) -> float:
    """``mu M^2 beta / (2 gamma)``."""
    if not inp.gamma > 0:
        raise ParameterError("gamma must be positive")
    return inp.mu * inp.M ** 2 * inp.beta / (2.0 * inp.gamma)


def sgd_convergence_envelope(initial_gap: float, mu: float, gamma: float, beta: float,
                             M: float, T: int) -> float:
    """Optimization gap envelope after ``T`` SGD iterations under the PL condition."""
    if not 0 < mu * gamma < 1:
        raise ParameterError("envelope needs 0 < mu*gamma < 1")
    if T < 0 or initial_gap < 0:
        raise ParameterError("T and initial_gap must be non-negative")
    floor = mu * M ** 2 * beta / (2.0 * gamma)
    return math.exp(-mu * gamma * (T + 1)) * initial_gap + floor


def calibrate(mae1: float, mae2: float, l1: int, l2: int, inp: BoundInputs) -> Calibration:
    """Solve the two-anchor system for the AE constant ``c`` and offset ``b``.

    ``inp`` supplies q, d, r, N, lam' and s; its k/n_k are ignored. Both
    constants are clamped at zero and the clamps are flagged.
    """
    if l1 == l2:
        raise DegenerateAnchorError(f"anchor widths coincide (l1 = l2 = {l1})")
    if not l2 > l1 >= 1:
        raise ParameterError("anchors need l2 > l1 >= 1")
    e = inp.exponent
    p1, p2 = l1 ** e, l2 ** e
    gap = mae1 - mae2
    c_raw = gap * p1 * p2 / (inp.q * (p2 - p1))
    ee = 2.0 * inp.q * inp.lam_prime * inp.s / math.sqrt(inp.N)
    b_raw = mae1 - gap * p2 / (p2 - p1) - ee
    # a wider anchor that did worse would give a negative AE constant
    return Calibration(max(c_raw, 0.0), max(b_raw, 0.0), b_raw < 0.0, l1, l2, mae1, mae2, inp,
                       b_raw, c_raw, c_raw < 0.0)


def anchor_inputs(cal: Calibration, which: int = 1) -> BoundInputs:
    """Bound inputs describing anchor ``which`` (1 or 2) as a single-hidden-layer net."""
    width = cal.l1 if which == 1 else cal.l2
    return replace(cal.inputs, k=1, n_k=width, min_width=width)


def mae_upper_bound(cal: Calibration, inp: BoundInputs, architecture: str = "",
                    include_hoeffding: bool = False) -> BoundReport:
    """Assemble AE + EE + OE (with OE taken as the calibrated ``b``)."""
    base = cal.inputs
    if (base.q, base.d, base.r, base.N) != (inp.q, inp.d, inp.r, inp.N):
        raise ParameterError("calibration and bound inputs disagree on q, d, r or N")
    ae = approximation_error_bound(cal.c, inp)
    ee = estimation_error_bound(inp)
    oe = cal.b
    h = hoeffding_deviation(inp.N, inp.delta) if include_hoeffding else 0.0
    return BoundReport(
        architecture=architecture or f"k={inp.k},n_k={inp.n_k}",
        AE=ae, EE=ee, OE=oe, MAE_B=ae + ee + oe + h,
        b_clamped=cal.b_clamped, violations=inp.violations(), inputs=inp, hoeffding=h,
    )
