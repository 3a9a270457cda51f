"""Empirical Rademacher complexity of finite families, and executable lemma checks.

Every family is reduced to a value matrix ``V[h, i]``: the scalar output of
hypothesis ``h`` at sample ``i``, or for vector-valued hypotheses the sum of
output coordinates (the ``(sigma_i 1)^T f(x_i)`` pairing). The complexity is
then ``E_sigma[max_h V[h] . sigma] / N``.

Exact mode enumerates all ``2^N`` sign patterns. Monte-Carlo mode draws
``draws`` patterns, draw ``j`` coming from ``Rng(seed).child("signs", j)``, so
results do not depend on how draws are batched.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, DimensionError, ModeError, ParameterError
from .numerics import Rng

EXACT_MAX_N = 20
MAX_COMBINATIONS = 10**6
SLACK_SIGMAS = 3.0
# exact-mode equalities are compared up to float summation noise
_FLOAT_TOL = 1e-12


@dataclass(frozen=True)
class Mode:
    kind: str = "exact"
    draws: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("exact", "monte_carlo"):
            raise ModeError(f"unknown mode {self.kind!r}")
        if self.kind == "monte_carlo" and self.draws < 1:
            raise ModeError("monte_carlo mode needs draws >= 1")


EXACT = Mode()


def monte_carlo(draws: int, seed: int = 0) -> Mode:
    return Mode("monte_carlo", draws, seed)


@dataclass
class FiniteFamily:
    hypotheses: list
    label: str = ""

    def __post_init__(self):
        self.hypotheses = list(self.hypotheses)
        if not self.hypotheses:
            raise ParameterError("a family needs at least one hypothesis")

    def __len__(self) -> int:
        return len(self.hypotheses)

    def outputs(self, S) -> np.ndarray:
        """Array ``(n_h, N, q)`` of hypothesis outputs on the sample."""
        rows = []
        for h in self.hypotheses:
            vals = [np.atleast_1d(np.asarray(h(x), dtype=np.float64)) for x in S]
            rows.append(np.stack(vals))
        out = np.stack(rows)
        return out

    def values(self, S) -> np.ndarray:
        return self.outputs(S).sum(axis=2)


@dataclass(frozen=True)
class SignDraw:
    signs: np.ndarray
    provenance: str


def enumerate_signs(n: int) -> np.ndarray:
    """All ``2^n`` sign vectors, row ``j`` being the binary expansion of ``j``."""
    if n > EXACT_MAX_N:
        raise ModeError(f"exact enumeration capped at N={EXACT_MAX_N}, got N={n}")
    bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    return (1 - 2 * bits).astype(np.float64)


def draw_signs(n: int, draws: int, seed: int) -> np.ndarray:
    base = Rng(seed).child("signs")
    out = np.empty((draws, n))
    for j in range(draws):
        out[j] = 1.0 - 2.0 * base.child(j).generator().integers(0, 2, size=n)
    return out


def _signs_for(n: int, mode: Mode) -> np.ndarray:
    if mode.kind == "exact":
        return enumerate_signs(n)
    return draw_signs(n, mode.draws, mode.seed)


def _sup_per_draw(values: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """``max_h values[h] . sigma / N`` for each sign row, chunked to bound memory."""
    n = values.shape[1]
    out = np.empty(signs.shape[0])
    chunk = max(1, 2**22 // max(1, values.shape[0]))
    for start in range(0, signs.shape[0], chunk):
        block = signs[start:start + chunk]
        out[start:start + chunk] = (block @ values.T).max(axis=1) / n
    return out


def _summarize(per_draw: np.ndarray, mode: Mode) -> tuple:
    est = float(np.mean(per_draw))
    if mode.kind == "exact" or per_draw.size < 2:
        return est, 0.0
    return est, float(np.std(per_draw, ddof=1) / math.sqrt(per_draw.size))


def complexity_of_values(values, mode: Mode = EXACT) -> tuple:
    """Complexity ``(estimate, std_error)`` from a precomputed value matrix."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] == 0:
        raise DimensionError("value matrix must be (n_hypotheses, N) with N >= 1")
    return _summarize(_sup_per_draw(values, _signs_for(values.shape[1], mode)), mode)


def empirical_rademacher(family: FiniteFamily, S: Sequence, mode: Mode = EXACT) -> tuple:
    """Empirical Rademacher complexity of a finite family on sample ``S``.

    Returns ``(estimate, std_error)``; exact mode reports a standard error of 0.
    """
    if len(S) == 0:
        raise ParameterError("sample must be non-empty")
    if mode.kind == "exact" and len(S) > EXACT_MAX_N:
        raise ModeError(f"exact enumeration capped at N={EXACT_MAX_N}, got N={len(S)}")
    return complexity_of_values(family.values(S), mode)


@dataclass
class CheckResult:
    check: str
    lhs: float
    rhs: float
    std_error: float
    holds: bool
    seed: int = None
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _holds_le(lhs, rhs, se) -> bool:
    return lhs <= rhs + SLACK_SIGMAS * se + _FLOAT_TOL * max(1.0, abs(rhs))


def _seed(mode: Mode):
    return mode.seed if mode.kind == "monte_carlo" else None


def _check_lipschitz(phis, L, samples) -> None:
    pts = np.unique(np.concatenate([np.asarray(samples, dtype=np.float64).ravel(),
                                    np.linspace(-3.0, 3.0, 61)]))
    for i, phi in enumerate(phis):
        fv = np.array([phi(p) for p in pts], dtype=np.float64)
        da = np.abs(fv[:, None] - fv[None, :])
        dx = np.abs(pts[:, None] - pts[None, :])
        if np.any(da > L * dx * (1 + 1e-12) + 1e-15):
            raise ParameterError(f"phi_{i + 1} is not {L}-Lipschitz on the spot-check points")


def check_talagrand(family: FiniteFamily, S, phis, L: float, mode: Mode = EXACT) -> CheckResult:
    """Contraction: complexity of ``{Phi_i(h(x_i))}`` is at most ``L`` times that of ``{h}``.

    ``phis`` is either one callable used at every sample or a sequence of ``N``.
    """
    if not L > 0:
        raise ParameterError("L must be positive")
    n = len(S)
    phis = [phis] * n if callable(phis) else list(phis)
    if len(phis) != n:
        raise ParameterError(f"need one phi per sample ({n}), got {len(phis)}")
    values = family.values(S)
    _check_lipschitz(phis, L, values)
    composed = np.array([[phis[i](v) for i, v in enumerate(row)] for row in values], dtype=np.float64)
    signs = _signs_for(n, mode)
    lhs, se_l = _summarize(_sup_per_draw(composed, signs), mode)
    r, se_r = _summarize(_sup_per_draw(values, signs), mode)
    rhs = L * r
    se = math.hypot(se_l, L * se_r)
    return CheckResult("talagrand", lhs, rhs, se, _holds_le(lhs, rhs, se), _seed(mode),
                       {"family": family.label, "N": n, "L": L})


def check_loss_domination(family: FiniteFamily, target: Callable, S, mode: Mode = EXACT) -> CheckResult:
    """Complexity of the per-sample L1 loss family versus the family itself."""
    n = len(S)
    outs = family.outputs(S)
    tgt = np.stack([np.atleast_1d(np.asarray(target(x), dtype=np.float64)) for x in S])
    if tgt.shape != outs.shape[1:]:
        raise DimensionError(f"target outputs {tgt.shape} do not match family outputs {outs.shape[1:]}")
    loss_values = np.abs(outs - tgt[None]).sum(axis=2)
    signs = _signs_for(n, mode)
    r_loss, se_l = _summarize(_sup_per_draw(loss_values, signs), mode)
    r_fam, se_f = _summarize(_sup_per_draw(outs.sum(axis=2), signs), mode)
    se = math.hypot(se_l, se_f)
    return CheckResult("loss_domination", r_loss, r_fam, se, _holds_le(r_loss, r_fam, se),
                       _seed(mode), {"family": family.label, "N": n, "q": int(outs.shape[2])})


def check_additivity(families: Sequence[FiniteFamily], S, mode: Mode = EXACT) -> CheckResult:
    """Complexity of the sum family equals the sum of the individual complexities."""
    families = list(families)
    if not families:
        raise ParameterError("need at least one family")
    combos = math.prod(len(f) for f in families)
    if combos > MAX_COMBINATIONS:
        raise ParameterError(f"sum family would have {combos} members (cap {MAX_COMBINATIONS})")
    n = len(S)
    vals = [f.values(S) for f in families]
    summed = np.array([np.sum([vals[j][i] for j, i in enumerate(idx)], axis=0)
                       for idx in itertools.product(*(range(len(f)) for f in families))])
    signs = _signs_for(n, mode)
    lhs, se_l = _summarize(_sup_per_draw(summed, signs), mode)
    parts = [_summarize(_sup_per_draw(v, signs), mode) for v in vals]
    rhs = float(sum(p[0] for p in parts))
    se = math.sqrt(se_l ** 2 + sum(p[1] ** 2 for p in parts))
    holds = abs(lhs - rhs) <= SLACK_SIGMAS * se + _FLOAT_TOL * max(1.0, abs(rhs))
    return CheckResult("additivity", lhs, rhs, se, holds, _seed(mode),
                       {"families": [f.label for f in families], "N": n})


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite-support distribution; expectations are exact sums."""

    points: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.points) != len(self.probs) or not self.points:
            raise ParameterError("points and probs must be non-empty and equally long")
        if min(self.probs) < 0 or not math.isclose(sum(self.probs), 1.0, rel_tol=1e-12):
            raise ParameterError("probs must be a probability vector")

    def expectation(self, fn: Callable) -> float:
        return float(sum(p * float(np.sum(fn(x))) for x, p in zip(self.points, self.probs)))

    def sample(self, n: int, rng: Rng) -> list:
        idx = rng.generator().choice(len(self.points), size=n, p=np.asarray(self.probs))
        return [self.points[i] for i in idx]


def _sym_terms(family: FiniteFamily, expected: np.ndarray, S, mode: Mode) -> tuple:
    vals = family.values(S)
    gap = float(np.max(np.abs(expected - vals.mean(axis=1))))
    r, _ = complexity_of_values(vals, mode)
    return gap, r


def check_symmetrization(family: FiniteFamily, sampler, N: int, trials: int = 0,
                         mode: Mode = EXACT, exhaustive: bool = False, seed: int = 0) -> CheckResult:
    """Symmetrization: ``E_S[max_f |L(f) - L_S(f)|] <= 2 E_S[R_S(family)]``.

    ``L(f)`` is computed exactly from the sampler's finite support. With
    ``exhaustive=True`` every one of the ``m^N`` sample sets is weighted by its
    probability; otherwise ``trials`` sample sets are drawn from
    ``Rng(seed).child("samples", t)``.
    """
    if not hasattr(sampler, "expectation") or not hasattr(sampler, "points"):
        raise CapabilityError("sampler must expose an exact expectation over a finite support")
    expected = np.array([sampler.expectation(h) for h in family.hypotheses])
    if exhaustive:
        m = len(sampler.points)
        if m ** N > MAX_COMBINATIONS:
            raise ModeError(f"{m}^{N} sample sets exceed the enumeration cap")
        lhs = rhs = 0.0
        for idx in itertools.product(range(m), repeat=N):
            w = math.prod(sampler.probs[i] for i in idx)
            gap, r = _sym_terms(family, expected, [sampler.points[i] for i in idx], mode)
            lhs += w * gap
            rhs += w * 2.0 * r
        se = 0.0
    else:
        if trials < 30:
            raise ParameterError("need at least 30 trials for a Monte-Carlo mean")
        base = Rng(seed).child("samples")
        gaps, rs = np.empty(trials), np.empty(trials)
        for t in range(trials):
            gaps[t], rs[t] = _sym_terms(family, expected, sampler.sample(N, base.child(t)), mode)
        lhs, rhs = float(gaps.mean()), float(2.0 * rs.mean())
        se = math.hypot(gaps.std(ddof=1), 2.0 * rs.std(ddof=1)) / math.sqrt(trials)
    return CheckResult("symmetrization", float(lhs), float(rhs), se, _holds_le(lhs, rhs, se),
                       seed if not exhaustive else _seed(mode),
                       {"family": family.label, "N": N, "trials": trials, "exhaustive": exhaustive})


def _mc_agreement(name, family, S, exact_value, draws, seed) -> CheckResult:
    est, se = empirical_rademacher(family, S, monte_carlo(draws, seed))
    holds = abs(est - exact_value) <= SLACK_SIGMAS * se + _FLOAT_TOL * max(1.0, abs(exact_value))
    return CheckResult("mc_agreement", est, exact_value, se, holds, seed,
                       {"family": family.label, "N": len(S), "draws": draws, "instance": name})


def _expect(name, family, S, expected) -> CheckResult:
    est, _ = empirical_rademacher(family, S)
    return CheckResult("exact_value", est, float(expected), 0.0,
                       abs(est - expected) <= _FLOAT_TOL * max(1.0, abs(expected)), None,
                       {"family": family.label, "N": len(S), "instance": name})


def _tiny_networks(seed: int, count: int, d: int, q: int, width: int = 3) -> FiniteFamily:
    from .network import NetworkSpec, forward, init_network

    spec = NetworkSpec(d, q, (width,), sharpness=10.0)
    nets = [init_network(spec, Rng(seed).child("zoo", i)) for i in range(count)]
    return FiniteFamily([(lambda x, n=n: forward(n, np.atleast_1d(x))) for n in nets],
                        f"tiny_nets(d={d},q={q},m={count})")


def run_suite(seed: int = 0, draws: int = 10_000, trials: int = 60) -> list:
    """All four checks plus exact-vs-Monte-Carlo agreement on a fixed instance zoo."""
    singleton = FiniteFamily([lambda x: 0.7 * x], "singleton")
    constants = FiniteFamily([lambda x: 1.0, lambda x: -1.0], "constants{+1,-1}")
    signed_id = FiniteFamily([lambda x: x, lambda x: -x], "linear{x,-x}")
    linear3 = FiniteFamily([lambda x: x, lambda x: -x, lambda x: 2.0 * x - 1.0], "linear{x,-x,2x-1}")
    nets_scalar = _tiny_networks(seed, 4, 2, 1)
    pts2 = [np.array(p) for p in ([0.3, -0.2], [0.5, 0.1], [-0.4, 0.6], [0.1, 0.9], [-0.7, -0.3], [0.2, 0.2])]
    S3 = [0.5, 1.0, 2.0]
    S6 = [-1.0, -0.5, 0.25, 0.5, 1.5, 2.0]

    out = [
        _expect("singleton", singleton, S3, 0.0),
        _expect("two_constants_N2", constants, [0.0, 0.0], 0.5),
        _expect("signed_identity_S12", signed_id, [1.0, 2.0], 1.0),
        _mc_agreement("singleton", singleton, S3, 0.0, draws, seed),
        _mc_agreement("two_constants_N2", constants, [0.0, 0.0], 0.5, draws, seed),
        _mc_agreement("signed_identity_S12", signed_id, [1.0, 2.0], 1.0, draws, seed),
        _mc_agreement("tiny_nets", nets_scalar, pts2, empirical_rademacher(nets_scalar, pts2)[0], draws, seed),
        check_talagrand(linear3, S6, lambda v: v, 1.0),
        check_talagrand(signed_id, [1.0], abs, 1.0),
        check_talagrand(linear3, S6, lambda v: 0.5 * v, 0.5),
        check_talagrand(linear3, S6, np.tanh, 1.0),
        check_talagrand(nets_scalar, pts2, abs, 1.0),
        check_talagrand(linear3, S6, np.tanh, 1.0, monte_carlo(draws, seed)),
        check_loss_domination(signed_id, lambda x: 0.0, [1.0, 2.0]),
        check_loss_domination(FiniteFamily([lambda x: 0.3 * x], "target_only"), lambda x: 0.3 * x, S3),
        check_loss_domination(linear3, lambda x: 0.5 * x, [0.75]),
        check_loss_domination(nets_scalar, lambda x: float(np.sin(x[0])), pts2),
        check_loss_domination(nets_scalar, lambda x: float(np.sin(x[0])), pts2, monte_carlo(draws, seed)),
        check_additivity([singleton, singleton], S3),
        check_additivity([constants, constants], [0.0, 0.0]),
        check_additivity([singleton, singleton, singleton, constants], [0.0, 0.0]),
        check_additivity([signed_id, linear3], S6),
        check_additivity([signed_id, linear3], S6, monte_carlo(draws, seed)),
    ]
    two_point = DiscreteDistribution((0.0, 1.0), (0.5, 0.5))
    pm = FiniteFamily([lambda x: x + 0.5, lambda x: -x - 0.5], "{x+1/2, -(x+1/2)}")
    three_point = DiscreteDistribution((-1.0, 0.0, 2.0), (0.25, 0.5, 0.25))
    sym3 = FiniteFamily([lambda x: x, lambda x: -x, lambda x: 0.5 * x * x, lambda x: -0.5 * x * x],
                        "{+-x, +-x^2/2}")
    constant_loss = FiniteFamily([lambda x: 0.25], "constant_loss")
    out += [
        check_symmetrization(constant_loss, two_point, 4, exhaustive=True),
        check_symmetrization(pm, two_point, 4, exhaustive=True),
        check_symmetrization(sym3, three_point, 6, exhaustive=True),
        check_symmetrization(sym3, three_point, 64, trials=trials, mode=monte_carlo(200, seed), seed=seed),
    ]
    return out
