"""Feed-forward vector-to-vector regressors with smooth-ReLU hidden units.

A network with hidden widths ``(n_1, ..., n_h)`` holds ``h + 1`` weight
matrices ``W_1 (n_1 x d), ..., W_{h+1} (q x n_h)``. Hidden layers apply the
smooth ReLU ``ln(1 + exp(t z)) / t``; the output layer is linear. Biases are
off by default and never count towards the norm budgets.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, FormatError, ParameterError
from .numerics import RngLike, to_generator

DEFAULT_SHARPNESS = 50.0
NETWORK_MAGIC = b"MAEB"
FORMAT_VERSION = 1

# Rows whose norm is already this close to the target are left alone, which
# makes renormalize bit-exactly idempotent.
_RENORM_RTOL = 1e-13


def _check_sharpness(t: float) -> None:
    if not t > 0:
        raise ParameterError(f"sharpness t must be positive, got {t}")


def _softplus(z: np.ndarray, t: float) -> np.ndarray:
    # max(z, 0) + ln(1 + exp(-t|z|)) / t never undershoots max(z, 0)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-t * np.abs(z))) / t


def smooth_relu(x, t: float = DEFAULT_SHARPNESS):
    """Overflow-safe ``ln(1 + exp(t*x)) / t``; works on scalars and arrays."""
    _check_sharpness(t)
    out = _softplus(np.asarray(x, dtype=np.float64), t)
    return float(out) if np.ndim(out) == 0 else out


def smooth_relu_grad(x, t: float = DEFAULT_SHARPNESS):
    """Derivative of :func:`smooth_relu`, the logistic function of ``t*x``."""
    _check_sharpness(t)
    out = expit(t * np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden_widths: tuple
    sharpness: float = DEFAULT_SHARPNESS
    bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise DimensionError("input and output dims must be positive")
        if not self.hidden_widths or min(self.hidden_widths) <= 0:
            raise DimensionError("need at least one hidden layer, all widths positive")
        _check_sharpness(self.sharpness)

    @property
    def n_layers(self) -> int:
        """Number of weight matrices."""
        return len(self.hidden_widths) + 1

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_widths)

    @property
    def top_width(self) -> int:
        return self.hidden_widths[-1]

    @property
    def shapes(self) -> list:
        dims = (self.input_dim,) + self.hidden_widths + (self.output_dim,)
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    def width_violations(self) -> list:
        """Constraint breaches relevant for bound validity (non-fatal)."""
        out = []
        if self.n_hidden < 2:
            out.append(f"fewer than 2 hidden layers (got {self.n_hidden})")
        small = [w for w in self.hidden_widths if w < self.input_dim + 2]
        if small:
            out.append(f"hidden width below d+2={self.input_dim + 2}: {small}")
        return out

    def describe(self) -> str:
        return "-".join(str(w) for w in (self.input_dim,) + self.hidden_widths + (self.output_dim,))


@dataclass
class Network:
    spec: NetworkSpec
    weights: list
    biases: Optional[list] = None

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        shapes = self.spec.shapes
        if len(self.weights) != len(shapes):
            raise DimensionError(f"expected {len(shapes)} weight matrices, got {len(self.weights)}")
        for i, (w, s) in enumerate(zip(self.weights, shapes)):
            if w.shape != s:
                raise DimensionError(f"W_{i + 1} has shape {w.shape}, expected {s}")
        if self.spec.bias:
            if self.biases is None:
                self.biases = [np.zeros(s[0]) for s in shapes]
            self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
            for i, (b, s) in enumerate(zip(self.biases, shapes)):
                if b.shape != (s[0],):
                    raise DimensionError(f"b_{i + 1} has shape {b.shape}, expected {(s[0],)}")
        elif self.biases is not None:
            raise DimensionError("biases given for a bias-free spec")

    def copy(self) -> "Network":
        return Network(
            self.spec,
            [w.copy() for w in self.weights],
            None if self.biases is None else [b.copy() for b in self.biases],
        )

    def parameters(self) -> list:
        return list(self.weights) + (list(self.biases) if self.biases is not None else [])

    def with_parameters(self, params: Sequence[np.ndarray]) -> "Network":
        k = self.spec.n_layers
        return Network(self.spec, list(params[:k]), list(params[k:]) if self.spec.bias else None)

    def __eq__(self, other):
        if not isinstance(other, Network) or self.spec != other.spec:
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


def init_network(spec: NetworkSpec, rng: RngLike, lambda_hidden: float = 1.0,
                 top_mode: str = "normalize") -> Network:
    """Gaussian(0, 1/fan_in) weights followed by one renormalization pass."""
    gen = to_generator(rng)
    weights = [gen.standard_normal(shape) / np.sqrt(shape[1]) for shape in spec.shapes]
    net = Network(spec, weights)
    return renormalize(net, lambda_hidden, top_mode)


def _forward_cache(net: Network, x: np.ndarray):
    t = net.spec.sharpness
    acts = [x]
    pre = []
    a = x
    last = net.spec.n_layers - 1
    for i, w in enumerate(net.weights):
        z = a @ w.T
        if net.biases is not None:
            z = z + net.biases[i]
        if i == last:
            return z, acts, pre
        pre.append(z)
        a = _softplus(z, t)
        acts.append(a)


def _as_batch(net: Network, x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.spec.input_dim:
        raise DimensionError(f"input has shape {x.shape}, expected (..., {net.spec.input_dim})")
    return xb, single


def forward(net: Network, x) -> np.ndarray:
    """Evaluate the network on one vector ``(d,)`` or a batch ``(N, d)``."""
    xb, single = _as_batch(net, x)
    out, _, _ = _forward_cache(net, xb)
    return out[0] if single else out


def backprop(net: Network, x, grad_out) -> list:
    """Gradients of a loss w.r.t. every parameter, given dLoss/dOutput for the batch."""
    xb, _ = _as_batch(net, x)
    t = net.spec.sharpness
    _, acts, pre = _forward_cache(net, xb)
    delta = np.asarray(grad_out, dtype=np.float64).reshape(xb.shape[0], net.spec.output_dim)
    k = net.spec.n_layers
    gw = [None] * k
    gb = [None] * k
    for i in range(k - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i]) * expit(t * pre[i - 1])
    return gw + (gb if net.biases is not None else [])


def mae_output_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    # sign(0) = 0: perfect fits give zero subgradient
    return np.sign(pred - target) / pred.shape[0]


def backprop_mae(net: Network, x, y) -> list:
    """Subgradient of the batch MAE ``mean_i ||f(x_i) - y_i||_1``.

    Returns one array per parameter (weights first, then biases if enabled).
    """
    xb, _ = _as_batch(net, x)
    if xb.shape[0] == 0:
        raise ParameterError("empty batch")
    yb = np.asarray(y, dtype=np.float64).reshape(xb.shape[0], -1)
    if yb.shape[1] != net.spec.output_dim:
        raise DimensionError(f"targets have width {yb.shape[1]}, expected {net.spec.output_dim}")
    pred = forward(net, xb)
    return backprop(net, xb, mae_output_grad(pred, yb))


def _scale_rows(w: np.ndarray, norms: np.ndarray, target: float) -> np.ndarray:
    out = w.copy()
    move = (norms > 0) & (np.abs(norms - target) > _RENORM_RTOL * target)
    out[move] = w[move] / norms[move, None] * target
    return out


def renormalize(net: Network, lambda_hidden: float = 1.0, top_mode: str = "normalize") -> Network:
    """Rescale weight rows so the norm budgets hold with equality.

    Hidden matrices get unit-L2 rows times ``lambda_hidden``; in ``normalize``
    mode the output matrix gets unit-L1 rows, in ``measure`` mode it is left as
    is. Zero rows are never touched.
    """
    if top_mode not in ("normalize", "measure"):
        raise ParameterError(f"top_mode must be 'normalize' or 'measure', got {top_mode!r}")
    if not lambda_hidden > 0:
        raise ParameterError("lambda_hidden must be positive")
    ws = []
    last = net.spec.n_layers - 1
    for i, w in enumerate(net.weights):
        if i < last:
            ws.append(_scale_rows(w, np.sqrt(np.einsum("ij,ij->i", w, w)), lambda_hidden))
        elif top_mode == "normalize":
            ws.append(_scale_rows(w, np.abs(w).sum(axis=1), 1.0))
        else:
            ws.append(w.copy())
    biases = None if net.biases is None else [b.copy() for b in net.biases]
    return Network(net.spec, ws, biases)


def measure_norm_budget(net: Network) -> tuple:
    """(max hidden-row L2 norm, max output-row L1 norm)."""
    lam = 0.0
    for w in net.weights[:-1]:
        lam = max(lam, float(np.sqrt(np.einsum("ij,ij->i", w, w)).max()))
    lam_prime = float(np.abs(net.weights[-1]).sum(axis=1).max())
    return lam, lam_prime


# --- serialization -------------------------------------------------------
# Layout (all little-endian): magic "MAEB", u32 version, u32 k (weight matrices),
# u32 d, u32 q, u32 * (k-1) hidden widths, f64 sharpness, u32 bias flag,
# then each W_i row-major as f64, then each b_i when the bias flag is set.

def network_to_bytes(net: Network) -> bytes:
    spec = net.spec
    buf = io.BytesIO()
    buf.write(NETWORK_MAGIC)
    buf.write(struct.pack("<IIII", FORMAT_VERSION, spec.n_layers, spec.input_dim, spec.output_dim))
    buf.write(struct.pack(f"<{spec.n_hidden}I", *spec.hidden_widths))
    buf.write(struct.pack("<dI", spec.sharpness, int(spec.bias)))
    for p in net.parameters():
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}: need {n} bytes, "
                              f"{len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)


def network_from_bytes(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4, "magic") != NETWORK_MAGIC:
        raise FormatError("bad magic, expected b'MAEB'", 0)
    version, k, d, q = r.unpack("<IIII", "header")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    if k < 2:
        raise FormatError(f"need at least 2 weight matrices, header says {k}", 8)
    widths = r.unpack(f"<{k - 1}I", "hidden widths")
    sharpness, bias = r.unpack("<dI", "sharpness/bias")
    spec = NetworkSpec(d, q, widths, sharpness, bool(bias))
    weights = [r.floats(a * b, f"W_{i + 1}").reshape(a, b) for i, (a, b) in enumerate(spec.shapes)]
    biases = [r.floats(a, f"b_{i + 1}") for i, (a, _) in enumerate(spec.shapes)] if bias else None
    if r.pos != len(data):
        raise FormatError("trailing bytes after network payload", r.pos)
    return Network(spec, weights, biases)


def save_network(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(network_to_bytes(net))


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        return network_from_bytes(fh.read())
