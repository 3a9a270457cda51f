"""Datasets: IDX ingestion, AGRN corruption, synthetic teacher data, splits."""
from __future__ import annotations

import gzip
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, FormatError, ParameterError
from .network import NetworkSpec, _Reader, forward, init_network
from .numerics import Rng, RngLike, to_generator

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATASET_MAGIC = b"MAED"
DATASET_VERSION = 1
_MAX_IDX_ITEMS = 1 << 31


class SamplePair(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    scale: float


@dataclass
class Dataset:
    """Paired inputs ``x (N, d)`` and targets ``y (N, q)``.

    ``scale[i]`` is the factor that was multiplied into both ``x[i]`` and
    ``y[i]`` during normalization (1.0 when nothing was rescaled).
    """

    x: np.ndarray
    y: np.ndarray
    scale: np.ndarray = None
    provenance: str = "unknown"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(f"x {self.x.shape} and y {self.y.shape} must be (N, d) and (N, q)")
        if self.scale is None:
            self.scale = np.ones(self.x.shape[0])
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if self.scale.shape != (self.x.shape[0],):
            raise DimensionError("scale must have one entry per pair")

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i) -> SamplePair:
        return SamplePair(self.x[i], self.y[i], float(self.scale[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def output_dim(self) -> int:
        return self.y.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.scale[idx], self.provenance)

    def max_input_norm(self) -> float:
        """Measured ``s``: the largest input L2 norm."""
        if len(self) == 0:
            return 0.0
        return float(np.sqrt(np.einsum("ij,ij->i", self.x, self.x)).max())


@dataclass
class ImageSet:
    """Images flattened to rows, pixel values in [0, 1]."""

    pixels: np.ndarray
    rows: int
    cols: int

    def __len__(self) -> int:
        return self.pixels.shape[0]


def _open_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx_images(raw: bytes) -> ImageSet:
    if len(raw) < 16:
        raise FormatError(f"IDX header needs 16 bytes, file has {len(raw)}", len(raw))
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        kind = "label file" if magic == IDX_LABELS_MAGIC else "unknown type"
        raise FormatError(f"magic 0x{magic:08x} ({kind}), expected 0x{IDX_IMAGES_MAGIC:08x}", 0)
    if n >= _MAX_IDX_ITEMS or rows * cols >= _MAX_IDX_ITEMS or n * rows * cols >= 1 << 40:
        raise FormatError(f"dimensions {n}x{rows}x{cols} overflow", 4)
    need = n * rows * cols
    if len(raw) - 16 < need:
        raise FormatError(f"payload truncated: expected {need} pixel bytes, found {len(raw) - 16}", len(raw))
    if len(raw) - 16 > need:
        raise FormatError("trailing bytes after pixel payload", 16 + need)
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=16)
    return ImageSet(pixels.reshape(n, rows * cols).astype(np.float64) / 255.0, rows, cols)


def load_idx(path) -> ImageSet:
    """Read an IDX3 unsigned-byte image file (optionally gzipped)."""
    return parse_idx_images(_open_bytes(path))


def idx_image_bytes(pixels: np.ndarray, rows: int, cols: int) -> bytes:
    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        px = np.clip(np.rint(np.asarray(px, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    px = px.reshape(-1, rows * cols)
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, px.shape[0], rows, cols) + px.tobytes()


def write_idx(path, pixels: np.ndarray, rows: int, cols: int) -> None:
    """Write images as IDX3. Float pixels in [0, 1] are quantized to bytes."""
    Path(path).write_bytes(idx_image_bytes(pixels, rows, cols))


def load_idx_labels(path) -> np.ndarray:
    raw = _open_bytes(path)
    if len(raw) < 8:
        raise FormatError("IDX label header needs 8 bytes", len(raw))
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}", 0)
    if len(raw) - 8 != n:
        raise FormatError(f"expected {n} labels, found {len(raw) - 8}", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, offset=8).copy()


def corrupt_agrn(clean, variance: float, rng: Rng, start: int = 0) -> Dataset:
    """Add Gaussian noise per pixel and rescale each pair so ``||x||_2 <= 1``.

    Image ``i`` draws its noise from ``rng.child(start + i)``; a shard that
    passes its global offset as ``start`` reproduces the unsharded pairs.
    """
    if variance < 0:
        raise ParameterError(f"variance must be non-negative, got {variance}")
    px = clean.pixels if isinstance(clean, ImageSet) else np.asarray(clean, dtype=np.float64)
    if px.ndim != 2:
        raise DimensionError("clean images must be a 2-D (N, pixels) array")
    rng = rng if isinstance(rng, Rng) else Rng(int(rng))
    n, d = px.shape
    noisy = px.copy()
    if variance > 0:
        sd = math.sqrt(variance)
        for i in range(n):
            noisy[i] += sd * rng.child(start + i).generator().standard_normal(d)
    norms = np.sqrt(np.einsum("ij,ij->i", noisy, noisy))
    scale = 1.0 / np.maximum(1.0, norms)
    x = noisy * scale[:, None]
    # division can leave a norm a hair above 1; nudge those rows down
    while True:
        over = np.sqrt(np.einsum("ij,ij->i", x, x)) > 1.0
        if not np.any(over):
            break
        x[over] = np.nextafter(x[over], 0.0)
    return Dataset(x, px * scale[:, None], scale, f"agrn(variance={variance!r})")


def _unit_ball(gen: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = gen.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    radius = gen.random(n) ** (1.0 / d)
    return z * radius[:, None]


def synth_smooth_dataset(d: int, q: int, n: int, teacher_seed: int, noise_seed: int,
                         noise_variance: float = 0.0, teacher_width: int = None):
    """Inputs uniform on the unit L2 ball, targets from a smooth 2-layer teacher.

    Returns ``(dataset, teacher)``. The teacher is a single-hidden-layer
    smooth-ReLU network of width ``teacher_width`` (default ``2 * (d + 2)``)
    with renormalized weights, hence smooth and bounded on the ball.
    """
    if d <= 0 or q <= 0 or n < 0:
        raise ParameterError("dims must be positive and n non-negative")
    if noise_variance < 0:
        raise ParameterError("noise_variance must be non-negative")
    width = teacher_width or 2 * (d + 2)
    teacher = init_network(NetworkSpec(d, q, (width,)), Rng(teacher_seed).child("teacher"))
    gen = Rng(noise_seed).child("inputs").generator()
    x = _unit_ball(gen, n, d)
    y = forward(teacher, x) if n else np.zeros((0, q))
    if noise_variance > 0 and n:
        y = y + math.sqrt(noise_variance) * Rng(noise_seed).child("noise").generator().standard_normal((n, q))
    x = np.asarray(x).reshape(n, d)
    ds = Dataset(x, np.asarray(y).reshape(n, q), np.ones(n),
                 f"synthetic(d={d},q={q},teacher_seed={teacher_seed},noise_seed={noise_seed},"
                 f"noise_variance={noise_variance!r})")
    return ds, teacher


def split(ds: Dataset, test_fraction: float, rng: RngLike):
    """Seeded train/test split with ``ceil(N * test_fraction)`` test pairs."""
    if not 0 < test_fraction < 1:
        raise ParameterError("test_fraction must lie in (0, 1)")
    if len(ds) == 0:
        raise ParameterError("cannot split an empty dataset")
    perm = to_generator(rng).permutation(len(ds))
    n_test = math.ceil(len(ds) * test_fraction)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return ds.subset(train_idx), ds.subset(test_idx)


# --- dataset cache -------------------------------------------------------
# Same container style as the network format: magic "MAED", u32 version,
# u32 N, u32 d, u32 q, u32 provenance length + utf-8 bytes, then x, y and
# scale as little-endian f64 row-major.

def dataset_to_bytes(ds: Dataset) -> bytes:
    tag = ds.provenance.encode("utf-8")
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<IIIII", DATASET_VERSION, len(ds), ds.input_dim, ds.output_dim, len(tag)))
    buf.write(tag)
    for arr in (ds.x, ds.y, ds.scale):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def dataset_from_bytes(data: bytes) -> Dataset:
    r = _Reader(data)
    if r.take(4, "magic") != DATASET_MAGIC:
        raise FormatError("bad magic, expected b'MAED'", 0)
    version, n, d, q, tag_len = r.unpack("<IIIII", "header")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    tag = r.take(tag_len, "provenance").decode("utf-8")
    x = r.floats(n * d, "inputs").reshape(n, d)
    y = r.floats(n * q, "targets").reshape(n, q)
    scale = r.floats(n, "scales")
    if r.pos != len(data):
        raise FormatError("trailing bytes after dataset payload", r.pos)
    return Dataset(x, y, scale, tag)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())
