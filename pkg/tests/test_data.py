import gzip
import struct
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from maebound.data import (
    Dataset,
    corrupt_agrn,
    dataset_from_bytes,
    dataset_to_bytes,
    load_dataset,
    load_idx,
    load_idx_labels,
    parse_idx_images,
    save_dataset,
    split,
    synth_smooth_dataset,
    write_idx,
)
from maebound.errors import DimensionError, FormatError, ParameterError
from maebound.network import forward
from maebound.numerics import Rng

DATA = Path(__file__).resolve().parents[1] / "data"


def idx_bytes(pixels, n, rows, cols, magic=0x803):
    return struct.pack(">IIII", magic, n, rows, cols) + bytes(pixels)


@pytest.fixture
def fixture_idx(tmp_path):
    path = tmp_path / "tiny-idx3-ubyte"
    path.write_bytes(idx_bytes([0, 255, 128, 64, 10, 20, 30, 40], 2, 2, 2))
    return path


class TestIdx:
    def test_fixture(self, fixture_idx):
        imgs = load_idx(fixture_idx)
        assert len(imgs) == 2 and (imgs.rows, imgs.cols) == (2, 2)
        assert np.array_equal(imgs.pixels[0], [0.0, 1.0, 128 / 255, 64 / 255])
        assert imgs.pixels[0][2] == pytest.approx(0.50196, abs=1e-5)

    def test_gzip(self, fixture_idx, tmp_path):
        gz = tmp_path / "tiny.gz"
        gz.write_bytes(gzip.compress(fixture_idx.read_bytes()))
        assert np.array_equal(load_idx(gz).pixels, load_idx(fixture_idx).pixels)

    def test_zero_items(self):
        imgs = parse_idx_images(idx_bytes([], 0, 28, 28))
        assert len(imgs) == 0 and imgs.pixels.shape == (0, 784)

    def test_label_magic_rejected(self):
        with pytest.raises(FormatError, match="label file"):
            parse_idx_images(idx_bytes([0] * 4, 1, 2, 2, magic=0x801))

    def test_truncated(self):
        with pytest.raises(FormatError, match="truncated"):
            parse_idx_images(idx_bytes([0] * 7, 2, 2, 2))
        with pytest.raises(FormatError, match="16 bytes"):
            parse_idx_images(b"\x00\x00\x08\x03")

    def test_trailing(self):
        with pytest.raises(FormatError, match="offset 24"):
            parse_idx_images(idx_bytes([0] * 9, 2, 2, 2))

    def test_overflow(self):
        with pytest.raises(FormatError, match="overflow"):
            parse_idx_images(idx_bytes([], 2**31, 2**16, 2**16))

    def test_quantized_round_trip(self, tmp_path):
        clean = load_idx(DATA / "mnist5k-images-idx3-ubyte.gz").pixels[:20]
        ds = corrupt_agrn(clean, 1.0, Rng(0))
        q = np.clip(np.rint(ds.x * 255.0), 0, 255) / 255.0
        path = tmp_path / "x.idx"
        write_idx(path, ds.x, 28, 28)
        assert np.array_equal(load_idx(path).pixels, q)

    def test_labels(self, tmp_path):
        path = tmp_path / "labels"
        path.write_bytes(struct.pack(">II", 0x801, 3) + bytes([7, 0, 9]))
        assert list(load_idx_labels(path)) == [7, 0, 9]
        path.write_bytes(struct.pack(">II", 0x803, 3) + bytes([7, 0, 9]))
        with pytest.raises(FormatError):
            load_idx_labels(path)

    def test_shipped_subset(self):
        imgs = load_idx(DATA / "mnist5k-images-idx3-ubyte.gz")
        labels = load_idx_labels(DATA / "mnist5k-labels-idx1-ubyte.gz")
        assert imgs.pixels.shape == (5000, 784)
        assert len(labels) == 5000 and set(labels) == set(range(10))
        assert 0.0 <= imgs.pixels.min() and imgs.pixels.max() <= 1.0


class TestAgrn:
    def test_no_noise_small_image(self):
        clean = np.array([[0.3, 0.4, 0.0]])
        ds = corrupt_agrn(clean, 0.0, Rng(0))
        assert np.array_equal(ds.x, clean) and np.array_equal(ds.y, clean)
        assert ds.scale[0] == 1.0

    def test_bounded_inputs_and_s(self):
        clean = load_idx(DATA / "mnist5k-images-idx3-ubyte.gz").pixels[:300]
        ds = corrupt_agrn(clean, 1.0, Rng(4))
        assert np.all(np.linalg.norm(ds.x, axis=1) <= 1.0 + 1e-12)
        assert ds.max_input_norm() <= 1.0
        assert abs(ds.max_input_norm() - 1.0) <= 1e-9
        # targets carry the same factor as the inputs
        assert np.allclose(ds.y, clean * ds.scale[:, None])

    def test_deterministic_and_shardable(self):
        clean = Rng(0).generator().random((6, 50))
        a = corrupt_agrn(clean, 1.0, Rng(2))
        b = corrupt_agrn(clean, 1.0, Rng(2))
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
        tail = corrupt_agrn(clean[3:], 1.0, Rng(2), start=3)
        assert np.array_equal(tail.x, a.x[3:]) and np.array_equal(tail.scale, a.scale[3:])
        other = corrupt_agrn(clean, 1.0, Rng(3))
        assert not np.array_equal(other.x, a.x)

    def test_negative_variance(self):
        with pytest.raises(ParameterError):
            corrupt_agrn(np.zeros((1, 3)), -1.0, Rng(0))


class TestSynthetic:
    def test_noiseless_teacher(self):
        ds, teacher = synth_smooth_dataset(4, 3, 50, 1, 2)
        assert np.array_equal(ds.y, forward(teacher, ds.x))
        assert np.all(np.linalg.norm(ds.x, axis=1) <= 1.0 + 1e-12)

    def test_empty(self):
        ds, teacher = synth_smooth_dataset(4, 3, 0, 1, 2)
        assert len(ds) == 0 and teacher.spec.input_dim == 4

    def test_deterministic_bytes(self):
        a, _ = synth_smooth_dataset(4, 3, 50, 1, 2, noise_variance=0.1)
        b, _ = synth_smooth_dataset(4, 3, 50, 1, 2, noise_variance=0.1)
        assert dataset_to_bytes(a) == dataset_to_bytes(b)

    def test_noise_changes_targets_only(self):
        a, _ = synth_smooth_dataset(4, 3, 50, 1, 2)
        b, _ = synth_smooth_dataset(4, 3, 50, 1, 2, noise_variance=0.1)
        assert np.array_equal(a.x, b.x) and not np.array_equal(a.y, b.y)


class TestSplit:
    def test_counts_and_partition(self):
        ds = Dataset(np.arange(10.0)[:, None], np.arange(10.0)[:, None])
        tr, te = split(ds, 0.2, Rng(0))
        assert (len(tr), len(te)) == (8, 2)
        assert Counter(tr.x[:, 0].tolist() + te.x[:, 0].tolist()) == Counter(ds.x[:, 0].tolist())

    def test_ceil(self):
        ds = Dataset(np.zeros((7, 1)), np.zeros((7, 1)))
        assert len(split(ds, 0.1, Rng(0))[1]) == 1

    def test_same_seed_same_split(self):
        ds = Dataset(np.arange(20.0)[:, None], np.arange(20.0)[:, None])
        a, b = split(ds, 0.3, Rng(5)), split(ds, 0.3, Rng(5))
        assert np.array_equal(a[1].x, b[1].x)

    def test_errors(self):
        ds = Dataset(np.zeros((0, 1)), np.zeros((0, 1)))
        with pytest.raises(ParameterError):
            split(ds, 0.2, Rng(0))
        with pytest.raises(ParameterError):
            split(Dataset(np.zeros((3, 1)), np.zeros((3, 1))), 1.0, Rng(0))


class TestDatasetCache:
    def test_round_trip(self, tmp_path):
        ds, _ = synth_smooth_dataset(3, 2, 20, 0, 1, 0.05)
        save_dataset(ds, tmp_path / "d.maed")
        back = load_dataset(tmp_path / "d.maed")
        assert np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y)
        assert np.array_equal(back.scale, ds.scale) and back.provenance == ds.provenance

    def test_corrupt(self):
        raw = dataset_to_bytes(synth_smooth_dataset(3, 2, 5, 0, 1)[0])
        with pytest.raises(FormatError):
            dataset_from_bytes(b"MAEB" + raw[4:])
        with pytest.raises(FormatError, match="truncated"):
            dataset_from_bytes(raw[:-1])

    def test_shape_validation(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((3, 2)), np.zeros((2, 2)))

    def test_pair_access(self):
        ds = Dataset([[1.0, 2.0]], [[3.0]], [0.5])
        pair = ds[0]
        assert pair.scale == 0.5 and list(pair.y) == [3.0]
        assert len(list(ds)) == 1
