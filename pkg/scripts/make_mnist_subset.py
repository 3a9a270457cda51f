"""Build gzipped IDX files from the 5000-image MNIST sample shipped in mlxtend.

The sandbox has no route to the canonical MNIST mirrors, but the mlxtend wheel
bundles a CSV of 5000 MNIST digits (784 pixel columns + label). This script
pulls the wheel with ``pip download`` and rewrites the CSV as standard IDX.

    python scripts/make_mnist_subset.py data/
"""
import gzip
import io
import struct
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "mlxtend==0.24.0", "--no-deps", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("mlxtend-*.whl"))
        raw = gzip.decompress(zipfile.ZipFile(wheel).read(CSV_MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :784].astype(np.uint8)
    labels = table[:, 784].astype(np.uint8)
    n = images.shape[0]
    with gzip.GzipFile(out / "mnist5k-images-idx3-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        fh.write(images.tobytes())
    with gzip.GzipFile(out / "mnist5k-labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels.tobytes())
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data")
