#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Write the 5000-image MNIST sample shipped with mlxtend as IDX files.

The source CSV is sorted by label (500 images per digit). Rows are written
round-robin across classes so that every prefix of the output is
class-balanced: image i has label i % 10.

Usage:
    pip install --no-deps mlxtend
    python3 tools/make_mnist_idx.py --out data/mnist5k
or point --csv at an extracted mnist_5k.csv.gz.
"""
import argparse
import gzip
import os
import struct

import numpy as np


def locate_csv():
    import importlib.util

    spec = importlib.util.find_spec("mlxtend")
    if spec is None or spec.origin is None:
        raise SystemExit("mlxtend not installed; pass --csv")
    return os.path.join(os.path.dirname(spec.origin), "data", "data", "mnist_5k.csv.gz")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--csv", default=None)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    path = args.csv or locate_csv()
    with gzip.open(path, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    assert pixels.shape[1] == 784 and pixels.min() >= 0 and pixels.max() <= 255

    by_class = [np.flatnonzero(labels == c) for c in range(10)]
    per_class = min(len(ix) for ix in by_class)
    order = np.array([by_class[c][k] for k in range(per_class) for c in range(10)])

    os.makedirs(args.out, exist_ok=True)
    n = len(order)
    with open(os.path.join(args.out, "images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, n, 28, 28))
        fh.write(pixels[order].astype(np.uint8).tobytes())
    with open(os.path.join(args.out, "labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 2049, n))
        fh.write(labels[order].astype(np.uint8).tobytes())
    print(f"wrote {n} images to {args.out}")


if __name__ == "__main__":
    main()
