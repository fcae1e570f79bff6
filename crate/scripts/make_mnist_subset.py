#!/usr/bin/env python3
"""Build the bundled MNIST subset (IDX format, gzipped) from the digits shipped
with the `mnist` npm package (10000 images, 28x28, pixel values in [0, 1]).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist

The images are shuffled with a fixed seed and split 8000/2000 into train/test.
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def write_idx_images(path, images):
    n, rows, cols = images.shape
    header = struct.pack(">IIII", 0x00000803, n, rows, cols)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    header = struct.pack(">II", 0x00000801, len(labels))
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + labels.astype(np.uint8).tobytes())


def main(src, dst, n_train=8000, seed=20210216):
    xs, ys = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            data = np.asarray(json.load(f)["data"], dtype=np.float64).reshape(-1, 28, 28)
        xs.append(np.rint(data * 255.0).clip(0, 255))
        ys.append(np.full(len(data), digit))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = np.random.default_rng(seed).permutation(len(x))
    x, y = x[perm], y[perm]
    os.makedirs(dst, exist_ok=True)
    write_idx_images(os.path.join(dst, "train-images-idx3-ubyte.gz"), x[:n_train])
    write_idx_labels(os.path.join(dst, "train-labels-idx1-ubyte.gz"), y[:n_train])
    write_idx_images(os.path.join(dst, "t10k-images-idx3-ubyte.gz"), x[n_train:])
    write_idx_labels(os.path.join(dst, "t10k-labels-idx1-ubyte.gz"), y[n_train:])
    print(f"wrote {n_train} train / {len(x) - n_train} test images to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
