#!/usr/bin/env python3
"""Build the bundled 10k-digit MNIST subset as standard IDX files.

Source: the `mnist` npm package (src/digits/<d>.json, 784 floats per digit,
values are byte/255 rounded to 3 decimals, so rounding back is exact).

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/build_mnist_subset.py package/src/digits data/mnist
"""
import json
import os
import struct
import sys

import numpy as np

N_TRAIN = 9000


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(src, dst):
    images, labels = [], []
    for d in range(10):
        with open(os.path.join(src, f"{d}.json")) as f:
            data = np.array(json.load(f)["data"], dtype=np.float64).reshape(-1, 784)
        images.append(np.rint(data * 255.0).astype(np.uint8))
        labels.append(np.full(len(data), d, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(20160901).permutation(len(labels))
    images, labels = images[order], labels[order]
    os.makedirs(dst, exist_ok=True)
    write_idx_images(os.path.join(dst, "train-images-idx3-ubyte"), images[:N_TRAIN])
    write_idx_labels(os.path.join(dst, "train-labels-idx1-ubyte"), labels[:N_TRAIN])
    write_idx_images(os.path.join(dst, "t10k-images-idx3-ubyte"), images[N_TRAIN:])
    write_idx_labels(os.path.join(dst, "t10k-labels-idx1-ubyte"), labels[N_TRAIN:])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
