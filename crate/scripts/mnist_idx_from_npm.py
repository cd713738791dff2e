#!/usr/bin/env python3
"""Rebuild MNIST IDX files from the digit set bundled in the `mnist` npm package.

The package (https://github.com/cazala/mnist) ships 10,000 MNIST digits as JSON
arrays of 784 pixel intensities scaled to [0, 1] and rounded to three decimals.
Multiplying by 255 and rounding recovers the original unsigned-byte pixels.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_idx_from_npm.py package/src/digits data/mnist
"""
import json
import os
import struct
import sys


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            flat = json.load(fh)["data"]
        assert len(flat) % 784 == 0
        for k in range(len(flat) // 784):
            px = flat[k * 784:(k + 1) * 784]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in px))
            labels.append(digit)
    # interleave classes so that a prefix is not single-class
    order = sorted(range(len(labels)), key=lambda i: (i % 1000, labels[i]))
    os.makedirs(dst, exist_ok=True)
    with open(os.path.join(dst, "images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(order), 28, 28))
        for i in order:
            fh.write(images[i])
    with open(os.path.join(dst, "labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(order)))
        fh.write(bytes(labels[i] for i in order))
    print(f"wrote {len(order)} digits to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
