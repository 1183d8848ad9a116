#!/usr/bin/env python3
"""Pack the 10k digits shipped with the npm `mnist` package into gzipped IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset

The package stores pixels as floats with three decimals, so round(v * 255)
recovers the original bytes up to +-1.
"""
import argparse
import gzip
import json
import pathlib
import struct

import numpy as np


def write_idx(path, magic, array):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in array.shape:
            f.write(struct.pack(">I", d))
        f.write(array.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for k in range(10):
        raw = np.asarray(json.loads((args.digits / f"{k}.json").read_text())["data"])
        px = np.clip(np.rint(raw * 255), 0, 255).reshape(-1, 28, 28)
        images.append(px)
        labels.append(np.full(len(px), k))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    n = args.train

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train-images-idx3-ubyte.gz", 0x803, images[:n])
    write_idx(args.out / "train-labels-idx1-ubyte.gz", 0x801, labels[:n])
    write_idx(args.out / "t10k-images-idx3-ubyte.gz", 0x803, images[n:])
    write_idx(args.out / "t10k-labels-idx1-ubyte.gz", 0x801, labels[n:])
    print(f"{n} train, {len(labels) - n} test, class counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main()
