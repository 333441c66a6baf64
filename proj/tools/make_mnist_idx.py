#!/usr/bin/env python3
"""Write a class-balanced MNIST subset as gzipped IDX files.

Source: the `mnist` npm package (MIT), which ships 10000 MNIST digits as
JSON arrays of 784 floats per image, grouped by class:

    npm install mnist
    python3 tools/make_mnist_idx.py --src node_modules/mnist/src/digits

Images are interleaved by class (0,1,...,9,0,1,...) so any prefix stays
balanced. The first 2000 are the training subset, the rest held out.
"""
import argparse
import gzip
import json
import struct

import numpy as np


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--src", required=True)
    ap.add_argument("--per-class", type=int, default=250)
    ap.add_argument("--out", default="tests/data")
    args = ap.parse_args()

    per_class = []
    for d in range(10):
        with open(f"{args.src}/{d}.json") as f:
            raw = np.asarray(json.load(f)["data"], dtype=np.float64).reshape(-1, 28, 28)
        per_class.append(raw[: args.per_class])

    frames, labels = [], []
    for i in range(args.per_class):
        for d in range(10):
            frames.append(np.clip(np.rint(per_class[d][i] * 255.0), 0, 255).astype(np.uint8))
            labels.append(d)
    frames = np.stack(frames)
    n = len(labels)

    write_idx(f"{args.out}/mnist-subset-images-idx3-ubyte.gz", 0x00000803, (n, 28, 28), frames.tobytes())
    write_idx(f"{args.out}/mnist-subset-labels-idx1-ubyte.gz", 0x00000801, (n,), np.asarray(labels, np.uint8).tobytes())
    print(f"wrote {n} images")


if __name__ == "__main__":
    main()
