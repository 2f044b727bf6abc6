#!/usr/bin/env python3
"""Convert the digit JSON files of the `mnist` npm package (MIT, 10k MNIST
digits stored as floats in [0, 1]) into IDX image/label pairs.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist-subset \
        --train-per-class 200 --test-per-class 100

The first `train-per-class` digits of every class go to the train split and
the next `test-per-class` to the test split. Samples are interleaved with a
fixed seed so both files are class-mixed.
"""
import argparse
import json
import os
import random
import struct


def write_idx(prefix, samples):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in pixels))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train-per-class", type=int, default=200)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20200101)
    args = ap.parse_args()

    train, test = [], []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            data = json.load(f)["data"]
        images = [data[i : i + 784] for i in range(0, len(data), 784)]
        need = args.train_per_class + args.test_per_class
        if len(images) < need:
            raise SystemExit(f"digit {digit}: only {len(images)} samples, need {need}")
        train += [(img, digit) for img in images[: args.train_per_class]]
        test += [(img, digit) for img in images[args.train_per_class : need]]

    rng = random.Random(args.seed)
    rng.shuffle(train)
    rng.shuffle(test)
    os.makedirs(args.out_dir, exist_ok=True)
    write_idx(os.path.join(args.out_dir, "train"), train)
    write_idx(os.path.join(args.out_dir, "t10k"), test)


if __name__ == "__main__":
    main()
