#!/usr/bin/env python3
"""Build IDX train/test files from the digit JSON shipped in the `mnist` npm package.

Usage: mnist_from_npm.py <package-dir> <out-dir>

Each digit file holds ~1000 28x28 images as floats in [0,1]. Pixels become
round(v * 255). Per digit, every fifth image (index % 5 == 4) goes to the test
split; the rest to train. Samples are interleaved by digit so both splits are
class-balanced in order.
"""
import json
import os
import struct
import sys


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    per_digit = []
    for d in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{d}.json")) as f:
            flat = json.load(f)["data"]
        n = len(flat) // 784
        imgs = [[min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784]] for i in range(n)]
        per_digit.append(imgs)

    splits = {"train": ([], []), "test": ([], [])}
    longest = max(len(p) for p in per_digit)
    for i in range(longest):
        for d in range(10):
            if i < len(per_digit[d]):
                imgs, labels = splits["test" if i % 5 == 4 else "train"]
                imgs.append(per_digit[d][i])
                labels.append(d)

    os.makedirs(out, exist_ok=True)
    for name, prefix in (("train", "train"), ("test", "t10k")):
        imgs, labels = splits[name]
        write_images(os.path.join(out, f"{prefix}-images-idx3-ubyte"), imgs)
        write_labels(os.path.join(out, f"{prefix}-labels-idx1-ubyte"), labels)
        print(f"{name}: {len(imgs)} images")


if __name__ == "__main__":
    main()
