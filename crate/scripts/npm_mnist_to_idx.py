#!/usr/bin/env python3
"""Convert the digit arrays shipped in the `mnist` npm package into IDX files.

The npm package carries roughly 1000 MNIST digits per class as JSON arrays of
pixel intensities already divided by 255. This script restores the bytes and
writes a train/test split in the standard IDX layout so `certlab` can read it
with `--dataset mnist`.

usage: npm_mnist_to_idx.py <package-dir> <out-dir> [--test-fraction 0.2]
"""
import argparse
import json
import os
import struct

SIDE = 28
PIXELS = SIDE * SIDE


def load_digits(package_dir):
    per_class = []
    for digit in range(10):
        path = os.path.join(package_dir, "src", "digits", f"{digit}.json")
        with open(path) as fh:
            raw = json.load(fh)["data"]
        count = len(raw) // PIXELS
        images = []
        for k in range(count):
            chunk = raw[k * PIXELS:(k + 1) * PIXELS]
            images.append(bytes(min(255, max(0, round(v * 255))) for v in chunk))
        per_class.append(images)
    return per_class


def interleave(per_class, lo_frac, hi_frac):
    """Round-robin over classes so every prefix is roughly class-balanced."""
    slices = []
    for images in per_class:
        n = len(images)
        slices.append(images[int(n * lo_frac):int(n * hi_frac)])
    out = []
    longest = max(len(s) for s in slices)
    for k in range(longest):
        for label, s in enumerate(slices):
            if k < len(s):
                out.append((s[k], label))
    return out


def write_idx(out_dir, stem, samples):
    with open(os.path.join(out_dir, f"{stem}-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for image, _ in samples:
            fh.write(image)
    with open(os.path.join(out_dir, f"{stem}-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(samples)))
        fh.write(bytes(label for _, label in samples))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("package_dir")
    parser.add_argument("out_dir")
    parser.add_argument("--test-fraction", type=float, default=0.2)
    args = parser.parse_args()

    per_class = load_digits(args.package_dir)
    split = 1.0 - args.test_fraction
    os.makedirs(args.out_dir, exist_ok=True)
    train = interleave(per_class, 0.0, split)
    test = interleave(per_class, split, 1.0)
    write_idx(args.out_dir, "train", train)
    write_idx(args.out_dir, "t10k", test)
    print(f"wrote {len(train)} train and {len(test)} test examples to {args.out_dir}")


if __name__ == "__main__":
    main()
