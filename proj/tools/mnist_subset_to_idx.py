#!/usr/bin/env python3
"""Convert a CSV dump of MNIST digits (784 pixels + label per row) to IDX files.

The 5000-digit subset shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz) is the source of data/mnist5k. Rows in
that file are grouped by label, so the split is stratified: the first
`--train-per-class` digits of each class go to the train pool (split later
into owner/adversary halves) and the rest to the held-out test set. Both files
interleave classes round-robin.

    python3 tools/mnist_subset_to_idx.py mnist_5k.csv.gz data/mnist5k
"""
import argparse
import gzip
import os
import struct


def write_idx(path, magic, dims, payload):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("out_dir")
    ap.add_argument("--train-per-class", type=int, default=400)
    args = ap.parse_args()

    opener = gzip.open if args.csv.endswith(".gz") else open
    with opener(args.csv, "rt") as f:
        rows = [line.strip().split(",") for line in f if line.strip()]

    by_class = {}
    for row in rows:
        if len(row) != 785:
            raise SystemExit(f"expected 785 columns, got {len(row)}")
        by_class.setdefault(int(float(row[784])), []).append(row)

    def interleave(groups):
        out = []
        for i in range(max(len(g) for g in groups)):
            out.extend(g[i] for g in groups if i < len(g))
        return out

    classes = sorted(by_class)
    cut = args.train_per_class
    splits = {
        "train": interleave([by_class[c][:cut] for c in classes]),
        "test": interleave([by_class[c][cut:] for c in classes]),
    }

    os.makedirs(args.out_dir, exist_ok=True)
    for name, part in splits.items():
        pixels = bytearray()
        for row in part:
            pixels.extend(int(float(v)) for v in row[:784])
        labels = bytes(int(float(row[784])) for row in part)
        write_idx(os.path.join(args.out_dir, f"{name}-images.idx"), 0x00000803,
                  [len(part), 28, 28], bytes(pixels))
        write_idx(os.path.join(args.out_dir, f"{name}-labels.idx"), 0x00000801,
                  [len(part)], labels)
        print(f"{name}: {len(part)} images")


if __name__ == "__main__":
    main()
