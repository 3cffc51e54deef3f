#!/usr/bin/env python3
"""Build the bundled MNIST 3-vs-5 IDX subset used as the fallback task.

The full MNIST IDX files ship inside the `mnist-data` npm package. This script
reads a directory holding them (e.g. the unpacked package's `data/`), keeps
every image of the requested digits from the train and t10k files (train
first, record order) and writes one gzip-compressed IDX pair with the
original digit labels.

    npm pack mnist-data && tar xzf mnist-data-*.tgz
    python3 scripts/fetch_mnist_subset.py package/data data/mnist35
"""
import argparse
import gzip
import pathlib
import struct


def read_idx(path, magic):
    raw = pathlib.Path(path).read_bytes()
    got, count = struct.unpack(">II", raw[:8])
    if got != magic:
        raise SystemExit(f"{path}: bad magic {got:#010x}")
    return count, raw


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--digits", default="3,5")
    args = ap.parse_args()
    digits = [int(d) for d in args.digits.split(",")]

    src = pathlib.Path(args.src)
    taken = {d: 0 for d in digits}
    out_imgs, out_labs = bytearray(), bytearray()
    for part in ("train", "t10k"):
        n, imgs = read_idx(src / f"{part}-images-idx3-ubyte", 0x00000803)
        _, labs = read_idx(src / f"{part}-labels-idx1-ubyte", 0x00000801)
        for i in range(n):
            lab = labs[8 + i]
            if lab in taken:
                taken[lab] += 1
                out_imgs += imgs[16 + i * 784:16 + (i + 1) * 784]
                out_labs.append(lab)
    count = len(out_labs)
    dst = pathlib.Path(args.dst)
    dst.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the archives byte-reproducible
    (dst / "images-idx3-ubyte.gz").write_bytes(gzip.compress(
        struct.pack(">IIII", 0x00000803, count, 28, 28) + out_imgs, mtime=0))
    (dst / "labels-idx1-ubyte.gz").write_bytes(gzip.compress(
        struct.pack(">II", 0x00000801, count) + out_labs, mtime=0))
    print(f"wrote {count} records {taken} to {dst}")


if __name__ == "__main__":
    main()
