#!/usr/bin/env python3
"""Convert the Kuzushiji-49 .npz release into the IDX pair `seqx` looks for.

Reads k49-{train,test}-{imgs,labels}.npz from SRC, concatenates train then
test, keeps only the two classes used by the experiment (or all with
--all-classes) and writes k49-images-idx3-ubyte.gz / k49-labels-idx1-ubyte.gz.

    python3 scripts/k49_to_idx.py ~/Downloads/k49 data/k49
    ./build/tools/seqx train --data-dir data/k49 --out model.bin
"""
import argparse
import gzip
import pathlib
import struct

import numpy as np

CLASS_A, CLASS_ME = 0, 33  # "a" and "me"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--all-classes", action="store_true")
    args = ap.parse_args()

    src = pathlib.Path(args.src)
    imgs = np.concatenate([np.load(src / f"k49-{p}-imgs.npz")["arr_0"] for p in ("train", "test")])
    labs = np.concatenate([np.load(src / f"k49-{p}-labels.npz")["arr_0"] for p in ("train", "test")])
    if imgs.shape[1:] != (28, 28) or len(imgs) != len(labs):
        raise SystemExit(f"unexpected shapes {imgs.shape} / {labs.shape}")
    if not args.all_classes:
        keep = np.isin(labs, [CLASS_A, CLASS_ME])
        imgs, labs = imgs[keep], labs[keep]

    dst = pathlib.Path(args.dst)
    dst.mkdir(parents=True, exist_ok=True)
    n = len(labs)
    (dst / "k49-images-idx3-ubyte.gz").write_bytes(gzip.compress(
        struct.pack(">IIII", 0x00000803, n, 28, 28) + imgs.astype(np.uint8).tobytes(), mtime=0))
    (dst / "k49-labels-idx1-ubyte.gz").write_bytes(gzip.compress(
        struct.pack(">II", 0x00000801, n) + labs.astype(np.uint8).tobytes(), mtime=0))
    print(f"wrote {n} records to {dst}")


if __name__ == "__main__":
    main()
