#!/usr/bin/env python3
"""Download the MNIST IDX files and optionally cut a reduced subset.

The repository ships data/mnist/ with the first 5,000 training and 1,000 test
examples so the digit runner works offline. Rebuild that subset, or fetch the
full set, with:

    python3 scripts/fetch_mnist.py --out data/mnist --train 5000 --test 1000
    python3 scripts/fetch_mnist.py --out /somewhere/mnist          # full set

Point TSDL_DATA_DIR (or the run config's data_dir key) at the output
directory.
"""

import argparse
import gzip
import struct
import sys
import urllib.request
from pathlib import Path

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
]

FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]


def fetch(name: str) -> bytes:
    last = None
    for base in MIRRORS:
        url = base + name + ".gz"
        try:
            print(f"  {url}")
            with urllib.request.urlopen(url, timeout=60) as r:
                return gzip.decompress(r.read())
        except Exception as e:  # try the next mirror
            last = e
    raise SystemExit(f"all mirrors failed for {name}: {last}")


def truncate(raw: bytes, count: int) -> bytes:
    """Keep the first `count` records of an IDX blob, rewriting the header."""
    magic, n = struct.unpack(">ii", raw[:8])
    ndim = magic & 0xFF
    header = 4 * (1 + ndim)
    record = (len(raw) - header) // n
    count = min(count, n)
    return (
        raw[:4]
        + struct.pack(">i", count)
        + raw[8:header]
        + raw[header : header + record * count]
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist", help="output directory")
    ap.add_argument("--train", type=int, default=0, help="keep first N training examples (0 = all)")
    ap.add_argument("--test", type=int, default=0, help="keep first N test examples (0 = all)")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        raw = fetch(name)
        keep = args.train if name.startswith("train") else args.test
        if keep:
            raw = truncate(raw, keep)
        (out / name).write_bytes(raw)
        print(f"wrote {out / name} ({len(raw)} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
