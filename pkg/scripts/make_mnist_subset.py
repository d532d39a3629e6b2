"""Write IDX files for a class subset of the 5000-digit MNIST sample shipped in mlxtend.

    pip download --no-deps mlxtend -d /tmp/mlx
    python scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl tests/data --classes 3 5 8

Pixel bytes and labels are copied unchanged; only the selected classes are
kept, in their original order, with their original digit labels.
"""

import argparse
import gzip
import zipfile
from pathlib import Path

import numpy as np

from noilin.data import LabeledDataset, write_idx_pair

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("wheel")
    ap.add_argument("out_dir")
    ap.add_argument("--classes", type=int, nargs="+", default=[3, 5, 8])
    args = ap.parse_args()

    with zipfile.ZipFile(args.wheel) as z:
        table = np.loadtxt(gzip.decompress(z.read(MEMBER)).decode().splitlines(), delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    keep = np.isin(labels, args.classes)
    ds = LabeledDataset(pixels[keep] / 255.0, labels[keep], 10, bounds=(0.0, 1.0))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = "".join(str(c) for c in args.classes)
    write_idx_pair(ds, out / f"mnist{tag}-images-idx3-ubyte.gz", out / f"mnist{tag}-labels-idx1-ubyte.gz", (28, 28))
    print(f"wrote {len(ds)} images of classes {args.classes} to {out}")


if __name__ == "__main__":
    main()
