#!/usr/bin/env python3
"""Build the desk-scale MNIST IDX files under data/mnist-desk/.

Source: the 5000-digit MNIST sample shipped with mlxtend
(``mlxtend/data/data/mnist_5k.csv.gz``, 784 pixel columns then the label,
500 digits per class).  A seeded shuffle splits it into 2000 training and
3000 test digits.

    python scripts/make_desk_mnist.py                 # uses an installed mlxtend
    python scripts/make_desk_mnist.py mnist_5k.csv.gz
"""

import gzip
import sys
from pathlib import Path

import numpy as np

from diaa.data import write_idx

OUT = Path(__file__).resolve().parent.parent / "data" / "mnist-desk"
N_TRAIN = 2000
SEED = 20211


def source_csv():
    if len(sys.argv) > 1:
        return Path(sys.argv[1])
    import mlxtend.data

    return Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz"


def main():
    with gzip.open(source_csv(), "rt") as f:
        table = np.loadtxt(f, delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    order = np.random.default_rng(SEED).permutation(len(labels))
    images, labels = images[order], labels[order]
    OUT.mkdir(parents=True, exist_ok=True)
    for split, sl in (("train", slice(0, N_TRAIN)), ("test", slice(N_TRAIN, None))):
        write_idx(OUT / f"{split}-images-idx3-ubyte.gz", images[sl])
        write_idx(OUT / f"{split}-labels-idx1-ubyte.gz", labels[sl])
        print(f"{split}: {len(labels[sl])} digits, class counts {np.bincount(labels[sl]).tolist()}")


if __name__ == "__main__":
    main()
