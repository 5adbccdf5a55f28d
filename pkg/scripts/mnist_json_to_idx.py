"""Convert the digit JSON files of the npm ``mnist`` package into IDX files.

The package ships 10,000 MNIST digits as ``src/digits/<d>.json`` with pixels
in [0, 1] rounded to three decimals. This writes a gzipped training pair that
``mlpdyn train --set dataset=mnist`` reads, with samples interleaved in a
seeded order so that ``train_limit`` keeps a class-balanced prefix.

Usage: python scripts/mnist_json_to_idx.py <package>/src/digits <data_dir>
"""

import argparse
import json
from pathlib import Path

import numpy as np

from mlpdyn.data import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, MNIST_FILES, write_idx


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir")
    parser.add_argument("data_dir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    xs, ys = [], []
    for digit in range(10):
        values = np.asarray(json.loads((Path(args.digits_dir) / f"{digit}.json").read_text())["data"])
        if values.size % 784:
            raise SystemExit(f"{digit}.json holds {values.size} values, not a multiple of 784")
        xs.append(np.rint(values.reshape(-1, 784) * 255).astype(np.uint8))
        ys.append(np.full(values.size // 784, digit, dtype=np.uint8))
    x, y = np.concatenate(xs), np.concatenate(ys)
    order = np.random.default_rng(args.seed).permutation(y.size)
    out = Path(args.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = MNIST_FILES["train"]
    write_idx(out / f"{images}.gz", x[order].reshape(-1, 28, 28), IDX_IMAGES_MAGIC)
    write_idx(out / f"{labels}.gz", y[order], IDX_LABELS_MAGIC)
    print(f"wrote {y.size} samples to {out}")


if __name__ == "__main__":
    main()
