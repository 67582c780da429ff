#!/usr/bin/env python3
"""Write a bundled MNIST subset as gzipped IDX files.

The sandbox this project was developed in has no route to the MNIST mirrors,
but two packages ship original MNIST digits: the mlxtend wheel (5000) and the
npm package `mnist` (10000, a superset of the mlxtend ones, stored as
pixel/255 rounded to 3 decimals, which rounds back to the exact bytes). This
script pulls one of them, splits it into train/test and writes the standard
IDX layout so the C++ loader can consume it like the full dataset.

    python3 tools/make_mnist_subset.py --source mlxtend --out data/mnist5k
    python3 tools/make_mnist_subset.py --source npm --out data/mnist10k

If the official files are available, point the config at them instead.
"""
import argparse
import gzip
import io
import json
import pathlib
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile


def fetch_csv(wheel_dir):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                    "-d", wheel_dir, "mlxtend==0.24.0"], check=True)
    wheel = next(pathlib.Path(wheel_dir).glob("mlxtend-*.whl"))
    with zipfile.ZipFile(wheel) as z:
        return gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()


def fetch_npm(tmp):
    subprocess.run(["npm", "pack", "--silent", "mnist@1.1.0"], cwd=tmp, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = next(pathlib.Path(tmp).glob("mnist-*.tgz"))
    images, labels = [], []
    with tarfile.open(tgz) as t:
        for d in range(10):
            data = json.load(t.extractfile(f"package/src/digits/{d}.json"))["data"]
            for k in range(0, len(data), 784):
                images.append([round(v * 255) for v in data[k:k + 784]])
                labels.append(d)
    return images, labels


def write_idx_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--source", choices=["mlxtend", "npm"], default="mlxtend")
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--test-per-class", type=int, default=100,
                    help="images per digit held out for testing")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        if args.source == "npm":
            images, labels = fetch_npm(tmp)
        else:
            text = fetch_csv(tmp)
            rows = [list(map(int, line.split(","))) for line in text.strip().splitlines()]
            images = [r[:-1] for r in rows]
            labels = [r[-1] for r in rows]
    assert all(len(i) == 784 for i in images)

    # Both sources are sorted by digit; split per class, then interleave classes so
    # that any prefix of the training file is roughly class balanced.
    by_class = {}
    for img, lab in zip(images, labels):
        by_class.setdefault(lab, []).append(img)
    train, test = [], []
    for lab in sorted(by_class):
        imgs = by_class[lab]
        cut = len(imgs) - args.test_per_class
        train.append([(i, lab) for i in imgs[:cut]])
        test.append([(i, lab) for i in imgs[cut:]])

    def interleave(groups):
        out = []
        for k in range(max(len(g) for g in groups)):
            out.extend(g[k] for g in groups if k < len(g))
        return out

    train, test = interleave(train), interleave(test)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "train-images-idx3-ubyte.gz", [i for i, _ in train])
    write_idx_labels(out / "train-labels-idx1-ubyte.gz", [l for _, l in train])
    write_idx_images(out / "t10k-images-idx3-ubyte.gz", [i for i, _ in test])
    write_idx_labels(out / "t10k-labels-idx1-ubyte.gz", [l for _, l in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
