"""Download the four MNIST IDX files into a directory.

    python scripts/fetch_mnist.py DATA_DIR [--mirror URL]

Files are kept gzipped; the loader reads ``.gz`` transparently.  Each download
is checked by parsing its IDX header and comparing the item count with the
expected 60000/10000.  Point training at the result with ``--data-dir DATA_DIR``
or ``GATEDNET_DATA_DIR``.
"""
import argparse
import sys
import urllib.request
from pathlib import Path

from gatednet.data import IDXParseError, IMAGE_MAGIC, LABEL_MAGIC, read_idx

DEFAULT_MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"
FILES = {
    "train-images-idx3-ubyte.gz": (IMAGE_MAGIC, 60000),
    "train-labels-idx1-ubyte.gz": (LABEL_MAGIC, 60000),
    "t10k-images-idx3-ubyte.gz": (IMAGE_MAGIC, 10000),
    "t10k-labels-idx1-ubyte.gz": (LABEL_MAGIC, 10000),
}


def fetch(name: str, dest: Path, mirror: str) -> None:
    tmp = dest.with_suffix(dest.suffix + ".part")
    with urllib.request.urlopen(mirror.rstrip("/") + "/" + name, timeout=60) as resp:
        tmp.write_bytes(resp.read())
    tmp.replace(dest)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data_dir")
    ap.add_argument("--mirror", default=DEFAULT_MIRROR)
    ap.add_argument("--force", action="store_true", help="re-download existing files")
    args = ap.parse_args(argv)
    root = Path(args.data_dir)
    root.mkdir(parents=True, exist_ok=True)
    for name, (magic, count) in FILES.items():
        dest = root / name
        if dest.exists() and not args.force:
            print(f"{name}: present")
        else:
            print(f"{name}: downloading")
            try:
                fetch(name, dest, args.mirror)
            except OSError as exc:
                print(f"{name}: download failed: {exc}", file=sys.stderr)
                return 4
        try:
            n = read_idx(dest, magic).shape[0]
        except IDXParseError as exc:
            print(f"{name}: {exc}", file=sys.stderr)
            return 2
        if n != count:
            print(f"{name}: {n} items, expected {count}", file=sys.stderr)
            return 2
    print(f"MNIST ready in {root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
