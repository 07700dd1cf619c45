#!/usr/bin/env python3
"""Download MovieLens-100K and place u.data under data/ml-100k/."""

import argparse
import hashlib
import io
import pathlib
import urllib.request
import zipfile

URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/ml-100k", help="target directory")
    parser.add_argument("--url", default=URL)
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with urllib.request.urlopen(args.url, timeout=60) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    data = archive.read("ml-100k/u.data")
    (out / "u.data").write_bytes(data)
    lines = data.count(b"\n")
    print(f"wrote {out / 'u.data'}: {lines} lines, sha256 {hashlib.sha256(data).hexdigest()[:16]}")
    if lines != 100000:
        raise SystemExit("unexpected line count; the file may be incomplete")


if __name__ == "__main__":
    main()
