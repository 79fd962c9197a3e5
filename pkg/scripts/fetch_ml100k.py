"""Fetch MovieLens 100K ratings into ``data/ml-100k/u.data``.

Tries the GroupLens archive first. Without direct internet access, falls back
to the copy of ``u.data`` bundled (with a header row) in the RecBole wheel,
fetched through pip.
"""

from __future__ import annotations

import argparse
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
RECBOLE_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def from_grouplens() -> bytes:
    with urllib.request.urlopen(GROUPLENS_URL, timeout=30) as resp:
        blob = resp.read()
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        return zf.read("ml-100k/u.data")


def from_recbole() -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "recbole==1.2.1"],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read(RECBOLE_MEMBER).decode()
    lines = text.splitlines()[1:]
    # timestamps are stored as floats there; u.data uses integers
    rows = []
    for line in lines:
        u, i, r, t = line.split("\t")
        rows.append(f"{u}\t{i}\t{int(float(r))}\t{int(float(t))}")
    return ("\n".join(rows) + "\n").encode()


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/ml-100k/u.data")
    args = parser.parse_args()
    out = Path(args.out)
    if out.exists():
        print(f"{out} already present")
        return 0
    try:
        data = from_grouplens()
    except Exception as e:  # noqa: BLE001
        print(f"GroupLens download failed ({e}); using RecBole bundle", file=sys.stderr)
        data = from_recbole()
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    print(f"wrote {out} ({len(data.splitlines())} ratings)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
