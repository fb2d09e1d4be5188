#!/usr/bin/env python3
"""Download the LINQS citation datasets and convert them for this package.

Produces, for each requested dataset, a directory:

    <out>/<name>/edges.txt      "u v" pairs with a "# nodes N" directive
    <out>/<name>/features.txt   sparse "row col value" triplets
    <out>/<name>/labels.txt     "node label" pairs (not used by training)

Node ids are assigned by first appearance in the .content file. Citation
pairs whose endpoints are missing from .content (a known quirk of citeseer)
are dropped with a count. Features are row-normalized to sum to 1 by
default; pass --raw to keep the 0/1 indicators.

Needs network access; run on a networked machine, then copy the output
directory to the target and point DGLFRM_DATA at it (or use ./data).
"""

from __future__ import annotations

import argparse
import io
import sys
import tarfile
import urllib.request
from pathlib import Path

SOURCES = {
    "cora": "https://linqs-data.soe.ucsc.edu/public/lbc/cora.tgz",
    "citeseer": "https://linqs-data.soe.ucsc.edu/public/lbc/citeseer.tgz",
}


def fetch_archive(url: str) -> bytes:
    print(f"downloading {url} ...")
    with urllib.request.urlopen(url, timeout=120) as resp:
        return resp.read()


def extract_member(tar: tarfile.TarFile, suffix: str) -> list[str]:
    for member in tar.getmembers():
        if member.name.endswith(suffix):
            data = tar.extractfile(member)
            if data is None:
                continue
            return data.read().decode("utf-8", errors="replace").splitlines()
    raise FileNotFoundError(f"no member ending in {suffix!r} in archive")


def convert(name: str, archive: bytes, out_root: Path, raw_features: bool) -> None:
    with tarfile.open(fileobj=io.BytesIO(archive), mode="r:gz") as tar:
        content = extract_member(tar, ".content")
        cites = extract_member(tar, ".cites")

    ids: dict[str, int] = {}
    feature_rows: list[list[int]] = []
    labels: list[str] = []
    for line in content:
        parts = line.strip().split()
        if not parts:
            continue
        paper_id, *rest = parts
        label = rest[-1]
        bits = rest[:-1]
        ids[paper_id] = len(ids)
        feature_rows.append([j for j, bit in enumerate(bits) if bit != "0"])
        labels.append(label)
    n = len(ids)
    d = max((len(line.strip().split()) - 2) for line in content if line.strip())
    print(f"{name}: {n} nodes, {d} features")

    edges: set[tuple[int, int]] = set()
    dropped = 0
    for line in cites:
        parts = line.strip().split()
        if len(parts) != 2:
            continue
        a, b = parts
        if a not in ids or b not in ids:
            dropped += 1
            continue
        u, v = ids[a], ids[b]
        if u == v:
            continue
        edges.add((min(u, v), max(u, v)))
    if dropped:
        print(f"{name}: dropped {dropped} citation(s) with unknown endpoints")
    print(f"{name}: {len(edges)} undirected edges")

    out = out_root / name
    out.mkdir(parents=True, exist_ok=True)

    with (out / "edges.txt").open("w") as fh:
        fh.write(f"# nodes {n}\n")
        for u, v in sorted(edges):
            fh.write(f"{u} {v}\n")

    with (out / "features.txt").open("w") as fh:
        fh.write(f"# {n} x {d} sparse, row col value\n")
        for row, cols in enumerate(feature_rows):
            if raw_features or not cols:
                value = "1"
                for col in cols:
                    fh.write(f"{row} {col} {value}\n")
            else:
                value = repr(1.0 / len(cols))
                for col in cols:
                    fh.write(f"{row} {col} {value}\n")

    with (out / "labels.txt").open("w") as fh:
        for row, label in enumerate(labels):
            fh.write(f"{row} {label}\n")

    print(f"{name}: wrote {out}/edges.txt features.txt labels.txt")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "datasets", nargs="*", default=[],
        help="which datasets to fetch: cora, citeseer (default: both)",
    )
    parser.add_argument("--out", default="data", help="output directory (default: ./data)")
    parser.add_argument(
        "--raw", action="store_true",
        help="keep 0/1 feature indicators instead of row-normalizing",
    )
    args = parser.parse_args(argv)
    names = args.datasets or ["cora", "citeseer"]
    unknown = [n for n in names if n not in SOURCES]
    if unknown:
        parser.error(f"unknown dataset(s): {', '.join(unknown)}; pick from {', '.join(SOURCES)}")

    out_root = Path(args.out)
    for name in names:
        convert(name, fetch_archive(SOURCES[name]), out_root, args.raw)
    print(f"done; point DGLFRM_DATA at {out_root.resolve()} (or run from its parent)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
