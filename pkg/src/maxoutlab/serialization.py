"""Binary containers for models and preprocessed datasets.

Layout (all integers little-endian)::

    bytes 0-7     magic (b"MXOMODEL" or b"MXODATA\\0")
    bytes 8-15    uint64 length H of the header
    H bytes       UTF-8 JSON header
    zero padding  up to the next multiple of 8
    data section  flat float64 ('<f8') arrays, concatenated

The header carries ``format_version``, a ``tensors`` table of
``{"name", "shape", "offset", "nbytes"}`` (offsets relative to the start of
the data section) and free-form fields such as the network spec.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .network import NetworkSpec, Parameters

FORMAT_VERSION = 1
MODEL_MAGIC = b"MXOMODEL"
DATA_MAGIC = b"MXODATA\0"


class ContainerError(ValueError):
    pass


def write_container(path, magic: bytes, header: dict, tensors: dict):
    table, offset = [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        nbytes = arr.size * 8
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = dict(header, format_version=FORMAT_VERSION, tensors=table)
    text = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    pad = (-(16 + len(text))) % 8
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        f.write(b"\0" * pad)
        for arr in tensors.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_container(path, magic: bytes):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != magic:
        raise ContainerError(f"{path}: bad magic {blob[:8]!r}, expected {magic!r}")
    if len(blob) < 16:
        raise ContainerError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {header.get('format_version')}")
    start = 16 + hlen + ((-(16 + hlen)) % 8)
    tensors = {}
    for t in header["tensors"]:
        lo = start + t["offset"]
        if lo + t["nbytes"] > len(blob):
            raise ContainerError(f"{path}: tensor {t['name']} runs past end of file")
        arr = np.frombuffer(blob, dtype="<f8", count=t["nbytes"] // 8, offset=lo)
        tensors[t["name"]] = arr.astype(np.float64).reshape(t["shape"])
    return header, tensors


def save_model(path, spec: NetworkSpec, params: Parameters, meta: dict | None = None):
    tensors = {}
    for l, (w, b) in enumerate(zip(params.W, params.b)):
        tensors[f"layer{l}.W"] = w
        tensors[f"layer{l}.b"] = b
    write_container(path, MODEL_MAGIC, {"spec": spec.to_dict(), "meta": meta or {}}, tensors)


def load_model(path):
    """Returns ``(spec, params, meta)``."""
    header, tensors = read_container(path, MODEL_MAGIC)
    spec = NetworkSpec.from_dict(header["spec"])
    n = len(spec.layers)
    params = Parameters([tensors[f"layer{l}.W"] for l in range(n)],
                        [tensors[f"layer{l}.b"] for l in range(n)])
    return spec, params, header.get("meta", {})


CSV_VERSION_LINE = f"# maxoutlab-csv v{FORMAT_VERSION}"


def write_csv(path_or_file, columns, rows):
    """CSV with a format-version comment line followed by the header row."""
    import csv
    import io

    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        f.write(CSV_VERSION_LINE + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(c, "") for c in columns]
            w.writerow([_fmt(v) for v in row])
    finally:
        if own:
            f.close()


def read_csv(path):
    import csv

    with open(path, newline="") as f:
        lines = [l for l in f if not l.startswith("#")]
    return list(csv.DictReader(lines))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
