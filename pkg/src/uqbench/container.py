"""Single-file container used for datasets and model snapshots.

Byte layout (see docs/container-format.md)::

    offset 0   4 bytes   magic b"UQBC"
    offset 4   8 bytes   header length H, unsigned little-endian
    offset 12  H bytes   UTF-8 JSON header
    offset 12+H          sections, little-endian float64, back to back

The header records the format version, a ``kind`` tag, free-form ``meta``
and a section table with name, shape, byte offset (relative to the payload
start), byte count and SHA-256 of every section.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import CorruptFile, FormatVersionMismatch

MAGIC = b"UQBC"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def _digest(data):
    return hashlib.sha256(data).hexdigest()


def encode(kind, meta, sections):
    table = []
    blobs = []
    offset = 0
    for name, array in sections.items():
        arr = np.ascontiguousarray(np.asarray(array, dtype=_DTYPE))
        blob = arr.tobytes()
        table.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": _DTYPE.str,
                "offset": offset,
                "nbytes": len(blob),
                "sha256": _digest(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": "uqbench-container",
        "version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "sections": table,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)


def write(path, kind, meta, sections):
    data = encode(kind, meta, sections)
    with open(path, "wb") as fh:
        fh.write(data)
    return _digest(data)


def _parse_header(data):
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptFile("not a uqbench container (bad magic or too short)")
    (length,) = struct.unpack("<Q", data[4:12])
    if 12 + length > len(data):
        raise CorruptFile("header extends past end of file")
    try:
        header = json.loads(data[12 : 12 + length].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable header: {exc}") from None
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"file has format version {version}, this build reads version {FORMAT_VERSION}"
        )
    return header, 12 + length


def decode(data):
    """Return ``(kind, meta, sections)`` from container bytes."""
    header, start = _parse_header(data)
    sections = {}
    for entry in header["sections"]:
        lo = start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise CorruptFile(f"section {entry['name']!r} is truncated")
        blob = data[lo:hi]
        if _digest(blob) != entry["sha256"]:
            raise CorruptFile(f"checksum mismatch in section {entry['name']!r}")
        arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        sections[entry["name"]] = arr.astype(np.float64)
    return header["kind"], header["meta"], sections


def read(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def read_header(path):
    with open(path, "rb") as fh:
        data = fh.read()
    header, _ = _parse_header(data)
    return header


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
