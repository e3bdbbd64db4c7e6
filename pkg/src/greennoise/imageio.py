"""Minimal Netpbm and sidecar file handling.

PBM (P4) holds masks, PGM (P5, 8- or 16-bit big-endian) holds intensity codes
and amplitude/phase renderings, and raw little-endian float64 ``.bin`` files
hold exact arrays. Every array file can carry a JSON sidecar.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from greennoise.core import CONVENTION_VERSION, InvalidInputError


def _read_header(fh, magic):
    tokens = []
    needed = 3 if magic != b"P4" else 2
    got = fh.readline().strip()
    if got != magic:
        raise InvalidInputError(f"expected {magic.decode()} file, got {got[:2]!r}")
    while len(tokens) < needed:
        line = fh.readline()
        if not line:
            raise InvalidInputError("truncated Netpbm header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return [int(t) for t in tokens]


def write_pbm(path, bits):
    bits = np.asarray(bits, dtype=np.uint8)
    h, w = bits.shape
    # PBM: 1 = black. We store mask "on" as 1 bits.
    packed = np.packbits(bits, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode())
        fh.write(packed.tobytes())


def read_pbm(path):
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P4")
        row_bytes = (w + 7) // 8
        raw = np.frombuffer(fh.read(row_bytes * h), dtype=np.uint8)
    if raw.size != row_bytes * h:
        raise InvalidInputError(f"{path}: truncated PBM data")
    return np.unpackbits(raw.reshape(h, row_bytes), axis=1)[:, :w]


def write_pgm(path, data, maxval=None):
    data = np.asarray(data)
    if data.ndim != 2:
        raise InvalidInputError("PGM data must be 2-D")
    if maxval is None:
        maxval = 255 if data.max(initial=0) <= 255 else 65535
    if data.min(initial=0) < 0 or data.max(initial=0) > maxval:
        raise InvalidInputError("PGM values out of range")
    h, w = data.shape
    dtype = ">u1" if maxval < 256 else ">u2"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        fh.write(np.ascontiguousarray(data, dtype=dtype).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        w, h, maxval = _read_header(fh, b"P5")
        dtype = ">u1" if maxval < 256 else ">u2"
        raw = np.frombuffer(fh.read(), dtype=dtype)
    if raw.size < w * h:
        raise InvalidInputError(f"{path}: truncated PGM data")
    return raw[: w * h].reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8)


def write_float(path, data):
    np.ascontiguousarray(data, dtype="<f8").tofile(path)


def read_float(path, shape):
    arr = np.fromfile(path, dtype="<f8")
    if arr.size != shape[0] * shape[1]:
        raise InvalidInputError(f"{path}: expected {shape[0] * shape[1]} values, found {arr.size}")
    return arr.reshape(shape)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_complex_image(stem, img):
    """Write ``stem.amp.bin``, ``stem.phase.bin`` (float64) and ``stem.json``."""
    stem = Path(stem)
    img = np.asarray(img, dtype=np.complex128)
    write_float(stem.with_suffix(".amp.bin"), np.abs(img))
    write_float(stem.with_suffix(".phase.bin"), np.angle(img))
    write_json(
        stem.with_suffix(".json"),
        {
            "height": img.shape[0],
            "width": img.shape[1],
            "layout": "row-major, little-endian float64",
            "files": {"amplitude": stem.with_suffix(".amp.bin").name, "phase": stem.with_suffix(".phase.bin").name},
            "convention_version": CONVENTION_VERSION,
        },
    )


def read_complex_image(stem):
    stem = Path(stem)
    meta = read_json(stem.with_suffix(".json"))
    shape = (meta["height"], meta["width"])
    amp = read_float(stem.parent / meta["files"]["amplitude"], shape)
    phase = read_float(stem.parent / meta["files"]["phase"], shape)
    return amp * np.exp(1j * phase)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
