"""Field dumps (``LSF1`` binary) and 8-bit PGM renderings with a JSON sidecar."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LSF1"


def write_lsf(path, data: np.ndarray, *, omega: float, h: float, index_set: str = "I") -> Path:
    """Write a 2D complex field: magic, LE uint32 header length, JSON header, LE complex128 payload."""
    path = Path(path)
    data = np.asarray(getattr(data, "data", data), dtype=np.complex128)
    if data.ndim != 2:
        raise ValueError("field must be 2D")
    nx, ny = data.shape
    header = json.dumps(
        {"nx": nx, "ny": ny, "index_set": index_set, "dtype": "c128",
         "order": "row-major", "omega": float(omega), "h": float(h)},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(data).astype("<c16").tobytes())
    return path


def read_lsf(path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an LSF1 file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    payload = raw[8 + hlen :]
    nx, ny = header["nx"], header["ny"]
    if header.get("dtype") != "c128" or len(payload) != 16 * nx * ny:
        raise ValueError(f"{path}: payload does not match header ({nx}x{ny} c128)")
    data = np.frombuffer(payload, dtype="<c16").reshape(nx, ny).astype(np.complex128)
    return data, header


def write_pgm(path, values: np.ndarray, quantity: str = "") -> Path:
    """Linear 8-bit grayscale image of a real array; min/max go to ``<path>.json``."""
    path = Path(path)
    v = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(v)
    lo = float(v[finite].min()) if finite.any() else 0.0
    hi = float(v[finite].max()) if finite.any() else 0.0
    span = hi - lo
    scaled = np.zeros(v.shape) if span == 0 else (np.where(finite, v, lo) - lo) / span
    img = np.round(scaled * 255).astype(np.uint8)
    # x1 runs left to right, x2 bottom to top
    img = np.flipud(img.T)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    sidecar = {"min": lo, "max": hi, "quantity": quantity, "scale": "linear"}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
