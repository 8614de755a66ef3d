"""Image I/O (PGM/PPM/PNG) and the little-endian FMP1 / NNF1 / WGT1 dumps."""
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import check_feature_map, check_image

FMP_MAGIC = b"FMP1"
NNF_MAGIC = b"NNF1"
WGT_MAGIC = b"WGT1"


def read_image(path):
    """Load an 8-bit grayscale or RGB image as float64 (H, W, C) in [0, 1]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return check_image(arr)


def to_uint8(img):
    arr = check_image(img)
    return np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_image(path, img):
    """Write (H, W, 1) as PGM (P5) or (H, W, 3) as PPM (P6); ``.png`` writes PNG."""
    data = to_uint8(img)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    elif data.shape[2] != 3:
        raise ValueError(f"cannot write a {data.shape[2]}-channel image")
    path = Path(path)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    Image.fromarray(data).save(path, format=fmt)


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated file")
    return buf


def _check_magic(fh, magic):
    got = _read_exact(fh, 4)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")


def write_feature_map(path, fm):
    fm = check_feature_map(fm)
    c, h, w = fm.shape
    with open(path, "wb") as fh:
        fh.write(FMP_MAGIC + struct.pack("<3I", c, h, w))
        fh.write(fm.astype("<f4").tobytes())


def read_feature_map(path):
    with open(path, "rb") as fh:
        _check_magic(fh, FMP_MAGIC)
        c, h, w = struct.unpack("<3I", _read_exact(fh, 12))
        data = np.frombuffer(_read_exact(fh, 4 * c * h * w), dtype="<f4")
    return data.reshape(c, h, w).astype(np.float64)


_NNF_RECORD = np.dtype([("row", "<u4"), ("col", "<u4"), ("rel", "<f4")])


def write_nnf(path, positions, relevance):
    """Write an NNF1 file: magic, u32 H, W, then (u32 row, u32 col, f32 rel) per position."""
    positions = np.asarray(positions)
    relevance = np.asarray(relevance)
    h, w = relevance.shape
    if positions.shape != (h, w, 2):
        raise ValueError("positions and relevance shapes disagree")
    rec = np.empty(h * w, dtype=_NNF_RECORD)
    rec["row"] = positions[..., 0].ravel()
    rec["col"] = positions[..., 1].ravel()
    rec["rel"] = relevance.ravel()
    with open(path, "wb") as fh:
        fh.write(NNF_MAGIC + struct.pack("<2I", h, w))
        fh.write(rec.tobytes())


def read_nnf(path):
    """Return ``(positions, relevance)`` from an NNF1 file."""
    with open(path, "rb") as fh:
        _check_magic(fh, NNF_MAGIC)
        h, w = struct.unpack("<2I", _read_exact(fh, 8))
        rec = np.frombuffer(_read_exact(fh, _NNF_RECORD.itemsize * h * w), dtype=_NNF_RECORD)
    positions = np.stack([rec["row"], rec["col"]], axis=-1).astype(np.int64).reshape(h, w, 2)
    return positions, rec["rel"].astype(np.float64).reshape(h, w)


def write_weights(path, weights):
    """Write a WGT1 file from an (out, in, kh, kw) array."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 4:
        raise ValueError(f"weights must be (out, in, kh, kw), got {weights.shape}")
    with open(path, "wb") as fh:
        fh.write(WGT_MAGIC + struct.pack("<4I", *weights.shape))
        fh.write(weights.astype("<f4").tobytes())


def read_weights(path):
    with open(path, "rb") as fh:
        _check_magic(fh, WGT_MAGIC)
        shape = struct.unpack("<4I", _read_exact(fh, 16))
        data = np.frombuffer(_read_exact(fh, 4 * int(np.prod(shape))), dtype="<f4")
    return data.reshape(shape).astype(np.float64)
