"""Portable on-disk stack format ("stack bundle").

A bundle is a pair of files sharing a base path: ``<base>.json`` holds
the header and ``<base>.blob`` holds little-endian 32-bit floats,
frame-major, then channel-major (when channels > 1), then row-major.
Masks are stored as a single 0.0/1.0 channel, displacement fields as
two channels (dx, dy).  The header records a CRC32 of the blob.
"""

from __future__ import annotations

import json
import os
import zlib

import numpy as np

from .core import DiffusionMeta, Frame, FrameStack, Mask

_DTYPE = "f32le"
_ORDER = "row-major, frame-major"


class FormatError(ValueError):
    """A bundle file is malformed; the message names the byte offset."""


def _paths(base):
    base = os.fspath(base)
    return base + ".json", base + ".blob"


def _write_atomic(path: str, data: bytes):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_bundle(base, array: np.ndarray, header: dict):
    """array is (frames, channels, height, width) float32."""
    blob = np.ascontiguousarray(array, dtype="<f4").tobytes()
    header = dict(header)
    header["crc32"] = zlib.crc32(blob)
    hpath, bpath = _paths(base)
    _write_atomic(bpath, blob)
    _write_atomic(hpath, json.dumps(header, indent=1, sort_keys=True).encode())


def _read_header(hpath: str) -> dict:
    try:
        with open(hpath, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise FormatError(f"missing header file {hpath} (byte offset 0)")
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed header {hpath} at byte offset {e.pos}: {e.msg}")
    if not isinstance(header, dict):
        raise FormatError(f"malformed header {hpath}: not an object (byte offset 0)")
    return header


def _read_blob(base, header: dict, channels: int) -> np.ndarray:
    hpath, bpath = _paths(base)
    for key in ("width", "height", "frames", "dtype", "order"):
        if key not in header:
            raise FormatError(f"header {hpath} lacks '{key}' (byte offset 0)")
    if header["dtype"] != _DTYPE:
        raise FormatError(f"unsupported dtype {header['dtype']!r} in {hpath}")
    w, h, n = int(header["width"]), int(header["height"]), int(header["frames"])
    if w <= 0 or h <= 0 or n <= 0:
        raise FormatError(f"non-positive dimensions in {hpath} (byte offset 0)")
    expected = n * channels * h * w * 4
    try:
        with open(bpath, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise FormatError(f"missing blob file {bpath} (byte offset 0)")
    if len(blob) != expected:
        raise FormatError(
            f"blob {bpath} holds {len(blob)} bytes, expected {expected}; "
            f"data ends at byte offset {min(len(blob), expected)}"
        )
    if "crc32" in header and zlib.crc32(blob) != header["crc32"]:
        raise FormatError(
            f"checksum mismatch for {bpath} (blob starts at byte offset 0)"
        )
    data = np.frombuffer(blob, dtype="<f4").reshape(n, channels, h, w)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"non-finite values in blob {bpath}")
    return data


def save_stack(stack: FrameStack, base) -> None:
    data = stack.as_array().astype("<f4")[:, None, :, :]
    header = {
        "width": stack.width,
        "height": stack.height,
        "frames": len(stack),
        "dtype": _DTYPE,
        "order": _ORDER,
        "normalized": stack.normalized,
        "meta": [
            {
                "b_value": m.b_value,
                "direction": list(m.direction),
                "average_index": m.average_index,
            }
            for m in stack.metas()
        ],
    }
    _write_bundle(base, data, header)


def load_stack(base) -> FrameStack:
    hpath, _ = _paths(base)
    header = _read_header(hpath)
    data = _read_blob(base, header, channels=1)[:, 0]
    meta_list = header.get("meta")
    if not isinstance(meta_list, list) or len(meta_list) != data.shape[0]:
        raise FormatError(f"header {hpath} meta list does not match frame count")
    frames = []
    for k, m in enumerate(meta_list):
        try:
            meta = DiffusionMeta(
                b_value=m["b_value"],
                direction=tuple(m["direction"]),
                average_index=int(m["average_index"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"invalid metadata for frame {k} in {hpath}: {e}")
        frames.append(Frame(data[k], meta))
    return FrameStack(frames, normalized=bool(header.get("normalized", False)))


def save_mask(mask: Mask, base) -> None:
    data = mask.inside.astype("<f4")[None, None, :, :]
    header = {
        "width": mask.width,
        "height": mask.height,
        "frames": 1,
        "channels": 1,
        "dtype": _DTYPE,
        "order": _ORDER,
        "normalized": False,
    }
    _write_bundle(base, data, header)


def load_mask(base) -> Mask:
    hpath, _ = _paths(base)
    header = _read_header(hpath)
    data = _read_blob(base, header, channels=int(header.get("channels", 1)))
    return Mask(data[0, 0] > 0.5)


def save_fields(fields, base) -> None:
    """Save a list of (height, width, 2) displacement fields."""
    arrs = [np.asarray(f) for f in fields]
    if not arrs:
        raise ValueError("no fields to save")
    h, w = arrs[0].shape[:2]
    data = np.stack([a.transpose(2, 0, 1) for a in arrs], axis=0).astype("<f4")
    header = {
        "width": w,
        "height": h,
        "frames": len(arrs),
        "channels": 2,
        "dtype": _DTYPE,
        "order": _ORDER,
        "normalized": False,
    }
    _write_bundle(base, data, header)


def load_fields(base) -> list[np.ndarray]:
    hpath, _ = _paths(base)
    header = _read_header(hpath)
    channels = int(header.get("channels", 1))
    if channels != 2:
        raise FormatError(f"field bundle {hpath} must have 2 channels, got {channels}")
    data = _read_blob(base, header, channels=2)
    return [data[k].transpose(1, 2, 0).astype(np.float64) for k in range(data.shape[0])]
