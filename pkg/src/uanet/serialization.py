"""Binary tensor containers and named weight archives.

Container layout (little-endian)::

    b"UATN" | u8 version | u8 dtype (0=f32, 1=f64) | u8 rank | u32 dims[rank] | values

An archive is a zip file holding one container per tensor plus a
``MANIFEST.txt`` listing ``name<TAB>shape<TAB>dtype`` in insertion order.
"""

from __future__ import annotations

import io
import struct
import zipfile
from pathlib import Path

import numpy as np

MAGIC = b"UATN"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBBB")


class FormatError(ValueError):
    """Malformed container, archive, or raster; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dtype = arr.dtype.newbyteorder("<")
    if dtype not in _CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
    if arr.ndim > 255:
        raise ValueError("rank exceeds 255")
    head = _HEADER.pack(MAGIC, VERSION, _CODES[dtype], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", len(blob))
    magic, version, code, rank = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", 5)
    offset = _HEADER.size
    if len(blob) < offset + 4 * rank:
        raise FormatError("truncated dimension list", len(blob))
    shape = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    dtype = _DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise FormatError(
            f"payload holds {len(blob) - offset} bytes, shape {shape} needs {expected}",
            min(len(blob), offset + expected),
        )
    return np.frombuffer(blob, dtype=dtype, offset=offset).reshape(shape).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def save_archive(path, tensors: dict, extras: dict | None = None) -> None:
    """Write ``name -> array`` deterministically (fixed timestamps, stored order).

    ``extras`` adds text members (e.g. the run configuration) next to the manifest.
    """
    lines = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            info = zipfile.ZipInfo(f"{name}.uatn", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, encode_tensor(arr))
            shape = "x".join(str(d) for d in arr.shape) or "scalar"
            lines.append(f"{name}\t{shape}\t{arr.dtype.name}")
        info = zipfile.ZipInfo("MANIFEST.txt", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, "\n".join(lines) + "\n")
        for name, text in (extras or {}).items():
            zf.writestr(zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0)), text)


def load_archive(path) -> dict:
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"not an archive: {exc}", 0) from None
    with zf:
        try:
            manifest = zf.read("MANIFEST.txt").decode("utf-8")
        except KeyError:
            raise FormatError("archive has no MANIFEST.txt", 0) from None
        out = {}
        for line in manifest.splitlines():
            if not line.strip():
                continue
            name = line.split("\t", 1)[0]
            out[name] = decode_tensor(zf.read(f"{name}.uatn"))
        return out


def read_archive_text(path, name: str) -> str | None:
    with zipfile.ZipFile(path) as zf:
        try:
            return zf.read(name).decode("utf-8")
        except KeyError:
            return None


def archive_bytes(tensors: dict) -> bytes:
    buf = io.BytesIO()
    save_archive(buf, tensors)
    return buf.getvalue()
