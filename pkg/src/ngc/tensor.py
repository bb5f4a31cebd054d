"""Binary tensor container ("NGCT").

Layout, all little-endian::

    b"NGCT" | version u32 | dtype u8 (0=f32, 1=u16 labels) | rank u8 |
    extents u32 * rank | payload (row-major)
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NGCT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u2")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint16"): 1}
_MAX_EXTENT = 2**32 - 1


class TensorFormatError(ValueError):
    """Malformed tensor file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def check_tensor(array, n_classes=None):
    """Validate the container invariants; return the array as f32 or u16."""
    array = np.asarray(array)
    if array.ndim == 0:
        raise ValueError("0-dimensional tensors are not allowed")
    if any(d <= 0 for d in array.shape):
        raise ValueError(f"zero extent in shape {array.shape}")
    if array.dtype.kind == "f":
        array = array.astype(np.float32, copy=False)
    elif array.dtype.kind in "iub":
        if array.size and (array.min() < 0 or array.max() > 0xFFFF):
            raise ValueError("label values must fit in u16")
        array = array.astype(np.uint16, copy=False)
    else:
        raise ValueError(f"unsupported dtype {array.dtype}")
    if n_classes is not None and array.dtype == np.uint16 and array.max() >= n_classes:
        raise ValueError(f"label {int(array.max())} >= class count {n_classes}")
    return array


def encode_tensor(array):
    array = check_tensor(array)
    if any(d > _MAX_EXTENT for d in array.shape) or array.ndim > 255:
        raise ValueError("shape does not fit the container header")
    head = MAGIC + struct.pack("<IBB", VERSION, _CODES[array.dtype], array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes()


def decode_tensor(buf):
    buf = memoryview(buf)
    if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
        raise TensorFormatError("bad magic", 0)
    if len(buf) < 10:
        raise TensorFormatError("truncated header", len(buf))
    version, code, rank = struct.unpack_from("<IBB", buf, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", 4)
    if code not in DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}", 8)
    if rank == 0:
        raise TensorFormatError("rank 0 tensor", 9)
    off = 10
    if len(buf) < off + 4 * rank:
        raise TensorFormatError("truncated extents", len(buf))
    shape = struct.unpack_from(f"<{rank}I", buf, off)
    for i, d in enumerate(shape):
        if d == 0:
            raise TensorFormatError("zero extent", off + 4 * i)
    off += 4 * rank
    dtype = DTYPES[code]
    count = 1
    for d in shape:
        count *= d
    nbytes = count * dtype.itemsize
    if nbytes > len(buf) - off:
        # also catches extents whose product overflows any sane size
        raise TensorFormatError(f"payload needs {nbytes} bytes, {len(buf) - off} present", len(buf))
    if nbytes < len(buf) - off:
        raise TensorFormatError("trailing bytes after payload", off + nbytes)
    arr = np.frombuffer(buf[off : off + nbytes], dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


def write_tensor(path, array):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_tensor(array)
    with open(path, "wb") as fh:
        fh.write(data)


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
