"""Binary tensor files (LTEN) and PGM previews."""

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import FormatError, VersionError

LTEN_MAGIC = b"LTEN"
LTEN_VERSION = 1


def encode_tensor(array):
    array = np.ascontiguousarray(array, dtype="<f4")
    head = LTEN_MAGIC + struct.pack("<II", LTEN_VERSION, array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + array.tobytes()


def decode_tensor(buf):
    if len(buf) < 12:
        raise FormatError("LTEN: truncated header")
    if buf[:4] != LTEN_MAGIC:
        raise FormatError(f"LTEN: bad magic {buf[:4]!r}")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != LTEN_VERSION:
        raise VersionError(f"LTEN: unsupported version {version}")
    offset = 12 + 4 * ndim
    if len(buf) < offset:
        raise FormatError("LTEN: truncated shape")
    dims = struct.unpack_from(f"<{ndim}I", buf, 12)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != offset + 4 * count:
        raise FormatError(f"LTEN: payload holds {len(buf) - offset} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)


def write_tensor(path, tensor):
    data = tensor.data if isinstance(tensor, Tensor) else tensor
    Path(path).write_bytes(encode_tensor(data))


def read_tensor(path):
    """Read an LTEN file into a float32 array."""
    return decode_tensor(Path(path).read_bytes())


def export_pgm(path, image):
    """Write a single-channel image in [-1, 1] as binary P5 PGM (maxval 255)."""
    img = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    img = np.squeeze(img)
    if img.ndim != 2:
        raise ValueError(f"export_pgm: need one channel, got shape {np.shape(image)}")
    pixels = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
