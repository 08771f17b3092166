"""
Binary containers for arrays.

FNFC layout (little-endian):

    magic b"FNFC" | u16 version | u16 entry count
    per entry: u16 name length | UTF-8 name | u8 dtype code | u8 ndim |
               ndim x u32 shape | raw data
    u32 JSON length | UTF-8 JSON metadata

FNKF kernel-field dump (little-endian float32):

    magic b"FNKF" | u32 J | u32 K | u32 d | u32 H | u32 W |
    A (J x 3 x K x K) | B (J x 3 x K x K) | coeffs (J x H x W)
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, Tuple, Union

import numpy as np

from app.core.exceptions import CheckpointError

logger = logging.getLogger(__name__)

CONTAINER_MAGIC = b"FNFC"
CONTAINER_VERSION = 1
KERNEL_FIELD_MAGIC = b"FNKF"

DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
CODES_BY_DTYPE = {dtype: code for code, dtype in DTYPE_CODES.items()}

PathLike = Union[str, Path]


def _read_exact(fid: BinaryIO, size: int, path: PathLike) -> bytes:
    data = fid.read(size)
    if len(data) != size:
        raise CheckpointError(f"{path}: file is truncated")
    return data


def write_container(path: PathLike, arrays: Dict[str, np.ndarray], metadata: Dict[str, Any] = None) -> Path:
    """Write named arrays and a JSON metadata trailer to an FNFC file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fid:
        fid.write(CONTAINER_MAGIC)
        fid.write(struct.pack("<HH", CONTAINER_VERSION, len(arrays)))
        for name, array in arrays.items():
            array = np.asarray(array)
            dtype = array.dtype.newbyteorder("<") if array.dtype.itemsize > 1 else array.dtype
            if dtype not in CODES_BY_DTYPE:
                raise ValueError(f"unsupported dtype {array.dtype} for entry {name!r}")
            encoded = name.encode("utf-8")
            fid.write(struct.pack("<H", len(encoded)))
            fid.write(encoded)
            fid.write(struct.pack("<BB", CODES_BY_DTYPE[dtype], array.ndim))
            fid.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fid.write(np.ascontiguousarray(array, dtype=dtype).tobytes())
        trailer = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
        fid.write(struct.pack("<I", len(trailer)))
        fid.write(trailer)
    return path


def read_container(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read an FNFC file.

    Raises:
        CheckpointError: if the file is missing, has the wrong magic or version,
        or is truncated
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"container not found: {path}")
    arrays: Dict[str, np.ndarray] = {}
    with open(path, "rb") as fid:
        if _read_exact(fid, 4, path) != CONTAINER_MAGIC:
            raise CheckpointError(f"{path}: not an FNFC container")
        version, count = struct.unpack("<HH", _read_exact(fid, 4, path))
        if version != CONTAINER_VERSION:
            raise CheckpointError(f"{path}: unsupported container version {version}")
        for _ in range(count):
            (name_length,) = struct.unpack("<H", _read_exact(fid, 2, path))
            name = _read_exact(fid, name_length, path).decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(fid, 2, path))
            if code not in DTYPE_CODES:
                raise CheckpointError(f"{path}: unknown dtype code {code} for entry {name!r}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(fid, 4 * ndim, path))
            dtype = DTYPE_CODES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arrays[name] = np.frombuffer(_read_exact(fid, size, path), dtype=dtype).reshape(shape).copy()
        (json_length,) = struct.unpack("<I", _read_exact(fid, 4, path))
        metadata = json.loads(_read_exact(fid, json_length, path).decode("utf-8"))
    return arrays, metadata


def dump_kernel_field(path: PathLike, a: np.ndarray, b: np.ndarray, coeffs: np.ndarray, d: int) -> Path:
    """
    Write one image's basis and coefficients.

    Args:
        a, b: J x 3 x K x K basis kernels
        coeffs: J x H x W coefficients
        d: Upsampling factor of the B kernels
    """
    a = np.asarray(a)
    b = np.asarray(b)
    coeffs = np.asarray(coeffs)
    J, _, K, _ = a.shape
    if b.shape != a.shape or coeffs.shape[0] != J:
        raise ValueError("basis and coefficient shapes do not agree")
    _, height, width = coeffs.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fid:
        fid.write(KERNEL_FIELD_MAGIC)
        fid.write(struct.pack("<5I", J, K, d, height, width))
        for array in (a, b, coeffs):
            fid.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    logger.info(f"Kernel field (J={J}, K={K}, d={d}, {height}x{width}) written to {path}")
    return path


def load_kernel_field(path: PathLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Returns (a, b, coeffs, d) from an FNKF dump"""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"kernel field not found: {path}")
    with open(path, "rb") as fid:
        if _read_exact(fid, 4, path) != KERNEL_FIELD_MAGIC:
            raise CheckpointError(f"{path}: not a kernel field dump")
        J, K, d, height, width = struct.unpack("<5I", _read_exact(fid, 20, path))
        arrays = []
        for shape in ((J, 3, K, K), (J, 3, K, K), (J, height, width)):
            size = int(np.prod(shape)) * 4
            arrays.append(np.frombuffer(_read_exact(fid, size, path), dtype="<f4").reshape(shape).copy())
    return arrays[0], arrays[1], arrays[2], d
