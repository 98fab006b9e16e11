"""Single-file binary checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"LRCK"
    version u32      format version (currently 1)
    cfg_len u32      length of the UTF-8 config echo
    cfg     bytes    config echo (the flat key=value text of the run)
    count   u32      number of named tensors
    entry*  per tensor:
        name_len u16, name utf-8
        dtype    u8   (1=float32, 2=float64, 3=int64)
        ndim     u8
        dims     u64 * ndim
        data     raw values, little-endian, C order

Round-trips are bit-exact: values are written raw in their stored dtype.
"""

import struct

import numpy as np

MAGIC = b"LRCK"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}


def save_checkpoint(path, tensors, config_text=""):
    """Write named arrays plus a config echo. `tensors` is name -> ndarray."""
    cfg = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)  # tobytes(order="C") handles any layout, 0-d included
            le = arr.dtype.newbyteorder("<")
            if le not in _DTYPE_CODES:
                raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
            arr = arr.astype(le, copy=False)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _DTYPE_CODES[le], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint; returns (config_text, dict of name -> ndarray)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        config_text = fh.read(cfg_len).decode("utf-8")
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            dtype = _CODE_DTYPES[code]
            n_values = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            raw = fh.read(n_values * dtype.itemsize)
            tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
        return config_text, tensors
