"""Binary weights file.

Layout (all integers unsigned 32-bit little-endian)::

    b"STDK1"
    u32 config_len, config_len bytes of UTF-8 JSON
    repeated until EOF, tensors in sorted-name order:
        u32 name_len, name (UTF-8), u32 rank, rank x u32 extent,
        prod(extents) x float32 little-endian
"""

import json
import struct

import numpy as np

MAGIC = b"STDK1"


class WeightsFormatError(ValueError):
    pass


def dumps_weights(params, config):
    out = [MAGIC]
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(blob)))
    out.append(blob)
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def loads_weights(data):
    """Parse a weights blob into ``(params, config)``."""
    if not data.startswith(MAGIC):
        raise WeightsFormatError("missing STDK1 header")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise WeightsFormatError("truncated weights file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (clen,) = struct.unpack("<I", take(4))
    config = json.loads(take(clen).decode("utf-8"))
    params = {}
    while pos < len(data):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float32)
    return params, config


def save_weights(path, params, config):
    with open(path, "wb") as fh:
        fh.write(dumps_weights(params, config))


def load_weights(path):
    with open(path, "rb") as fh:
        return loads_weights(fh.read())
