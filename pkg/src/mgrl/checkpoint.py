"""Binary parameter checkpoints.

Layout: 4-byte magic "MGRL", then little-endian u32 format version and entry
count, then per entry a u32 name length, the UTF-8 name, a u32 rank, u64
dimensions, and the float64 payload in C order. Entries are written in
sorted-name order so identical parameter dicts produce identical bytes.
Round trips are bit-exact; a version or magic mismatch is a hard error.
"""

import struct

import numpy as np

MAGIC = b"MGRL"
VERSION = 1


def save_params(path, params):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name in sorted(params):
            # ascontiguousarray would promote 0-d arrays to 1-d; 0-d is
            # always contiguous, so only reorder when actually needed
            arr = np.asarray(params[name], dtype="<f8")
            if not arr.flags["C_CONTIGUOUS"]:
                arr = np.ascontiguousarray(arr)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())
    return path


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise ValueError("truncated checkpoint file")
    return data


def load_params(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise ValueError(f"{path!r} is not a parameter checkpoint")
        version, count = struct.unpack("<II", _read_exact(f, 8))
        if version != VERSION:
            raise ValueError(f"checkpoint format version {version} unsupported "
                             f"(this build reads version {VERSION})")
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank)) if rank else ()
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = _read_exact(f, 8 * n)
            params[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise ValueError("trailing bytes after the last checkpoint entry")
    return params
