"""Model checkpoint files.

One binary file per checkpoint: magic ``ATCK``, a u32 length-prefixed JSON
header (layer dims plus the ordered array directory), then the raw float64
blobs in directory order, little endian throughout.  Round-trips are exact.
"""

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .netblocks import Dims, ModelParams

_MAGIC = b"ATCK"
_GROUPS = ("encoder", "decoder", "disc")


def save_checkpoint(path, params):
    arrays = []
    blobs = []
    for group in _GROUPS:
        store = getattr(params, group)
        for name in sorted(store):
            arr = np.ascontiguousarray(store[name], dtype="<f8")
            arrays.append({"group": group, "name": name, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = json.dumps(
        {"dims": asdict(params.dims), "arrays": arrays},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    return Path(path)


def load_checkpoint(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8 or data[:4] != _MAGIC:
        raise FormatError(f"{path}: bad or missing checkpoint magic")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8 : 8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt checkpoint header ({e})")
    dims = Dims(**header["dims"])
    groups = {g: {} for g in _GROUPS}
    off = 8 + hlen
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * 8
        if off + nbytes > len(data):
            raise FormatError(f"{path}: truncated checkpoint (array {spec['name']})")
        arr = np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        groups[spec["group"]][spec["name"]] = arr
        off += nbytes
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return ModelParams(dims=dims, encoder=groups["encoder"], decoder=groups["decoder"], disc=groups["disc"])
