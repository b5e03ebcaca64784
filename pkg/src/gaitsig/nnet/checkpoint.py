"""``GFNN`` checkpoint files.

Layout (little-endian): magic ``GFNN``, u32 version, u32 length + UTF-8 JSON
header (layer specs, input shape, dtype, mode), then for each layer and
each of its parameters in order ``W, b``: u32 element count + f32 values.
A trailing u32 flag announces optional optimizer state: f64 lr, momentum,
weight decay followed by velocity blobs in the same order.
"""

import json
import struct

import numpy as np

from .. import _binio
from ..errors import DataError
from .network import Network
from .optim import OptimizerState

VERSION = 1


def _param_order(p):
    return [k for k in ("W", "b") if k in p]


def save_checkpoint(path, net, opt=None, extra=None):
    header = {
        "layers": [s.to_dict() for s in net.layers],
        "input_shape": list(net.input_shape),
        "dtype": net.dtype.name,
        "mode": net.mode,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        _binio.write_header(fh, b"GFNN", VERSION, len(blob))
        fh.write(blob)
        for p in net.params:
            for k in _param_order(p):
                fh.write(struct.pack("<I", p[k].size))
                _binio.write_array(fh, p[k], "f4")
        fh.write(struct.pack("<I", 1 if opt is not None else 0))
        if opt is not None:
            fh.write(struct.pack("<3d", opt.lr, opt.momentum, opt.weight_decay))
            for v in opt.velocity:
                for k in _param_order(v):
                    fh.write(struct.pack("<I", v[k].size))
                    _binio.write_array(fh, v[k], "f4")


def load_checkpoint(path):
    """Return ``(net, opt_or_None, extra)``."""
    with open(path, "rb") as fh:
        version, n = _binio.read_header(fh, b"GFNN", 2)
        if version != VERSION:
            raise DataError("unsupported checkpoint version %d" % version)
        header = json.loads(_binio.read_exact(fh, n).decode())
        skeleton = Network(header["layers"], header["input_shape"], params=None, dtype=np.float32, init_std=0.0)

        def read_like(shapes_per_layer):
            out = []
            for shapes in shapes_per_layer:
                d = {}
                for k in _param_order(shapes):
                    (count,) = struct.unpack("<I", _binio.read_exact(fh, 4))
                    if count != int(np.prod(shapes[k].shape)):
                        raise DataError("parameter blob size mismatch")
                    d[k] = _binio.read_array(fh, "f4", count).reshape(shapes[k].shape)
                out.append(d)
            return out

        params = read_like(skeleton.params)
        net = Network(header["layers"], header["input_shape"], params=params, dtype=header["dtype"])
        net.mode = header.get("mode", "train")
        opt = None
        (has_opt,) = struct.unpack("<I", _binio.read_exact(fh, 4))
        if has_opt:
            lr, mom, wd = struct.unpack("<3d", _binio.read_exact(fh, 24))
            vel = [{k: v.astype(net.dtype) for k, v in d.items()} for d in read_like(skeleton.params)]
            opt = OptimizerState(vel, lr, mom, wd)
    return net, opt, header.get("extra", {})
