"""Little-endian binary helpers for the ``GF??`` file family."""

import struct

import numpy as np

from .errors import DataError


def write_header(fh, magic, *fields):
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    fh.write(magic)
    fh.write(struct.pack("<%dI" % len(fields), *fields))


def read_header(fh, magic, nfields):
    got = fh.read(4)
    if got != magic:
        raise DataError("bad magic %r, expected %r" % (got, magic))
    raw = fh.read(4 * nfields)
    if len(raw) != 4 * nfields:
        raise DataError("truncated header")
    return struct.unpack("<%dI" % nfields, raw)


def read_exact(fh, nbytes):
    raw = fh.read(nbytes)
    if len(raw) != nbytes:
        raise DataError("truncated payload: wanted %d bytes, got %d" % (nbytes, len(raw)))
    return raw


def read_array(fh, dtype, count):
    dtype = np.dtype(dtype).newbyteorder("<")
    raw = read_exact(fh, dtype.itemsize * count)
    return np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))


def write_array(fh, arr, dtype):
    fh.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())
