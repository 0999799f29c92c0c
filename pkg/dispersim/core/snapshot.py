"""
Binary snapshot files for scalar and spinor fields.

Layout (little endian): magic b'DSPF', format version u16, dimension u8,
spinor flag u8, points per axis u32, box length f64, then the complex
values as f64 (re, im) pairs with the first axis varying fastest. Spinors
store the first component block followed by the second.
"""

import logging
import os
import struct
from typing import Union

import numpy as np

from .exceptions import SnapshotFormatError
from .fieldgrid import ComplexField, Grid, SpinorField, make_grid

logger = logging.getLogger(__name__)

MAGIC = b'DSPF'
FORMAT_VERSION = 1
HEADER = struct.Struct('<4sHBBId')
VALUE_DTYPE = np.dtype('<c16')


def snapshot_size(grid: Grid, spinor: bool = False) -> int:
    """Expected file size in bytes."""
    components = 2 if spinor else 1
    return HEADER.size + components * grid.size * VALUE_DTYPE.itemsize


def emit_snapshot(f: Union[ComplexField, SpinorField], path: str) -> int:
    """
    Write a field to a snapshot file.

    Args:
        f: Scalar or spinor field
        path: Output file path

    Returns:
        Number of bytes written
    """
    spinor = isinstance(f, SpinorField)
    grid = f.grid
    header = HEADER.pack(MAGIC, FORMAT_VERSION, grid.dimension, int(spinor), grid.points, grid.length)
    blocks = [f.first.values, f.second.values] if spinor else [f.values]

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as handle:
        handle.write(header)
        for block in blocks:
            handle.write(np.ravel(block, order='F').astype(VALUE_DTYPE).tobytes())

    written = snapshot_size(grid, spinor)
    logger.debug("Wrote snapshot %s (%d bytes)", path, written)
    return written


def load_snapshot(path: str, grid: Grid = None) -> Union[ComplexField, SpinorField]:
    """
    Read a snapshot file.

    Args:
        path: Snapshot file path
        grid: Optional grid the snapshot must match

    Returns:
        ComplexField or SpinorField

    Raises:
        SnapshotFormatError: On bad magic, unknown version, dimension
            mismatch or truncated payload
    """
    with open(path, 'rb') as handle:
        raw = handle.read()

    if len(raw) < HEADER.size:
        raise SnapshotFormatError(f"Snapshot {path} is shorter than its header")
    magic, version, n, spinor, points, length = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotFormatError(f"Bad magic {magic!r} in {path}")
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(f"Unsupported snapshot version {version} (expected {FORMAT_VERSION})")
    if spinor not in (0, 1):
        raise SnapshotFormatError(f"Invalid spinor flag {spinor}")

    try:
        stored = make_grid(n, points, length)
    except Exception as e:
        raise SnapshotFormatError(f"Invalid grid in snapshot header: {e}")
    if grid is not None and (grid.dimension, grid.points, grid.length) != (n, points, length):
        raise SnapshotFormatError(
            f"Snapshot grid (n={n}, N={points}, L={length}) does not match the expected "
            f"(n={grid.dimension}, N={grid.points}, L={grid.length})"
        )

    expected = snapshot_size(stored, bool(spinor))
    if len(raw) != expected:
        raise SnapshotFormatError(f"Snapshot payload is {len(raw)} bytes, expected {expected}")

    values = np.frombuffer(raw, dtype=VALUE_DTYPE, offset=HEADER.size)
    blocks = [
        values[i * stored.size:(i + 1) * stored.size].reshape(stored.shape, order='F').astype(complex)
        for i in range(2 if spinor else 1)
    ]
    if spinor:
        return SpinorField(ComplexField(stored, blocks[0]), ComplexField(stored, blocks[1]))
    return ComplexField(stored, blocks[0])
