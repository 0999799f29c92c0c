"""
Test suite for binary snapshot files.
"""

import os
import shutil
import struct
import tempfile
import unittest

import numpy as np

from dispersim.core.exceptions import SnapshotFormatError
from dispersim.core.fieldgrid import ComplexField, SpinorField, make_grid
from dispersim.core.snapshot import HEADER, emit_snapshot, load_snapshot, snapshot_size


class TestSnapshot(unittest.TestCase):
    """Test cases for snapshot emission and loading."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.rng = np.random.default_rng(7)
        self.grid = make_grid(2, 8, 10.0)
        shape = self.grid.shape
        self.field = ComplexField(self.grid, self.rng.standard_normal(shape) + 1j * self.rng.standard_normal(shape))

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _path(self, name: str) -> str:
        return os.path.join(self.temp_dir, name)

    def test_scalar_snapshot(self):
        """Test that a scalar field is written and read back exactly."""
        path = self._path('scalar.dspf')
        written = emit_snapshot(self.field, path)

        self.assertEqual(written, os.path.getsize(path))
        self.assertEqual(written, snapshot_size(self.grid))

        loaded = load_snapshot(path, self.grid)
        self.assertIsInstance(loaded, ComplexField)
        np.testing.assert_array_equal(loaded.values, self.field.values)

    def test_spinor_snapshot(self):
        """Test that both spinor components are preserved."""
        grid = make_grid(1, 16, 5.0)
        first = ComplexField(grid, self.rng.standard_normal(16) + 0j)
        second = ComplexField(grid, 1j * self.rng.standard_normal(16))
        path = self._path('spinor.dspf')
        emit_snapshot(SpinorField(first, second), path)

        loaded = load_snapshot(path)
        self.assertIsInstance(loaded, SpinorField)
        np.testing.assert_array_equal(loaded.first.values, first.values)
        np.testing.assert_array_equal(loaded.second.values, second.values)

    def test_first_axis_fastest(self):
        """Test the on-disk value order."""
        path = self._path('order.dspf')
        emit_snapshot(self.field, path)
        with open(path, 'rb') as handle:
            raw = handle.read()

        stored = np.frombuffer(raw, dtype='<c16', offset=HEADER.size)
        self.assertEqual(stored[1], self.field.values[1, 0])
        self.assertEqual(stored[8], self.field.values[0, 1])

    def test_header(self):
        """Test the header fields."""
        path = self._path('header.dspf')
        emit_snapshot(self.field, path)
        with open(path, 'rb') as handle:
            magic, version, n, spinor, points, length = HEADER.unpack(handle.read(HEADER.size))

        self.assertEqual(magic, b'DSPF')
        self.assertEqual(version, 1)
        self.assertEqual((n, spinor, points, length), (2, 0, 8, 10.0))

    def test_corrupted_files(self):
        """Test that malformed files are rejected."""
        path = self._path('good.dspf')
        emit_snapshot(self.field, path)
        with open(path, 'rb') as handle:
            raw = handle.read()

        corruptions = {
            'empty': b'',
            'bad_magic': b'XXXX' + raw[4:],
            'bad_version': raw[:4] + struct.pack('<H', 9) + raw[6:],
            'bad_spinor_flag': raw[:7] + bytes([3]) + raw[8:],
            'truncated': raw[:-16],
            'trailing_bytes': raw + b'\x00' * 16,
        }
        for name, payload in corruptions.items():
            with self.subTest(corruption=name):
                bad_path = self._path(f'{name}.dspf')
                with open(bad_path, 'wb') as handle:
                    handle.write(payload)
                with self.assertRaises(SnapshotFormatError):
                    load_snapshot(bad_path)

    def test_grid_mismatch(self):
        """Test loading against a different grid."""
        path = self._path('mismatch.dspf')
        emit_snapshot(self.field, path)

        for grid in [make_grid(2, 16, 10.0), make_grid(2, 8, 12.0), make_grid(1, 8, 10.0)]:
            with self.subTest(grid=grid):
                with self.assertRaises(SnapshotFormatError):
                    load_snapshot(path, grid)


if __name__ == '__main__':
    unittest.main()
