"""Wire-format contract: this writer against the engine's reader."""

import struct

import numpy as np
import pytest

from patchref.tensorio import read_tensor as engine_read
from refextract.errors import ExtractorError
from refextract.tensorio import encode_tensor, read_tensor, write_tensor


class TestEncoding:
    def test_header_layout_is_exactly_30_bytes_for_2x2_f32(self):
        t = np.arange(4, dtype=np.float32).reshape(2, 2)
        blob = encode_tensor(t)
        assert len(blob) == 4 + 1 + 1 + 8 + 16 == 30
        assert blob[:4] == b"CPT1"
        assert blob[4] == 0 and blob[5] == 2
        assert struct.unpack("<2I", blob[6:14]) == (2, 2)
        assert blob[14:] == t.tobytes()

    def test_dtype_codes(self):
        for arr, code in [
            (np.zeros(3, np.float32), 0),
            (np.zeros(3, np.uint8), 1),
            (np.zeros(3, np.uint32), 2),
        ]:
            assert encode_tensor(arr)[4] == code

    def test_rejects_unsupported(self):
        with pytest.raises(ExtractorError):
            encode_tensor(np.zeros(3, np.float64))
        with pytest.raises(ExtractorError):
            encode_tensor(np.float32(1.0))
        with pytest.raises(ExtractorError):
            encode_tensor(np.zeros((2, 0), np.uint8))


class TestEngineInterop:
    """The evaluation engine must read these files back bitwise."""

    def test_round_trip_through_engine_reader(self, tmp_path):
        rng = np.random.default_rng(42)
        for trial in range(100):
            ndim = int(rng.integers(1, 4))
            shape = tuple(int(x) for x in rng.integers(1, 6, size=ndim))
            dtype = [np.float32, np.uint8, np.uint32][trial % 3]
            if dtype is np.float32:
                t = rng.standard_normal(shape).astype(np.float32)
            else:
                t = rng.integers(0, 200, size=shape).astype(dtype)
            path = tmp_path / f"t{trial}.cpt"
            write_tensor(t, path)
            back = engine_read(path)
            assert back.dtype == t.dtype
            assert back.shape == t.shape
            assert back.tobytes() == t.tobytes()

    def test_own_reader_matches(self, tmp_path):
        t = np.random.default_rng(0).standard_normal((3, 5)).astype(np.float32)
        write_tensor(t, tmp_path / "t.cpt")
        np.testing.assert_array_equal(read_tensor(tmp_path / "t.cpt"), t)


class TestAtomicity:
    def test_no_temp_residue(self, tmp_path):
        write_tensor(np.zeros(4, np.uint8), tmp_path / "a.cpt")
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["a.cpt"]

    def test_overwrite_in_place(self, tmp_path):
        path = tmp_path / "a.cpt"
        write_tensor(np.zeros(4, np.uint8), path)
        write_tensor(np.ones(2, np.uint8), path)
        back = read_tensor(path)
        np.testing.assert_array_equal(back, np.ones(2, np.uint8))
