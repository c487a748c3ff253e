"""SVOL format: bit-exact round trips and malformed-file rejection."""

import json
import struct

import numpy as np
import pytest

from fuselab import Dim3, GridKind, VolumeGrid, read_svol, write_svol
from fuselab.errors import (
    BadMagicError,
    HeaderError,
    TrailingDataError,
    TruncatedPayloadError,
    ValueRangeError,
)

MAGIC = b"SVOL1\x00"


def _random_grid(rng):
    dims = Dim3(*(int(rng.integers(1, 7)) for _ in range(3)))
    kinds = list(GridKind)
    kind = kinds[rng.integers(len(kinds))]
    data = rng.random(dims.n)
    if kind is GridKind.BINARY:
        data = (data > 0.5).astype(float)
    elif kind is GridKind.INTENSITY:
        data = rng.normal(0.0, 100.0, dims.n)
    return VolumeGrid(dims, data, kind)


def _raw_file(tmp_path, header: dict, payload: bytes, magic=MAGIC):
    blob = json.dumps(header).encode()
    path = tmp_path / "crafted.svol"
    path.write_bytes(magic + struct.pack("<I", len(blob)) + blob + payload)
    return path


class TestRoundTrip:
    def test_soft_roundtrip_identity(self, tmp_path):
        rng = np.random.default_rng(1)
        g = VolumeGrid(Dim3(8, 8, 8), rng.random(512), GridKind.SOFT)
        path = tmp_path / "g.svol"
        write_svol(g, path)
        assert read_svol(path) == g

    def test_roundtrip_property(self, tmp_path):
        rng = np.random.default_rng(7)
        for i in range(80):
            g = _random_grid(rng)
            path = tmp_path / f"g{i}.svol"
            write_svol(g, path)
            back = read_svol(path)
            assert back == g
            assert back.data.tobytes() == g.data.tobytes()

    def test_write_deterministic(self, tmp_path):
        g = _random_grid(np.random.default_rng(2))
        p1, p2 = tmp_path / "a.svol", tmp_path / "b.svol"
        write_svol(g, p1)
        write_svol(g, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_single_voxel_payload_is_8_bytes(self, tmp_path):
        g = VolumeGrid(Dim3(1, 1, 1), [1.0], GridKind.SOFT)
        path = tmp_path / "one.svol"
        write_svol(g, path)
        raw = path.read_bytes()
        (hlen,) = struct.unpack_from("<I", raw, 6)
        assert len(raw) - 10 - hlen == 8
        assert raw[:6] == MAGIC


class TestMalformedFiles:
    def test_bad_magic(self, tmp_path):
        path = _raw_file(tmp_path, {"dims": [1, 1, 1], "kind": "soft"},
                         struct.pack("<d", 0.5), magic=b"XXXX\x00\x00")
        with pytest.raises(BadMagicError):
            read_svol(path)

    def test_header_not_json(self, tmp_path):
        path = tmp_path / "bad.svol"
        path.write_bytes(MAGIC + struct.pack("<I", 4) + b"{{{{" + b"")
        with pytest.raises(HeaderError):
            read_svol(path)

    def test_header_missing_key(self, tmp_path):
        path = _raw_file(tmp_path, {"dims": [1, 1, 1]}, struct.pack("<d", 0.5))
        with pytest.raises(HeaderError):
            read_svol(path)

    def test_header_bad_dims(self, tmp_path):
        for dims in ([0, 1, 1], [1, 1], [1, 1, 1.5], "xyz"):
            path = _raw_file(tmp_path, {"dims": dims, "kind": "soft"},
                             struct.pack("<d", 0.5))
            with pytest.raises(HeaderError):
                read_svol(path)

    def test_header_bad_kind(self, tmp_path):
        path = _raw_file(tmp_path, {"dims": [1, 1, 1], "kind": "labels"},
                         struct.pack("<d", 0.5))
        with pytest.raises(HeaderError):
            read_svol(path)

    def test_header_overruns_file(self, tmp_path):
        path = tmp_path / "short.svol"
        path.write_bytes(MAGIC + struct.pack("<I", 500) + b"{}")
        with pytest.raises(HeaderError):
            read_svol(path)

    def test_truncated_payload(self, tmp_path):
        path = _raw_file(tmp_path, {"dims": [2, 1, 1], "kind": "soft"},
                         struct.pack("<d", 0.5))
        with pytest.raises(TruncatedPayloadError):
            read_svol(path)

    def test_trailing_bytes(self, tmp_path):
        path = _raw_file(tmp_path, {"dims": [1, 1, 1], "kind": "soft"},
                         struct.pack("<dd", 0.5, 0.5))
        with pytest.raises(TrailingDataError):
            read_svol(path)

    def test_binary_file_with_half_value(self, tmp_path):
        path = _raw_file(tmp_path, {"dims": [1, 1, 1], "kind": "binary"},
                         struct.pack("<d", 0.5))
        with pytest.raises(ValueRangeError):
            read_svol(path)


class TestWriteValidation:
    def test_nan_intensity_rejected_before_any_bytes(self, tmp_path):
        g = VolumeGrid(Dim3(2, 1, 1), [1.0, 2.0], GridKind.INTENSITY)
        object.__setattr__(g, "data", np.array([np.nan, 2.0]))
        path = tmp_path / "never.svol"
        with pytest.raises(ValueRangeError):
            write_svol(g, path)
        assert not path.exists()
