import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abet.errors import DomainError, FormatError
from abet.fdump import MAGIC, FeatureDump, read_fdump, write_fdump

finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


def roundtrip(dump, tmp_path):
    path = tmp_path / "t.fdump"
    write_fdump(dump, path)
    return read_fdump(path)


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    dump = FeatureDump(
        arrays={
            "features": rng.standard_normal((7, 3)),
            "scores": rng.standard_normal(7),
            "cube": rng.standard_normal((2, 3, 4)),
        },
        labels=np.array([0, 1, 2, 0, 1, 2, 9], dtype=np.uint32),
    )
    back = roundtrip(dump, tmp_path)
    assert list(back.arrays) == ["features", "scores", "cube"]
    for name in dump.arrays:
        assert back.arrays[name].shape == dump.arrays[name].shape
        assert np.array_equal(
            back.arrays[name].view(np.uint64), dump.arrays[name].view(np.uint64)
        )
    assert np.array_equal(back.labels, dump.labels)


def test_signed_zero_survives(tmp_path):
    dump = FeatureDump(arrays={"z": np.array([0.0, -0.0, 1.0])})
    back = roundtrip(dump, tmp_path)
    assert np.signbit(back.arrays["z"][1])
    assert not np.signbit(back.arrays["z"][0])


@given(st.lists(finite_floats, min_size=0, max_size=40))
@settings(max_examples=100, deadline=None)
def test_roundtrip_arbitrary_doubles(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("fd") / "x.fdump"
    arr = np.array(values, dtype=np.float64)
    write_fdump(FeatureDump(arrays={"v": arr}), path)
    back = read_fdump(path).arrays["v"]
    assert np.array_equal(back.view(np.uint64), arr.view(np.uint64))


def test_empty_array_list(tmp_path):
    back = roundtrip(FeatureDump(), tmp_path)
    assert back.arrays == {} and back.labels is None


def test_no_labels_flag(tmp_path):
    back = roundtrip(FeatureDump(arrays={"a": np.zeros(2)}), tmp_path)
    assert back.labels is None


def test_bad_magic(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        read_fdump(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.fdump"
    write_fdump(FeatureDump(arrays={"v": np.arange(8.0)}), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-9])  # chop into the payload
    with pytest.raises(FormatError, match="truncated|trailing"):
        read_fdump(path)


def test_corrupted_length_field(tmp_path):
    path = tmp_path / "t.fdump"
    write_fdump(FeatureDump(arrays={"v": np.arange(4.0)}), path)
    blob = bytearray(path.read_bytes())
    # dims start after magic(8) + count(4) + name_len(2) + name(1) + rank(4)
    offset = 8 + 4 + 2 + 1 + 4
    blob[offset:offset + 8] = struct.pack("<Q", 4000)
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="truncated"):
        read_fdump(path)


def test_duplicate_names_rejected_on_read(tmp_path):
    path = tmp_path / "dup.fdump"
    one = struct.pack("<H", 1) + b"a" + struct.pack("<I", 1) + struct.pack("<Q", 1) + struct.pack("<d", 1.0)
    path.write_bytes(MAGIC + struct.pack("<I", 2) + one + one + b"\x00")
    with pytest.raises(FormatError, match="duplicate"):
        read_fdump(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "t.fdump"
    write_fdump(FeatureDump(arrays={"v": np.arange(2.0)}), path)
    path.write_bytes(path.read_bytes() + b"\x01")
    with pytest.raises(FormatError, match="trailing"):
        read_fdump(path)


def test_non_finite_rejected_on_write():
    with pytest.raises(DomainError):
        FeatureDump(arrays={"v": np.array([1.0, np.inf])})


def test_fuzzed_mutations_never_crash(tmp_path):
    rng = np.random.default_rng(42)
    path = tmp_path / "t.fdump"
    write_fdump(
        FeatureDump(arrays={"a": rng.standard_normal((3, 2))}, labels=np.array([1, 2, 3])),
        path,
    )
    pristine = path.read_bytes()
    mutated = tmp_path / "m.fdump"
    for _ in range(300):
        blob = bytearray(pristine)
        for _ in range(rng.integers(1, 4)):
            blob[rng.integers(len(blob))] = rng.integers(256)
        mutated.write_bytes(bytes(blob))
        try:
            out = read_fdump(mutated)
        except FormatError:
            continue
        for arr in out.arrays.values():
            assert np.all(np.isfinite(arr))
