import struct

import numpy as np
import pytest

from conftest import random_archive
from ptqkit.tensor_store import (
    ALIGNMENT,
    Archive,
    ArchiveError,
    BadMagicError,
    DuplicateNameError,
    ExtentError,
    TensorNotFoundError,
    TensorRecord,
    TruncatedError,
    UnsupportedVersionError,
    get_tensor,
    read_archive,
    write_archive,
)


def one_tensor():
    return Archive((TensorRecord("w", np.array([[1, 2], [3, 4]], dtype=np.float32)),), "")


def test_header_layout():
    buf = write_archive(one_tensor())
    assert buf[:4] == b"PTQT"
    assert struct.unpack_from("<III", buf, 4) == (1, 1, 0)
    # name_len, name, dtype, ndim, dims, offset, byte length
    pos = 16
    assert struct.unpack_from("<H", buf, pos) == (1,)
    assert buf[pos + 2 : pos + 3] == b"w"
    assert struct.unpack_from("<BB2QQQ", buf, pos + 3) == (0, 2, 2, 2, 0, 16)
    data_start = len(buf) - 16
    assert data_start % ALIGNMENT == 0
    assert np.frombuffer(buf[data_start:], "<f4").tolist() == [1, 2, 3, 4]


def test_roundtrip_one_tensor():
    a = one_tensor()
    b = read_archive(write_archive(a))
    assert b == a
    assert get_tensor(b, "w") == a.records[0]


def test_empty_archive():
    buf = write_archive(Archive())
    assert len(buf) % ALIGNMENT == 0
    b = read_archive(buf)
    assert len(b) == 0 and b.metadata == ""


@pytest.mark.parametrize("seed", range(100))
def test_roundtrip_random(seed):
    a = random_archive(seed)
    buf = write_archive(a)
    b = read_archive(buf)
    assert b == a
    assert write_archive(b) == buf
    assert write_archive(a) == buf


def test_float_bits_preserved():
    bits = np.array([0x7FC00001, 0x00000001, 0x80000000, 0x7F800000], dtype=np.uint32)
    a = Archive((TensorRecord("f", bits.view(np.float32)),))
    b = read_archive(write_archive(a))
    assert b["f"].view(np.uint32).tolist() == bits.tolist()


def test_scalar_tensor():
    a = Archive((TensorRecord("s", np.float32(2.5)),))
    b = read_archive(write_archive(a))
    assert b["s"].shape == () and float(b["s"]) == 2.5


def test_get_missing():
    with pytest.raises(TensorNotFoundError):
        get_tensor(one_tensor(), "absent")


def test_get_many_random():
    rng = np.random.default_rng(7)
    arrays = {f"w{i}": rng.standard_normal(int(rng.integers(1, 20))).astype(np.float32) for i in range(1000)}
    b = read_archive(write_archive(Archive.from_arrays(arrays)))
    for k, v in arrays.items():
        assert get_tensor(b, k).data.tobytes() == v.tobytes()


def test_duplicate_names():
    r = TensorRecord("w", np.zeros(2, np.float32))
    with pytest.raises(DuplicateNameError):
        Archive((r, r))


def test_unsupported_dtype():
    with pytest.raises(ArchiveError):
        TensorRecord("w", np.zeros(2, np.float64))


def test_bad_magic():
    buf = b"XXXX" + write_archive(one_tensor())[4:]
    with pytest.raises(BadMagicError):
        read_archive(buf)


def test_bad_version():
    buf = bytearray(write_archive(one_tensor()))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersionError):
        read_archive(bytes(buf))


def test_truncated_names_tensor():
    a = Archive.from_arrays({"first": np.ones(4, np.float32), "second": np.ones(8, np.float32)})
    buf = write_archive(a)
    with pytest.raises(TruncatedError, match="second"):
        read_archive(buf[:-5])


def test_truncated_header():
    buf = write_archive(one_tensor())
    with pytest.raises(TruncatedError):
        read_archive(buf[:20])


def test_overlap_detected():
    a = Archive.from_arrays({"a": np.ones(4, np.float32), "b": np.ones(4, np.float32)})
    buf = bytearray(write_archive(a))
    # second record's data_offset: header 16 + rec a (2+1+1+1+8+16) = 45, rec b offset field at 45+2+1+2+8
    off_b = 16 + (2 + 1 + 2 + 8 + 16) + (2 + 1 + 2 + 8)
    assert struct.unpack_from("<Q", buf, off_b) == (16,)
    struct.pack_into("<Q", buf, off_b, 8)
    with pytest.raises(ExtentError, match="overlaps"):
        read_archive(bytes(buf))


def test_byte_len_mismatch():
    buf = bytearray(write_archive(one_tensor()))
    struct.pack_into("<Q", buf, 16 + 2 + 1 + 2 + 16 + 8, 12)
    with pytest.raises(ExtentError):
        read_archive(bytes(buf))


def test_non_utf8_name():
    buf = bytearray(write_archive(one_tensor()))
    buf[18] = 0xFF
    with pytest.raises(ArchiveError, match="UTF-8"):
        read_archive(bytes(buf))


def test_immutable_records():
    rec = TensorRecord("w", np.zeros(3, np.float32))
    with pytest.raises(ValueError):
        rec.data[0] = 1.0
