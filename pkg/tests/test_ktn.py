import numpy as np
import pytest

from teunroll import ktn


@pytest.mark.parametrize(
    "dtype", [np.complex64, np.complex128, np.float32, np.float64]
)
def test_round_trip(tmp_path, dtype):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((3, 4, 5))
    if np.issubdtype(dtype, np.complexfloating):
        arr = arr + 1j * rng.standard_normal((3, 4, 5))
    arr = arr.astype(dtype)
    path = tmp_path / "t.ktn"
    ktn.write_ktn(path, arr)
    back = ktn.read_ktn(path)
    assert back.dtype == np.dtype(dtype).newbyteorder("<")
    np.testing.assert_array_equal(back, arr)


def test_scalar_and_header(tmp_path):
    path = tmp_path / "s.ktn"
    ktn.write_ktn(path, np.float64(3.5))
    dtype, dims = ktn.read_header(path)
    assert dims == ()
    assert float(ktn.read_ktn(path)) == 3.5

    ktn.write_ktn(tmp_path / "m.ktn", np.ones((2, 3), dtype=np.float32))
    dtype, dims = ktn.read_header(tmp_path / "m.ktn")
    assert dtype == np.dtype("<f4")
    assert dims == (2, 3)


def test_magic_and_dtype_errors(tmp_path):
    bad = tmp_path / "bad.ktn"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ktn.KtnError):
        ktn.read_ktn(bad)
    with pytest.raises(ktn.KtnError):
        ktn.write_ktn(tmp_path / "i.ktn", np.arange(3))  # int64 unsupported


def test_mask_payload_is_zeros_and_ones(tmp_path):
    mask = (np.arange(12).reshape(3, 4) % 2 == 0).astype(np.float32)
    path = tmp_path / "mask.ktn"
    ktn.write_ktn(path, mask)
    back = ktn.read_ktn(path)
    assert set(np.unique(back)) <= {0.0, 1.0}


def test_deterministic_bytes(tmp_path):
    arr = np.linspace(0, 1, 24).reshape(2, 3, 4)
    a, b = tmp_path / "a.ktn", tmp_path / "b.ktn"
    ktn.write_ktn(a, arr)
    ktn.write_ktn(b, arr)
    assert a.read_bytes() == b.read_bytes()
