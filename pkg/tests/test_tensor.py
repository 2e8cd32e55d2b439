import numpy as np
import pytest

from blockconv import FormatError, Layout, Tensor4D, load_sbt4, save_sbt4, transpose_layout
from blockconv.errors import ShapeMismatchError


def test_transpose_roundtrip_is_identity():
    rng = np.random.default_rng(0)
    t = Tensor4D(rng.standard_normal((2, 5, 7, 3)).astype(np.float32))
    back = transpose_layout(transpose_layout(t))
    assert back.layout is t.layout
    assert np.array_equal(back.data, t.data)


def test_single_element_agrees_across_layouts():
    rng = np.random.default_rng(1)
    t = Tensor4D(rng.standard_normal((2, 4, 5, 6)).astype(np.float32))
    u = transpose_layout(t)
    assert u.layout is Layout.CHANNELS_FIRST
    assert t.at(0, 1, 2, 3) == u.at(0, 1, 2, 3)


def test_all_elements_agree_after_conversion():
    rng = np.random.default_rng(2)
    t = Tensor4D(rng.standard_normal((2, 3, 4, 5)).astype(np.float64))
    u = transpose_layout(t)
    n, h, w, c = t.dims
    assert u.dims == t.dims
    for i in range(n):
        for y in range(h):
            for x in range(w):
                for k in range(c):
                    assert t.at(i, y, x, k) == u.at(i, y, x, k)


def test_requires_four_dims_and_float_dtype():
    with pytest.raises(ShapeMismatchError):
        Tensor4D(np.zeros((2, 3, 4)))
    with pytest.raises(ShapeMismatchError):
        Tensor4D(np.zeros((1, 2, 3, 4), np.int32))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("layout", [Layout.CHANNELS_LAST, Layout.CHANNELS_FIRST])
def test_sbt4_roundtrip(tmp_path, dtype, layout):
    rng = np.random.default_rng(3)
    t = Tensor4D.from_nhwc(rng.standard_normal((2, 5, 6, 3)).astype(dtype), layout)
    path = tmp_path / "t.sbt4"
    save_sbt4(path, t)
    back = load_sbt4(path)
    assert back.layout is layout
    assert back.dtype == dtype
    assert np.array_equal(back.data, t.data)


def test_sbt4_rejects_bad_magic_with_offset(tmp_path):
    path = tmp_path / "bad.sbt4"
    t = Tensor4D(np.zeros((1, 1, 1, 1), np.float32))
    save_sbt4(path, t)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as e:
        load_sbt4(path)
    assert e.value.offset == 0


def test_sbt4_rejects_truncated_payload(tmp_path):
    path = tmp_path / "trunc.sbt4"
    save_sbt4(path, Tensor4D(np.ones((1, 2, 2, 1), np.float32)))
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_sbt4(path)


def test_sbt4_rejects_unknown_version(tmp_path):
    path = tmp_path / "ver.sbt4"
    save_sbt4(path, Tensor4D(np.ones((1, 1, 1, 1), np.float32)))
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as e:
        load_sbt4(path)
    assert e.value.offset == 4
