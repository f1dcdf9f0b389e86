import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from adapt.tensor_io import MAGIC, TensorFormatError, from_bytes, load_tensor, save_tensor, to_bytes


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip(arr):
    out = from_bytes(to_bytes(arr))
    assert out.shape == arr.shape
    np.testing.assert_array_equal(out.astype(np.float32), arr)


def test_layout_is_little_endian_header_then_payload():
    buf = to_bytes(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert buf[:4] == MAGIC
    assert np.frombuffer(buf[4:20], "<u4").tolist() == [1, 2, 1, 3]
    assert np.frombuffer(buf[20:], "<f4").tolist() == [1.0, 2.0, 3.0]


def test_truncated_file_names_file_and_expected_bytes(tmp_path):
    path = tmp_path / "t.adpt"
    save_tensor(path, np.zeros((2, 3)))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TensorFormatError, match=r"t\.adpt.*44 bytes"):
        load_tensor(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.adpt"
    path.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(TensorFormatError, match="x.adpt"):
        load_tensor(path)
