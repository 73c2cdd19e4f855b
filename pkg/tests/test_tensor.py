import numpy as np
import pytest

from bimamba.errors import DomainError, ShapeError
from bimamba.tensor import as_tensor, dump_jsonl, load_jsonl, read_tensor, write_tensor


def test_as_tensor_is_contiguous_f64():
    t = as_tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float64
    assert t.flags["C_CONTIGUOUS"]
    assert t.shape == (2, 2)


def test_as_tensor_reshape_and_mismatch():
    t = as_tensor([1.0, 2.0, 3.0, 4.0], shape=(2, 2))
    assert t.shape == (2, 2)
    with pytest.raises(ShapeError):
        as_tensor([1.0, 2.0, 3.0], shape=(2, 2))


def test_checked_mode_rejects_nonfinite():
    with pytest.raises(DomainError):
        as_tensor([1.0, np.nan])
    with pytest.raises(DomainError):
        as_tensor([np.inf])
    t = as_tensor([1.0, np.nan], checked=False)
    assert np.isnan(t[1])


@pytest.mark.parametrize("shape", [(), (5,), (3, 4), (2, 3, 4, 5)])
def test_binary_round_trip(tmp_path, shape):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal(shape)
    path = tmp_path / "t.bin"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_binary_header_layout(tmp_path):
    path = tmp_path / "t.bin"
    write_tensor(path, np.arange(6.0).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == (2).to_bytes(4, "little")
    assert raw[4:8] == (2).to_bytes(4, "little")
    assert raw[8:12] == (3).to_bytes(4, "little")
    assert len(raw) == 12 + 6 * 8


def test_binary_truncation_detected(tmp_path):
    path = tmp_path / "t.bin"
    write_tensor(path, np.arange(6.0).reshape(2, 3))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ShapeError):
        read_tensor(path)


def test_jsonl_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = [rng.standard_normal((2, 3)), rng.standard_normal((4,))]
    path = tmp_path / "dump.jsonl"
    dump_jsonl(path, tensors)
    back = load_jsonl(path)
    assert len(back) == 2
    for orig, rec in zip(tensors, back):
        assert rec.shape == orig.shape
        assert np.array_equal(rec, orig)
