"""Tensor archive round-trips and failure modes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftrans.archive import load_archive, save_archive


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a": rng.standard_normal((3, 4)).astype(np.float32),
        "b/nested.name": rng.standard_normal(7),
        "scalar_shaped": np.array(2.5, dtype=np.float64),
    }
    p = tmp_path / "t.fsta"
    save_archive(p, tensors)
    back = load_archive(p)
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype
        assert back[k].shape == tensors[k].shape
        np.testing.assert_array_equal(back[k], tensors[k])


def test_empty_archive(tmp_path):
    p = tmp_path / "e.fsta"
    save_archive(p, {})
    assert load_archive(p) == {}


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.fsta"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_archive(p)


def test_truncated_payload_rejected(tmp_path):
    p = tmp_path / "t.fsta"
    save_archive(p, {"x": np.ones(10, dtype=np.float32)})
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_archive(p)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(ValueError, match="dtype"):
        save_archive(tmp_path / "i.fsta", {"x": np.arange(3)})


def test_non_contiguous_input_round_trips(tmp_path):
    base = np.arange(24, dtype=np.float32).reshape(4, 6)
    view = base[:, ::2]
    p = tmp_path / "v.fsta"
    save_archive(p, {"v": view})
    np.testing.assert_array_equal(load_archive(p)["v"], view)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 3))
def test_random_round_trips(tmp_path_factory, seed, rank):
    rng = np.random.default_rng(seed)
    shape = tuple(int(rng.integers(1, 5)) for _ in range(rank))
    arr = rng.standard_normal(shape).astype(rng.choice([np.float32, np.float64]))
    p = tmp_path_factory.mktemp("fsta") / "r.fsta"
    save_archive(p, {"r": arr})
    back = load_archive(p)["r"]
    assert back.dtype == arr.dtype and back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)
