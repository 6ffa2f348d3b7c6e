"""Sectioned binary tensor container round-trips."""

import numpy as np
import pytest

from tagmixer.errors import EmbeddingFormatError
from tagmixer.serialize import read_tensors, write_tensors


def test_round_trip_various_ranks(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "scalar": np.array(3.5, dtype=np.float32),
        "vec": rng.normal(size=7).astype(np.float32),
        "mat": rng.normal(size=(4, 5)).astype(np.float32),
        "cube.with.dots": rng.normal(size=(2, 3, 4)).astype(np.float32),
    }
    path = tmp_path / "t.bin"
    write_tensors(path, tensors)
    back = read_tensors(path)
    assert list(back) == list(tensors)
    for name in tensors:
        assert back[name].shape == tensors[name].shape
        assert back[name].tobytes() == tensors[name].tobytes()


def test_write_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {"a": rng.normal(size=(3, 3)).astype(np.float32),
               "b": rng.normal(size=2).astype(np.float32)}
    write_tensors(tmp_path / "x.bin", tensors)
    write_tensors(tmp_path / "y.bin", tensors)
    assert (tmp_path / "x.bin").read_bytes() == (tmp_path / "y.bin").read_bytes()


def test_float64_input_is_stored_as_f32(tmp_path):
    tensors = {"w": np.array([1.0, 2.0], dtype=np.float64)}
    write_tensors(tmp_path / "t.bin", tensors)
    back = read_tensors(tmp_path / "t.bin")
    assert back["w"].dtype == np.float32


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "t.bin"
    write_tensors(path, {"w": np.ones((4, 4), np.float32)})
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(EmbeddingFormatError, match="truncated"):
        read_tensors(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(EmbeddingFormatError):
        read_tensors(tmp_path / "absent.bin")
