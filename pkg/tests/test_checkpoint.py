"""Checkpoint container tests: exact roundtrips and byte-level stability."""

import numpy as np
import pytest
import torch

from robustspeech.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from robustspeech.errors import DataError


def _sample_state(seed=0):
    rng = np.random.default_rng(seed)
    tensors = {
        "model/weight": torch.from_numpy(rng.standard_normal((3, 5))).float(),
        "model/bias": torch.from_numpy(rng.standard_normal(5)),
        "adam/model.weight/step": torch.tensor(42.0, dtype=torch.float64),
        "counts": torch.arange(6, dtype=torch.int64).reshape(2, 3),
    }
    config = {"model": {"dim": 5}, "train": {"steps": 10}}
    extra = {"step": 10, "mode": "pretrain"}
    return config, tensors, extra


def test_roundtrip_preserves_values_shapes_dtypes(tmp_path):
    config, tensors, extra = _sample_state()
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, config, tensors, extra)
    loaded = load_checkpoint(path)
    assert loaded.config == config
    assert loaded.extra == extra
    assert set(loaded.tensors) == set(tensors)
    for name, tensor in tensors.items():
        got = loaded.tensors[name]
        assert got.dtype == tensor.dtype, name
        assert got.shape == tensor.shape, name
        assert torch.equal(got, tensor), name


def test_save_load_save_is_byte_identical(tmp_path):
    config, tensors, extra = _sample_state(1)
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    save_checkpoint(first, config, tensors, extra)
    loaded = load_checkpoint(first)
    save_checkpoint(second, loaded.config, loaded.tensors, loaded.extra)
    assert first.read_bytes() == second.read_bytes()


def test_file_begins_with_magic_and_sorted_names(tmp_path):
    config, tensors, extra = _sample_state(2)
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, config, tensors, extra)
    blob = path.read_bytes()
    assert blob.startswith(MAGIC)
    loaded = load_checkpoint(path)
    assert list(loaded.tensors) == sorted(tensors)


def test_zero_dimensional_and_empty_tensors(tmp_path):
    tensors = {"scalar": torch.tensor(3.5), "empty": torch.zeros(0, 4)}
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, {}, tensors, {})
    loaded = load_checkpoint(path)
    assert loaded.tensors["scalar"].item() == 3.5
    assert loaded.tensors["scalar"].shape == ()
    assert loaded.tensors["empty"].shape == (0, 4)


def test_missing_file_raises_data_error(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_corrupt_magic_raises_data_error(tmp_path):
    config, tensors, extra = _sample_state(3)
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, config, tensors, extra)
    blob = bytearray(path.read_bytes())
    blob[:8] = b"NOTMAGIC"
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(DataError):
        save_checkpoint(tmp_path / "bad.ckpt", {},
                        {"x": torch.zeros(2, dtype=torch.int8)}, {})


def test_noncontiguous_tensor_saved_correctly(tmp_path):
    base = torch.from_numpy(np.arange(12, dtype=np.float32).reshape(3, 4))
    view = base.t()  # stride-swapped, not contiguous
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, {}, {"x": view}, {})
    assert torch.equal(load_checkpoint(path).tensors["x"], view)
