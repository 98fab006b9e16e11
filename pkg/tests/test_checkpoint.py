import numpy as np
import pytest

from lreid.checkpoint import load_checkpoint, save_checkpoint


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "w32": rng.normal(size=(3, 5)).astype(np.float32),
        "w64": rng.normal(size=(7,)).astype(np.float64),
        "counts": np.array([3, 1, 4], dtype=np.int64),
        "scalar": np.float64(2.5) * np.ones((), dtype=np.float64),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors, config_text="seed = 7\n")
    config, loaded = load_checkpoint(path)
    assert config == "seed = 7\n"
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].dtype == tensors[name].dtype
        assert loaded[name].shape == tensors[name].shape
        assert np.array_equal(
            loaded[name].view(np.uint8) if loaded[name].ndim else loaded[name],
            tensors[name].view(np.uint8) if tensors[name].ndim else tensors[name],
        )


def test_double_round_trip_identical_bytes(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
    p1 = tmp_path / "one.ckpt"
    p2 = tmp_path / "two.ckpt"
    save_checkpoint(p1, tensors, config_text="x = 1")
    _, loaded = load_checkpoint(p1)
    save_checkpoint(p2, loaded, config_text="x = 1")
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_non_checkpoint_file(tmp_path):
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(bogus)


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(ValueError, match="dtype"):
        save_checkpoint(tmp_path / "bad.ckpt", {"c": np.zeros(2, dtype=np.complex128)})
