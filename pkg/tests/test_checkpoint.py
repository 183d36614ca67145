import numpy as np
import pytest

from evflow.checkpoint import (CheckpointError, ParamStore, load_checkpoint,
                               save_checkpoint)


def test_roundtrip_float32(tmp_path, rng):
    arrays = {"a.w": rng.standard_normal((3, 4)).astype(np.float32),
              "b.b": rng.standard_normal(7).astype(np.float32)}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, arrays)
    back = load_checkpoint(path)
    assert set(back) == set(arrays)
    for name in arrays:
        assert np.array_equal(back[name], arrays[name])


def test_manifest_is_text_with_offsets(tmp_path, rng):
    arrays = {"w": rng.standard_normal((2, 2)).astype(np.float32),
              "b": rng.standard_normal(3).astype(np.float32)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, arrays)
    lines = (tmp_path / "m.ckpt.manifest").read_text().splitlines()
    assert lines[0].split("\t") == ["w", "2x2", "0"]
    assert lines[1].split("\t") == ["b", "3", "16"]


def test_load_validates_shapes(tmp_path, rng):
    store = ParamStore(seed=0)
    store.conv("layer", 4, 2, 3)
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, store.state_arrays())

    other = ParamStore(seed=0)
    other.conv("layer", 4, 3, 3)  # different input channels
    with pytest.raises(CheckpointError):
        other.load_arrays(load_checkpoint(path))


def test_load_rejects_name_mismatch(tmp_path):
    store = ParamStore(seed=0)
    store.conv("layer", 2, 2, 1)
    path = tmp_path / "n.ckpt"
    save_checkpoint(path, store.state_arrays())

    other = ParamStore(seed=0)
    other.conv("other_layer", 2, 2, 1)
    with pytest.raises(CheckpointError):
        other.load_arrays(load_checkpoint(path))


def test_seeded_init_reproducible():
    a = ParamStore(seed=5)
    a.conv("c", 3, 2, 3)
    b = ParamStore(seed=5)
    b.conv("c", 3, 2, 3)
    assert a.manifest() == b.manifest()
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
