import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from dgspnet.data import (DatasetManifest, SamplePair, augment, load_dataset, read_png,
                          stack_batch, synth_generate, write_png)
from dgspnet.errors import DataError, IngestionError
from dgspnet.metrics import connected_components


def _tree_digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    synth_generate(root, 8, 64, 7)
    return root


def test_synth_contract(synth):
    train, test = load_dataset(synth, "train"), load_dataset(synth, "test")
    assert (len(train), len(test)) == (6, 2)
    target_px = 0
    for s in train + test:
        assert s.image.shape == s.mask.shape == (64, 64)
        assert s.mask.any()
        assert set(np.unique(s.mask)) <= {0, 1}
        assert 0 <= s.image.min() and s.image.max() <= 1
        assert all(c.area <= 81 for c in connected_components(s.mask)[1])
        target_px += int(s.mask.sum())
    assert target_px / (8 * 64 * 64) < 0.01


def test_synth_byte_deterministic(tmp_path, synth):
    synth_generate(tmp_path / "again", 8, 64, 7)
    assert _tree_digest(tmp_path / "again") == _tree_digest(synth)
    synth_generate(tmp_path / "other", 8, 64, 8)
    assert _tree_digest(tmp_path / "other") != _tree_digest(synth)


def test_synth_rejects_bad_size(tmp_path):
    with pytest.raises(DataError):
        synth_generate(tmp_path, 2, 60, 0)


def test_manifest_disjoint_and_exhaustive(synth):
    m = DatasetManifest.read(synth)
    ids = {p.stem for p in (synth / "images").glob("*.png")}
    assert set(m.splits["train"]).isdisjoint(m.splits["test"])
    assert set(m.splits["train"]) | set(m.splits["test"]) == ids


def test_manifest_overlap_rejected(tmp_path):
    DatasetManifest(tmp_path, {"train": ["a", "b"], "test": ["b"]}).write()
    with pytest.raises(DataError):
        DatasetManifest.read(tmp_path)


def test_load_ten_pairs(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    ids = [f"s{i}" for i in range(10)]
    for i in ids:
        write_png(tmp_path / "images" / f"{i}.png", np.full((20, 24), 10, np.uint8))
        write_png(tmp_path / "masks" / f"{i}.png", np.zeros((20, 24), np.uint8))
    DatasetManifest(tmp_path, {"train": ids, "test": []}).write()
    pairs = load_dataset(tmp_path, "train")
    assert len(pairs) == 10
    assert all(p.image.shape == p.mask.shape == (20, 24) for p in pairs)


def test_missing_pair_names_id(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    write_png(tmp_path / "images" / "x.png", np.zeros((4, 4), np.uint8))
    DatasetManifest(tmp_path, {"train": ["x"], "test": []}).write()
    with pytest.raises(IngestionError, match="'x'"):
        load_dataset(tmp_path, "train")


def test_16bit_scaling(tmp_path):
    arr = np.array([[0, 32768], [65535, 1000]], dtype=np.uint16)
    Image.fromarray(arr).save(tmp_path / "a.png")
    img = read_png(tmp_path / "a.png")
    assert img.max() == 1.0 and img.min() == 0.0


def test_corrupt_png_names_file(tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"\x89PNG\r\n\x1a\nthis is not a png")
    with pytest.raises(IngestionError, match="broken.png"):
        read_png(bad)


def test_crop_shapes():
    rng = np.random.default_rng(0)
    big = SamplePair(np.random.rand(512, 512).astype(np.float32), np.zeros((512, 512), np.uint8), "b")
    assert augment(big, 256, rng).image.shape == (256, 256)
    small = SamplePair(np.random.rand(200, 200).astype(np.float32), np.zeros((200, 200), np.uint8), "s")
    out = augment(small, 256, rng)
    assert out.image.shape == out.mask.shape == (256, 256)
    tiny = SamplePair(np.random.rand(40, 50).astype(np.float32), np.zeros((40, 50), np.uint8), "t")
    assert augment(tiny, 256, rng).image.shape == (256, 256)


def test_crop_deterministic():
    s = SamplePair(np.random.rand(100, 90).astype(np.float32), np.zeros((100, 90), np.uint8), "d")
    a = augment(s, 64, np.random.default_rng(3))
    b = augment(s, 64, np.random.default_rng(3))
    assert np.array_equal(a.image, b.image)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 90), st.integers(8, 90), st.integers(0, 10 ** 6))
def test_crop_lockstep(h, w, seed):
    rng = np.random.default_rng(seed)
    mask = (rng.random((h, w)) > 0.5).astype(np.uint8)
    out = augment(SamplePair(mask.astype(np.float32), mask, "m"), 64, np.random.default_rng(seed))
    assert np.array_equal(out.image, out.mask.astype(np.float32))


def test_stack_batch_shapes(synth):
    images, masks = stack_batch(load_dataset(synth, "train")[:3])
    assert images.shape == masks.shape == (3, 1, 64, 64)
    assert images.dtype == np.float32
