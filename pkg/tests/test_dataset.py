import os

import numpy as np
import pytest

from dzsr.data import NoiseSpec
from dzsr.dataset import (generate_dataset, list_sample_dirs, read_dataset,
                          read_meta, read_sample, read_warp, write_sample)
from dzsr.errors import DataError


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("ds"))
    generate_dataset(root, 3, 2, 2.0, seed=42, size=(64, 64))
    return root


def test_layout(tiny_dataset):
    dirs = list_sample_dirs(tiny_dataset)
    assert len(dirs) == 3
    for d in dirs:
        for name in ("short.png", "tele.png", "warp.bin", "meta.txt"):
            assert os.path.isfile(os.path.join(d, name))


def test_roundtrip_bit_identical(tiny_dataset, tmp_path):
    for d in list_sample_dirs(tiny_dataset):
        s = read_sample(d)
        out = write_sample(str(tmp_path), os.path.basename(d), s)
        s2 = read_sample(out)
        assert np.array_equal(s.short_focus, s2.short_focus)
        assert np.array_equal(s.telephoto, s2.telephoto)
        assert np.array_equal(s.true_warp, s2.true_warp)
        assert np.array_equal(s.lr_clean, s2.lr_clean)
        assert s.gen_seed == s2.gen_seed
        assert s.ratio == s2.ratio


def test_meta_keys(tiny_dataset):
    meta = read_meta(os.path.join(list_sample_dirs(tiny_dataset)[0], "meta.txt"))
    for key in ("seed", "ratio", "sigma", "quality", "order"):
        assert key in meta


def test_warp_header(tiny_dataset):
    path = os.path.join(list_sample_dirs(tiny_dataset)[0], "warp.bin")
    with open(path, "rb") as f:
        head = f.read(8)
    assert head[:4] == b"DZWP"
    assert int.from_bytes(head[4:6], "little") == 64
    field = read_warp(path)
    assert field.shape == (64, 64, 2)
    assert field.dtype == np.float32


def test_warp_bad_magic(tmp_path):
    p = str(tmp_path / "bad.bin")
    with open(p, "wb") as f:
        f.write(b"XXXX\x00\x00\x00\x00")
    with pytest.raises(DataError):
        read_warp(p)


def test_generation_pure_function_of_seed(tmp_path, tiny_dataset):
    root2 = str(tmp_path / "again")
    generate_dataset(root2, 3, 2, 2.0, seed=42, size=(64, 64))
    for d1, d2 in zip(list_sample_dirs(tiny_dataset), list_sample_dirs(root2)):
        a, b = read_sample(d1), read_sample(d2)
        assert np.array_equal(a.short_focus, b.short_focus)
        assert np.array_equal(a.telephoto, b.telephoto)
        assert np.array_equal(a.true_warp, b.true_warp)


def test_empty_dir_rejected(tmp_path):
    with pytest.raises(DataError):
        read_dataset(str(tmp_path / "missing"))
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DataError):
        read_dataset(str(empty))


def test_noise_disabled_clean_equals_short(tmp_path):
    root = str(tmp_path / "clean")
    generate_dataset(root, 1, 2, 0.0, seed=7, size=(64, 64),
                     noise=NoiseSpec.disabled(), blur_sigma_range=(0.0, 0.0))
    s = read_sample(list_sample_dirs(root)[0])
    assert np.array_equal(s.short_focus, s.lr_clean)
    assert not s.residual.any()
