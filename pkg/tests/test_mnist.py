import struct

import numpy as np
import pytest

from sgdlab import (IdxFormatError, MisuseError, generate_digits,
                    load_mnist_subset, read_idx_images, read_idx_labels,
                    stratified_subset, write_digit_dataset, write_idx_images,
                    write_idx_labels)
from sgdlab.mnist import (IMAGE_MAGIC, LABEL_MAGIC, TEST_LABELS, TRAIN_IMAGES,
                          TRAIN_LABELS)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_idx_round_trip(tmp_path):
    images = rng(1).integers(0, 256, size=(7, 28, 28), dtype=np.uint8)
    labels = rng(2).integers(0, 10, size=7, dtype=np.uint8)
    write_idx_images(tmp_path / "imgs", images)
    write_idx_labels(tmp_path / "labs", labels)
    assert np.array_equal(read_idx_images(tmp_path / "imgs"), images)
    assert np.array_equal(read_idx_labels(tmp_path / "labs"), labels)


def test_idx_accepts_hand_built_headers(tmp_path):
    payload = bytes(range(8))
    (tmp_path / "imgs").write_bytes(struct.pack(">IIII", IMAGE_MAGIC, 2, 2, 2) + payload)
    images = read_idx_images(tmp_path / "imgs")
    assert images.shape == (2, 2, 2)
    assert images.ravel().tolist() == list(range(8))
    (tmp_path / "labs").write_bytes(struct.pack(">II", LABEL_MAGIC, 3) + b"\x01\x02\x03")
    assert read_idx_labels(tmp_path / "labs").tolist() == [1, 2, 3]


def test_idx_rejects_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 28, 28) + b"\0" * 784)
    with pytest.raises(IdxFormatError, match="magic"):
        read_idx_images(tmp_path / "bad")
    (tmp_path / "badlab").write_bytes(struct.pack(">II", IMAGE_MAGIC, 1) + b"\0")
    with pytest.raises(IdxFormatError, match="magic"):
        read_idx_labels(tmp_path / "badlab")


def test_idx_rejects_truncation_and_trailing_bytes(tmp_path):
    good = struct.pack(">IIII", IMAGE_MAGIC, 2, 2, 2) + bytes(8)
    (tmp_path / "short").write_bytes(good[:-3])
    with pytest.raises(IdxFormatError, match="truncated"):
        read_idx_images(tmp_path / "short")
    (tmp_path / "long").write_bytes(good + b"\0")
    with pytest.raises(IdxFormatError, match="trailing"):
        read_idx_images(tmp_path / "long")
    (tmp_path / "header").write_bytes(struct.pack(">I", LABEL_MAGIC) + b"\0\0")
    with pytest.raises(IdxFormatError, match="truncated"):
        read_idx_labels(tmp_path / "header")


def test_load_rejects_count_mismatch(tmp_path):
    d = write_digit_dataset(tmp_path, 40, 20, seed=3)
    labels = read_idx_labels(d / TRAIN_LABELS)
    write_idx_labels(d / TRAIN_LABELS, labels[:-1])
    with pytest.raises(IdxFormatError, match="disagree"):
        load_mnist_subset(d, 10, 10, seed=1)


def test_load_rejects_degenerate_and_oversized_requests(tmp_path):
    d = write_digit_dataset(tmp_path, 40, 20, seed=4)
    with pytest.raises(MisuseError):
        load_mnist_subset(d, 0, 10, seed=1)
    with pytest.raises(MisuseError):
        load_mnist_subset(d, 41, 10, seed=1)
    with pytest.raises(MisuseError):
        load_mnist_subset(d, 10, 21, seed=1)


def test_subset_is_deterministic_and_seed_sensitive(tmp_path):
    d = write_digit_dataset(tmp_path, 100, 50, seed=5)
    a = load_mnist_subset(d, 40, 20, seed=9)
    b = load_mnist_subset(d, 40, 20, seed=9)
    c = load_mnist_subset(d, 40, 20, seed=10)
    assert np.array_equal(a.train_images, b.train_images)
    assert np.array_equal(a.train_labels, b.train_labels)
    assert not np.array_equal(a.train_images, c.train_images)


def test_pixels_scaled_to_unit_interval(tmp_path):
    d = write_digit_dataset(tmp_path, 50, 20, seed=6)
    obj = load_mnist_subset(d, 30, 10, seed=1)
    assert obj.train_images.min() >= 0.0
    assert obj.train_images.max() <= 1.0
    assert obj.train_images.max() > 0.5  # strokes are actually bright


def test_stratified_subset_balances_classes():
    labels = np.repeat(np.arange(10), 30)  # 300 samples, balanced
    idx = stratified_subset(labels, 100, rng(7))
    counts = np.bincount(labels[idx], minlength=10)
    assert counts.tolist() == [10] * 10
    with pytest.raises(MisuseError):
        stratified_subset(labels, 0, rng(8))
    with pytest.raises(MisuseError):
        stratified_subset(labels, 301, rng(8))


def test_stratified_subset_handles_uneven_classes():
    labels = np.array([0] * 50 + [1] * 30 + [2] * 20)
    idx = stratified_subset(labels, 10, rng(9))
    counts = np.bincount(labels[idx], minlength=3)
    assert counts.sum() == 10
    assert counts[0] == 5 and counts[1] == 3 and counts[2] == 2


def test_generate_digits_deterministic_and_balanced():
    imgs1, labs1 = generate_digits(200, rng(12))
    imgs2, labs2 = generate_digits(200, rng(12))
    assert np.array_equal(imgs1, imgs2)
    assert np.array_equal(labs1, labs2)
    assert imgs1.dtype == np.uint8 and labs1.dtype == np.uint8
    assert set(np.unique(labs1)) <= set(range(10))
    # labels stay roughly balanced despite the noise-image relabeling
    counts = np.bincount(labs1, minlength=10)
    assert counts.min() >= 10


def test_digit_glyphs_are_distinct():
    from sgdlab.mnist import digit_glyphs
    glyphs = digit_glyphs().reshape(10, -1)
    for i in range(10):
        for j in range(i + 1, 10):
            assert np.abs(glyphs[i] - glyphs[j]).sum() > 0


def test_write_digit_dataset_creates_all_four_files(tmp_path):
    d = write_digit_dataset(tmp_path / "ds", 30, 10, seed=13)
    assert (d / TRAIN_IMAGES).exists()
    assert read_idx_images(d / TRAIN_IMAGES).shape == (30, 28, 28)
    assert read_idx_labels(d / TEST_LABELS).shape == (10,)
