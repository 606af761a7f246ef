"""IDX dataset ingestion and a self-contained digit surrogate.

Reading follows the classic IDX layout: big-endian header of 32-bit words
(magic, count, then rows/cols for images), followed by a raw uint8 payload.
Magic numbers are 0x00000803 for image files and 0x00000801 for label
files.  Parsing is strict: wrong magic, truncated payloads, trailing bytes
and image/label count mismatches all raise IdxFormatError.

Because real MNIST files cannot be fetched in every environment, the
module also generates a deterministic MNIST-shaped surrogate: 28x28
seven-segment digit glyphs with random shifts, stroke dropout, intensity
jitter and background speckle.  The surrogate is written and read through
the same IDX files as the real dataset, so the whole ingestion path is
exercised either way.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IdxFormatError, MisuseError
from .objectives import BilayerPerceptron

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


def _read_exact(f, nbytes: int, path, what: str) -> bytes:
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise IdxFormatError(f"{path}: truncated file while reading {what}")
    return data


def read_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into a (count, rows, cols) uint8 array."""
    path = Path(path)
    with open(path, "rb") as f:
        magic, = struct.unpack(">I", _read_exact(f, 4, path, "magic number"))
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(f"{path}: bad image magic 0x{magic:08x}, "
                                 f"expected 0x{IMAGE_MAGIC:08x}")
        count, rows, cols = struct.unpack(">III", _read_exact(f, 12, path, "header"))
        payload = _read_exact(f, count * rows * cols, path, "pixel data")
        if f.read(1):
            raise IdxFormatError(f"{path}: trailing bytes after pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """Parse an IDX label file into a (count,) uint8 array."""
    path = Path(path)
    with open(path, "rb") as f:
        magic, = struct.unpack(">I", _read_exact(f, 4, path, "magic number"))
        if magic != LABEL_MAGIC:
            raise IdxFormatError(f"{path}: bad label magic 0x{magic:08x}, "
                                 f"expected 0x{LABEL_MAGIC:08x}")
        count, = struct.unpack(">I", _read_exact(f, 4, path, "header"))
        payload = _read_exact(f, count, path, "label data")
        if f.read(1):
            raise IdxFormatError(f"{path}: trailing bytes after label data")
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def stratified_subset(labels: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic label-stratified sample of row indices.

    Class quotas are proportional to class frequencies (largest-remainder
    rounding, ties broken by class index); rows within a class are chosen
    by a seeded shuffle.
    """
    labels = np.asarray(labels)
    total = labels.shape[0]
    if not 1 <= size <= total:
        raise MisuseError(f"subset size {size} out of range [1, {total}]")
    classes, counts = np.unique(labels, return_counts=True)
    exact = size * counts / total
    quotas = np.floor(exact).astype(int)
    remainder = size - quotas.sum()
    if remainder > 0:
        order = np.argsort(-(exact - quotas), kind="stable")
        quotas[order[:remainder]] += 1

    chosen = []
    for cls, quota in zip(classes, quotas):
        rows = np.flatnonzero(labels == cls)
        rng.shuffle(rows)
        chosen.append(rows[:quota])
    out = np.concatenate(chosen)
    rng.shuffle(out)
    return out


def load_mnist_subset(data_dir, n_train: int, n_test: int, seed: int,
                      hidden: int = 100) -> BilayerPerceptron:
    """Read the four IDX files under data_dir and build a perceptron
    objective on a deterministic stratified subset.

    Pixels are scaled to [0, 1]; the same seed always selects the same
    subset.
    """
    if n_train < 1 or n_test < 1:
        raise MisuseError("n_train and n_test must be positive")
    data_dir = Path(data_dir)
    train_images = read_idx_images(data_dir / TRAIN_IMAGES)
    train_labels = read_idx_labels(data_dir / TRAIN_LABELS)
    test_images = read_idx_images(data_dir / TEST_IMAGES)
    test_labels = read_idx_labels(data_dir / TEST_LABELS)
    if train_images.shape[0] != train_labels.shape[0]:
        raise IdxFormatError(f"{data_dir}: train image/label counts disagree "
                             f"({train_images.shape[0]} vs {train_labels.shape[0]})")
    if test_images.shape[0] != test_labels.shape[0]:
        raise IdxFormatError(f"{data_dir}: test image/label counts disagree "
                             f"({test_images.shape[0]} vs {test_labels.shape[0]})")
    if n_train > train_images.shape[0]:
        raise MisuseError(f"requested {n_train} training samples, file holds "
                          f"{train_images.shape[0]}")
    if n_test > test_images.shape[0]:
        raise MisuseError(f"requested {n_test} test samples, file holds "
                          f"{test_images.shape[0]}")

    rng = np.random.Generator(np.random.PCG64(seed))
    tr = stratified_subset(train_labels, n_train, rng)
    te = stratified_subset(test_labels, n_test, rng)

    def flat(images):
        return images.reshape(images.shape[0], -1).astype(float) / 255.0

    return BilayerPerceptron(flat(train_images[tr]), train_labels[tr],
                             flat(test_images[te]), test_labels[te],
                             hidden=hidden)


# ---------------------------------------------------------------------------
# Synthetic seven-segment digit surrogate
# ---------------------------------------------------------------------------

# segment -> (row slice, col slice) on the 28x28 canvas
_SEGMENTS = {
    "top": (slice(4, 7), slice(8, 20)),
    "mid": (slice(12, 15), slice(8, 20)),
    "bot": (slice(21, 24), slice(8, 20)),
    "tl": (slice(5, 14), slice(5, 8)),
    "tr": (slice(5, 14), slice(20, 23)),
    "bl": (slice(13, 23), slice(5, 8)),
    "br": (slice(13, 23), slice(20, 23)),
}

_DIGIT_SEGMENTS = {
    0: ("top", "tl", "tr", "bl", "br", "bot"),
    1: ("tr", "br"),
    2: ("top", "tr", "mid", "bl", "bot"),
    3: ("top", "tr", "mid", "br", "bot"),
    4: ("tl", "tr", "mid", "br"),
    5: ("top", "tl", "mid", "br", "bot"),
    6: ("top", "tl", "mid", "bl", "br", "bot"),
    7: ("top", "tr", "br"),
    8: ("top", "tl", "tr", "mid", "bl", "br", "bot"),
    9: ("top", "tl", "tr", "mid", "br", "bot"),
}


def digit_glyphs() -> np.ndarray:
    """The ten clean glyph templates, shape (10, 28, 28), values in {0, 1}."""
    glyphs = np.zeros((10, 28, 28))
    for digit, segs in _DIGIT_SEGMENTS.items():
        for seg in segs:
            rows, cols = _SEGMENTS[seg]
            glyphs[digit, rows, cols] = 1.0
    return glyphs


def generate_digits(count: int, rng: np.random.Generator,
                    max_shift: int = 1, dropout: float = 0.02,
                    noise: float = 0.10, speckle: int = 10,
                    noise_frac: float = 0.12) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stream of noisy glyph images.

    Labels are balanced (round-robin, then shuffled).  Each glyph image
    gets an integer translation up to max_shift pixels, per-pixel stroke
    dropout, intensity jitter, additive background noise and a few bright
    speckle pixels.  A noise_frac fraction of images carry no glyph at
    all, just background noise with a random label: they are unlearnable
    by design, which caps attainable accuracy below 1 and keeps a seeded
    spread between otherwise saturated training runs.
    """
    glyphs = digit_glyphs()
    labels = np.arange(count) % 10
    rng.shuffle(labels)

    images = np.empty((count, 28, 28))
    for i, lab in enumerate(labels):
        if rng.random() < noise_frac:
            img = rng.uniform(0.0, 0.65, size=(28, 28))
            flat = rng.integers(0, 28 * 28, size=3 * speckle)
            img.reshape(-1)[flat] = rng.uniform(0.3, 1.0, size=3 * speckle)
            labels[i] = rng.integers(0, 10)
        else:
            img = glyphs[lab].copy()
            img *= rng.random((28, 28)) >= dropout
            img *= rng.uniform(0.75, 1.0)
            img *= rng.uniform(0.8, 1.0, size=(28, 28))
            dr, dc = rng.integers(-max_shift, max_shift + 1, size=2)
            img = np.roll(np.roll(img, dr, axis=0), dc, axis=1)
            img += rng.uniform(0.0, noise, size=(28, 28))
            flat = rng.integers(0, 28 * 28, size=speckle)
            img.reshape(-1)[flat] = np.maximum(img.reshape(-1)[flat],
                                               rng.uniform(0.3, 0.9, size=speckle))
        images[i] = np.clip(img, 0.0, 1.0)

    return np.round(images * 255.0).astype(np.uint8), labels.astype(np.uint8)


def write_digit_dataset(data_dir, n_train: int, n_test: int, seed: int) -> Path:
    """Write the surrogate as the four standard IDX files under data_dir."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    train_images, train_labels = generate_digits(n_train, rng)
    test_images, test_labels = generate_digits(n_test, rng)
    write_idx_images(data_dir / TRAIN_IMAGES, train_images)
    write_idx_labels(data_dir / TRAIN_LABELS, train_labels)
    write_idx_images(data_dir / TEST_IMAGES, test_images)
    write_idx_labels(data_dir / TEST_LABELS, test_labels)
    return data_dir
