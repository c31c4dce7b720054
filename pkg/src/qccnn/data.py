"""Dataset container (QTN1 files), normalisation and synthetic datasets.

QTN1 layout, all little-endian::

    offset  size  field
    0       4     magic b"QTN1"
    4       2     version (uint16, currently 1)
    6       1     element type tag (uint8, 1 = float64)
    7       1     item rank r, channel axis included (uint8)
    8       2     n_classes (uint16)
    10      2     reserved, zero (uint16)
    12      8     item count N (uint64)
    20      4*r   item shape (uint32 each), e.g. (1, 28, 28)
    ...     8*N*prod(shape)   images, float64, row-major
    ...     2*N   labels, uint16

External data (MedMNIST arrays, resampled lesion cubes) is converted to this
format offline; see the README for a recipe.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError, UnsupportedVersionError, UsageError

MAGIC = b"QTN1"
VERSION = 1
FLOAT64_TAG = 1
_HEADER = struct.Struct("<4sHBBHHQ")


@dataclass
class DatasetContainer:
    images: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.images.ndim < 2:
            raise UsageError("images need shape (N, C, *spatial)")
        if self.labels.shape != (self.images.shape[0],):
            raise UsageError(f"{self.labels.shape[0]} labels for {self.images.shape[0]} images")
        if not 1 <= self.n_classes <= 0xFFFF:
            raise UsageError(f"n_classes out of range: {self.n_classes}")
        if self.labels.size and int(self.labels.max()) >= self.n_classes:
            raise UsageError("label index >= n_classes")

    @property
    def item_shape(self):
        return self.images.shape[1:]

    def __len__(self):
        return self.images.shape[0]

    def subset(self, index):
        return DatasetContainer(self.images[index], self.labels[index], self.n_classes)


@dataclass(frozen=True)
class SplitSpec:
    """First ``train`` items form the training split, the next ``val`` the validation split."""

    train: int
    val: int

    def apply(self, container):
        if self.train < 1 or self.val < 0:
            raise ConfigurationError(f"invalid split {self}")
        if self.train + self.val > len(container):
            raise ConfigurationError(
                f"split needs {self.train + self.val} items, container has {len(container)}"
            )
        return (
            container.subset(slice(0, self.train)),
            container.subset(slice(self.train, self.train + self.val)),
        )


def default_split(n):
    """80/20 split of ``n`` items."""
    train = max(1, int(round(0.8 * n)))
    return SplitSpec(train, n - train)


def to_bytes(container):
    shape = container.item_shape
    header = _HEADER.pack(MAGIC, VERSION, FLOAT64_TAG, len(shape), container.n_classes, 0, len(container))
    dims = struct.pack(f"<{len(shape)}I", *shape)
    return b"".join(
        [header, dims, container.images.astype("<f8").tobytes(), container.labels.astype("<u2").tobytes()]
    )


def from_bytes(buf):
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header", len(buf))
    magic, version, tag, rank, n_classes, _, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}", 4)
    if tag != FLOAT64_TAG:
        raise FormatError(f"unsupported element type tag {tag}", 6)
    if rank < 1:
        raise FormatError("item rank must be at least 1", 7)
    if n_classes < 1:
        raise FormatError("n_classes must be positive", 8)
    off = _HEADER.size
    if len(buf) < off + 4 * rank:
        raise FormatError("truncated shape block", len(buf))
    shape = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    n_values = count * int(np.prod(shape))
    img_end = off + 8 * n_values
    lab_end = img_end + 2 * count
    if len(buf) < img_end:
        raise FormatError(f"truncated image payload: expected {8 * n_values} bytes", len(buf))
    if len(buf) < lab_end:
        raise FormatError(f"truncated label payload: expected {2 * count} bytes", len(buf))
    if len(buf) > lab_end:
        raise FormatError(f"{len(buf) - lab_end} trailing bytes", lab_end)
    images = np.frombuffer(buf, dtype="<f8", count=n_values, offset=off).reshape((count,) + shape)
    labels = np.frombuffer(buf, dtype="<u2", count=count, offset=img_end)
    bad = np.flatnonzero(labels >= n_classes)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} >= n_classes {n_classes}", img_end + 2 * int(bad[0]))
    if not np.all(np.isfinite(images)):
        raise FormatError("non-finite image values", off)
    return DatasetContainer(images.astype(np.float64), labels.astype(np.uint16), int(n_classes))


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temp file in the same directory and a rename."""
    path = os.fspath(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(container, path):
    atomic_write(path, to_bytes(container))


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


# ---------------------------------------------------------------------------
# normalisation


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


def fit_normalization(container):
    """Global mean and (population) standard deviation over all values."""
    values = container.images
    mean = float(values.mean())
    std = float(values.std())
    if not std > 0.0:
        raise ConfigurationError("cannot normalise: data has zero variance")
    return NormStats(mean, std)


def apply_normalization(container, stats):
    images = (container.images - stats.mean) / stats.std
    return DatasetContainer(images, container.labels.copy(), container.n_classes)


def normalize(container, stats=None):
    """Returns ``(normalised container, stats)``; stats are fitted when not given."""
    if stats is None:
        stats = fit_normalization(container)
    return apply_normalization(container, stats), stats


# ---------------------------------------------------------------------------
# synthetic datasets


def _balanced_labels(n, rng):
    labels = np.zeros(n, dtype=np.uint16)
    labels[(n + 1) // 2 :] = 1
    return rng.permutation(labels)


def synth_2d(kind="stripes", n_items=1000, seed=0):
    """1x28x28 stripe images: class 0 bright even rows, class 1 bright even columns.

    Each image has a brightness factor in [0.7, 1.3] and additive Gaussian
    noise of standard deviation 0.2. A 2x2 filter [[1, 1], [-1, -1]] followed
    by a threshold separates the classes.
    """
    if kind != "stripes":
        raise UsageError(f"unknown 2D synthetic kind {kind!r}")
    if n_items < 1:
        raise UsageError("n_items must be positive")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n_items, rng)
    rows = (np.arange(28) % 2 == 0).astype(np.float64)
    horizontal = np.repeat(rows[:, None], 28, axis=1)
    patterns = np.stack([horizontal, horizontal.T])
    scale = rng.uniform(0.7, 1.3, size=n_items)
    noise = rng.normal(0.0, 0.2, size=(n_items, 28, 28))
    images = scale[:, None, None] * patterns[labels] + noise
    return DatasetContainer(images[:, None], labels, 2)


BLOB_AMPLITUDE = 2.5


def synth_3d(kind="blob", n_items=500, seed=0, size=16):
    """1xSxSxS volumes of unit Gaussian noise; class 1 adds a Gaussian blob.

    The blob has peak ``BLOB_AMPLITUDE``, width r drawn from [2, 4] voxels and
    a centre drawn uniformly so that it sits at least r from every face.
    """
    if kind != "blob":
        raise UsageError(f"unknown 3D synthetic kind {kind!r}")
    if n_items < 1:
        raise UsageError("n_items must be positive")
    if size < 9:
        raise UsageError("volume size must be at least 9")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n_items, rng)
    images = rng.normal(0.0, 1.0, size=(n_items, size, size, size))
    radius = rng.uniform(2.0, 4.0, size=n_items)
    centre = rng.uniform(0.0, 1.0, size=(n_items, 3))
    grid = np.arange(size, dtype=np.float64)
    for i in np.flatnonzero(labels == 1):
        r = radius[i]
        c = r + centre[i] * (size - 1 - 2 * r)
        d2 = (
            (grid[:, None, None] - c[0]) ** 2
            + (grid[None, :, None] - c[1]) ** 2
            + (grid[None, None, :] - c[2]) ** 2
        )
        images[i] += BLOB_AMPLITUDE * np.exp(-d2 / (2 * r * r))
    return DatasetContainer(images[:, None], labels, 2)


SYNTH_KINDS = {"stripes": synth_2d, "blob": synth_3d}


def synth(kind, n_items, seed):
    if kind not in SYNTH_KINDS:
        raise UsageError(f"unknown synthetic kind {kind!r}; expected one of {sorted(SYNTH_KINDS)}")
    return SYNTH_KINDS[kind](kind, n_items, seed)
