"""Datasets: file formats, normalization, task streams, corruption.

Supported on-disk formats:

IDX (the MNIST container). Big-endian throughout.

    images  offset 0   u32 magic, must be 2051
            offset 4   u32 image count
            offset 8   u32 rows
            offset 12  u32 cols
            offset 16  count*rows*cols bytes, one unsigned byte per pixel
    labels  offset 0   u32 magic, must be 2049
            offset 4   u32 label count
            offset 8   count bytes

CIFAR-100 binary. Fixed-width rows, no header:

    row = u8 coarse label, u8 fine label, 3072 bytes of pixels
          (1024 red, 1024 green, 1024 blue, row-major 32x32)
    train.bin holds 50000 rows, test.bin 10000.

Files may be stored gzip-compressed next to their plain names; readers
sniff the two-byte gzip magic and decompress transparently.

Pixel values are scaled to [0, 1] and standardized per channel with
statistics computed on the training split, so a corrupted pixel at
+2.0 sits exactly two training standard deviations above the mean.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import shutil
import struct
import tarfile
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, UsageError

MNIST_BASE_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"

# sha256 of the *decompressed* IDX byte streams, so the check holds no
# matter which mirror or compression level produced the local copy.
MNIST_FILES = {
    "train-images-idx3-ubyte":
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte":
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "t10k-images-idx3-ubyte":
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte":
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}

CIFAR100_URL = "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz"
CIFAR100_MEMBERS = {"train.bin": 50000, "test.bin": 10000}


@dataclass
class LabeledSet:
    """Inputs [n, c, h, w] (already normalized), int labels [n]."""
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    mean: np.ndarray = field(default_factory=lambda: np.zeros(1))
    std: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.inputs.ndim != 4:
            raise UsageError(
                f"inputs must be [n, c, h, w], got {self.inputs.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.inputs):
            raise UsageError("labels must be one integer per input")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise DataError(f"labels must be integers, got {self.labels.dtype}")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise DataError(
                f"label outside [0, {self.num_classes}): "
                f"min {self.labels.min()} max {self.labels.max()}")

    def __len__(self):
        return len(self.inputs)

    def subset(self, index) -> "LabeledSet":
        return LabeledSet(self.name, self.inputs[index], self.labels[index],
                          self.num_classes, self.mean, self.std)


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _find_file(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise DataError(
        f"missing data file {name} (or {name}.gz) in {directory}; "
        f"run `kwinnow data fetch` or place the files there")


def read_idx_images(path) -> np.ndarray:
    raw = _read_bytes(Path(path))
    if len(raw) < 16:
        raise DataError(f"{path}: too short for an image header (16 bytes)")
    magic, count, rows, cols = struct.unpack(">4i", raw[:16])
    if magic != 2051:
        raise DataError(f"{path}: bad magic {magic} at offset 0, want 2051")
    want = 16 + count * rows * cols
    if len(raw) != want:
        raise DataError(
            f"{path}: expected {want} bytes for {count} images of "
            f"{rows}x{cols}, file has {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16) \
        .reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(Path(path))
    if len(raw) < 8:
        raise DataError(f"{path}: too short for a label header (8 bytes)")
    magic, count = struct.unpack(">2i", raw[:8])
    if magic != 2049:
        raise DataError(f"{path}: bad magic {magic} at offset 0, want 2049")
    if len(raw) != 8 + count:
        raise DataError(
            f"{path}: expected {8 + count} bytes for {count} labels, "
            f"file has {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def _normalize_pair(train_u8, test_u8, dtype):
    """Scale to [0,1], standardize per channel on train statistics."""
    train = train_u8.astype(dtype) / dtype(255.0)
    test = test_u8.astype(dtype) / dtype(255.0)
    mean = train.mean(axis=(0, 2, 3))
    std = train.std(axis=(0, 2, 3))
    if np.any(std == 0):
        raise DataError("constant channel in training data, cannot scale")
    c = train.shape[1]
    train = (train - mean.reshape(1, c, 1, 1)) / std.reshape(1, c, 1, 1)
    test = (test - mean.reshape(1, c, 1, 1)) / std.reshape(1, c, 1, 1)
    return (train.astype(dtype, copy=False), test.astype(dtype, copy=False),
            mean.astype(np.float64), std.astype(np.float64))


def load_mnist(data_dir="data", dtype=np.float64):
    """The classic 60000/10000 digit split as normalized LabeledSets."""
    dtype = np.dtype(dtype).type
    raw = Path(data_dir) / "mnist" / "raw"
    tri = read_idx_images(_find_file(raw, "train-images-idx3-ubyte"))
    trl = read_idx_labels(_find_file(raw, "train-labels-idx1-ubyte"))
    tei = read_idx_images(_find_file(raw, "t10k-images-idx3-ubyte"))
    tel = read_idx_labels(_find_file(raw, "t10k-labels-idx1-ubyte"))
    for imgs, labels, part in ((tri, trl, "train"), (tei, tel, "test")):
        if len(imgs) != len(labels):
            raise DataError(
                f"mnist {part}: {len(imgs)} images but {len(labels)} labels")
    if trl.max() > 9 or tel.max() > 9:
        raise DataError("mnist labels above 9")
    train, test, mean, std = _normalize_pair(
        tri[:, None, :, :], tei[:, None, :, :], dtype)
    return (LabeledSet("mnist-train", train, trl.astype(np.int64), 10,
                       mean, std),
            LabeledSet("mnist-test", test, tel.astype(np.int64), 10,
                       mean, std))


def _read_cifar100_bin(path: Path, rows: int):
    raw = _read_bytes(path)
    width = 2 + 3072
    if len(raw) != rows * width:
        raise DataError(
            f"{path}: expected {rows * width} bytes ({rows} rows of "
            f"{width}), file has {len(raw)}")
    block = np.frombuffer(raw, dtype=np.uint8).reshape(rows, width)
    fine = block[:, 1]
    pixels = block[:, 2:].reshape(rows, 3, 32, 32)
    return pixels, fine


def load_cifar100(data_dir="data", dtype=np.float32):
    """CIFAR-100 with fine labels, normalized per channel."""
    dtype = np.dtype(dtype).type
    raw = Path(data_dir) / "cifar100" / "raw"
    tri, trl = _read_cifar100_bin(_find_file(raw, "train.bin"), 50000)
    tei, tel = _read_cifar100_bin(_find_file(raw, "test.bin"), 10000)
    if trl.max() > 99 or tel.max() > 99:
        raise DataError("cifar100 fine labels above 99")
    train, test, mean, std = _normalize_pair(tri, tei, dtype)
    return (LabeledSet("cifar100-train", train, trl.astype(np.int64), 100,
                       mean, std),
            LabeledSet("cifar100-test", test, tel.astype(np.int64), 100,
                       mean, std))


def _download(url: str, dest: Path) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    try:
        with urllib.request.urlopen(url) as resp, \
                tempfile.NamedTemporaryFile(dir=dest.parent,
                                            delete=False) as tmp:
            shutil.copyfileobj(resp, tmp)
            tmp_path = Path(tmp.name)
    except (urllib.error.URLError, OSError) as exc:
        raise DataError(f"could not download {url}: {exc}") from exc
    tmp_path.replace(dest)


def _content_sha256(path: Path) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


def fetch_mnist(data_dir="data", base_url=MNIST_BASE_URL) -> Path:
    """Download (or verify an existing copy of) the four MNIST files.

    Checksums are pinned on the decompressed content. A file that is
    already present and verifies is left alone; a mismatch is removed
    and reported.
    """
    raw = Path(data_dir) / "mnist" / "raw"
    for name, digest in MNIST_FILES.items():
        dest = raw / (name + ".gz")
        plain = raw / name
        existing = dest if dest.exists() else plain if plain.exists() else None
        if existing is None:
            _download(base_url + name + ".gz", dest)
            existing = dest
        got = _content_sha256(existing)
        if got != digest:
            existing.unlink()
            raise DataError(
                f"checksum mismatch for {name}: expected {digest}, "
                f"got {got}; the corrupt file was removed")
    return raw


def fetch_cifar100(data_dir="data", url=CIFAR100_URL) -> Path:
    """Download and unpack the CIFAR-100 binary archive.

    There is no pinned digest for the archive; instead the observed
    content hashes are written to a manifest on first fetch and any
    later fetch or re-verify must match it.
    """
    raw = Path(data_dir) / "cifar100" / "raw"
    manifest_path = raw / "manifest.json"
    if not all((raw / m).exists() for m in CIFAR100_MEMBERS):
        archive = raw / "cifar-100-binary.tar.gz"
        if not archive.exists():
            _download(url, archive)
        try:
            with tarfile.open(archive) as tar:
                members = {Path(m.name).name: m for m in tar.getmembers()}
                for name in CIFAR100_MEMBERS:
                    if name not in members:
                        raise DataError(
                            f"{archive} does not contain {name}")
                    with tar.extractfile(members[name]) as src, \
                            open(raw / name, "wb") as dst:
                        shutil.copyfileobj(src, dst)
        except tarfile.TarError as exc:
            raise DataError(f"bad archive {archive}: {exc}") from exc
    observed = {m: _content_sha256(raw / m) for m in CIFAR100_MEMBERS}
    if manifest_path.exists():
        recorded = json.loads(manifest_path.read_text())
        if recorded != observed:
            raise DataError(
                f"cifar100 files changed since first fetch: recorded "
                f"{recorded}, observed {observed}")
    else:
        manifest_path.write_text(json.dumps(observed, indent=2))
    return raw


@dataclass
class Task:
    task_id: int
    descriptor: dict
    _train: object
    _test: object

    def train_set(self) -> LabeledSet:
        return self._train()

    def test_set(self) -> LabeledSet:
        return self._test()


class TaskStream:
    """An ordered list of tasks, each materialized on demand so only
    the task in hand occupies memory."""

    def __init__(self, kind: str, seed: int, tasks: list):
        self.kind = kind
        self.seed = seed
        self.tasks = tasks

    def __len__(self):
        return len(self.tasks)

    def task(self, i: int) -> Task:
        if not 0 <= i < len(self.tasks):
            raise UsageError(f"task index {i} outside [0, {len(self.tasks)})")
        return self.tasks[i]

    def descriptors(self) -> list:
        return [t.descriptor for t in self.tasks]


def permuted_mnist(num_tasks=10, seed=0, data_dir="data",
                   train_count=None, test_count=None, dtype=np.float64,
                   base=None) -> TaskStream:
    """Pixel-permutation tasks over one base image set.

    Task 0 is the identity permutation (plain digits); every later
    task applies its own fixed random shuffle of the 784 pixels to
    both splits. Draw order from the seed: train subset indices, test
    subset indices, then one permutation per task starting at task 1.
    """
    if num_tasks < 1:
        raise ConfigError(f"need at least one task, got {num_tasks}")
    if base is None:
        base = load_mnist(data_dir, dtype=dtype)
    train, test = base
    rng = np.random.default_rng(seed)
    if train_count is not None:
        if not 0 < train_count <= len(train):
            raise ConfigError(
                f"train_count {train_count} outside (0, {len(train)}]")
        train = train.subset(rng.permutation(len(train))[:train_count])
    if test_count is not None:
        if not 0 < test_count <= len(test):
            raise ConfigError(
                f"test_count {test_count} outside (0, {len(test)}]")
        test = test.subset(rng.permutation(len(test))[:test_count])

    n, c, h, w = train.inputs.shape
    dim = c * h * w
    tasks = []
    for tid in range(num_tasks):
        perm = np.arange(dim) if tid == 0 else rng.permutation(dim)

        def make(split, perm=perm):
            def build():
                flat = split.inputs.reshape(len(split), dim)[:, perm]
                return LabeledSet(f"{split.name}-perm",
                                  flat.reshape(len(split), c, h, w),
                                  split.labels, split.num_classes,
                                  split.mean, split.std)
            return build

        tasks.append(Task(tid,
                          {"kind": "permute", "task_id": tid,
                           "identity": tid == 0},
                          make(train), make(test)))
    return TaskStream("permuted", seed, tasks)


def split_cifar100(num_tasks=10, seed=0, data_dir="data",
                   dtype=np.float32, base=None) -> TaskStream:
    """Partition the 100 fine classes into disjoint 10-way tasks.

    The class order is a seeded shuffle; task t owns classes
    perm[10t : 10t+10] and relabels them 0..9 in that drawn order.
    """
    if base is None:
        base = load_cifar100(data_dir, dtype=dtype)
    train, test = base
    classes = train.num_classes
    if classes % num_tasks:
        raise ConfigError(
            f"{classes} classes do not split into {num_tasks} equal tasks")
    per = classes // num_tasks
    order = np.random.default_rng(seed).permutation(classes)
    tasks = []
    for tid in range(num_tasks):
        own = order[tid * per:(tid + 1) * per]
        remap = {int(c): i for i, c in enumerate(own)}

        def make(split, own=own, remap=remap):
            def build():
                keep = np.isin(split.labels, own)
                labels = np.array([remap[int(l)] for l in
                                   split.labels[keep]], dtype=np.int64)
                return LabeledSet(f"{split.name}-split", split.inputs[keep],
                                  labels, per, split.mean, split.std)
            return build

        tasks.append(Task(tid,
                          {"kind": "class_split", "task_id": tid,
                           "classes": [int(c) for c in own]},
                          make(train), make(test)))
    return TaskStream("class_split", seed, tasks)


def inject_noise(dset: LabeledSet, p: float, seed: int = 0) -> LabeledSet:
    """Set each pixel position, with probability p, to exactly +2.0 in
    normalized units (two training standard deviations above the
    mean). A hit covers every channel at that position. The input set
    is never touched; labels are shared, pixels are copied."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"noise probability must be in [0, 1], got {p}")
    if p == 0.0:
        return LabeledSet(dset.name, dset.inputs.copy(), dset.labels,
                          dset.num_classes, dset.mean, dset.std)
    rng = np.random.default_rng(seed)
    n, c, h, w = dset.inputs.shape
    hits = rng.random((n, h, w)) < p
    noisy = dset.inputs.copy()
    noisy[hits[:, None, :, :].repeat(c, axis=1)] = dset.inputs.dtype.type(2.0)
    return LabeledSet(f"{dset.name}-noise{p:g}", noisy, dset.labels,
                      dset.num_classes, dset.mean, dset.std)


def toy_blobs(n=400, classes=4, seed=0, dtype=np.float64) -> LabeledSet:
    """Tiny gaussian-blob classification posed as [n, 1, 4, 4] images.

    Class c has mean 6 * e_c in 16 dimensions, unit variance, so the
    classes are trivially separable. Class balance is exact, which
    requires classes to divide n."""
    if classes < 2 or classes > 16:
        raise ConfigError(f"classes must be in [2, 16], got {classes}")
    if n % classes:
        raise ConfigError(f"{n} samples do not balance over {classes} classes")
    rng = np.random.default_rng(seed)
    per = n // classes
    labels = np.repeat(np.arange(classes), per)
    x = rng.normal(size=(n, 16)).astype(dtype)
    x[np.arange(n), labels] += 6.0
    shuffle = rng.permutation(n)
    return LabeledSet("blobs", x[shuffle].reshape(n, 1, 4, 4),
                      labels[shuffle].astype(np.int64), classes)
