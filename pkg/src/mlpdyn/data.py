"""Datasets: MNIST IDX files, optional CIFAR-10 binaries, synthetic Gaussian blobs."""

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DataError(f"inputs must be (n, dim), got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataError(f"{x.shape[0]} inputs but labels of shape {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.size

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, indices, name=None):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, name or self.name)

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def _read_idx(path, magic, ndims):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DataError(f"{path}: corrupt gzip stream ({exc})") from None
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header at offset 0")
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise DataError(f"{path}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise DataError(f"{path}: truncated dimensions at offset 4")
    dims = struct.unpack_from(f">{ndims}I", raw, 4)
    need = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < need:
        have = len(raw) - header
        raise DataError(
            f"{path}: truncated data at offset {len(raw)}: {have} of {need} bytes present "
            f"after the header at offset {header}")
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=header)
    return dims, data


def load_mnist_idx(images_path, labels_path, limit=None, name="mnist"):
    """Read an IDX image/label pair, scaling pixels by 1/255.

    ``limit`` keeps only the first ``limit`` samples.
    """
    (n_img, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise DataError(
            f"count mismatch at offset 4: {images_path} has {n_img} images, "
            f"{labels_path} has {n_lab} labels")
    x = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if y.size and y.max() > 9:
        bad = int(np.argmax(y > 9))
        raise DataError(f"{labels_path}: label {y[bad]} > 9 at offset {8 + bad}")
    if limit is not None:
        x, y = x[:limit], y[:limit]
    return Dataset(x, y, 10, name)


def write_idx(path, array, magic):
    """Write a uint8 array as an IDX file; gzip-compressed when ``path`` ends in ``.gz``."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    raw = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()
    if str(path).endswith(".gz"):
        raw = gzip.compress(raw, mtime=0)
    Path(path).write_bytes(raw)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def mnist_paths(data_dir, split):
    """Image and label paths for a split; a ``.gz`` copy is used when the
    uncompressed file is missing. Offsets in error messages refer to the
    decompressed bytes."""
    root = Path(data_dir)
    out = []
    for base in MNIST_FILES[split]:
        plain, packed = root / base, root / (base + ".gz")
        out.append(packed if not plain.exists() and packed.exists() else plain)
    return tuple(out)


def load_cifar10_bin(paths, limit=None, name="cifar10"):
    """Read CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record)."""
    record = 1 + 3072
    xs, ys = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % record:
            whole = len(raw) // record * record
            raise DataError(f"{path}: truncated record at offset {whole}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        if arr.size and arr[:, 0].max() > 9:
            bad = int(np.argmax(arr[:, 0] > 9))
            raise DataError(f"{path}: label {arr[bad, 0]} > 9 at offset {bad * record}")
        ys.append(arr[:, 0].astype(np.int64))
        xs.append(arr[:, 1:].astype(np.float64) / 255.0)
    x = np.concatenate(xs) if xs else np.zeros((0, 3072))
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64)
    if limit is not None:
        x, y = x[:limit], y[:limit]
    return Dataset(x, y, 10, name)


def synth_blobs(num_classes, dim, per_class, spread, seed, noise_seed=None, name="blobs"):
    """Gaussian blobs around class means drawn uniformly on the unit sphere.

    The means depend only on ``seed``; the noise uses ``noise_seed`` (defaults
    to ``seed``) so a held-out set can share the means. Samples are ordered by
    class.
    """
    if spread < 0:
        raise ValueError("spread must be non-negative")
    means = np.random.default_rng(seed).standard_normal((num_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    rng = np.random.default_rng(seed if noise_seed is None else noise_seed)
    y = np.repeat(np.arange(num_classes), per_class)
    x = means[y] + spread * rng.standard_normal((y.size, dim))
    return Dataset(x, y, num_classes, name)


class BatchPlan:
    """Seeded per-epoch shuffles.

    Each epoch draws one permutation from a PCG64 stream, in order, so the
    plan is fully described by the seed; :meth:`state_before` exposes the
    generator state that a checkpoint stores, and ``start_state`` resumes it.
    """

    def __init__(self, num_samples, batch_size, shuffle_seed=0, start_epoch=0, start_state=None):
        if batch_size < 1:
            raise ValueError("batch size must be positive")
        self.num_samples = int(num_samples)
        self.batch_size = int(batch_size)
        self.shuffle_seed = shuffle_seed
        self.start_epoch = int(start_epoch)
        self._rng = np.random.Generator(np.random.PCG64(shuffle_seed))
        if start_state is not None:
            self._rng.bit_generator.state = start_state
        self._states = []
        self._perms = []

    def _extend(self, epoch):
        while self.start_epoch + len(self._perms) <= epoch:
            self._states.append(self._rng.bit_generator.state)
            self._perms.append(self._rng.permutation(self.num_samples))

    def permutation(self, epoch):
        if epoch < self.start_epoch:
            raise ValueError(f"plan starts at epoch {self.start_epoch}, asked for {epoch}")
        self._extend(epoch)
        return self._perms[epoch - self.start_epoch]

    def state_before(self, epoch):
        """Generator state right before epoch ``epoch``'s permutation is drawn."""
        self._extend(epoch)
        return self._states[epoch - self.start_epoch]


def batches(dataset, plan, epoch):
    """Index batches for ``epoch``: a disjoint cover, the last batch may be short."""
    if len(dataset) != plan.num_samples:
        raise ValueError(f"plan is for {plan.num_samples} samples, dataset has {len(dataset)}")
    perm = plan.permutation(epoch)
    return [perm[i:i + plan.batch_size] for i in range(0, perm.size, plan.batch_size)]
