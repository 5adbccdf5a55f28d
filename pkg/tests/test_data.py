import gzip
import struct

import numpy as np
import pytest

from mlpdyn.data import (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, BatchPlan, Dataset, batches,
                         load_cifar10_bin, load_mnist_idx, mnist_paths, synth_blobs, write_idx)
from mlpdyn.errors import DataError


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


@pytest.fixture
def two_images(tmp_path):
    pixels = [0, 255, 51, 102] + [0, 0, 0, 0]
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    img.write_bytes(idx_bytes(IDX_IMAGES_MAGIC, (2, 2, 2), pixels))
    lab.write_bytes(idx_bytes(IDX_LABELS_MAGIC, (2,), [7, 3]))
    return img, lab


class TestIdx:
    def test_round_trip_fixture(self, two_images):
        ds = load_mnist_idx(*two_images)
        np.testing.assert_array_equal(ds.inputs[0], [0.0, 1.0, 0.2, 0.4])
        np.testing.assert_array_equal(ds.inputs[1], 0.0)
        np.testing.assert_array_equal(ds.labels, [7, 3])
        assert ds.dim == 4 and len(ds) == 2 and ds.num_classes == 10

    def test_gzip_and_writer(self, tmp_path):
        x = np.arange(12, dtype=np.uint8).reshape(3, 2, 2)
        write_idx(tmp_path / "i.gz", x, IDX_IMAGES_MAGIC)
        write_idx(tmp_path / "l", np.array([1, 2, 3], dtype=np.uint8), IDX_LABELS_MAGIC)
        ds = load_mnist_idx(tmp_path / "i.gz", tmp_path / "l")
        np.testing.assert_allclose(ds.inputs * 255, x.reshape(3, 4))

    def test_bad_magic(self, tmp_path, two_images):
        bad = tmp_path / "bad"
        bad.write_bytes(idx_bytes(0x00000802, (2, 2, 2), [0] * 8))
        with pytest.raises(DataError, match="offset 0"):
            load_mnist_idx(bad, two_images[1])

    def test_truncated_data(self, tmp_path, two_images):
        short = tmp_path / "short"
        short.write_bytes(two_images[0].read_bytes()[:-3])
        with pytest.raises(DataError, match="truncated data at offset 21"):
            load_mnist_idx(short, two_images[1])

    def test_truncated_header(self, tmp_path, two_images):
        short = tmp_path / "short"
        short.write_bytes(two_images[0].read_bytes()[:6])
        with pytest.raises(DataError, match="offset 4"):
            load_mnist_idx(short, two_images[1])

    def test_count_mismatch(self, tmp_path, two_images):
        lab = tmp_path / "lab3"
        lab.write_bytes(idx_bytes(IDX_LABELS_MAGIC, (3,), [1, 2, 3]))
        with pytest.raises(DataError, match="count mismatch at offset 4"):
            load_mnist_idx(two_images[0], lab)

    def test_corrupt_gzip(self, tmp_path, two_images):
        bad = tmp_path / "bad.gz"
        bad.write_bytes(gzip.compress(two_images[0].read_bytes())[:-6])
        with pytest.raises(DataError):
            load_mnist_idx(bad, two_images[1])

    def test_limit(self, two_images):
        assert len(load_mnist_idx(*two_images, limit=1)) == 1

    def test_paths_prefer_plain_then_gzip(self, tmp_path):
        (tmp_path / "train-images-idx3-ubyte.gz").write_bytes(b"")
        images, labels = mnist_paths(tmp_path, "train")
        assert images.name.endswith(".gz") and labels.name == "train-labels-idx1-ubyte"


class TestCifar:
    def test_records_and_truncation(self, tmp_path):
        rec = bytes([4]) + bytes(range(256)) * 12
        path = tmp_path / "b.bin"
        path.write_bytes(rec * 2)
        ds = load_cifar10_bin([path])
        assert len(ds) == 2 and ds.dim == 3072 and ds.labels.tolist() == [4, 4]
        path.write_bytes(rec + rec[:100])
        with pytest.raises(DataError, match="offset 3073"):
            load_cifar10_bin([path])


class TestDataset:
    def test_validation(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((3, 2)), np.zeros(2), 2)
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)

    def test_fingerprint_stable(self):
        a = synth_blobs(3, 4, 5, 0.1, seed=2)
        b = synth_blobs(3, 4, 5, 0.1, seed=2)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != synth_blobs(3, 4, 5, 0.1, seed=3).fingerprint()


class TestBlobs:
    def test_zero_spread(self):
        ds = synth_blobs(4, 6, 5, 0.0, seed=0)
        for c in range(4):
            rows = ds.inputs[ds.labels == c]
            np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))
            assert np.linalg.norm(rows[0]) == pytest.approx(1.0)

    def test_deterministic(self):
        a, b = synth_blobs(3, 8, 10, 0.3, 7), synth_blobs(3, 8, 10, 0.3, 7)
        np.testing.assert_array_equal(a.inputs, b.inputs)

    def test_noise_seed_keeps_means(self):
        a = synth_blobs(3, 8, 4000, 0.3, 7)
        b = synth_blobs(3, 8, 4000, 0.3, 7, noise_seed=99)
        assert not np.array_equal(a.inputs, b.inputs)
        for c in range(3):
            np.testing.assert_allclose(a.inputs[a.labels == c].mean(0),
                                       b.inputs[b.labels == c].mean(0), atol=0.03)

    def test_least_squares_classifier(self):
        train = synth_blobs(4, 32, 200, 0.1, seed=1)
        test = synth_blobs(4, 32, 200, 0.1, seed=1, noise_seed=2)
        targets = np.eye(4)[train.labels]
        w, *_ = np.linalg.lstsq(train.inputs, targets, rcond=None)
        accuracy = np.mean((test.inputs @ w).argmax(1) == test.labels)
        assert accuracy > 0.95


class TestBatches:
    def test_single_batch_is_permutation(self):
        ds = synth_blobs(2, 3, 5, 0.1, 0)
        plan = BatchPlan(10, 10, shuffle_seed=4)
        (only,) = batches(ds, plan, 0)
        np.testing.assert_array_equal(only, plan.permutation(0))

    def test_cover_exactly_once(self):
        ds = synth_blobs(3, 2, 11, 0.1, 0)
        plan = BatchPlan(33, 10, shuffle_seed=1)
        for epoch in range(3):
            parts = batches(ds, plan, epoch)
            assert [len(p) for p in parts] == [10, 10, 10, 3]
            np.testing.assert_array_equal(np.sort(np.concatenate(parts)), np.arange(33))

    def test_seeded_and_epochs_differ(self):
        a, b = BatchPlan(50, 7, 3), BatchPlan(50, 7, 3)
        np.testing.assert_array_equal(a.permutation(2), b.permutation(2))
        assert not np.array_equal(a.permutation(0), a.permutation(1))

    def test_resume_from_state(self):
        full = BatchPlan(40, 8, 5)
        resumed = BatchPlan(40, 8, 5, start_epoch=3, start_state=full.state_before(3))
        for epoch in (3, 4, 5):
            np.testing.assert_array_equal(full.permutation(epoch), resumed.permutation(epoch))
        with pytest.raises(ValueError):
            resumed.permutation(2)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            batches(synth_blobs(2, 2, 3, 0.1, 0), BatchPlan(5, 2), 0)
