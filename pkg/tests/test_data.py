import gzip
import struct

import numpy as np
import pytest

from gatednet.config import DataConfig
from gatednet.core import make_rng
from gatednet.data import (
    IMAGE_MAGIC,
    LABEL_MAGIC,
    Dataset,
    IDXParseError,
    batches,
    find_mnist,
    load_dataset,
    load_idx,
    load_mnist,
    read_idx,
    standardize,
    synth_blobs,
    train_test_split,
    write_idx,
)


@pytest.fixture
def idx_pair(tmp_path):
    r = make_rng(0)
    images = r.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = r.integers(0, 10, size=5, dtype=np.uint8)
    ip, lp = tmp_path / "img", tmp_path / "lbl"
    write_idx(ip, images)
    write_idx(lp, labels)
    return ip, lp, images, labels


class TestIDX:
    def test_header_layout(self, idx_pair):
        ip, lp, images, _ = idx_pair
        raw = ip.read_bytes()
        assert struct.unpack(">IIII", raw[:16]) == (IMAGE_MAGIC, 5, 28, 28)
        assert struct.unpack(">II", lp.read_bytes()[:8]) == (LABEL_MAGIC, 5)

    def test_round_trip_bytes(self, idx_pair, tmp_path):
        ip, _, images, _ = idx_pair
        again = tmp_path / "again"
        write_idx(again, read_idx(ip, IMAGE_MAGIC))
        assert again.read_bytes() == ip.read_bytes()
        assert np.array_equal(read_idx(ip, IMAGE_MAGIC), images)

    def test_load_scales_and_flattens(self, idx_pair):
        ip, lp, images, labels = idx_pair
        ds = load_idx(ip, lp)
        assert ds.features.shape == (5, 784)
        assert ds.features.max() <= 1.0 and ds.features.min() >= 0.0
        assert np.array_equal(ds.features, images.reshape(5, -1) / 255.0)
        assert np.array_equal(ds.labels, labels.astype(np.int64))
        assert ds.n_classes == 10

    def test_gzip_transparent(self, idx_pair, tmp_path):
        ip, _, images, _ = idx_pair
        gz = tmp_path / "img.gz"
        gz.write_bytes(gzip.compress(ip.read_bytes()))
        assert np.array_equal(read_idx(gz, IMAGE_MAGIC), images)

    def test_bad_magic_names_expected(self, idx_pair):
        _, lp, _, _ = idx_pair
        with pytest.raises(IDXParseError, match="0x00000803") as exc:
            read_idx(lp, IMAGE_MAGIC)
        assert exc.value.offset == 0

    def test_truncated_payload(self, idx_pair, tmp_path):
        ip, _, _, _ = idx_pair
        cut = tmp_path / "cut"
        raw = ip.read_bytes()
        cut.write_bytes(raw[:-10])
        with pytest.raises(IDXParseError, match="offset") as exc:
            read_idx(cut, IMAGE_MAGIC)
        assert exc.value.offset == len(raw) - 10

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "tiny"
        p.write_bytes(b"\x00\x00")
        with pytest.raises(IDXParseError):
            read_idx(p, IMAGE_MAGIC)
        p.write_bytes(struct.pack(">I", IMAGE_MAGIC) + b"\x00\x00\x00\x01")
        with pytest.raises(IDXParseError, match="dimension"):
            read_idx(p, IMAGE_MAGIC)

    def test_count_mismatch(self, idx_pair, tmp_path):
        ip, _, _, _ = idx_pair
        lp = tmp_path / "few"
        write_idx(lp, np.zeros(3, dtype=np.uint8))
        with pytest.raises(ValueError, match="labels"):
            load_idx(ip, lp)


class TestMnistDiscovery:
    def layout(self, root, gz=False):
        r = make_rng(1)
        for imgs, lbls, n in (("train-images-idx3-ubyte", "train-labels-idx1-ubyte", 6),
                              ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 4)):
            for name, arr in ((imgs, r.integers(0, 256, (n, 28, 28), dtype=np.uint8)),
                              (lbls, r.integers(0, 10, n, dtype=np.uint8))):
                path = root / name
                write_idx(path, arr)
                if gz:
                    (root / (name + ".gz")).write_bytes(gzip.compress(path.read_bytes()))
                    path.unlink()

    @pytest.mark.parametrize("gz", [False, True])
    def test_find_and_load(self, tmp_path, gz):
        self.layout(tmp_path, gz)
        assert find_mnist(tmp_path) is not None
        train, test = load_mnist(tmp_path)
        assert (len(train), len(test), train.dim) == (6, 4, 784)

    def test_env_fallback(self, tmp_path, monkeypatch):
        self.layout(tmp_path)
        monkeypatch.setenv("GATEDNET_DATA_DIR", str(tmp_path))
        assert find_mnist() is not None

    def test_missing(self, tmp_path, monkeypatch):
        monkeypatch.delenv("GATEDNET_DATA_DIR", raising=False)
        assert find_mnist(tmp_path) is None
        with pytest.raises(FileNotFoundError, match=str(tmp_path)):
            load_mnist(tmp_path)


class TestBlobs:
    def test_size_and_labels(self):
        ds = synth_blobs(100, 2, 2, 1.0, make_rng(0))
        assert len(ds) == 200 and ds.dim == 2 and set(ds.labels.tolist()) == {0, 1}

    def test_deterministic(self):
        a = synth_blobs(20, 3, 4, 0.5, make_rng(5))
        b = synth_blobs(20, 3, 4, 0.5, make_rng(5))
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)

    def test_zero_spread_is_linearly_separable(self):
        ds = synth_blobs(30, 4, 5, 0.0, make_rng(2))
        # least-squares one-vs-rest linear classifier on [x, 1]
        X = np.hstack([ds.features, np.ones((len(ds), 1))])
        Y = np.eye(4)[ds.labels]
        coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
        assert ((X @ coef).argmax(axis=1) == ds.labels).mean() == 1.0

    def test_informative_subset(self):
        ds = synth_blobs(500, 3, 6, 0.1, make_rng(3), n_informative=2)
        means = np.array([ds.features[ds.labels == c].mean(axis=0) for c in range(3)])
        assert np.abs(means[:, 2:]).max() < 0.05
        assert np.ptp(means[:, :2], axis=0).min() > 0.1
        with pytest.raises(ValueError):
            synth_blobs(5, 3, 6, 0.1, make_rng(3), n_informative=7)

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_blobs(5, 1, 3, 1.0, make_rng(0))
        with pytest.raises(ValueError):
            synth_blobs(5, 2, 1, 1.0, make_rng(0))


class TestSplitsAndNormalization:
    def test_split_partition(self):
        ds = synth_blobs(25, 4, 3, 1.0, make_rng(0))
        tr, te = train_test_split(ds, 0.2, make_rng(1))
        assert len(tr) + len(te) == 100 and len(te) == 20
        rows = {tuple(r) for r in np.vstack([tr.features, te.features])}
        assert rows == {tuple(r) for r in ds.features}

    def test_standardize_uses_train_only(self):
        r = make_rng(0)
        tr = Dataset(r.normal(3.0, 2.0, size=(50, 4)), np.zeros(50, dtype=np.int64), 2)
        te = Dataset(r.normal(-5.0, 9.0, size=(20, 4)), np.zeros(20, dtype=np.int64), 2)
        str_, ste = standardize(tr, te)
        mean, std = tr.features.mean(axis=0), tr.features.std(axis=0) + 1e-8
        assert np.allclose(str_.features.mean(axis=0), 0.0, atol=1e-12)
        assert np.array_equal(ste.features, (te.features - mean) / std)
        assert np.array_equal(ste.normalization["mean"], mean)

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(2, dtype=np.int64), 2)

    def test_load_dataset_blobs(self):
        dc = DataConfig(source="blobs", n_per_class=10, classes=3, dim=4, standardize=True)
        tr, te = load_dataset(dc)
        assert tr.dim == 4 and len(tr) + len(te) == 30
        again = load_dataset(dc)
        assert np.array_equal(tr.features, again[0].features)


class TestBatches:
    def test_sizes(self):
        ds = synth_blobs(5, 2, 2, 1.0, make_rng(0))
        assert [len(b) for b in batches(ds, 4, 0, 1)] == [4, 4, 2]
        assert len(batches(ds, 10, 0, 1)) == 1
        assert len(batches(ds, 50, 0, 1)) == 1

    def test_order_depends_only_on_seed_and_epoch(self):
        ds = synth_blobs(50, 2, 2, 1.0, make_rng(0))
        a = np.concatenate(batches(ds, 7, 3, 2))
        assert np.array_equal(a, np.concatenate(batches(ds, 7, 3, 2)))
        assert not np.array_equal(a, np.concatenate(batches(ds, 7, 3, 3)))
        assert not np.array_equal(a, np.concatenate(batches(ds, 7, 4, 2)))

    def test_each_sample_once(self):
        ds = synth_blobs(33, 3, 2, 1.0, make_rng(0))
        idx = np.concatenate(batches(ds, 8, 1, 5))
        assert sorted(idx.tolist()) == list(range(99))

    def test_bad_size(self):
        with pytest.raises(ValueError):
            batches(synth_blobs(5, 2, 2, 1.0, make_rng(0)), 0, 0, 1)
