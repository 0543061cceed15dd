import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdrg.config import Config
from tdrg.data import (SHAPES, SyntheticDatasetConfig, default_cooccurrence, expected_marginals,
                       generate_dataset, generate_split, label_cooccurrence, load_dataset, render,
                       sample_label_set, stamp_mask)
from tdrg.errors import ConfigError, GenerationError


def tiny(**kw):
    return SyntheticDatasetConfig(**{"n_train": 12, "n_test": 6, **kw})


def free_sampling(n_cls=5, seed=0):
    # no context classes and no cap, so rejection never biases the draw
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 0.7, (n_cls, n_cls))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 1.0)
    return SyntheticDatasetConfig(n_cls=n_cls, cooccurrence=a, context_rule={}, max_labels=n_cls)


class TestConfig:
    def test_defaults_valid(self):
        cfg = SyntheticDatasetConfig()
        assert cfg.cooccurrence.shape == (8, 8)
        np.testing.assert_array_equal(cfg.cooccurrence, cfg.cooccurrence.T)

    @pytest.mark.parametrize("n", [4, 8, 12])
    def test_default_matrix_invariants(self, n):
        a = default_cooccurrence(n)
        assert np.all(np.diag(a) == 1) and np.allclose(a, a.T) and a.min() >= 0 and a.max() <= 1

    def test_asymmetric(self):
        a = np.eye(8)
        a[0, 1] = 0.5
        with pytest.raises(ConfigError):
            SyntheticDatasetConfig(cooccurrence=a)

    def test_diagonal(self):
        with pytest.raises(ConfigError):
            SyntheticDatasetConfig(cooccurrence=np.full((8, 8), 0.5))

    def test_image_size(self):
        with pytest.raises(ConfigError, match="multiple of 64"):
            SyntheticDatasetConfig(image_size=48)

    def test_from_config(self):
        cfg = SyntheticDatasetConfig.from_config(Config({"data.n_train": 7, "data.small_classes": "1,3"}))
        assert cfg.n_train == 7 and cfg.small_classes == (1, 3)

    def test_confusable_pairs_share_stamps(self):
        cfg = SyntheticDatasetConfig()
        for a, b in [(0, 6), (1, 7)]:
            assert cfg.shape_vocabulary[a] == cfg.shape_vocabulary[b]
            assert cfg.context_rule[a] != cfg.context_rule[b]


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("size", [6, 9, 16])
def test_stamp_masks_nonempty(shape, size):
    m = stamp_mask(shape, size)
    assert m.shape == (size, size) and 0 < m.sum() <= size * size


class TestSampling:
    def test_identity_gives_single_labels(self):
        split = generate_split(tiny(cooccurrence=np.eye(8)), 40, 0)
        assert np.all(split.labels.sum(1) == 1)

    def test_infeasible(self):
        cfg = SyntheticDatasetConfig(cooccurrence=np.ones((8, 8)), context_rule={}, max_labels=2)
        with pytest.raises(GenerationError, match="no feasible"):
            sample_label_set(cfg, np.random.default_rng(0))

    def test_context_classes_exclusive(self):
        cfg = SyntheticDatasetConfig()
        rng = np.random.default_rng(3)
        ctx = list(cfg.context_rule)
        for _ in range(500):
            y, _ = sample_label_set(cfg, rng)
            assert y[ctx].sum() <= 1 and y.sum() <= cfg.max_labels

    def test_monte_carlo_cooccurrence(self):
        cfg = free_sampling()
        rng = np.random.default_rng(0)
        counts = np.zeros((5, 5))
        seen = np.zeros(5)
        for _ in range(10_000):
            y, primary = sample_label_set(cfg, rng)
            counts[primary] += y
            seen[primary] += 1
        np.testing.assert_allclose(counts / seen[:, None], cfg.cooccurrence, atol=0.03)

    def test_marginals(self):
        cfg = free_sampling(seed=4)
        rng = np.random.default_rng(1)
        ys = np.array([sample_label_set(cfg, rng)[0] for _ in range(10_000)])
        np.testing.assert_allclose(ys.mean(0), expected_marginals(cfg.cooccurrence), atol=0.03)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_primary_always_present(self, seed):
        y, primary = sample_label_set(SyntheticDatasetConfig(), np.random.default_rng(seed))
        assert y[primary] == 1


class TestRender:
    def test_range_and_dtype(self):
        cfg = tiny()
        img = render(np.eye(8, dtype=np.uint8)[2], cfg, np.random.default_rng(0))
        assert img.shape == (3, 64, 64) and img.dtype == np.float32
        assert img.min() >= 0 and img.max() <= 1

    @pytest.mark.parametrize("seed", range(5))
    def test_small_classes_stay_small(self, seed):
        cfg = tiny(small_classes=tuple(range(8)), noise=0.0, texture_contrast=0.0)
        img = render(np.eye(8, dtype=np.uint8)[seed], cfg, np.random.default_rng(seed))
        values, counts = np.unique(img.reshape(3, -1), axis=1, return_counts=True)
        bg = values[:, np.argmax(counts)]  # plain background is the most common colour
        ys, xs = np.nonzero(np.any(img != bg[:, None, None], axis=0))
        assert np.ptp(ys) < cfg.small_size[1] and np.ptp(xs) < cfg.small_size[1]

    def test_context_background(self):
        cfg = tiny(noise=0.0)
        img = render(np.eye(8, dtype=np.uint8)[0], cfg, np.random.default_rng(0))
        # horizontal stripes: rows the stamp misses are constant, and rows differ
        constant = img[0].std(axis=1) < 1e-6
        assert constant.mean() > 0.6 and img[0][constant, 0].std() > 0


class TestDataset:
    def test_deterministic_bytes(self, tmp_path):
        cfg = tiny()
        generate_dataset(cfg, tmp_path / "a")
        generate_dataset(cfg, tmp_path / "b")
        for rel in ["train/manifest.txt", "test/manifest.txt", "train/000003.tdrg", "test/000005.tdrg"]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_seed_changes_data(self):
        a = generate_split(tiny(seed=0), 4, 0)
        b = generate_split(tiny(seed=1), 4, 0)
        assert not np.array_equal(a.images, b.images)

    def test_round_trip(self, tmp_path):
        ds = generate_dataset(tiny(), tmp_path)
        back = load_dataset(tmp_path)
        np.testing.assert_array_equal(back.train.images, ds.train.images)
        np.testing.assert_array_equal(back.test.labels, ds.test.labels)
        np.testing.assert_allclose(back.config.cooccurrence, ds.config.cooccurrence, atol=1e-6)

    def test_manifest_format(self, tmp_path):
        ds = generate_dataset(tiny(), tmp_path)
        first = (tmp_path / "train" / "manifest.txt").read_text().splitlines()[0].split()
        assert first[0] == "000000.tdrg"
        assert [int(b) for b in first[1:]] == ds.train.labels[0].tolist()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)


def test_label_cooccurrence_conditional():
    y = np.array([[1, 1, 0], [1, 0, 0], [0, 1, 1], [1, 1, 1]])
    a = label_cooccurrence(y)
    np.testing.assert_allclose(a[0], [1, 2 / 3, 1 / 3])
    np.testing.assert_allclose(np.diag(a), 1)


def test_label_cooccurrence_absent_class():
    a = label_cooccurrence(np.array([[1, 0], [1, 0]]))
    np.testing.assert_array_equal(a[1], [0, 0])
