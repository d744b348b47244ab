import numpy as np
import pytest

from decalign.data import (
    MAGIC,
    DatasetFormatError,
    MultiViewDataset,
    RedundancyControl,
    apply_presence_dropout,
    class_balanced_split,
    generate_multiview,
    read_dataset,
    write_dataset,
)


class TestRedundancyControl:
    def test_latent_dim(self):
        ctrl = RedundancyControl(shared_dim=8, unique_dim=4)
        assert ctrl.latent_dim == 12
        assert ctrl.observed_dim == 12

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            RedundancyControl(noise_sigma=-0.1)

    def test_empty_latent_rejected(self):
        with pytest.raises(ValueError):
            RedundancyControl(shared_dim=0, unique_dim=0)

    def test_identity_needs_matching_view_dim(self):
        with pytest.raises(ValueError):
            RedundancyControl(shared_dim=2, unique_dim=2, view_dim=7,
                              identity_transforms=True)


class TestGenerateMultiview:
    def test_full_redundancy_views_identical(self):
        ctrl = RedundancyControl(
            shared_dim=5, unique_dim=0, noise_sigma=0.0, identity_transforms=True
        )
        ds = generate_multiview(2, 10, ctrl, n_views=3, seed=1)
        np.testing.assert_array_equal(ds.observations[0], ds.observations[1])
        np.testing.assert_array_equal(ds.observations[0], ds.observations[2])
        # and samples still differ from each other
        assert not np.allclose(ds.observations[0][0], ds.observations[0][1])

    def test_no_shared_information_views_uncorrelated(self):
        ctrl = RedundancyControl(shared_dim=0, unique_dim=6, noise_sigma=0.0,
                                 identity_transforms=True)
        ds = generate_multiview(1, 1000, ctrl, n_views=2, seed=2)
        a, b = ds.observations
        corr = np.corrcoef(a.T, b.T)[:6, 6:]
        assert np.abs(corr).max() < 0.1

    def test_shapes_and_balance(self):
        ctrl = RedundancyControl(shared_dim=8, unique_dim=4)
        ds = generate_multiview(3, 200, ctrl, n_views=3, seed=3)
        assert ds.sample_count == 600
        assert ds.input_dims == (12, 12, 12)
        assert np.bincount(ds.labels).tolist() == [200, 200, 200]
        assert ds.presence.all()

    def test_determinism(self):
        ctrl = RedundancyControl()
        a = generate_multiview(2, 50, ctrl, n_views=3, seed=9)
        b = generate_multiview(2, 50, ctrl, n_views=3, seed=9)
        for va, vb in zip(a.observations, b.observations):
            np.testing.assert_array_equal(va, vb)

    def test_view_dim_override(self):
        ctrl = RedundancyControl(shared_dim=4, unique_dim=2, view_dim=20)
        ds = generate_multiview(2, 5, ctrl, n_views=2, seed=0)
        assert ds.input_dims == (20, 20)


class TestPresenceDropout:
    def test_zero_drop_keeps_everything(self):
        ds = generate_multiview(2, 20, RedundancyControl(), seed=4)
        out = apply_presence_dropout(ds, 0.0, seed=5)
        assert out.presence.all()

    def test_drop_fraction_matches_probability(self):
        # 10000 cells; with 4 views the keep-one-view re-roll barely biases
        # the binomial expectation
        ds = generate_multiview(2, 1250, RedundancyControl(shared_dim=2, unique_dim=1),
                                n_views=4, seed=6)
        out = apply_presence_dropout(ds, 0.1, seed=7)
        assert out.presence.size == 10000
        absent = 1.0 - out.presence.mean()
        assert absent == pytest.approx(0.1, abs=0.01)

    def test_seeded_determinism(self):
        ds = generate_multiview(2, 100, RedundancyControl(), seed=8)
        a = apply_presence_dropout(ds, 0.5, seed=9)
        b = apply_presence_dropout(ds, 0.5, seed=9)
        np.testing.assert_array_equal(a.presence, b.presence)

    def test_every_sample_keeps_one_view(self):
        ds = generate_multiview(1, 500, RedundancyControl(shared_dim=1, unique_dim=1),
                                n_views=2, seed=10)
        out = apply_presence_dropout(ds, 0.9, seed=11)
        assert out.presence.any(axis=1).all()

    def test_invalid_probability(self):
        ds = generate_multiview(1, 5, RedundancyControl(), seed=0)
        with pytest.raises(ValueError):
            apply_presence_dropout(ds, 1.0)


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        ds = generate_multiview(3, 20, RedundancyControl(shared_dim=3, unique_dim=2),
                                n_views=3, seed=12)
        ds = apply_presence_dropout(ds, 0.2, seed=13)
        path = tmp_path / "data.shaf"
        write_dataset(ds, path)
        back = read_dataset(path)
        assert back.sample_count == ds.sample_count
        assert back.num_classes == 3
        np.testing.assert_array_equal(back.presence, ds.presence)
        np.testing.assert_array_equal(back.labels, ds.labels)
        for orig, loaded in zip(ds.observations, back.observations):
            np.testing.assert_array_equal(loaded, orig.astype(np.float32).astype(np.float64))

    def test_round_trip_bit_exact_at_float32(self, tmp_path):
        ds = generate_multiview(2, 10, RedundancyControl(), seed=14)
        first = tmp_path / "a.shaf"
        second = tmp_path / "b.shaf"
        write_dataset(ds, first)
        write_dataset(read_dataset(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_identical_params_identical_bytes(self, tmp_path):
        a = tmp_path / "a.shaf"
        b = tmp_path / "b.shaf"
        write_dataset(generate_multiview(2, 10, RedundancyControl(), seed=15), a)
        write_dataset(generate_multiview(2, 10, RedundancyControl(), seed=15), b)
        assert a.read_bytes() == b.read_bytes()

    def test_unlabeled_round_trip(self, tmp_path):
        ds = generate_multiview(2, 10, RedundancyControl(), seed=16)
        unlabeled = MultiViewDataset(ds.observations, ds.presence)
        path = tmp_path / "u.shaf"
        write_dataset(unlabeled, path)
        back = read_dataset(path)
        assert back.labels is None
        assert back.num_classes == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.shaf"
        path.write_bytes(b"NOTMAG" + b"\x00" * 64)
        with pytest.raises(DatasetFormatError, match="offset 0"):
            read_dataset(path)

    def test_truncated_mask_names_section(self, tmp_path):
        ds = generate_multiview(2, 10, RedundancyControl(), seed=17)
        path = tmp_path / "t.shaf"
        write_dataset(ds, path)
        blob = path.read_bytes()
        # labels are 4 * 20 bytes, mask is ceil(20*2/8) = 5 bytes; cut into the mask
        cut = len(blob) - 4 * 20 - 3
        path.write_bytes(blob[:cut])
        with pytest.raises(DatasetFormatError, match="presence mask"):
            read_dataset(path)

    def test_version_mismatch(self, tmp_path):
        ds = generate_multiview(1, 2, RedundancyControl(), seed=18)
        path = tmp_path / "v.shaf"
        write_dataset(ds, path)
        blob = bytearray(path.read_bytes())
        blob[len(MAGIC)] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(DatasetFormatError, match="version 99"):
            read_dataset(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        ds = generate_multiview(1, 2, RedundancyControl(), seed=19)
        path = tmp_path / "x.shaf"
        write_dataset(ds, path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(DatasetFormatError, match="trailing"):
            read_dataset(path)


class TestSplit:
    def test_class_balanced_split(self):
        ds = generate_multiview(3, 30, RedundancyControl(), seed=20)
        train, test = class_balanced_split(ds, 20)
        assert np.bincount(train.labels).tolist() == [20, 20, 20]
        assert np.bincount(test.labels).tolist() == [10, 10, 10]

    def test_split_needs_labels(self):
        ds = generate_multiview(2, 10, RedundancyControl(), seed=21)
        unlabeled = MultiViewDataset(ds.observations, ds.presence)
        with pytest.raises(ValueError, match="labeled"):
            class_balanced_split(unlabeled, 5)

    def test_split_too_large(self):
        ds = generate_multiview(2, 10, RedundancyControl(), seed=22)
        with pytest.raises(ValueError, match="fewer"):
            class_balanced_split(ds, 11)

    def test_subset_preserves_invariants(self):
        ds = generate_multiview(2, 10, RedundancyControl(), seed=23)
        sub = ds.subset([0, 3, 5])
        assert sub.sample_count == 3
        assert sub.num_classes == 2
