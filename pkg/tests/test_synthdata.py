import json

import numpy as np
import pytest

from latentsr import synthdata as sd
from latentsr.errors import InvalidParameterError


def _params(**overrides):
    base = dict(
        assay="translocation",
        class_label="positive",
        nuclear_ratio=2.0,
        spot_count=3,
        spot_radius_px=2.5,
        nucleus_center=(32.0, 32.0),
        nucleus_radius_px=12.0,
        rng_seed=42,
    )
    base.update(overrides)
    return sd.PhenotypeParams(**base)


class TestPhenotypeParams:
    def test_valid_params_pass(self):
        _params().validate()

    def test_nucleus_must_fit_frame(self):
        with pytest.raises(InvalidParameterError):
            _params(nucleus_center=(5.0, 32.0)).validate()
        with pytest.raises(InvalidParameterError):
            _params(nucleus_radius_px=40.0).validate()

    def test_class_range_enforced(self):
        with pytest.raises(InvalidParameterError):
            _params(nuclear_ratio=1.0).validate()  # positive needs [1.8, 2.2]
        with pytest.raises(InvalidParameterError):
            _params(assay="golgi", class_label="negative", spot_count=7,
                    spot_radius_px=7.0).validate()

    def test_negative_spot_count_rejected(self):
        with pytest.raises(InvalidParameterError):
            _params(spot_count=-1).validate()

    def test_dict_round_trip(self):
        p = _params()
        assert sd.PhenotypeParams.from_dict(
            json.loads(json.dumps(p.to_dict()))) == p


class TestRenderer:
    def test_deterministic(self):
        p = _params()
        a = sd.render_phenotype(p)
        b = sd.render_phenotype(p)
        assert np.array_equal(a, b)

    def test_output_shape_and_range(self):
        img = sd.render_phenotype(_params())
        assert img.shape == (64, 64, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_no_spots_channel_is_noise_only(self):
        p = _params(spot_count=0)
        img = sd.render_phenotype(p)
        assert img[:, :, 2].max() <= 0.02 + 4 * sd.NOISE_SIGMA

    def test_nuclear_ratio_recovered_by_geometric_masks(self):
        p = _params(nuclear_ratio=2.0)
        img = sd.render_phenotype(p)
        nuc = sd.nucleus_mask(p)
        ring = sd.annulus_mask(p)
        measured = img[:, :, 1][nuc].mean() / img[:, :, 1][ring].mean()
        assert measured == pytest.approx(2.0, abs=0.1)

    def test_small_frame_rejected(self):
        with pytest.raises(InvalidParameterError):
            sd.render_phenotype(_params(), size=8)

    def test_pixel_range_over_many_draws(self):
        # domain-wide invariant: every render stays inside [0, 1]
        rng = np.random.default_rng(7)
        n_per_group = 2500  # 10,000 total across the four groups
        for assay in sd.ASSAYS:
            for label in sd.CLASSES:
                for _ in range(n_per_group // 50):
                    p = sd.sample_params(assay, label, rng)
                    img = sd.render_phenotype(p)
                    assert img.min() >= 0.0 and img.max() <= 1.0
        # spot-check a larger parameter sweep without rendering every one
        for _ in range(5000):
            p = sd.sample_params(
                rng.choice(sd.ASSAYS), rng.choice(sd.CLASSES), rng)
            p.validate()


class TestSampling:
    def test_reproducible_per_seed(self):
        a = sd.sample_dataset("golgi", "positive", 5, seed=9)
        b = sd.sample_dataset("golgi", "positive", 5, seed=9)
        assert [p for _, p in a] == [p for _, p in b]
        assert all(np.array_equal(x, y) for (x, _), (y, _) in zip(a, b))

    def test_n_zero_rejected(self):
        with pytest.raises(InvalidParameterError):
            sd.sample_dataset("golgi", "positive", 0, seed=1)

    def test_translocation_class_means_separate(self):
        neg = sd.sample_dataset("translocation", "negative", 200, seed=3)
        pos = sd.sample_dataset("translocation", "positive", 200, seed=4)
        mean_neg = np.mean([p.nuclear_ratio for _, p in neg])
        mean_pos = np.mean([p.nuclear_ratio for _, p in pos])
        assert mean_pos - mean_neg >= 1.0

    def test_class_ranges_disjoint_by_construction(self):
        neg = sd.sample_dataset("golgi", "negative", 100, seed=5)
        pos = sd.sample_dataset("golgi", "positive", 100, seed=6)
        assert max(p.spot_count for _, p in neg) < min(p.spot_count for _, p in pos)
        assert (min(p.spot_radius_px for _, p in neg)
                > max(p.spot_radius_px for _, p in pos))


class TestExport:
    def test_round_trip(self, tmp_path):
        items = sd.sample_dataset("translocation", "negative", 3, seed=11)
        manifest = sd.export_dataset(items, tmp_path / "ds", seed=11)
        loaded = sd.load_dataset(manifest)
        assert len(loaded) == 3
        for (img_a, p_a), (img_b, p_b) in zip(items, loaded):
            assert p_a == p_b
            # 16-bit quantization bounds the round-trip error
            assert np.abs(img_a - img_b).max() <= 1.0 / 65535.0 + 1e-7

    def test_manifest_lists_files(self, tmp_path):
        items = sd.sample_dataset("golgi", "positive", 2, seed=12)
        manifest_path = sd.export_dataset(items, tmp_path / "ds", seed=12)
        manifest = json.loads(manifest_path.read_text())
        assert manifest["n"] == 2
        assert manifest["seed"] == 12
        assert all((tmp_path / "ds" / e["image"]).exists()
                   for e in manifest["files"])
