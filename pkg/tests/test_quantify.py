import numpy as np
import pytest

from latentsr import quantify as Q, synthdata as sd
from latentsr.errors import (EmptyMaskError, InvalidParameterError,
                             NoSpotsError, SplitLeakageError)


def _render(assay, label, **overrides):
    base = dict(
        assay=assay,
        class_label=label,
        nuclear_ratio=2.0 if label == "positive" and assay == "translocation" else 1.0,
        spot_count=2,
        spot_radius_px=3.0,
        nucleus_center=(32.0, 32.0),
        nucleus_radius_px=12.0,
        rng_seed=5,
    )
    base.update(overrides)
    p = sd.PhenotypeParams(**base)
    return sd.render_phenotype(p), p


class TestTranslocationRatio:
    def test_recovers_ground_truth(self):
        img, p = _render("translocation", "positive", nuclear_ratio=2.0)
        m = Q.translocation_ratio(img)
        assert m.value == pytest.approx(2.0, abs=0.15)
        assert m.mask_stats["nucleus_area"] > 0

    def test_uniform_reporter_gives_unit_ratio(self):
        img, _ = _render("translocation", "negative", nuclear_ratio=0.5)
        img = img.copy()
        img[:, :, 1] = 0.5  # overwrite reporter with a constant
        assert Q.translocation_ratio(img).value == pytest.approx(1.0, abs=0.05)

    def test_all_zero_image_raises(self):
        with pytest.raises(EmptyMaskError):
            Q.translocation_ratio(np.zeros((64, 64, 3), dtype=np.float32))

    def test_oracle_agreement_over_many_renders(self):
        rng = np.random.default_rng(1)
        rel_errors = []
        for _ in range(500):
            p = sd.sample_params("translocation",
                                 rng.choice(sd.CLASSES), rng)
            img = sd.render_phenotype(p)
            measured = Q.translocation_ratio(img).value
            rel_errors.append(abs(measured - p.nuclear_ratio) / p.nuclear_ratio)
        assert np.mean(rel_errors) <= 0.10


class TestMeanSpotArea:
    def test_single_disk_area(self):
        img, _ = _render("golgi", "negative", spot_count=1, spot_radius_px=6.0,
                         rng_seed=7)
        m = Q.mean_spot_area(img)
        assert m.value == pytest.approx(np.pi * 36, rel=0.15)

    def test_two_identical_disks_same_mean(self):
        # construct two disjoint disks directly
        rr, cc = np.mgrid[0:64, 0:64]
        img = np.zeros((64, 64, 3), dtype=np.float32)
        for center in ((20.0, 20.0), (44.0, 44.0)):
            d = np.hypot(rr - center[0], cc - center[1])
            img[:, :, 2] += 0.9 / (1 + np.exp((d - 5.0) / 0.6))
        img[:, :, 0] = 0.5  # placate nothing; spot channel is what matters
        two = Q.mean_spot_area(img).value
        one_img = np.zeros((64, 64, 3), dtype=np.float32)
        d = np.hypot(rr - 20.0, cc - 20.0)
        one_img[:, :, 2] = 0.9 / (1 + np.exp((d - 5.0) / 0.6))
        one = Q.mean_spot_area(one_img).value
        assert two == pytest.approx(one, rel=0.05)

    def test_blank_channel_raises(self):
        img = np.zeros((64, 64, 3), dtype=np.float32)
        img[:, :, 0] = 0.8
        with pytest.raises(NoSpotsError):
            Q.mean_spot_area(img)

    def test_monotone_in_spot_radius(self):
        rng = np.random.default_rng(2)
        means = []
        for radius in (2.0, 3.0, 6.0, 8.0):
            vals = []
            for k in range(40):
                assay_label = ("golgi",
                               "positive" if radius <= 3.0 else "negative")
                p = sd.PhenotypeParams(
                    assay=assay_label[0], class_label=assay_label[1],
                    nuclear_ratio=1.0,
                    spot_count=2 if radius > 3.0 else 8,
                    spot_radius_px=radius,
                    nucleus_center=(32.0, 32.0), nucleus_radius_px=12.0,
                    rng_seed=int(rng.integers(2**31)))
                vals.append(Q.mean_spot_area(sd.render_phenotype(p)).value)
            means.append(np.mean(vals))
        assert means == sorted(means)


class TestCohensD:
    def test_sign_and_scale(self):
        rng = np.random.default_rng(3)
        a = rng.normal(2.0, 0.1, 200)
        b = rng.normal(0.5, 0.1, 200)
        d = Q.cohens_d(a, b)
        assert d > 10  # disjoint distributions: huge effect
        assert Q.cohens_d(b, a) == pytest.approx(-d, rel=1e-12)

    def test_zero_for_identical(self):
        a = np.ones(50)
        assert Q.cohens_d(a, a) == 0.0


class TestAssayContracts:
    def test_n_below_100_rejected(self):
        with pytest.raises(InvalidParameterError):
            Q.run_assay(None, None, "translocation", n=50)

    def test_unknown_assay_rejected(self):
        with pytest.raises(InvalidParameterError):
            Q.run_assay(None, None, "mitosis", n=100)

    def test_hr_only_tier_effect_size(self):
        # measurement-only tiers skip reconstruction: fast oracle check
        report = Q.run_assay(None, None, "translocation", n=100, seed=4,
                             tiers=("HR",))
        assert report.effect_sizes["HR"] > 2.0
        assert report.rank_sum_pvalues["HR"] < 0.01
        assert len(report.distributions["HR"]["negative"]) >= 30

    def test_golgi_hr_effect_negative_direction(self):
        # positive class has smaller spots, so positive-minus-negative is < 0
        report = Q.run_assay(None, None, "golgi", n=100, seed=5, tiers=("HR",))
        assert report.effect_sizes["HR"] < -2.0


class TestClassifierGuards:
    def test_split_leakage_detected(self):
        ids = [f"clf_train_translocation_0_{i}" for i in range(10)]
        with pytest.raises(SplitLeakageError):
            Q.classifier_experiment(None, None, "translocation",
                                    n_train=5, n_test=5,
                                    generator_train_ids=ids, seed=0)
