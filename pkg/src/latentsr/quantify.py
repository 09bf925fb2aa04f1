"""Handcrafted interpretable-feature measurements and the two-step pipeline.

The point of the reconstruction stage is that a downstream, fully
transparent measurement still works: segment the nucleus, read the
nucleo-cytoplasmic intensity ratio (translocation assay), or segment the
spot channel and read the mean spot area (golgi assay). `run_assay` runs
the whole two-step pipeline (render -> degrade -> reconstruct -> measure)
per condition and tier, and `classifier_experiment` contrasts a learned
classifier on the same tiers with disjoint data splits throughout.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage, stats
from skimage.filters import threshold_otsu
from torch import nn

from . import degrade, generator as gen_mod, rls, synthdata
from .errors import (EmptyMaskError, InvalidParameterError, NoSpotsError,
                     SplitLeakageError, ZeroCytoplasmError)
from .generator import images_to_tensor

log = logging.getLogger(__name__)

RING_DILATION_PX = 6
MIN_SPOT_AREA_PX = 2
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
# factors chosen so each assay is measured at its hardest workable scale
ASSAY_FACTORS = {"translocation": 16, "golgi": 8}

TIERS = ("HR", "SR_RLS", "SR_no_regu", "LR_upsampled")


@dataclass
class FeatureMeasurement:
    assay: str
    value: float
    mask_stats: dict
    image_id: str = ""


def _disk(radius: int) -> np.ndarray:
    rr, cc = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return rr ** 2 + cc ** 2 <= radius ** 2


def translocation_ratio(img: np.ndarray, image_id: str = "") -> FeatureMeasurement:
    """Nuclear over cytoplasmic mean intensity of the reporter channel.

    Nucleus mask: Otsu threshold on channel 0. Cytoplasm reference: the ring
    obtained by dilating the nucleus mask 6 px and subtracting it.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidParameterError(f"expected (H, W, 3) image, got {img.shape}")
    ch0, ch1 = img[:, :, 0], img[:, :, 1]
    if ch0.max() <= 0:
        raise EmptyMaskError("nucleus channel is empty")
    mask = ch0 > threshold_otsu(ch0)
    if not mask.any():
        raise EmptyMaskError("Otsu produced an empty nucleus mask")
    ring = ndimage.binary_dilation(mask, structure=_disk(RING_DILATION_PX)) & ~mask
    if not ring.any():
        raise ZeroCytoplasmError("dilation ring is empty")
    ring_mean = float(ch1[ring].mean())
    if ring_mean < 1e-4:
        raise ZeroCytoplasmError(f"cytoplasmic mean {ring_mean:.2e} below 1e-4")
    value = float(ch1[mask].mean()) / ring_mean
    return FeatureMeasurement(
        assay="translocation",
        value=value,
        mask_stats={"nucleus_area": int(mask.sum()), "ring_area": int(ring.sum())},
        image_id=image_id,
    )


def mean_spot_area(img: np.ndarray, image_id: str = "") -> FeatureMeasurement:
    """Mean 8-connected component area of the thresholded spot channel."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidParameterError(f"expected (H, W, 3) image, got {img.shape}")
    ch2 = img[:, :, 2]
    if ch2.max() <= 0 or np.ptp(ch2) < 1e-6:
        raise NoSpotsError("spot channel carries no signal")
    mask = ch2 > threshold_otsu(ch2)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        raise NoSpotsError("no connected components above the Otsu level")
    areas = ndimage.sum_labels(np.ones_like(ch2), labels, np.arange(1, n + 1))
    areas = areas[areas >= MIN_SPOT_AREA_PX]
    if len(areas) == 0:
        raise NoSpotsError("no components of at least 2 px survive")
    return FeatureMeasurement(
        assay="golgi",
        value=float(areas.mean()),
        mask_stats={"spot_count": int(len(areas)),
                    "total_spot_area": float(areas.sum())},
        image_id=image_id,
    )


def measure(assay: str, img: np.ndarray, image_id: str = "") -> FeatureMeasurement:
    if assay == "translocation":
        return translocation_ratio(img, image_id)
    if assay == "golgi":
        return mean_spot_area(img, image_id)
    raise InvalidParameterError(f"unknown assay {assay!r}")


# ---------------------------------------------------------------------------
# the two-step assay pipeline
# ---------------------------------------------------------------------------

def cohens_d(a, b) -> float:
    """Effect size between two measurement samples (positive - negative)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    pooled = np.sqrt((a.var(ddof=1) * (len(a) - 1) + b.var(ddof=1) * (len(b) - 1))
                     / (len(a) + len(b) - 2))
    if pooled == 0:
        return 0.0
    return float((a.mean() - b.mean()) / pooled)


def upsample_nearest(y: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(y, factor, axis=0), factor, axis=1)


@dataclass
class AssayReport:
    assay: str
    factor: int
    n_per_condition: int
    distributions: dict            # tier -> {"negative": [...], "positive": [...]}
    effect_sizes: dict             # tier -> Cohen's d (positive vs negative)
    rank_sum_pvalues: dict         # tier -> Wilcoxon rank-sum p-value
    failures: dict                 # tier -> count of unmeasurable images

    def to_json_dict(self):
        return {
            "assay": self.assay,
            "factor": self.factor,
            "n_per_condition": self.n_per_condition,
            "effect_sizes": self.effect_sizes,
            "rank_sum_pvalues": self.rank_sum_pvalues,
            "failures": self.failures,
            "distributions": {
                tier: {k: [float(v) for v in vals] for k, vals in dists.items()}
                for tier, dists in self.distributions.items()
            },
        }


def _measure_set(assay, images, tier, failures):
    vals = []
    for i, img in enumerate(images):
        try:
            vals.append(measure(assay, img).value)
        except (EmptyMaskError, NoSpotsError, ZeroCytoplasmError):
            failures[tier] = failures.get(tier, 0) + 1
    return vals


def run_assay(generator, flow, assay: str, n: int, seed: int = 0,
              factor: int = None, config: rls.RLSConfig = None,
              tiers=TIERS, batch_size: int = 32) -> AssayReport:
    """Render n images per condition, reconstruct, measure on every tier."""
    if n < 100:
        raise InvalidParameterError(f"need n >= 100 per condition, got {n}")
    if assay not in ASSAY_FACTORS:
        raise InvalidParameterError(f"unknown assay {assay!r}")
    factor = factor or ASSAY_FACTORS[assay]
    base = config or rls.RLSConfig()
    spec = degrade.DegradationSpec(downscale_factor=factor)

    distributions = {tier: {} for tier in tiers}
    failures = {}
    for cls_i, condition in enumerate(synthdata.CLASSES):
        items = synthdata.sample_dataset(assay, condition, n,
                                         seed * 101 + cls_i)
        hr = [im for im, _ in items]
        lr = [degrade.observe(im, spec) for im in hr]

        tier_images = {}
        if "HR" in tiers:
            tier_images["HR"] = hr
        if "LR_upsampled" in tiers:
            tier_images["LR_upsampled"] = [upsample_nearest(y, factor) for y in lr]
        for tier, variant in (("SR_RLS", "full"), ("SR_no_regu", "no_regu")):
            if tier not in tiers:
                continue
            cfg = base.replace(variant=variant)
            recon = []
            for start in range(0, n, batch_size):
                results = rls.superresolve_batch(
                    np.stack(lr[start:start + batch_size]), generator, flow,
                    spec, cfg)
                recon.extend(r.sr_image for r in results)
            tier_images[tier] = recon
            log.info("assay %s/%s: reconstructed %d images (%s)",
                     assay, condition, n, variant)

        for tier, images in tier_images.items():
            distributions[tier][condition] = _measure_set(
                assay, images, tier, failures)

    effect_sizes, pvalues = {}, {}
    for tier in tiers:
        neg = distributions[tier].get("negative", [])
        pos = distributions[tier].get("positive", [])
        if len(neg) >= 2 and len(pos) >= 2:
            effect_sizes[tier] = cohens_d(pos, neg)
            pvalues[tier] = float(stats.ranksums(pos, neg).pvalue)
    return AssayReport(
        assay=assay,
        factor=factor,
        n_per_condition=n,
        distributions=distributions,
        effect_sizes=effect_sizes,
        rank_sum_pvalues=pvalues,
        failures=failures,
    )


# ---------------------------------------------------------------------------
# phenotype classifier experiment
# ---------------------------------------------------------------------------

class SmallCNN(nn.Module):
    """Compact phenotype classifier; `lr_native` skips the early stride."""

    def __init__(self, input_size: int = 64):
        super().__init__()
        chans = (16, 24, 32, 48)
        layers = []
        prev = 3
        size = input_size
        for ch in chans:
            stride = 2 if size > 4 else 1
            layers += [nn.Conv2d(prev, ch, 3, stride=stride, padding=1),
                       nn.LeakyReLU(0.2)]
            size = size // stride
            prev = ch
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev, 2)

    def forward(self, x):
        h = self.features(x).mean(dim=(2, 3))
        return self.head(h)


def train_classifier(images, labels, input_size=64, epochs: int = 10,
                     batch_size: int = 64, lr: float = 1e-3, seed: int = 0):
    torch.manual_seed(seed)
    model = SmallCNN(input_size)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    data = images_to_tensor(images)
    targets = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    shuffler = torch.Generator().manual_seed(seed + 1)
    for epoch in range(epochs):
        order = torch.randperm(len(data), generator=shuffler)
        for start in range(0, len(data) - 1, batch_size):
            idx = order[start:start + batch_size]
            loss = F.cross_entropy(model(data[idx]), targets[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    model.eval()
    return model


def classifier_accuracy(model, images, labels) -> float:
    data = images_to_tensor(images)
    targets = np.asarray(labels)
    preds = []
    with torch.no_grad():
        for start in range(0, len(data), 256):
            preds.append(model(data[start:start + 256]).argmax(dim=1).numpy())
    return float((np.concatenate(preds) == targets).mean())


def _split_ids(prefix, n):
    return [f"{prefix}_{i}" for i in range(n)]


def classifier_experiment(generator, flow, assay: str,
                          n_train: int = 300, n_test: int = 100,
                          generator_train_ids=(), seed: int = 0,
                          factor: int = None, config: rls.RLSConfig = None,
                          epochs: int = 10, shuffle_labels: bool = False,
                          batch_size: int = 32) -> dict:
    """Accuracy of an HR-trained classifier on HR and SR tiers, plus an
    LR-native classifier on raw LR inputs.

    The three id namespaces (generator training, classifier training, test)
    are disjoint by construction; the guard raises if they ever collide.
    """
    factor = factor or ASSAY_FACTORS[assay]
    base = config or rls.RLSConfig()
    spec = degrade.DegradationSpec(downscale_factor=factor)

    train_ids = _split_ids(f"clf_train_{assay}_{seed}", 2 * n_train)
    test_ids = _split_ids(f"clf_test_{assay}_{seed}", 2 * n_test)
    all_splits = [set(generator_train_ids), set(train_ids), set(test_ids)]
    for i in range(len(all_splits)):
        for j in range(i + 1, len(all_splits)):
            overlap = all_splits[i] & all_splits[j]
            if overlap:
                raise SplitLeakageError(
                    f"image ids shared between splits: {sorted(overlap)[:5]}")

    def render_split(n, seed_offset):
        images, labels = [], []
        for cls_i, condition in enumerate(synthdata.CLASSES):
            items = synthdata.sample_dataset(
                assay, condition, n, seed * 7919 + seed_offset + cls_i)
            images.extend(im for im, _ in items)
            labels.extend([cls_i] * n)
        return images, np.array(labels)

    train_imgs, train_labels = render_split(n_train, 1000)
    test_imgs, test_labels = render_split(n_test, 2000)
    if shuffle_labels:
        train_labels = np.random.default_rng(seed).permutation(train_labels)

    hr_model = train_classifier(train_imgs, train_labels, epochs=epochs,
                                seed=seed)

    lr_train = [degrade.observe(im, spec) for im in train_imgs]
    lr_test = [degrade.observe(im, spec) for im in test_imgs]
    lr_size = synthdata.DEFAULT_SIZE // factor
    lr_model = train_classifier(lr_train, train_labels, input_size=lr_size,
                                epochs=epochs, seed=seed + 1)

    table = {
        "HR": classifier_accuracy(hr_model, test_imgs, test_labels),
        "LR": classifier_accuracy(lr_model, lr_test, test_labels),
    }
    for column, variant in (("RLS", "full"), ("no_regu", "no_regu")):
        cfg = base.replace(variant=variant)
        recon = []
        for start in range(0, len(lr_test), batch_size):
            results = rls.superresolve_batch(
                np.stack(lr_test[start:start + batch_size]), generator, flow,
                spec, cfg)
            recon.extend(r.sr_image for r in results)
        table[column] = classifier_accuracy(hr_model, recon, test_labels)
        log.info("classifier %s tier %s: %.3f", assay, column, table[column])
    return {"assay": assay, "factor": factor, "accuracy": table,
            "n_train_per_condition": n_train, "n_test_per_condition": n_test,
            "shuffled_labels": shuffle_labels}
