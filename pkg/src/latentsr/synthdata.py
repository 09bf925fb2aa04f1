"""Synthetic microscopy-like image domain with known phenotype parameters.

Every image is a 64x64x3 float array in [0, 1]:

    channel 0  nucleus, a soft-edged disk
    channel 1  cytoplasm annulus carrying the translocation reporter; the
               nuclear region holds nuclear_ratio times the cytoplasmic level
    channel 2  spots (Golgi structures), soft-edged disks

Two assays are modelled. In the translocation assay the classes differ only
in the nucleo-cytoplasmic intensity ratio of channel 1; in the golgi assay
they differ only in the number and size of channel-2 spots. The remaining
parameters are drawn from class-independent ranges, so each assay carries
exactly one discriminative feature with a known ground-truth value.
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import InvalidParameterError

DEFAULT_SIZE = 64
NOISE_SIGMA = 0.02
EDGE_WIDTH = 1.5          # sigmoid falloff of nucleus / annulus edges, px
COMPARTMENT_WIDTH = 0.4   # reporter-channel nuclear/cytoplasmic crossfade;
                          # much narrower than EDGE_WIDTH so a ring measured
                          # just outside the nucleus reads clean cytoplasm
SPOT_EDGE_WIDTH = 0.6     # spots need sharper edges so thresholded area ~ pi r^2
SPOT_AMPLITUDE = 0.9
CYTO_RING_WIDTH = 12.0    # outer annulus radius = nucleus radius + this

# class-conditional sampling ranges
TRANSLOCATION_RATIO = {"negative": (0.4, 0.6), "positive": (1.8, 2.2)}
GOLGI_SPOT_COUNT = {"negative": (1, 3), "positive": (8, 14)}
GOLGI_SPOT_RADIUS = {"negative": (6.0, 9.0), "positive": (1.5, 3.0)}
# class-independent ("neutral") ranges
NEUTRAL_RATIO = (0.8, 1.2)
NEUTRAL_SPOT_COUNT = (2, 6)
NEUTRAL_SPOT_RADIUS = (2.0, 4.0)
NUCLEUS_RADIUS = (10.0, 14.0)
CENTER_JITTER = 3.0

ASSAYS = ("translocation", "golgi")
CLASSES = ("negative", "positive")


@dataclass(frozen=True)
class PhenotypeParams:
    """Ground-truth parameters of one synthetic image."""

    assay: str
    class_label: str
    nuclear_ratio: float
    spot_count: int
    spot_radius_px: float
    nucleus_center: tuple  # (row, col) in pixels
    nucleus_radius_px: float
    rng_seed: int

    def validate(self, size: int = DEFAULT_SIZE) -> None:
        if self.assay not in ASSAYS:
            raise InvalidParameterError(f"unknown assay {self.assay!r}")
        if self.class_label not in CLASSES:
            raise InvalidParameterError(f"unknown class {self.class_label!r}")
        if not (self.nuclear_ratio > 0 and np.isfinite(self.nuclear_ratio)):
            raise InvalidParameterError("nuclear_ratio must be a positive real")
        if self.spot_count < 0 or int(self.spot_count) != self.spot_count:
            raise InvalidParameterError("spot_count must be a non-negative integer")
        if not self.spot_radius_px > 0:
            raise InvalidParameterError("spot_radius_px must be positive")
        if not self.nucleus_radius_px > 0:
            raise InvalidParameterError("nucleus_radius_px must be positive")
        r, c = self.nucleus_center
        rad = self.nucleus_radius_px
        if not (r - rad >= 0 and c - rad >= 0 and r + rad <= size - 1 and c + rad <= size - 1):
            raise InvalidParameterError(
                f"nucleus (center={self.nucleus_center}, radius={rad}) "
                f"does not fit inside a {size}x{size} frame"
            )
        if self.assay == "translocation":
            lo, hi = TRANSLOCATION_RATIO[self.class_label]
            if not lo <= self.nuclear_ratio <= hi:
                raise InvalidParameterError(
                    f"translocation/{self.class_label} requires nuclear_ratio "
                    f"in [{lo}, {hi}], got {self.nuclear_ratio}"
                )
        else:
            c_lo, c_hi = GOLGI_SPOT_COUNT[self.class_label]
            r_lo, r_hi = GOLGI_SPOT_RADIUS[self.class_label]
            if not c_lo <= self.spot_count <= c_hi:
                raise InvalidParameterError(
                    f"golgi/{self.class_label} requires spot_count in "
                    f"[{c_lo}, {c_hi}], got {self.spot_count}"
                )
            if not r_lo <= self.spot_radius_px <= r_hi:
                raise InvalidParameterError(
                    f"golgi/{self.class_label} requires spot_radius_px in "
                    f"[{r_lo}, {r_hi}], got {self.spot_radius_px}"
                )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["nucleus_center"] = list(self.nucleus_center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhenotypeParams":
        d = dict(d)
        d["nucleus_center"] = tuple(d["nucleus_center"])
        return cls(**d)


def _soft_disk(dist, radius, width):
    """Radial sigmoid falloff: ~1 inside `radius`, ~0 outside, smooth edge."""
    return 1.0 / (1.0 + np.exp((dist - radius) / width))


def nucleus_mask(params: PhenotypeParams, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Boolean hard mask of the nucleus disk (the renderer's own geometry)."""
    rr, cc = np.mgrid[0:size, 0:size]
    d = np.hypot(rr - params.nucleus_center[0], cc - params.nucleus_center[1])
    return d <= params.nucleus_radius_px


def annulus_mask(params: PhenotypeParams, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Boolean hard mask of the cytoplasmic plateau (soft edges excluded)."""
    rr, cc = np.mgrid[0:size, 0:size]
    d = np.hypot(rr - params.nucleus_center[0], cc - params.nucleus_center[1])
    outer = params.nucleus_radius_px + CYTO_RING_WIDTH
    return (d > params.nucleus_radius_px + 2.0) & (d <= outer - 3.0)


def render_phenotype(params: PhenotypeParams, size: int = DEFAULT_SIZE) -> np.ndarray:
    """Render one image from its parameters; deterministic per (params, seed).

    Returns a (size, size, 3) float32 array in [0, 1].
    """
    if size < 16:
        raise InvalidParameterError(f"size must be >= 16, got {size}")
    params.validate(size)
    rng = np.random.default_rng(params.rng_seed)

    rr, cc = np.mgrid[0:size, 0:size]
    row0, col0 = params.nucleus_center
    d = np.hypot(rr - row0, cc - col0)
    nuc_r = params.nucleus_radius_px
    outer_r = nuc_r + CYTO_RING_WIDTH

    img = np.zeros((size, size, 3), dtype=np.float64)

    # channel 0: nucleus
    nuc_amp = rng.uniform(0.75, 0.95)
    nucleus = _soft_disk(d, nuc_r, EDGE_WIDTH)
    img[:, :, 0] = nuc_amp * nucleus

    # channel 1: cytoplasm annulus + nuclear compartment at ratio x cyto level
    cyto_level = rng.uniform(0.30, 0.40)
    compartment = _soft_disk(d, nuc_r, COMPARTMENT_WIDTH)
    annulus = (1.0 - compartment) * _soft_disk(d, outer_r, EDGE_WIDTH)
    img[:, :, 1] = (cyto_level * annulus
                    + params.nuclear_ratio * cyto_level * compartment)

    # channel 2: spots scattered in the cytoplasmic band
    # small spots get a proportionally narrower edge so they stay compact
    for _ in range(int(params.spot_count)):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        radial = rng.uniform(0.7 * nuc_r, outer_r - params.spot_radius_px - 1.0)
        sr = row0 + radial * np.sin(ang)
        sc = col0 + radial * np.cos(ang)
        margin = params.spot_radius_px + 1.0
        sr = float(np.clip(sr, margin, size - 1 - margin))
        sc = float(np.clip(sc, margin, size - 1 - margin))
        ds = np.hypot(rr - sr, cc - sc)
        width = min(SPOT_EDGE_WIDTH, params.spot_radius_px / 2.0)
        img[:, :, 2] += SPOT_AMPLITUDE * _soft_disk(ds, params.spot_radius_px, width)

    img += rng.normal(0.0, NOISE_SIGMA, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def sample_params(assay: str, class_label: str, rng: np.random.Generator,
                  size: int = DEFAULT_SIZE) -> PhenotypeParams:
    """One i.i.d. parameter draw from the class-conditional ranges."""
    if assay not in ASSAYS:
        raise InvalidParameterError(f"unknown assay {assay!r}")
    if class_label not in CLASSES:
        raise InvalidParameterError(f"unknown class {class_label!r}")

    if assay == "translocation":
        lo, hi = TRANSLOCATION_RATIO[class_label]
        ratio = rng.uniform(lo, hi)
        count = int(rng.integers(NEUTRAL_SPOT_COUNT[0], NEUTRAL_SPOT_COUNT[1] + 1))
        spot_r = rng.uniform(*NEUTRAL_SPOT_RADIUS)
    else:
        ratio = rng.uniform(*NEUTRAL_RATIO)
        c_lo, c_hi = GOLGI_SPOT_COUNT[class_label]
        count = int(rng.integers(c_lo, c_hi + 1))
        spot_r = rng.uniform(*GOLGI_SPOT_RADIUS[class_label])

    center = (
        size / 2 + rng.uniform(-CENTER_JITTER, CENTER_JITTER),
        size / 2 + rng.uniform(-CENTER_JITTER, CENTER_JITTER),
    )
    return PhenotypeParams(
        assay=assay,
        class_label=class_label,
        nuclear_ratio=float(ratio),
        spot_count=count,
        spot_radius_px=float(spot_r),
        nucleus_center=center,
        nucleus_radius_px=float(rng.uniform(*NUCLEUS_RADIUS)),
        rng_seed=int(rng.integers(0, 2**63)),
    )


def sample_dataset(assay: str, class_label: str, n: int, seed: int,
                   size: int = DEFAULT_SIZE):
    """Render n images with i.i.d. class-conditional parameters.

    Returns a list of (image, params) pairs, reproducible per seed.
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        params = sample_params(assay, class_label, rng, size)
        out.append((render_phenotype(params, size), params))
    return out


def pooled_dataset(n_per_group: int, seed: int, size: int = DEFAULT_SIZE):
    """All four (assay, class) groups, n images each, as one shuffled list."""
    items = []
    for i, assay in enumerate(ASSAYS):
        for j, label in enumerate(CLASSES):
            items.extend(sample_dataset(assay, label, n_per_group,
                                        seed * 4 + 2 * i + j, size))
    order = np.random.default_rng(seed).permutation(len(items))
    return [items[k] for k in order]


# ---------------------------------------------------------------------------
# dataset export: 16-bit PNGs + one JSON sidecar per image + a manifest
# ---------------------------------------------------------------------------

def save_image_u16(path, img: np.ndarray) -> None:
    """Write a [0,1] float image as 16-bit PNG (channels stored as RGB)."""
    u16 = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if u16.ndim == 3:
        u16 = u16[:, :, ::-1]  # cv2 expects BGR byte order
    if not cv2.imwrite(str(path), u16):
        raise IOError(f"failed to write {path}")


def load_image_u16(path) -> np.ndarray:
    """Read a 16-bit PNG back to a [0,1] float32 image."""
    u16 = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if u16 is None:
        raise IOError(f"failed to read {path}")
    if u16.ndim == 3:
        u16 = u16[:, :, ::-1]
    return (u16.astype(np.float32) / 65535.0).copy()


def export_dataset(items, out_dir, seed: int = 0) -> Path:
    """Write (image, params) pairs to a directory; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, params) in enumerate(items):
        stem = f"{params.assay}_{params.class_label}_{i:05d}"
        save_image_u16(out_dir / f"{stem}.png", img)
        with open(out_dir / f"{stem}.json", "w") as fh:
            json.dump(params.to_dict(), fh, indent=1)
        entries.append({
            "image": f"{stem}.png",
            "params": f"{stem}.json",
            "assay": params.assay,
            "class_label": params.class_label,
        })
    manifest = {"n": len(entries), "seed": seed, "files": entries}
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest_path


def load_dataset(manifest_path):
    """Load an exported dataset back as (image, params) pairs."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    root = manifest_path.parent
    items = []
    for entry in manifest["files"]:
        img = load_image_u16(root / entry["image"])
        with open(root / entry["params"]) as fh:
            params = PhenotypeParams.from_dict(json.load(fh))
        items.append((img, params))
    return items
