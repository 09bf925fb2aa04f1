"""Image-quality metrics: PSNR, multiscale SSIM, and embedding-space FID/KID.

FID and KID are computed in the feature space of a small convolutional
classifier trained on held-out synthetic images (never the generator's
training split). Absolute values are therefore specific to this embedding
and only orderings are meaningful. The perceptual stand-in `percep_toy` is
the cosine distance between embeddings of an image pair.
"""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F
from scipy.signal import convolve2d
from torch import nn

from . import checkpoint as ckpt
from .errors import DimensionMismatchError, InvalidParameterError
from .generator import images_to_tensor

log = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0

# canonical multiscale SSIM weights; truncated + renormalized when fewer
# scales are used (64 px images support 3 scales with a 7x7 window)
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_WINDOW = 7
MSSSIM_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for unit-peak images, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_cs(a: np.ndarray, b: np.ndarray, window: np.ndarray):
    """Mean SSIM and contrast-structure terms over the valid region."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    mu_a = convolve2d(a, window, mode="valid")
    mu_b = convolve2d(b, window, mode="valid")
    sig_a = convolve2d(a * a, window, mode="valid") - mu_a ** 2
    sig_b = convolve2d(b * b, window, mode="valid") - mu_b ** 2
    sig_ab = convolve2d(a * b, window, mode="valid") - mu_a * mu_b
    cs = (2 * sig_ab + c2) / (sig_a + sig_b + c2)
    ssim = ((2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)) * cs
    return ssim.mean(), cs.mean()


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a: np.ndarray, b: np.ndarray, scales: int = 3) -> float:
    """Multiscale SSIM with a 7x7 Gaussian window (sigma 1.5), 2x mean pooling
    between scales, canonical weights renormalized to the scale count."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    if not 1 <= scales <= len(MSSSIM_WEIGHTS):
        raise InvalidParameterError(f"scales must be in [1, 5], got {scales}")
    min_dim = min(a.shape[0], a.shape[1])
    if min_dim < MSSSIM_WINDOW * 2 ** (scales - 1):
        raise InvalidParameterError(
            f"image min dimension {min_dim} too small for {scales} scales "
            f"(needs >= {MSSSIM_WINDOW * 2 ** (scales - 1)})")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    window = _gaussian_window(MSSSIM_WINDOW, MSSSIM_SIGMA)
    weights = np.array(MSSSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()

    value = 1.0
    for level in range(scales):
        ssim_means, cs_means = [], []
        for c in range(a.shape[2]):
            s, cs = _ssim_cs(a[:, :, c], b[:, :, c], window)
            ssim_means.append(s)
            cs_means.append(cs)
        # negative covariance terms are floored so the product stays in [0,1]
        term = np.mean(ssim_means if level == scales - 1 else cs_means)
        value *= max(term, 0.0) ** weights[level]
        if level < scales - 1:
            a = np.stack([_halve(a[:, :, c]) for c in range(a.shape[2])], axis=2)
            b = np.stack([_halve(b[:, :, c]) for c in range(b.shape[2])], axis=2)
    return float(value)


# ---------------------------------------------------------------------------
# toy embedding network
# ---------------------------------------------------------------------------

EMBED_DIM = 64


class ToyEmbedder(nn.Module):
    """4 conv blocks -> 64-dim pooled feature -> linear class head."""

    def __init__(self, n_classes: int = 4):
        super().__init__()
        chans = (16, 32, 48, EMBED_DIM)
        layers = []
        prev = 3
        for ch in chans:
            layers += [nn.Conv2d(prev, ch, 3, stride=2, padding=1),
                       nn.LeakyReLU(0.2)]
            prev = ch
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(EMBED_DIM, n_classes)
        self.n_classes = n_classes
        self.training_meta = {}

    def forward(self, x):
        return self.head(self.embed_t(x))

    def embed_t(self, x):
        h = self.features(x)
        return h.mean(dim=(2, 3))


def train_embedder(images, labels, n_classes: int = 4, epochs: int = 8,
                   batch_size: int = 64, lr: float = 1e-3,
                   seed: int = 0) -> ToyEmbedder:
    """Supervised training of the embedding network; returns it frozen."""
    torch.manual_seed(seed)
    model = ToyEmbedder(n_classes)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    data = images_to_tensor(images)
    targets = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    shuffler = torch.Generator().manual_seed(seed + 1)
    losses = []
    for epoch in range(epochs):
        order = torch.randperm(len(data), generator=shuffler)
        epoch_losses = []
        for start in range(0, len(data) - 1, batch_size):
            idx = order[start:start + batch_size]
            loss = F.cross_entropy(model(data[idx]), targets[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss))
        losses.append(float(np.mean(epoch_losses)))
        log.info("embedder epoch %d: loss %.4f", epoch, losses[-1])
    model.training_meta = {"epochs": epochs, "seed": seed, "loss_log": losses}
    model.eval()
    return model


def embed(embedder: ToyEmbedder, images) -> np.ndarray:
    """(n, 64) deterministic embeddings of a list/stack of images."""
    data = images_to_tensor(images)
    out = []
    with torch.no_grad():
        for start in range(0, len(data), 256):
            out.append(embedder.embed_t(data[start:start + 256]).numpy())
    return np.concatenate(out, axis=0)


def save_embedder(model: ToyEmbedder, path):
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"n_classes": model.n_classes, "embed_dim": EMBED_DIM,
            "training_meta": model.training_meta}
    return ckpt.save_checkpoint(path, "toy_embedder", arrays, meta)


def load_embedder(path) -> ToyEmbedder:
    kind, arrays, meta = ckpt.load_checkpoint(path)
    if kind != "toy_embedder":
        raise ValueError(f"checkpoint at {path} holds {kind!r}, not an embedder")
    model = ToyEmbedder(meta["n_classes"])
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.training_meta = meta.get("training_meta", {})
    model.eval()
    return model


# ---------------------------------------------------------------------------
# set-level distances
# ---------------------------------------------------------------------------

def _check_sets(set_a, set_b, minimum=100):
    if len(set_a) < minimum or len(set_b) < minimum:
        raise InvalidParameterError(
            f"each set needs >= {minimum} images, got {len(set_a)}, {len(set_b)}")


def fid_toy(set_a, set_b, embedder: ToyEmbedder) -> float:
    """Frechet distance between Gaussian fits of the two embedding clouds."""
    _check_sets(set_a, set_b)
    ea, eb = embed(embedder, set_a), embed(embedder, set_b)
    mu_a, mu_b = ea.mean(axis=0), eb.mean(axis=0)
    cov_a = np.cov(ea, rowvar=False)
    cov_b = np.cov(eb, rowvar=False)
    sqrt_ab, _ = scipy.linalg.sqrtm(cov_a @ cov_b, disp=False)
    if not np.all(np.isfinite(sqrt_ab)):
        eps = 1e-6
        sqrt_ab, _ = scipy.linalg.sqrtm(
            (cov_a + eps * np.eye(len(cov_a))) @ (cov_b + eps * np.eye(len(cov_b))),
            disp=False)
        if not np.all(np.isfinite(sqrt_ab)):
            raise FloatingPointError("covariance square root failed twice")
    if np.iscomplexobj(sqrt_ab):
        sqrt_ab = sqrt_ab.real
    value = (np.sum((mu_a - mu_b) ** 2)
             + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(sqrt_ab))
    return float(max(value, 0.0))


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased MMD^2 with the cubic polynomial kernel."""
    m, n = len(x), len(y)
    kxx = _poly_kernel(x, x)
    kyy = _poly_kernel(y, y)
    kxy = _poly_kernel(x, y)
    sum_xx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    sum_yy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sum_xx + sum_yy - 2.0 * kxy.mean())


def kid_toy(set_a, set_b, embedder: ToyEmbedder, n_subsets: int = 10,
            subset_size: int = 50, seed: int = 0) -> float:
    """Mean unbiased MMD^2 over random subsets of the two embedding clouds."""
    _check_sets(set_a, set_b)
    ea, eb = embed(embedder, set_a), embed(embedder, set_b)
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(n_subsets):
        ia = rng.choice(len(ea), subset_size, replace=False)
        ib = rng.choice(len(eb), subset_size, replace=False)
        vals.append(mmd2_unbiased(ea[ia], eb[ib]))
    return float(np.mean(vals))


def percep_toy(a, b, embedder: ToyEmbedder) -> float:
    """Cosine distance between embeddings; the perceptual-metric stand-in."""
    ea, eb = embed(embedder, [a])[0], embed(embedder, [b])[0]
    denom = np.linalg.norm(ea) * np.linalg.norm(eb)
    if denom == 0:
        return 1.0
    return float(1.0 - ea @ eb / denom)


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    psnr_db: float
    ms_ssim: float
    percep_toy: float
    fid_toy: float
    kid_toy: float
    per_image: list = field(default_factory=list)

    def to_json_dict(self):
        return {
            "psnr_db": self.psnr_db,
            "ms_ssim": self.ms_ssim,
            "percep_toy": self.percep_toy,
            "fid_toy": self.fid_toy,
            "kid_toy": self.kid_toy,
            "n_images": len(self.per_image),
        }

    def save(self, json_path, csv_path=None):
        with open(json_path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                writer = csv.DictWriter(
                    fh, fieldnames=["image_id", "psnr_db", "ms_ssim", "percep_toy"])
                writer.writeheader()
                writer.writerows(self.per_image)


def evaluate_reconstructions(sr_images, hr_images, embedder) -> MetricsReport:
    """Per-image PSNR / MS-SSIM / percep plus set-level FID and KID."""
    if len(sr_images) != len(hr_images):
        raise DimensionMismatchError("SR and HR sets must have equal size")
    per_image = []
    for i, (sr, hr) in enumerate(zip(sr_images, hr_images)):
        per_image.append({
            "image_id": i,
            "psnr_db": psnr(sr, hr),
            "ms_ssim": ms_ssim(sr, hr),
            "percep_toy": percep_toy(sr, hr, embedder),
        })
    return MetricsReport(
        psnr_db=float(np.mean([r["psnr_db"] for r in per_image])),
        ms_ssim=float(np.mean([r["ms_ssim"] for r in per_image])),
        percep_toy=float(np.mean([r["percep_toy"] for r in per_image])),
        fid_toy=fid_toy(sr_images, hr_images, embedder),
        kid_toy=kid_toy(sr_images, hr_images, embedder),
        per_image=per_image,
    )
