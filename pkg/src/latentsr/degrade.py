"""Forward operators: bicubic downscaling and observation-side corruptions.

The downscaler is a fixed linear map (separable cubic-convolution kernel,
Catmull-Rom a = -0.5, antialiased by stretching the kernel to the downscale
factor, reflect boundary handling). It is published as an explicit weight
matrix so the same taps drive the numpy API, the differentiable torch path
inside the optimizer, and the golden-table documentation.

Output coordinate o samples input coordinate c = (o + 0.5) * f - 0.5 with
weights k((i - c) / f) / f; for integer f these weights sum to exactly 1
(partition of unity of the cubic-convolution kernel), so constants map to
constants and the operator is mean-preserving up to the boundary fold.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import ndimage

from .errors import InvalidParameterError

KERNEL_A = -0.5  # Catmull-Rom


def bicubic_kernel(t):
    """Cubic convolution kernel with a = -0.5; support (-2, 2)."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    a = KERNEL_A
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    out[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1
    out[far] = a * t[far] ** 3 - 5 * a * t[far] ** 2 + 8 * a * t[far] - 4 * a
    return out


def _reflect_index(i: int, n: int) -> int:
    """Mirror about pixel centers without edge repetition (np.pad 'reflect')."""
    if n == 1:
        return 0
    period = 2 * n - 2
    i = i % period
    return i if i < n else period - i


def downscale_weights(in_size: int, factor: int) -> np.ndarray:
    """(in_size/factor, in_size) float64 weight matrix of the 1-D downscaler."""
    if factor < 1 or in_size % factor != 0:
        raise InvalidParameterError(
            f"factor {factor} must divide the input size {in_size}"
        )
    out_size = in_size // factor
    w = np.zeros((out_size, in_size), dtype=np.float64)
    half = 2 * factor  # kernel support radius in input pixels
    for o in range(out_size):
        center = (o + 0.5) * factor - 0.5
        lo = int(np.floor(center)) - half + 1
        for i in range(lo, lo + 2 * half):
            tap = bicubic_kernel((i - center) / factor) / factor
            if tap != 0.0:
                w[o, _reflect_index(i, in_size)] += tap
    return w


def downscale_bicubic(x: np.ndarray, factor: int) -> np.ndarray:
    """Downscale an (H, W) or (H, W, C) image by an integer factor.

    Linear and unclipped: clipping to [0, 1] belongs to the observation
    boundary (see `observe`), not to the operator itself.
    """
    x = np.asarray(x)
    if x.ndim not in (2, 3):
        raise InvalidParameterError(f"expected 2-D or 3-D image, got shape {x.shape}")
    h, w = x.shape[:2]
    if h % factor or w % factor:
        raise InvalidParameterError(
            f"factor {factor} must divide image size {h}x{w}"
        )
    wr = downscale_weights(h, factor)
    wc = downscale_weights(w, factor)
    y = np.einsum("oh,hw...->ow...", wr, x.astype(np.float64))
    y = np.einsum("pw,ow...->op...", wc, y)
    return y.astype(x.dtype) if x.dtype.kind == "f" else y


def downscale_adjoint(u: np.ndarray, factor: int, out_size: int) -> np.ndarray:
    """Adjoint of `downscale_bicubic`: maps LR-shaped u back to HR shape."""
    u = np.asarray(u, dtype=np.float64)
    wr = downscale_weights(out_size, factor)
    x = np.einsum("oh,op...->hp...", wr, u)
    return np.einsum("pw,hp...->hw...", wr, x)


class TorchDownscaler:
    """The same operator as a differentiable torch map on (..., C, H, W)."""

    def __init__(self, in_size: int, factor: int):
        self.factor = factor
        self.in_size = in_size
        self.weights = torch.from_numpy(downscale_weights(in_size, factor))

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        w = self.weights.to(x.dtype)
        y = torch.einsum("oh,...hw->...ow", w, x)
        return torch.einsum("pw,...ow->...op", w, y)


# ---------------------------------------------------------------------------
# degradation specs and corruptions
# ---------------------------------------------------------------------------

CORRUPTION_KINDS = ("gaussian_noise", "salt_pepper", "gaussian_blur")


@dataclass
class DegradationSpec:
    """Downscale factor plus an ordered list of extra corruptions.

    Corruptions are dicts like {"kind": "gaussian_noise", "sigma": 0.05},
    {"kind": "salt_pepper", "density": 0.05}, {"kind": "gaussian_blur",
    "sigma": 0.5}, applied in order to the already-downscaled image.
    """

    downscale_factor: int = 16
    extra: list = field(default_factory=list)
    laplace_scale: float = 1.0

    def __post_init__(self):
        if self.downscale_factor not in (8, 16):
            raise InvalidParameterError(
                f"downscale_factor must be 8 or 16, got {self.downscale_factor}"
            )
        if self.laplace_scale <= 0:
            raise InvalidParameterError("laplace_scale must be positive")
        for corr in self.extra:
            kind = corr.get("kind")
            if kind not in CORRUPTION_KINDS:
                raise InvalidParameterError(f"unknown corruption kind {kind!r}")
            value = corr.get("density" if kind == "salt_pepper" else "sigma")
            if value is None or value < 0:
                raise InvalidParameterError(f"corruption {corr} needs a value >= 0")

    def to_dict(self) -> dict:
        return {
            "downscale_factor": self.downscale_factor,
            "extra": [dict(c) for c in self.extra],
            "laplace_scale": self.laplace_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        known = {"downscale_factor", "extra", "laplace_scale"}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown DegradationSpec keys {sorted(unknown)}")
        return cls(**d)


def corrupt(y: np.ndarray, spec: DegradationSpec, seed: int) -> np.ndarray:
    """Apply spec.extra in order; deterministic per seed; clipped to [0, 1]."""
    rng = np.random.default_rng(seed)
    out = np.asarray(y, dtype=np.float64).copy()
    for corr in spec.extra:
        kind = corr["kind"]
        if kind == "gaussian_noise":
            out = out + rng.normal(0.0, corr["sigma"], size=out.shape)
        elif kind == "salt_pepper":
            flip = rng.random(out.shape) < corr["density"]
            value = (rng.random(out.shape) < 0.5).astype(np.float64)
            out = np.where(flip, value, out)
        elif kind == "gaussian_blur":
            if out.ndim == 3:
                for c in range(out.shape[2]):
                    out[:, :, c] = ndimage.gaussian_filter(
                        out[:, :, c], corr["sigma"], mode="reflect")
            else:
                out = ndimage.gaussian_filter(out, corr["sigma"], mode="reflect")
        out = np.clip(out, 0.0, 1.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def observe(x: np.ndarray, spec: DegradationSpec, seed: int = 0) -> np.ndarray:
    """Form the LR observation: downscale, clip to [0, 1], corrupt."""
    y = np.clip(downscale_bicubic(x, spec.downscale_factor), 0.0, 1.0)
    return corrupt(y, spec, seed)


def laplace_loglik(residual: np.ndarray) -> float:
    """Laplace log-likelihood of a residual up to its constant: -sum |r|."""
    residual = np.asarray(residual)
    if not np.all(np.isfinite(residual)):
        raise InvalidParameterError("residual must be finite")
    return float(-np.abs(residual).sum())
