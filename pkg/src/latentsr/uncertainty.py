"""Multiple plausible reconstructions for one observation, with a scale fit.

A single LR image is consistent with many nearby reconstructions. We draw n
of them by restarting the latent search from the shared initialization plus
i.i.d. Gaussian jitter (sigma 0.1), one distinct seed per restart. Restarts
whose per-pixel data term exceeds the consistency tolerance are rejected.

The accepted styles are then modelled as Gaussian around a mean matrix mu
with one shared scale sigma, whose prior is inverse-gamma(alpha, beta); both
have closed-form estimates given the samples:

    mu      = arithmetic mean of the samples
    sigma^2 = (2 beta + sum_i ||w_i - mu||^2) / (2 alpha + n L d + 2)
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import generator as gen_mod, rls
from .errors import InsufficientSamplesError, InvalidParameterError
from .util import derive_seed
from .viz import contact_sheet

DATA_TERM_TOLERANCE = 0.03  # per LR pixel entry
JITTER_SIGMA = 0.1
DEFAULT_ALPHA = 3.0
DEFAULT_BETA = 1.0


@dataclass
class UncertaintyResult:
    samples: list                 # accepted RLSResult objects
    mu: np.ndarray                # (L, d)
    sigma: float
    alpha: float
    beta: float
    per_sample_data_term: list    # per-LR-pixel values of accepted samples
    rejected_seeds: list
    sampling_method: str = "independent restarts with jittered initialization"


def fit_scale(w_samples: np.ndarray, alpha: float, beta: float):
    """Closed-form (mu, sigma) for stacked style samples (n, L, d)."""
    n = w_samples.shape[0]
    mu = w_samples.mean(axis=0)
    scatter = float(((w_samples - mu[None]) ** 2).sum())
    n_coords = n * mu.size
    sigma_sq = (2.0 * beta + scatter) / (2.0 * alpha + n_coords + 2.0)
    return mu, float(np.sqrt(sigma_sq))


def sample_solutions(y, generator, flow, spec, n: int,
                     base_config: rls.RLSConfig = None, seed: int = 0,
                     tolerance: float = DATA_TERM_TOLERANCE,
                     alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                     jitter_sigma: float = JITTER_SIGMA,
                     force_identical_seeds: bool = False) -> UncertaintyResult:
    """n jittered restarts of the latent search on one LR observation.

    `force_identical_seeds` collapses all restarts onto one seed; it exists
    to exercise the degenerate prior-only scale estimate.
    """
    if n < 2:
        raise InvalidParameterError(f"n must be >= 2, got {n}")
    base = base_config or rls.RLSConfig()
    y = np.asarray(y, dtype=np.float32)
    lr_pixels = y.size

    mean_w = gen_mod.mean_style(generator, base.init_n,
                                derive_seed(base.seed, "init"))
    w0 = gen_mod.broadcast(mean_w, generator.num_layers)

    inits, seeds = [], []
    for k in range(n):
        restart = 0 if force_identical_seeds else k
        restart_seed = derive_seed(seed, "restart", restart)
        rng = np.random.default_rng(restart_seed)
        inits.append(w0 + jitter_sigma * rng.standard_normal(w0.shape))
        seeds.append(restart_seed)

    cfg = base.replace(init="given")
    results = rls.superresolve_batch(
        np.repeat(y[None], n, axis=0), generator, flow, spec, cfg,
        w_init=np.stack(inits).astype(np.float32))

    accepted, rejected, per_px = [], [], []
    for restart_seed, result in zip(seeds, results):
        best = min(result.trajectory, key=lambda e: e["total"])
        value = best["data_term"] / lr_pixels
        if value <= tolerance:
            accepted.append(result)
            per_px.append(float(value))
        else:
            rejected.append(restart_seed)
    if len(accepted) < 2:
        raise InsufficientSamplesError(
            f"only {len(accepted)} of {n} restarts met the data-term "
            f"tolerance {tolerance}", rejected_seeds=rejected)

    stack = np.stack([r.w_plus_hat for r in accepted])
    mu, sigma = fit_scale(stack, alpha, beta)
    return UncertaintyResult(
        samples=accepted,
        mu=mu,
        sigma=sigma,
        alpha=alpha,
        beta=beta,
        per_sample_data_term=per_px,
        rejected_seeds=rejected,
    )


def save_uncertainty_report(result: UncertaintyResult, out_dir,
                            y=None, ground_truth=None) -> Path:
    """Write the report JSON and the LR | GT | SR_1..SR_n contact sheet."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "n_samples": len(result.samples),
        "sigma": result.sigma,
        "alpha": result.alpha,
        "beta": result.beta,
        "mu_norm": float(np.linalg.norm(result.mu)),
        "per_sample_data_term": result.per_sample_data_term,
        "rejected_seeds": [int(s) for s in result.rejected_seeds],
        "sampling_method": result.sampling_method,
    }
    path = out_dir / "uncertainty.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
    np.savez(out_dir / "uncertainty_arrays.npz", mu=result.mu,
             samples=np.stack([r.w_plus_hat for r in result.samples]),
             sr_images=np.stack([r.sr_image for r in result.samples]))
    row = [y, ground_truth] + [r.sr_image for r in result.samples]
    contact_sheet([[im for im in row if im is not None]],
                  out_dir / "uncertainty_sheet.png")
    return path
