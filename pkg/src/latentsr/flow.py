"""Masked autoregressive flow over the style space, plus gaussianization tools.

The flow F maps a style vector w to a base variable z through K affine
autoregressive blocks separated by fixed seeded permutations. Each block's
masked networks emit a per-dimension shift m and log-scale a as functions of
the preceding dimensions, so the forward (density) direction is a single
pass:

    z_i = (w_i - m_i(w_<i)) * exp(-a_i(w_<i)),     logdet += -sum(a)

and log p_F(w) = log N(z; 0, I) + logdet. The inverse direction reconstructs
dimensions sequentially and is used for sampling and round-trip checks.
Blocks are initialized to the identity (zero shift and log-scale), so an
untrained flow is an exact permutation with logdet 0.

The module also carries the two diagnostics used to compare gaussianization
quality: the squared-norm / chi-squared test and the leaky-ReLU + whitening
baseline transform.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import stats
from torch import nn

from . import checkpoint as ckpt
from .errors import (DivergenceError, InvalidParameterError, NonFiniteError,
                     RankDeficiencyError)

log = logging.getLogger(__name__)

DEFAULT_BLOCKS = 5
DEFAULT_HIDDEN = 256
PULSE_LEAKY_SLOPE = 5.0  # inverse of the usual 0.2 forward slope

DTYPE = torch.float64  # the flow is small; run it in double for tight inverses


def _autoregressive_masks(d: int, hidden: int):
    """MADE-style masks for layers d -> hidden -> hidden -> d (per output)."""
    in_deg = torch.arange(d) % d
    h1_deg = torch.arange(hidden) % (d - 1)
    h2_deg = torch.arange(hidden) % (d - 1)
    out_deg = torch.arange(d) % d - 1
    m1 = (h1_deg[:, None] >= in_deg[None, :]).to(DTYPE)
    m2 = (h2_deg[:, None] >= h1_deg[None, :]).to(DTYPE)
    m3 = (out_deg[:, None] >= h2_deg[None, :]).to(DTYPE)
    return m1, m2, m3


class MaskedLinear(nn.Linear):
    def __init__(self, in_features, out_features, mask):
        super().__init__(in_features, out_features)
        self.register_buffer("mask", mask)

    def forward(self, x):
        return F.linear(x, self.weight * self.mask, self.bias)


class MAFBlock(nn.Module):
    """One affine autoregressive block emitting shift and log-scale."""

    def __init__(self, d: int, hidden: int):
        super().__init__()
        m1, m2, m3 = _autoregressive_masks(d, hidden)
        self.net = nn.Sequential(
            MaskedLinear(d, hidden, m1), nn.ReLU(),
            MaskedLinear(hidden, hidden, m2), nn.ReLU(),
        )
        self.shift = MaskedLinear(hidden, d, m3)
        self.log_scale = MaskedLinear(hidden, d, m3)
        # identity initialization: zero shift and log-scale
        nn.init.zeros_(self.shift.weight)
        nn.init.zeros_(self.shift.bias)
        nn.init.zeros_(self.log_scale.weight)
        nn.init.zeros_(self.log_scale.bias)
        self.d = d

    def _params(self, x):
        h = self.net(x)
        # soft-bounded log-scale keeps early training stable
        return self.shift(h), 3.0 * torch.tanh(self.log_scale(h) / 3.0)

    def forward(self, x):
        m, a = self._params(x)
        z = (x - m) * torch.exp(-a)
        return z, -a.sum(dim=-1)

    def inverse(self, z):
        x = torch.zeros_like(z)
        for i in range(self.d):
            m, a = self._params(x)
            x = torch.cat(
                [x[:, :i], (z[:, i:i + 1] * torch.exp(a[:, i:i + 1]) + m[:, i:i + 1]),
                 x[:, i + 1:]], dim=1)
        m, a = self._params(x)
        return x, a.sum(dim=-1)


class FlowModel(nn.Module):
    """K MAF blocks with fixed random permutations in between."""

    def __init__(self, d: int, n_blocks: int = DEFAULT_BLOCKS,
                 hidden: int = DEFAULT_HIDDEN, perm_seed: int = 0):
        super().__init__()
        self.d = d
        self.n_blocks = n_blocks
        self.hidden = hidden
        self.perm_seed = perm_seed
        self.blocks = nn.ModuleList(
            [MAFBlock(d, hidden) for _ in range(n_blocks)])
        rng = np.random.default_rng(perm_seed)
        for i in range(n_blocks):
            perm = torch.from_numpy(rng.permutation(d))
            self.register_buffer(f"perm_{i}", perm)
            self.register_buffer(f"inv_perm_{i}", torch.argsort(perm))
        self.to(DTYPE)
        self.training_meta = {}

    def perm(self, i):
        return getattr(self, f"perm_{i}")

    def inv_perm(self, i):
        return getattr(self, f"inv_perm_{i}")

    def forward_transform(self, w: torch.Tensor):
        """w -> (z, logdet) where logdet = log |det dz/dw|. Differentiable."""
        x = w.to(DTYPE)
        logdet = torch.zeros(x.shape[0], dtype=DTYPE, device=x.device)
        for i, block in enumerate(self.blocks):
            x = x[:, self.perm(i)]
            x, ld = block(x)
            logdet = logdet + ld
        return x, logdet

    def inverse_transform(self, z: torch.Tensor):
        """z -> (w, logdet of the forward map at that w)."""
        x = z.to(DTYPE)
        logdet = torch.zeros(x.shape[0], dtype=DTYPE, device=x.device)
        for i in reversed(range(self.n_blocks)):
            x, ld = self.blocks[i].inverse(x)
            logdet = logdet - ld
            x = x[:, self.inv_perm(i)]
        return x, logdet

    def log_density(self, w: torch.Tensor) -> torch.Tensor:
        z, logdet = self.forward_transform(w)
        log_base = -0.5 * (z.pow(2).sum(dim=-1)
                           + self.d * np.log(2.0 * np.pi))
        return log_base + logdet


# ---------------------------------------------------------------------------
# functional API on arrays
# ---------------------------------------------------------------------------

def _check_input(model: FlowModel, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    squeeze = w.ndim == 1
    if squeeze:
        w = w[None]
    if w.ndim != 2 or w.shape[1] != model.d:
        raise InvalidParameterError(
            f"expected vectors of dimension {model.d}, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("flow input must be finite")
    return w, squeeze


def flow_forward(model: FlowModel, w: np.ndarray):
    """(z, logdet) of one style vector or a batch."""
    w, squeeze = _check_input(model, w)
    with torch.no_grad():
        z, logdet = model.forward_transform(torch.from_numpy(w))
    z, logdet = z.numpy(), logdet.numpy()
    return (z[0], float(logdet[0])) if squeeze else (z, logdet)


def flow_inverse(model: FlowModel, z: np.ndarray):
    """Inverse map; returns (w, logdet-of-forward-at-w)."""
    z, squeeze = _check_input(model, z)
    with torch.no_grad():
        w, logdet = model.inverse_transform(torch.from_numpy(z))
    w, logdet = w.numpy(), logdet.numpy()
    return (w[0], float(logdet[0])) if squeeze else (w, logdet)


def flow_log_density(model: FlowModel, w: np.ndarray):
    """log p_F(w) = log N(F(w)) + log |det J_F(w)|."""
    w, squeeze = _check_input(model, w)
    with torch.no_grad():
        ld = model.log_density(torch.from_numpy(w)).numpy()
    return float(ld[0]) if squeeze else ld


def sample_flow(model: FlowModel, n: int, seed: int) -> np.ndarray:
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n, model.d, generator=gen, dtype=DTYPE)
    with torch.no_grad():
        w, _ = model.inverse_transform(z)
    return w.numpy()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class FlowTrainConfig:
    n_blocks: int = DEFAULT_BLOCKS
    hidden: int = DEFAULT_HIDDEN
    epochs: int = 12
    batch_size: int = 256
    lr: float = 1e-3
    holdout_frac: float = 0.1
    seed: int = 0
    deterministic: bool = False


def train_flow(styles: np.ndarray, config: FlowTrainConfig = None) -> FlowModel:
    """Maximum-likelihood training on style vectors.

    Holds out a fraction for the overfit check; per-epoch mean log-densities
    (train and held-out) are recorded in training_meta.
    """
    config = config or FlowTrainConfig()
    styles = np.asarray(styles, dtype=np.float64)
    if styles.ndim != 2 or styles.shape[0] < 10000:
        raise InvalidParameterError(
            f"need >= 10000 style vectors, got {styles.shape}")
    if config.deterministic:
        torch.set_num_threads(1)

    d = styles.shape[1]
    torch.manual_seed(config.seed)
    model = FlowModel(d, config.n_blocks, config.hidden, perm_seed=config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    n_hold = max(1, int(len(styles) * config.holdout_frac))
    order = np.random.default_rng(config.seed).permutation(len(styles))
    hold = torch.from_numpy(styles[order[:n_hold]])
    train = torch.from_numpy(styles[order[n_hold:]])

    shuffler = torch.Generator().manual_seed(config.seed + 1)
    epoch_log = []
    for epoch in range(config.epochs):
        idx = torch.randperm(train.shape[0], generator=shuffler)
        losses = []
        for start in range(0, train.shape[0], config.batch_size):
            batch = train[idx[start:start + config.batch_size]]
            loss = -model.log_density(batch).mean()
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite flow loss at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(float(loss))
        with torch.no_grad():
            hold_ld = float(model.log_density(hold).mean())
        entry = {"epoch": epoch,
                 "train_log_density": -float(np.mean(losses)),
                 "holdout_log_density": hold_ld}
        epoch_log.append(entry)
        log.info("flow epoch %d: train %.3f holdout %.3f", epoch,
                 entry["train_log_density"], hold_ld)

    model.training_meta = {
        "n_styles": int(len(styles)),
        "seed": config.seed,
        "log": epoch_log,
    }
    model.eval()
    return model


# ---------------------------------------------------------------------------
# gaussianization diagnostics and the whitening baseline
# ---------------------------------------------------------------------------

@dataclass
class GaussDiagnostics:
    squared_norms: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    mean_norm: float
    target_dof: int


def diagnose_gaussianization(vectors: np.ndarray) -> GaussDiagnostics:
    """Squared-norm distribution vs the chi-squared law of a true Gaussian."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 100:
        raise InvalidParameterError(
            f"need >= 100 vectors, got shape {vectors.shape}")
    d = vectors.shape[1]
    sq = (vectors ** 2).sum(axis=1)
    ks = stats.kstest(sq, "chi2", args=(d,))
    return GaussDiagnostics(
        squared_norms=sq,
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        mean_norm=float(sq.mean()),
        target_dof=d,
    )


def pulse_gaussianize(styles: np.ndarray) -> np.ndarray:
    """Leaky-ReLU (slope 5) then affine whitening; the comparison baseline."""
    styles = np.asarray(styles, dtype=np.float64)
    if styles.ndim != 2:
        raise InvalidParameterError(f"expected (n, d) styles, got {styles.shape}")
    n, d = styles.shape
    if n < d + 1:
        raise InvalidParameterError(
            f"whitening needs >= d+1 = {d + 1} vectors, got {n}")
    v = np.where(styles < 0, styles * PULSE_LEAKY_SLOPE, styles)
    v = v - v.mean(axis=0, keepdims=True)
    cov = (v.T @ v) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() <= 1e-12 * evals.max():
        raise RankDeficiencyError(
            "style covariance is singular; whitening is undefined")
    white = evecs @ np.diag(evals ** -0.5) @ evecs.T
    return v @ white


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_flow(model: FlowModel, path):
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {
        "d": model.d,
        "n_blocks": model.n_blocks,
        "hidden": model.hidden,
        "perm_seed": model.perm_seed,
        "direction": "forward maps styles to the base normal; "
                     "logdet is log|det dz/dw| (sum of negated log-scales)",
        "training_meta": model.training_meta,
    }
    return ckpt.save_checkpoint(path, "maf_flow", arrays, meta)


def load_flow(path) -> FlowModel:
    kind, arrays, meta = ckpt.load_checkpoint(path)
    if kind != "maf_flow":
        raise ValueError(f"checkpoint at {path} holds {kind!r}, not a flow")
    model = FlowModel(meta["d"], meta["n_blocks"], meta["hidden"],
                      perm_seed=meta["perm_seed"])
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.training_meta = meta.get("training_meta", {})
    model.eval()
    return model
