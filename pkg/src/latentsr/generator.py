"""Style-based generator: mapping network, modulated synthesis network, training.

The generator is the composition of a 4-layer fully connected mapping network
(z -> w, both d-dimensional) and a synthesis network of L style-modulated
convolution blocks growing a learned 4x4 seed to a 64x64x3 image. Each block
consumes one row of an extended style matrix w_plus (L x d), so the L rows
can be optimized independently during latent search. Outputs are squashed to
[0, 1] with a sigmoid to keep gradients alive everywhere.

Training is a small non-saturating GAN with lazy R1 regularization on the
discriminator and a lazy path-length penalty on the generator.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint as ckpt
from .errors import DimensionMismatchError, DivergenceError, InvalidParameterError

log = logging.getLogger(__name__)

IMAGE_SIZE = 64
DEFAULT_D = 64
DEFAULT_L = 5
# feature channels of the synthesis blocks at 4, 8, 16, 32, 64 px
DEFAULT_CHANNELS = (64, 64, 48, 32, 24)


class MappingNetwork(nn.Module):
    """z -> w, a 4-layer MLP on the normalized latent."""

    def __init__(self, d: int, n_layers: int = 4):
        super().__init__()
        self.d = d
        self.layers = nn.ModuleList([nn.Linear(d, d) for _ in range(n_layers)])

    def forward(self, z):
        # pixel norm: project z onto the sqrt(d) sphere before mapping
        x = z * torch.rsqrt(z.pow(2).mean(dim=-1, keepdim=True) + 1e-8)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
        return x


class ModulatedConv2d(nn.Module):
    """Conv whose kernels are scaled per-sample by an affine style projection."""

    def __init__(self, in_ch, out_ch, kernel, d, demodulate=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel)
                                   / np.sqrt(in_ch * kernel * kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.affine = nn.Linear(d, in_ch)
        nn.init.normal_(self.affine.weight, std=1.0 / np.sqrt(d))
        nn.init.ones_(self.affine.bias)
        self.demodulate = demodulate
        self.padding = kernel // 2

    def forward(self, x, w):
        # per-sample weight modulation rewritten as input/output channel
        # scaling around a shared conv (exact: conv is linear in the weights)
        style = self.affine(w)                                 # (B, in)
        out = F.conv2d(x * style[:, :, None, None], self.weight,
                       padding=self.padding)
        if self.demodulate:
            w_sq = self.weight.pow(2).sum(dim=(2, 3))          # (out, in)
            demod = torch.rsqrt(style.pow(2) @ w_sq.T + 1e-8)  # (B, out)
            out = out * demod[:, :, None, None]
        return out + self.bias[None, :, None, None]


class SynthesisNetwork(nn.Module):
    """L modulated blocks growing a learned 4x4 seed to the output image."""

    def __init__(self, d: int, channels=DEFAULT_CHANNELS):
        super().__init__()
        self.d = d
        self.num_layers = len(channels)
        self.seed = nn.Parameter(torch.randn(channels[0], 4, 4))
        convs = []
        prev = channels[0]
        for ch in channels:
            convs.append(ModulatedConv2d(prev, ch, 3, d))
            prev = ch
        self.convs = nn.ModuleList(convs)
        self.to_rgb = nn.Conv2d(prev, 3, 1)

    def forward(self, w_plus):
        # w_plus: (B, L, d); block i is driven by row i
        b = w_plus.shape[0]
        x = self.seed[None].expand(b, -1, -1, -1).to(w_plus.dtype)
        for i, conv in enumerate(self.convs):
            if i > 0:
                x = F.interpolate(x, scale_factor=2, mode="bilinear",
                                  align_corners=False)
            x = F.leaky_relu(conv(x, w_plus[:, i]), 0.2)
        return torch.sigmoid(self.to_rgb(x))


class StyleGenerator(nn.Module):
    """Mapping + synthesis pair with the array-level convenience API."""

    def __init__(self, d=DEFAULT_D, channels=DEFAULT_CHANNELS):
        super().__init__()
        self.d = d
        self.num_layers = len(channels)
        self.channels = tuple(channels)
        self.mapping = MappingNetwork(d)
        self.synthesis = SynthesisNetwork(d, channels)
        self.training_meta = {}

    @property
    def L(self):
        return self.num_layers

    def forward(self, z):
        w = self.mapping(z)
        return self.synthesis(broadcast_torch(w, self.num_layers))


class Discriminator(nn.Module):
    def __init__(self, channels=(24, 32, 48, 64)):
        super().__init__()
        layers = []
        prev = 3
        for ch in channels:
            layers += [nn.Conv2d(prev, ch, 3, stride=2, padding=1),
                       nn.LeakyReLU(0.2)]
            prev = ch
        layers += [nn.Conv2d(prev, prev, 3, padding=1), nn.LeakyReLU(0.2)]
        self.features = nn.Sequential(*layers)
        self.final = nn.Linear(prev * 4 * 4, 1)

    def forward(self, x):
        h = self.features(x)
        return self.final(h.reshape(h.shape[0], -1))


# ---------------------------------------------------------------------------
# functional API on arrays
# ---------------------------------------------------------------------------

def broadcast_torch(w: torch.Tensor, num_layers: int) -> torch.Tensor:
    """(B, d) -> (B, L, d) with all rows equal."""
    return w[:, None, :].expand(-1, num_layers, -1)


def broadcast(w: np.ndarray, num_layers: int = DEFAULT_L) -> np.ndarray:
    """Style vector -> extended style with all L rows equal."""
    w = np.asarray(w)
    if w.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D style vector, got {w.shape}")
    return np.tile(w[None, :], (num_layers, 1))


def map_latent(model: StyleGenerator, z: np.ndarray) -> np.ndarray:
    """Map a latent z (d,) to its style vector w (d,)."""
    z = np.asarray(z, dtype=np.float32)
    if z.shape != (model.d,):
        raise DimensionMismatchError(
            f"z must have shape ({model.d},), got {z.shape}")
    with torch.no_grad():
        w = model.mapping(torch.from_numpy(z)[None])
    return w[0].numpy()


def synthesize(model: StyleGenerator, w_plus: np.ndarray) -> np.ndarray:
    """Render an extended style (L, d) to a (64, 64, 3) image in [0, 1]."""
    w_plus = np.asarray(w_plus, dtype=np.float32)
    if w_plus.shape != (model.num_layers, model.d):
        raise DimensionMismatchError(
            f"w_plus must have shape ({model.num_layers}, {model.d}), "
            f"got {w_plus.shape}")
    with torch.no_grad():
        img = model.synthesis(torch.from_numpy(w_plus)[None])
    return img[0].permute(1, 2, 0).numpy()


def sample_styles(model: StyleGenerator, n: int, seed: int) -> np.ndarray:
    """(n, d) style vectors from i.i.d. standard-normal latents."""
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n, model.d, generator=gen)
    with torch.no_grad():
        out = [model.mapping(z[i:i + 4096]) for i in range(0, n, 4096)]
    return torch.cat(out).numpy()


def mean_style(model: StyleGenerator, n: int, seed: int) -> np.ndarray:
    """Mean of n mapped styles; the latent-search initialization point."""
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    return sample_styles(model, n, seed).mean(axis=0)


def images_to_tensor(images) -> torch.Tensor:
    """List/array of (H, W, 3) images in [0,1] -> (N, 3, H, W) float tensor."""
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def tensor_to_images(t: torch.Tensor) -> np.ndarray:
    return t.detach().permute(0, 2, 3, 1).cpu().numpy()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class GanTrainConfig:
    d: int = DEFAULT_D
    channels: tuple = DEFAULT_CHANNELS
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    betas: tuple = (0.0, 0.99)
    r1_gamma: float = 1.0
    r1_interval: int = 16
    pl_weight: float = 2.0
    pl_interval: int = 8
    pl_decay: float = 0.01
    seed: int = 0
    deterministic: bool = False  # single-threaded mode, for reproducible runs
    log_every: int = 0           # batches between progress lines; 0 = epochs only
    # optional checkpoint selection: keep the epoch whose samples score the
    # lowest embedding-space Frechet distance against held-out images
    select_interval: int = 0     # epochs between scored snapshots; 0 = off
    select_images: object = None  # held-out (H, W, 3) images
    select_embedder: object = None
    select_n: int = 256


def train_generator(images, config: GanTrainConfig = None):
    """Adversarial training on a stack of (64, 64, 3) images in [0, 1].

    Returns the trained StyleGenerator; its `training_meta` carries the
    per-epoch loss and path-length log. Aborts with DivergenceError when the
    discriminator win is total (loss < 1e-4 for 5 consecutive epochs).
    """
    config = config or GanTrainConfig()
    if len(images) < 2000:
        raise InvalidParameterError(
            f"need >= 2000 training images, got {len(images)}")
    if config.deterministic:
        torch.set_num_threads(1)

    torch.manual_seed(config.seed)
    gen = StyleGenerator(config.d, config.channels)
    disc = Discriminator()
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr, betas=config.betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=config.betas)

    data = images_to_tensor(images)
    n = data.shape[0]
    shuffler = torch.Generator().manual_seed(config.seed + 1)
    noise = torch.Generator().manual_seed(config.seed + 2)

    pl_mean = torch.zeros(())
    epoch_log = []
    collapse_streak = 0
    step = 0
    best_fid, best_state, best_epoch = np.inf, None, None

    for epoch in range(config.epochs):
        order = torch.randperm(n, generator=shuffler)
        d_losses, g_losses, pl_penalties = [], [], []
        for start in range(0, n - config.batch_size + 1, config.batch_size):
            batch = data[order[start:start + config.batch_size]]
            b = batch.shape[0]

            # discriminator
            z = torch.randn(b, config.d, generator=noise)
            with torch.no_grad():
                fake = gen(z)
            d_fake = disc(fake)
            d_real = disc(batch)
            d_loss = F.softplus(d_fake).mean() + F.softplus(-d_real).mean()
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()

            if step % config.r1_interval == 0:
                real = batch.detach().requires_grad_(True)
                d_out = disc(real)
                grad = torch.autograd.grad(d_out.sum(), real, create_graph=True)[0]
                r1 = grad.pow(2).sum(dim=(1, 2, 3)).mean()
                (config.r1_gamma / 2 * r1 * config.r1_interval).backward()
            opt_d.step()

            # generator
            z = torch.randn(b, config.d, generator=noise)
            g_loss = F.softplus(-disc(gen(z))).mean()
            opt_g.zero_grad(set_to_none=True)
            g_loss.backward()

            if step % config.pl_interval == 0:
                pl_b = max(2, b // 4)
                z = torch.randn(pl_b, config.d, generator=noise)
                w = gen.mapping(z)
                w_plus = broadcast_torch(w, gen.num_layers).contiguous()
                w_plus.requires_grad_(True)
                img = gen.synthesis(w_plus)
                y = torch.randn(img.shape, generator=noise) / np.sqrt(
                    img.shape[2] * img.shape[3])
                grad = torch.autograd.grad((img * y).sum(), w_plus,
                                           create_graph=True)[0]
                lengths = (grad.pow(2).sum(dim=(1, 2)) + 1e-8).sqrt()
                pl_mean = pl_mean.lerp(lengths.mean().detach(), config.pl_decay)
                pl_penalty = (lengths - pl_mean).pow(2).mean()
                (config.pl_weight * pl_penalty * config.pl_interval).backward()
                pl_penalties.append(float(pl_penalty.detach()))
            opt_g.step()

            d_losses.append(float(d_loss.detach()))
            g_losses.append(float(g_loss.detach()))
            step += 1
            if config.log_every and step % config.log_every == 0:
                log.info("epoch %d step %d d=%.3f g=%.3f",
                         epoch, step, d_losses[-1], g_losses[-1])

        entry = {
            "epoch": epoch,
            "d_loss": float(np.mean(d_losses)),
            "g_loss": float(np.mean(g_losses)),
            "path_length_penalty": float(np.mean(pl_penalties)),
            "path_length_mean": float(pl_mean),
        }
        if (config.select_interval
                and (epoch + 1) % config.select_interval == 0):
            fid = _snapshot_fid(gen, config, epoch)
            entry["snapshot_fid"] = fid
            if fid < best_fid:
                best_fid, best_epoch = fid, epoch
                best_state = {k: v.detach().clone()
                              for k, v in gen.state_dict().items()}
        epoch_log.append(entry)
        log.info("epoch %d: d=%.4f g=%.4f pl=%.4f%s", epoch, entry["d_loss"],
                 entry["g_loss"], entry["path_length_penalty"],
                 f" fid={entry['snapshot_fid']:.2f}"
                 if "snapshot_fid" in entry else "")

        collapse_streak = collapse_streak + 1 if entry["d_loss"] < 1e-4 else 0
        if collapse_streak >= 5:
            raise DivergenceError(
                f"discriminator loss below 1e-4 for 5 consecutive epochs "
                f"(epoch {epoch}); generator has collapsed")

    if best_state is not None:
        gen.load_state_dict(best_state)
    gen.training_meta = {
        "epochs": config.epochs,
        "n_images": n,
        "seed": config.seed,
        "selected_epoch": best_epoch,
        "log": epoch_log,
    }
    gen.eval()
    return gen


def _snapshot_fid(gen, config, epoch):
    from . import metrics  # late import: metrics depends on this module
    # fresh generator: scoring must not perturb the training RNG stream
    noise = torch.Generator().manual_seed(config.seed + 90001 + epoch)
    with torch.no_grad():
        z = torch.randn(config.select_n, config.d, generator=noise)
        samples = [gen(z[i:i + 64]).permute(0, 2, 3, 1).numpy()
                   for i in range(0, config.select_n, 64)]
    samples = [im for chunk in samples for im in chunk]
    return metrics.fid_toy(samples, config.select_images[:config.select_n],
                           config.select_embedder)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_generator(model: StyleGenerator, path):
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {
        "d": model.d,
        "L": model.num_layers,
        "channels": list(model.channels),
        "image_size": IMAGE_SIZE,
        "training_meta": model.training_meta,
    }
    return ckpt.save_checkpoint(path, "style_generator", arrays, meta)


def load_generator(path) -> StyleGenerator:
    kind, arrays, meta = ckpt.load_checkpoint(path)
    if kind != "style_generator":
        raise ValueError(f"checkpoint at {path} holds {kind!r}, not a generator")
    model = StyleGenerator(meta["d"], tuple(meta["channels"]))
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.training_meta = meta.get("training_meta", {})
    model.eval()
    return model
