"""Command-line entry points tying the pipeline into reproducible runs.

Workspace layout (rooted at --out, default ./runs):

    data/{train,aux,test}/          exported datasets (synth)
    checkpoints/{generator,flow,embedder}/
    <command>-<timestamp>-s<seed>/  one directory per command invocation:
        config.json   verbatim echo of the effective config
        log.txt       timing and progress (never part of result digests)
        result.json   machine-readable outcome
        ...artifacts  images (16-bit PNG), float arrays (npz), CSV tables

Every command exits 0 on success and nonzero with a structured error line on
failure; missing upstream artifacts name the command that produces them.
"""

import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import (checkpoint as ckpt_mod, config as cfg_mod, degrade, flow as fl,
               generator as gen_mod, metrics as M, quantify as Q, rls,
               synthdata as sd, uncertainty as unc, util, viz)
from .errors import MissingCheckpointError

log = logging.getLogger(__name__)


class RunContext:
    """One command invocation: run directory, logging, result.json."""

    def __init__(self, command: str, config: cfg_mod.RunConfig, out_override,
                 seed_override):
        self.command = command
        self.config = config
        if seed_override is not None:
            self.config.run_seed = seed_override
        self.root = Path(out_override or config.output_dir)
        stamp = time.strftime("%Y%m%d-%H%M%S")
        self.run_dir = self.root / f"{command}-{stamp}-s{self.config.run_seed}"
        self.run_dir.mkdir(parents=True, exist_ok=True)
        cfg_mod.save_config(self.config, self.run_dir / "config.json")
        handler = logging.FileHandler(self.run_dir / "log.txt")
        handler.setFormatter(logging.Formatter("%(asctime)s %(message)s"))
        logging.getLogger().addHandler(handler)
        self._handler = handler
        self._t0 = time.time()

    @property
    def seed(self):
        return self.config.run_seed

    def path(self, name):
        return self.run_dir / name

    def checkpoint_dir(self, name):
        return self.root / "checkpoints" / name

    def data_dir(self, split):
        return self.root / "data" / split

    def require_generator(self):
        path = self.checkpoint_dir("generator")
        if not ckpt_mod.exists(path):
            raise MissingCheckpointError("generator checkpoint", "train-gan")
        return gen_mod.load_generator(path)

    def require_flow(self):
        path = self.checkpoint_dir("flow")
        if not ckpt_mod.exists(path):
            raise MissingCheckpointError("flow checkpoint", "train-flow")
        return fl.load_flow(path)

    def require_embedder(self):
        path = self.checkpoint_dir("embedder")
        if not ckpt_mod.exists(path):
            raise MissingCheckpointError("embedder checkpoint", "train-gan")
        return M.load_embedder(path)

    def require_dataset(self, split):
        manifest = self.data_dir(split) / "manifest.json"
        if not manifest.is_file():
            raise MissingCheckpointError(f"{split} dataset", "synth")
        return sd.load_dataset(manifest)

    def finish(self, result: dict) -> int:
        result = {"command": self.command, "seed": self.seed, **result}
        with open(self.run_dir / "result.json", "w") as fh:
            json.dump(result, fh, indent=1, sort_keys=True)
        log.info("%s finished in %.1fs -> %s", self.command,
                 time.time() - self._t0, self.run_dir)
        logging.getLogger().removeHandler(self._handler)
        click.echo(str(self.run_dir / "result.json"))
        return 0


def _run(command, config_path, out, seed, body):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    config = cfg_mod.load_config(config_path) if config_path else cfg_mod.RunConfig()
    try:
        ctx = RunContext(command, config, out, seed)
    except Exception as err:  # config/IO failures happen before the run dir
        click.echo(f"error: {err}", err=True)
        sys.exit(2)
    try:
        result = body(ctx)
        sys.exit(ctx.finish(result))
    except MissingCheckpointError as err:
        payload = {"error": str(err), "producing_command": err.producing_command}
        with open(ctx.run_dir / "result.json", "w") as fh:
            json.dump({"command": command, "failed": True, **payload}, fh, indent=1)
        click.echo(f"error: {err}", err=True)
        sys.exit(3)
    except Exception as err:
        with open(ctx.run_dir / "result.json", "w") as fh:
            json.dump({"command": command, "failed": True, "error": str(err)},
                      fh, indent=1)
        click.echo(f"error: {err}", err=True)
        sys.exit(1)


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON run configuration")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="override run_seed")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="workspace root (default from config)")(fn)
    return fn


@click.group()
def main():
    """Latent-search super-resolution pipeline."""


# ---------------------------------------------------------------------------
# data and training commands
# ---------------------------------------------------------------------------

@main.command()
@common_options
def synth(config_path, seed, out):
    """Render and export the train/aux/test datasets."""

    def body(ctx):
        data_cfg = ctx.config.data
        counts = {"train": data_cfg.train_per_group,
                  "aux": data_cfg.aux_per_group,
                  "test": data_cfg.test_per_group}
        outputs = {}
        for i, (split, per_group) in enumerate(counts.items()):
            items = sd.pooled_dataset(
                per_group, seed=util.derive_seed(ctx.seed, "data", split) % 10**6,
                size=data_cfg.hr_size)
            manifest = sd.export_dataset(items, ctx.data_dir(split), seed=ctx.seed)
            with open(manifest) as fh:
                outputs[split] = {"n": len(items),
                                  "manifest_digest": util.json_digest(json.load(fh))}
            log.info("exported %s: %d images", split, len(items))
        return {"datasets": outputs}

    _run("synth", config_path, seed, out, body)


@main.command("train-gan")
@common_options
def train_gan(config_path, seed, out):
    """Train the style generator on the exported train split, plus the
    metrics embedder on the aux split."""

    def body(ctx):
        g = ctx.config.generator
        items = ctx.require_dataset("train")
        images = [im for im, _ in items]

        # embedder first: it also scores generator snapshots during training
        aux = ctx.require_dataset("aux")
        label_map = {(a, c): i for i, (a, c) in enumerate(
            (a, c) for a in sd.ASSAYS for c in sd.CLASSES)}
        aux_labels = [label_map[(p.assay, p.class_label)] for _, p in aux]
        aux_images = [im for im, _ in aux]
        embedder = M.train_embedder(
            aux_images, aux_labels, n_classes=4,
            epochs=ctx.config.metrics.embed_epochs,
            seed=util.derive_seed(ctx.seed, "embedder") % 2**31)
        emb_path = M.save_embedder(embedder, ctx.checkpoint_dir("embedder"))

        cfg = gen_mod.GanTrainConfig(
            d=g.d, channels=tuple(g.channels), epochs=g.epochs,
            batch_size=g.batch_size, lr=g.lr, betas=tuple(g.betas),
            r1_gamma=g.r1_gamma, r1_interval=g.r1_interval,
            pl_weight=g.pl_weight, pl_interval=g.pl_interval,
            pl_decay=g.pl_decay, seed=util.derive_seed(ctx.seed, "gan") % 2**31,
            deterministic=g.deterministic,
            select_interval=g.select_interval,
            select_images=aux_images, select_embedder=embedder)
        model = gen_mod.train_generator(images, cfg)
        gen_path = gen_mod.save_generator(model, ctx.checkpoint_dir("generator"))

        last = model.training_meta["log"][-1]
        return {
            "generator_digest": ckpt_mod.checkpoint_digest(gen_path),
            "embedder_digest": ckpt_mod.checkpoint_digest(emb_path),
            "selected_epoch": model.training_meta.get("selected_epoch"),
            "final_epoch": last,
            "n_train_images": len(images),
        }

    _run("train-gan", config_path, seed, out, body)


@main.command("train-flow")
@common_options
def train_flow(config_path, seed, out):
    """Fit the style-density flow to samples from the trained generator."""

    def body(ctx):
        f = ctx.config.flow
        generator = ctx.require_generator()
        styles = gen_mod.sample_styles(
            generator, f.n_styles, seed=util.derive_seed(ctx.seed, "styles") % 2**31)
        cfg = fl.FlowTrainConfig(
            n_blocks=f.n_blocks, hidden=f.hidden, epochs=f.epochs,
            batch_size=f.batch_size, lr=f.lr, holdout_frac=f.holdout_frac,
            seed=util.derive_seed(ctx.seed, "flow") % 2**31,
            deterministic=f.deterministic)
        model = fl.train_flow(styles, cfg)
        path = fl.save_flow(model, ctx.checkpoint_dir("flow"))
        return {
            "flow_digest": ckpt_mod.checkpoint_digest(path),
            "final_epoch": model.training_meta["log"][-1],
            "n_styles": f.n_styles,
        }

    _run("train-flow", config_path, seed, out, body)


# ---------------------------------------------------------------------------
# analysis commands
# ---------------------------------------------------------------------------

@main.command("diagnose-gauss")
@common_options
@click.option("--n-samples", default=5000, show_default=True)
def diagnose_gauss(config_path, seed, out, n_samples):
    """Squared-norm gaussianization diagnostic: raw W vs whitening vs flow."""

    def body(ctx):
        generator = ctx.require_generator()
        flow_model = ctx.require_flow()
        styles = gen_mod.sample_styles(
            generator, n_samples, seed=util.derive_seed(ctx.seed, "diag") % 2**31)
        transforms = {
            "raw_w": styles,
            "pulse": fl.pulse_gaussianize(styles),
            "flow": fl.flow_forward(flow_model, styles)[0],
        }
        report = {}
        arrays = {}
        for name, vectors in transforms.items():
            diag = fl.diagnose_gaussianization(vectors)
            report[name] = {
                "ks_statistic": diag.ks_statistic,
                "ks_pvalue": diag.ks_pvalue,
                "mean_squared_norm": diag.mean_norm,
            }
            arrays[name] = diag.squared_norms
        np.savez(ctx.path("squared_norms.npz"), **arrays)
        _plot_norm_densities(arrays, generator.d, ctx.path("gaussianization.png"))
        report["ordering_ok"] = (report["flow"]["ks_statistic"]
                                 < report["pulse"]["ks_statistic"]
                                 < report["raw_w"]["ks_statistic"])
        report["target_dof"] = generator.d
        return report

    _run("diagnose-gauss", config_path, seed, out, body)


def _plot_norm_densities(arrays, d, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from scipy import stats as sstats
    fig, ax = plt.subplots(figsize=(6, 4))
    grid = np.linspace(0, max(np.percentile(v, 99.5) for v in arrays.values()), 400)
    for name, vals in arrays.items():
        kde = sstats.gaussian_kde(vals)
        ax.plot(grid, kde(grid), label=name)
    ax.plot(grid, sstats.chi2.pdf(grid, d), "k--", label=f"chi2({d})")
    ax.set_xlabel("squared norm")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _load_lr_input(path, factor):
    img = sd.load_image_u16(path)
    hr = sd.DEFAULT_SIZE
    if img.shape[:2] == (hr, hr):
        spec = degrade.DegradationSpec(downscale_factor=factor)
        return degrade.observe(img, spec), img
    if img.shape[:2] == (hr // factor, hr // factor):
        return img, None
    raise ValueError(
        f"input image must be {hr}x{hr} (HR) or {hr // factor}x{hr // factor} "
        f"(LR at {factor}x), got {img.shape}")


@main.command()
@common_options
@click.option("--input", "input_path", type=click.Path(exists=True),
              required=True, help="LR observation (or HR image to degrade)")
@click.option("--variant", type=click.Choice(rls.VARIANTS), default=None)
@click.option("--factor", type=click.Choice(["8", "16"]), default="16")
def sr(config_path, seed, out, input_path, variant, factor):
    """Reconstruct one LR image."""

    def body(ctx):
        generator = ctx.require_generator()
        flow_model = ctx.require_flow()
        factor_i = int(factor)
        y, ground_truth = _load_lr_input(input_path, factor_i)
        spec = degrade.DegradationSpec(downscale_factor=factor_i)
        cfg = _rls_config(ctx, variant)
        result = rls.superresolve(y, generator, flow_model, spec, cfg)
        rls.save_result(result, ctx.run_dir, "reconstruction")
        sheet = [im for im in (y, result.sr_image, ground_truth) if im is not None]
        viz.contact_sheet([sheet], ctx.path("sheet.png"))
        best = min(result.trajectory, key=lambda e: e["total"])
        summary = {"input": str(input_path), "factor": factor_i,
                   "variant": cfg.variant, "final_terms": best,
                   "per_row_log_density": result.per_row_log_density}
        if ground_truth is not None:
            summary["psnr_vs_ground_truth"] = M.psnr(result.sr_image, ground_truth)
        return summary

    _run("sr", config_path, seed, out, body)


def _rls_config(ctx, variant=None, **overrides) -> rls.RLSConfig:
    r = ctx.config.rls
    return rls.RLSConfig(
        lambda_w=r.lambda_w, lambda_c=r.lambda_c, iterations=r.iterations,
        learning_rate=r.learning_rate, init=r.init, init_n=r.init_n,
        variant=variant or r.variant, seed=util.derive_seed(ctx.seed, "rls"),
        **overrides)


def _reconstruct_batchwise(ctx, lr_stack, generator, flow_model, spec, cfg):
    batch = ctx.config.rls.batch_size
    results = []
    for start in range(0, len(lr_stack), batch):
        results.extend(rls.superresolve_batch(
            lr_stack[start:start + batch], generator, flow_model, spec, cfg))
        log.info("reconstructed %d/%d", min(start + batch, len(lr_stack)),
                 len(lr_stack))
    return results


def _test_images(ctx, n):
    items = ctx.require_dataset("test")
    if n > len(items):
        n = len(items)
    rng = np.random.default_rng(util.derive_seed(ctx.seed, "eval-pick") % 2**32)
    picks = rng.choice(len(items), n, replace=False)
    return [items[i][0] for i in picks]


@main.command("eval")
@common_options
@click.option("--variant", type=click.Choice(rls.VARIANTS), default=None)
@click.option("--factor", type=click.Choice(["8", "16"]), default="16")
def eval_cmd(config_path, seed, out, variant, factor):
    """Reconstruction quality metrics on the test split."""

    def body(ctx):
        generator = ctx.require_generator()
        flow_model = ctx.require_flow()
        embedder = ctx.require_embedder()
        factor_i = int(factor)
        spec = degrade.DegradationSpec(downscale_factor=factor_i)
        hr = _test_images(ctx, ctx.config.metrics.n_eval)
        lr = np.stack([degrade.observe(im, spec) for im in hr])
        cfg = _rls_config(ctx, variant)
        results = _reconstruct_batchwise(ctx, lr, generator, flow_model, spec, cfg)
        sr_images = [r.sr_image for r in results]
        report = M.evaluate_reconstructions(sr_images, hr, embedder)
        report.save(ctx.path("metrics.json"), ctx.path("metrics.csv"))
        rls.write_batch_manifest(
            [(f"test_{i:04d}", r) for i, r in enumerate(results)],
            ctx.path("reconstructions.csv"))
        rows = [[lr[i], sr_images[i], hr[i]] for i in range(min(8, len(hr)))]
        viz.contact_sheet(rows, ctx.path("sheet.png"))
        np.savez(ctx.path("eval_arrays.npz"), lr=lr,
                 sr=np.stack(sr_images), hr=np.stack(hr))
        return {"factor": factor_i, "variant": cfg.variant,
                "metrics": report.to_json_dict()}

    _run("eval", config_path, seed, out, body)


@main.command()
@common_options
@click.option("--factor", type=click.Choice(["8", "16"]), default="16")
@click.option("--n", "n_images", default=None, type=int,
              help="test images (default metrics.n_eval)")
def ablate(config_path, seed, out, factor, n_images):
    """Compare the full objective against its ablation variants."""

    def body(ctx):
        generator = ctx.require_generator()
        flow_model = ctx.require_flow()
        embedder = ctx.require_embedder()
        factor_i = int(factor)
        spec = degrade.DegradationSpec(downscale_factor=factor_i)
        hr = _test_images(ctx, n_images or ctx.config.metrics.n_eval)
        lr = np.stack([degrade.observe(im, spec) for im in hr])
        table = {}
        variant_images = {}
        for variant in rls.VARIANTS:
            cfg = _rls_config(ctx, variant)
            results = _reconstruct_batchwise(ctx, lr, generator, flow_model,
                                             spec, cfg)
            sr_images = [r.sr_image for r in results]
            variant_images[variant] = sr_images
            table[variant] = {
                "mean_prior_w": float(np.mean(
                    [np.mean(r.per_row_log_density) for r in results])),
                "mean_data_term_per_px": float(np.mean(
                    [min(e["data_term"] for e in r.trajectory) / lr[0].size
                     for r in results])),
                "fid_toy_vs_hr": M.fid_toy(sr_images, hr, embedder),
                "mean_psnr": float(np.mean(
                    [M.psnr(s, h) for s, h in zip(sr_images, hr)])),
            }
            log.info("variant %s: %s", variant, table[variant])
        rows = [[lr[i]] + [variant_images[v][i] for v in rls.VARIANTS] + [hr[i]]
                for i in range(min(6, len(hr)))]
        viz.contact_sheet(rows, ctx.path("sheet.png"))
        np.savez(ctx.path("ablate_arrays.npz"), lr=lr, hr=np.stack(hr),
                 **{v: np.stack(variant_images[v]) for v in rls.VARIANTS})
        return {"factor": factor_i, "n_images": len(hr), "variants": table}

    _run("ablate", config_path, seed, out, body)


@main.command()
@common_options
@click.option("--factor", type=click.Choice(["8", "16"]), default="16")
@click.option("--n", "n_images", default=30, show_default=True)
def robustness(config_path, seed, out, factor, n_images):
    """Reconstruction stability under extra LR corruptions."""

    corruption_grid = [
        ("clean", []),
        ("gaussian_005", [{"kind": "gaussian_noise", "sigma": 0.05}]),
        ("gaussian_010", [{"kind": "gaussian_noise", "sigma": 0.1}]),
        ("salt_pepper_005", [{"kind": "salt_pepper", "density": 0.05}]),
        ("blur_05", [{"kind": "gaussian_blur", "sigma": 0.5}]),
    ]

    def body(ctx):
        generator = ctx.require_generator()
        flow_model = ctx.require_flow()
        factor_i = int(factor)
        hr = _test_images(ctx, n_images)
        clean_spec = degrade.DegradationSpec(downscale_factor=factor_i)
        lr_clean = np.stack([degrade.observe(im, clean_spec) for im in hr])
        cfg = _rls_config(ctx)
        recon = {}
        sheets = []
        for name, extra in corruption_grid:
            spec = degrade.DegradationSpec(downscale_factor=factor_i, extra=extra)
            lr = np.stack([
                degrade.corrupt(lr_clean[i], spec,
                                util.derive_seed(ctx.seed, name, i) % 2**32)
                for i in range(len(hr))])
            results = _reconstruct_batchwise(ctx, lr, generator, flow_model,
                                             clean_spec, cfg)
            recon[name] = [r.sr_image for r in results]
            sheets.append([lr[0], recon[name][0], hr[0]])
            log.info("robustness condition %s done", name)
        summary = {}
        base = recon["clean"]
        for name, _ in corruption_grid[1:]:
            deltas = [M.psnr(base[i], hr[i]) - M.psnr(recon[name][i], hr[i])
                      for i in range(len(hr))]
            to_clean = [M.psnr(recon[name][i], base[i]) for i in range(len(hr))]
            summary[name] = {
                "median_psnr_drop_vs_clean_db": float(np.median(deltas)),
                "median_psnr_to_clean_recon_db": float(np.median(to_clean)),
            }
        viz.contact_sheet(sheets, ctx.path("sheet.png"))
        np.savez(ctx.path("robustness_arrays.npz"), hr=np.stack(hr),
                 **{k: np.stack(v) for k, v in recon.items()})
        return {"factor": factor_i, "n_images": len(hr),
                "corruptions": summary}

    _run("robustness", config_path, seed, out, body)


@main.command("uncertainty")
@common_options
@click.option("--factor", type=click.Choice(["8", "16"]), default="16")
@click.option("--n-samples", default=None, type=int)
def uncertainty_cmd(config_path, seed, out, factor, n_samples):
    """Sample multiple plausible reconstructions for one test image."""

    def body(ctx):
        generator = ctx.require_generator()
        flow_model = ctx.require_flow()
        factor_i = int(factor)
        spec = degrade.DegradationSpec(downscale_factor=factor_i)
        hr = _test_images(ctx, 1)[0]
        y = degrade.observe(hr, spec)
        n = n_samples or ctx.config.assay.uncertainty_samples
        result = unc.sample_solutions(
            y, generator, flow_model, spec, n=n, base_config=_rls_config(ctx),
            seed=util.derive_seed(ctx.seed, "uncertainty"))
        unc.save_uncertainty_report(result, ctx.run_dir, y=y, ground_truth=hr)
        pair_dists = []
        for i in range(len(result.samples)):
            for j in range(i + 1, len(result.samples)):
                pair_dists.append(float(np.linalg.norm(
                    result.samples[i].sr_image - result.samples[j].sr_image)))
        return {"factor": factor_i, "n_samples": len(result.samples),
                "sigma": result.sigma,
                "per_sample_data_term": result.per_sample_data_term,
                "min_pairwise_sr_distance": min(pair_dists)}

    _run("uncertainty", config_path, seed, out, body)


@main.command()
@common_options
@click.option("--assay", "assay_name",
              type=click.Choice(list(sd.ASSAYS) + ["both"]), default="both")
def assay(config_path, seed, out, assay_name):
    """The two-step pipeline: reconstruct, then measure phenotype features."""

    def body(ctx):
        generator = ctx.require_generator()
        flow_model = ctx.require_flow()
        a_cfg = ctx.config.assay
        names = list(sd.ASSAYS) if assay_name == "both" else [assay_name]
        reports = {}
        for name in names:
            factor = (a_cfg.translocation_factor if name == "translocation"
                      else a_cfg.golgi_factor)
            report = Q.run_assay(
                generator, flow_model, name, n=a_cfg.n_per_condition,
                seed=util.derive_seed(ctx.seed, "assay", name) % 2**31,
                factor=factor, config=_rls_config(ctx))
            reports[name] = report
            with open(ctx.path(f"assay_{name}.json"), "w") as fh:
                json.dump(report.to_json_dict(), fh, indent=1)
            _write_assay_csv(report, ctx.path(f"assay_{name}.csv"))
            _plot_assay_box(report, ctx.path(f"assay_{name}_boxplot.png"))
        return {name: {"effect_sizes": r.effect_sizes,
                       "rank_sum_pvalues": r.rank_sum_pvalues,
                       "failures": r.failures}
                for name, r in reports.items()}

    _run("assay", config_path, seed, out, body)


def _write_assay_csv(report, path):
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tier", "condition", "value"])
        for tier, dists in report.distributions.items():
            for condition, values in dists.items():
                for v in values:
                    writer.writerow([tier, condition, v])


def _plot_assay_box(report, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    tiers = [t for t in report.distributions
             if report.distributions[t].get("negative")]
    fig, ax = plt.subplots(figsize=(1.8 * len(tiers) + 1, 4))
    positions, data, labels = [], [], []
    for i, tier in enumerate(tiers):
        data.append(report.distributions[tier]["negative"])
        positions.append(3 * i)
        data.append(report.distributions[tier]["positive"])
        positions.append(3 * i + 1)
        labels.append(tier)
    bp = ax.boxplot(data, positions=positions, widths=0.8, patch_artist=True)
    for i, box in enumerate(bp["boxes"]):
        box.set_facecolor("#7fbf7f" if i % 2 == 0 else "#bf7fbf")
    ax.set_xticks([3 * i + 0.5 for i in range(len(tiers))])
    ax.set_xticklabels(labels, rotation=20)
    ax.set_ylabel("translocation ratio" if report.assay == "translocation"
                  else "mean spot area (px^2)")
    ax.set_title(f"{report.assay} ({report.factor}x), "
                 f"n={report.n_per_condition}/condition")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


@main.command()
@common_options
@click.option("--assay", "assay_name", type=click.Choice(list(sd.ASSAYS)),
              default="golgi", show_default=True)
@click.option("--shuffle-labels", is_flag=True, default=False,
              help="random-label control")
def classify(config_path, seed, out, assay_name, shuffle_labels):
    """Phenotype classifier accuracy across LR / SR / HR tiers."""

    def body(ctx):
        generator = ctx.require_generator()
        flow_model = ctx.require_flow()
        a_cfg = ctx.config.assay
        factor = (a_cfg.translocation_factor if assay_name == "translocation"
                  else a_cfg.golgi_factor)
        table = Q.classifier_experiment(
            generator, flow_model, assay_name,
            n_train=a_cfg.classifier_train_per_condition,
            n_test=a_cfg.classifier_test_per_condition,
            seed=util.derive_seed(ctx.seed, "classify", assay_name) % 2**31,
            factor=factor, config=_rls_config(ctx),
            epochs=a_cfg.classifier_epochs, shuffle_labels=shuffle_labels)
        _write_accuracy_csv(table, ctx.path("accuracy.csv"))
        return table

    _run("classify", config_path, seed, out, body)


def _write_accuracy_csv(table, path):
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        columns = ["LR", "no_regu", "RLS", "HR"]
        writer.writerow(["assay"] + columns)
        writer.writerow([table["assay"]]
                        + [table["accuracy"][c] for c in columns])


@main.command()
@click.option("--run", "run_dir", type=click.Path(exists=True), required=True,
              help="a previous run directory")
def report(run_dir):
    """Regenerate figures/tables of a finished run from its stored arrays."""
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    run_dir = Path(run_dir)
    result_path = run_dir / "result.json"
    if not result_path.is_file():
        click.echo(f"error: {run_dir} has no result.json", err=True)
        sys.exit(2)
    with open(result_path) as fh:
        result = json.load(fh)
    command = result.get("command")
    regenerated = []
    if command == "diagnose-gauss":
        with np.load(run_dir / "squared_norms.npz") as data:
            arrays = {k: data[k] for k in data.files}
        _plot_norm_densities(arrays, result["target_dof"],
                             run_dir / "gaussianization.png")
        regenerated.append("gaussianization.png")
    elif command == "assay":
        for name in sd.ASSAYS:
            json_path = run_dir / f"assay_{name}.json"
            if not json_path.is_file():
                continue
            with open(json_path) as fh:
                payload = json.load(fh)
            rep = Q.AssayReport(
                assay=payload["assay"], factor=payload["factor"],
                n_per_condition=payload["n_per_condition"],
                distributions=payload["distributions"],
                effect_sizes=payload["effect_sizes"],
                rank_sum_pvalues=payload["rank_sum_pvalues"],
                failures=payload["failures"])
            _plot_assay_box(rep, run_dir / f"assay_{name}_boxplot.png")
            _write_assay_csv(rep, run_dir / f"assay_{name}.csv")
            regenerated.append(f"assay_{name}_boxplot.png")
    elif command in ("eval", "ablate", "robustness"):
        npz = {"eval": "eval_arrays.npz", "ablate": "ablate_arrays.npz",
               "robustness": "robustness_arrays.npz"}[command]
        with np.load(run_dir / npz) as data:
            arrays = {k: data[k] for k in data.files}
        hr = arrays["hr"]
        if command == "eval":
            rows = [[arrays["lr"][i], arrays["sr"][i], hr[i]]
                    for i in range(min(8, len(hr)))]
        elif command == "ablate":
            rows = [[arrays["lr"][i]] + [arrays[v][i] for v in rls.VARIANTS]
                    + [hr[i]] for i in range(min(6, len(hr)))]
        else:
            names = [k for k in arrays if k not in ("hr",)]
            rows = [[arrays[name][0], hr[0]] for name in sorted(names)]
        viz.contact_sheet(rows, run_dir / "sheet.png")
        regenerated.append("sheet.png")
    else:
        click.echo(f"nothing to regenerate for command {command!r}")
    for name in regenerated:
        click.echo(str(run_dir / name))
    sys.exit(0)


if __name__ == "__main__":
    main()
