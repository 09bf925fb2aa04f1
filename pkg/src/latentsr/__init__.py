"""Super-resolution by regularized search in a generator's style space.

The package trains a small style-based generator and a masked autoregressive
flow on a synthetic microscopy-like domain, reconstructs high-resolution
images from heavily downscaled observations by MAP optimization over the
extended style space, and quantifies interpretable phenotype features on the
reconstructions.

Submodules
----------
synthdata   synthetic image domain with known phenotype parameters
generator   style-based generator (mapping + synthesis networks) and training
flow        masked autoregressive flow, gaussianization diagnostics
degrade     bicubic downscaling operator, corruption models, Laplace loglik
rls         the regularized latent-search optimizer and its ablation variants
uncertainty multi-restart sampling of plausible reconstructions
metrics     PSNR, MS-SSIM, toy-embedding FID/KID
quantify    handcrafted feature measurements and the classifier experiment
cli         command-line entry points and run-directory conventions
"""

__version__ = "0.1.0"
