"""Session-scoped trained models for the integration and acceptance tests.

Training the toy generator takes tens of minutes, so the trained artifacts
are cached on disk under tests/.cache and reused across sessions. Datasets
are re-rendered on demand (deterministic and cheap). Delete the cache
directory to force a retrain.
"""

import dataclasses
from pathlib import Path

import numpy as np
import pytest

from latentsr import checkpoint as ckpt
from latentsr import flow as fl
from latentsr import generator as G
from latentsr import metrics as M
from latentsr import synthdata as sd

CACHE = Path(__file__).parent / ".cache" / "bundle-v1"

TRAIN_PER_GROUP = 1500
AUX_PER_GROUP = 400
TEST_PER_GROUP = 250
SEEDS = {"train": 100, "aux": 200, "test": 300,
         "gan": 0, "flow_styles": 50, "flow": 1, "embedder": 2}
GAN_EPOCHS = 28
FLOW_STYLES = 20000


@dataclasses.dataclass
class Bundle:
    generator: object
    flow: object
    embedder: object
    train_items: list
    aux_items: list
    test_items: list

    def images(self, split):
        return [im for im, _ in getattr(self, f"{split}_items")]

    def params(self, split):
        return [p for _, p in getattr(self, f"{split}_items")]


def render_datasets():
    train = sd.pooled_dataset(TRAIN_PER_GROUP, seed=SEEDS["train"])
    aux = sd.pooled_dataset(AUX_PER_GROUP, seed=SEEDS["aux"])
    test = sd.pooled_dataset(TEST_PER_GROUP, seed=SEEDS["test"])
    return train, aux, test


def build_bundle(cache: Path = CACHE) -> Bundle:
    train, aux, test = render_datasets()
    gen_dir, flow_dir, emb_dir = (cache / "generator", cache / "flow",
                                  cache / "embedder")

    if not (ckpt.exists(gen_dir) and ckpt.exists(flow_dir)
            and ckpt.exists(emb_dir)):
        cache.mkdir(parents=True, exist_ok=True)
        aux_images = [im for im, _ in aux]
        label_map = {(a, c): i for i, (a, c) in enumerate(
            (a, c) for a in sd.ASSAYS for c in sd.CLASSES)}
        aux_labels = [label_map[(p.assay, p.class_label)] for _, p in aux]
        embedder = M.train_embedder(aux_images, aux_labels, n_classes=4,
                                    epochs=8, seed=SEEDS["embedder"])
        M.save_embedder(embedder, emb_dir)

        gan_cfg = G.GanTrainConfig(
            epochs=GAN_EPOCHS, seed=SEEDS["gan"], select_interval=2,
            select_images=aux_images, select_embedder=embedder)
        generator = G.train_generator([im for im, _ in train], gan_cfg)
        G.save_generator(generator, gen_dir)

        styles = G.sample_styles(generator, FLOW_STYLES,
                                 seed=SEEDS["flow_styles"])
        flow_model = fl.train_flow(
            styles, fl.FlowTrainConfig(epochs=12, seed=SEEDS["flow"]))
        fl.save_flow(flow_model, flow_dir)

    return Bundle(
        generator=G.load_generator(gen_dir),
        flow=fl.load_flow(flow_dir),
        embedder=M.load_embedder(emb_dir),
        train_items=train,
        aux_items=aux,
        test_items=test,
    )


@pytest.fixture(scope="session")
def bundle():
    return build_bundle()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)


if __name__ == "__main__":
    import logging

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    build_bundle()
    print("bundle ready at", CACHE)
