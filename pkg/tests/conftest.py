"""Shared fixtures: small-dimension configs, datasets, and trained systems."""

import pytest

from triavatar import synthetic
from triavatar.config import RunConfig

# Small enough that a full train/invert cycle runs in seconds.
TINY = dict(latent_dim=8, n_layers=3, n_bases=4, plane_resolution=16, channels=4,
            window=3, decoder_hidden=8, avg_samples=200, samples_per_ray=4,
            loss_levels=1, loss_filters=4, patch=4, smooth_samples=8,
            n_id=3, n_mo=2, iterations=2, batch=1, invert_steps=3,
            data_identities=3, data_frames=4, data_resolution=12,
            data_train_samples=4, data_holdout=0.34)

TINY_CFG_KEYS = {
    "latent_dim": "model.latent_dim", "n_layers": "model.n_layers",
    "n_bases": "model.n_bases", "plane_resolution": "model.plane_resolution",
    "channels": "model.channels", "window": "model.window",
    "decoder_hidden": "model.decoder_hidden", "avg_samples": "model.avg_samples",
    "samples_per_ray": "renderer.samples", "loss_levels": "loss.levels",
    "loss_filters": "loss.filters", "patch": "loss.patch",
    "smooth_samples": "loss.smooth_samples", "n_id": "train.n_id",
    "n_mo": "train.n_mo", "iterations": "train.iterations", "batch": "train.batch",
    "invert_steps": "invert.steps", "data_identities": "data.n_identities",
    "data_frames": "data.n_frames", "data_resolution": "data.resolution",
    "data_train_samples": "data.train_samples", "data_holdout": "data.holdout_fraction",
}


def tiny_config(**over) -> RunConfig:
    kw = dict(TINY)
    kw.update(over)
    return RunConfig(**kw)


def tiny_cfg_lines(paths=None, **over):
    """The TINY settings as 'section.key=value' strings for file/CLI use."""
    kw = dict(TINY)
    kw.update(over)
    lines = [f"{TINY_CFG_KEYS[k]}={v}" for k, v in kw.items()]
    for key, val in (paths or {}).items():
        lines.append(f"paths.{key}={val}")
    return lines


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 clips x 4 frames at 12x12; the last clip is held out."""
    root = tmp_path_factory.mktemp("tinydata")
    synthetic.make_dataset(root, TINY["data_identities"], TINY["data_frames"],
                           seed=0, resolution=TINY["data_resolution"],
                           train_samples=TINY["data_train_samples"],
                           holdout_fraction=TINY["data_holdout"])
    return root


@pytest.fixture(scope="session")
def tiny_clips(tiny_dataset):
    return synthetic.ClipSet(tiny_dataset)


@pytest.fixture()
def tiny_system():
    return tiny_config().build_system()
