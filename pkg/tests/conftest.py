"""Shared fixtures: a tiny model checkpoint for CLI and service tests."""

import numpy as np
import pytest

from blobgen.config import ModelConfig, TrainConfig
from blobgen.inversion import Encoder
from blobgen.io import save_checkpoint
from blobgen.model import SceneModel

TINY = ModelConfig(k=2, d_in=6, d_style=5, d_noise=8, d_hidden=16, n_layers=2,
                   base_res=4, img_res=8, decoder_channels=(8, 4),
                   disc_channels=(4, 8), disc_feat=8)


@pytest.fixture(scope="session")
def tiny_model():
    model = SceneModel.create(TINY, TrainConfig(seed=0, steps=0), seed=0)
    model.encoder = Encoder(TINY, np.random.default_rng(1))
    model.ensure_trunc_mean(n=64)
    return model


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "tiny.ckpt"
    save_checkpoint(path, tiny_model)
    return path
