import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from oldphoto.config import PipelineConfig
from oldphoto.restore.networks import RestoreArch, build_nets

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


MICRO_ARCH = RestoreArch(
    ngf=4, latent_channels=4, n_res=1, mapping_width=8, n_local_res=1, n_global_res=1,
    n_shared_res=1, ndf=4, d_layers=2, latent_d_layers=1, perceptual_layers=2, perceptual_width=4,
)


@pytest.fixture
def micro_nets():
    return build_nets(MICRO_ARCH, seed=0)


MICRO_CFG = PipelineConfig(
    crop=32, batch_size=2, max_steps=3, epochs=2, checkpoint_every=0,
    ngf=4, latent_channels=4, n_res=1, mapping_width=8, n_shared_res=1, ndf=4, d_layers=2,
    latent_d_layers=1, perceptual_width=4, perceptual_layers=2, unet_base=4, unet_depth=2,
    face_size=32, face_width=16, face_hidden=8, feather=4, tile=16, tile_overlap=4, kl_weight=1e-3,
)


@pytest.fixture
def micro_cfg():
    return MICRO_CFG


def signed_images(n, size, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 3, size, size, generator=g) * 2 - 1
