import numpy as np
import pytest
import torch

from deshadow.imaging import ImageTensor, ShadowMask
from deshadow.networks import SolverWeights
from deshadow.solver import SolverConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """Small float64 solver config for exact-math tests."""
    return SolverConfig(k=3, widths=(8, 16), blocks_per_scale=1, dtype="float64")


@pytest.fixture
def small_weights(small_cfg):
    return SolverWeights(small_cfg, seed=7, stable_init=False)


@pytest.fixture
def zero_prior_weights(small_cfg):
    """Weights whose prior nets output exactly zero (zero-head fixture)."""
    weights = SolverWeights(small_cfg, seed=7, stable_init=False)
    for net in weights.prior_nets:
        net.stack.zero_head_()
    return weights


def random_image(rng, h=16, w=16):
    return ImageTensor(rng.uniform(0.0, 1.0, size=(h, w, 3)))


def random_mask(rng, h=16, w=16, p=0.5):
    return ShadowMask((rng.uniform(size=(h, w)) < p).astype(np.float64))


def random_batch(seed, n=1, h=16, w=16, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    img = torch.rand(n, 3, h, w, generator=gen).to(dtype)
    mask = (torch.rand(n, 1, h, w, generator=gen) > 0.5).to(dtype)
    return img, mask
