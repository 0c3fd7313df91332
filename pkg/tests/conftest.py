import numpy as np
import pytest

from periodnet import numcore as nc
from periodnet.model import ModelConfig

# Small enough for exhaustive finite differences, large enough to exercise every module.
TINY = dict(C=2, L=12, T=6, D=4, heads=2, P_list=(3, 3), G=2, N_enc=2, N_dif=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY, r=2, ffn_width=8, init_std=0.3)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x``."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def weighted_sum(out: nc.Tensor, w: np.ndarray) -> nc.Tensor:
    """A generic scalar readout whose gradient exercises every output entry."""
    return nc.sum(nc.mul(out, nc.Tensor(w)))
