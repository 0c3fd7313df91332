"""Learnable regrouping of C variable streams into G synthetic streams and back.

Both maps are two-layer perceptrons acting on the trailing variable axis
only, so every ``(time, channel)`` position is transformed independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor

ACTIVATIONS = {"relu": nc.relu, "gelu": nc.gelu}


@dataclass
class IgmParams:
    Wg1: Tensor
    bg1: Tensor
    Wg2: Tensor
    bg2: Tensor
    Wu1: Tensor
    bu1: Tensor
    Wu2: Tensor
    bu2: Tensor
    activation: str = "relu"

    @property
    def C(self) -> int:
        return self.Wg1.shape[0]

    @property
    def G(self) -> int:
        return self.Wg2.shape[1]

    @property
    def h_g(self) -> int:
        return self.Wg1.shape[1]


def default_hidden(C: int, G: int) -> int:
    return max(C, 2 * G)


def init_igm(C: int, G: int, rng: np.random.Generator, h_g: int | None = None,
             std: float = 0.02, activation: str = "relu") -> IgmParams:
    if C < 1 or G < 1:
        raise ValueError(f"need C >= 1 and G >= 1, got C={C}, G={G}")
    h = h_g if h_g is not None else default_hidden(C, G)

    def w(*shape):
        return Tensor(rng.normal(0.0, std, shape), requires_grad=True)

    def b(n):
        return Tensor(np.zeros(n), requires_grad=True)

    return IgmParams(w(C, h), b(h), w(h, G), b(G), w(G, h), b(h), w(h, C), b(C), activation)


def _two_layer(x: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor, act: str) -> Tensor:
    if x.shape[-1] != W1.shape[0]:
        raise nc.ShapeError(f"last axis {x.shape[-1]} does not match expected {W1.shape[0]}")
    hidden = ACTIVATIONS[act](nc.add(nc.matmul(x, W1), b1))
    return nc.add(nc.matmul(hidden, W2), b2)


def regroup(X: Tensor, params: IgmParams) -> Tensor:
    """``(..., C) -> (..., G)``."""
    return _two_layer(X, params.Wg1, params.bg1, params.Wg2, params.bg2, params.activation)


def ungroup(Xp: Tensor, params: IgmParams) -> Tensor:
    """``(..., G) -> (..., C)``."""
    return _two_layer(Xp, params.Wu1, params.bu1, params.Wu2, params.bu2, params.activation)
