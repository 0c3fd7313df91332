"""Multi-head attention and the period-local token mixers built on it.

Shapes follow ``(..., L, D)``: any number of leading stream/batch axes,
then time, then embedding channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor

MASK_BIAS = -1e9
MODES = ("pam", "spam", "full")


class MaskError(ValueError):
    pass


@dataclass
class MhaParams:
    Wq: Tensor
    Wk: Tensor
    Wv: Tensor
    Wo: Tensor
    heads: int

    def __post_init__(self):
        d = self.Wq.shape[0]
        if d % self.heads:
            raise ValueError(f"embedding dim {d} not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.Wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class PamConfig:
    P: int
    mode: str = "pam"

    def __post_init__(self):
        if self.P < 1:
            raise ValueError(f"period length must be positive, got {self.P}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mixer mode {self.mode!r}; expected one of {MODES}")


@dataclass
class RouterParams:
    M: Tensor
    query_mha: MhaParams
    answer_mha: MhaParams

    @property
    def r(self) -> int:
        return self.M.shape[0]


def init_mha(dim: int, heads: int, rng: np.random.Generator, std: float = 0.02) -> MhaParams:
    mats = [Tensor(rng.normal(0.0, std, (dim, dim)), requires_grad=True) for _ in range(4)]
    return MhaParams(*mats, heads=heads)


def init_router(dim: int, heads: int, r: int, rng: np.random.Generator, std: float = 0.02) -> RouterParams:
    if r < 1:
        raise ValueError(f"router length must be >= 1, got {r}")
    M = Tensor(rng.normal(0.0, std, (r, dim)), requires_grad=True)
    return RouterParams(M, init_mha(dim, heads, rng, std), init_mha(dim, heads, rng, std))


# ----------------------------------------------------------------------------
# core attention
# ----------------------------------------------------------------------------


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = nc.reshape(x, (*lead, n, heads, d // heads))
    return nc.swapaxes(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, hd = x.shape
    x = nc.swapaxes(x, -2, -3)
    return nc.reshape(x, (*lead, n, h * hd))


def attend(q: Tensor, k: Tensor, v: Tensor, heads: int, bias: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention on already-projected inputs.

    ``bias`` is added to the ``(..., heads, Lq, Lk)`` scores and must
    broadcast against them.  Returns the merged-head context ``(..., Lq, D)``.
    """
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scores = nc.scale(nc.matmul(qh, nc.transpose(kh)), 1.0 / math.sqrt(qh.shape[-1]))
    if bias is not None:
        scores = nc.add(scores, Tensor(bias))
    weights = nc.softmax(scores, axis=-1)
    if bias is not None:
        leak = np.where(np.broadcast_to(bias, weights.shape) < 0, weights.data, 0.0)
        if leak.size and leak.max() >= 1e-12:
            raise MaskError(f"masked attention weight {leak.max():.3e} exceeds 1e-12")
    return _merge_heads(nc.matmul(weights, vh))


def mha(query: Tensor, key: Tensor, value: Tensor, params: MhaParams, mask: np.ndarray | None = None) -> Tensor:
    """Multi-head attention; ``mask[i, j]`` True lets query ``i`` see key ``j``."""
    if key.shape[-2] != value.shape[-2]:
        raise nc.ShapeError(f"key length {key.shape[-2]} != value length {value.shape[-2]}")
    bias = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (query.shape[-2], key.shape[-2]):
            raise nc.ShapeError(f"mask shape {mask.shape} does not match ({query.shape[-2]}, {key.shape[-2]})")
        empty = np.flatnonzero(~mask.any(axis=-1))
        if empty.size:
            raise MaskError(f"query rows {empty.tolist()} have no visible keys")
        bias = np.where(mask, 0.0, MASK_BIAS)
    q = nc.matmul(query, params.Wq)
    k = nc.matmul(key, params.Wk)
    v = nc.matmul(value, params.Wv)
    return nc.matmul(attend(q, k, v, params.heads, bias), params.Wo)


# ----------------------------------------------------------------------------
# period-local mixers
# ----------------------------------------------------------------------------


def build_neighborhood_mask(L: int, P: int, mode: str = "pam") -> np.ndarray:
    """Boolean ``L x L`` visibility mask for PAM (``"pam"``) or SPAM (``"spam"``)."""
    if P < 1 or L % P:
        raise nc.ShapeError(f"sequence length {L} is not a multiple of period {P}")
    t = np.arange(L)
    if mode == "pam":
        blk = t // P
        return np.abs(blk[:, None] - blk[None, :]) <= 1
    if mode == "spam":
        diff = t[None, :] - t[:, None]
        return (diff == 0) | (diff == P) | (diff == -P)
    if mode == "full":
        return np.ones((L, L), dtype=bool)
    raise ValueError(f"unknown mask mode {mode!r}")


def _shift_blocks(x: Tensor, direction: int) -> Tensor:
    """Shift ``(..., n, b, D)`` along the block axis, filling with zeros.

    ``direction=+1`` puts block ``i-1`` at position ``i``; ``-1`` puts block ``i+1``.
    """
    *lead, n, b, d = x.shape
    pad = nc.zeros((*lead, 1, b, d))
    if direction > 0:
        return nc.concat([pad, x[..., : n - 1, :, :]], axis=-3)
    return nc.concat([x[..., 1:, :, :], pad], axis=-3)


def _neighbor_bias(n: int, b: int) -> np.ndarray:
    # keys are laid out [prev block | own block | next block]
    bias = np.zeros((n, 1, 1, 3 * b))
    bias[0, ..., :b] = MASK_BIAS
    bias[n - 1, ..., 2 * b :] = MASK_BIAS
    return bias


def block_attend(q: Tensor, k: Tensor, v: Tensor, block: int, heads: int) -> Tensor:
    """Each block of ``block`` queries attends its own and both adjacent blocks.

    Keys and values are reshaped into blocks and shifted by one block in
    each direction, so every query block sees a ``3 * block`` key window
    without materializing the ``L x L`` score matrix.
    """
    *lead, L, d = q.shape
    if L % block:
        raise nc.ShapeError(f"sequence length {L} is not a multiple of block {block}")
    n = L // block
    qb, kb, vb = (nc.reshape(t, (*lead, n, block, d)) for t in (q, k, v))
    keys = nc.concat([_shift_blocks(kb, +1), kb, _shift_blocks(kb, -1)], axis=-2)
    vals = nc.concat([_shift_blocks(vb, +1), vb, _shift_blocks(vb, -1)], axis=-2)
    out = attend(qb, keys, vals, heads, _neighbor_bias(n, block))
    return nc.reshape(out, (*lead, L, d))


def _project(Z: Tensor, params: MhaParams) -> tuple[Tensor, Tensor, Tensor]:
    return nc.matmul(Z, params.Wq), nc.matmul(Z, params.Wk), nc.matmul(Z, params.Wv)


def pam_forward(Z: Tensor, params: MhaParams, cfg: PamConfig) -> Tensor:
    q, k, v = _project(Z, params)
    return nc.matmul(block_attend(q, k, v, cfg.P, params.heads), params.Wo)


def _to_phases(x: Tensor, P: int) -> Tensor:
    *lead, L, d = x.shape
    x = nc.reshape(x, (*lead, L // P, P, d))
    return nc.swapaxes(x, -2, -3)  # (..., P, n, D): one row per phase


def _from_phases(x: Tensor) -> Tensor:
    *lead, P, n, d = x.shape
    return nc.reshape(nc.swapaxes(x, -2, -3), (*lead, n * P, d))


def spam_forward(Z: Tensor, params: MhaParams, cfg: PamConfig) -> Tensor:
    """Sparse period attention: window-3 attention along each phase sub-series."""
    L = Z.shape[-2]
    if L % cfg.P:
        raise nc.ShapeError(f"sequence length {L} is not a multiple of period {cfg.P}")
    q, k, v = (_to_phases(t, cfg.P) for t in _project(Z, params))
    out = block_attend(q, k, v, 1, params.heads)
    return nc.matmul(_from_phases(out), params.Wo)


def full_forward(Z: Tensor, params: MhaParams, cfg: PamConfig | None = None) -> Tensor:
    return mha(Z, Z, Z, params)


def mixer_forward(Z: Tensor, params: MhaParams, cfg: PamConfig) -> Tensor:
    if cfg.mode == "pam":
        return pam_forward(Z, params, cfg)
    if cfg.mode == "spam":
        return spam_forward(Z, params, cfg)
    return full_forward(Z, params, cfg)


def router_forward(Zp: Tensor, params: RouterParams) -> Tensor:
    routed = mha(params.M, Zp, Zp, params.query_mha)
    return mha(Zp, routed, routed, params.answer_mha)
