from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    A ``None`` gradient is treated as zero.  Moments are allocated lazily on
    the first step and must keep the parameter shapes afterwards.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("adam_step: optimizer state was built for a different parameter list")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        g = grads[i]
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"adam_step: parameter {i} has shape {p.shape}, gradient {g.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


class Adam:
    """Thin stateful wrapper: ``opt.step()`` reads ``.grad`` from each parameter."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
