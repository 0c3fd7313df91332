"""PeriodNet / SPeriodNet: period-attention encoder with a period diffuser.

Internally every activation is laid out as ``(B, S, L, D)``: batch, variable
stream, time, embedding channel.  Encoder blocks mix variables through the
grouping maps; the predictor runs on each stream separately with shared
parameters.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .attention import (
    MODES,
    MhaParams,
    PamConfig,
    RouterParams,
    init_mha,
    init_router,
    mha,
    mixer_forward,
    router_forward,
)
from .grouping import ACTIVATIONS, IgmParams, init_igm, regroup, ungroup
from .numcore import Tensor


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    C: int = 1
    L: int = 96
    T: int = 48
    D: int = 16
    heads: int = 2
    P: int = 8
    P_list: tuple[int, ...] | None = None
    r: int = 4
    # None: no grouping (each variable mixed on its own); 0: joint embedding of all variables
    G: int | None = None
    h_g: int | None = None
    N_enc: int = 2
    N_dif: int = 1
    ffn_width: int = 32
    mode: str = "pam"
    activation: str = "relu"
    pos_encoding: bool = True
    init_std: float = 0.02
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.P_list is not None:
            self.P_list = tuple(int(p) for p in self.P_list)
        self.validate()

    @property
    def periods(self) -> tuple[int, ...]:
        if self.P_list is not None:
            return self.P_list
        return tuple(self.P * 2**i for i in range(self.N_enc))

    @property
    def diffuser_periods(self) -> tuple[int, ...]:
        # diffuser block i pairs with encoder block N_enc - i
        return tuple(self.periods[self.N_enc - i - 1] for i in range(1, self.N_dif + 1))

    @property
    def joint(self) -> bool:
        return self.G == 0

    @property
    def grouped(self) -> bool:
        return self.G is not None and self.G >= 1

    def validate(self) -> None:
        for name in ("C", "L", "T", "D", "heads", "r", "N_enc", "ffn_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.D % self.heads:
            raise ConfigError(f"D={self.D} is not divisible by heads={self.heads}")
        if self.N_dif < 0 or (self.N_dif >= 1 and self.N_dif > self.N_enc - 1):
            raise ConfigError(f"N_dif={self.N_dif} needs N_enc >= N_dif + 1 (got N_enc={self.N_enc})")
        if len(self.periods) != self.N_enc:
            raise ConfigError(f"P_list has {len(self.periods)} entries for {self.N_enc} encoder blocks")
        if any(p < 2 for p in self.periods):
            raise ConfigError(f"period lengths must be >= 2, got {self.periods}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")
        if self.G is not None and self.G < 0:
            raise ConfigError(f"G must be None or >= 0, got {self.G}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["P_list"] is not None:
            d["P_list"] = list(d["P_list"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------------------
# parameter containers
# ----------------------------------------------------------------------------


@dataclass
class Linear:
    W: Tensor
    b: Tensor


@dataclass
class Norm:
    gamma: Tensor
    beta: Tensor


@dataclass
class FFN:
    inner: Linear
    outer: Linear


@dataclass
class EncoderBlock:
    P: int
    mixer: MhaParams
    router: RouterParams
    ffn: FFN
    norm_mix: Norm
    norm_route: Norm
    norm_out: Norm
    igm: IgmParams | None = None


@dataclass
class DiffuserBlock:
    P: int
    mixer: MhaParams
    cross: MhaParams
    ffn: FFN
    norm_mix: Norm
    norm_cross: Norm
    norm_out: Norm


@dataclass
class PeriodNetParams:
    embed: Linear
    blocks: list[EncoderBlock]
    fc: Linear
    diffuser: list[DiffuserBlock]
    readout: Linear


@dataclass
class EncoderTrace:
    states: list[Tensor] = field(default_factory=list)


@dataclass
class DiffuserState:
    X_dif: Tensor | None = None
    Z_d: list[Tensor] = field(default_factory=list)
    Z_c: list[Tensor] = field(default_factory=list)


def _param(a: np.ndarray) -> Tensor:
    return Tensor(a, requires_grad=True)


def _linear(rng, n_in, n_out, std) -> Linear:
    return Linear(_param(rng.normal(0.0, std, (n_in, n_out))), _param(np.zeros(n_out)))


def _norm(d) -> Norm:
    return Norm(_param(np.ones(d)), _param(np.zeros(d)))


def _ffn(rng, d, width, std) -> FFN:
    return FFN(_linear(rng, d, width, std), _linear(rng, width, d, std))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> PeriodNetParams:
    """Draw all weights from N(0, init_std^2); biases zero, norm gains one."""
    std, D = cfg.init_std, cfg.D
    embed = _linear(rng, cfg.C if cfg.joint else 1, D, std)
    blocks = []
    for P in cfg.periods:
        igm = init_igm(cfg.C, cfg.G, rng, cfg.h_g, std, cfg.activation) if cfg.grouped else None
        blocks.append(EncoderBlock(
            P=P,
            mixer=init_mha(D, cfg.heads, rng, std),
            router=init_router(D, cfg.heads, cfg.r, rng, std),
            ffn=_ffn(rng, D, cfg.ffn_width, std),
            norm_mix=_norm(D), norm_route=_norm(D), norm_out=_norm(D),
            igm=igm,
        ))
    fc = Linear(_param(rng.normal(0.0, std, (cfg.T, cfg.L))), _param(np.zeros(cfg.T)))
    diffuser = [
        DiffuserBlock(
            P=P,
            mixer=init_mha(D, cfg.heads, rng, std),
            cross=init_mha(D, cfg.heads, rng, std),
            ffn=_ffn(rng, D, cfg.ffn_width, std),
            norm_mix=_norm(D), norm_cross=_norm(D), norm_out=_norm(D),
        )
        for P in cfg.diffuser_periods
    ]
    readout = _linear(rng, D, cfg.C if cfg.joint else 1, std)
    return PeriodNetParams(embed, blocks, fc, diffuser, readout)


# ----------------------------------------------------------------------------
# building blocks
# ----------------------------------------------------------------------------


def positional_encoding(L: int, D: int) -> np.ndarray:
    pos = np.arange(L)[:, None]
    div = np.exp(np.arange(0, D, 2) * (-np.log(10000.0) / D))
    pe = np.zeros((L, D))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: D // 2])
    return pe


def linear(x: Tensor, lin: Linear) -> Tensor:
    return nc.add(nc.matmul(x, lin.W), lin.b)


def _norm_apply(x: Tensor, n: Norm, eps: float) -> Tensor:
    return nc.layer_norm(x, n.gamma, n.beta, eps)


def _ffn_apply(x: Tensor, f: FFN, act: str) -> Tensor:
    return linear(ACTIVATIONS[act](linear(x, f.inner)), f.outer)


def embed(x: Tensor, params: PeriodNetParams, cfg: ModelConfig) -> Tensor:
    """``(B, L, C)`` values -> ``(B, S, L, D)`` tokens.

    Each variable is embedded by the same 1->D map (S = C); in joint mode
    the whole C-vector at each step becomes one token (S = 1).
    """
    B, L, C = x.shape
    if cfg.joint:
        z = nc.reshape(linear(x, params.embed), (B, 1, L, cfg.D))
    else:
        cols = nc.reshape(nc.swapaxes(x, 1, 2), (B, C, L, 1))
        z = linear(cols, params.embed)
    if cfg.pos_encoding:
        z = nc.add(z, Tensor(positional_encoding(L, cfg.D)))
    return z


def pad_to_period(Z: Tensor, P: int) -> tuple[Tensor, int]:
    """Left-pad along time by repeating the first step until the length is a multiple of P."""
    if P < 1:
        raise ConfigError(f"period must be positive, got {P}")
    L = Z.shape[-2]
    k = (-L) % P
    if k == 0:
        return Z, L
    first = Z[..., :1, :]
    return nc.concat([first] * k + [Z], axis=-2), L


def trim(Z: Tensor, original_L: int) -> Tensor:
    if Z.shape[-2] == original_L:
        return Z
    return Z[..., Z.shape[-2] - original_L :, :]


def _periodic_mix(x: Tensor, mixer: MhaParams, P: int, mode: str) -> Tensor:
    padded, L0 = pad_to_period(x, P)
    return trim(mixer_forward(padded, mixer, PamConfig(P, mode)), L0)


def encoder_block(X: Tensor, blk: EncoderBlock, cfg: ModelConfig) -> Tensor:
    """One encoder block on ``(B, S, L, D)`` streams; shape is preserved."""
    eps, act = cfg.ln_eps, cfg.activation
    u = _norm_apply(X, blk.norm_mix, eps)
    if blk.igm is not None:
        g = nc.permute(regroup(nc.permute(u, (0, 2, 3, 1)), blk.igm), (0, 3, 1, 2))
        mixed = _periodic_mix(g, blk.mixer, blk.P, cfg.mode)
        mixed = nc.permute(ungroup(nc.permute(mixed, (0, 2, 3, 1)), blk.igm), (0, 3, 1, 2))
    else:
        mixed = _periodic_mix(u, blk.mixer, blk.P, cfg.mode)
    h = nc.add(X, mixed)
    h = nc.add(h, router_forward(_norm_apply(h, blk.norm_route, eps), blk.router))
    return _norm_apply(nc.add(h, _ffn_apply(h, blk.ffn, act)), blk.norm_out, eps)


def fc_predict(H: Tensor, fc: Linear) -> Tensor:
    """Map ``(..., L, D)`` to ``(..., T, D)`` with one learned ``T x L`` matrix per time axis."""
    T = fc.W.shape[0]
    return nc.add(nc.matmul(fc.W, H), nc.reshape(fc.b, (T, 1)))


def diffuser_block(Zd_in: Tensor, H_cross: Tensor, blk: DiffuserBlock, cfg: ModelConfig,
                   state: DiffuserState | None = None) -> Tensor:
    eps, act = cfg.ln_eps, cfg.activation
    h = nc.add(Zd_in, _periodic_mix(_norm_apply(Zd_in, blk.norm_mix, eps), blk.mixer, blk.P, cfg.mode))
    if state is not None:
        state.Z_d.append(h)
    h = nc.add(h, mha(_norm_apply(h, blk.norm_cross, eps), H_cross, H_cross, blk.cross))
    if state is not None:
        state.Z_c.append(h)
    return _norm_apply(nc.add(h, _ffn_apply(h, blk.ffn, act)), blk.norm_out, eps)


def forward(x, cfg: ModelConfig, params: PeriodNetParams,
            trace: EncoderTrace | None = None, dstate: DiffuserState | None = None) -> Tensor:
    """Forecast ``(B, T, C)`` from ``(B, L, C)`` (a 2-D input gives ``(T, C)``)."""
    x = nc.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = nc.reshape(x, (1, *x.shape))
    if x.ndim != 3 or x.shape[1] != cfg.L or x.shape[2] != cfg.C:
        raise nc.ShapeError(f"expected input (B, {cfg.L}, {cfg.C}), got {x.shape}")
    B = x.shape[0]

    z = embed(x, params, cfg)
    states = []
    for blk in params.blocks:
        z = encoder_block(z, blk, cfg)
        states.append(z)
    if trace is not None:
        trace.states = states

    zd = fc_predict(states[-1], params.fc)
    if dstate is not None:
        dstate.X_dif = zd
    for i, blk in enumerate(params.diffuser, start=1):
        zd = diffuser_block(zd, states[cfg.N_enc - i - 1], blk, cfg, dstate)

    out = linear(zd, params.readout)  # (B, S, T, 1) or (B, 1, T, C)
    if cfg.joint:
        y = nc.reshape(out, (B, cfg.T, cfg.C))
    else:
        y = nc.swapaxes(nc.reshape(out, (B, cfg.C, cfg.T)), 1, 2)
    return nc.reshape(y, (cfg.T, cfg.C)) if squeeze else y


class PeriodNet:
    """Parameters plus config; ``forward_calls`` counts forecasts produced."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: PeriodNetParams | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))
        self.forward_calls = 0

    def named_parameters(self) -> dict[str, Tensor]:
        return nc.named_parameters(self.params)

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:
        self.forward_calls += 1
        return forward(x, self.cfg, self.params)

    def forward_with_trace(self, x) -> tuple[Tensor, EncoderTrace, DiffuserState]:
        self.forward_calls += 1
        trace, dstate = EncoderTrace(), DiffuserState()
        y = forward(x, self.cfg, self.params, trace, dstate)
        return y, trace, dstate

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(x)).data

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        if set(arrays) != set(named):
            missing, extra = set(named) - set(arrays), set(arrays) - set(named)
            raise ConfigError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in named.items():
            if arrays[k].shape != p.shape:
                raise ConfigError(f"parameter {k}: shape {arrays[k].shape} does not match config {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64, copy=True)
