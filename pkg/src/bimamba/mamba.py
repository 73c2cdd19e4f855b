"""The selective-SSM (Mamba) block.

Data path for one block, all projections bias-free:

    Hn = rms_norm(H) * gain
    x  = Hn @ W_x            z = Hn @ W_z
    x' = silu(causal depthwise conv(x))
    delta = softplus(x' @ W_1 @ W_2 + delta_bias)       per-channel step sizes
    Bsel = x' @ W_B          Csel = x' @ W_C            shared across channels
    y  = selective_scan(x', delta, A = -exp(A_log), Bsel, Csel, D_skip)
    out = (y * silu(z)) @ W_out + H

The input-dependent delta/Bsel/Csel are what make the scan selective; A is a
trainable negative diagonal per (channel, state) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .errors import ConfigError, ShapeError

__all__ = [
    "DT_MIN",
    "DT_MAX",
    "A_INIT_MODES",
    "MambaConfig",
    "ScanPathParams",
    "MambaParams",
    "init_mamba",
    "generate_ssm_params",
    "scan_path_forward",
    "gated_ssm_branch",
    "mamba_forward",
]

DT_MIN = 1e-3
DT_MAX = 1e-1
A_INIT_MODES = ("real_diagonal", "random", "gaussian_perturbed")


@dataclass(frozen=True)
class MambaConfig:
    """Shapes and initialization choices of one block.

    ``e`` may be given explicitly but must equal ``e_f * d``.
    """

    d: int
    e_f: int = 2
    n: int = 16
    d_conv: int = 4
    r: int = 16
    a_init: str = "real_diagonal"
    a_noise_sigma: float = 0.1
    e: int = field(default=0)

    def __post_init__(self):
        for name in ("d", "e_f", "n", "d_conv", "r"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.e == 0:
            object.__setattr__(self, "e", self.e_f * self.d)
        elif self.e != self.e_f * self.d:
            raise ConfigError(f"e = {self.e} but e_f * d = {self.e_f * self.d}")
        if self.a_init not in A_INIT_MODES:
            raise ConfigError(f"a_init must be one of {A_INIT_MODES}, got {self.a_init!r}")
        if self.a_noise_sigma < 0:
            raise ConfigError(f"a_noise_sigma must be >= 0, got {self.a_noise_sigma}")

    @property
    def dt_rank(self) -> int:
        return -(-self.e // self.r)  # ceil(e / r)


@dataclass
class ScanPathParams:
    """Per-direction internals: conv, selection projections, delta, A, skip."""

    conv_w: Variable  # [E, d_conv]
    conv_b: Variable  # [E]
    w_b: Variable  # [E, N]
    w_c: Variable  # [E, N]
    w_1: Variable  # [E, ceil(E/r)]
    w_2: Variable  # [ceil(E/r), E]
    delta_bias: Variable  # [E]
    a_log: Variable  # [E, N]; A = -exp(a_log)
    d_skip: Variable  # [E]

    def named(self, suffix: str = "") -> dict[str, Variable]:
        return {
            f"conv_w{suffix}": self.conv_w,
            f"conv_b{suffix}": self.conv_b,
            f"w_b{suffix}": self.w_b,
            f"w_c{suffix}": self.w_c,
            f"w_1{suffix}": self.w_1,
            f"w_2{suffix}": self.w_2,
            f"delta_bias{suffix}": self.delta_bias,
            f"a_log{suffix}": self.a_log,
            f"d_skip{suffix}": self.d_skip,
        }


@dataclass
class MambaParams:
    norm_gain: Variable  # [D]
    w_x: Variable  # [D, E]
    w_z: Variable  # [D, E]
    path: ScanPathParams
    w_out: Variable  # [E, D]

    def named(self, suffix: str = "") -> dict[str, Variable]:
        out = {f"norm_gain{suffix}": self.norm_gain, f"w_x{suffix}": self.w_x,
               f"w_z{suffix}": self.w_z}
        out.update(self.path.named(suffix))
        out[f"w_out{suffix}"] = self.w_out
        return out


# ---------------------------------------------------------------------------
# initialization

# Random tensors draw from independent per-tensor substreams so changing one
# init mode (e.g. a_init) never shifts another tensor's values for a seed.
_MAMBA_STREAMS = (
    "w_x", "w_z", "conv_w", "w_b", "w_c", "w_1", "w_2", "delta_bias", "a_log", "w_out",
)


def rng_streams(seed: int, names) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def _uniform(rng, shape, fan_in) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def _init_a_log(cfg: MambaConfig, rng) -> np.ndarray:
    e, n = cfg.e, cfg.n
    base = np.arange(1.0, n + 1.0)
    if cfg.a_init == "real_diagonal":
        return np.log(np.broadcast_to(base, (e, n))).copy()
    if cfg.a_init == "random":
        return rng.standard_normal((e, n))  # A = -exp(g), g ~ N(0, 1)
    noise = rng.normal(0.0, cfg.a_noise_sigma, (e, n))
    scale = np.clip(1.0 + noise, 1e-3, None)  # keep A strictly negative
    return np.log(base * scale)


def _init_delta_bias(cfg: MambaConfig, rng) -> np.ndarray:
    dt = np.exp(rng.uniform(math.log(DT_MIN), math.log(DT_MAX), cfg.e))
    return dt + np.log(-np.expm1(-dt))  # inverse softplus


def init_scan_path(cfg: MambaConfig, streams: dict[str, np.random.Generator]) -> ScanPathParams:
    e = cfg.e
    return ScanPathParams(
        conv_w=Variable(_uniform(streams["conv_w"], (e, cfg.d_conv), cfg.d_conv)),
        conv_b=Variable(np.zeros(e)),
        w_b=Variable(_uniform(streams["w_b"], (e, cfg.n), e)),
        w_c=Variable(_uniform(streams["w_c"], (e, cfg.n), e)),
        w_1=Variable(_uniform(streams["w_1"], (e, cfg.dt_rank), e)),
        w_2=Variable(_uniform(streams["w_2"], (cfg.dt_rank, e), cfg.dt_rank)),
        delta_bias=Variable(_init_delta_bias(cfg, streams["delta_bias"])),
        a_log=Variable(_init_a_log(cfg, streams["a_log"])),
        d_skip=Variable(np.ones(e)),
    )


def init_mamba(cfg: MambaConfig, seed: int) -> MambaParams:
    s = rng_streams(seed, _MAMBA_STREAMS)
    return MambaParams(
        norm_gain=Variable(np.ones(cfg.d)),
        w_x=Variable(_uniform(s["w_x"], (cfg.d, cfg.e), cfg.d)),
        w_z=Variable(_uniform(s["w_z"], (cfg.d, cfg.e), cfg.d)),
        path=init_scan_path(cfg, s),
        w_out=Variable(_uniform(s["w_out"], (cfg.e, cfg.d), cfg.e)),
    )


# ---------------------------------------------------------------------------
# forward


def generate_ssm_params(xp, path: ScanPathParams):
    """Input-dependent scan parameters from the post-conv activations ``xp``.

    delta = softplus(xp @ W_1 @ W_2 + delta_bias) > 0, [B, L, E];
    bsel = xp @ W_B and csel = xp @ W_C, both [B, L, N].
    """
    bsel = ad.matmul(xp, path.w_b)
    csel = ad.matmul(xp, path.w_c)
    delta = ad.softplus(ad.add(ad.matmul(ad.matmul(xp, path.w_1), path.w_2), path.delta_bias))
    return delta, bsel, csel


def scan_path_forward(x, path: ScanPathParams, scan_impl: str = "sequential", chunk: int = 64):
    """Conv -> SiLU -> selective scan for one direction; x and y are [B, L, E]."""
    xp = ad.silu(ad.depthwise_conv1d(x, path.conv_w, path.conv_b, causal=True))
    delta, bsel, csel = generate_ssm_params(xp, path)
    a = ad.neg(ad.exp(path.a_log))
    return ad.selective_scan(xp, delta, a, bsel, csel, path.d_skip, impl=scan_impl, chunk=chunk)


def gated_ssm_branch(hn, w_x, w_z, path: ScanPathParams, w_out,
                     scan_impl: str = "sequential", chunk: int = 64):
    """Full gated branch on a normalized input: (scan(Hn@W_x) * silu(Hn@W_z)) @ W_out."""
    x = ad.matmul(hn, w_x)
    z = ad.matmul(hn, w_z)
    y = scan_path_forward(x, path, scan_impl, chunk)
    return ad.matmul(ad.mul(y, ad.silu(z)), w_out)


def mamba_forward(h, p: MambaParams, cfg: MambaConfig | None = None,
                  scan_impl: str = "sequential", chunk: int = 64):
    """One unidirectional (causal) block with internal norm and residual."""
    h = ad.wrap(h)
    if h.value.ndim != 3:
        raise ShapeError(f"expected H [B,L,D], got {h.value.shape}")
    if cfg is not None and h.value.shape[2] != cfg.d:
        raise ShapeError(f"H feature dim {h.value.shape[2]} != config d {cfg.d}")
    hn = ad.rms_norm(h, p.norm_gain)
    out = gated_ssm_branch(hn, p.w_x, p.w_z, p.path, p.w_out, scan_impl, chunk)
    return ad.add(out, h)
