"""Bidirectional Mamba layers.

Two ways to add a backward (anti-causal) scan to the block:

* inner (``InnBiMamba``): the input/gate/output projections stay shared; only
  the conv + selective-scan internals are duplicated per direction. The
  backward branch consumes the time-reversed projection and its scan output is
  un-reversed before the shared SiLU(z) gate is applied.

* external (``ExtBiMamba``): two complete gated branches with their own
  projections; only the entry norm is shared. The backward branch wraps its
  input and output in a time reversal. Zeroing the backward branch's output
  projection makes the layer coincide with the unidirectional block.

Both satisfy reversal equivariance: reversing the input and swapping the
per-direction parameter groups reverses the output exactly (up to fp error).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .errors import ConfigError, ShapeError
from .mamba import (
    MambaConfig,
    MambaParams,
    ScanPathParams,
    _uniform,
    gated_ssm_branch,
    init_scan_path,
    rng_streams,
    scan_path_forward,
)

__all__ = [
    "InnBiMambaParams",
    "ExtDirectionParams",
    "ExtBiMambaParams",
    "init_inn_bimamba",
    "init_ext_bimamba",
    "inn_bimamba_forward",
    "ext_bimamba_forward",
    "param_count",
    "PARAM_COUNT_VARIANTS",
]

_SCAN_STREAMS = ("conv_w", "w_b", "w_c", "w_1", "w_2", "delta_bias", "a_log")


@dataclass
class InnBiMambaParams:
    norm_gain: Variable  # [D]
    w_x: Variable  # [D, E], shared
    w_z: Variable  # [D, E], shared
    fwd: ScanPathParams
    bwd: ScanPathParams
    w_out: Variable  # [E, D], shared

    def named(self) -> dict[str, Variable]:
        out = {"norm_gain": self.norm_gain, "w_x": self.w_x, "w_z": self.w_z}
        out.update(self.fwd.named("_fwd"))
        out.update(self.bwd.named("_bwd"))
        out["w_out"] = self.w_out
        return out


@dataclass
class ExtDirectionParams:
    w_x: Variable  # [D, E]
    w_z: Variable  # [D, E]
    path: ScanPathParams
    w_out: Variable  # [E, D]

    def named(self, suffix: str) -> dict[str, Variable]:
        out = {f"w_x{suffix}": self.w_x, f"w_z{suffix}": self.w_z}
        out.update(self.path.named(suffix))
        out[f"w_out{suffix}"] = self.w_out
        return out


@dataclass
class ExtBiMambaParams:
    norm_gain: Variable  # [D], the only shared tensor
    fwd: ExtDirectionParams
    bwd: ExtDirectionParams

    def named(self) -> dict[str, Variable]:
        out = {"norm_gain": self.norm_gain}
        out.update(self.fwd.named("_fwd"))
        out.update(self.bwd.named("_bwd"))
        return out


def _dir_stream_names(suffix: str):
    return tuple(f"{n}{suffix}" for n in _SCAN_STREAMS)


def init_inn_bimamba(cfg: MambaConfig, seed: int) -> InnBiMambaParams:
    names = ("w_x", "w_z", "w_out") + _dir_stream_names("_fwd") + _dir_stream_names("_bwd")
    s = rng_streams(seed, names)
    fwd = init_scan_path(cfg, {n: s[f"{n}_fwd"] for n in _SCAN_STREAMS})
    bwd = init_scan_path(cfg, {n: s[f"{n}_bwd"] for n in _SCAN_STREAMS})
    return InnBiMambaParams(
        norm_gain=Variable(np.ones(cfg.d)),
        w_x=Variable(_uniform(s["w_x"], (cfg.d, cfg.e), cfg.d)),
        w_z=Variable(_uniform(s["w_z"], (cfg.d, cfg.e), cfg.d)),
        fwd=fwd,
        bwd=bwd,
        w_out=Variable(_uniform(s["w_out"], (cfg.e, cfg.d), cfg.e)),
    )


def _init_ext_direction(cfg: MambaConfig, s, suffix: str) -> ExtDirectionParams:
    return ExtDirectionParams(
        w_x=Variable(_uniform(s[f"w_x{suffix}"], (cfg.d, cfg.e), cfg.d)),
        w_z=Variable(_uniform(s[f"w_z{suffix}"], (cfg.d, cfg.e), cfg.d)),
        path=init_scan_path(cfg, {n: s[f"{n}{suffix}"] for n in _SCAN_STREAMS}),
        w_out=Variable(_uniform(s[f"w_out{suffix}"], (cfg.e, cfg.d), cfg.e)),
    )


def init_ext_bimamba(cfg: MambaConfig, seed: int) -> ExtBiMambaParams:
    per_dir = ("w_x", "w_z", "w_out") + _SCAN_STREAMS
    names = tuple(f"{n}_fwd" for n in per_dir) + tuple(f"{n}_bwd" for n in per_dir)
    s = rng_streams(seed, names)
    return ExtBiMambaParams(
        norm_gain=Variable(np.ones(cfg.d)),
        fwd=_init_ext_direction(cfg, s, "_fwd"),
        bwd=_init_ext_direction(cfg, s, "_bwd"),
    )


def _check_input(h) -> ad.Variable:
    h = ad.wrap(h)
    if h.value.ndim != 3:
        raise ShapeError(f"expected H [B,L,D], got {h.value.shape}")
    return h


def inn_bimamba_forward(h, p: InnBiMambaParams, cfg: MambaConfig | None = None,
                        scan_impl: str = "sequential", chunk: int = 64):
    """Shared projections, per-direction scans, shared gate and output."""
    h = _check_input(h)
    hn = ad.rms_norm(h, p.norm_gain)
    x = ad.matmul(hn, p.w_x)
    gate = ad.silu(ad.matmul(hn, p.w_z))
    y_fwd = scan_path_forward(x, p.fwd, scan_impl, chunk)
    y_bwd = ad.reverse_time(scan_path_forward(ad.reverse_time(x), p.bwd, scan_impl, chunk))
    gated = ad.add(ad.mul(y_fwd, gate), ad.mul(y_bwd, gate))
    return ad.add(ad.matmul(gated, p.w_out), h)


def ext_bimamba_forward(h, p: ExtBiMambaParams, cfg: MambaConfig | None = None,
                        scan_impl: str = "sequential", chunk: int = 64):
    """Two complete gated branches around one shared norm."""
    h = _check_input(h)
    hn = ad.rms_norm(h, p.norm_gain)
    y_fwd = gated_ssm_branch(hn, p.fwd.w_x, p.fwd.w_z, p.fwd.path, p.fwd.w_out,
                             scan_impl, chunk)
    y_bwd = ad.reverse_time(
        gated_ssm_branch(ad.reverse_time(hn), p.bwd.w_x, p.bwd.w_z, p.bwd.path,
                         p.bwd.w_out, scan_impl, chunk)
    )
    return ad.add(ad.add(y_fwd, y_bwd), h)


# ---------------------------------------------------------------------------
# parameter ledgers

PARAM_COUNT_VARIANTS = ("mamba", "inn_bimamba", "ext_bimamba")


def _scan_path_count(cfg: MambaConfig) -> int:
    e, n = cfg.e, cfg.n
    return (
        e * cfg.d_conv  # conv_w
        + e  # conv_b
        + 2 * e * n  # w_b, w_c
        + 2 * e * cfg.dt_rank  # w_1, w_2
        + e  # delta_bias
        + e * n  # a_log
        + e  # d_skip
    )


def param_count(variant: str, cfg: MambaConfig) -> int:
    """Closed-form parameter count for one layer of the given variant."""
    d, e = cfg.d, cfg.e
    projections = 2 * d * e + e * d  # w_x, w_z, w_out
    path = _scan_path_count(cfg)
    if variant == "mamba":
        return projections + path + d
    if variant == "inn_bimamba":
        return projections + 2 * path + d
    if variant == "ext_bimamba":
        return 2 * (projections + path) + d
    raise ConfigError(f"variant must be one of {PARAM_COUNT_VARIANTS}, got {variant!r}")
