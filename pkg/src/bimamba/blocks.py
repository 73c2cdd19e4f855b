"""Attention blocks and the shells that let Mamba variants replace attention.

The transformer shell is pre-norm: each sublayer is ``h + f(layer_norm(h))``.
A Mamba-family mixer carries its own rms-norm and residual, so it slots into
the mixer position bare: adding the shell's residual again would double it.
The conformer shell is macaron FFN -> mixer -> conv module -> FFN -> final
norm, with layer-norm standing in for batch-norm inside the conv module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .bidirectional import (
    ExtBiMambaParams,
    InnBiMambaParams,
    ext_bimamba_forward,
    init_ext_bimamba,
    init_inn_bimamba,
    inn_bimamba_forward,
    param_count,
)
from .errors import ConfigError, ShapeError
from .mamba import MambaConfig, MambaParams, _uniform, init_mamba, mamba_forward

__all__ = [
    "BLOCK_KINDS",
    "MIXERS",
    "BlockSpec",
    "MhsaParams",
    "FfnParams",
    "NormParams",
    "TransformerLayerParams",
    "ConvModuleParams",
    "ConformerLayerParams",
    "ModelSpec",
    "Model",
    "sinusoidal_pe",
    "mhsa_forward",
    "ffn_forward",
    "init_layer",
    "layer_forward",
    "init_model",
    "model_forward",
    "param_count_layer",
    "param_count_model",
    "model_spec_to_json",
    "model_spec_from_json",
    "save_model_spec",
    "load_model_spec",
]

BLOCK_KINDS = ("transformer", "conformer")
MIXERS = ("mhsa", "mamba", "inn_bimamba", "ext_bimamba")


@dataclass(frozen=True)
class BlockSpec:
    """One layer's composition choices."""

    kind: str = "transformer"
    mixer: str = "mhsa"
    causal: bool = False
    d: int = 64
    n_heads: int = 4
    d_ff: int = 256
    conv_kernel: int = 31
    use_macaron: bool = True
    use_swish: bool = True
    use_pe: bool = False
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"kind must be one of {BLOCK_KINDS}, got {self.kind!r}")
        if self.mixer not in MIXERS:
            raise ConfigError(f"mixer must be one of {MIXERS}, got {self.mixer!r}")
        if self.d < 1 or self.d_ff < 1:
            raise ConfigError("d and d_ff must be >= 1")
        if self.mixer == "mhsa":
            if self.n_heads < 1 or self.d % self.n_heads:
                raise ConfigError(
                    f"d = {self.d} must be divisible by n_heads = {self.n_heads}"
                )
        if self.mixer == "mamba" and not self.causal:
            raise ConfigError("the unidirectional mamba mixer is causal by construction; "
                              "set causal=true or pick a bidirectional mixer")
        if self.mixer in ("inn_bimamba", "ext_bimamba") and self.causal:
            raise ConfigError(f"{self.mixer} reads the whole sequence; causal=true "
                              "contradicts it")
        if self.kind == "conformer" and (self.conv_kernel < 1 or self.conv_kernel % 2 == 0):
            raise ConfigError(f"conformer conv_kernel must be odd, got {self.conv_kernel}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


@dataclass
class MhsaParams:
    w_q: Variable
    w_k: Variable
    w_v: Variable
    w_o: Variable

    def named(self, prefix: str = "") -> dict[str, Variable]:
        return {f"{prefix}w_q": self.w_q, f"{prefix}w_k": self.w_k,
                f"{prefix}w_v": self.w_v, f"{prefix}w_o": self.w_o}


@dataclass
class FfnParams:
    w1: Variable  # [D, d_ff]
    w2: Variable  # [d_ff, D]

    def named(self, prefix: str = "") -> dict[str, Variable]:
        return {f"{prefix}w1": self.w1, f"{prefix}w2": self.w2}


@dataclass
class NormParams:
    gain: Variable
    bias: Variable

    def named(self, prefix: str = "") -> dict[str, Variable]:
        return {f"{prefix}gain": self.gain, f"{prefix}bias": self.bias}


def _init_norm(d: int) -> NormParams:
    return NormParams(Variable(np.ones(d)), Variable(np.zeros(d)))


def _apply_norm(h, p: NormParams):
    return ad.layer_norm(h, p.gain, p.bias)


def sinusoidal_pe(length: int, d: int) -> np.ndarray:
    """Interleaved sin/cos positional table [length, d]; position 0 is
    [0, 1, 0, 1, ...]. Requires even d."""
    if d % 2:
        raise ConfigError(f"sinusoidal encoding needs even d, got {d}")
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    pos = np.arange(length)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def mhsa_forward(h, p: MhsaParams, n_heads: int, causal: bool):
    """Scaled dot-product multi-head self-attention.

    Heads are computed one at a time: peak memory stays at a single [L, L]
    score matrix, which matters at benchmark lengths.
    """
    h = ad.wrap(h)
    if h.value.ndim != 3:
        raise ShapeError(f"expected H [B,L,D], got {h.value.shape}")
    d = h.value.shape[2]
    if d % n_heads:
        raise ShapeError(f"d = {d} not divisible by n_heads = {n_heads}")
    dh = d // n_heads
    length = h.value.shape[1]
    q = ad.matmul(h, p.w_q)
    k = ad.matmul(h, p.w_k)
    v = ad.matmul(h, p.w_v)
    mask = None
    if causal:
        mask = np.triu(np.full((length, length), -np.inf), k=1)
    heads = []
    for i in range(n_heads):
        lo, hi = i * dh, (i + 1) * dh
        qs = ad.scale(ad.slice_last(q, lo, hi), dh**-0.5)
        ks = ad.slice_last(k, lo, hi)
        scores = ad.matmul(qs, ad.transpose(ks, (0, 2, 1)))
        if mask is not None:
            scores = ad.addc(scores, mask)
        attn = ad.softmax(scores, may_destroy=True)
        del scores
        heads.append(ad.matmul(attn, ad.slice_last(v, lo, hi)))
        del attn
    cat = heads[0] if n_heads == 1 else ad.concat(heads, axis=2)
    return ad.matmul(cat, p.w_o)


def ffn_forward(h, p: FfnParams, act: str = "relu"):
    inner = ad.matmul(h, p.w1)
    inner = ad.silu(inner) if act in ("silu", "swish") else ad.relu(inner)
    return ad.matmul(inner, p.w2)


# ---------------------------------------------------------------------------
# layer parameter containers


@dataclass
class TransformerLayerParams:
    spec: BlockSpec
    norm_mixer: NormParams | None  # present for the mhsa mixer only
    mixer: object
    norm_ffn: NormParams
    ffn: FfnParams

    def named(self, prefix: str = "") -> dict[str, Variable]:
        out = {}
        if self.norm_mixer is not None:
            out.update(self.norm_mixer.named(f"{prefix}norm_mixer_"))
        out.update({f"{prefix}mixer_{k}": v for k, v in self.mixer.named().items()})
        out.update(self.norm_ffn.named(f"{prefix}norm_ffn_"))
        out.update(self.ffn.named(f"{prefix}ffn_"))
        return out


@dataclass
class ConvModuleParams:
    w_pw1: Variable  # [D, 2D] pointwise, feeds the GLU
    dw_w: Variable  # [D, K] depthwise
    dw_b: Variable  # [D]
    norm_inner: NormParams
    w_pw2: Variable  # [D, D] pointwise

    def named(self, prefix: str = "") -> dict[str, Variable]:
        out = {f"{prefix}w_pw1": self.w_pw1, f"{prefix}dw_w": self.dw_w,
               f"{prefix}dw_b": self.dw_b}
        out.update(self.norm_inner.named(f"{prefix}norm_inner_"))
        out[f"{prefix}w_pw2"] = self.w_pw2
        return out


@dataclass
class ConformerLayerParams:
    spec: BlockSpec
    norm_ffn1: NormParams | None
    ffn1: FfnParams | None
    norm_mixer: NormParams | None
    mixer: object
    norm_conv: NormParams
    conv: ConvModuleParams
    norm_ffn2: NormParams
    ffn2: FfnParams
    norm_final: NormParams

    def named(self, prefix: str = "") -> dict[str, Variable]:
        out = {}
        if self.ffn1 is not None:
            out.update(self.norm_ffn1.named(f"{prefix}norm_ffn1_"))
            out.update(self.ffn1.named(f"{prefix}ffn1_"))
        if self.norm_mixer is not None:
            out.update(self.norm_mixer.named(f"{prefix}norm_mixer_"))
        out.update({f"{prefix}mixer_{k}": v for k, v in self.mixer.named().items()})
        out.update(self.norm_conv.named(f"{prefix}norm_conv_"))
        out.update(self.conv.named(f"{prefix}conv_"))
        out.update(self.norm_ffn2.named(f"{prefix}norm_ffn2_"))
        out.update(self.ffn2.named(f"{prefix}ffn2_"))
        out.update(self.norm_final.named(f"{prefix}norm_final_"))
        return out


# ---------------------------------------------------------------------------
# initialization


def _init_mhsa(d: int, rng_pair) -> MhsaParams:
    s = rng_pair
    return MhsaParams(
        w_q=Variable(_uniform(s["w_q"], (d, d), d)),
        w_k=Variable(_uniform(s["w_k"], (d, d), d)),
        w_v=Variable(_uniform(s["w_v"], (d, d), d)),
        w_o=Variable(_uniform(s["w_o"], (d, d), d)),
    )


def _init_ffn(d: int, d_ff: int, s, prefix: str) -> FfnParams:
    return FfnParams(
        w1=Variable(_uniform(s[f"{prefix}w1"], (d, d_ff), d)),
        w2=Variable(_uniform(s[f"{prefix}w2"], (d_ff, d), d_ff)),
    )


def _mixer_init(spec: BlockSpec, mamba_cfg: MambaConfig | None, seed: int):
    from .mamba import rng_streams

    if spec.mixer == "mhsa":
        s = rng_streams(seed, ("w_q", "w_k", "w_v", "w_o"))
        return _init_mhsa(spec.d, s)
    if mamba_cfg is None:
        raise ConfigError(f"mixer {spec.mixer!r} needs a mamba config")
    if mamba_cfg.d != spec.d:
        raise ConfigError(f"mamba config d = {mamba_cfg.d} != block d = {spec.d}")
    if spec.mixer == "mamba":
        return init_mamba(mamba_cfg, seed)
    if spec.mixer == "inn_bimamba":
        return init_inn_bimamba(mamba_cfg, seed)
    return init_ext_bimamba(mamba_cfg, seed)


def _mixer_forward(h, spec: BlockSpec, mixer, scan_impl: str, chunk: int):
    if spec.mixer == "mamba":
        return mamba_forward(h, mixer, scan_impl=scan_impl, chunk=chunk)
    if spec.mixer == "inn_bimamba":
        return inn_bimamba_forward(h, mixer, scan_impl=scan_impl, chunk=chunk)
    return ext_bimamba_forward(h, mixer, scan_impl=scan_impl, chunk=chunk)


def init_layer(spec: BlockSpec, mamba_cfg: MambaConfig | None, seed: int):
    """Initialize one transformer or conformer layer's parameters."""
    from .mamba import rng_streams

    ss = np.random.SeedSequence(seed)
    mixer_seed, rest_seed = [int(c.generate_state(1)[0]) for c in ss.spawn(2)]
    mixer = _mixer_init(spec, mamba_cfg, mixer_seed)
    needs_norm = spec.mixer == "mhsa"
    if spec.kind == "transformer":
        s = rng_streams(rest_seed, ("ffn_w1", "ffn_w2"))
        return TransformerLayerParams(
            spec=spec,
            norm_mixer=_init_norm(spec.d) if needs_norm else None,
            mixer=mixer,
            norm_ffn=_init_norm(spec.d),
            ffn=_init_ffn(spec.d, spec.d_ff, s, "ffn_"),
        )
    names = ["ffn2_w1", "ffn2_w2", "conv_pw1", "conv_dw", "conv_pw2"]
    if spec.use_macaron:
        names += ["ffn1_w1", "ffn1_w2"]
    s = rng_streams(rest_seed, tuple(names))
    d, k = spec.d, spec.conv_kernel
    conv = ConvModuleParams(
        w_pw1=Variable(_uniform(s["conv_pw1"], (d, 2 * d), d)),
        dw_w=Variable(_uniform(s["conv_dw"], (d, k), k)),
        dw_b=Variable(np.zeros(d)),
        norm_inner=_init_norm(d),
        w_pw2=Variable(_uniform(s["conv_pw2"], (d, d), d)),
    )
    return ConformerLayerParams(
        spec=spec,
        norm_ffn1=_init_norm(d) if spec.use_macaron else None,
        ffn1=_init_ffn(d, spec.d_ff, s, "ffn1_") if spec.use_macaron else None,
        norm_mixer=_init_norm(d) if needs_norm else None,
        mixer=mixer,
        norm_conv=_init_norm(d),
        conv=conv,
        norm_ffn2=_init_norm(d),
        ffn2=_init_ffn(d, spec.d_ff, s, "ffn2_"),
        norm_final=_init_norm(d),
    )


# ---------------------------------------------------------------------------
# forward passes


def _maybe_dropout(h, p: float, rng):
    if p > 0.0:
        if rng is None:
            raise ConfigError("dropout_p > 0 requires a generator")
        return ad.dropout(h, p, rng)
    return h


def layer_forward(h, lp, scan_impl: str = "sequential", chunk: int = 64, rng=None):
    if isinstance(lp, TransformerLayerParams):
        return _transformer_forward(h, lp, scan_impl, chunk, rng)
    if isinstance(lp, ConformerLayerParams):
        return _conformer_forward(h, lp, scan_impl, chunk, rng)
    raise ConfigError(f"not a layer parameter container: {type(lp).__name__}")


def _transformer_forward(h, lp: TransformerLayerParams, scan_impl, chunk, rng):
    spec = lp.spec
    h = ad.wrap(h)
    if spec.mixer == "mhsa":
        attn = mhsa_forward(_apply_norm(h, lp.norm_mixer), lp.mixer, spec.n_heads, spec.causal)
        h = ad.add(h, _maybe_dropout(attn, spec.dropout_p, rng))
    else:
        # the mixer's internal norm + residual replace the attention sublayer's
        h = _mixer_forward(h, spec, lp.mixer, scan_impl, chunk)
    out = ffn_forward(_apply_norm(h, lp.norm_ffn), lp.ffn, act="relu")
    return ad.add(h, _maybe_dropout(out, spec.dropout_p, rng))


def _conformer_forward(h, lp: ConformerLayerParams, scan_impl, chunk, rng):
    spec = lp.spec
    h = ad.wrap(h)
    act = "swish" if spec.use_swish else "relu"
    if spec.use_macaron:
        half = ffn_forward(_apply_norm(h, lp.norm_ffn1), lp.ffn1, act=act)
        h = ad.add(h, _maybe_dropout(ad.scale(half, 0.5), spec.dropout_p, rng))
    if spec.mixer == "mhsa":
        attn = mhsa_forward(_apply_norm(h, lp.norm_mixer), lp.mixer, spec.n_heads, spec.causal)
        h = ad.add(h, _maybe_dropout(attn, spec.dropout_p, rng))
    else:
        h = _mixer_forward(h, spec, lp.mixer, scan_impl, chunk)
    c = _apply_norm(h, lp.norm_conv)
    c = ad.glu(ad.matmul(c, lp.conv.w_pw1))
    c = ad.depthwise_conv1d(c, lp.conv.dw_w, lp.conv.dw_b, causal=spec.causal)
    c = _apply_norm(c, lp.conv.norm_inner)
    c = ad.silu(c) if spec.use_swish else ad.relu(c)
    c = ad.matmul(c, lp.conv.w_pw2)
    h = ad.add(h, _maybe_dropout(c, spec.dropout_p, rng))
    out = ffn_forward(_apply_norm(h, lp.norm_ffn2), lp.ffn2, act=act)
    scale = 0.5 if spec.use_macaron else 1.0
    h = ad.add(h, _maybe_dropout(ad.scale(out, scale), spec.dropout_p, rng))
    return _apply_norm(h, lp.norm_final)


# ---------------------------------------------------------------------------
# stacked models


@dataclass(frozen=True)
class ModelSpec:
    depth: int
    block: BlockSpec
    mamba: MambaConfig | None
    seed: int
    in_dim: int | None = None
    out_dim: int | None = None

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.block.mixer != "mhsa" and self.mamba is None:
            raise ConfigError("mamba-family mixer needs a mamba config")


@dataclass
class Model:
    spec: ModelSpec
    embed: Variable | None
    layers: list
    head: Variable | None

    def named(self) -> dict[str, Variable]:
        out = {}
        if self.embed is not None:
            out["embed_w"] = self.embed
        for i, lp in enumerate(self.layers):
            out.update(lp.named(prefix=f"layer{i}_"))
        if self.head is not None:
            out["head_w"] = self.head
        return out


def init_model(spec: ModelSpec) -> Model:
    from .mamba import rng_streams

    ss = np.random.SeedSequence(spec.seed)
    seeds = [int(c.generate_state(1)[0]) for c in ss.spawn(spec.depth + 2)]
    embed = None
    if spec.in_dim is not None:
        rng = np.random.default_rng(seeds[0])
        embed = Variable(_uniform(rng, (spec.in_dim, spec.block.d), spec.in_dim))
    layers = [init_layer(spec.block, spec.mamba, seeds[1 + i]) for i in range(spec.depth)]
    head = None
    if spec.out_dim is not None:
        rng = np.random.default_rng(seeds[-1])
        head = Variable(_uniform(rng, (spec.block.d, spec.out_dim), spec.block.d))
    return Model(spec=spec, embed=embed, layers=layers, head=head)


def model_forward(x, model: Model, scan_impl: str = "sequential", chunk: int = 64, rng=None):
    """Embed (optional) -> add PE (optional) -> layers -> head (optional)."""
    h = ad.wrap(x)
    if model.embed is not None:
        h = ad.matmul(h, model.embed)
    if model.spec.block.use_pe:
        h = ad.addc(h, sinusoidal_pe(h.value.shape[1], h.value.shape[2]))
    for lp in model.layers:
        h = layer_forward(h, lp, scan_impl=scan_impl, chunk=chunk, rng=rng)
    if model.head is not None:
        h = ad.matmul(h, model.head)
    return h


# ---------------------------------------------------------------------------
# parameter ledgers


def param_count_layer(spec: BlockSpec, mamba_cfg: MambaConfig | None = None) -> int:
    d = spec.d
    ln = 2 * d
    ffn = 2 * d * spec.d_ff
    if spec.mixer == "mhsa":
        mixer = 4 * d * d + ln  # projections + its sublayer norm
    else:
        if mamba_cfg is None:
            raise ConfigError(f"mixer {spec.mixer!r} needs a mamba config")
        mixer = param_count(spec.mixer, mamba_cfg)  # norm carried internally
    if spec.kind == "transformer":
        return mixer + ffn + ln
    conv = d * 2 * d + d * spec.conv_kernel + d + ln + d * d
    total = mixer + conv + ln + ffn + ln + ln  # + norm_conv, norm_ffn2, norm_final
    if spec.use_macaron:
        total += ffn + ln
    return total


def param_count_model(spec: ModelSpec) -> int:
    total = spec.depth * param_count_layer(spec.block, spec.mamba)
    if spec.in_dim is not None:
        total += spec.in_dim * spec.block.d
    if spec.out_dim is not None:
        total += spec.block.d * spec.out_dim
    return total


# ---------------------------------------------------------------------------
# JSON descriptions


def _check_keys(obj: dict, allowed, where: str) -> None:
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def model_spec_to_json(spec: ModelSpec) -> dict:
    out = {
        "schema_version": 1,
        "depth": spec.depth,
        "seed": spec.seed,
        "block": {f.name: getattr(spec.block, f.name) for f in fields(BlockSpec)},
    }
    if spec.mamba is not None:
        out["mamba"] = {f.name: getattr(spec.mamba, f.name) for f in fields(MambaConfig)}
    if spec.in_dim is not None:
        out["in_dim"] = spec.in_dim
    if spec.out_dim is not None:
        out["out_dim"] = spec.out_dim
    return out


def model_spec_from_json(obj: dict) -> ModelSpec:
    _check_keys(obj, ("schema_version", "depth", "seed", "block", "mamba",
                      "in_dim", "out_dim"), "model description")
    if obj.get("schema_version") != 1:
        raise ConfigError(f"unsupported schema_version {obj.get('schema_version')!r}")
    block_obj = dict(obj.get("block", {}))
    _check_keys(block_obj, [f.name for f in fields(BlockSpec)], "block")
    block = BlockSpec(**block_obj)
    mamba = None
    if "mamba" in obj:
        mamba_obj = dict(obj["mamba"])
        _check_keys(mamba_obj, [f.name for f in fields(MambaConfig)], "mamba")
        mamba = MambaConfig(**mamba_obj)
    return ModelSpec(
        depth=int(obj["depth"]),
        block=block,
        mamba=mamba,
        seed=int(obj.get("seed", 0)),
        in_dim=obj.get("in_dim"),
        out_dim=obj.get("out_dim"),
    )


def save_model_spec(path, spec: ModelSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_spec_to_json(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model_spec(path) -> ModelSpec:
    with open(Path(path), "r", encoding="utf-8") as fh:
        return model_spec_from_json(json.load(fh))
