"""Cost accounting for the sequence mixers: analytical MACs and wall time.

Two measurements of the same contrast — attention's quadratic growth in
sequence length versus the scan's linear growth:

* ``count_macs`` is a closed-form multiply-accumulate ledger per layer.
  ``macs_walk`` recomputes the same number by walking the forward pass
  structure op by op (an independent tally that the tests compare against
  the closed form exactly).
* ``time_scaling`` times real forward passes over a ladder of lengths with
  BLAS pinned to one thread, and ``fit_slope`` turns the measurements into
  a log-log slope (2 = quadratic, 1 = linear).

MAC convention (what counts as one multiply-accumulate): dense projections
(``rows * inner * cols`` per matmul), depthwise convolutions (one MAC per
tap), attention score/value products, and three MACs per scan step and
state element — decay application ``abar*h``, discretized input injection
``delta*bsel*u`` (fused: both scalings feed one accumulate), and readout
``csel*h``. Elementwise modulations outside the state path (SiLU gate,
residuals, normalization, softmax internals, skip gains) are not MACs;
they are O(L*E) against the O(L*E*N) state path.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .blocks import BlockSpec, init_layer, mhsa_forward
from .errors import ConfigError, DomainError
from .mamba import MambaConfig, init_mamba, mamba_forward
from .bidirectional import (
    ext_bimamba_forward,
    init_ext_bimamba,
    init_inn_bimamba,
    inn_bimamba_forward,
)
from .scan import SsmInputs, selective_scan_parallel, selective_scan_sequential

__all__ = [
    "CostRow",
    "CostReport",
    "count_macs",
    "mixer_macs",
    "macs_walk",
    "time_scaling",
    "fit_slope",
    "write_cost_csv",
]

TIMED_MIXERS = ("mhsa", "mamba", "inn_bimamba", "ext_bimamba")


# ---------------------------------------------------------------------------
# closed-form ledger


def _scan_path_macs(cfg: MambaConfig, length: int) -> int:
    """Conv -> parameter generation -> scan, for one direction."""
    e, n = cfg.e, cfg.n
    return length * (
        e * cfg.d_conv           # depthwise conv
        + 2 * e * n              # B and C selection projections
        + 2 * e * cfg.dt_rank    # low-rank delta (E -> E/r -> E)
        + 3 * e * n              # scan: decay, input injection, readout
    )


def mixer_macs(mixer: str, length: int, d: int,
               cfg: MambaConfig | None = None) -> int:
    """Per-layer MACs of one mixer at sequence length ``length``.

    mhsa         4*L*D^2 + 2*L^2*D   (QKVO projections; scores and values)
    mamba        L*(2DE + ...) with the scan-path terms above, once
    inn_bimamba  shared projections once, scan path twice
    ext_bimamba  everything twice (two complete gated branches)
    """
    if mixer == "mhsa":
        return 4 * length * d * d + 2 * length * length * d
    if cfg is None:
        raise ConfigError(f"mixer {mixer!r} needs a mamba config")
    if cfg.d != d:
        raise ConfigError(f"mamba config d = {cfg.d} != mixer d = {d}")
    e = cfg.e
    projections = length * (2 * d * e + e * d)  # w_x, w_z in; w_out out
    path = _scan_path_macs(cfg, length)
    if mixer == "mamba":
        return projections + path
    if mixer == "inn_bimamba":
        return projections + 2 * path
    if mixer == "ext_bimamba":
        return 2 * (projections + path)
    raise ConfigError(f"unknown mixer {mixer!r}; pick from {TIMED_MIXERS}")


def count_macs(spec: BlockSpec, cfg: MambaConfig | None, length: int) -> int:
    """Closed-form MACs of one full layer (mixer plus its shell)."""
    d = spec.d
    mixer = mixer_macs(spec.mixer, length, d, cfg)
    ffn = 2 * length * d * spec.d_ff
    if spec.kind == "transformer":
        return mixer + ffn
    # conformer: two macaron halves (or one ffn), conv module
    n_ffn = 2 if spec.use_macaron else 1
    conv_module = length * (2 * d * d      # pointwise into the GLU
                            + d * spec.conv_kernel  # depthwise
                            + d * d)       # pointwise out
    return mixer + n_ffn * ffn + conv_module


# ---------------------------------------------------------------------------
# instrumented walk (independent tally for the tests)


class _MacCounter:
    """Tallies MACs from shapes as a forward pass would encounter them."""

    def __init__(self):
        self.total = 0

    def matmul(self, rows: int, inner: int, cols: int) -> None:
        self.total += rows * inner * cols

    def depthwise_conv(self, length: int, channels: int, taps: int) -> None:
        self.total += length * channels * taps

    def scan_step(self, e: int, n: int) -> None:
        # decay abar*h, fused input injection delta*bsel*u, readout csel*h
        self.total += 3 * e * n


def _walk_scan_path(c: _MacCounter, cfg: MambaConfig, length: int) -> None:
    c.depthwise_conv(length, cfg.e, cfg.d_conv)
    c.matmul(length, cfg.e, cfg.n)        # bsel = xp @ W_B
    c.matmul(length, cfg.e, cfg.n)        # csel = xp @ W_C
    c.matmul(length, cfg.e, cfg.dt_rank)  # delta rank reduction
    c.matmul(length, cfg.dt_rank, cfg.e)  # delta expansion
    for _ in range(length):
        c.scan_step(cfg.e, cfg.n)


def _walk_gated_branch(c: _MacCounter, cfg: MambaConfig, length: int) -> None:
    c.matmul(length, cfg.d, cfg.e)   # x projection
    c.matmul(length, cfg.d, cfg.e)   # z (gate) projection
    _walk_scan_path(c, cfg, length)
    c.matmul(length, cfg.e, cfg.d)   # output projection


def _walk_mixer(c: _MacCounter, mixer: str, length: int, d: int,
                n_heads: int, cfg: MambaConfig | None) -> None:
    if mixer == "mhsa":
        for name in ("w_q", "w_k", "w_v"):
            c.matmul(length, d, d)
        dh = d // n_heads
        for _ in range(n_heads):
            c.matmul(length, dh, length)  # scores = q @ k^T
            c.matmul(length, length, dh)  # attn @ v
        c.matmul(length, d, d)            # w_o
        return
    if cfg is None:
        raise ConfigError(f"mixer {mixer!r} needs a mamba config")
    if mixer == "mamba":
        _walk_gated_branch(c, cfg, length)
    elif mixer == "inn_bimamba":
        c.matmul(length, cfg.d, cfg.e)  # shared x projection
        c.matmul(length, cfg.d, cfg.e)  # shared gate projection
        _walk_scan_path(c, cfg, length)   # forward direction
        _walk_scan_path(c, cfg, length)   # backward direction
        c.matmul(length, cfg.e, cfg.d)  # shared output projection
    elif mixer == "ext_bimamba":
        _walk_gated_branch(c, cfg, length)
        _walk_gated_branch(c, cfg, length)
    else:
        raise ConfigError(f"unknown mixer {mixer!r}")


def _walk_ffn(c: _MacCounter, length: int, d: int, d_ff: int) -> None:
    c.matmul(length, d, d_ff)
    c.matmul(length, d_ff, d)


def macs_walk(spec: BlockSpec, cfg: MambaConfig | None, length: int) -> int:
    """Walk the layer's forward structure, tallying MACs op by op."""
    c = _MacCounter()
    if spec.kind == "conformer" and spec.use_macaron:
        _walk_ffn(c, length, spec.d, spec.d_ff)
    _walk_mixer(c, spec.mixer, length, spec.d, spec.n_heads, cfg)
    if spec.kind == "conformer":
        c.matmul(length, spec.d, 2 * spec.d)          # conv module: GLU in
        c.depthwise_conv(length, spec.d, spec.conv_kernel)
        c.matmul(length, spec.d, spec.d)              # conv module: out
    _walk_ffn(c, length, spec.d, spec.d_ff)
    return c.total


# ---------------------------------------------------------------------------
# wall-clock scaling


@dataclass
class CostRow:
    mixer: str
    length: int
    macs: int
    wall_ms: float
    reps: int
    warmups: int
    slope_group: str
    skipped: bool = False
    note: str = ""


@dataclass
class CostReport:
    rows: list[CostRow] = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "slopes": self.slopes}


def _make_forward(mixer: str, d: int, n_heads: int, cfg: MambaConfig | None,
                  seed: int, chunk: int):
    """A zero-argument-per-call forward for one (mixer, params) pair."""
    if mixer == "mhsa":
        spec = BlockSpec(kind="transformer", mixer="mhsa", causal=False,
                         d=d, n_heads=n_heads)
        params = init_layer(spec, None, seed).mixer
        return lambda x: mhsa_forward(x, params, n_heads, causal=False)
    if cfg is None:
        raise ConfigError(f"mixer {mixer!r} needs a mamba config")
    if mixer == "mamba":
        params = init_mamba(cfg, seed)
        return lambda x: mamba_forward(x, params, scan_impl="parallel", chunk=chunk)
    if mixer == "inn_bimamba":
        params = init_inn_bimamba(cfg, seed)
        return lambda x: inn_bimamba_forward(x, params, scan_impl="parallel", chunk=chunk)
    if mixer == "ext_bimamba":
        params = init_ext_bimamba(cfg, seed)
        return lambda x: ext_bimamba_forward(x, params, scan_impl="parallel", chunk=chunk)
    raise ConfigError(f"unknown mixer {mixer!r}; pick from {TIMED_MIXERS}")


def _median_wall_ms(fn, x, reps: int, warmups: int) -> float:
    for _ in range(warmups):
        fn(x)
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(x)
        samples.append(1e3 * (time.perf_counter() - t0))
    return float(np.median(samples))


def _random_ssm_inputs(rng, length: int, e: int, n: int) -> SsmInputs:
    return SsmInputs(
        u=rng.standard_normal((1, length, e)),
        delta=rng.uniform(1e-3, 1e-1, (1, length, e)),
        a=-np.exp(rng.standard_normal((e, n))),
        bsel=rng.standard_normal((1, length, n)),
        csel=rng.standard_normal((1, length, n)),
        d=rng.standard_normal(e),
    )


def time_scaling(mixers, lengths, d: int = 32, n_heads: int = 1,
                 cfg: MambaConfig | None = None, seed: int = 0,
                 reps: int = 5, warmups: int = 2, chunk: int = 64,
                 scan_impl_extra: bool = True) -> CostReport:
    """Median forward wall time per (mixer, length), single BLAS thread.

    Lengths must be ascending and span at least 4 points. A length whose
    buffers exceed memory is reported as a skipped row, not an error. Two
    extra rows time the sequential and chunked-parallel scan kernels alone
    at the largest length (the parallel-scan payoff, kept out of the slope
    fits via slope_group='extra').
    """
    lengths = [int(x) for x in lengths]
    if len(lengths) < 4:
        raise ConfigError(f"need >= 4 lengths, got {len(lengths)}")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError(f"lengths must be strictly ascending, got {lengths}")
    if reps < 5:
        raise ConfigError(f"reps must be >= 5, got {reps}")
    if cfg is None:
        cfg = MambaConfig(d=d)
    rng = np.random.default_rng(seed)
    report = CostReport()
    with threadpool_limits(limits=1):
        for mixer in mixers:
            fn = _make_forward(mixer, d, n_heads, cfg, seed, chunk)
            for length in lengths:
                macs = mixer_macs(mixer, length, d, cfg)
                try:
                    x = rng.standard_normal((1, length, d))
                    wall = _median_wall_ms(fn, x, reps, warmups)
                except MemoryError:
                    report.rows.append(CostRow(
                        mixer=mixer, length=length, macs=macs, wall_ms=float("nan"),
                        reps=reps, warmups=warmups, slope_group=mixer,
                        skipped=True, note="allocation failure"))
                    continue
                report.rows.append(CostRow(
                    mixer=mixer, length=length, macs=macs, wall_ms=wall,
                    reps=reps, warmups=warmups, slope_group=mixer))
        if scan_impl_extra:
            top = lengths[-1]
            try:
                inp = _random_ssm_inputs(rng, top, cfg.e, cfg.n)
                for name, kern in (("scan_sequential", selective_scan_sequential),
                                   ("scan_parallel",
                                    lambda i: selective_scan_parallel(i, chunk))):
                    wall = _median_wall_ms(kern, inp, reps, warmups)
                    report.rows.append(CostRow(
                        mixer=name, length=top, macs=3 * top * cfg.e * cfg.n,
                        wall_ms=wall, reps=reps, warmups=warmups,
                        slope_group="extra"))
            except MemoryError:
                report.rows.append(CostRow(
                    mixer="scan_sequential", length=lengths[-1], macs=0,
                    wall_ms=float("nan"), reps=reps, warmups=warmups,
                    slope_group="extra", skipped=True, note="allocation failure"))
    for mixer in mixers:
        pts = [(r.length, r.wall_ms) for r in report.rows
               if r.slope_group == mixer and not r.skipped]
        if len(pts) >= 4:
            slope, r2 = fit_slope(pts)
            report.slopes[mixer] = {"slope": slope, "r2": r2, "n_points": len(pts)}
    return report


def fit_slope(points) -> tuple[float, float]:
    """Least-squares slope of log(wall_ms) vs log(length), with R^2.

    ``points`` is a sequence of (length, wall_ms) pairs; needs >= 4 points
    with non-constant wall time.
    """
    pts = [(float(length), float(w)) for length, w in points]
    if len(pts) < 4:
        raise DomainError(f"need >= 4 points to fit a slope, got {len(pts)}")
    if any(length <= 0 or w <= 0 for length, w in pts):
        raise DomainError("lengths and wall times must be positive")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DomainError("degenerate (constant) data; no slope to fit")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(slope), 1.0 - ss_res / ss_tot


def write_cost_csv(report: CostReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mixer", "L", "macs", "wall_ms", "reps", "slope_group"])
        for r in report.rows:
            w.writerow([r.mixer, r.length, r.macs,
                        "" if r.skipped else f"{r.wall_ms:.6f}",
                        r.reps, r.slope_group])
