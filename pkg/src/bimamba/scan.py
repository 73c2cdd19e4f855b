"""Selective state-space scan kernels.

The recurrence, per batch item and channel e with N-dimensional state:

    h_l = Abar_l * h_{l-1} + Bbar_l * u_l        h_{-1} = 0
    y_l = sum_n Csel_l[n] * h_l[n] + D * u_l

with zero-order-hold decay Abar = exp(delta * A) and first-order input factor
Bbar = delta * Bsel. delta varies per channel, Bsel/Csel are shared across
channels, so the state h carries shape [B, E, N].

Both a sequential reference scan and a chunked two-pass parallel scan over the
associative element (a, b) -> h = a * h_prev + b are provided; they agree to
floating-point reassociation error for every chunk size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "SsmInputs",
    "ScanElement",
    "identity_element",
    "combine",
    "discretize",
    "selective_scan_sequential",
    "selective_scan_parallel",
    "scan_states_sequential",
    "scan_states_parallel",
    "readout",
    "lti_kernel",
    "lti_apply",
    "zoh_exact_bbar",
]


@dataclass
class SsmInputs:
    """Validated operands of one selective scan.

    u     [B, L, E]  input sequence
    delta [B, L, E]  positive step sizes
    a     [E, N]     strictly negative continuous-time state matrix (diagonal)
    bsel  [B, L, N]  input-selection vectors
    csel  [B, L, N]  output-selection vectors
    d     [E]        skip gains
    """

    u: np.ndarray
    delta: np.ndarray
    a: np.ndarray
    bsel: np.ndarray
    csel: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.delta = np.asarray(self.delta, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.bsel = np.asarray(self.bsel, dtype=np.float64)
        self.csel = np.asarray(self.csel, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        if self.u.ndim != 3:
            raise ShapeError(f"u must be [B,L,E], got {self.u.shape}")
        b, l, e = self.u.shape
        n = self.a.shape[1] if self.a.ndim == 2 else -1
        if self.delta.shape != (b, l, e):
            raise ShapeError(f"delta shape {self.delta.shape} != {(b, l, e)}")
        if self.a.ndim != 2 or self.a.shape[0] != e:
            raise ShapeError(f"a must be [E,N] with E={e}, got {self.a.shape}")
        if self.bsel.shape != (b, l, n):
            raise ShapeError(f"bsel shape {self.bsel.shape} != {(b, l, n)}")
        if self.csel.shape != (b, l, n):
            raise ShapeError(f"csel shape {self.csel.shape} != {(b, l, n)}")
        if self.d.shape != (e,):
            raise ShapeError(f"d shape {self.d.shape} != ({e},)")
        if not np.all(self.delta > 0):
            raise DomainError("delta must be strictly positive")
        if not np.all(self.a < 0):
            raise DomainError("a must be strictly negative")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        b, l, e = self.u.shape
        return b, l, e, self.a.shape[1]


@dataclass
class ScanElement:
    """One element (a, b) of the scan monoid acting by h -> a*h + b."""

    a: np.ndarray
    b: np.ndarray


def identity_element(shape) -> ScanElement:
    """The monoid identity: a = ones, b = zeros."""
    return ScanElement(np.ones(shape), np.zeros(shape))


def combine(first: ScanElement, second: ScanElement) -> ScanElement:
    """Compose two elements, ``first`` applied before ``second``.

    (a1, b1) then (a2, b2) sends h to a2*(a1*h + b1) + b2, i.e.
    (a1*a2, a2*b1 + b2). Associative because each element is affine.
    """
    return ScanElement(first.a * second.a, second.a * first.b + second.b)


def discretize(a: np.ndarray, delta: np.ndarray, bsel: np.ndarray):
    """Zero-order-hold decay and first-order input factor.

    Returns (abar, bbar), both [B, L, E, N]:
        abar = exp(delta * a)
        bbar = delta * bsel          (multiply by u to get the injected state)
    """
    a = np.asarray(a, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    bsel = np.asarray(bsel, dtype=np.float64)
    if not np.all(delta > 0):
        raise DomainError("delta must be strictly positive")
    abar = np.exp(delta[..., None] * a)  # [B,L,E,N]
    bbar = delta[..., None] * bsel[..., None, :]  # [B,L,E,N]
    return abar, bbar


def _elements(inp: SsmInputs):
    """Materialize the per-step scan elements a = Abar, b = Bbar * u."""
    abar, bbar = discretize(inp.a, inp.delta, inp.bsel)
    bu = bbar * inp.u[..., None]
    return abar, bu


def readout(h: np.ndarray, inp: SsmInputs) -> np.ndarray:
    """y[b,l,e] = sum_n csel[b,l,n] * h[b,l,e,n] + d[e] * u[b,l,e]."""
    return np.einsum("blen,bln->ble", h, inp.csel) + inp.d * inp.u


def scan_states_sequential(inp: SsmInputs) -> np.ndarray:
    """All hidden states h [B, L, E, N] by the left-to-right recurrence."""
    b, l, e, n = inp.dims
    h = np.zeros((b, e, n))
    states = np.empty((b, l, e, n))
    for t in range(l):
        abar_t = np.exp(inp.delta[:, t, :, None] * inp.a)
        bu_t = (inp.delta[:, t, :] * inp.u[:, t, :])[..., None] * inp.bsel[:, t, None, :]
        h = abar_t * h + bu_t
        states[:, t] = h
    return states


def selective_scan_sequential(inp: SsmInputs) -> np.ndarray:
    """Reference scan: sequential recurrence, then readout. Returns y [B,L,E]."""
    return readout(scan_states_sequential(inp), inp)


def scan_states_parallel(inp: SsmInputs, chunk: int) -> np.ndarray:
    """All hidden states via the chunked two-pass (Blelloch-style) scan.

    The sequence is split into ceil(L/chunk) chunks padded at the end with
    identity elements. Pass 1 forms inclusive within-chunk prefixes for all
    chunks at once; a short exclusive scan over the chunk aggregates then
    produces each chunk's carry, applied in pass 2. Any chunk size yields the
    same states up to floating-point reassociation.
    """
    if chunk < 1:
        raise DomainError(f"chunk size must be >= 1, got {chunk}")
    b, l, e, n = inp.dims
    abar, bu = _elements(inp)
    nc = -(-l // chunk)
    pad = nc * chunk - l
    if pad:
        abar = np.concatenate([abar, np.ones((b, pad, e, n))], axis=1)
        bu = np.concatenate([bu, np.zeros((b, pad, e, n))], axis=1)
    av = abar.reshape(b, nc, chunk, e, n).copy()
    bv = bu.reshape(b, nc, chunk, e, n).copy()
    # Pass 1: inclusive prefixes within each chunk, vectorized across chunks.
    for t in range(1, chunk):
        bv[:, :, t] += av[:, :, t] * bv[:, :, t - 1]
        av[:, :, t] *= av[:, :, t - 1]
    # Pass 2: exclusive scan over chunk aggregates, folded into the carry
    # application. After applying the carry, a chunk's last prefix already is
    # the next chunk's carry (combine(carry, agg) with zero initial state).
    carry_b = np.zeros((b, 1, e, n))
    for c in range(nc):
        bv[:, c] += carry_b * av[:, c]
        if c + 1 < nc:
            carry_b = bv[:, c, chunk - 1 :].copy()
    states = bv.reshape(b, nc * chunk, e, n)
    return np.ascontiguousarray(states[:, :l])


def selective_scan_parallel(inp: SsmInputs, chunk: int) -> np.ndarray:
    """Chunked parallel scan followed by readout. Returns y [B,L,E]."""
    return readout(scan_states_parallel(inp, chunk), inp)


def lti_kernel(abar: np.ndarray, bbar: np.ndarray, c: np.ndarray, length: int) -> np.ndarray:
    """Impulse-response kernel of the constant-parameter (LTI) recurrence.

    K[e, j] = sum_n c[n] * abar[e, n]**j * bbar[e, n] for j in [0, length).
    """
    abar = np.asarray(abar, dtype=np.float64)
    bbar = np.asarray(bbar, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if abar.shape != bbar.shape or abar.ndim != 2:
        raise ShapeError(f"abar {abar.shape} and bbar {bbar.shape} must both be [E,N]")
    if c.shape != (abar.shape[1],):
        raise ShapeError(f"c shape {c.shape} != ({abar.shape[1]},)")
    if length < 1:
        raise DomainError(f"kernel length must be >= 1, got {length}")
    e, n = abar.shape
    powers = np.ones((e, n, length))
    if length > 1:
        powers[:, :, 1:] = np.cumprod(
            np.broadcast_to(abar[:, :, None], (e, n, length - 1)), axis=2
        )
    return np.einsum("n,enj->ej", c, powers * bbar[:, :, None])


def lti_apply(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Causal truncated convolution: y[b,l,e] = sum_{j<=l} kernel[e,j] * x[b,l-j,e]."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or kernel.ndim != 2:
        raise ShapeError(f"expected x [B,L,E] and kernel [E,L], got {x.shape}, {kernel.shape}")
    b, l, e = x.shape
    if kernel.shape != (e, l):
        raise ShapeError(f"kernel shape {kernel.shape} != {(e, l)}")
    y = np.zeros_like(x)
    for j in range(l):
        y[:, j:, :] += x[:, : l - j, :] * kernel[:, j]
    return y


def zoh_exact_bbar(a: np.ndarray, delta: np.ndarray, bsel: np.ndarray) -> np.ndarray:
    """Exact zero-order-hold input factor, for quantifying the first-order gap.

    bbar_exact = (exp(delta*a) - 1) / a * bsel, elementwise over [B, L, E, N].
    Reference only; the production path uses the first-order factor delta*bsel.
    """
    a = np.asarray(a, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    bsel = np.asarray(bsel, dtype=np.float64)
    if np.any(a == 0):
        raise DomainError("exact ZOH factor needs nonzero a")
    scale = np.expm1(delta[..., None] * a) / a
    return scale * bsel[..., None, :]
