"""Dense numerics kernels: matmul, activations, depthwise conv, norms, reverse.

Pure functions on float64 numpy arrays. These are the forward implementations;
the differentiable wrappers in :mod:`bimamba.autodiff` call into them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

__all__ = [
    "matmul",
    "activation",
    "sigmoid",
    "silu",
    "softplus",
    "relu",
    "depthwise_conv1d",
    "normalize",
    "reverse_time",
    "softmax",
]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Contract the last axis of ``a`` with the second-to-last of ``b``.

    ``a`` may carry arbitrary leading batch axes; ``b`` is typically a 2-D
    weight ``[K, P]`` but stacked left axes are accepted on either operand
    (numpy broadcasting rules).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul needs a >=1-d and b >=2-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def relu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0)


_ACTIVATIONS = {
    "sigmoid": sigmoid,
    "silu": silu,
    "swish": silu,
    "softplus": softplus,
    "relu": relu,
}


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Apply an elementwise activation selected by name."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    return fn(x)


def depthwise_conv1d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    causal: bool = True,
) -> np.ndarray:
    """Per-channel 1-D convolution over the time axis of ``x [B, L, E]``.

    ``w [E, K]`` holds one K-tap filter per channel; ``w[e, K-1]`` multiplies
    the current sample. Causal mode left-pads K-1 zeros so output l sees only
    inputs <= l; non-causal mode pads (K-1)/2 on both sides and requires odd K.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 3 or w.ndim != 2:
        raise ShapeError(f"expected x [B,L,E] and w [E,K], got {x.shape}, {w.shape}")
    if x.shape[2] != w.shape[0]:
        raise ShapeError(f"channel mismatch: x has {x.shape[2]}, w has {w.shape[0]}")
    k = w.shape[1]
    if causal:
        left, right = k - 1, 0
    else:
        if k % 2 == 0:
            raise ConfigError(f"non-causal depthwise conv requires odd K, got {k}")
        left = right = (k - 1) // 2
    xpad = np.pad(x, ((0, 0), (left, right), (0, 0)))
    windows = sliding_window_view(xpad, k, axis=1)  # [B, L, E, K]
    y = np.einsum("blek,ek->ble", windows, w)
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (x.shape[2],):
            raise ShapeError(f"bias shape {b.shape} != ({x.shape[2]},)")
        y = y + b
    return y


def normalize(
    x: np.ndarray,
    kind: str = "layer",
    gain: np.ndarray | None = None,
    bias: np.ndarray | None = None,
    eps: float = 1e-5,
) -> np.ndarray:
    """Normalize over the last axis.

    ``layer``: (x - mean) / sqrt(var + eps), population variance.
    ``rms``:   x / sqrt(mean(x^2) + eps); no bias term.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "layer":
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        y = (x - mean) / np.sqrt(var + eps)
    elif kind == "rms":
        ms = np.mean(x * x, axis=-1, keepdims=True)
        y = x / np.sqrt(ms + eps)
        if bias is not None:
            raise ConfigError("rms normalization takes no bias")
    else:
        raise ConfigError(f"unknown normalization {kind!r}")
    if gain is not None:
        y = y * np.asarray(gain, dtype=np.float64)
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float64)
    return y


def reverse_time(x: np.ndarray, axis: int = 1) -> np.ndarray:
    """Reverse the time axis (axis 1 of a [B, L, ...] tensor by default)."""
    x = np.asarray(x, dtype=np.float64)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    return np.flip(x, axis=axis).copy()


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax; -inf entries map to exact zeros."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    # A fully masked row would give m = -inf and 0/0; keep m finite instead.
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)
