"""STFT frontend: sqrt-Hann analysis/synthesis and power-law compression.

Analysis and synthesis both apply the square-root Hann window, so the
overlap-add of window products telescopes to exactly 1 at half-window hop
and interior samples reconstruct to round-off. The first and last `hop`
samples see only one window and stay attenuated; `interior` bounds the
trustworthy region.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

__all__ = [
    "sqrt_hann_window",
    "num_frames",
    "stft",
    "istft",
    "istft_length",
    "interior",
    "power_law_compress",
]

WIN_DEFAULT = 512
HOP_DEFAULT = 256


def _check_geometry(win: int, hop: int) -> None:
    if win < 2 or hop < 1 or hop > win:
        raise ConfigError(f"need 1 <= hop <= win and win >= 2, got win={win} hop={hop}")


def sqrt_hann_window(win: int = WIN_DEFAULT) -> np.ndarray:
    """Square root of the periodic Hann window."""
    if win < 2:
        raise ConfigError(f"window length must be >= 2, got {win}")
    n = np.arange(win)
    return np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * n / win)))


def num_frames(length: int, win: int = WIN_DEFAULT, hop: int = HOP_DEFAULT) -> int:
    _check_geometry(win, hop)
    if length < win:
        raise ShapeError(f"signal of {length} samples is shorter than the "
                         f"{win}-sample window")
    return 1 + (length - win) // hop


def stft(x, win: int = WIN_DEFAULT, hop: int = HOP_DEFAULT) -> np.ndarray:
    """Windowed one-sided DFT, no centering: complex [frames, win//2 + 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D signal, got shape {x.shape}")
    frames = num_frames(x.shape[0], win, hop)
    window = sqrt_hann_window(win)
    strided = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:frames]
    return np.fft.rfft(strided * window, axis=-1)


def istft_length(frames: int, win: int = WIN_DEFAULT, hop: int = HOP_DEFAULT) -> int:
    _check_geometry(win, hop)
    if frames < 1:
        raise ShapeError(f"need at least one frame, got {frames}")
    return (frames - 1) * hop + win


def istft(spec, win: int = WIN_DEFAULT, hop: int = HOP_DEFAULT) -> np.ndarray:
    """Overlap-add inverse with the sqrt-Hann synthesis window."""
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise ShapeError(f"expected [frames, bins], got shape {spec.shape}")
    frames, bins = spec.shape
    if bins != win // 2 + 1:
        raise ShapeError(f"{bins} bins inconsistent with win={win} "
                         f"(expected {win // 2 + 1})")
    _check_geometry(win, hop)
    window = sqrt_hann_window(win)
    out = np.zeros(istft_length(frames, win, hop))
    chunks = np.fft.irfft(spec, n=win, axis=-1) * window
    for f in range(frames):
        out[f * hop:f * hop + win] += chunks[f]
    return out


def interior(frames: int, win: int = WIN_DEFAULT, hop: int = HOP_DEFAULT) -> slice:
    """Sample range where analysis + synthesis windows fully overlap."""
    _check_geometry(win, hop)
    if frames < 2:
        raise ShapeError("interior needs at least 2 frames")
    return slice(hop, (frames - 1) * hop + hop)


def power_law_compress(mag, alpha: float = 0.3) -> np.ndarray:
    """Elementwise mag**alpha; alpha in (0, 1], magnitudes must be >= 0."""
    mag = np.asarray(mag, dtype=np.float64)
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
    if np.any(mag < 0.0):
        raise DomainError("power-law compression is defined for nonnegative input")
    return np.power(mag, alpha)
