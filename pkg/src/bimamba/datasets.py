"""Synthetic data: 2-D classification toys and noisy sinusoid mixtures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .stft import stft

__all__ = [
    "Dataset2D",
    "SpectralPair",
    "gen_dataset",
    "gen_noisy_mixture",
    "snr_db",
]

DATASET_KINDS = ("gaussians", "spirals")
FS = 16000

# distinct sub-stream tags so the two dataset kinds never share draws
_KIND_TAG = {"gaussians": 101, "spirals": 102}
_MIXTURE_TAG = 103


@dataclass
class Dataset2D:
    points: np.ndarray  # [M, 2]
    labels: np.ndarray  # [M] in {0, 1}
    train_idx: np.ndarray
    test_idx: np.ndarray
    kind: str
    seed: int

    @property
    def x_train(self) -> np.ndarray:
        return self.points[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.labels[self.train_idx]

    @property
    def x_test(self) -> np.ndarray:
        return self.points[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.labels[self.test_idx]


def _stratified_split(labels: np.ndarray, rng, train_frac: float = 0.8):
    train, test = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.shape[0])]
        cut = int(round(train_frac * idx.shape[0]))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


SPIRAL_RADIUS = 4.0
SPIRAL_NOISE = 0.2


def gen_dataset(kind: str, n: int = 800, seed: int = 0) -> Dataset2D:
    """Two balanced classes, stratified 80-20 split.

    gaussians: clusters at (2, 2) and (-2, -2), variance 0.5.
    spirals: two interleaved arms, theta in [0, 3*pi], radius growing to
    SPIRAL_RADIUS, second arm rotated by pi, coordinate noise sigma = 0.2.
    The outer radius keeps the inter-arm gap (radius/3) well clear of the
    noise floor; at unit radius the arms overlap and no classifier can
    separate them.
    """
    if kind not in DATASET_KINDS:
        raise ConfigError(f"kind must be one of {DATASET_KINDS}, got {kind!r}")
    if n < 4 or n % 2:
        raise ConfigError(f"n must be even and >= 4, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([_KIND_TAG[kind], seed]))
    half = n // 2
    if kind == "gaussians":
        std = np.sqrt(0.5)
        pts0 = rng.normal(loc=(2.0, 2.0), scale=std, size=(half, 2))
        pts1 = rng.normal(loc=(-2.0, -2.0), scale=std, size=(half, 2))
    else:
        theta = rng.uniform(0.0, 3.0 * np.pi, size=(2, half))
        r = SPIRAL_RADIUS * theta / (3.0 * np.pi)
        pts0 = np.stack([r[0] * np.cos(theta[0]), r[0] * np.sin(theta[0])], axis=1)
        pts1 = np.stack([r[1] * np.cos(theta[1] + np.pi),
                         r[1] * np.sin(theta[1] + np.pi)], axis=1)
        pts0 = pts0 + rng.normal(scale=SPIRAL_NOISE, size=pts0.shape)
        pts1 = pts1 + rng.normal(scale=SPIRAL_NOISE, size=pts1.shape)
    points = np.concatenate([pts0, pts1])
    labels = np.concatenate([np.zeros(half, dtype=np.int64),
                             np.ones(half, dtype=np.int64)])
    train_idx, test_idx = _stratified_split(labels, rng)
    return Dataset2D(points=points, labels=labels, train_idx=train_idx,
                     test_idx=test_idx, kind=kind, seed=seed)


@dataclass
class SpectralPair:
    noisy_mag: np.ndarray  # [frames, 257]
    clean_mag: np.ndarray  # [frames, 257]
    phase: np.ndarray  # [frames, 257] of the noisy signal
    meta: dict = field(default_factory=dict)
    # time-domain references kept for SNR scoring
    clean_time: np.ndarray | None = None
    noisy_time: np.ndarray | None = None


def snr_db(signal: np.ndarray, residual: np.ndarray) -> float:
    """10*log10 of signal power over residual power."""
    ps = float(np.mean(signal**2))
    pn = float(np.mean(residual**2))
    if pn <= 0.0:
        raise DomainError("residual power must be positive")
    return 10.0 * np.log10(ps / pn)


def gen_noisy_mixture(seed: int, target_snr_db: float = 0.0,
                      dur_s: float = 1.0) -> SpectralPair:
    """Three amplitude-modulated sinusoids plus white noise at an exact SNR."""
    if dur_s < 0.5:
        raise ConfigError(f"dur_s must be >= 0.5, got {dur_s}")
    rng = np.random.default_rng(np.random.SeedSequence([_MIXTURE_TAG, seed]))
    n = int(round(dur_s * FS))
    t = np.arange(n) / FS
    clean = np.zeros(n)
    for _ in range(3):
        f_c = rng.uniform(200.0, 3400.0)
        f_m = rng.uniform(1.0, 8.0)
        depth = rng.uniform(0.3, 0.8)
        ph_c, ph_m = rng.uniform(0.0, 2.0 * np.pi, size=2)
        clean += (1.0 + depth * np.sin(2.0 * np.pi * f_m * t + ph_m)) \
            * np.sin(2.0 * np.pi * f_c * t + ph_c)
    clean /= np.sqrt(np.mean(clean**2))
    noise = rng.standard_normal(n)
    # scale noise power for the requested clean-to-noise ratio
    target_pn = np.mean(clean**2) * 10.0 ** (-target_snr_db / 10.0)
    noise *= np.sqrt(target_pn / np.mean(noise**2))
    noisy = clean + noise
    spec_noisy = stft(noisy)
    spec_clean = stft(clean)
    return SpectralPair(
        noisy_mag=np.abs(spec_noisy),
        clean_mag=np.abs(spec_clean),
        phase=np.angle(spec_noisy),
        meta={"snr_db": float(target_snr_db), "seed": int(seed),
              "dur_s": float(dur_s), "fs": FS},
        clean_time=clean,
        noisy_time=noisy,
    )
