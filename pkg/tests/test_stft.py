"""Window identities, frame bookkeeping, and round-trip fidelity."""

import numpy as np
import pytest

from bimamba.errors import ConfigError, DomainError, ShapeError
from bimamba.stft import (
    interior,
    istft,
    istft_length,
    num_frames,
    power_law_compress,
    sqrt_hann_window,
    stft,
)


class TestWindow:
    def test_squares_to_periodic_hann(self):
        w = sqrt_hann_window(512)
        n = np.arange(512)
        hann = 0.5 * (1.0 - np.cos(2.0 * np.pi * n / 512))
        assert np.max(np.abs(w * w - hann)) < 1e-15

    def test_half_hop_overlap_sums_to_one(self):
        # COLA identity for the squared window at hop = win/2
        w2 = sqrt_hann_window(512) ** 2
        overlap = w2[:256] + w2[256:]
        assert np.max(np.abs(overlap - 1.0)) < 1e-15

    def test_starts_at_zero(self):
        assert sqrt_hann_window(8)[0] == 0.0


class TestStft:
    def test_frame_count_formula(self):
        assert num_frames(512) == 1
        assert num_frames(1024) == 3
        assert num_frames(1023) == 2
        assert stft(np.zeros(1024)).shape == (3, 257)

    def test_zero_in_zero_out(self):
        spec = stft(np.zeros(2048))
        assert np.all(spec == 0)

    def test_short_signal_rejected(self):
        with pytest.raises(ShapeError):
            stft(np.zeros(511))

    def test_non_1d_rejected(self):
        with pytest.raises(ShapeError):
            stft(np.zeros((2, 512)))

    def test_bad_geometry_rejected(self):
        with pytest.raises(ConfigError):
            stft(np.zeros(1024), win=512, hop=0)
        with pytest.raises(ConfigError):
            stft(np.zeros(1024), win=512, hop=513)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        x, y = rng.standard_normal((2, 1536))
        lhs = stft(2.0 * x - 3.0 * y)
        rhs = 2.0 * stft(x) - 3.0 * stft(y)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_bin_centered_sine_concentrates(self):
        # frequency k/win cycles/sample lands on DFT bin k; the window
        # spreads it over k-1..k+1 but >= 90% of energy stays at bin k +- 1
        win, k = 512, 40
        t = np.arange(4 * win)
        x = np.sin(2.0 * np.pi * k * t / win)
        mag2 = np.abs(stft(x)) ** 2
        frame = mag2[3]
        assert int(np.argmax(frame)) == k
        assert frame[k - 1:k + 2].sum() >= 0.9 * frame.sum()

    def test_impulse_magnitude_is_window_sample(self):
        # a lone impulse at sample s contributes window[s] * exp(...) to every
        # bin of frame 0, so |spectrum| is flat at window[s]
        x = np.zeros(512)
        x[100] = 1.0
        mag = np.abs(stft(x))
        assert np.max(np.abs(mag[0] - sqrt_hann_window(512)[100])) < 1e-12


class TestIstft:
    def test_length_formula(self):
        assert istft_length(3) == 1024
        assert istft(np.zeros((3, 257), dtype=complex)).shape == (1024,)

    def test_zero_spec_zero_signal(self):
        assert np.all(istft(np.zeros((4, 257), dtype=complex)) == 0.0)

    def test_bin_count_checked(self):
        with pytest.raises(ShapeError):
            istft(np.zeros((3, 256), dtype=complex))

    def test_interior_bounds(self):
        sl = interior(5)
        assert (sl.start, sl.stop) == (256, 1280)
        with pytest.raises(ShapeError):
            interior(1)

    def test_round_trip_interior_exact(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(512 + 256 * 7)
        y = istft(stft(x))
        assert y.shape == x.shape
        sl = interior(num_frames(x.shape[0]))
        assert np.max(np.abs(y[sl] - x[sl])) < 1e-12

    def test_round_trip_many_signals(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(1024, 5000))
            x = rng.standard_normal(n)
            y = istft(stft(x))
            frames = num_frames(n)
            sl = interior(frames)
            covered = (frames - 1) * 256 + 512
            worst = max(worst, np.max(np.abs(y[sl] - x[sl])))
            # outside the analyzed span the inverse has nothing to say
            assert y.shape[0] == covered
        assert worst < 1e-8

    def test_edges_are_attenuated(self):
        x = np.ones(1024)
        y = istft(stft(x))
        sl = interior(num_frames(1024))
        assert np.max(np.abs(y[sl] - 1.0)) < 1e-12
        assert y[0] == 0.0 and y[10] < 1.0


class TestPowerLaw:
    def test_identity_at_alpha_one(self):
        m = np.array([0.0, 0.5, 3.0])
        assert np.array_equal(power_law_compress(m, 1.0), m)

    def test_square_root_value(self):
        assert power_law_compress(np.array([16.0]), 0.5)[0] == 4.0

    def test_zero_maps_to_zero(self):
        assert power_law_compress(np.zeros(3), 0.3).sum() == 0.0

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            power_law_compress(np.array([-1.0]), 0.3)

    def test_alpha_range(self):
        with pytest.raises(ConfigError):
            power_law_compress(np.ones(1), 0.0)
        with pytest.raises(ConfigError):
            power_law_compress(np.ones(1), 1.5)
