import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinyvim.spectral import (
    export_magnitude_grid,
    fft2d,
    low_freq_energy_ratio,
    radial_profile,
    read_pgm,
    relative_log_amplitude,
    shifted_amplitude,
    spectrum_report,
)

from oracles import pool, upsample


def direct_dft(x):
    H, W = x.shape
    out = np.zeros((H, W), dtype=complex)
    for u in range(H):
        for v in range(W):
            acc = 0j
            for i in range(H):
                for j in range(W):
                    acc += x[i, j] * np.exp(-2j * np.pi * (u * i / H + v * j / W))
            out[u, v] = acc
    return out


def smooth_noise(rng, n=1, c=4, size=16):
    base = upsample(rng.normal(size=(n, c, size // 4, size // 4)), 4)
    return base + 0.3 * rng.normal(size=(n, c, size, size))


class TestFFT:
    def test_constant(self):
        X = fft2d(np.full((6, 8), 2.5))
        assert X[0, 0] == pytest.approx(2.5 * 48)
        rest = np.abs(X).ravel()[1:]
        assert np.max(rest) <= 1e-12

    @pytest.mark.parametrize("shape", [(8, 8), (6, 10), (5, 7)])
    def test_direct_sum_oracle(self, shape):
        x = np.random.default_rng(sum(shape)).normal(size=shape)
        assert np.max(np.abs(fft2d(x) - direct_dft(x))) <= 1e-10

    @settings(max_examples=25, deadline=None)
    @given(h=st.integers(1, 17), w=st.integers(1, 17), seed=st.integers(0, 1000))
    def test_parseval(self, h, w, seed):
        x = np.random.default_rng(seed).normal(size=(h, w))
        lhs = np.sum(np.abs(fft2d(x)) ** 2)
        rhs = h * w * np.sum(x ** 2)
        assert abs(lhs - rhs) <= 1e-9 * rhs

    @pytest.mark.parametrize("n", [7, 8, 14])
    def test_conjugate_symmetry_of_shifted_magnitude(self, n):
        x = np.random.default_rng(n).normal(size=(n, n))
        mag = shifted_amplitude(x)
        # DC sits at n//2; frequency k lives at index (k + n//2) mod n
        idx = (np.arange(n) - n // 2) % n
        unshifted = np.empty_like(mag)
        unshifted[np.ix_(idx, idx)] = mag
        reflected = unshifted[np.ix_(-np.arange(n) % n, -np.arange(n) % n)]
        assert np.max(np.abs(unshifted - reflected)) <= 1e-9 * np.max(mag)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            fft2d(np.zeros(3))


class TestRelativeLogAmplitude:
    def test_starts_at_zero(self):
        rep = relative_log_amplitude(np.random.default_rng(0).normal(size=(2, 3, 14, 14)))
        assert rep.rla[0] == 0.0
        assert rep.rla_curve[0] == (0.0, 0.0)
        assert len(rep.rla_curve) == 7

    def test_white_noise_flat(self):
        noise = np.random.default_rng(1).normal(size=(256, 1, 16, 16))
        rep = relative_log_amplitude(noise)
        assert np.max(np.abs(rep.rla)) < 0.5

    def test_blur_lowers_high_frequencies(self):
        x = np.random.default_rng(2).normal(size=(32, 2, 16, 16))
        blurred = upsample(pool(x, 2), 2)
        sharp = relative_log_amplitude(x).at(0.9)
        soft = relative_log_amplitude(blurred).at(0.9)
        assert soft < sharp

    def test_errors(self):
        with pytest.raises(ValueError):
            relative_log_amplitude(np.zeros((0, 2, 4, 4)))
        with pytest.raises(ValueError):
            relative_log_amplitude(np.zeros((1, 2, 4, 6)))

    def test_radial_bins(self):
        grid = np.zeros((8, 8))
        grid[4, 4] = 5.0
        freqs, prof = radial_profile(grid)
        assert np.allclose(freqs, [0, 0.25, 0.5, 0.75])
        assert prof[0] == 5.0 and not np.any(prof[1:])

    def test_csv(self, tmp_path):
        rep = spectrum_report(np.random.default_rng(3).normal(size=(1, 1, 8, 8)))
        rep.to_csv(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "freq,delta_log_amp" and len(lines) == 5


class TestEnergyRatio:
    def test_full_radius(self):
        x = np.random.default_rng(4).normal(size=(2, 3, 9, 9))
        assert low_freq_energy_ratio(x, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_constant(self):
        for rho in (1e-3, 0.25, 1.0):
            assert low_freq_energy_ratio(np.full((1, 1, 8, 8), 3.0), rho) == pytest.approx(1.0, abs=1e-15)

    def test_pooled_input_more_concentrated(self):
        x = np.random.default_rng(5).normal(size=(4, 2, 16, 16))
        assert low_freq_energy_ratio(upsample(pool(x, 4), 4), 0.25) > low_freq_energy_ratio(x, 0.25)

    def test_monotone_in_rho(self):
        x = smooth_noise(np.random.default_rng(6))
        ratios = [low_freq_energy_ratio(x, rho) for rho in np.linspace(0.01, 1, 40)]
        assert all(b >= a for a, b in zip(ratios, ratios[1:]))
        assert all(0 <= r <= 1 for r in ratios)

    def test_errors(self):
        with pytest.raises(ValueError):
            low_freq_energy_ratio(np.zeros((1, 1, 4, 4)), 0.5)
        with pytest.raises(ValueError):
            low_freq_energy_ratio(np.ones((1, 1, 4, 4)), 0.0)
        with pytest.raises(ValueError):
            low_freq_energy_ratio(np.ones((1, 1, 4, 4)), 1.5)


class TestExport:
    def test_shape_contract(self, tmp_path):
        feats = np.random.default_rng(7).normal(size=(3, 8, 14, 14))
        paths = export_magnitude_grid(feats, tmp_path)
        assert len(paths) == 8
        for p in paths:
            img = read_pgm(p)
            assert img.shape == (14, 14) and img.dtype == np.uint8
            assert img.min() == 0 and img.max() == 255

    def test_constant_channel_uniform(self, tmp_path):
        feats = np.random.default_rng(8).normal(size=(1, 2, 14, 14))
        feats[0, 1] = 4.0
        paths = export_magnitude_grid(feats, tmp_path)
        img = read_pgm(paths[1])
        assert np.all(img == img.flat[0])

    def test_deterministic(self, tmp_path):
        feats = np.random.default_rng(9).normal(size=(2, 3, 14, 14))
        a = export_magnitude_grid(feats, tmp_path / "a")
        b = export_magnitude_grid(feats.copy(), tmp_path / "b")
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            export_magnitude_grid(np.ones((1, 1, 4, 4)), blocker / "sub")
