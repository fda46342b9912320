"""Fourier diagnostics for feature maps.

Spectra are center-shifted so the DC bin sits at (H//2, W//2). Frequencies
are normalized by the half extent, so radius k/(H/2) is the k-th annulus.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class SpectrumReport:
    magnitude: np.ndarray  # (C, H, W) or (H, W) when averaged, center-shifted
    freqs: np.ndarray
    rla: np.ndarray  # log amplitude relative to f = 0
    energy_ratio: float | None = None
    rho: float | None = None

    @property
    def rla_curve(self) -> list[tuple[float, float]]:
        return list(zip(self.freqs.tolist(), self.rla.tolist()))

    def at(self, f: float) -> float:
        """Curve value at normalized frequency ``f`` (linear interpolation)."""
        return float(np.interp(f, self.freqs, self.rla))

    def to_csv(self, path: str | os.PathLike) -> None:
        write_curve_csv(path, self.freqs, self.rla)


def fft2d(x: np.ndarray) -> np.ndarray:
    """2D DFT over the last two axes (unnormalized forward transform)."""
    x = np.asarray(x)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ValueError("fft2d expects at least a 2D grid with positive extents")
    return np.fft.fft2(x, axes=(-2, -1))


def shifted_amplitude(features: np.ndarray) -> np.ndarray:
    """|FFT| of each (H, W) map with DC moved to the center."""
    return np.abs(np.fft.fftshift(fft2d(features), axes=(-2, -1)))


def _radius_grid(H: int, W: int) -> np.ndarray:
    ky = (np.arange(H) - H // 2) / (H / 2)
    kx = (np.arange(W) - W // 2) / (W / 2)
    return np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)


def _as_bchw(features) -> np.ndarray:
    f = np.asarray(getattr(features, "data", features), dtype=float)
    if f.ndim == 2:
        f = f[None, None]
    elif f.ndim == 3:
        f = f[None]
    if f.ndim != 4:
        raise ValueError(f"expected (B, C, H, W) features, got shape {f.shape}")
    return f


def radial_profile(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean of a center-shifted (H, W) grid over annuli of normalized radius.

    Uses ceil(H/2) annuli centered at k/(H/2); each bin is assigned to the
    nearest annulus and bins beyond the last annulus are dropped.
    """
    H, W = grid.shape
    nbins = -(-H // 2)
    k = np.rint(_radius_grid(H, W) * (H / 2)).astype(int)
    mask = k < nbins
    sums = np.bincount(k[mask], weights=grid[mask], minlength=nbins)
    counts = np.bincount(k[mask], minlength=nbins)
    return np.arange(nbins) / (H / 2), sums / np.maximum(counts, 1)


def relative_log_amplitude(features) -> SpectrumReport:
    """Relative log amplitude curve of square feature maps.

    Amplitudes are averaged over samples and channels before the radial
    average and the log; the curve is shifted so that its f=0 value is 0.
    """
    f = _as_bchw(features)
    b, c, h, w = f.shape
    if b == 0 or c == 0:
        raise ValueError("relative_log_amplitude: empty batch")
    if h != w:
        raise ValueError(f"relative_log_amplitude needs square maps, got {h}x{w}")
    amp = shifted_amplitude(f).mean(axis=(0, 1))
    freqs, prof = radial_profile(amp)
    logp = np.log(np.maximum(prof, np.finfo(float).tiny))
    return SpectrumReport(magnitude=amp, freqs=freqs, rla=logp - logp[0])


def low_freq_energy_ratio(features, rho: float) -> float:
    """Share of spectral energy within normalized radius ``rho``.

    The radius is normalized by the largest radius on the grid, so rho=1
    covers every bin.
    """
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    f = _as_bchw(features)
    power = (shifted_amplitude(f) ** 2).sum(axis=(0, 1))
    total = power.sum()
    if not total > 0:
        raise ValueError("low_freq_energy_ratio: input has zero spectral energy")
    r = _radius_grid(*power.shape)
    r = r / r.max() if r.max() > 0 else r
    return float(power[r <= rho + 1e-12].sum() / total)


def spectrum_report(features, rho: float = 0.25) -> SpectrumReport:
    rep = relative_log_amplitude(features)
    rep.energy_ratio = low_freq_energy_ratio(features, rho)
    rep.rho = rho
    return rep


def write_curve_csv(path: str | os.PathLike, freqs, values) -> None:
    with open(path, "w") as fh:
        fh.write("freq,delta_log_amp\n")
        for f, v in zip(freqs, values):
            fh.write(f"{f:.6f},{v:.9f}\n")


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    header = data.split(maxsplit=4)
    if header[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(header[1]), int(header[2])
    return np.frombuffer(header[4][: w * h], dtype=np.uint8).reshape(h, w)


def export_magnitude_grid(features, out_dir: str | os.PathLike, prefix: str = "channel",
                          remove_dc: bool = True) -> list[Path]:
    """Write one 8-bit PGM of log(1 + |FFT|) per channel (sample-averaged).

    Each image is min-max normalized on its own; with ``remove_dc`` the
    channel mean is subtracted first so the DC spike does not swamp the
    scale. A flat grid becomes a uniform black image.
    """
    f = _as_bchw(features)
    if remove_dc:
        f = f - f.mean(axis=(2, 3), keepdims=True)
    mag = np.log1p(shifted_amplitude(f).mean(axis=0))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ch, grid in enumerate(mag):
        lo, hi = grid.min(), grid.max()
        span = hi - lo
        if span <= 1e-12 * max(1.0, abs(hi)):
            img = np.zeros(grid.shape, dtype=np.uint8)
        else:
            img = np.rint((grid - lo) / span * 255.0).astype(np.uint8)
        path = out_dir / f"{prefix}_{ch:03d}.pgm"
        write_pgm(path, img)
        paths.append(path)
    return paths
