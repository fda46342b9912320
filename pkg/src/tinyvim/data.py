"""Synthetic 10-class dataset whose classes differ only in frequency content.

Class k is a sinusoidal grating with its own orientation and spatial
frequency, drawn with a uniformly random phase and additive Gaussian noise.
Random phase makes the class mean image nearly zero, so a linear model on raw
pixels is weak, while the Fourier magnitude separates the classes.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import read_tvmt, write_tvmt


@dataclass(frozen=True)
class ToyDatasetSpec:
    seed: int = 7
    classes: int = 10
    samples_per_class: int = 120
    size: int = 32
    channels: int = 3
    noise: float = 0.8
    holdout_fraction: float = 0.25

    def signature(self, k: int) -> tuple[float, float]:
        """(orientation in radians, frequency in cycles/pixel) of class k."""
        n_orient = (self.classes + 1) // 2
        theta = np.pi * (k % n_orient) / n_orient
        freq = (0.09, 0.18)[k // n_orient % 2]
        return theta, freq


def make_dataset(spec: ToyDatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """Images (N, C, H, W) float32 and integer labels, class-interleaved."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    n = spec.classes * spec.samples_per_class
    labels = np.arange(n) % spec.classes
    yy, xx = np.mgrid[0:spec.size, 0:spec.size].astype(float)
    images = np.empty((n, spec.channels, spec.size, spec.size), dtype=np.float32)
    for i, k in enumerate(labels):
        theta, freq = spec.signature(int(k))
        theta = theta + rng.normal(0.0, 0.05)
        freq = freq * (1.0 + rng.normal(0.0, 0.04))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.7, 1.3)
        pattern = amp * np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        gains = rng.uniform(0.8, 1.2, size=spec.channels)
        noise = rng.normal(0.0, spec.noise, size=(spec.channels, spec.size, spec.size))
        images[i] = gains[:, None, None] * pattern[None] + noise
    return images, labels


def split_holdout(spec: ToyDatasetSpec, images: np.ndarray, labels: np.ndarray):
    """Deterministic split: the last ``holdout_fraction`` of every class is held out."""
    n_hold = int(round(spec.samples_per_class * spec.holdout_fraction))
    rank = np.arange(len(labels)) // spec.classes
    test = rank >= spec.samples_per_class - n_hold
    return (images[~test], labels[~test]), (images[test], labels[test])


def generate_dataset(spec: ToyDatasetSpec, out_dir: str | os.PathLike) -> Path:
    """Write one TVMT file per sample plus ``labels.csv``; returns the CSV path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, labels = make_dataset(spec)
    csv_path = out_dir / "labels.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["file", "label"])
        for i, (img, lab) in enumerate(zip(images, labels)):
            name = f"sample_{i:05d}.tvmt"
            write_tvmt(out_dir / name, img)
            writer.writerow([name, int(lab)])
    return csv_path


def load_dataset(out_dir: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    out_dir = Path(out_dir)
    images, labels = [], []
    with open(out_dir / "labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            images.append(read_tvmt(out_dir / row["file"]))
            labels.append(int(row["label"]))
    return np.stack(images), np.asarray(labels)


# -- probes ----------------------------------------------------------------


def ridge_probe(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray, test_y: np.ndarray,
                classes: int, lam: float = 1.0) -> float:
    """Accuracy of a closed-form ridge classifier on standardized features."""
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0) + 1e-8
    a = np.hstack([(train_x - mu) / sd, np.ones((len(train_x), 1))])
    b = np.hstack([(test_x - mu) / sd, np.ones((len(test_x), 1))])
    targets = np.eye(classes)[train_y]
    w = np.linalg.solve(a.T @ a + lam * np.eye(a.shape[1]), a.T @ targets)
    return float(np.mean(np.argmax(b @ w, axis=1) == test_y))


def pixel_features(images: np.ndarray) -> np.ndarray:
    return images.reshape(len(images), -1).astype(float)


def frequency_features(images: np.ndarray) -> np.ndarray:
    """log |FFT| of the channel-mean image, flattened."""
    gray = images.mean(axis=1)
    return np.log1p(np.abs(np.fft.fft2(gray))).reshape(len(images), -1)
