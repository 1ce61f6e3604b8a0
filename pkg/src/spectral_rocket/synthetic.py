"""Synthetic spectra and on-disk datasets for tests, demos and benchmarks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import DatasetManifest, HyperspectralCube, ImageEntry, PixelSet, save_manifest, write_cube


def bump_centers(classes: int, length: int) -> np.ndarray:
    """Evenly spaced band positions, one per class, away from the edges."""
    return np.linspace(length * 0.2, length * 0.8, classes)


def bump_spectra(labels, length: int, centers, rng, width: float = 1.5, noise: float = 0.02) -> np.ndarray:
    """Gaussian bump at each label's centre on a random baseline, clipped to [0, 1]."""
    labels = np.asarray(labels)
    t = np.arange(length)
    centers = np.asarray(centers, dtype=np.float64)
    amp = rng.uniform(0.5, 0.9, len(labels))
    base = rng.uniform(0.05, 0.15, len(labels))
    shift = rng.normal(0.0, 0.3, len(labels))
    mu = centers[labels] + shift
    x = base[:, None] + amp[:, None] * np.exp(-0.5 * ((t[None, :] - mu[:, None]) / width) ** 2)
    x += rng.normal(0.0, noise, x.shape)
    return np.clip(x, 0.0, 1.0)


def bump_pixels(n: int, length: int = 25, classes: int = 3, seed: int = 0) -> PixelSet:
    """Balanced, shuffled, linearly separable pixel set."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    return PixelSet(bump_spectra(labels, length, bump_centers(classes, length), rng), labels)


def peak_prototypes(length: int = 25, positions=(3, 20), height: float = 1.0) -> np.ndarray:
    """One sharp single-band peak per class on a zero background."""
    x = np.zeros((len(positions), length))
    x[np.arange(len(positions)), list(positions)] = height
    return x


def make_dataset(root, name: str = "synthetic", splits=None, height: int = 16, width: int = 16, bands: int = 25,
                 classes: int = 3, band_drop=(), ignore_label: int | None = 255, raw_scale: float = 4000.0,
                 class_mix=None, seed: int = 0) -> Path:
    """Write a dataset of bump-spectrum cubes plus ``manifest.json`` under ``root``.

    ``splits`` maps split name to image count (default 4/1/1). ``class_mix``
    optionally gives, per image, the classes it contains; images are split
    into vertical stripes, one per class. Raw values are scaled by
    ``raw_scale`` to mimic sensor counts. Returns the manifest path.
    """
    root = Path(root)
    splits = splits or {"train": 4, "val": 1, "test": 1}
    rng = np.random.default_rng(seed)
    centers = bump_centers(classes, bands - len(band_drop))
    kept = np.setdiff1d(np.arange(bands), np.asarray(band_drop, dtype=int))
    images, k = [], 0
    for split, count in splits.items():
        for _ in range(count):
            image_id = f"img{k:03d}"
            mix = list(class_mix[k]) if class_mix is not None else list(range(classes))
            cols = np.array_split(np.arange(width), len(mix))
            labels = np.zeros((height, width), dtype=np.uint8)
            for c, cidx in zip(mix, cols):
                labels[:, cidx] = c
            spectra = np.zeros((height * width, bands))
            spectra[:, kept] = bump_spectra(labels.reshape(-1), len(kept), centers, rng)
            spectra[:, np.asarray(band_drop, dtype=int)] = rng.uniform(0, 1, (height * width, len(band_drop)))
            if ignore_label is not None:
                labels[0, 0] = ignore_label
            cube = HyperspectralCube((spectra * raw_scale).reshape(height, width, bands).astype(np.float32), labels,
                                     image_id)
            write_cube(cube, root / image_id)
            images.append(ImageEntry(image_id, image_id, split))
            k += 1
    manifest = DatasetManifest(name=name, band_count=bands, class_count=classes,
                               class_names=[f"class{c}" for c in range(classes)], images=images,
                               band_drop=list(band_drop), ignore_label=ignore_label, root=str(root))
    path = root / "manifest.json"
    save_manifest(manifest, path)
    return path
