"""
Hyperspectral cube ingestion, preprocessing and pixel sampling.

On-disk layout of one image (a directory)::

    meta.json    {"height": H, "width": W, "bands": B, "dtype": "<f4", "label_dtype": "|u1"}
    values.bin   little-endian float32, row-major (H, W, B)
    labels.bin   uint8, row-major (H, W)

A dataset is described by a JSON manifest (see :class:`DatasetManifest`).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SHARES = (5, 10, 25, 50, 75, 100)

VALUES_DTYPE = "<f4"
LABELS_DTYPE = "|u1"


class FormatError(ValueError):
    """A cube file is malformed (bad header, truncated payload)."""


class SchemaError(ValueError):
    """A cube or manifest disagrees with the declared dataset schema."""


@dataclass(frozen=True)
class ImageEntry:
    id: str
    path: str
    split: str


@dataclass
class DatasetManifest:
    name: str
    band_count: int
    class_count: int
    class_names: list[str]
    images: list[ImageEntry]
    band_drop: list[int] = field(default_factory=list)
    wavelength_nm: list[float] | None = None
    ignore_label: int | None = None
    # per-band bounds over kept bands, fitted on the train split
    norm_min: list[float] | None = None
    norm_max: list[float] | None = None
    root: str = "."

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.band_count < 1 or self.class_count < 1:
            raise SchemaError("band_count and class_count must be positive")
        if len(self.class_names) != self.class_count:
            raise SchemaError(
                f"class_names has {len(self.class_names)} entries, expected {self.class_count}"
            )
        if len(set(self.band_drop)) != len(self.band_drop):
            raise SchemaError("band_drop indices must be unique")
        if any(not 0 <= b < self.band_count for b in self.band_drop):
            raise SchemaError("band_drop index out of range")
        if self.wavelength_nm is not None and len(self.wavelength_nm) != self.band_count:
            raise SchemaError("wavelength_nm must have one entry per band")
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate image ids in manifest")
        for im in self.images:
            if im.split not in SPLITS:
                raise SchemaError(f"image {im.id!r}: split must be one of {SPLITS}, got {im.split!r}")
        if (self.norm_min is None) != (self.norm_max is None):
            raise SchemaError("norm_min and norm_max must be given together")
        if self.norm_min is not None:
            if len(self.norm_min) != self.effective_bands or len(self.norm_max) != self.effective_bands:
                raise SchemaError("normalization bounds must cover the kept bands")

    @property
    def effective_bands(self) -> int:
        return self.band_count - len(self.band_drop)

    @property
    def kept_bands(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.band_count), np.asarray(self.band_drop, dtype=int))

    def split_ids(self, split: str) -> list[str]:
        return [im.id for im in self.images if im.split == split]

    def image(self, image_id: str) -> ImageEntry:
        for im in self.images:
            if im.id == image_id:
                return im
        raise KeyError(image_id)

    def image_path(self, image_id: str) -> Path:
        p = Path(self.image(image_id).path)
        return p if p.is_absolute() else Path(self.root) / p

    # -- JSON ----------------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "band_count": self.band_count,
            "class_count": self.class_count,
            "class_names": list(self.class_names),
            "wavelength_nm": self.wavelength_nm,
            "band_drop": list(self.band_drop),
            "ignore_label": self.ignore_label,
            "images": [{"id": im.id, "path": im.path, "split": im.split} for im in self.images],
        }
        if self.norm_min is not None:
            d["norm_min"] = [float(v) for v in self.norm_min]
            d["norm_max"] = [float(v) for v in self.norm_max]
        return d

    @classmethod
    def from_dict(cls, d: dict, root: str | os.PathLike = ".") -> "DatasetManifest":
        try:
            return cls(
                name=d["name"],
                band_count=int(d["band_count"]),
                class_count=int(d["class_count"]),
                class_names=list(d["class_names"]),
                images=[ImageEntry(str(im["id"]), im["path"], im["split"]) for im in d["images"]],
                band_drop=[int(b) for b in d.get("band_drop", [])],
                wavelength_nm=d.get("wavelength_nm"),
                ignore_label=d.get("ignore_label"),
                norm_min=d.get("norm_min"),
                norm_max=d.get("norm_max"),
                root=str(root),
            )
        except KeyError as e:
            raise SchemaError(f"manifest missing field {e.args[0]!r}") from None


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as f:
        return DatasetManifest.from_dict(json.load(f), root=path.parent)


def save_manifest(manifest: DatasetManifest, path):
    atomic_write_text(path, json.dumps(manifest.to_dict(), indent=2))


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode())


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


# -- cubes -------------------------------------------------------------------


@dataclass(frozen=True)
class HyperspectralCube:
    values: np.ndarray  # (H, W, B)
    labels: np.ndarray  # (H, W)
    image_id: str = ""
    normalized: bool = False

    def __post_init__(self):
        if self.values.ndim != 3:
            raise SchemaError(f"values must be (H, W, B), got shape {self.values.shape}")
        if self.labels.shape != self.values.shape[:2]:
            raise SchemaError(
                f"labels shape {self.labels.shape} does not match spatial shape {self.values.shape[:2]}"
            )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


def write_cube(cube: HyperspectralCube, path):
    """Write ``cube`` to the directory ``path`` in the documented layout."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": VALUES_DTYPE,
        "label_dtype": LABELS_DTYPE,
    }
    if cube.labels.min(initial=0) < 0 or cube.labels.max(initial=0) > 255:
        raise SchemaError("labels must fit in uint8")
    atomic_write_text(path / "meta.json", json.dumps(meta, sort_keys=True))
    atomic_write_bytes(path / "values.bin", np.ascontiguousarray(cube.values, dtype=VALUES_DTYPE).tobytes())
    atomic_write_bytes(path / "labels.bin", np.ascontiguousarray(cube.labels, dtype=LABELS_DTYPE).tobytes())


def read_cube(path, image_id: str = "") -> HyperspectralCube:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        h, w, b = int(meta["height"]), int(meta["width"]), int(meta["bands"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed header ({e})") from None
    if min(h, w, b) < 1:
        raise FormatError(f"{path}: non-positive dimension in header")
    if meta.get("dtype", VALUES_DTYPE) != VALUES_DTYPE or meta.get("label_dtype", LABELS_DTYPE) != LABELS_DTYPE:
        raise FormatError(f"{path}: unsupported dtype {meta.get('dtype')!r}/{meta.get('label_dtype')!r}")
    raw = (path / "values.bin").read_bytes()
    lab = (path / "labels.bin").read_bytes()
    if len(raw) != h * w * b * 4:
        raise FormatError(f"{path}: values.bin has {len(raw)} bytes, expected {h * w * b * 4}")
    if len(lab) != h * w:
        raise FormatError(f"{path}: labels.bin has {len(lab)} bytes, expected {h * w}")
    values = np.frombuffer(raw, dtype=VALUES_DTYPE).reshape(h, w, b)
    labels = np.frombuffer(lab, dtype=LABELS_DTYPE).reshape(h, w)
    return HyperspectralCube(values, labels, image_id=image_id or path.name)


def load_cube(path, manifest: DatasetManifest, image_id: str = "") -> HyperspectralCube:
    """Read a raw cube and check it against ``manifest`` (no normalization)."""
    cube = read_cube(path, image_id)
    if cube.bands != manifest.band_count:
        raise SchemaError(
            f"{path}: cube has {cube.bands} bands, manifest {manifest.name!r} declares {manifest.band_count}"
        )
    valid = cube.labels < manifest.class_count
    if manifest.ignore_label is not None:
        valid |= cube.labels == manifest.ignore_label
    if not valid.all():
        raise SchemaError(f"{path}: label values outside 0..{manifest.class_count - 1}")
    return cube


def available_images(manifest: DatasetManifest, split: str | None = None) -> list[str]:
    """Image ids whose files exist; missing entries are skipped with a warning."""
    out = []
    for im in manifest.images:
        if split is not None and im.split != split:
            continue
        if (manifest.image_path(im.id) / "meta.json").exists():
            out.append(im.id)
        else:
            log.warning("image %s listed in manifest %s is missing on disk; skipped", im.id, manifest.name)
    return out


def missing_images(manifest: DatasetManifest) -> list[str]:
    return [im.id for im in manifest.images if not (manifest.image_path(im.id) / "meta.json").exists()]


# -- preprocessing -----------------------------------------------------------


def fit_normalization(manifest: DatasetManifest, cubes: Sequence[HyperspectralCube] | None = None) -> DatasetManifest:
    """Per-band min/max over the training split; returns a manifest carrying the bounds.

    Only labelled pixels are considered. ``cubes`` defaults to loading every
    available train image of ``manifest``.
    """
    if cubes is None:
        cubes = [load_cube(manifest.image_path(i), manifest, i) for i in available_images(manifest, "train")]
    keep = manifest.kept_bands
    lo = np.full(len(keep), np.inf)
    hi = np.full(len(keep), -np.inf)
    for cube in cubes:
        px = cube.values[..., keep].reshape(-1, len(keep))
        mask = _label_mask(cube.labels.reshape(-1), manifest.ignore_label)
        if not mask.any():
            continue
        px = px[mask].astype(np.float64)
        lo = np.minimum(lo, px.min(axis=0))
        hi = np.maximum(hi, px.max(axis=0))
    if not np.isfinite(lo).all():
        raise SchemaError("no labelled training pixels to fit normalization bounds on")
    return replace(manifest, norm_min=lo.tolist(), norm_max=hi.tolist())


def preprocess(cube: HyperspectralCube, manifest: DatasetManifest) -> HyperspectralCube:
    """Drop bands and min-max normalize to [0, 1] with the manifest's bounds.

    If the manifest carries no bounds, the cube's own per-band range is used.
    Values outside the bounds (val/test data) are clamped. A band whose range
    is degenerate maps to 0 and a warning is logged. Applying this to an
    already preprocessed cube returns it unchanged.
    """
    if cube.normalized:
        return cube
    if cube.bands != manifest.band_count:
        raise SchemaError(f"cube has {cube.bands} bands, manifest declares {manifest.band_count}")
    vals = cube.values[..., manifest.kept_bands].astype(np.float64)
    if manifest.norm_min is not None:
        lo = np.asarray(manifest.norm_min, dtype=np.float64)
        hi = np.asarray(manifest.norm_max, dtype=np.float64)
    else:
        flat = vals.reshape(-1, vals.shape[-1])
        lo, hi = flat.min(axis=0), flat.max(axis=0)
    span = hi - lo
    flat_band = span <= 0
    if flat_band.any():
        log.warning("degenerate band(s) %s in %s mapped to 0", np.flatnonzero(flat_band).tolist(), cube.image_id)
    scale = np.where(flat_band, 0.0, 1.0 / np.where(flat_band, 1.0, span))
    out = np.clip((vals - lo) * scale, 0.0, 1.0)
    return HyperspectralCube(out, cube.labels, image_id=cube.image_id, normalized=True)


# -- pixel samples -------------------------------------------------------------


@dataclass(frozen=True)
class SpectralSample:
    spectrum: np.ndarray
    label: int
    source_image: str


class PixelSet(Sequence):
    """Labelled spectra stored column-wise; indexes as :class:`SpectralSample`."""

    def __init__(self, spectra, labels, image_ids=None):
        self.spectra = np.asarray(spectra, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.spectra.ndim != 2 or len(self.labels) != len(self.spectra):
            raise SchemaError("spectra must be (N, b) with one label per row")
        if image_ids is None:
            image_ids = np.full(len(self.labels), "", dtype=object)
        self.image_ids = np.asarray(image_ids, dtype=object)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        if isinstance(i, slice) or isinstance(i, np.ndarray):
            return PixelSet(self.spectra[i], self.labels[i], self.image_ids[i])
        return SpectralSample(self.spectra[i], int(self.labels[i]), self.image_ids[i])

    def __iter__(self) -> Iterator[SpectralSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def length(self) -> int:
        return self.spectra.shape[1]

    def class_counts(self, class_count: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=class_count)[:class_count]

    @staticmethod
    def concat(sets: Sequence["PixelSet"], bands: int | None = None) -> "PixelSet":
        sets = list(sets)
        if not sets:
            return PixelSet(np.zeros((0, bands or 0)), np.zeros(0, dtype=np.int64))
        return PixelSet(
            np.concatenate([s.spectra for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.image_ids for s in sets]),
        )


def _label_mask(labels, ignore_label):
    if ignore_label is None:
        return np.ones(labels.shape, dtype=bool)
    return labels != ignore_label


def extract_labeled_pixels(cube: HyperspectralCube, ignore_label: int | None = None) -> PixelSet:
    """One sample per pixel not carrying ``ignore_label``, in row-major order."""
    flat = cube.values.reshape(-1, cube.bands)
    labels = cube.labels.reshape(-1).astype(np.int64)
    mask = _label_mask(labels, ignore_label)
    n = int(mask.sum())
    return PixelSet(flat[mask], labels[mask], np.full(n, cube.image_id, dtype=object))


def load_pixels(manifest: DatasetManifest, image_ids: Sequence[str]) -> PixelSet:
    """Load, preprocess and flatten the given images in manifest order."""
    wanted = set(image_ids)
    sets = []
    for im in manifest.images:
        if im.id not in wanted:
            continue
        cube = preprocess(load_cube(manifest.image_path(im.id), manifest, im.id), manifest)
        sets.append(extract_labeled_pixels(cube, manifest.ignore_label))
    return PixelSet.concat(sets, manifest.effective_bands)


# -- sampling ------------------------------------------------------------------


def share_size(n: int, p: float) -> int:
    return max(1, math.floor(p / 100.0 * n + 0.5))


def sample_share(train_images: Sequence[str], p: float, seed: int) -> list[str]:
    """Whole-image subset holding ``p`` percent of the training images.

    One seeded shuffle followed by prefix selection, so shares are nested for
    a fixed seed. The result keeps the input order.
    """
    train_images = list(train_images)
    if not train_images:
        raise ValueError("cannot sample a share of an empty image list")
    if not 0 < p <= 100:
        raise ValueError(f"share must lie in (0, 100], got {p}")
    order = np.random.default_rng(seed).permutation(len(train_images))
    chosen = set(order[: share_size(len(train_images), p)].tolist())
    return [im for i, im in enumerate(train_images) if i in chosen]


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_indices(n: int, batch_size: int, seed: int = 0, epoch: int = 0, shuffle: bool = True) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_permutation(n, seed, epoch) if shuffle else np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def batch_iterator(samples: PixelSet, batch_size: int, seed: int = 0, shuffle: bool = True, epoch: int = 0):
    """Yield :class:`PixelSet` batches of one epoch; the last one may be short."""
    for idx in batch_indices(len(samples), batch_size, seed, epoch, shuffle):
        yield samples[idx]
