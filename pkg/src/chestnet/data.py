"""Corpus scanning, stratified splitting, image loading and augmentation.

The corpus layout is one folder per class::

    root/COVID/*.png
    root/Lung_Opacity/*.png
    root/Normal/*.png
    root/Viral Pneumonia/*.png

Class ids follow the lexicographic order of the folder names.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm", ".pnm", ".tif", ".tiff"}
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
THREADS_ENV = "CHESTNET_THREADS"


class DataError(Exception):
    """Raised for unusable corpora, manifests and images."""


def worker_count() -> int:
    """Worker cap from ``CHESTNET_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise DataError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


class Sample(NamedTuple):
    path: Path
    label: int


@dataclass
class Dataset:
    root: Path
    class_names: list
    samples: list
    skipped: int = 0

    def __post_init__(self):
        self.root = Path(self.root)
        if len(set(self.class_names)) != len(self.class_names):
            raise DataError("class names must be unique")
        if list(self.class_names) != sorted(self.class_names):
            raise DataError("class names must be sorted")
        paths = [s.path for s in self.samples]
        if len(set(paths)) != len(paths):
            raise DataError("duplicate sample paths")
        for s in self.samples:
            if not 0 <= s.label < len(self.class_names):
                raise DataError(f"label {s.label} out of range for {s.path}")

    def __len__(self):
        return len(self.samples)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def relpath(self, index: int) -> str:
        path = self.samples[index].path
        try:
            return path.relative_to(self.root).as_posix()
        except ValueError:
            return path.as_posix()


def _is_decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            w, h = im.size
        return w > 0 and h > 0
    except (UnidentifiedImageError, OSError):
        return False


def scan_dataset(root) -> Dataset:
    """Index ``root/<class>/<image>`` into a :class:`Dataset`.

    Files that are not decodable images are skipped and counted in
    ``Dataset.skipped``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data root {root} does not exist")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if len(class_dirs) < 2:
        raise DataError(f"need at least 2 class folders under {root}, found {len(class_dirs)}")
    samples = []
    skipped = 0
    for label, d in enumerate(class_dirs):
        found = 0
        for f in sorted(p for p in d.iterdir() if p.is_file()):
            if f.suffix.lower() in IMAGE_EXTENSIONS and _is_decodable(f):
                samples.append(Sample(f, label))
                found += 1
            else:
                skipped += 1
        if not found:
            raise DataError(f"class folder {d.name} has no decodable images")
    if skipped:
        logger.warning("skipped %d non-image files under %s", skipped, root)
    return Dataset(root, [d.name for d in class_dirs], samples, skipped)


# -- splitting ---------------------------------------------------------------

@dataclass
class SplitManifest:
    seed: int
    ratio: float
    class_names: list
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def side(self, name: str) -> list:
        if name not in ("train", "test"):
            raise ValueError(f"unknown split side {name!r}")
        return getattr(self, name)


def stratified_partition(labels, ids, ratio, seed, num_classes, strict=True):
    """Split ``ids`` per class into floor(ratio * n_c) first-side ids and the rest.

    Each class is shuffled by ``default_rng([seed, class_id])``. Both returned
    lists are sorted.
    """
    labels = np.asarray(labels)
    ids = np.asarray(ids, dtype=np.int64)
    first, second = [], []
    for c in range(num_classes):
        members = ids[labels[ids] == c] if ids.size else ids
        rng = np.random.default_rng([seed, c])
        members = members[rng.permutation(members.size)]
        k = math.floor(ratio * members.size)
        if strict and (k == 0 or k == members.size):
            raise DataError(f"class {c} with {members.size} samples leaves one split side empty")
        first.extend(members[:k].tolist())
        second.extend(members[k:].tolist())
    return sorted(first), sorted(second)


def split(dataset: Dataset, ratio=0.8, seed=0) -> SplitManifest:
    """Deterministic stratified train/test split."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    train, test = stratified_partition(dataset.labels, np.arange(len(dataset)), ratio, seed,
                                       dataset.num_classes)
    return SplitManifest(seed, ratio, list(dataset.class_names), train, test)


def manifest_to_dict(manifest: SplitManifest, dataset: Dataset) -> dict:
    return {
        "seed": manifest.seed,
        "ratio": manifest.ratio,
        "root": str(dataset.root),
        "class_names": list(manifest.class_names),
        "train": [dataset.relpath(i) for i in manifest.train],
        "test": [dataset.relpath(i) for i in manifest.test],
    }


def manifest_from_dict(d: dict, root=None):
    """Rebuild ``(Dataset, SplitManifest)`` from a manifest mapping.

    A sample's class is the first path component of its relative path.
    """
    try:
        root = Path(root if root is not None else d["root"])
        class_names = list(d["class_names"])
        index = {name: i for i, name in enumerate(class_names)}
        samples, sides = [], {}
        for side in ("train", "test"):
            ids = []
            for rel in d[side]:
                cls = rel.split("/", 1)[0]
                if cls not in index:
                    raise DataError(f"manifest path {rel!r} is not under a known class folder")
                ids.append(len(samples))
                samples.append(Sample(root / rel, index[cls]))
            sides[side] = ids
        manifest = SplitManifest(int(d["seed"]), float(d["ratio"]), class_names,
                                 sides["train"], sides["test"])
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise DataError(f"malformed manifest: {e}") from e
    return Dataset(root, class_names, samples), manifest


def save_manifest(manifest: SplitManifest, dataset: Dataset, path):
    Path(path).write_text(json.dumps(manifest_to_dict(manifest, dataset), indent=2))


def load_manifest(path, root=None):
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    return manifest_from_dict(d, root)


# -- images ------------------------------------------------------------------

def decode_image(path) -> np.ndarray:
    """Decode to uint8, shape H x W (grayscale) or H x W x 3 (colour)."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "1", "I", "I;16", "I;16B", "F", "LA"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from e
    if arr.size == 0:
        raise DataError(f"image {path} has a zero dimension")
    return arr


def to_channels(arr: np.ndarray, channels: int) -> np.ndarray:
    """Return ``arr`` (H x W or H x W x 3) as a C x H x W float64 array."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    if arr.shape[0] == channels:
        return arr
    if channels == 3 and arr.shape[0] == 1:
        return np.repeat(arr, 3, axis=0)
    if channels == 1 and arr.shape[0] == 3:
        return np.tensordot(LUMA_WEIGHTS, arr, axes=1)[None]
    raise ValueError(f"cannot adapt {arr.shape[0]} channels to {channels}")


def _bilinear_axis(n_in, n_out):
    # half-pixel centres, edge clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize(img: np.ndarray, height: int, width: int, method="bilinear") -> np.ndarray:
    """Resize a C x H x W array."""
    if height < 1 or width < 1:
        raise ValueError("target size must be positive")
    c, h, w = img.shape
    if method == "nearest":
        rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.int64), h - 1)
        cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(np.int64), w - 1)
        return img[:, rows][:, :, cols]
    if method != "bilinear":
        raise ValueError(f"unknown resize method {method!r}")
    y0, y1, fy = _bilinear_axis(h, height)
    x0, x1, fx = _bilinear_axis(w, width)
    rows = img[:, y0] * (1 - fy)[None, :, None] + img[:, y1] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx


def load_image(path, target, method="bilinear", dtype=np.float32) -> np.ndarray:
    """Decode, channel-adapt, resize to ``target`` = (C, H, W) and scale to [0, 1]."""
    c, h, w = target
    img = to_channels(decode_image(path), c)
    if img.shape[1:] != (h, w):
        img = resize(img, h, w, method)
    return (img / 255.0).astype(dtype)


# -- augmentation ------------------------------------------------------------

@dataclass
class AugmentConfig:
    """Label-preserving train-time transforms.

    ``crop_size`` None keeps the full image; ``flip_prob`` 0 and ``jitter`` 0
    disable the flip and the per-channel intensity factor respectively.
    """

    crop_size: int | None = None
    flip_prob: float = 0.5
    jitter: float = 0.1
    enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.jitter < 0:
            raise ValueError("jitter amplitude must be >= 0")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip probability must lie in [0, 1]")
        if self.crop_size is not None and self.crop_size < 1:
            raise ValueError("crop size must be positive")


class AugmentParams(NamedTuple):
    top: int
    left: int
    flip: bool
    gains: np.ndarray


def augment_params(config: AugmentConfig, shape, sample_index: int, epoch: int = 0) -> AugmentParams:
    """Draw the transform for one sample; a pure function of (seed, index, epoch)."""
    c, h, w = shape
    crop = config.crop_size or min(h, w)
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than image {h}x{w}")
    rng = np.random.default_rng([config.seed, sample_index, epoch])
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    flip = bool(rng.random() < config.flip_prob)
    gains = rng.uniform(1 - config.jitter, 1 + config.jitter, size=c)
    if config.crop_size is None:
        top = left = 0
    return AugmentParams(top, left, flip, gains)


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    _, h, w = image.shape
    if size > h or size > w:
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    top, left = (h - size) // 2, (w - size) // 2
    return image[:, top:top + size, left:left + size]


def apply_augment(image: np.ndarray, params: AugmentParams, crop_size=None) -> np.ndarray:
    _, h, w = image.shape
    ch = crop_size or h
    cw = crop_size or w
    out = image[:, params.top:params.top + ch, params.left:params.left + cw]
    if params.flip:
        out = out[..., ::-1]
    out = out * params.gains.astype(image.dtype)[:, None, None]
    return np.clip(out, 0, 1).astype(image.dtype)


def augment(image, label, config: AugmentConfig, sample_index: int, epoch: int = 0):
    """Random crop, horizontal flip and per-channel intensity jitter.

    Returns ``(image, label)``; the label is passed through unchanged.
    """
    image = np.asarray(image)
    if not config.enabled:
        return image, label
    crop = config.crop_size
    if crop is not None and (crop > image.shape[1] or crop > image.shape[2]):
        raise ValueError(f"crop {crop} larger than image {image.shape[1:]}")
    params = augment_params(config, image.shape, sample_index, epoch)
    return apply_augment(image, params, crop), label


# -- batching ----------------------------------------------------------------

class ImageLoader:
    """Load dataset samples as model-ready C x H x W arrays.

    Images are resized to ``size``; with a ``crop`` they are then randomly
    augmented (``train``) or centre-cropped (eval). ``cache`` keeps the
    resized, un-augmented images in memory.
    """

    def __init__(self, dataset: Dataset, channels: int, size: int, crop=None,
                 augment_config: AugmentConfig | None = None, train=False, cache=False,
                 dtype=np.float32):
        self.dataset = dataset
        self.channels = channels
        self.size = size
        self.crop = crop
        self.augment_config = augment_config
        self.train = train
        self.dtype = dtype
        self._cache = {} if cache else None

    @property
    def output_size(self):
        return self.crop or self.size

    def base(self, index: int) -> np.ndarray:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        img = load_image(self.dataset.samples[index].path, (self.channels, self.size, self.size),
                         dtype=self.dtype)
        if self._cache is not None:
            self._cache[index] = img
        return img

    def __call__(self, index: int, epoch: int = 0) -> np.ndarray:
        img = self.base(index)
        cfg = self.augment_config
        if self.train and cfg is not None and cfg.enabled:
            img, _ = augment(img, None, cfg, index, epoch)
            if cfg.crop_size is None and self.crop:
                img = center_crop(img, self.crop)
            return img
        if self.crop:
            return center_crop(img, self.crop)
        return img


def batch_order(ids, epoch=0, seed=0, shuffle=True):
    ids = np.asarray(ids, dtype=np.int64)
    if not shuffle:
        return ids
    rng = np.random.default_rng([seed, epoch])
    return ids[rng.permutation(ids.size)]


def batch_iter(dataset: Dataset, ids, batch_size=64, epoch=0, seed=0, shuffle=True, loader=None):
    """Yield ``(images N x C x H x W, labels, ids)`` covering ``ids`` once.

    The order is a deterministic shuffle from ``(seed, epoch)``; the final
    batch may be smaller than ``batch_size``. Without a ``loader`` the images
    element is None (index-only iteration).
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if len(ids) == 0:
        raise DataError("cannot iterate an empty split side")
    order = batch_order(ids, epoch, seed, shuffle)
    labels = dataset.labels
    workers = worker_count()
    pool = ThreadPoolExecutor(workers) if loader is not None and workers > 1 else None
    try:
        for start in range(0, order.size, batch_size):
            chunk = order[start:start + batch_size]
            images = None
            if loader is not None:
                if pool is not None:
                    imgs = list(pool.map(lambda i: loader(int(i), epoch), chunk))
                else:
                    imgs = [loader(int(i), epoch) for i in chunk]
                images = np.stack(imgs)
            yield images, labels[chunk], chunk
    finally:
        if pool is not None:
            pool.shutdown()
