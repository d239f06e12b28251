"""Small generated corpora of geometric patterns, laid out like a CXR corpus."""
from pathlib import Path

import numpy as np
from PIL import Image

PATTERN_CLASSES = ("COVID", "Lung_Opacity", "Normal", "Viral Pneumonia")


def _pattern(kind: int, size: int, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    cy, cx = 0.5 + rng.uniform(-0.08, 0.08, 2)
    if kind == 0:  # disk
        img = ((yy - cy) ** 2 + (xx - cx) ** 2 < 0.09).astype(float)
    elif kind == 1:  # square ring
        d = np.maximum(abs(yy - cy), abs(xx - cx))
        img = ((d > 0.2) & (d < 0.32)).astype(float)
    elif kind == 2:  # horizontal stripes
        img = (np.sin(2 * np.pi * 4 * (yy + cy)) > 0).astype(float)
    else:  # diagonal cross
        img = ((abs(yy - xx - (cy - cx)) < 0.07) | (abs(yy + xx - cy - cx) < 0.07)).astype(float)
    img = 0.15 + 0.7 * img + rng.normal(0, 0.03, img.shape)
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def make_pattern_corpus(root, per_class=4, size=64, seed=0, class_names=PATTERN_CLASSES,
                        rgb=False):
    """Write ``per_class`` PNGs of a distinct pattern into one folder per class.

    Returns the root path.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    for kind, name in enumerate(class_names):
        folder = root / name
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            img = _pattern(kind % 4, size, rng)
            if rgb:
                img = np.repeat(img[..., None], 3, axis=2)
            Image.fromarray(img).save(folder / f"{name}-{i + 1}.png")
    return root
