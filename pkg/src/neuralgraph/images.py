"""Built-in synthetic grayscale images: three distinguishable shape families.

These back both the INR datasets (one network fitted per image) and the toy
classification task the mini zoo CNNs are trained on.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Rng

FAMILIES = ("bar", "disk", "checker")
# orientation-sensitive set for classification: telling the bars apart requires
# knowing which input coordinate is which
INR_FAMILIES = ("vbar", "hbar", "disk")


def bar_image(rng: Rng, size: int = 16) -> np.ndarray:
    if rng.uniform() < 0.5:
        return hbar_image(rng, size)
    return vbar_image(rng, size)


def vbar_image(rng: Rng, size: int = 16) -> np.ndarray:
    img = np.zeros((size, size))
    width = int(rng.integers(3, 5))
    pos = int(rng.integers(1, size - width - 1))
    img[:, pos : pos + width] = 1.0
    return img


def hbar_image(rng: Rng, size: int = 16) -> np.ndarray:
    img = np.zeros((size, size))
    width = int(rng.integers(3, 5))
    pos = int(rng.integers(1, size - width - 1))
    img[pos : pos + width, :] = 1.0
    return img


def disk_image(rng: Rng, size: int = 16) -> np.ndarray:
    r = rng.uniform(size * 0.22, size * 0.36)
    cx = size / 2 + rng.uniform(-1.0, 1.0)
    cy = size / 2 + rng.uniform(-1.0, 1.0)
    ys, xs = np.mgrid[0:size, 0:size]
    return ((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r).astype(np.float64)


def checker_image(rng: Rng, size: int = 16) -> np.ndarray:
    period = int(rng.integers(3, 6))
    phase = int(rng.integers(0, 2))
    ys, xs = np.mgrid[0:size, 0:size]
    return ((ys // period + xs // period + phase) % 2).astype(np.float64)


_MAKERS = {
    "bar": bar_image,
    "vbar": vbar_image,
    "hbar": hbar_image,
    "disk": disk_image,
    "checker": checker_image,
}


def family_image(family: str, rng: Rng, size: int = 16) -> np.ndarray:
    """One image of the given family, intensities in [0, 1] with mild noise."""
    try:
        base = _MAKERS[family](rng, size)
    except KeyError:
        raise ValueError(f"unknown image family {family!r}") from None
    noisy = base * 0.9 + 0.05 + rng.normal(scale=0.02, size=base.shape)
    return np.clip(noisy, 0.0, 1.0)


def labeled_image_batch(rng: Rng, count: int, size: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """(count, 1, size, size) images plus integer family labels, round-robin."""
    xs = np.zeros((count, 1, size, size))
    ys = np.zeros(count, dtype=np.int64)
    for i in range(count):
        fam = i % len(FAMILIES)
        xs[i, 0] = family_image(FAMILIES[fam], rng.derive(i), size)
        ys[i] = fam
    return xs, ys
