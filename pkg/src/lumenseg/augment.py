"""Geometric augmentation: right-angle rotations, flips, and small zooms.

Every transform is applied jointly to the image (or all three triplet
frames) and the mask. Zoom resamples nearest-neighbour by a factor drawn
uniformly from [0.98, 1.02] and restores the original extents by center
cropping (zoom in) or padding (zoom out; edge values for images, background
for masks). Factor 1.0 is the identity, bit-exact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

ZOOM_RANGE = (0.98, 1.02)
TRANSFORM_NAMES = ("rot90", "rot180", "rot270", "hflip", "vflip", "zoom")


@dataclass
class Augmented:
    name: str
    image: np.ndarray  # frame (p,q,3) or triplet (3,p,q,3)
    mask: np.ndarray
    zoom: float = 1.0


def _spatial_axes(image):
    if image.ndim == 2:  # mask (p, q)
        return (0, 1)
    if image.ndim == 3:  # frame (p, q, c)
        return (0, 1)
    if image.ndim == 4:  # triplet (r, p, q, c)
        return (1, 2)
    raise ConfigError(f"expected a mask, frame, or triplet, got shape {image.shape}")


def rotate90(image, k):
    return np.rot90(image, k=k, axes=_spatial_axes(image))


def flip_horizontal(image):
    return np.flip(image, axis=_spatial_axes(image)[1])


def flip_vertical(image):
    return np.flip(image, axis=_spatial_axes(image)[0])


def _resample_axis(n, m):
    """Nearest-neighbour source index for each of m output positions."""
    return np.minimum((np.arange(m) + 0.5) * n / m, n - 1).astype(np.intp)


def zoom(image, factor, pad_mode="edge"):
    """Rescale the spatial extents by ``factor`` and restore the original
    size (center crop or pad)."""
    ax_p, ax_q = _spatial_axes(image)
    p, q = image.shape[ax_p], image.shape[ax_q]
    mp, mq = int(round(p * factor)), int(round(q * factor))
    if (mp, mq) == (p, q):
        return image.copy()
    out = np.take(image, _resample_axis(p, mp), axis=ax_p)
    out = np.take(out, _resample_axis(q, mq), axis=ax_q)
    for axis, n, m in ((ax_p, p, mp), (ax_q, q, mq)):
        if m > n:
            start = (m - n) // 2
            out = np.take(out, np.arange(start, start + n), axis=axis)
        elif m < n:
            before = (n - m) // 2
            widths = [(0, 0)] * out.ndim
            widths[axis] = (before, n - m - before)
            out = np.pad(out, widths, mode=pad_mode)
    return out


def _apply(name, image, mask, factor):
    if name == "rot90":
        return rotate90(image, 1), np.rot90(mask, 1)
    if name == "rot180":
        return rotate90(image, 2), np.rot90(mask, 2)
    if name == "rot270":
        return rotate90(image, 3), np.rot90(mask, 3)
    if name == "hflip":
        return flip_horizontal(image), np.flip(mask, axis=1)
    if name == "vflip":
        return flip_vertical(image), np.flip(mask, axis=0)
    if name == "zoom":
        return (
            zoom(image, factor, pad_mode="edge"),
            zoom(mask, factor, pad_mode="constant"),
        )
    raise ConfigError(f"unknown transform {name!r}")


def augment(image, mask, rng=None, zoom_factor=None):
    """The six augmented copies of one frame or triplet.

    The zoom factor is drawn once (from ``rng``) unless given explicitly;
    it is recorded on the returned sample for reproducibility.
    """
    p, q = image.shape[_spatial_axes(image)[0]], image.shape[_spatial_axes(image)[1]]
    if mask.shape != (p, q):
        raise ConfigError(f"mask shape {mask.shape} does not match image spatial {p}x{q}")
    if zoom_factor is None:
        if rng is None:
            rng = np.random.default_rng(0)
        zoom_factor = float(rng.uniform(*ZOOM_RANGE))
    out = []
    for name in TRANSFORM_NAMES:
        factor = zoom_factor if name == "zoom" else 1.0
        img2, mask2 = _apply(name, image, mask, factor)
        out.append(Augmented(name, np.ascontiguousarray(img2), np.ascontiguousarray(mask2), factor))
    return out
