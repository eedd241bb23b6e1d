import numpy as np
import pytest


def make_blob_samples(n, size=64, seed=7, triplets=False):
    """Toy segmentation set: dark ellipse on a bright textured background.

    Returns (image, mask) pairs, or (triplet, mask) pairs with small
    inter-frame motion when ``triplets`` is set.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    samples = []
    for _ in range(n):
        cx, cy = rng.uniform(size * 0.3, size * 0.7, 2)
        r1, r2 = rng.uniform(size * 0.12, size * 0.2, 2)

        def render(cx_, cy_):
            d = ((xx - cx_) / r1) ** 2 + ((yy - cy_) / r2) ** 2
            mask = (d <= 1).astype(np.uint8)
            base = 0.75 - 0.6 * np.clip(1 - d, 0, 1)
            img = np.stack([base * (1.0 - 0.1 * c) for c in range(3)], axis=-1)
            img += rng.normal(0, 0.02, img.shape)
            return np.clip(img, 0, 1).astype(np.float32), mask

        if triplets:
            frames = []
            offsets = (-1.0, 0.0, 1.0)
            for off in offsets:
                img, mask = render(cx + off, cy)
                frames.append(img)
            _, center_mask = render(cx, cy)
            samples.append((np.stack(frames), center_mask))
        else:
            img, mask = render(cx, cy)
            samples.append((img, mask))
    return samples


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small synthetic dataset on disk, shared across tests."""
    from lumenseg.dataset import build_synthetic_dataset, load_manifest

    root = tmp_path_factory.mktemp("tinyds")
    manifest_path = build_synthetic_dataset(
        str(root), seed=11, size=32, frames_per_video=5, artifact_profile="light"
    )
    return load_manifest(manifest_path)
