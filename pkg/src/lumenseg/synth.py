"""Synthetic ureteroscopy-like video with exact ground-truth lumen masks.

Each video renders a tube interior: a dark elliptical lumen following a
smooth random walk (position, radii, orientation) over a textured, radially
illuminated wall with drifting hue. The mask is the rendered ellipse, exact
by construction. Artifact profiles inject specular highlights, floating
debris, a large occluding blob, blur, and sensor noise; with artifacts off
the lumen interior stays strictly darker than any wall pixel, so the mask
is recoverable from the image by thresholding the channel mean at
``LUMEN_WALL_THRESHOLD``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# channel tints; wall stays brighter than lumen in the artifact-free profile
_LUMEN_TINT = np.array([0.9, 0.8, 0.8], dtype=np.float32)
_WALL_TINT = np.array([1.0, 0.55, 0.5], dtype=np.float32)

LUMEN_WALL_THRESHOLD = 0.165


@dataclass(frozen=True)
class ArtifactProfile:
    name: str
    specular: int = 0  # concurrent highlight count
    debris: int = 0  # concurrent speck count
    occlusion: bool = False
    blur_prob: float = 0.0
    noise_sigma: float = 0.0


PROFILES = {
    "none": ArtifactProfile("none"),
    "light": ArtifactProfile("light", specular=2, debris=3, noise_sigma=0.01),
    "full": ArtifactProfile(
        "full", specular=4, debris=6, occlusion=True, blur_prob=0.15, noise_sigma=0.03
    ),
}


def _clip_step(rng, scale, limit):
    return np.clip(rng.normal(0.0, scale), -limit, limit)


class _LumenWalk:
    """Smooth random walk of the ellipse parameters, kept inside margins."""

    def __init__(self, rng, p, q):
        self.p, self.q = p, q
        self.cx = rng.uniform(0.40, 0.60) * q
        self.cy = rng.uniform(0.40, 0.60) * p
        self.rx = rng.uniform(0.12, 0.16) * q
        self.ry = rng.uniform(0.12, 0.16) * p
        self.angle = rng.uniform(0.0, np.pi)

    def advance(self, rng):
        q, p = self.q, self.p
        # per-axis displacement clipped to 2.5% keeps the centroid path
        # well under 5% of the width per frame
        self.cx = np.clip(self.cx + _clip_step(rng, 0.010 * q, 0.025 * q), 0.30 * q, 0.70 * q)
        self.cy = np.clip(self.cy + _clip_step(rng, 0.010 * p, 0.025 * p), 0.30 * p, 0.70 * p)
        self.rx = np.clip(self.rx + _clip_step(rng, 0.004 * q, 0.010 * q), 0.11 * q, 0.18 * q)
        self.ry = np.clip(self.ry + _clip_step(rng, 0.004 * p, 0.010 * p), 0.11 * p, 0.18 * p)
        self.angle += rng.normal(0.0, 0.05)

    def radius_field(self, xx, yy):
        """Normalized elliptical radius (1.0 on the lumen boundary)."""
        dx = xx - self.cx
        dy = yy - self.cy
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = (dx * c + dy * s) / self.rx
        v = (-dx * s + dy * c) / self.ry
        return np.sqrt(u * u + v * v)


def _box_blur3(img):
    out = img.copy()
    out[1:-1] = (img[:-2] + img[1:-1] + img[2:]) / 3.0
    out2 = out.copy()
    out2[:, 1:-1] = (out[:, :-2] + out[:, 1:-1] + out[:, 2:]) / 3.0
    return out2


def generate_synthetic_video(seed, n_frames, size=(64, 64), artifact_profile="none"):
    """Render one video; returns (frames float32 (n,p,q,3), masks uint8 (n,p,q))."""
    if n_frames < 3:
        raise ConfigError(f"videos need at least 3 frames, got {n_frames}")
    p, q = (size, size) if np.isscalar(size) else tuple(size)
    if p < 16 or q < 16:
        raise ConfigError(f"frame size must be at least 16x16, got {p}x{q}")
    if isinstance(artifact_profile, str):
        if artifact_profile not in PROFILES:
            raise ConfigError(
                f"unknown artifact profile {artifact_profile!r}; choose from {sorted(PROFILES)}"
            )
        profile = PROFILES[artifact_profile]
    else:
        profile = artifact_profile

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:p, 0:q].astype(np.float32)
    walk = _LumenWalk(rng, p, q)

    # fixed per-video wall texture (slowly drifting smooth sinusoids)
    tex_freq = rng.uniform(0.05, 0.15, size=(3, 2)).astype(np.float32)
    tex_phase = rng.uniform(0.0, 2 * np.pi, size=3).astype(np.float32)
    hue_phase = rng.uniform(0.0, 2 * np.pi, size=2)

    speculars = [_new_spot(rng, p, q) for _ in range(profile.specular)]
    debris = [_new_speck(rng, p, q) for _ in range(profile.debris)]
    occluder = _new_occluder(rng, p, q) if profile.occlusion else None

    frames = np.empty((n_frames, p, q, 3), dtype=np.float32)
    masks = np.empty((n_frames, p, q), dtype=np.uint8)
    for t in range(n_frames):
        rho = walk.radius_field(xx, yy)
        mask = rho <= 1.0
        masks[t] = mask.astype(np.uint8)

        lumen_val = 0.02 + 0.14 * np.minimum(rho, 1.0)
        texture = np.ones((p, q), dtype=np.float32)
        for k in range(3):
            texture += 0.016 * np.sin(
                tex_freq[k, 0] * xx + tex_freq[k, 1] * yy + tex_phase[k] + 0.1 * t
            )
        wall_val = (0.30 + 0.55 * np.exp(-0.5 * np.maximum(rho - 1.0, 0.0))) * texture

        hue = np.array(
            [
                1.0,
                0.55 + 0.06 * np.sin(hue_phase[0] + 0.12 * t),
                0.50 + 0.06 * np.sin(hue_phase[1] + 0.10 * t),
            ],
            dtype=np.float32,
        )
        img = np.where(
            mask[..., None],
            lumen_val[..., None] * _LUMEN_TINT,
            wall_val[..., None] * hue,
        ).astype(np.float32)

        if profile.specular:
            for spot in speculars:
                img = _apply_spot(img, spot, xx, yy)
                _advance_spot(spot, rng, p, q, walk)
        if profile.debris:
            for speck in debris:
                img = _apply_speck(img, speck, xx, yy)
                _advance_speck(speck, rng, p, q)
        if occluder is not None:
            img = _apply_occluder(img, occluder, xx, yy)
            _advance_occluder(occluder, rng, p, q)
        if profile.blur_prob and rng.random() < profile.blur_prob:
            img = _box_blur3(img)
        if profile.noise_sigma:
            img = img + rng.normal(0.0, profile.noise_sigma, img.shape).astype(np.float32)

        frames[t] = np.clip(img, 0.0, 1.0)
        walk.advance(rng)
    return frames, masks


# --- artifact elements -----------------------------------------------------


def _new_spot(rng, p, q):
    return {
        "x": rng.uniform(0.1, 0.9) * q,
        "y": rng.uniform(0.1, 0.9) * p,
        "r": rng.uniform(1.0, 2.5),
        "life": rng.integers(2, 8),
    }


def _apply_spot(img, spot, xx, yy):
    if spot["life"] <= 0:
        return img
    d2 = (xx - spot["x"]) ** 2 + (yy - spot["y"]) ** 2
    glow = np.exp(-d2 / (2.0 * spot["r"] ** 2)).astype(np.float32)
    return img + 0.8 * glow[..., None]


def _advance_spot(spot, rng, p, q, walk):
    spot["life"] -= 1
    if spot["life"] <= 0 and rng.random() < 0.4:
        # respawn on the wall, away from the lumen center
        for _ in range(10):
            x = rng.uniform(0.1, 0.9) * q
            y = rng.uniform(0.1, 0.9) * p
            if np.hypot(x - walk.cx, y - walk.cy) > 1.3 * max(walk.rx, walk.ry):
                break
        spot.update(x=x, y=y, r=rng.uniform(1.0, 2.5), life=int(rng.integers(2, 8)))


def _new_speck(rng, p, q):
    return {
        "x": rng.uniform(0, q),
        "y": rng.uniform(0, p),
        "vx": rng.normal(0, 0.8),
        "vy": rng.normal(0, 0.8),
        "r": rng.uniform(0.6, 1.6),
        "tone": rng.choice([-0.25, 0.35]),
    }


def _apply_speck(img, speck, xx, yy):
    d2 = (xx - speck["x"]) ** 2 + (yy - speck["y"]) ** 2
    blob = np.exp(-d2 / (2.0 * speck["r"] ** 2)).astype(np.float32)
    return img + speck["tone"] * blob[..., None]


def _advance_speck(speck, rng, p, q):
    speck["x"] = (speck["x"] + speck["vx"]) % q
    speck["y"] = (speck["y"] + speck["vy"]) % p
    speck["vx"] += rng.normal(0, 0.2)
    speck["vy"] += rng.normal(0, 0.2)


def _new_occluder(rng, p, q):
    return {
        "x": -0.2 * q if rng.random() < 0.5 else 1.2 * q,
        "y": rng.uniform(0.2, 0.8) * p,
        "vx": rng.uniform(0.5, 1.5) * (1 if rng.random() < 0.5 else -1),
        "r": rng.uniform(0.15, 0.25) * q,
    }


def _apply_occluder(img, occ, xx, yy):
    d2 = (xx - occ["x"]) ** 2 + (yy - occ["y"]) ** 2
    alpha = 0.75 * np.exp(-d2 / (2.0 * occ["r"] ** 2)).astype(np.float32)
    blood = np.array([0.30, 0.05, 0.05], dtype=np.float32)
    return img * (1 - alpha[..., None]) + blood * alpha[..., None]


def _advance_occluder(occ, rng, p, q):
    occ["x"] += occ["vx"]
    occ["y"] += rng.normal(0, 0.5)
    if occ["x"] < -0.3 * q or occ["x"] > 1.3 * q:
        occ["vx"] = -occ["vx"]
