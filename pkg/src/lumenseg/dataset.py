"""Dataset layout, manifests, and triplet assembly.

The synthetic dataset mirrors the clinical collection's shape: 11 videos
across 6 patients, with patient p5 (video v07) held out for testing. A
manifest is a UTF-8 JSON file::

    {"patients": [{"id", "videos": [{"id", "frames": [{"image", "mask", "index"}]}]}],
     "split": {"train": [...], "test": [...]}}

Paths are relative to the manifest's directory. Frames are binary PPM,
masks binary PGM.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import pnm
from .augment import ZOOM_RANGE, augment
from .errors import ConfigError, DataError
from .synth import generate_synthetic_video

# (patient, videos) rows shaping the default synthetic collection
DEFAULT_LAYOUT = (
    ("p1", ("v01", "v02")),
    ("p2", ("v03", "v04")),
    ("p3", ("v05",)),
    ("p4", ("v06",)),
    ("p5", ("v07",)),
    ("p6", ("v08", "v09", "v10", "v11")),
)
DEFAULT_TEST_PATIENTS = ("p5",)


@dataclass
class FrameRecord:
    patient_id: str
    video_id: str
    index: int
    image_path: str
    mask_path: str

    def load(self):
        return pnm.read_image(self.image_path), pnm.read_mask(self.mask_path)


class Manifest:
    def __init__(self, data, root):
        self.data = data
        self.root = root

    @property
    def split(self):
        return self.data["split"]

    def patients(self, which=None):
        ids = None if which is None else set(self.split[which])
        for patient in self.data["patients"]:
            if ids is None or patient["id"] in ids:
                yield patient

    def frames(self, which=None):
        """FrameRecords for a split (or all), in manifest order."""
        for patient in self.patients(which):
            for video in patient["videos"]:
                for frame in video["frames"]:
                    yield FrameRecord(
                        patient["id"],
                        video["id"],
                        frame["index"],
                        os.path.join(self.root, frame["image"]),
                        os.path.join(self.root, frame["mask"]),
                    )

    def videos(self, which=None):
        for patient in self.patients(which):
            for video in patient["videos"]:
                yield patient["id"], video


def load_manifest(path):
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid manifest JSON: {exc}") from None
    for key in ("patients", "split"):
        if key not in data:
            raise DataError(f"{path}: manifest missing {key!r}")
    manifest = Manifest(data, os.path.dirname(os.path.abspath(path)))
    split_ids = set(data["split"].get("train", [])) | set(data["split"].get("test", []))
    patient_ids = {p["id"] for p in data["patients"]}
    unknown = split_ids - patient_ids
    if unknown:
        raise DataError(f"{path}: split names unknown patients {sorted(unknown)}")
    overlap = set(data["split"].get("train", [])) & set(data["split"].get("test", []))
    if overlap:
        raise DataError(f"{path}: patients in both splits: {sorted(overlap)}")
    for patient in data["patients"]:
        for video in patient["videos"]:
            indices = [f["index"] for f in video["frames"]]
            if indices != list(range(len(indices))):
                raise DataError(
                    f"{path}: video {video['id']} frame indices not contiguous from 0"
                )
    for record in manifest.frames():
        for p in (record.image_path, record.mask_path):
            if not os.path.exists(p):
                raise DataError(f"{path}: referenced file missing: {p}")
    return manifest


def make_triplets(n_frames):
    """Triplet index tuples (t-1, t, t+1), one per frame; boundary frames
    replicate the edge frame."""
    if n_frames < 1:
        raise DataError("cannot build triplets from an empty video")
    return [
        (max(t - 1, 0), t, min(t + 1, n_frames - 1)) for t in range(n_frames)
    ]


def load_video(manifest, patient_id, video):
    images = []
    masks = []
    for frame in video["frames"]:
        img = pnm.read_image(os.path.join(manifest.root, frame["image"]))
        mask = pnm.read_mask(os.path.join(manifest.root, frame["mask"]))
        images.append(img)
        masks.append(mask)
    return np.stack(images), np.stack(masks)


def frame_samples(manifest, which):
    """(image, mask) pairs for the single-frame models, by patient."""
    by_patient = {}
    for patient_id, video in manifest.videos(which):
        images, masks = load_video(manifest, patient_id, video)
        for k in range(images.shape[0]):
            by_patient.setdefault(patient_id, []).append((images[k], masks[k]))
    return by_patient


def triplet_samples(manifest, which):
    """(triplet, center mask) pairs for the temporal models, by patient.

    Triplets never cross a video boundary.
    """
    by_patient = {}
    for patient_id, video in manifest.videos(which):
        images, masks = load_video(manifest, patient_id, video)
        for a, b, c in make_triplets(images.shape[0]):
            triplet = np.stack([images[a], images[b], images[c]])
            by_patient.setdefault(patient_id, []).append((triplet, masks[b]))
    return by_patient


def flatten_samples(by_patient, patients=None):
    ids = sorted(by_patient) if patients is None else patients
    return [s for pid in ids for s in by_patient.get(pid, [])]


def build_synthetic_dataset(
    root,
    seed=0,
    size=64,
    frames_per_video=None,
    artifact_profile="light",
    layout=DEFAULT_LAYOUT,
    test_patients=DEFAULT_TEST_PATIENTS,
    augmented=False,
    force=False,
):
    """Generate the full synthetic collection and write its manifest.

    Returns the manifest path. Per-video frame counts default to 40-60
    (seeded); pass ``frames_per_video`` to fix them. With ``augmented``,
    every training video also gets its six augmented copies (whole-video
    transforms keep triplets consistent); drawn zoom factors are recorded
    in ``augmentations.json`` next to the manifest.
    """
    os.makedirs(root, exist_ok=True)
    manifest_path = os.path.join(root, "manifest.json")
    if os.listdir(root) and not force:
        raise ConfigError(f"output directory {root} is not empty (use --force)")
    seq = np.random.SeedSequence(seed)
    count_rng = np.random.default_rng(seq.spawn(1)[0])
    video_seeds = seq.spawn(sum(len(videos) for _, videos in layout))

    patients = []
    augment_log = {}
    vid_i = 0
    for patient_id, video_ids in layout:
        videos = []
        for video_id in video_ids:
            n = frames_per_video or int(count_rng.integers(40, 61))
            frames, masks = generate_synthetic_video(
                video_seeds[vid_i], n, (size, size), artifact_profile
            )
            vid_i += 1
            videos.append(_write_video(root, patient_id, video_id, frames, masks))
            if augmented and patient_id not in test_patients:
                aug_rng = np.random.default_rng(video_seeds[vid_i - 1].spawn(1)[0])
                zoom_factor = float(aug_rng.uniform(*ZOOM_RANGE))
                for aug_name, aug_frames, aug_masks in _augment_video(
                    frames, masks, zoom_factor
                ):
                    aug_id = f"{video_id}-{aug_name}"
                    videos.append(
                        _write_video(root, patient_id, aug_id, aug_frames, aug_masks)
                    )
                    augment_log[aug_id] = {
                        "source": video_id,
                        "transform": aug_name,
                        "zoom": zoom_factor if aug_name == "zoom" else 1.0,
                    }
        patients.append({"id": patient_id, "videos": videos})

    data = {
        "patients": patients,
        "split": {
            "train": [pid for pid, _ in layout if pid not in test_patients],
            "test": list(test_patients),
        },
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if augment_log:
        with open(os.path.join(root, "augmentations.json"), "w", encoding="utf-8") as fh:
            json.dump(augment_log, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return manifest_path


def _augment_video(frames, masks, zoom_factor):
    """Apply each transform to the whole video with shared parameters."""
    n = frames.shape[0]
    variants = {}
    for t in range(n):
        for aug in augment(frames[t], masks[t], zoom_factor=zoom_factor):
            variants.setdefault(aug.name, ([], []))
            variants[aug.name][0].append(aug.image)
            variants[aug.name][1].append(aug.mask)
    for name, (imgs, msks) in variants.items():
        yield name, np.stack(imgs), np.stack(msks)


def _write_video(root, patient_id, video_id, frames, masks):
    video_dir = os.path.join(root, patient_id, video_id)
    os.makedirs(video_dir, exist_ok=True)
    records = []
    for t in range(frames.shape[0]):
        image_rel = os.path.join(patient_id, video_id, f"frame_{t:04d}.ppm")
        mask_rel = os.path.join(patient_id, video_id, f"mask_{t:04d}.pgm")
        pnm.write_image(os.path.join(root, image_rel), frames[t])
        pnm.write_mask(os.path.join(root, mask_rel), masks[t])
        records.append({"image": image_rel, "mask": mask_rel, "index": t})
    return {"id": video_id, "frames": records}
