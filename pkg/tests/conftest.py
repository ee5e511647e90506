"""Shared fixtures: procedural corpora, fixture detector sidecars."""
from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from profilescan import ingest
from profilescan.facegate import FaceGeometry, write_face_sidecar


def blob_image(index: int, size: int = 256) -> np.ndarray:
    """Smooth radial pattern; the 'real' class of the procedural corpus."""
    rng = np.random.default_rng(index)
    yy, xx = np.mgrid[0:size, 0:size] / size
    cx, cy = rng.uniform(0.3, 0.7, 2)
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    channels = [
        (np.cos(dist * 6 + rng.uniform(0, 3)) * 0.5 + 0.5) * c
        for c in rng.uniform(0.4, 1.0, 3)
    ]
    return (np.stack(channels, axis=-1) * 255).astype(np.uint8)


def stripe_image(index: int, size: int = 256) -> np.ndarray:
    """Oriented sinusoid plus noise; the 'fake' class."""
    rng = np.random.default_rng(100_000 + index)
    yy, xx = np.mgrid[0:size, 0:size] / size
    freq = rng.uniform(15, 30)
    angle = rng.uniform(0, np.pi)
    phase = xx * np.cos(angle) + yy * np.sin(angle)
    channels = [
        (np.sin(phase * freq) * 0.5 + 0.5) * c for c in rng.uniform(0.4, 1.0, 3)
    ]
    img = np.stack(channels, axis=-1) + rng.normal(0, 0.05, (size, size, 3))
    return (np.clip(img, 0, 1) * 255).astype(np.uint8)


def random_geometry(rng: np.random.Generator, eye_dist: float | None = None) -> FaceGeometry:
    """Valid random face geometry; optionally pin the eye distance."""
    cx = rng.uniform(0.35, 0.65)
    cy = rng.uniform(0.35, 0.55)
    d = eye_dist if eye_dist is not None else rng.uniform(0.05, 0.3)
    half = d / 2
    lm = {
        "left_eye": (cx - half, cy),
        "right_eye": (cx + half, cy),
        "left_ear": (max(0.0, cx - d), cy + 0.02),
        "right_ear": (min(1.0, cx + d), cy + 0.02),
        "nose": (cx, cy + d / 2),
        "mouth": (cx, min(1.0, cy + d)),
    }
    w = min(2.5 * d, 0.9)
    x = min(max(0.0, cx - w / 2), 1.0 - w)
    y = min(max(0.0, cy - w / 2), 1.0 - w)
    return FaceGeometry(
        bbox=(x, y, w, min(w, 1.0 - y)),
        landmarks=lm,
        confidence=float(rng.uniform(0.5, 1.0)),
    )


def build_corpus(root, corpus_id, n_per_class, size=256, splits=None, quality=95):
    """Two-class procedural corpus (REAL blobs / FAKE stripes) on disk."""
    src_real = root / "src_real"
    src_fake = root / "src_fake"
    src_real.mkdir(parents=True)
    src_fake.mkdir(parents=True)
    for i in range(n_per_class):
        Image.fromarray(blob_image(i, size)).save(src_real / f"r{i:04d}.jpg", quality=quality)
        Image.fromarray(stripe_image(i, size)).save(src_fake / f"f{i:04d}.jpg", quality=quality)
    corpus_root = root / "corpus" / corpus_id
    manifest = ingest.CorpusManifest(corpus_id=corpus_id)
    manifest = ingest.import_corpus(src_real, ingest.DatasetRole.REAL, manifest, corpus_root)
    manifest = ingest.import_corpus(src_fake, ingest.DatasetRole.FAKE, manifest, corpus_root)
    if splits:
        manifest = ingest.assign_splits(
            manifest,
            {ingest.DatasetRole.REAL: splits, ingest.DatasetRole.FAKE: splits},
            seed=11,
        )
    return manifest, corpus_root


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """The 400-image two-class corpus used by detector tests (built once)."""
    root = tmp_path_factory.mktemp("desk")
    manifest, corpus_root = build_corpus(
        root, "desk", n_per_class=200, size=256, splits=(140, 30, 30)
    )
    return manifest, corpus_root


def make_gated_image(path, rng, with_face: bool, eye_dist: float | None = None):
    """Tiny decodable JPEG plus a face sidecar (or none)."""
    arr = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    Image.fromarray(arr).save(path, quality=90)
    if with_face:
        geom = random_geometry(rng, eye_dist)
        write_face_sidecar(path, [geom])
        return geom
    return None
