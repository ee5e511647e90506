"""Pre-filter gate: admit images with a detected face of sufficient size.

An image passes when a pluggable face detector finds at least one face and
the Euclidean distance between the primary face's normalized eye landmarks
is >= the threshold (default 0.1). The detector is an adapter so every
downstream component stays detector-independent; a fixture detector that
reads sidecar geometry files ships for tests and offline corpora.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

from PIL import Image, UnidentifiedImageError

LANDMARK_NAMES = ("left_eye", "right_eye", "left_ear", "right_ear", "nose", "mouth")


class ImageDecodeError(Exception):
    """Image bytes could not be decoded (distinct from 'no face found')."""


@dataclass(frozen=True)
class FaceGeometry:
    bbox: tuple[float, float, float, float]  # (x, y, w, h), normalized
    landmarks: dict[str, tuple[float, float]]
    confidence: float = 1.0

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w * h <= 0:
            raise ValueError("bbox area must be positive")
        for v in (x, y, w, h, self.confidence):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"normalized value out of [0,1]: {v}")
        missing = set(LANDMARK_NAMES) - set(self.landmarks)
        if missing:
            raise ValueError(f"missing landmarks: {sorted(missing)}")
        for name in LANDMARK_NAMES:
            lx, ly = self.landmarks[name]
            if not (0.0 <= lx <= 1.0 and 0.0 <= ly <= 1.0):
                raise ValueError(f"landmark {name} out of [0,1]: ({lx}, {ly})")

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]

    def as_vector(self) -> tuple[float, ...]:
        """The 12 landmark coordinates in the documented index order.

        Index order (1-based): left_eye x,y; right_eye x,y; left_ear x,y;
        right_ear x,y; nose x,y; mouth x,y.
        """
        out = []
        for name in LANDMARK_NAMES:
            out.extend(self.landmarks[name])
        return tuple(out)

    def to_json(self) -> dict:
        return {
            "bbox": list(self.bbox),
            "landmarks": {k: list(v) for k, v in self.landmarks.items()},
            "confidence": self.confidence,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FaceGeometry":
        return cls(
            bbox=tuple(d["bbox"]),
            landmarks={k: tuple(v) for k, v in d["landmarks"].items()},
            confidence=d.get("confidence", 1.0),
        )


class FaceDetectorAdapter(Protocol):
    def detect(self, image_path: Path) -> Sequence[FaceGeometry]:
        """All faces found in the image at `image_path`; order is arbitrary."""
        ...


class FixtureDetector:
    """Deterministic detector backed by sidecar `<image>.faces.json` files.

    The sidecar holds a JSON list of FaceGeometry objects. A missing
    sidecar means "no face"; a present-but-malformed one is an error.
    """

    def detect(self, image_path: Path) -> list[FaceGeometry]:
        sidecar = image_path.parent / (image_path.name + ".faces.json")
        if not sidecar.exists():
            return []
        return [FaceGeometry.from_json(d) for d in json.loads(sidecar.read_text())]


def write_face_sidecar(image_path: Path, faces: Sequence[FaceGeometry]) -> None:
    sidecar = image_path.parent / (image_path.name + ".faces.json")
    sidecar.write_text(json.dumps([f.to_json() for f in faces]))


class GateReason(str, Enum):
    NO_FACE = "NO_FACE"
    FACE_TOO_SMALL = "FACE_TOO_SMALL"
    PASS = "PASS"


@dataclass(frozen=True)
class GateDecision:
    passed: bool
    reason: GateReason
    geometry: Optional[FaceGeometry] = None
    eye_distance: Optional[float] = None


def select_primary_face(faces: Sequence[FaceGeometry]) -> Optional[FaceGeometry]:
    """Face with the largest bounding box; None for an empty sequence.

    Ties break toward higher confidence, then the lexicographically
    smallest bbox (x, y), making the choice permutation-invariant.
    """
    if not faces:
        return None
    return min(faces, key=lambda f: (-f.area, -f.confidence, f.bbox[0], f.bbox[1]))


def eye_distance(geometry: FaceGeometry) -> float:
    lx, ly = geometry.landmarks["left_eye"]
    rx, ry = geometry.landmarks["right_eye"]
    return math.hypot(lx - rx, ly - ry)


def decide(faces: Sequence[FaceGeometry], min_eye_distance: float = 0.1) -> GateDecision:
    """Gate decision from detector output alone (pure; no I/O)."""
    primary = select_primary_face(faces)
    if primary is None:
        return GateDecision(False, GateReason.NO_FACE)
    dist = eye_distance(primary)
    if dist >= min_eye_distance:
        return GateDecision(True, GateReason.PASS, primary, dist)
    return GateDecision(False, GateReason.FACE_TOO_SMALL, primary, dist)


def prefilter(
    image_path: Path,
    detector: FaceDetectorAdapter,
    min_eye_distance: float = 0.1,
) -> GateDecision:
    """Run the pre-filter on one image file.

    Raises ImageDecodeError for bytes that cannot be decoded, which is a
    different outcome than a decodable image with no face.
    """
    try:
        with Image.open(image_path) as img:
            img.verify()
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"{image_path}: {exc}") from exc
    return decide(detector.detect(image_path), min_eye_distance)


@dataclass
class GateReport:
    per_role: dict[str, Counter]
    decisions: dict[str, GateDecision]
    errors: dict[str, str]
    reduction_percent: float

    @property
    def total(self) -> int:
        return len(self.decisions) + len(self.errors)


def gate_corpus(manifest, detector: FaceDetectorAdapter, image_root: Path,
                min_eye_distance: float = 0.1) -> GateReport:
    """Gate every image in the manifest, collecting per-role statistics.

    Decode errors are logged per image and do not abort the run; they count
    as not-passed for the reduction percentage.
    """
    per_role: dict[str, Counter] = {}
    decisions: dict[str, GateDecision] = {}
    errors: dict[str, str] = {}
    passed = 0
    for record in manifest.records:
        counter = per_role.setdefault(record.role.value, Counter())
        try:
            decision = prefilter(image_root / record.path, detector, min_eye_distance)
        except ImageDecodeError as exc:
            errors[record.id] = str(exc)
            counter["ERROR"] += 1
            continue
        decisions[record.id] = decision
        counter[decision.reason.value] += 1
        if decision.passed:
            passed += 1
    total = len(manifest.records)
    reduction = 0.0 if total == 0 else 100.0 * (total - passed) / total
    return GateReport(per_role, decisions, errors, reduction)
