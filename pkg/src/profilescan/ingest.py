"""Corpus construction: imports, simulated platform processing, splits.

Images are stored content-addressed (sha256 of the stored bytes) under
``images/<first2>/<id>.<ext>`` so re-imports of identical bytes are no-ops
and every downstream artifact (gate decision, score, hash) can be keyed by
image id.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)


class DatasetRole(str, Enum):
    REAL = "REAL"
    FAKE = "FAKE"
    REAL_PROC = "REAL_PROC"
    FAKE_PROC = "FAKE_PROC"
    REAL_ZOOM = "REAL_ZOOM"
    FAKE_ZOOM = "FAKE_ZOOM"
    PROXY_REAL = "PROXY_REAL"
    WILD = "WILD"
    DOCUMENTED_FAKE = "DOCUMENTED_FAKE"

    @property
    def is_processed(self) -> bool:
        return self.name.endswith("_PROC") or self.name.endswith("_ZOOM")

    @property
    def is_zoom(self) -> bool:
        return self.name.endswith("_ZOOM")


# Where simulated platform processing sends each input role.
_PROCESSED_ROLE = {
    DatasetRole.REAL: (DatasetRole.REAL_PROC, DatasetRole.REAL_ZOOM),
    DatasetRole.REAL_PROC: (DatasetRole.REAL_PROC, DatasetRole.REAL_ZOOM),
    DatasetRole.REAL_ZOOM: (DatasetRole.REAL_PROC, DatasetRole.REAL_ZOOM),
    DatasetRole.FAKE: (DatasetRole.FAKE_PROC, DatasetRole.FAKE_ZOOM),
    DatasetRole.FAKE_PROC: (DatasetRole.FAKE_PROC, DatasetRole.FAKE_ZOOM),
    DatasetRole.FAKE_ZOOM: (DatasetRole.FAKE_PROC, DatasetRole.FAKE_ZOOM),
}


def processed_role(role: DatasetRole, zoomed: bool) -> DatasetRole:
    """Role of the output of platform processing for an input of `role`."""
    pair = _PROCESSED_ROLE.get(role)
    if pair is None:
        # Wild-side roles are platform-processed by definition; re-upload
        # keeps the role.
        return role
    return pair[1] if zoomed else pair[0]


class Split(str, Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"
    NONE = "NONE"


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    role: DatasetRole
    split: Split
    width: int
    height: int
    format: str  # "JPEG" or "PNG"
    source_note: str = ""
    source_id: Optional[str] = None

    def to_json(self) -> dict:
        d = {
            "id": self.id,
            "path": self.path,
            "role": self.role.value,
            "split": self.split.value,
            "width": self.width,
            "height": self.height,
            "format": self.format,
            "source_note": self.source_note,
            "source_id": self.source_id,
        }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ImageRecord":
        return cls(
            id=d["id"],
            path=d["path"],
            role=DatasetRole(d["role"]),
            split=Split(d["split"]),
            width=int(d["width"]),
            height=int(d["height"]),
            format=d["format"],
            source_note=d.get("source_note", ""),
            source_id=d.get("source_id"),
        )


@dataclass(frozen=True)
class ProcessingProfile:
    """Parameters of the simulated upload path (resize + recompress + zoom)."""

    target_size: int = 400
    interpolation: str = "bilinear"
    jpeg_quality: int = 85
    zoom_range: tuple[float, float] = (1.0, 1.6)
    offset_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.zoom_range[0] != 1.0:
            raise ValueError(
                f"zoom_range lower bound must be exactly 1.0, got {self.zoom_range[0]}"
            )
        if self.zoom_range[1] < 1.0:
            raise ValueError("zoom_range upper bound must be >= 1.0")
        if not (1 <= self.jpeg_quality <= 100):
            raise ValueError("jpeg_quality must be in 1..100")
        lo, hi = self.offset_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("offset_range must be within [0, 1]")

    def to_json(self) -> dict:
        return {
            "target_size": self.target_size,
            "interpolation": self.interpolation,
            "jpeg_quality": self.jpeg_quality,
            "zoom_range": list(self.zoom_range),
            "offset_range": list(self.offset_range),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProcessingProfile":
        return cls(
            target_size=d["target_size"],
            interpolation=d["interpolation"],
            jpeg_quality=d["jpeg_quality"],
            zoom_range=tuple(d["zoom_range"]),
            offset_range=tuple(d["offset_range"]),
        )


@dataclass
class CorpusManifest:
    corpus_id: str
    created_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )
    records: list[ImageRecord] = field(default_factory=list)
    profile: ProcessingProfile = field(default_factory=ProcessingProfile)
    seed: int = 0

    def __post_init__(self):
        self._index = {r.id: r for r in self.records}
        if len(self._index) != len(self.records):
            raise ValueError("duplicate record ids in manifest")

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def get(self, image_id: str) -> Optional[ImageRecord]:
        return self._index.get(image_id)

    def add(self, record: ImageRecord) -> bool:
        """Append a record; returns False (and skips) on a duplicate id."""
        if record.id in self._index:
            return False
        self.records.append(record)
        self._index[record.id] = record
        return True

    def by_role(self, *roles: DatasetRole) -> list[ImageRecord]:
        wanted = set(roles)
        return [r for r in self.records if r.role in wanted]

    def select(self, role: DatasetRole, split: Split) -> list[ImageRecord]:
        return [r for r in self.records if r.role == role and r.split == split]


class CorpusError(Exception):
    pass


class InsufficientRecordsError(CorpusError):
    def __init__(self, role: DatasetRole, needed: int, available: int):
        self.role, self.needed, self.available = role, needed, available
        super().__init__(
            f"role {role.value}: split spec needs {needed} records, "
            f"only {available} available (short by {needed - available})"
        )


def _decode(data: bytes) -> Image.Image:
    img = Image.open(io.BytesIO(data))
    img.load()
    return img


def _encode_jpeg(img: Image.Image, quality: int) -> bytes:
    buf = io.BytesIO()
    img.convert("RGB").save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def _content_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def image_relpath(image_id: str, fmt: str) -> str:
    ext = "jpg" if fmt == "JPEG" else "png"
    return f"images/{image_id[:2]}/{image_id}.{ext}"


def _store(image_root: Path, data: bytes, fmt: str) -> tuple[str, str]:
    """Write bytes content-addressed; returns (id, relative path)."""
    image_id = _content_id(data)
    rel = image_relpath(image_id, fmt)
    dest = image_root / rel
    if not dest.exists():
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(data)
    return image_id, rel


def import_corpus(
    directory: Path,
    role: DatasetRole,
    manifest: CorpusManifest,
    image_root: Path,
    on_warning: Optional[Callable[[Path, str], None]] = None,
) -> CorpusManifest:
    """Import every decodable JPEG/PNG under `directory` with the given role.

    PNG inputs destined for the REAL/FAKE labeled roles are re-encoded as
    JPEG at the corpus jpeg_quality so both labeled classes share one
    encoding; everything else is stored byte-for-byte. Undecodable files
    and duplicate ids produce warnings, never a failed import.
    """
    warn = on_warning or (lambda p, msg: log.warning("%s: %s", p, msg))
    for path in sorted(directory.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in (".jpg", ".jpeg", ".png"):
            continue
        data = path.read_bytes()
        try:
            img = _decode(data)
        except (UnidentifiedImageError, OSError) as exc:
            warn(path, f"undecodable: {exc}")
            continue
        fmt = img.format or ("PNG" if path.suffix.lower() == ".png" else "JPEG")
        if fmt not in ("JPEG", "PNG"):
            warn(path, f"unsupported format {fmt}")
            continue
        if fmt == "PNG" and role in (DatasetRole.REAL, DatasetRole.FAKE):
            data = _encode_jpeg(img, manifest.profile.jpeg_quality)
            img = _decode(data)
            fmt = "JPEG"
        image_id, rel = _store(image_root, data, fmt)
        record = ImageRecord(
            id=image_id,
            path=rel,
            role=role,
            split=Split.NONE,
            width=img.width,
            height=img.height,
            format=fmt,
            source_note=f"imported from {path.name}",
        )
        if not manifest.add(record):
            warn(path, f"duplicate content id {image_id[:12]}, skipped")
    return manifest


def simulate_platform_processing(
    record: ImageRecord,
    profile: ProcessingProfile,
    zoomed: bool,
    rng_seed: int,
    image_root: Path,
) -> ImageRecord:
    """Reproduce the browser upload path for one image.

    Optional zoom-crop (factor drawn from the profile's zoom_range, pan
    offsets drawn as fractions of the cropped-out margin), then bilinear
    resize to target_size x target_size, then JPEG at the profile quality.
    Pure function of its arguments: identical seeds give byte-identical
    outputs. A zoom factor of 1.0 with zero offsets is pixel-identical to
    the zoomed=False path.
    """
    src = image_root / record.path
    img = _decode(src.read_bytes()).convert("RGB")
    if zoomed:
        rng = np.random.default_rng(rng_seed)
        z = float(rng.uniform(profile.zoom_range[0], profile.zoom_range[1]))
        fx = float(rng.uniform(profile.offset_range[0], profile.offset_range[1]))
        fy = float(rng.uniform(profile.offset_range[0], profile.offset_range[1]))
        crop_w = max(1, round(img.width / z))
        crop_h = max(1, round(img.height / z))
        x0 = round(fx * (img.width - crop_w))
        y0 = round(fy * (img.height - crop_h))
        img = img.crop((x0, y0, x0 + crop_w, y0 + crop_h))
    size = profile.target_size
    img = img.resize((size, size), Image.BILINEAR)
    data = _encode_jpeg(img, profile.jpeg_quality)
    image_id, rel = _store(image_root, data, "JPEG")
    new_role = processed_role(record.role, zoomed)
    split = Split.TEST if new_role.is_zoom else record.split
    return ImageRecord(
        id=image_id,
        path=rel,
        role=new_role,
        split=split,
        width=size,
        height=size,
        format="JPEG",
        source_note=("zoomed " if zoomed else "") + "platform processing",
        source_id=record.id,
    )


def assign_splits(
    manifest: CorpusManifest,
    spec: dict[DatasetRole, tuple[int, int, int]],
    seed: int,
) -> CorpusManifest:
    """Assign TRAIN/VAL/TEST per role, uniformly at random under `seed`.

    Records carrying a source_id inherit their source's split instead of
    being drawn (derived / processed variants); zoom-role records can only
    ever hold TEST. Raises InsufficientRecordsError naming the role when a
    spec cannot be satisfied.
    """
    assignments: dict[str, Split] = {}
    for role in sorted(spec, key=lambda r: r.value):
        n_train, n_val, n_test = spec[role]
        if role.is_zoom and (n_train or n_val):
            raise CorpusError(f"zoom role {role.value} may only receive TEST records")
        pool = [r for r in manifest.records if r.role == role and r.source_id is None]
        if not pool:
            # Derived-only role: all its records inherit below.
            derived = [r for r in manifest.records if r.role == role]
            if derived:
                continue
        needed = n_train + n_val + n_test
        if len(pool) < needed:
            raise InsufficientRecordsError(role, needed, len(pool))
        ids = sorted(r.id for r in pool)
        role_tag = int.from_bytes(hashlib.sha256(role.value.encode()).digest()[:4], "big")
        rng = np.random.default_rng([seed, role_tag])
        order = [ids[i] for i in rng.permutation(len(ids))]
        for i, image_id in enumerate(order):
            if i < n_train:
                assignments[image_id] = Split.TRAIN
            elif i < n_train + n_val:
                assignments[image_id] = Split.VAL
            elif i < needed:
                assignments[image_id] = Split.TEST
            else:
                assignments[image_id] = Split.NONE

    new_records = []
    for r in manifest.records:
        if r.id in assignments:
            new_records.append(replace(r, split=assignments[r.id]))
        else:
            new_records.append(r)
    # Second pass: derived records inherit from their (possibly re-split)
    # source; zoom derivatives keep TEST only.
    by_id = {r.id: r for r in new_records}
    final = []
    for r in new_records:
        if r.source_id is not None and r.source_id in by_id:
            src_split = by_id[r.source_id].split
            if r.role.is_zoom:
                split = Split.TEST if src_split == Split.TEST else Split.NONE
            else:
                split = src_split
            final.append(replace(r, split=split))
        else:
            final.append(r)
    return CorpusManifest(
        corpus_id=manifest.corpus_id,
        created_at=manifest.created_at,
        records=final,
        profile=manifest.profile,
        seed=seed,
    )


def save_manifest(manifest: CorpusManifest, corpus_dir: Path) -> None:
    corpus_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "corpus_id": manifest.corpus_id,
        "created_at": manifest.created_at,
        "profile": manifest.profile.to_json(),
        "seed": manifest.seed,
    }
    (corpus_dir / "corpus.json").write_text(json.dumps(meta, indent=2))
    with open(corpus_dir / "manifest.jsonl", "w") as fh:
        for r in manifest.records:
            fh.write(json.dumps(r.to_json()) + "\n")


def load_manifest(corpus_dir: Path) -> CorpusManifest:
    meta = json.loads((corpus_dir / "corpus.json").read_text())
    records = []
    with open(corpus_dir / "manifest.jsonl") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ImageRecord.from_json(json.loads(line)))
    return CorpusManifest(
        corpus_id=meta["corpus_id"],
        created_at=meta["created_at"],
        records=records,
        profile=ProcessingProfile.from_json(meta["profile"]),
        seed=meta["seed"],
    )
