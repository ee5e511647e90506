"""Duplicate profile-image detection: 64-bit DCT hashes + density clustering.

Hash convention (fixed so hashes are comparable across runs):
  grayscale (ITU-R 601-2 luma) -> Lanczos downsample to 32x32 -> 2-D
  type-II DCT -> keep the 8x8 lowest-frequency block (DC included) ->
  bit i = 1 iff coefficient i > median of the block, row-major, bit 0 is
  the most significant bit. Equal-to-median coefficients map to 0, so a
  uniform solid-color image hashes to exactly 0x8000000000000000 (only the
  DC coefficient exceeds the all-zero median).

Clustering is DBSCAN over Hamming distance. Radius queries use a chunked
multi-index (hashes within Hamming distance eps of each other share at
least one of eps+1 equal chunks), which keeps million-hash corpora
tractable while staying semantically identical to the brute-force
definition.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image
from scipy.fft import dctn

HASH_BITS = 64


@dataclass(frozen=True)
class PerceptualHash:
    image_id: str
    bits: int  # 64-bit value

    def hex(self) -> str:
        return f"{self.bits:016x}"


def phash(image: Union[Path, Image.Image]) -> int:
    """64-bit perceptual hash of an image (see module docstring)."""
    img = Image.open(image) if isinstance(image, (str, Path)) else image
    gray = img.convert("L").resize((32, 32), Image.LANCZOS)
    coeffs = dctn(np.asarray(gray, dtype=np.float64), type=2)
    block = coeffs[:8, :8]
    median = np.median(block)
    bits = 0
    for value in block.ravel():
        bits = (bits << 1) | (1 if value > median else 0)
    return bits


def hash_image(image_id: str, image: Union[Path, Image.Image]) -> PerceptualHash:
    return PerceptualHash(image_id, phash(image))


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


@dataclass(frozen=True)
class DuplicateCluster:
    cluster_id: int
    member_ids: frozenset[str]
    medoid_id: str

    @property
    def size(self) -> int:
        return len(self.member_ids)


def _chunk_keys(bits: int, boundaries: list[tuple[int, int]]) -> list[tuple[int, int]]:
    keys = []
    for chunk_index, (shift, mask) in enumerate(boundaries):
        keys.append((chunk_index, (bits >> shift) & mask))
    return keys


def _radius_neighbors(points: list[PerceptualHash], eps: int) -> list[list[int]]:
    """Exact eps-radius Hamming neighborhoods (self included) for all points.

    Pigeonhole multi-index: with eps+1 disjoint chunks covering 64 bits,
    any two hashes at distance <= eps agree exactly on at least one chunk,
    so candidate pairs come from shared chunk buckets only.
    """
    n_chunks = min(eps + 1, HASH_BITS)
    base = HASH_BITS // n_chunks
    sizes = [base + (1 if i < HASH_BITS % n_chunks else 0) for i in range(n_chunks)]
    boundaries = []
    shift = 0
    for size in sizes:
        boundaries.append((shift, (1 << size) - 1))
        shift += size

    buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, p in enumerate(points):
        for key in _chunk_keys(p.bits, boundaries):
            buckets[key].append(i)

    neighbors: list[set[int]] = [set() for _ in points]
    for members in buckets.values():
        if len(members) < 2:
            continue
        for ai in range(len(members)):
            i = members[ai]
            for bi in range(ai + 1, len(members)):
                j = members[bi]
                if hamming(points[i].bits, points[j].bits) <= eps:
                    neighbors[i].add(j)
                    neighbors[j].add(i)
    out = []
    for i in range(len(points)):
        neighbors[i].add(i)
        out.append(sorted(neighbors[i]))
    return out


def cluster(
    hashes: Sequence[PerceptualHash], eps: int = 3, min_samples: int = 2
) -> list[DuplicateCluster]:
    """DBSCAN partition of the hashes under Hamming distance.

    A point is core when its eps-neighborhood (itself included) holds at
    least min_samples points; clusters are the components of the core-core
    adjacency, border points attach to the cluster of their lowest-indexed
    core neighbor, everything else is noise. Points are indexed in
    (hash value, image_id) order, which pins the border-point rule and
    the cluster numbering so the partition is deterministic. A component
    left below min_samples after border attachment is reported as noise
    (only reachable when min_samples > 2).
    """
    points = sorted(hashes, key=lambda h: (h.bits, h.image_id))
    if not points:
        return []
    neighbors = _radius_neighbors(points, eps)
    core = [len(nb) >= min_samples for nb in neighbors]

    labels = [-1] * len(points)
    next_label = 0
    for i in range(len(points)):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = next_label
        frontier = [i]
        while frontier:
            cur = frontier.pop()
            for j in neighbors[cur]:
                if core[j] and labels[j] == -1:
                    labels[j] = next_label
                    frontier.append(j)
        next_label += 1
    # Border points: non-core, adopt the lowest-indexed core neighbor.
    for i in range(len(points)):
        if core[i] or labels[i] != -1:
            continue
        for j in neighbors[i]:
            if core[j]:
                labels[i] = labels[j]
                break

    clusters: dict[int, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        if lab != -1:
            clusters[lab].append(i)

    out = []
    for lab in sorted(clusters):
        members = clusters[lab]
        if len(members) < min_samples:
            continue
        member_ids = frozenset(points[i].image_id for i in members)
        best_id, best_cost = None, None
        for i in members:
            cost = sum(hamming(points[i].bits, points[j].bits) for j in members)
            key = (cost, points[i].image_id)
            if best_cost is None or key < best_cost:
                best_cost, best_id = key, points[i].image_id
        out.append(DuplicateCluster(lab, member_ids, best_id))
    return out


@dataclass
class ClusterReport:
    size_histogram: dict[int, int]
    rows: list[tuple[int, int, str, list[str]]]  # (cluster_id, size, medoid, members)

    @property
    def total_members(self) -> int:
        return sum(size * count for size, count in self.size_histogram.items())

    @property
    def mean_size(self) -> float:
        n = sum(self.size_histogram.values())
        return self.total_members / n if n else 0.0

    @property
    def max_size(self) -> int:
        return max(self.size_histogram) if self.size_histogram else 0


def cluster_report(clusters: Sequence[DuplicateCluster]) -> ClusterReport:
    histogram = Counter(c.size for c in clusters)
    rows = [
        (c.cluster_id, c.size, c.medoid_id, sorted(c.member_ids))
        for c in sorted(clusters, key=lambda c: c.cluster_id)
    ]
    return ClusterReport(dict(histogram), rows)
