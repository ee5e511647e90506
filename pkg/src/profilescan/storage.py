"""On-disk layout and serialization for one corpus workspace.

Everything derived (gates, scores, hashes) is keyed by content-addressed
image id, so cache reuse and invalidation follow from the keys alone.
Calibration outputs are written with sorted keys and no timestamps: the
replay contract is byte-identical output from an identical label log.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from . import calibrate, content, dedup
from .calibrate import ErrorEstimate, LabelingSubset, ThresholdChoice
from .detector import ScoreRecord
from .facegate import FaceGeometry, GateDecision
from .ingest import CorpusManifest, load_manifest, save_manifest


def _stable_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


@dataclass(frozen=True)
class LabelEvent:
    image_id: str
    annotator_id: str
    label: str  # REAL | FAKE | UNSURE
    labeled_at: str = ""
    assist_seen: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "annotator_id": self.annotator_id,
            "label": self.label,
            "labeled_at": self.labeled_at,
            "assist_seen": self.assist_seen,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabelEvent":
        return cls(
            image_id=d["image_id"],
            annotator_id=d["annotator_id"],
            label=d["label"],
            labeled_at=d.get("labeled_at", ""),
            assist_seen=d.get("assist_seen", {}),
        )


class CorpusStore:
    """Paths and load/save helpers for ``<data_dir>/corpus/<corpus_id>``."""

    def __init__(self, data_dir: Path, corpus_id: str):
        self.data_dir = Path(data_dir)
        self.corpus_id = corpus_id
        self.corpus_dir = self.data_dir / "corpus" / corpus_id
        self.models_dir = self.data_dir / "models"

    # -- corpus ----------------------------------------------------------
    @property
    def image_root(self) -> Path:
        return self.corpus_dir

    def image_path(self, image_id: str) -> Optional[Path]:
        manifest = self.load_manifest()
        record = manifest.get(image_id)
        return self.corpus_dir / record.path if record else None

    def save_manifest(self, manifest: CorpusManifest) -> None:
        save_manifest(manifest, self.corpus_dir)

    def load_manifest(self) -> CorpusManifest:
        return load_manifest(self.corpus_dir)

    def has_manifest(self) -> bool:
        return (self.corpus_dir / "manifest.jsonl").exists()

    # -- gate decisions ----------------------------------------------------
    @property
    def gates_path(self) -> Path:
        return self.corpus_dir / "gates.jsonl"

    def save_gates(self, rows: dict[str, dict]) -> None:
        with open(self.gates_path, "w") as fh:
            for image_id in sorted(rows):
                fh.write(_stable_json(rows[image_id]))

    def load_gates(self) -> dict[str, dict]:
        if not self.gates_path.exists():
            return {}
        rows = {}
        for line in self.gates_path.read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                rows[d["image_id"]] = d
        return rows

    def gate_passed_ids(self) -> set[str]:
        return {i for i, row in self.load_gates().items() if row.get("passed")}

    @staticmethod
    def gate_row(image_id: str, decision: GateDecision) -> dict:
        return {
            "image_id": image_id,
            "passed": decision.passed,
            "reason": decision.reason.value,
            "eye_distance": decision.eye_distance,
            "bbox": list(decision.geometry.bbox) if decision.geometry else None,
            "landmarks": (
                {k: list(v) for k, v in decision.geometry.landmarks.items()}
                if decision.geometry
                else None
            ),
        }

    @staticmethod
    def gate_error_row(image_id: str, error: str) -> dict:
        return {
            "image_id": image_id,
            "passed": False,
            "reason": "ERROR",
            "eye_distance": None,
            "bbox": None,
            "landmarks": None,
            "error": error,
        }

    @staticmethod
    def geometry_from_row(row: dict) -> Optional[FaceGeometry]:
        if not row.get("landmarks") or not row.get("bbox"):
            return None
        return FaceGeometry(
            bbox=tuple(row["bbox"]),
            landmarks={k: tuple(v) for k, v in row["landmarks"].items()},
        )

    # -- scores ------------------------------------------------------------
    def scores_path(self, model_id: str) -> Path:
        return self.corpus_dir / "scores" / f"{model_id}.jsonl"

    def save_scores(self, model_id: str, scores: Iterable[ScoreRecord]) -> None:
        path = self.scores_path(model_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        merged = {s.image_id: s for s in self.load_scores(model_id).values()}
        for s in scores:
            merged[s.image_id] = s
        with open(path, "w") as fh:
            for image_id in sorted(merged):
                fh.write(_stable_json(merged[image_id].to_json()))

    def load_scores(self, model_id: str) -> dict[str, ScoreRecord]:
        path = self.scores_path(model_id)
        if not path.exists():
            return {}
        out = {}
        for line in path.read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                out[d["image_id"]] = ScoreRecord(
                    d["image_id"], d["model_id"], d["score"], d.get("scored_at", "")
                )
        return out

    # -- labeling subset ----------------------------------------------------
    @property
    def subset_path(self) -> Path:
        return self.corpus_dir / "subset.json"

    def save_subset(self, subset: LabelingSubset) -> None:
        self.subset_path.write_text(json.dumps(subset.to_json(), indent=2))

    def load_subset(self) -> Optional[LabelingSubset]:
        if not self.subset_path.exists():
            return None
        return LabelingSubset.from_json(json.loads(self.subset_path.read_text()))

    # -- label events (append-only) -----------------------------------------
    @property
    def labels_path(self) -> Path:
        return self.corpus_dir / "labels.jsonl"

    def append_label(self, event: LabelEvent) -> None:
        self.labels_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.labels_path, "a") as fh:
            fh.write(_stable_json(event.to_json()))

    def read_labels(self) -> list[LabelEvent]:
        if not self.labels_path.exists():
            return []
        return [
            LabelEvent.from_json(json.loads(line))
            for line in self.labels_path.read_text().splitlines()
            if line.strip()
        ]

    # -- calibration outputs -------------------------------------------------
    @property
    def calibration_path(self) -> Path:
        return self.corpus_dir / "calibration.json"

    @property
    def errors_path(self) -> Path:
        return self.corpus_dir / "errors.json"

    def save_calibration(self, choice: ThresholdChoice, auc_value: float) -> None:
        payload = dict(choice.to_json())
        payload["auc"] = auc_value
        self.calibration_path.write_text(_stable_json(payload))

    def load_calibration(self) -> Optional[dict]:
        if not self.calibration_path.exists():
            return None
        return json.loads(self.calibration_path.read_text())

    def save_errors(self, estimate: ErrorEstimate) -> None:
        self.errors_path.write_text(_stable_json(estimate.to_json()))

    def load_errors(self) -> Optional[dict]:
        if not self.errors_path.exists():
            return None
        return json.loads(self.errors_path.read_text())

    # -- alignment ------------------------------------------------------------
    @property
    def alignment_ref_path(self) -> Path:
        return self.corpus_dir / "alignment_ref.json"

    @property
    def alignment_path(self) -> Path:
        return self.corpus_dir / "alignment.jsonl"

    def save_alignment_rows(self, rows: dict[str, dict]) -> None:
        with open(self.alignment_path, "w") as fh:
            for image_id in sorted(rows):
                fh.write(_stable_json(rows[image_id]))

    def load_alignment_rows(self) -> dict[str, dict]:
        if not self.alignment_path.exists():
            return {}
        out = {}
        for line in self.alignment_path.read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                out[d["image_id"]] = d
        return out

    def aligned_ids(self) -> set[str]:
        return {i for i, row in self.load_alignment_rows().items() if row.get("aligned")}

    # -- inversions -------------------------------------------------------------
    @property
    def inversions_dir(self) -> Path:
        return self.corpus_dir / "inversions"

    def inversion_json_path(self, image_id: str) -> Path:
        return self.inversions_dir / f"{image_id}.json"

    def composite_path(self, image_id: str) -> Path:
        return self.inversions_dir / f"{image_id}_sbs.jpg"

    def has_composite(self, image_id: str) -> bool:
        return self.composite_path(image_id).exists()

    def load_inversion_meta(self, image_id: str) -> Optional[dict]:
        path = self.inversion_json_path(image_id)
        if not path.exists():
            return None
        return json.loads(path.read_text())

    # -- dedup ---------------------------------------------------------------
    @property
    def phashes_path(self) -> Path:
        return self.corpus_dir / "phashes.csv"

    def save_phashes(self, hashes: Iterable[dedup.PerceptualHash]) -> None:
        with open(self.phashes_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "phash"])
            for h in sorted(hashes, key=lambda h: h.image_id):
                writer.writerow([h.image_id, h.hex()])

    def load_phashes(self) -> list[dedup.PerceptualHash]:
        if not self.phashes_path.exists():
            return []
        out = []
        with open(self.phashes_path, newline="") as fh:
            for row in csv.reader(fh):
                if row and row[0] != "image_id":
                    out.append(dedup.PerceptualHash(row[0], int(row[1], 16)))
        return out

    @property
    def dup_clusters_path(self) -> Path:
        return self.corpus_dir / "dup_clusters.json"

    def save_dup_clusters(self, clusters: list[dedup.DuplicateCluster]) -> None:
        payload = [
            {
                "cluster_id": c.cluster_id,
                "medoid_id": c.medoid_id,
                "member_ids": sorted(c.member_ids),
            }
            for c in sorted(clusters, key=lambda c: c.cluster_id)
        ]
        self.dup_clusters_path.write_text(json.dumps(payload, indent=2))

    def load_dup_clusters(self) -> Optional[list[dict]]:
        if not self.dup_clusters_path.exists():
            return None
        return json.loads(self.dup_clusters_path.read_text())

    def save_dup_cluster_report(self, report: dedup.ClusterReport) -> None:
        with open(self.corpus_dir / "dup_clusters.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cluster_id", "size", "medoid_id", "member_ids"])
            for cluster_id, size, medoid_id, members in report.rows:
                writer.writerow([cluster_id, size, medoid_id, " ".join(members)])
        with open(self.corpus_dir / "dup_size_histogram.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["size", "clusters"])
            for size in sorted(report.size_histogram):
                writer.writerow([size, report.size_histogram[size]])

    # -- content outputs --------------------------------------------------------
    def save_tweet_clusters(
        self,
        assignments: list[content.ClusterAssignment],
        profiles: list[content.ClusterProfile],
        cluster_group: Optional[dict[int, tuple[str, str]]] = None,
    ) -> None:
        cluster_group = cluster_group or {}
        payload = {
            "assignments": [
                {
                    "tweet_id": a.tweet_id,
                    "cluster_id": a.cluster_id,
                    "similarity_at_assignment": a.similarity_at_assignment,
                }
                for a in assignments
            ],
            "clusters": [
                {
                    "cluster_id": p.cluster_id,
                    "size": p.size,
                    "group": list(cluster_group[p.cluster_id])
                    if p.cluster_id in cluster_group
                    else None,
                }
                for p in profiles
            ],
        }
        (self.corpus_dir / "clusters.json").write_text(json.dumps(payload, indent=2))

    def save_cluster_terms(self, terms: dict[int, list[tuple[str, float]]]) -> None:
        with open(self.corpus_dir / "cluster_terms.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cluster_id", "term", "weight"])
            for cid in sorted(terms):
                for term, weight in terms[cid]:
                    writer.writerow([cid, term, f"{weight:.12g}"])

    def save_projection(self, rows: list[tuple[str, float, float]]) -> None:
        with open(self.corpus_dir / "projection.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "x", "y"])
            for row_id, x, y in rows:
                writer.writerow([row_id, f"{x:.8g}", f"{y:.8g}"])

    def save_languages(self, stats: list[content.LanguageStats]) -> None:
        with open(self.corpus_dir / "languages.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["language", "tweet_count", "account_count", "inactive_share"])
            for s in stats:
                writer.writerow(
                    [s.language, s.tweet_count, s.account_count, f"{s.inactive_share:.8g}"]
                )

    # -- curve exports -------------------------------------------------------
    def save_curves(self, labeled: list[calibrate.LabeledScore]) -> None:
        with open(self.corpus_dir / "roc_curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr"])
            for fpr, tpr in calibrate.roc_points(labeled):
                writer.writerow([f"{fpr:.8g}", f"{tpr:.8g}"])
        with open(self.corpus_dir / "pr_curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["recall", "precision"])
            for recall, precision in calibrate.pr_points(labeled):
                writer.writerow([f"{recall:.8g}", f"{precision:.8g}"])

    # -- analytics bundle -------------------------------------------------------
    @property
    def analytics_path(self) -> Path:
        return self.corpus_dir / "analytics.json"

    def save_analytics(self, bundle: dict) -> None:
        merged = self.load_analytics() or {}
        merged.update(bundle)
        self.analytics_path.write_text(json.dumps(merged, indent=2, sort_keys=True))

    def load_analytics(self) -> Optional[dict]:
        if not self.analytics_path.exists():
            return None
        return json.loads(self.analytics_path.read_text())

    # -- run report -----------------------------------------------------------
    @property
    def report_path(self) -> Path:
        return self.corpus_dir / "report.json"

    def save_report(self, report: dict) -> None:
        self.report_path.write_text(json.dumps(report, indent=2, sort_keys=True))

    def load_report(self) -> Optional[dict]:
        if not self.report_path.exists():
            return None
        return json.loads(self.report_path.read_text())
