"""End-to-end orchestration: gate -> score -> classify, labels, calibration.

Labels are event-sourced: the log is append-only and every derived view
(effective labels, calibration, error rates) is a pure fold over it, so
deleting derived artifacts and replaying the log reproduces them exactly.
Gate decisions and scores are cached keyed by content hash (+ model id);
re-running a detection is idempotent and cheap.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional, Sequence

from . import assist, calibrate, detector, facegate
from .calibrate import ErrorEstimate, Label, LabeledScore, ThresholdChoice
from .config import PipelineConfig
from .facegate import FaceDetectorAdapter, FixtureDetector
from .storage import CorpusStore, LabelEvent

log = logging.getLogger(__name__)

VALID_LABELS = {l.value for l in Label}


class PipelineError(Exception):
    pass


class CalibrationRequired(PipelineError):
    """Scoring finished but no threshold exists to classify with."""


# ---------------------------------------------------------------------------
# Label views
# ---------------------------------------------------------------------------


def effective_labels(events: Sequence[LabelEvent]) -> dict[str, LabelEvent]:
    """Latest event per image, across annotators (log order decides)."""
    out: dict[str, LabelEvent] = {}
    for event in events:
        out[event.image_id] = event
    return out


def effective_by_annotator(
    events: Sequence[LabelEvent],
) -> dict[tuple[str, str], LabelEvent]:
    """Latest event per (image, annotator); exposes annotator conflicts."""
    out: dict[tuple[str, str], LabelEvent] = {}
    for event in events:
        out[(event.image_id, event.annotator_id)] = event
    return out


# ---------------------------------------------------------------------------
# Detection run
# ---------------------------------------------------------------------------


def ensure_gates(
    store: CorpusStore,
    config: PipelineConfig,
    detector_adapter: Optional[FaceDetectorAdapter] = None,
) -> dict[str, dict]:
    """Gate every manifest image that has no cached decision yet."""
    adapter = detector_adapter or FixtureDetector()
    manifest = store.load_manifest()
    rows = store.load_gates()
    new = 0
    for record in manifest.records:
        if record.id in rows:
            continue
        try:
            decision = facegate.prefilter(
                store.image_root / record.path, adapter, config.min_eye_distance
            )
            rows[record.id] = CorpusStore.gate_row(record.id, decision)
        except facegate.ImageDecodeError as exc:
            rows[record.id] = CorpusStore.gate_error_row(record.id, str(exc))
        new += 1
    if new:
        store.save_gates(rows)
        log.info("gated %d new images", new)
    return rows


def ensure_scores(
    store: CorpusStore,
    config: PipelineConfig,
    gated_ids: set[str],
) -> dict[str, detector.ScoreRecord]:
    """Score gate-passing images that lack a cached score for the model."""
    cached = store.load_scores(config.model_id)
    manifest = store.load_manifest()
    todo = [
        manifest.get(i) for i in sorted(gated_ids) if i not in cached and i in manifest
    ]
    if todo:
        handle, model = detector.load_model(store.models_dir, config.model_id)
        fresh, skipped = detector.score(todo, handle, model, store.image_root)
        if skipped:
            log.warning("scoring skipped %d undecodable images", len(skipped))
        store.save_scores(config.model_id, fresh)
        cached = store.load_scores(config.model_id)
    return cached


def resolve_threshold(store: CorpusStore, config: PipelineConfig) -> Optional[float]:
    if config.threshold is not None:
        return config.threshold
    calibration = store.load_calibration()
    return calibration["threshold"] if calibration else None


def run_detection(
    store: CorpusStore,
    config: PipelineConfig,
    detector_adapter: Optional[FaceDetectorAdapter] = None,
) -> dict:
    """Full detection pass over the corpus; returns (and persists) the report.

    Reuses every cached gate decision and score. Without a threshold the
    run stops after scoring and the report carries status
    "calibration required" instead of a classification.
    """
    manifest = store.load_manifest()
    gates = ensure_gates(store, config, detector_adapter)
    passed_ids = {i for i, row in gates.items() if row.get("passed")}
    scores = ensure_scores(store, config, passed_ids)

    role_counts: dict[str, int] = {}
    split_counts: dict[str, int] = {}
    for record in manifest.records:
        role_counts[record.role.value] = role_counts.get(record.role.value, 0) + 1
        split_counts[record.split.value] = split_counts.get(record.split.value, 0) + 1

    reasons: dict[str, int] = {}
    for row in gates.values():
        reasons[row["reason"]] = reasons.get(row["reason"], 0) + 1
    total = len(manifest.records)
    reduction = 0.0 if total == 0 else 100.0 * (total - len(passed_ids)) / total

    gated_scores = [scores[i].score for i in sorted(passed_ids) if i in scores]
    score_summary = {
        "count": len(gated_scores),
        "min": min(gated_scores) if gated_scores else None,
        "max": max(gated_scores) if gated_scores else None,
        "mean": sum(gated_scores) / len(gated_scores) if gated_scores else None,
    }

    threshold = resolve_threshold(store, config)
    if threshold is None:
        classified = None
        status = "calibration required"
    else:
        classified = sum(
            1 for i in passed_ids if i in scores and scores[i].score >= threshold
        )
        status = "classified"

    errors = store.load_errors()
    dup = store.load_dup_clusters()
    dedup_stats = None
    if dup is not None:
        sizes = [len(c["member_ids"]) for c in dup]
        dedup_stats = {
            "clusters": len(sizes),
            "mean_size": sum(sizes) / len(sizes) if sizes else 0.0,
            "max_size": max(sizes) if sizes else 0,
        }

    report = {
        "status": status,
        "corpus": {
            "corpus_id": store.corpus_id,
            "images": total,
            "roles": role_counts,
            "splits": split_counts,
        },
        "gate": {
            "reasons": reasons,
            "passed": len(passed_ids),
            "reduction_percent": reduction,
        },
        "scores": score_summary,
        "threshold": threshold,
        "classified_fake": classified,
        "error_estimates": errors,
        "dedup": dedup_stats,
        "analytics": store.load_analytics(),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    store.save_report(report)
    return report


def canonical_report(report: dict) -> dict:
    """Report stripped of volatile fields, for idempotency comparisons."""
    return {k: v for k, v in report.items() if k != "created_at"}


# ---------------------------------------------------------------------------
# Labeling queue and events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueueItem:
    image_id: str
    score: float
    aligned: bool
    has_composite: bool

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "score": self.score,
            "aligned": self.aligned,
            "has_composite": self.has_composite,
        }


def labeling_queue(store: CorpusStore, n: int) -> list[QueueItem]:
    """Next n unlabeled subset items, in stored (descending score) order."""
    subset = store.load_subset()
    if subset is None or n <= 0:
        return []
    labeled = set(effective_labels(store.read_labels()))
    aligned = store.aligned_ids()
    items = []
    for image_id in subset.image_ids:
        if image_id in labeled:
            continue
        items.append(
            QueueItem(
                image_id=image_id,
                score=subset.scores[image_id],
                aligned=image_id in aligned,
                has_composite=store.has_composite(image_id),
            )
        )
        if len(items) >= n:
            break
    return items


def submit_label(store: CorpusStore, event: LabelEvent) -> None:
    """Validate and durably append one label event."""
    if event.label not in VALID_LABELS:
        raise ValueError(f"unknown label {event.label!r}")
    subset = store.load_subset()
    if subset is None or event.image_id not in subset.scores:
        raise KeyError(f"image {event.image_id!r} is not in the labeling subset")
    if not event.labeled_at:
        event = LabelEvent(
            image_id=event.image_id,
            annotator_id=event.annotator_id,
            label=event.label,
            labeled_at=datetime.now(timezone.utc).isoformat(),
            assist_seen=event.assist_seen,
        )
    store.append_label(event)


def progress(store: CorpusStore) -> dict:
    subset = store.load_subset()
    total = len(subset.image_ids) if subset else 0
    effective = effective_labels(store.read_labels())
    per_label: dict[str, int] = {}
    for event in effective.values():
        per_label[event.label] = per_label.get(event.label, 0) + 1
    labeled = len(effective)
    return {
        "labeled": labeled,
        "remaining": max(0, total - labeled),
        "per_label_counts": per_label,
    }


# ---------------------------------------------------------------------------
# Calibration from the event log
# ---------------------------------------------------------------------------


def labeled_scores_from_log(store: CorpusStore) -> list[LabeledScore]:
    """Effective labels joined with subset scores; UNSURE excluded."""
    subset = store.load_subset()
    if subset is None:
        raise PipelineError("no labeling subset; run `subset` first")
    out = []
    for image_id, event in sorted(effective_labels(store.read_labels()).items()):
        if event.label == Label.UNSURE.value:
            continue
        if image_id in subset.scores:
            out.append(LabeledScore(image_id, subset.scores[image_id], Label(event.label)))
    return out


def calibrate_and_estimate(
    store: CorpusStore, config: PipelineConfig
) -> tuple[ThresholdChoice, ErrorEstimate]:
    """Stratified split of the labeled subset; threshold from the validation
    half, FNR/FDR from the test half. Outputs are persisted without
    timestamps so replaying the label log reproduces them byte-for-byte.
    """
    labeled = labeled_scores_from_log(store)
    for cls in (Label.REAL, Label.FAKE):
        count = sum(1 for s in labeled if s.label == cls)
        if count < 2:
            raise PipelineError(
                f"need at least 2 {cls.value} labels to calibrate, have {count}"
            )
    validation, test = calibrate.split_labeled(labeled, config.calibration_seed)
    choice = calibrate.choose_threshold(validation)
    auc_value = calibrate.auc(validation)
    estimate = calibrate.error_rates(test, choice.threshold)
    store.save_calibration(choice, auc_value)
    store.save_errors(estimate)
    store.save_curves(validation)
    return choice, estimate


# ---------------------------------------------------------------------------
# Alignment and inversion orchestration
# ---------------------------------------------------------------------------


def compute_alignment(
    store: CorpusStore,
    config: PipelineConfig,
    reference_role: str = "FAKE_PROC",
    reference_split: str = "TRAIN",
) -> assist.AlignmentReference:
    """Fit the landmark reference and evaluate alignment for gated images.

    Geometries come from the persisted gate log (the detector already ran
    there), so this never re-detects faces.
    """
    from .ingest import DatasetRole, Split

    manifest = store.load_manifest()
    gates = store.load_gates()
    ref_geoms = []
    for record in manifest.select(DatasetRole(reference_role), Split(reference_split)):
        row = gates.get(record.id)
        geom = CorpusStore.geometry_from_row(row) if row else None
        if geom is not None:
            ref_geoms.append(geom)
    if not ref_geoms:
        raise PipelineError(
            f"no gate geometries for {reference_role}/{reference_split}; "
            "run prefilter first"
        )
    ref = assist.fit_alignment_reference(
        ref_geoms, k=config.alignment_k, source_corpus=store.corpus_id
    )
    assist.save_reference(ref, store.alignment_ref_path)

    rows = {}
    for image_id, row in gates.items():
        geom = CorpusStore.geometry_from_row(row)
        if geom is None:
            continue
        d_left, d_right = assist.eye_deviations(geom, ref)
        rows[image_id] = {
            "image_id": image_id,
            "aligned": assist.is_aligned(geom, ref),
            "gan_eye_distance": assist.gan_eye_distance(geom, ref),
            "eye_deviation_left": d_left,
            "eye_deviation_right": d_right,
        }
    store.save_alignment_rows(rows)
    return ref


def invert_images(
    store: CorpusStore,
    image_ids: Sequence[str],
    generator: assist.GeneratorAdapter,
    budget: int = 1000,
    metric: Optional[assist.PerceptualMetric] = None,
) -> list[assist.InversionResult]:
    """Invert aligned images and persist result JSON + side-by-side JPEG.

    Inversion relies on the generator's alignment convention, so a
    misaligned id is a caller error here (the published workflow only
    inverts aligned images).
    """
    aligned = store.aligned_ids()
    results = []
    for image_id in image_ids:
        if image_id not in aligned:
            raise PipelineError(
                f"image {image_id} is not aligned; inversion assists aligned images only"
            )
        path = store.image_path(image_id)
        if path is None:
            raise KeyError(f"unknown image id {image_id}")
        result = assist.invert(
            path, generator, budget=budget, image_id=image_id, metric=metric
        )
        store.inversions_dir.mkdir(parents=True, exist_ok=True)
        store.inversion_json_path(image_id).write_text(
            json.dumps(result.to_json(), indent=2)
        )
        sbs = assist.composite(path, result)
        sbs.save(store.composite_path(image_id), format="JPEG", quality=95)
        results.append(result)
    return results
