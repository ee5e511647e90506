"""Score calibration: ROC/AUC, F1 threshold choice, FNR/FDR estimation.

Conventions fixed here (and relied on by the tests):
  * an image is predicted fake iff score >= threshold;
  * candidate thresholds are the observed score values only;
  * f1 = 2*precision*recall / (precision + recall), 0 when both are 0;
  * ties in F1 break toward the largest threshold;
  * UNSURE labels are dropped from every metric computation.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)


class Label(str, Enum):
    REAL = "REAL"
    FAKE = "FAKE"
    UNSURE = "UNSURE"


@dataclass(frozen=True)
class LabeledScore:
    image_id: str
    score: float
    label: Label


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float
    f1: float
    precision: float
    recall: float

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
        }


@dataclass(frozen=True)
class ErrorEstimate:
    fnr: float
    fdr: float
    confusion: tuple[int, int, int, int]  # (tp, fp, tn, fn)
    fnr_degenerate: bool = False
    fdr_degenerate: bool = False

    def to_json(self) -> dict:
        tp, fp, tn, fn = self.confusion
        return {
            "fnr": self.fnr,
            "fdr": self.fdr,
            "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
            "fnr_degenerate": self.fnr_degenerate,
            "fdr_degenerate": self.fdr_degenerate,
        }


def _usable(scores: Iterable[LabeledScore]) -> list[LabeledScore]:
    return [s for s in scores if s.label != Label.UNSURE]


def _split_classes(scores: Sequence[LabeledScore]) -> tuple[np.ndarray, np.ndarray]:
    fake = np.array([s.score for s in scores if s.label == Label.FAKE], dtype=float)
    real = np.array([s.score for s in scores if s.label == Label.REAL], dtype=float)
    if len(fake) == 0 or len(real) == 0:
        raise ValueError("need at least one REAL and one FAKE label")
    return fake, real


def auc(scores: Sequence[LabeledScore]) -> float:
    """Area under the ROC curve via the rank statistic.

    Equals the probability that a uniformly random FAKE outscores a
    uniformly random REAL, counting ties as 1/2; invariant under any
    strictly monotone transform of the scores.
    """
    fake, real = _split_classes(_usable(scores))
    ranks = rankdata(np.concatenate([fake, real]))
    n_f, n_r = len(fake), len(real)
    u = ranks[:n_f].sum() - n_f * (n_f + 1) / 2.0
    return float(u / (n_f * n_r))


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """(precision, recall, f1) under the module's fixed formula."""
    predicted = tp + fp
    actual = tp + fn
    precision = tp / predicted if predicted else 0.0
    recall = tp / actual if actual else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def choose_threshold(scores: Sequence[LabeledScore]) -> ThresholdChoice:
    """F1-maximizing threshold over the observed score values.

    Evaluates every distinct score as a candidate (predict FAKE when
    score >= candidate) and returns the maximizer, largest threshold on
    ties. Single-class input is an error.
    """
    usable = _usable(scores)
    fake, real = _split_classes(usable)
    values = np.concatenate([fake, real])
    is_fake = np.concatenate([np.ones(len(fake), bool), np.zeros(len(real), bool)])
    order = np.argsort(values, kind="stable")
    values, is_fake = values[order], is_fake[order]
    candidates, start_idx = np.unique(values, return_index=True)
    # suffix counts: fakes / reals with score >= candidate
    fake_suffix = np.cumsum(is_fake[::-1])[::-1]
    real_suffix = np.cumsum(~is_fake[::-1])[::-1]
    n_fake = int(is_fake.sum())

    best: ThresholdChoice | None = None
    for cand, idx in zip(candidates, start_idx):
        tp = int(fake_suffix[idx])
        fp = int(real_suffix[idx])
        fn = n_fake - tp
        precision, recall, f1 = f1_from_counts(tp, fp, fn)
        if best is None or f1 >= best.f1:
            best = ThresholdChoice(float(cand), f1, precision, recall)
    assert best is not None
    return best


def error_rates(scores: Sequence[LabeledScore], threshold: float) -> ErrorEstimate:
    """Confusion counts and FNR/FDR at a fixed threshold.

    FNR = FN / (FN + TP): missed fakes among all fakes.
    FDR = FP / (FP + TP): reals among everything predicted fake (not FPR).
    Degenerate denominators yield 0 with the matching flag set, so sweeps
    over extreme thresholds never abort.
    """
    tp = fp = tn = fn = 0
    for s in _usable(scores):
        predicted_fake = s.score >= threshold
        if s.label == Label.FAKE:
            if predicted_fake:
                tp += 1
            else:
                fn += 1
        else:
            if predicted_fake:
                fp += 1
            else:
                tn += 1
    fnr_degenerate = (fn + tp) == 0
    fdr_degenerate = (fp + tp) == 0
    fnr = 0.0 if fnr_degenerate else fn / (fn + tp)
    fdr = 0.0 if fdr_degenerate else fp / (fp + tp)
    return ErrorEstimate(fnr, fdr, (tp, fp, tn, fn), fnr_degenerate, fdr_degenerate)


def roc_points(scores: Sequence[LabeledScore]) -> list[tuple[float, float]]:
    """(fpr, tpr) at every distinct threshold, for CSV export/plotting."""
    usable = _usable(scores)
    fake, real = _split_classes(usable)
    points = [(1.0, 1.0)]
    for t in np.unique(np.concatenate([fake, real])):
        tpr = float((fake >= t).sum() / len(fake))
        fpr = float((real >= t).sum() / len(real))
        points.append((fpr, tpr))
    points.append((0.0, 0.0))
    return sorted(set(points))


def pr_points(scores: Sequence[LabeledScore]) -> list[tuple[float, float]]:
    """(recall, precision) at every distinct threshold."""
    usable = _usable(scores)
    fake, real = _split_classes(usable)
    out = []
    for t in np.unique(np.concatenate([fake, real])):
        tp = int((fake >= t).sum())
        fp = int((real >= t).sum())
        precision, recall, _ = f1_from_counts(tp, fp, len(fake) - tp)
        out.append((recall, precision))
    return sorted(set(out))


@dataclass
class LabelingSubset:
    """Score-ordered manual-labeling queue drawn from a corpus sample."""

    image_ids: list[str]
    scores: dict[str, float]
    sampled_count: int
    score_min: float
    score_max: float
    truncated: bool = False  # fewer gated images than requested top_k

    def to_json(self) -> dict:
        return {
            "image_ids": self.image_ids,
            "scores": {i: self.scores[i] for i in self.image_ids},
            "sampled_count": self.sampled_count,
            "score_min": self.score_min,
            "score_max": self.score_max,
            "truncated": self.truncated,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabelingSubset":
        return cls(
            image_ids=list(d["image_ids"]),
            scores={k: float(v) for k, v in d["scores"].items()},
            sampled_count=int(d["sampled_count"]),
            score_min=float(d["score_min"]),
            score_max=float(d["score_max"]),
            truncated=bool(d.get("truncated", False)),
        )


def labeling_subset(
    scores: Sequence,
    gate_passed: set[str],
    sample_fraction: float,
    top_k: int,
    seed: int,
) -> LabelingSubset:
    """Sample a fraction of all scored images and keep the top_k gated ones.

    The sample is uniform without replacement (deterministic under seed);
    within it, images are ordered by descending score with image_id as a
    stable tiebreak. The covered score range is recorded because the
    subset's selection-by-score biases any error estimate made from it.
    """
    pairs = []
    for s in scores:
        image_id = s[0] if isinstance(s, tuple) else s.image_id
        score = s[1] if isinstance(s, tuple) else s.score
        pairs.append((image_id, float(score)))
    pairs.sort(key=lambda p: p[0])
    n_sample = int(len(pairs) * sample_fraction)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pairs), size=n_sample, replace=False) if pairs else []
    sampled = [pairs[i] for i in sorted(idx)]
    sampled.sort(key=lambda p: (-p[1], p[0]))
    gated = [(i, sc) for i, sc in sampled if i in gate_passed]
    selected = gated[:top_k]
    truncated = len(selected) < top_k
    if truncated:
        log.warning(
            "labeling subset: only %d gated images available, %d requested",
            len(selected), top_k,
        )
    score_values = [sc for _, sc in selected]
    return LabelingSubset(
        image_ids=[i for i, _ in selected],
        scores=dict(selected),
        sampled_count=n_sample,
        score_min=min(score_values) if score_values else 0.0,
        score_max=max(score_values) if score_values else 0.0,
        truncated=truncated,
    )


def split_labeled(
    labels: Sequence[LabeledScore], seed: int
) -> tuple[list[LabeledScore], list[LabeledScore]]:
    """Stratified 50/50 split into (validation, test).

    Per-label counts differ by at most one between the halves; the odd
    remainders alternate between halves (validation first) so total sizes
    stay as equal as the label counts allow. UNSURE must be excluded
    upstream.
    """
    if any(s.label == Label.UNSURE for s in labels):
        raise ValueError("UNSURE labels must be excluded before splitting")
    groups: dict[Label, list[LabeledScore]] = {}
    for s in labels:
        groups.setdefault(s.label, []).append(s)
    validation: list[LabeledScore] = []
    test: list[LabeledScore] = []
    extras_val = extras_test = 0
    for label in sorted(groups, key=lambda l: l.value):
        members = sorted(groups[label], key=lambda s: s.image_id)
        label_tag = int.from_bytes(hashlib.sha256(label.value.encode()).digest()[:4], "big")
        rng = np.random.default_rng([seed, label_tag])
        members = [members[i] for i in rng.permutation(len(members))]
        half = len(members) // 2
        if len(members) % 2 == 1:
            if extras_val <= extras_test:
                half += 1
                extras_val += 1
            else:
                extras_test += 1
        validation.extend(members[:half])
        test.extend(members[half:])
    return validation, test
