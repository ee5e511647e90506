"""Tweet-text analytics: incremental clustering, c-TF-IDF labels, 2-D maps.

The clustering pass is order-dependent by construction, so the processing
order is part of the contract: tweets are handled in (created_at,
tweet_id) ascending order. Each tweet joins the cluster whose centroid is
most cosine-similar if that similarity reaches the threshold, otherwise it
founds a new cluster; centroids are re-normalized running means. Clusters
that end below the minimum size dissolve to noise in the reported output.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .accounts import Status

log = logging.getLogger(__name__)

NOISE = -1

_TOKEN_RE = re.compile(r"[#@]?[0-9a-z_]+")


@dataclass(frozen=True)
class TweetRecord:
    tweet_id: str
    account_id: str
    text: str
    language: str
    created_at: datetime
    is_retweet: bool = False


def load_tweets(path: Path) -> list[TweetRecord]:
    """Read tweets from JSON Lines, dropping empty texts with a warning."""
    out = []
    dropped = 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            text = " ".join(str(d["text"]).split())
            if not text:
                dropped += 1
                continue
            created = datetime.fromisoformat(str(d["created_at"]).replace("Z", "+00:00"))
            if created.tzinfo is None:
                created = created.replace(tzinfo=timezone.utc)
            out.append(
                TweetRecord(
                    tweet_id=str(d["tweet_id"]),
                    account_id=str(d["account_id"]),
                    text=text,
                    language=d.get("language", "und"),
                    created_at=created,
                    is_retweet=bool(d.get("is_retweet", False)),
                )
            )
    if dropped:
        log.warning("dropped %d tweets with empty text", dropped)
    return out


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on non-alphanumerics.

    #hashtags and @mentions keep their sigil; tokens of total length 1
    are dropped.
    """
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) > 1]


class EmbeddingAdapter(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """(n, dim) float array; rows need not be normalized."""
        ...


class HashingEmbedder:
    """Deterministic embedding stub: tokens hashed into a fixed-size vector.

    Good enough to make identical texts identical vectors and unrelated
    token sets near-orthogonal, which is all the tests need. Not a
    semantic embedding.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            for token in tokenize(text):
                digest = hashlib.md5(token.encode()).digest()
                index = int.from_bytes(digest[:4], "big") % self.dim
                sign = 1.0 if digest[4] & 1 else -1.0
                out[row, index] += sign
        return out


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return vectors / norms


@dataclass(frozen=True)
class ClusterAssignment:
    tweet_id: str
    cluster_id: int  # NOISE for unclustered
    similarity_at_assignment: float


@dataclass
class ClusterProfile:
    cluster_id: int
    size: int
    centroid: np.ndarray
    top_terms: list[tuple[str, float]]


def cluster_stream(
    tweets: Sequence[TweetRecord],
    embedder: EmbeddingAdapter,
    threshold: float = 0.6,
    min_cluster_size: int = 50,
) -> tuple[list[ClusterAssignment], list[ClusterProfile]]:
    """One incremental pass over the tweets (see module docstring).

    Ties between equally similar centroids break toward the oldest
    cluster. A founding tweet is recorded with similarity 1.0 (it is its
    own centroid). Raises on an embedding dimension mismatch.
    """
    ordered = sorted(tweets, key=lambda t: (t.created_at, t.tweet_id))
    if not ordered:
        return [], []
    vectors = np.asarray(embedder.embed([t.text for t in ordered]), dtype=np.float64)
    if vectors.shape != (len(ordered), embedder.dim):
        raise ValueError(
            f"embedder returned shape {vectors.shape}, expected ({len(ordered)}, {embedder.dim})"
        )
    vectors = _normalize_rows(vectors)

    sums: list[np.ndarray] = []      # unnormalized member-vector sums
    centroids: list[np.ndarray] = [] # normalized running means
    members: list[list[int]] = []
    raw: list[tuple[str, int, float]] = []

    for row, tweet in enumerate(ordered):
        v = vectors[row]
        best_cluster, best_sim = -1, -np.inf
        for cid, centroid in enumerate(centroids):
            sim = float(v @ centroid)
            if sim > best_sim:
                best_cluster, best_sim = cid, sim
        if best_cluster >= 0 and best_sim >= threshold:
            sums[best_cluster] += v
            norm = np.linalg.norm(sums[best_cluster])
            centroids[best_cluster] = (
                sums[best_cluster] / norm if norm > 0 else sums[best_cluster]
            )
            members[best_cluster].append(row)
            raw.append((tweet.tweet_id, best_cluster, best_sim))
        else:
            sums.append(v.copy())
            centroids.append(v.copy())
            members.append([row])
            raw.append((tweet.tweet_id, len(sums) - 1, 1.0))

    surviving = {cid for cid, rows in enumerate(members) if len(rows) >= min_cluster_size}
    assignments = [
        ClusterAssignment(tid, cid if cid in surviving else NOISE, sim)
        for tid, cid, sim in raw
    ]
    profiles = [
        ClusterProfile(cid, len(members[cid]), centroids[cid], [])
        for cid in sorted(surviving)
    ]
    return assignments, profiles


def cluster_grouped(
    tweets: Sequence[TweetRecord],
    embedder: EmbeddingAdapter,
    status_by_account: dict[str, Status],
    threshold: float = 0.6,
    min_cluster_size: int = 50,
) -> tuple[list[ClusterAssignment], list[ClusterProfile], dict[int, tuple[str, str]]]:
    """Cluster per (language, active|inactive) group, ids unique across groups.

    The analysis workflow reads clusters per language and account-activity
    slice, so partitioning before the incremental pass keeps one slice's
    traffic from polluting another's centroids. Returns the merged
    assignments/profiles plus cluster_id -> (language, activity) so reports
    can say which slice a cluster came from.
    """
    groups: dict[tuple[str, str], list[TweetRecord]] = defaultdict(list)
    for t in tweets:
        status = status_by_account.get(t.account_id, Status.ACTIVE)
        activity = "inactive" if status in (Status.DEACTIVATED, Status.SUSPENDED) else "active"
        groups[(t.language, activity)].append(t)

    all_assignments: list[ClusterAssignment] = []
    all_profiles: list[ClusterProfile] = []
    cluster_group: dict[int, tuple[str, str]] = {}
    offset = 0
    for key in sorted(groups):
        assignments, profiles = cluster_stream(
            groups[key], embedder, threshold, min_cluster_size
        )
        for a in assignments:
            cid = a.cluster_id if a.cluster_id == NOISE else a.cluster_id + offset
            all_assignments.append(
                ClusterAssignment(a.tweet_id, cid, a.similarity_at_assignment)
            )
        top = -1
        for p in profiles:
            cid = p.cluster_id + offset
            all_profiles.append(ClusterProfile(cid, p.size, p.centroid, p.top_terms))
            cluster_group[cid] = key
            top = max(top, p.cluster_id)
        offset += top + 1
    return all_assignments, all_profiles, cluster_group


def ctfidf(
    assignments: Sequence[ClusterAssignment],
    tweets: Sequence[TweetRecord],
    top_n: int = 10,
) -> dict[int, list[tuple[str, float]]]:
    """Class-based TF-IDF terms per cluster.

    weight(t, c) = (count of t in c / total tokens in c)
                   * log(1 + A / f_t)
    with A the mean token count per cluster and f_t the total count of t
    over all clustered tweets. Noise tweets do not contribute. Ties sort
    alphabetically.
    """
    by_id = {t.tweet_id: t for t in tweets}
    cluster_tokens: dict[int, Counter] = defaultdict(Counter)
    for a in assignments:
        if a.cluster_id == NOISE:
            continue
        tweet = by_id.get(a.tweet_id)
        if tweet is None:
            continue
        cluster_tokens[a.cluster_id].update(tokenize(tweet.text))

    cluster_tokens = {c: toks for c, toks in cluster_tokens.items() if toks}
    if not cluster_tokens:
        return {}
    total_tokens = {c: sum(toks.values()) for c, toks in cluster_tokens.items()}
    mean_tokens = sum(total_tokens.values()) / len(cluster_tokens)
    global_freq: Counter = Counter()
    for toks in cluster_tokens.values():
        global_freq.update(toks)

    out: dict[int, list[tuple[str, float]]] = {}
    for cid, toks in cluster_tokens.items():
        weights = []
        for term, count in toks.items():
            tf = count / total_tokens[cid]
            weight = tf * np.log(1.0 + mean_tokens / global_freq[term])
            weights.append((term, float(weight)))
        weights.sort(key=lambda w: (-w[1], w[0]))
        out[cid] = weights[:top_n]
    return out


class Projector(Protocol):
    def project(self, vectors: np.ndarray, seed: int) -> np.ndarray:
        """(n, 2) coordinates for n input vectors; deterministic per seed."""
        ...


class NeighborProjector:
    """Default 2-D projector: UMAP when installed, otherwise t-SNE.

    Both are neighbor-embedding methods; runs are deterministic for a
    fixed seed because they execute single-threaded here.
    """

    def project(self, vectors: np.ndarray, seed: int) -> np.ndarray:
        n = len(vectors)
        try:
            from umap import UMAP  # optional dependency

            reducer = UMAP(
                n_components=2,
                random_state=seed,
                n_neighbors=min(15, max(2, n - 1)),
                n_jobs=1,
            )
            return np.asarray(reducer.fit_transform(vectors), dtype=np.float64)
        except ImportError:
            from sklearn.manifold import TSNE

            perplexity = max(1.0, min(30.0, (n - 1) / 3.0))
            reducer = TSNE(
                n_components=2,
                random_state=seed,
                perplexity=perplexity,
                init="pca",
                n_jobs=1,
            )
            return np.asarray(reducer.fit_transform(vectors), dtype=np.float64)


def project2d(
    ids: Sequence[str],
    vectors: np.ndarray,
    seed: int,
    projector: Optional[Projector] = None,
) -> list[tuple[str, float, float]]:
    """Project vectors to 2-D for visualization export.

    Output row order matches the input ids; coordinates are finite and
    reproducible under a fixed seed. Requires at least 2 points.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(ids) != len(vectors):
        raise ValueError("ids and vectors length mismatch")
    if len(ids) < 2:
        raise ValueError("need at least 2 points to project")
    proj = (projector or NeighborProjector()).project(vectors, seed)
    if not np.all(np.isfinite(proj)):
        raise RuntimeError("projector produced non-finite coordinates")
    return [(ids[i], float(proj[i, 0]), float(proj[i, 1])) for i in range(len(ids))]


@dataclass(frozen=True)
class LanguageStats:
    language: str
    tweet_count: int
    account_count: int
    inactive_share: float


def language_breakdown(
    tweets: Sequence[TweetRecord],
    status_by_account: dict[str, Status],
) -> list[LanguageStats]:
    """Tweet/account counts per language plus the inactive-account share.

    Inactive = account deactivated or suspended at its latest status
    check; accounts without a check count as active. Sorted by descending
    tweet count, then language code.
    """
    tweet_counts: Counter = Counter()
    inactive_counts: Counter = Counter()
    lang_accounts: dict[str, set[str]] = defaultdict(set)
    for t in tweets:
        tweet_counts[t.language] += 1
        lang_accounts[t.language].add(t.account_id)
        status = status_by_account.get(t.account_id, Status.ACTIVE)
        if status in (Status.DEACTIVATED, Status.SUSPENDED):
            inactive_counts[t.language] += 1
    out = [
        LanguageStats(
            language=lang,
            tweet_count=tweet_counts[lang],
            account_count=len(lang_accounts[lang]),
            inactive_share=inactive_counts[lang] / tweet_counts[lang],
        )
        for lang in tweet_counts
    ]
    out.sort(key=lambda s: (-s.tweet_count, s.language))
    return out
