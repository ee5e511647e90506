"""Account-metadata analytics: metric summaries, spikes, bursts, status.

Accounts are ingested from JSON Lines using the platform's metadata field
names (nested ``public_metrics`` accepted and flattened); status checks
come from CSV (account_id, checked_at, status). Everything here is pure
computation over immutable snapshots.
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence


class AccountGroup(str, Enum):
    REAL_IMAGE = "REAL_IMAGE"
    FAKE_IMAGE = "FAKE_IMAGE"


class Status(str, Enum):
    ACTIVE = "ACTIVE"
    DEACTIVATED = "DEACTIVATED"
    SUSPENDED = "SUSPENDED"


@dataclass(frozen=True)
class AccountRecord:
    id: str
    username: str
    display_name: str
    created_at: datetime
    description: str = ""
    location: Optional[str] = None
    url: Optional[str] = None
    followers_count: int = 0
    following_count: int = 0
    tweet_count: int = 0
    listed_count: int = 0
    protected: bool = False
    verified: bool = False
    image_id: Optional[str] = None
    group: Optional[AccountGroup] = None

    def __post_init__(self):
        for name in ("followers_count", "following_count", "tweet_count", "listed_count"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class StatusCheck:
    account_id: str
    checked_at: datetime
    status: Status


def _parse_ts(value) -> datetime:
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    return dt if dt.tzinfo else dt.replace(tzinfo=timezone.utc)


def account_from_json(d: dict) -> AccountRecord:
    metrics = d.get("public_metrics", {})
    group = d.get("group")
    return AccountRecord(
        id=str(d["id"]),
        username=d["username"],
        display_name=d.get("name", d.get("display_name", "")),
        created_at=_parse_ts(d["created_at"]),
        description=d.get("description", ""),
        location=d.get("location"),
        url=d.get("url"),
        followers_count=int(metrics.get("followers_count", d.get("followers_count", 0))),
        following_count=int(metrics.get("following_count", d.get("following_count", 0))),
        tweet_count=int(metrics.get("tweet_count", d.get("tweet_count", 0))),
        listed_count=int(metrics.get("listed_count", d.get("listed_count", 0))),
        protected=bool(d.get("protected", False)),
        verified=bool(d.get("verified", False)),
        image_id=d.get("image_id"),
        group=AccountGroup(group) if group else None,
    )


def load_accounts(path: Path) -> list[AccountRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(account_from_json(json.loads(line)))
    return out


def load_status_checks(path: Path) -> list[StatusCheck]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "account_id":
                continue
            out.append(StatusCheck(row[0], _parse_ts(row[1]), Status(row[2].upper())))
    return out


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    median: float
    q1: float
    q3: float
    count: int


def _median(sorted_values: Sequence[float]) -> float:
    n = len(sorted_values)
    if n % 2 == 1:
        return float(sorted_values[n // 2])
    return (sorted_values[n // 2 - 1] + sorted_values[n // 2]) / 2.0


def metric_value(account: AccountRecord, metric: str, now: Optional[datetime] = None) -> float:
    """One metric for one account; `tweets_per_day` is derived.

    Tweets per day = tweet_count / max(1, whole days since creation),
    measured against `now` (the corpus collection timestamp).
    """
    if metric == "tweets_per_day":
        if now is None:
            raise ValueError("tweets_per_day needs the collection timestamp")
        age_days = max(1, int((now - account.created_at).total_seconds() // 86400))
        return account.tweet_count / age_days
    return float(getattr(account, metric))


def metric_summary(
    accounts: Sequence[AccountRecord], metric: str, now: Optional[datetime] = None
) -> MetricSummary:
    """Exact order-statistic summary of one metric.

    Median of an even count is the mean of the two central order
    statistics; quartiles are Tukey hinges computed as medians of the
    lower/upper halves (middle element excluded for odd counts).
    """
    if not accounts:
        raise ValueError("empty account set")
    values = sorted(metric_value(a, metric, now) for a in accounts)
    n = len(values)
    q1 = _median(values[: n // 2]) if n >= 2 else values[0]
    q3 = _median(values[(n + 1) // 2 :]) if n >= 2 else values[0]
    return MetricSummary(
        mean=sum(values) / n,
        median=_median(values),
        q1=q1,
        q3=q3,
        count=n,
    )


def exact_value_spikes(
    accounts: Sequence[AccountRecord],
    metric: str,
    min_share: float,
    now: Optional[datetime] = None,
) -> list[tuple[float, int, float]]:
    """Metric values whose exact-count share of the group is >= min_share.

    Returns (value, count, share) sorted by descending share, then value.
    Large groups of accounts sharing one exact value (e.g. an identical
    follower count) are a coordination signature.
    """
    if not accounts:
        return []
    counts = Counter(metric_value(a, metric, now) for a in accounts)
    n = len(accounts)
    spikes = [
        (value, count, count / n)
        for value, count in counts.items()
        if count / n >= min_share
    ]
    spikes.sort(key=lambda t: (-t[2], t[0]))
    return spikes


@dataclass(frozen=True)
class BulkWindow:
    start: datetime
    end: datetime
    count: int


def bulk_creation_windows(
    accounts: Sequence[AccountRecord],
    window: timedelta = timedelta(days=1),
    min_count: int = 100,
) -> list[BulkWindow]:
    """Creation-time windows holding at least min_count new accounts.

    Creations are bucketed into epoch-aligned windows of the given width;
    qualifying adjacent buckets merge into one reported window. Raising
    min_count can only remove windows, never add them.
    """
    seconds = window.total_seconds()
    buckets: Counter = Counter()
    for a in accounts:
        buckets[int(a.created_at.timestamp() // seconds)] += 1
    qualifying = sorted(b for b, c in buckets.items() if c >= min_count)
    out: list[BulkWindow] = []
    run: list[int] = []
    for b in qualifying:
        if run and b == run[-1] + 1:
            run.append(b)
        else:
            if run:
                out.append(_window_from_run(run, buckets, seconds))
            run = [b]
    if run:
        out.append(_window_from_run(run, buckets, seconds))
    return out


def _window_from_run(run: list[int], buckets: Counter, seconds: float) -> BulkWindow:
    start = datetime.fromtimestamp(run[0] * seconds, tz=timezone.utc)
    end = datetime.fromtimestamp((run[-1] + 1) * seconds, tz=timezone.utc)
    return BulkWindow(start, end, sum(buckets[b] for b in run))


def metric_histogram(
    accounts: Sequence[AccountRecord], metric: str, now: Optional[datetime] = None
) -> list[tuple[float, float, int]]:
    """Decade-bucket histogram (lo, hi, count) of one metric.

    Buckets: [0,1), [1,10), [10,100), ... wide enough for follower-style
    heavy tails; used for the CSV report export.
    """
    values = [metric_value(a, metric, now) for a in accounts]
    if not values:
        return []
    top = max(values)
    edges = [0.0, 1.0]
    while edges[-1] <= top:
        edges.append(edges[-1] * 10.0)
    out = []
    for lo, hi in zip(edges, edges[1:]):
        count = sum(1 for v in values if lo <= v < hi)
        if count:
            out.append((lo, hi, count))
    return out


def latest_status(checks: Iterable[StatusCheck]) -> dict[str, Status]:
    """Latest status per account (by checked_at; ties keep the later row)."""
    latest: dict[str, StatusCheck] = {}
    for check in checks:
        cur = latest.get(check.account_id)
        if cur is None or check.checked_at >= cur.checked_at:
            latest[check.account_id] = check
    return {aid: c.status for aid, c in latest.items()}


def status_breakdown(
    checks: Sequence[StatusCheck],
    account_ids: Optional[set[str]] = None,
) -> dict[Status, float]:
    """Share of accounts per status (latest check wins), summing to 1.

    `account_ids` optionally restricts the breakdown to one group, e.g.
    the fake-image accounts.
    """
    statuses = latest_status(checks)
    if account_ids is not None:
        statuses = {a: s for a, s in statuses.items() if a in account_ids}
    if not statuses:
        return {}
    counts = Counter(statuses.values())
    total = sum(counts.values())
    return {status: counts.get(status, 0) / total for status in Status if status in counts}
