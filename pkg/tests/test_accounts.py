import json
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from profilescan.accounts import (
    AccountRecord,
    Status,
    StatusCheck,
    account_from_json,
    bulk_creation_windows,
    exact_value_spikes,
    latest_status,
    load_accounts,
    load_status_checks,
    metric_summary,
    metric_value,
    status_breakdown,
)

UTC = timezone.utc
COLLECTED = datetime(2023, 3, 15, tzinfo=UTC)


def make_account(i, followers=0, following=0, tweets=0, created=None):
    return AccountRecord(
        id=f"a{i}",
        username=f"user{i}",
        display_name=f"User {i}",
        created_at=created or datetime(2022, 1, 1, tzinfo=UTC),
        followers_count=followers,
        following_count=following,
        tweet_count=tweets,
    )


class TestIngestion:
    def test_platform_field_names(self):
        record = account_from_json(
            {
                "id": 123,
                "username": "jane",
                "name": "Jane D",
                "created_at": "2023-02-17T10:00:00Z",
                "location": "KSA",
                "description": "bio",
                "public_metrics": {
                    "followers_count": 106,
                    "following_count": 2,
                    "tweet_count": 14,
                    "listed_count": 0,
                },
                "protected": False,
                "verified": False,
            }
        )
        assert record.id == "123"
        assert record.display_name == "Jane D"
        assert record.followers_count == 106
        assert record.following_count == 2
        assert record.created_at.year == 2023

    def test_flat_field_names_also_accepted(self):
        record = account_from_json(
            {
                "id": "9",
                "username": "u",
                "created_at": "2022-05-01T00:00:00+00:00",
                "followers_count": 7,
            }
        )
        assert record.followers_count == 7

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            make_account(0, followers=-1)

    def test_jsonl_roundtrip(self, tmp_path):
        rows = [
            {"id": "1", "username": "a", "created_at": "2023-01-01T00:00:00Z",
             "public_metrics": {"followers_count": 5}},
            {"id": "2", "username": "b", "created_at": "2023-01-02T00:00:00Z"},
        ]
        path = tmp_path / "accounts.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        loaded = load_accounts(path)
        assert [a.id for a in loaded] == ["1", "2"]

    def test_status_csv(self, tmp_path):
        path = tmp_path / "status.csv"
        path.write_text(
            "account_id,checked_at,status\n"
            "a1,2023-12-01T00:00:00Z,active\n"
            "a2,2023-12-01T00:00:00Z,suspended\n"
        )
        checks = load_status_checks(path)
        assert checks[0].status == Status.ACTIVE
        assert checks[1].status == Status.SUSPENDED


class TestMetricSummary:
    def test_median_example(self):
        accounts = [make_account(i, followers=f) for i, f in enumerate([60, 60, 1000])]
        summary = metric_summary(accounts, "followers_count")
        assert summary.median == 60

    def test_even_count_median_is_mean_of_central_pair(self):
        accounts = [make_account(i, followers=f) for i, f in enumerate([1, 3, 5, 100])]
        summary = metric_summary(accounts, "followers_count")
        assert summary.median == 4.0

    def test_matches_sorted_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            values = rng.integers(0, 10_000, size=int(rng.integers(1, 200)))
            accounts = [make_account(i, followers=int(v)) for i, v in enumerate(values)]
            summary = metric_summary(accounts, "followers_count")
            s = sorted(values)
            n = len(s)
            med = s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2
            assert summary.median == med
            assert summary.mean == pytest.approx(sum(s) / n)
            assert summary.count == n

    def test_empty_set_raises(self):
        with pytest.raises(ValueError):
            metric_summary([], "followers_count")

    def test_tweets_per_day(self):
        created = COLLECTED - timedelta(days=100)
        account = make_account(0, tweets=250, created=created)
        assert metric_value(account, "tweets_per_day", COLLECTED) == 2.5

    def test_tweets_per_day_minimum_age_one_day(self):
        account = make_account(0, tweets=50, created=COLLECTED - timedelta(hours=3))
        assert metric_value(account, "tweets_per_day", COLLECTED) == 50.0


class TestExactValueSpikes:
    def test_planted_thirty_percent_spike(self):
        n = 1000
        rng = np.random.default_rng(1)
        accounts = [make_account(i, followers=7) for i in range(300)]
        accounts += [
            make_account(300 + i, followers=int(rng.integers(100, 100_000)))
            for i in range(n - 300)
        ]
        spikes = exact_value_spikes(accounts, "followers_count", 0.05)
        assert spikes[0][0] == 7
        assert spikes[0][1] == 300
        assert spikes[0][2] == pytest.approx(0.30)

    def test_all_distinct_no_spike(self):
        accounts = [make_account(i, followers=i) for i in range(1000)]
        assert exact_value_spikes(accounts, "followers_count", 0.01) == []

    def test_published_cluster_shares(self):
        # 1,996 of 7,723 at exactly 106 followers (25.84%); 2,175 following
        # exactly two (28.16%)
        total = 7723
        accounts = []
        for i in range(total):
            followers = 106 if i < 1996 else 100_000 + i
            following = 2 if i < 2175 else 50_000 + i
            accounts.append(make_account(i, followers=followers, following=following))
        spike_f = exact_value_spikes(accounts, "followers_count", 0.2)
        assert spike_f == [(106.0, 1996, pytest.approx(1996 / 7723))]
        assert round(100 * spike_f[0][2], 2) == 25.84
        spike_g = exact_value_spikes(accounts, "following_count", 0.2)
        assert spike_g[0][1] == 2175
        assert round(100 * spike_g[0][2], 2) == 28.16

    def test_counts_equal_frequency_map_oracle(self):
        rng = np.random.default_rng(2)
        accounts = [make_account(i, followers=int(rng.integers(0, 30))) for i in range(500)]
        from collections import Counter

        freq = Counter(a.followers_count for a in accounts)
        for value, count, share in exact_value_spikes(accounts, "followers_count", 0.0):
            assert freq[value] == count
            assert share == count / 500


class TestBulkCreationWindows:
    def test_uniform_background_no_windows(self):
        accounts = [
            make_account(i, created=datetime(2023, 1, 1, tzinfo=UTC) + timedelta(days=i))
            for i in range(60)
        ]
        assert bulk_creation_windows(accounts, min_count=2) == []

    def test_planted_burst_detected_exactly(self):
        burst_day = datetime(2023, 2, 17, tzinfo=UTC)
        accounts = [
            make_account(i, created=datetime(2023, 1, 1, tzinfo=UTC) + timedelta(days=i % 40))
            for i in range(40)
        ]
        accounts += [
            make_account(1000 + i, created=burst_day + timedelta(seconds=i))
            for i in range(500)
        ]
        windows = bulk_creation_windows(accounts, min_count=100)
        assert len(windows) == 1
        assert windows[0].start == burst_day
        assert windows[0].count == 500

    def test_peak_day_count_754(self):
        day = datetime(2023, 2, 16, tzinfo=UTC)
        accounts = [
            make_account(i, created=day + timedelta(minutes=i % 1440)) for i in range(754)
        ]
        windows = bulk_creation_windows(accounts, min_count=700)
        assert windows[0].count == 754

    def test_adjacent_windows_merge(self):
        accounts = []
        for day in (16, 17, 18):
            base = datetime(2023, 2, day, tzinfo=UTC)
            accounts += [make_account(f"{day}-{i}", created=base) for i in range(150)]
        windows = bulk_creation_windows(accounts, min_count=100)
        assert len(windows) == 1
        assert windows[0].count == 450
        assert windows[0].end - windows[0].start == timedelta(days=3)

    def test_monotone_in_min_count(self):
        # raising min_count never flags a region that was not flagged before
        rng = np.random.default_rng(3)
        accounts = [
            make_account(
                i,
                created=datetime(2023, 1, 1, tzinfo=UTC)
                + timedelta(hours=float(rng.uniform(0, 24 * 90))),
            )
            for i in range(2000)
        ]
        previous = None
        for min_count in (5, 10, 20, 40, 80):
            windows = bulk_creation_windows(accounts, min_count=min_count)
            if previous is not None:
                for w in windows:
                    assert any(p.start <= w.start and w.end <= p.end for p in previous)
            previous = windows


class TestMetricHistogram:
    def test_decade_buckets_cover_all_values(self):
        from profilescan.accounts import metric_histogram

        accounts = [make_account(i, followers=f) for i, f in enumerate([0, 5, 42, 999, 12345])]
        hist = metric_histogram(accounts, "followers_count")
        assert sum(c for _, _, c in hist) == 5
        assert hist[0] == (0.0, 1.0, 1)
        for lo, hi, _ in hist:
            assert hi == 1.0 or hi == lo * 10

    def test_empty(self):
        from profilescan.accounts import metric_histogram

        assert metric_histogram([], "followers_count") == []


class TestStatusBreakdown:
    def check(self, aid, status, when=None):
        return StatusCheck(aid, when or datetime(2023, 12, 1, tzinfo=UTC), status)

    def test_all_active(self):
        checks = [self.check(f"a{i}", Status.ACTIVE) for i in range(5)]
        assert status_breakdown(checks) == {Status.ACTIVE: 1.0}

    def test_shares_sum_to_one(self):
        rng = np.random.default_rng(4)
        statuses = list(Status)
        checks = [
            self.check(f"a{i}", statuses[int(rng.integers(0, 3))]) for i in range(500)
        ]
        breakdown = status_breakdown(checks)
        assert sum(breakdown.values()) == pytest.approx(1.0, abs=1e-9)

    def test_latest_check_wins(self):
        early = datetime(2023, 6, 1, tzinfo=UTC)
        late = datetime(2023, 12, 1, tzinfo=UTC)
        checks = [
            self.check("a1", Status.ACTIVE, early),
            self.check("a1", Status.SUSPENDED, late),
        ]
        assert latest_status(checks)["a1"] == Status.SUSPENDED
        assert status_breakdown(checks) == {Status.SUSPENDED: 1.0}

    def test_group_filter(self):
        checks = [
            self.check("fake1", Status.SUSPENDED),
            self.check("fake2", Status.ACTIVE),
            self.check("real1", Status.ACTIVE),
        ]
        breakdown = status_breakdown(checks, account_ids={"fake1", "fake2"})
        assert breakdown[Status.SUSPENDED] == 0.5

    def test_shares_times_total_are_integer_counts(self):
        rng = np.random.default_rng(5)
        statuses = list(Status)
        n = 400
        checks = [self.check(f"a{i}", statuses[int(rng.integers(0, 3))]) for i in range(n)]
        from collections import Counter

        raw = Counter(latest_status(checks).values())
        for status, share in status_breakdown(checks).items():
            count = share * n
            assert count == pytest.approx(round(count))
            assert round(count) == raw[status]
