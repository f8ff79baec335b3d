import math
import random
import time
from datetime import datetime, timedelta

import pytest

import churn
from errors import EmptyConsensus, InvalidWindow
from models import BaselineSpec, Consensus, FilterSpec, FingerprintHistory, Flag, SybilSpec
from synth import generate


def test_churn_pair_example(make_consensus):
    before = make_consensus(0, [1, 2, 3])
    after = make_consensus(1, [2, 3, 4, 5])
    alpha_new, alpha_left = churn.churn_pair(before, after)
    assert alpha_new == 0.5
    assert alpha_left == pytest.approx(1 / 3)


def test_churn_pair_identical_is_zero(make_consensus):
    assert churn.churn_pair(make_consensus(0, [1, 2]), make_consensus(1, [1, 2])) == (0.0, 0.0)


def test_churn_pair_disjoint_is_one(make_consensus):
    assert churn.churn_pair(make_consensus(0, [1, 2]), make_consensus(1, [3, 4])) == (1.0, 1.0)


def test_churn_pair_empty_raises(make_consensus):
    empty = Consensus(valid_after=datetime(2015, 10, 1, 1))
    with pytest.raises(EmptyConsensus):
        churn.churn_pair(make_consensus(0, [1]), empty)
    with pytest.raises(EmptyConsensus):
        churn.churn_pair(make_consensus(0, [1]), make_consensus(1, [2]), flag=Flag.GUARD)


def test_churn_pair_per_flag(make_consensus, make_status, start):
    before = Consensus.from_statuses(start, [make_status(1, flags=("Guard",)), make_status(2, flags=("Guard",)),
                                             make_status(3)])
    after = Consensus.from_statuses(start + timedelta(hours=1),
                                    [make_status(1, flags=("Guard",)), make_status(3, flags=("Guard",))])
    assert churn.churn_pair(before, after, Flag.GUARD) == (0.5, 0.5)


@pytest.mark.slow
def test_churn_pair_matches_set_oracle(make_status, start):
    rng = random.Random(11)
    relays = [make_status(i) for i in range(800)]
    started = time.perf_counter()
    for _ in range(1000):
        before = set(rng.sample(range(800), rng.randint(1, 500)))
        after = set(rng.sample(range(800), rng.randint(1, 500)))
        alpha_new, alpha_left = churn.churn_pair(
            Consensus.from_statuses(start, (relays[i] for i in before)),
            Consensus.from_statuses(start + timedelta(hours=1), (relays[i] for i in after)),
        )
        assert abs(alpha_new - len(after - before) / len(after)) <= 1e-12
        assert abs(alpha_left - len(before - after) / len(before)) <= 1e-12
        assert 0.0 <= alpha_new <= 1.0 and 0.0 <= alpha_left <= 1.0
    assert time.perf_counter() - started < 10


def test_smooth_example():
    assert churn.smooth([0.0, 0.0, 0.6], 3) == pytest.approx([0.0, 0.0, 0.2])


def test_smooth_window_one_is_identity():
    values = [0.1, 0.5, 0.2, 0.0]
    assert churn.smooth(values, 1) == values


def test_smooth_edge_cases():
    assert churn.smooth([], 4) == []
    assert churn.smooth([0.25] * 10, 4) == [0.25] * 10
    with pytest.raises(InvalidWindow):
        churn.smooth([0.1], 0)


def test_smooth_matches_trailing_mean_and_stays_in_range():
    rng = random.Random(5)
    for _ in range(200):
        values = [rng.random() for _ in range(rng.randint(1, 60))]
        w = rng.randint(1, 20)
        smoothed = churn.smooth(values, w)
        assert len(smoothed) == len(values)
        for i, value in enumerate(smoothed):
            window = values[max(0, i - w + 1):i + 1]
            assert value == pytest.approx(sum(window) / len(window), abs=1e-12)
            assert min(values) <= value <= max(values)


def test_churn_series_marks_gaps(make_consensus):
    stream = [make_consensus(0, [1, 2]), make_consensus(1, [1, 2, 3]), make_consensus(3, [1, 3]),
              make_consensus(4, [1, 3])]
    series = churn.churn_series(stream)[None]
    assert [p.timestamp.hour for p in series.points] == [1, 4]
    assert series.points[0].alpha_new == pytest.approx(1 / 3)
    assert series.gaps == [(stream[1].valid_after, stream[2].valid_after)]


def test_churn_series_rejects_unsorted_stream(make_consensus):
    with pytest.raises(ValueError):
        churn.churn_series([make_consensus(1, [1]), make_consensus(0, [1])])


def test_churn_series_undefined_flag_points(make_consensus):
    stream = [make_consensus(0, [1, 2]), make_consensus(1, [1, 2])]
    series = churn.churn_series(stream, flags=[None, Flag.EXIT])
    assert series[None].points[0].alpha_new == 0.0
    assert series[Flag.EXIT].points[0].undefined
    assert churn.alerts(series[Flag.EXIT], 0.01, 1) == []


def test_alerts_strictly_above_threshold(make_consensus):
    # four relays, one joins: alpha_new = 0.2
    stream = [make_consensus(0, range(4)), make_consensus(1, range(5))]
    series = churn.churn_series(stream)[None]
    assert churn.alerts(series, 0.2, 1) == []
    raised = churn.alerts(series, 0.19, 1)
    assert [(a.direction, a.value) for a in raised] == [(churn.NEW, pytest.approx(0.2))]


def test_sweep_counts_are_monotone(make_consensus):
    rng = random.Random(2)
    stream = [make_consensus(h, rng.sample(range(300), 200)) for h in range(48)]
    series = churn.churn_series(stream)[None]
    thresholds = [0.005, 0.01, 0.05, 0.1, 0.3, 0.6]
    sweep = churn.sweep_alerts(series, thresholds, [1, 4, 8])
    assert list(sweep.columns) == ["window", "threshold", "count"]
    assert len(sweep) == 18
    for _, rows in sweep.groupby("window"):
        counts = rows.sort_values("threshold")["count"].tolist()
        assert counts == sorted(counts, reverse=True)


def test_new_fingerprint_alert(make_consensus):
    history = FingerprintHistory()
    count, alert = churn.new_fingerprint_alert(history, make_consensus(0, range(100)), threshold=50)
    assert (count, alert) == (100, True)
    count, alert = churn.new_fingerprint_alert(history, make_consensus(1, range(49, 150)), threshold=50)
    assert (count, alert) == (50, True)
    count, alert = churn.new_fingerprint_alert(history, make_consensus(2, range(10, 160)), threshold=50)
    assert (count, alert) == (10, False)
    assert churn.median_new_fingerprints(history) == 50


def test_churn_pair_swaps_under_reversal(make_status, start):
    rng = random.Random(23)
    relays = [make_status(i) for i in range(300)]
    for _ in range(200):
        before = Consensus.from_statuses(start, (relays[i] for i in rng.sample(range(300), rng.randint(1, 200))))
        after = Consensus.from_statuses(start + timedelta(hours=1),
                                        (relays[i] for i in rng.sample(range(300), rng.randint(1, 200))))
        alpha_new, alpha_left = churn.churn_pair(before, after)
        assert churn.churn_pair(after, before) == (alpha_left, alpha_new)


def test_new_fingerprint_total_ignores_replay_order(make_consensus):
    rng = random.Random(31)
    stream = [make_consensus(hour, rng.sample(range(500), 120)) for hour in range(30)]
    totals = set()
    for _ in range(5):
        history = FingerprintHistory()
        for consensus in rng.sample(stream, len(stream)):
            churn.new_fingerprint_alert(history, consensus, threshold=50)
        totals.add(sum(count for _, count in history.new_counts))
        assert len(history.seen) == len(set().union(*(c.fingerprints() for c in stream)))
    assert len(totals) == 1


def test_churn_frame_includes_gap_rows(make_consensus):
    stream = [make_consensus(0, [1, 2]), make_consensus(1, [1, 2, 3]), make_consensus(5, [1, 3])]
    frame = churn.churn_frame(churn.churn_series(stream), threshold=0.012, w=1)
    assert frame["timestamp"].tolist() == ["2015-10-01T01:00:00", "2015-10-01T01:00:00/2015-10-01T05:00:00"]
    assert frame.iloc[1]["alpha_new"] == churn.GAP
    assert frame.iloc[0]["alert"] == 1


def test_churn_summary(make_consensus):
    stream = [make_consensus(0, [1, 2]), make_consensus(1, [1, 2]), make_consensus(2, [1, 3])]
    summary = churn.churn_summary(churn.churn_series(stream))
    row = summary.iloc[0]
    assert row["count"] == 4
    assert row["max"] == 0.5
    assert row["min"] == 0.0


def test_group_counts_daily(make_consensus):
    stream = [make_consensus(h, range(h + 1)) for h in range(30)]
    frame = churn.group_counts(stream, FilterSpec(address_prefix="10.0.0.1"), daily=True)
    assert frame["timestamp"].tolist() == ["2015-10-01T00:00:00", "2015-10-02T00:00:00"]
    # 10.0.0.1 and 10.0.0.10-19 match the prefix once present
    assert frame["count"].tolist() == [0, 11]


def test_baseline_without_churn_is_flat():
    stream = generate(BaselineSpec(relay_count=50, duration_hours=12, rng_seed=4))
    series = churn.churn_series(stream.consensuses)[None]
    assert all(p.alpha_new == 0.0 and p.alpha_left == 0.0 for p in series.points)


def test_injected_group_spike_is_hand_computable():
    baseline = BaselineSpec(relay_count=200, duration_hours=10, rng_seed=1)
    group = SybilSpec(name="half", group_size=100, join_time=5)
    stream = generate(baseline, [group])
    series = churn.churn_series(stream.consensuses)[None]
    spike = next(p for p in series.points if p.timestamp == stream.consensuses[5].valid_after)
    assert spike.alpha_new == pytest.approx(100 / 300)
    assert spike.alpha_left == 0.0


@pytest.mark.slow
def test_simultaneous_join_alerts_only_at_injection():
    # 0.002 per hour keeps the benign churn well below the 0.012 threshold
    baseline = BaselineSpec(relay_count=3000, hourly_join_rate=0.002, hourly_leave_rate=0.002,
                            duration_hours=720, rng_seed=2015)
    group = SybilSpec(name="11BX1371", group_size=150, join_time=300)
    started = time.perf_counter()
    stream = generate(baseline, [group])
    series = churn.churn_series(stream.consensuses)[None]
    raised = churn.alerts(series, 0.012, 1)

    assert [(a.timestamp, a.direction) for a in raised] == [(stream.consensuses[300].valid_after, churn.NEW)]
    assert raised[0].value > 150 / 3300
    assert time.perf_counter() - started < 300


def test_gap_threshold_follows_spacing(make_consensus):
    stream = [make_consensus(0, [1]), make_consensus(2, [1])]
    assert churn.churn_series(stream)[None].gaps
    assert not churn.churn_series(stream, spacing=timedelta(hours=2))[None].gaps
    assert math.isclose(churn.HOUR.total_seconds(), 3600)
