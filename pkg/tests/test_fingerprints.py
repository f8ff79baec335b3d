import time
from datetime import datetime, timedelta
from ipaddress import IPv4Address

import pytest

import fingerprints
from errors import DomainError
from models import BaselineSpec, Consensus, FingerprintRecord, SybilSpec
from synth import generate


def test_stable_relay_has_one_fingerprint(make_consensus):
    stream = [make_consensus(h, [1]) for h in range(5)]
    [record] = fingerprints.track(stream).values()
    assert record.count == 1
    assert record.transitions == 0
    assert record.first_seen == stream[0].valid_after
    assert record.last_seen == stream[-1].valid_after


def test_cycling_relay_is_counted_in_first_seen_order(make_status, start):
    stream = [Consensus.from_statuses(start + timedelta(hours=h), [make_status(3 - h % 3, address="10.0.0.1")])
              for h in range(6)]
    record = fingerprints.track(stream)[IPv4Address("10.0.0.1")]
    assert record.count == 3
    assert record.fingerprints == (f"{3:040X}", f"{2:040X}", f"{1:040X}")
    assert record.transitions == 5


def test_track_rejects_unsorted_stream(make_consensus):
    with pytest.raises(ValueError):
        fingerprints.track([make_consensus(2, [1]), make_consensus(1, [1])])


def test_track_is_stable_under_replay():
    stream = generate(BaselineSpec(relay_count=40, hourly_join_rate=0.05, hourly_leave_rate=0.05,
                                   duration_hours=24, rng_seed=6)).consensuses
    assert fingerprints.track(stream) == fingerprints.track(stream)


def test_track_matches_generator_oracle():
    stream = generate(BaselineSpec(relay_count=60, hourly_join_rate=0.03, hourly_leave_rate=0.03,
                                   duration_hours=36, rng_seed=21),
                      [SybilSpec(name="cycler", group_size=6, join_time=3, fingerprint_churn=4)])
    records = fingerprints.track(stream.consensuses)
    assert set(records) == set(stream.address_fingerprints)
    for address, record in records.items():
        assert list(record.fingerprints) == stream.address_fingerprints[address]


def record(address, count):
    moment = datetime(2015, 10, 1)
    return FingerprintRecord(address=IPv4Address(address), fingerprints=tuple(f"{i:040X}" for i in range(count)),
                             first_seen=moment, last_seen=moment)


def test_rank_breaks_ties_by_address():
    records = [record("10.0.0.9", 3), record("10.0.0.20", 24), record("10.0.0.3", 24)]
    ranked = fingerprints.rank(records)
    assert [str(r.address) for r in ranked] == ["10.0.0.3", "10.0.0.20", "10.0.0.9"]
    assert fingerprints.top_changers(records, 1) == ranked[:1]
    assert fingerprints.top_changers(records, 10) == ranked
    with pytest.raises(ValueError):
        fingerprints.top_changers(records, 0)


def test_ec2_injection_tops_the_ranking():
    baseline = BaselineSpec(relay_count=300, hourly_join_rate=0.01, hourly_leave_rate=0.01,
                            duration_hours=48, rng_seed=88)
    ec2 = SybilSpec(name="ec2", group_size=88, join_time=0, fingerprint_churn=24)
    stream = generate(baseline, [ec2])
    records = fingerprints.track(stream.consensuses)
    top = fingerprints.top_changers(records, 88)

    assert [r.count for r in top] == [24] * 88
    assert [r.transitions for r in top] == [23] * 88
    assert {fp for r in top for fp in r.fingerprints} == set(stream.ledger["ec2"])
    assert fingerprints.rank(records)[88].count == 1


def test_prefix_cost_for_seven_digits():
    operations, seconds = fingerprints.prefix_collision_cost(7, 90_000_000)
    assert operations == 2 ** 34
    assert seconds == pytest.approx(190.0, rel=0.01)


def test_prefix_cost_grows_by_32_per_digit():
    assert fingerprints.prefix_collision_cost(1) == (16, None)
    for n in range(1, 16):
        assert fingerprints.prefix_collision_cost(n + 1)[0] == 32 * fingerprints.prefix_collision_cost(n)[0]


@pytest.mark.parametrize("digits, rate", [(0, None), (17, None), (True, None), (2.5, None), (7, 0), (7, -1.0)])
def test_prefix_cost_domain(digits, rate):
    with pytest.raises(DomainError):
        fingerprints.prefix_collision_cost(digits, rate)


def test_shared_prefix_and_table():
    moment = datetime(2015, 10, 1)
    prefixed = FingerprintRecord(address=IPv4Address("54.0.0.1"),
                                 fingerprints=("ABCD" + "0" * 36, "ABCE" + "1" * 36),
                                 first_seen=moment, last_seen=moment, transitions=1)
    assert fingerprints.shared_prefix(prefixed) == "ABC"
    table = fingerprints.format_table([prefixed])
    assert "54.0.0.1" in table
    assert table.splitlines()[1].endswith("ABC")


def test_records_frame_columns():
    frame = fingerprints.records_frame([record("10.0.0.1", 2)])
    assert list(frame.columns) == ["address", "distinct_fingerprints", "transitions",
                                   "first_seen", "last_seen", "fingerprints"]
    row = frame.iloc[0]
    assert row["distinct_fingerprints"] == 2
    assert row["first_seen"] == "2015-10-01T00:00:00"
    assert row["fingerprints"] == f"{0:040X};{1:040X}"


@pytest.mark.slow
def test_one_month_of_tracking_within_budget():
    stream = generate(BaselineSpec(relay_count=3000, hourly_join_rate=0.002, hourly_leave_rate=0.002,
                                   duration_hours=720, rng_seed=30),
                      [SybilSpec(name="ec2", group_size=88, join_time=0, fingerprint_churn=24)])
    started = time.perf_counter()
    top = fingerprints.top_changers(fingerprints.track(stream.consensuses), 20)
    assert time.perf_counter() - started < 300
    assert all(r.count == 24 for r in top)
