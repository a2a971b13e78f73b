import numpy as np
import pytest

from aerosense.geometry import default_airspace
from aerosense.simulator import MessageTable, SimConfig, generate_traffic
from aerosense.snapshots import (
    Snapshot,
    build_snapshot,
    chronological_split,
    count_labels,
    make_dataset,
    split_sizes,
    time_grid,
)

from helpers import message_record, oracle_counts, oracle_snapshot, random_stream, table_from_records

AIRSPACE = default_airspace()


def snapshot_records(snap):
    return [dict(r) for r in snap.aircraft.records()]


def test_keeps_latest_in_window():
    recs = [message_record("A", t, 0.0, 50.0, 5.0, AIRSPACE, heading=float(t))
            for t in (90.0, 94.0, 98.0)]
    snap = build_snapshot(table_from_records(recs), 100.0, AIRSPACE, delta=8.0)
    assert len(snap) == 1
    assert snap.aircraft.t[0] == 98.0


def test_out_of_scope_message_is_excluded():
    recs = [message_record("A", 99.0, 500.0, 0.0, 5.0, AIRSPACE)]
    assert len(build_snapshot(table_from_records(recs), 100.0, AIRSPACE)) == 0


def test_out_of_scope_latest_falls_back_to_earlier_in_scope():
    recs = [message_record("A", 95.0, 0.0, 50.0, 5.0, AIRSPACE),
            message_record("A", 99.0, 500.0, 0.0, 5.0, AIRSPACE)]
    snap = build_snapshot(table_from_records(recs), 100.0, AIRSPACE)
    assert snap.aircraft.t.tolist() == [95.0]


def test_empty_window():
    recs = [message_record("A", 10.0, 0.0, 0.0, 1.0, AIRSPACE)]
    assert len(build_snapshot(table_from_records(recs), 100.0, AIRSPACE)) == 0
    assert len(build_snapshot(MessageTable.empty(), 100.0, AIRSPACE)) == 0


def test_window_is_closed_on_both_ends():
    recs = [message_record("A", 92.0, 0.0, 0.0, 1.0, AIRSPACE),
            message_record("B", 100.0, 0.0, 0.0, 1.0, AIRSPACE),
            message_record("C", 100.5, 0.0, 0.0, 1.0, AIRSPACE)]
    snap = build_snapshot(table_from_records(recs), 100.0, AIRSPACE, delta=8.0)
    assert snap.aircraft.ids.tolist() == ["A", "B"]


def test_tie_goes_to_later_row():
    recs = [message_record("A", 98.0, 0.0, 10.0, 1.0, AIRSPACE, heading=10.0),
            message_record("A", 98.0, 0.0, 10.0, 1.0, AIRSPACE, heading=20.0)]
    snap = build_snapshot(table_from_records(recs), 100.0, AIRSPACE)
    assert snap.aircraft.heading.tolist() == [20.0]


def test_invalid_messages_are_skipped():
    good = message_record("A", 95.0, 0.0, 10.0, 1.0, AIRSPACE)
    bad = message_record("A", 99.0, 0.0, 10.0, 1.0, AIRSPACE, v_gs=-3.0)
    snap = build_snapshot(table_from_records([good, bad]), 100.0, AIRSPACE)
    assert snap.aircraft.t.tolist() == [95.0]


def test_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        build_snapshot(MessageTable.empty(), 0.0, AIRSPACE, delta=0.0)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(17)
    for _ in range(200):
        recs = random_stream(rng, AIRSPACE, t0=1000.0)
        snap = build_snapshot(table_from_records(recs), 1000.0, AIRSPACE, delta=8.0)
        assert snapshot_records(snap) == oracle_snapshot(recs, 1000.0, 8.0, AIRSPACE)


def test_sorted_and_unsorted_paths_agree():
    rng = np.random.default_rng(4)
    for _ in range(50):
        recs = random_stream(rng, AIRSPACE, t0=500.0)
        recs_sorted = sorted(recs, key=lambda r: r["t"])  # stable: keeps tie order
        a = build_snapshot(table_from_records(recs_sorted), 500.0, AIRSPACE, presorted=True)
        b = build_snapshot(table_from_records(recs_sorted), 500.0, AIRSPACE, presorted=False)
        assert a == b


def test_arrival_order_does_not_matter_without_ties():
    rng = np.random.default_rng(8)
    recs = random_stream(rng, AIRSPACE, t0=300.0, n_messages=40)
    seen = {}
    unique = []
    for r in recs:  # drop exact timestamp ties per aircraft
        key = (r["aircraft_id"], r["t"])
        if key not in seen:
            seen[key] = True
            unique.append(r)
    base = build_snapshot(table_from_records(unique), 300.0, AIRSPACE)
    for _ in range(10):
        perm = [unique[i] for i in rng.permutation(len(unique))]
        assert build_snapshot(table_from_records(perm), 300.0, AIRSPACE) == base


# labels ---------------------------------------------------------------------------

def test_count_labels_empty():
    assert count_labels(Snapshot(0.0, MessageTable.empty()), AIRSPACE) == (0, 0)


def test_count_labels_mixed():
    recs = [message_record("AP1", 0, 5.0, 5.0, 1.0, AIRSPACE)]
    recs += [message_record(f"AR{i}", 0, 60.0 * np.cos(i), 60.0 * np.sin(i), 5.0, AIRSPACE)
             for i in range(3)]
    recs += [message_record(f"BUF{i}", 0, 150.0 + i, 0.0, 5.0, AIRSPACE) for i in range(2)]
    snap = Snapshot(0.0, table_from_records(recs))
    assert count_labels(snap, AIRSPACE) == (1, 3) == oracle_counts(recs, AIRSPACE)


def test_count_labels_buffer_only():
    recs = [message_record(f"B{i}", 0, 0.0, 150.0 + 10 * i, 5.0, AIRSPACE) for i in range(4)]
    assert count_labels(Snapshot(0.0, table_from_records(recs)), AIRSPACE) == (0, 0)


def test_count_labels_matches_per_aircraft_sum():
    rng = np.random.default_rng(23)
    for _ in range(100):
        recs = random_stream(rng, AIRSPACE, t0=100.0)
        snap = build_snapshot(table_from_records(recs), 100.0, AIRSPACE)
        assert count_labels(snap, AIRSPACE) == oracle_counts(snapshot_records(snap), AIRSPACE)


# datasets --------------------------------------------------------------------------

def stationary_stream(t_end, x=0.0, y=60.0, z=5.0):
    ts = np.arange(0.0, t_end + 1, 4.0)
    return table_from_records([message_record("S", t, x, y, z, AIRSPACE, v_gs=0.0) for t in ts])


def test_stationary_aircraft_in_ar():
    msgs = stationary_stream(1000.0)
    [s] = make_dataset(msgs, [60.0], AIRSPACE, horizon=900.0, coverage=(0.0, 1000.0))
    assert (s.y_ap, s.y_ar) == (0, 1)
    assert s.horizon == 900.0 and len(s.snapshot) == 1


def test_zero_horizon_labels_are_current_counts():
    msgs = generate_traffic(SimConfig(seed=3, duration=3 * 3600.0), AIRSPACE)
    grid = time_grid(3600.0, 3 * 3600.0, 300.0)
    for s in make_dataset(msgs, grid, AIRSPACE, horizon=0.0, coverage=(0.0, 3 * 3600.0)):
        assert (s.y_ap, s.y_ar) == count_labels(s.snapshot, AIRSPACE)


def test_rejects_times_beyond_coverage():
    msgs = stationary_stream(1000.0)
    with pytest.raises(ValueError):
        make_dataset(msgs, [200.0], AIRSPACE, horizon=900.0)
    with pytest.raises(ValueError):
        make_dataset(msgs, [0.0], AIRSPACE, horizon=900.0, coverage=(10.0, 2000.0))


def test_one_sample_per_query_for_a_simulated_day():
    msgs = generate_traffic(SimConfig(seed=1, duration=86400.0), AIRSPACE)
    grid = time_grid(0.0, 86400.0 - 900.0, 60.0)
    samples = make_dataset(msgs, grid, AIRSPACE, coverage=(0.0, 86400.0))
    assert len(samples) == len(grid) == 1426
    assert [s.t for s in samples] == list(grid)
    # a labeled future snapshot is the snapshot of a later sample
    k = 15
    for i in (0, 500, 1000):
        assert (samples[i].y_ap, samples[i].y_ar) == count_labels(samples[i + k].snapshot, AIRSPACE)


def test_continuously_present_aircraft_rarely_missing():
    # one slow aircraft crossing the scope for ten hours; it vanishes only after consecutive drops
    from aerosense.simulator import FlightPlan, flight_messages
    from aerosense.geometry import EnuPoint

    p = 0.3
    plan = FlightPlan(0.0, EnuPoint(-100.0, 0.0, 5.0), (EnuPoint(0.0, 0.0, 5.0), EnuPoint(100.0, 0.0, 5.0)),
                      cruise_speed=200.0, descent_rate=0.0, kind="overflight", speeds=(20.0, 20.0))
    msgs = flight_messages(plan, "A", AIRSPACE, 4.0, p, np.random.default_rng(0))
    def missing_rate(grid):
        return np.mean([len(build_snapshot(msgs, t, AIRSPACE, delta=8.0, presorted=True)) == 0
                        for t in grid])

    # off-grid windows hold exactly two emissions; on-grid closed windows hold three
    assert abs(missing_rate(np.arange(10.0, plan.end_t - 10.0, 4.0)) - p * p) <= 0.01
    assert missing_rate(np.arange(8.0, plan.end_t - 8.0, 4.0)) <= p * p + 0.01


# splits -----------------------------------------------------------------------------

@pytest.mark.parametrize("n, want", [
    (100, (80, 10, 10)), (3, (2, 0, 1)), (224_904, (179_923, 22_490, 22_491)), (0, (0, 0, 0)),
])
def test_split_sizes(n, want):
    assert split_sizes(n) == want


def test_split_is_chronological():
    samples = make_dataset(stationary_stream(3000.0), time_grid(0.0, 2000.0, 60.0), AIRSPACE,
                           coverage=(0.0, 3000.0))
    tr, va, te = chronological_split(samples)
    assert (len(tr), len(va), len(te)) == split_sizes(len(samples))
    assert max(s.t for s in tr) < min(s.t for s in va) <= max(s.t for s in va) < min(s.t for s in te)


def test_split_rejects_unsorted_and_bad_ratios():
    samples = make_dataset(stationary_stream(2000.0), [60.0, 120.0], AIRSPACE, coverage=(0.0, 2000.0))
    with pytest.raises(ValueError):
        chronological_split(samples[::-1])
    with pytest.raises(ValueError):
        chronological_split(samples, (0.5, 0.5, 0.5))
