import random
from collections import Counter, defaultdict

import pytest
from hypothesis import given, strategies as st

import oracles
from iotflow.aggregate import (
    DAY, HOUR, aggregate_slash24, asn_ecdf_csv, cumulative_csv, cumulative_subscribers, heavy_hitter_csv,
    heavy_hitter_visibility, hourly_csv, mean_fraction, per_asn_distribution, top_servers, unique_subscribers_per_bin,
    visibility_csv, visibility_stats,
)
from iotflow.detector import DetectionEvent, Usage
from iotflow.errors import MissingAsn, MissingPrefix, WindowMismatch

T0 = oracles.T0


def ev(sub, hour, label="L", prefix=None, asn=None):
    return DetectionEvent(sub, label, "Manufacturer", T0 + hour * HOUR, HOUR, 1, 1, 0, Usage.IDLE, 1, True,
                          prefix, asn)


events_st = st.lists(
    st.tuples(st.sampled_from("abcdefgh"), st.integers(0, 24 * 5 - 1), st.sampled_from(["L", "M"])),
    max_size=80,
).map(lambda xs: [ev(s, h, lbl, prefix=f"p{ord(s) % 3}") for s, h, lbl in xs])


# ---- unique counts ----------------------------------------------------------

def test_unique_examples():
    series = unique_subscribers_per_bin([ev("a", 0), ev("a", 0), ev("b", 2)])
    assert series["L"].values == (1, 0, 1)
    assert series["L"].starts == (T0, T0 + HOUR, T0 + 2 * HOUR)


@given(events_st)
def test_unique_matches_group_by(events):
    got = unique_subscribers_per_bin(events)
    expected = defaultdict(set)
    for e in events:
        expected[(e.label, e.bin_start)].add(e.subscriber)
    for label, s in got.items():
        for b, v in zip(s.starts, s.values):
            assert v == len(expected.get((label, b), ()))
    assert {lbl for lbl, _ in expected} == set(got)


@given(events_st)
def test_daily_at_least_hourly_max(events):
    hourly = unique_subscribers_per_bin(events)
    daily = unique_subscribers_per_bin(events, DAY)
    for label, s in hourly.items():
        per_day = daily[label].as_dict()
        for b, v in zip(s.starts, s.values):
            assert per_day[b - b % DAY] >= v


@given(events_st, st.randoms(use_true_random=False))
def test_aggregates_order_invariant(events, rnd):
    shuffled = list(events)
    rnd.shuffle(shuffled)
    assert unique_subscribers_per_bin(events) == unique_subscribers_per_bin(shuffled)
    assert cumulative_csv(events) == cumulative_csv(shuffled)


@given(events_st, st.integers(0, 80))
def test_merge_of_partials(events, cut):
    # unions of per-part subscriber sets reproduce the whole
    a, b = events[:cut], events[cut:]
    whole = unique_subscribers_per_bin(events, DAY)
    sa, sb = defaultdict(set), defaultdict(set)
    for part, acc in ((a, sa), (b, sb)):
        for e in part:
            acc[(e.label, e.bin_start - e.bin_start % DAY)].add(e.subscriber)
    for label, s in whole.items():
        for day, v in zip(s.starts, s.values):
            assert v == len(sa[(label, day)] | sb[(label, day)])


# ---- cumulative -------------------------------------------------------------

def test_cumulative_examples():
    same = [ev(s, 24 * d) for d in range(4) for s in "abc"]
    assert cumulative_subscribers(same, 4).values == (3, 3, 3, 3)
    fresh = [ev(f"s{d}{k}", 24 * d) for d in range(4) for k in range(2)]
    assert cumulative_subscribers(fresh, 4).values == (2, 4, 6, 8)
    with pytest.raises(ValueError):
        cumulative_subscribers(same, 0)


@given(events_st)
def test_cumulative_nondecreasing_and_bounds(events):
    if not events:
        return
    cum = cumulative_subscribers(events, 5, start_day=T0).values
    assert all(a <= b for a, b in zip(cum, cum[1:]))
    assert cum[-1] == len({e.subscriber for e in events})
    _, pcum = aggregate_slash24(events, horizon=5, start_day=T0)
    assert all(p <= c for p, c in zip(pcum.values, cum))


def test_rotation_prefixes_stabilize():
    events = oracles.rotating_events(random.Random(1), households=40, days=14)
    subs = cumulative_subscribers(events, 14).values
    daily, pcum = aggregate_slash24(events, horizon=14)
    assert all(a < b for a, b in zip(subs, subs[1:]))
    assert set(pcum.values) == {40}
    assert subs[-1] > max(daily.values)


# ---- /24 --------------------------------------------------------------------

def test_slash24_examples():
    crowd = [ev(f"s{i}", 0) for i in range(256)]
    daily, cum = aggregate_slash24(crowd, {f"s{i}": "10.0.0.0/24" for i in range(256)})
    assert daily.values == (1,) and cum.values == (1,)
    gap = [ev("a", 0, prefix="p"), ev("a", 48, prefix="p")]
    assert aggregate_slash24(gap)[0].values == (1, 0, 1)
    with pytest.raises(MissingPrefix):
        aggregate_slash24([ev("a", 0)])


# ---- visibility ---------------------------------------------------------------

def obs(t, ip, dom="d", b=100):
    return (T0 + t, ip, dom, b)


def test_visibility_examples():
    gt = [obs(0, "1.1.1.1", "a"), obs(10, "1.1.1.2", "b"), obs(HOUR + 5, "1.1.1.3", "c")]
    same = visibility_stats(gt, gt)
    assert [r.ip_fraction for r in same.rows] == [1.0, 1.0]
    assert same.overall_ip_fraction == 1.0
    empty = visibility_stats(gt, [])
    assert [r.ip_fraction for r in empty.rows] == [0.0, 0.0]
    half = visibility_stats(gt, [obs(1, "1.1.1.1", "a")])
    assert half.rows[0].ip_fraction == 0.5 and half.rows[0].domain_fraction == 0.5
    with pytest.raises(WindowMismatch):
        visibility_stats(gt, [obs(5 * HOUR, "1.1.1.1")])


@given(st.lists(st.tuples(st.integers(0, 3 * HOUR - 1), st.integers(0, 9)), min_size=1, max_size=60), st.data())
def test_visibility_fractions_bounded(points, data):
    gt = [obs(t, f"10.0.0.{i}", f"d{i % 4}") for t, i in points]
    sampled = data.draw(st.lists(st.sampled_from(gt), max_size=30))
    stats = visibility_stats(gt, sampled)
    for r in stats.rows:
        for f in (r.ip_fraction, r.domain_fraction):
            assert f is None or 0.0 <= f <= 1.0


def test_heavy_hitter_examples():
    gt = [obs(0, f"10.0.0.{i}", b=1000 - i) for i in range(10)] + [obs(HOUR, "10.0.0.1", b=10)]
    sampled = [obs(3, "10.0.0.0"), obs(4, "10.0.0.5")]
    top10 = heavy_hitter_visibility(gt, sampled, 0.1)
    assert [(r.top_ips, r.visible_top_ips) for r in top10] == [(1, 1), (1, 0)]
    full = heavy_hitter_visibility(gt, sampled, 1.0)
    vis = visibility_stats(gt, sampled)
    assert [r.fraction for r in full] == [r.ip_fraction for r in vis.rows]
    single = heavy_hitter_visibility([obs(0, "1.1.1.1")], [], 0.3)
    assert single[0].fraction in (0.0, 1.0)
    assert mean_fraction(top10) == 0.5


def test_top_servers():
    assert top_servers({"a": 5, "b": 9, "c": 9, "d": 1}, 0.5) == ["b", "c"]
    assert top_servers({"a": 1, "b": 2, "c": 3}, 0.3) == ["c"]
    with pytest.raises(ValueError):
        top_servers({"a": 1}, 0.0)


# ---- ASN distribution -------------------------------------------------------------

def test_asn_examples():
    one = per_asn_distribution([ev(f"s{i}", 0, asn=7) for i in range(5)])
    assert [(p.share, p.ecdf) for p in one["L"]] == [(100.0, 1.0)]
    ten = per_asn_distribution([ev(f"s{i}", 0, asn=100 + i) for i in range(10)])
    assert all(p.share == 10.0 for p in ten["L"])
    assert [p.ecdf for p in ten["L"]][-1] == 1.0
    with pytest.raises(MissingAsn):
        per_asn_distribution([ev("a", 0)])


@given(st.lists(st.tuples(st.sampled_from("abcdefghij"), st.sampled_from([1, 2, 2, 3, 3, 3])), min_size=1))
def test_asn_matches_tally(pairs):
    asn_of = {}
    for sub, asn in pairs:
        asn_of.setdefault(sub, asn)
    events = [ev(sub, 0) for sub, _ in pairs]
    table = per_asn_distribution(events, asn_of)["L"]
    tally = Counter(asn_of.values())
    total = len(asn_of)
    assert {p.asn: p.unique_ips for p in table} == dict(tally)
    assert {p.asn: p.share for p in table} == pytest.approx({a: 100 * k / total for a, k in tally.items()})
    assert [p.ecdf for p in table] == [(i + 1) / len(tally) for i in range(len(tally))]


# ---- CSV tables ---------------------------------------------------------------------

def test_csv_headers():
    events = [ev("a", 0, prefix="p", asn=1), ev("b", 30, prefix="q", asn=2)]
    assert hourly_csv(unique_subscribers_per_bin(events)).startswith("bin,label,subscribers\n2019-11-15T00:00:00Z,L,1\n")
    cum = cumulative_csv(events).splitlines()
    assert cum[0] == "day,label,subscribers,cumulative_subscribers,prefixes,cumulative_prefixes"
    assert cum[1:] == ["2019-11-15,ALL,1,1,1,1", "2019-11-16,ALL,1,2,1,2"]
    assert asn_ecdf_csv(per_asn_distribution(events)).splitlines()[1] == "L,1,1,50.0000,0.5000"
    gt = [obs(0, "1.1.1.1")]
    assert visibility_csv(visibility_stats(gt, gt)).splitlines()[1].endswith(",1,1,1.0000,1,1,1.0000")
    assert heavy_hitter_csv(heavy_hitter_visibility(gt, [], 0.1)).splitlines()[1] == "2019-11-15T00:00:00Z,0.1,1,0,0.0000"
