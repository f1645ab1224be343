import random
from datetime import date

import pytest
from hypothesis import given, strategies as st

import oracles
from iotflow.detector import (
    DetectionEvent, DetectorConfig, StateStore, SubscriberWindowState, Usage, detect, detect_activity,
    detection_delay, evaluate, events_jsonl, index_endpoints, ingest, ingest_flow, read_events, resolve_hierarchy,
    summary_csv,
)
from iotflow.dictionary import DetectionRule, IoTDictionary, Level
from iotflow.errors import ConfigError, MissingDay
from iotflow.flows import FlowRecord, RoleConfig, anonymize

DAY = date(2019, 11, 15)
T0 = oracles.T0
SALT = b"test-salt"
ROLES = RoleConfig(subscriber_ranges=("10.0.0.0/8",))
CFG = DetectorConfig(SALT, ROLES)
TOY = oracles.toy_dictionary()


def rule(label, primary, support=(), parent=None, level=Level.MANUFACTURER):
    return DetectionRule(label, level, parent, frozenset(primary), frozenset(support))


def simple_dictionary(rules, endpoints):
    return IoTDictionary({r.label: r for r in rules}, (DAY, DAY),
                         {DAY: {d: frozenset({(ip, 443, "TCP")}) for d, ip in endpoints.items()}})


def up(ts, server, sub="10.0.0.1", packets=1, flags=0x18, port=443):
    return FlowRecord(ts, sub, server, 40000, port, 6, packets, 60 * packets, flags, 1000)


def down(ts, server, sub="10.0.0.1", packets=1, flags=0x18):
    return FlowRecord(ts, server, sub, 443, 40000, 6, packets, 60 * packets, flags, 1000)


FIVE = simple_dictionary(
    [rule("R", {"d1", "d2", "d3"}, {"d4", "d5"})],
    {f"d{i}": f"52.0.0.{i}" for i in range(1, 6)},
)


# ---- index ----------------------------------------------------------------

def test_index_size_and_sharing():
    d = simple_dictionary(
        [rule("A", {"a1", "a2", "a3"}), rule("B", {"b1", "b2", "b3"})],
        {"a1": "1.0.0.1", "a2": "1.0.0.2", "a3": "1.0.0.3", "b1": "2.0.0.1", "b2": "2.0.0.2", "b3": "2.0.0.3"},
    )
    assert len(index_endpoints(d, DAY)) == 6
    idx = index_endpoints(TOY, oracles.TOY_DAYS[0])
    (ep,) = [e for e in TOY.daily_endpoints[oracles.TOY_DAYS[0]]["p0.vendor.com"]][:1]
    assert {lbl for lbl, _, _ in idx.lookup(*ep)} == {"Plat", "Maker", "Prod", "Prod2"}
    with pytest.raises(MissingDay):
        index_endpoints(d, date(2020, 1, 1))


def test_index_matches_set_union():
    day = oracles.TOY_DAYS[1]
    idx = index_endpoints(TOY, day)
    for domain, eps in TOY.daily_endpoints[day].items():
        owners = {label for label, r in TOY.rules.items() if domain in r.domains}
        for ep in eps:
            assert {lbl for lbl, dom, _ in idx.lookup(*ep) if dom == domain} == owners


# ---- ingest ---------------------------------------------------------------

def test_ingest_direct_match():
    store = ingest([up(T0 + 5, "52.0.0.1")], FIVE, CFG)
    (st_,) = store.states.values()
    assert st_.matched == {"R": {"d1": 5}}
    assert st_.primary_seen == {"R": True}


def test_syn_only_ignored_in_ixp():
    ixp = DetectorConfig(SALT, ROLES, mode="ixp")
    assert len(ingest([up(T0, "52.0.0.1", flags=0x02)], FIVE, ixp)) == 0
    assert len(ingest([up(T0, "52.0.0.1", flags=0x02)], FIVE, CFG)) == 1


def test_direction_symmetry():
    a = ingest([up(T0 + 7, "52.0.0.2", packets=3)], FIVE, CFG)
    b = ingest([down(T0 + 7, "52.0.0.2", packets=3)], FIVE, CFG)
    assert a.states == b.states


def test_non_matching_flow_is_noop():
    store = StateStore()
    ingest_flow(store, up(T0, "9.9.9.9"), index_endpoints(FIVE, DAY), CFG)
    ingest_flow(store, up(T0, "52.0.0.1", port=8443), index_endpoints(FIVE, DAY), CFG)
    ingest_flow(store, up(T0 + 86400, "52.0.0.1"), index_endpoints(FIVE, DAY), CFG)
    assert len(store) == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        DetectorConfig(SALT, mode="cdn")
    with pytest.raises(ConfigError):
        DetectorConfig(SALT, bin="week")
    with pytest.raises(ConfigError):
        DetectorConfig(SALT, D=1.5)


# ---- evaluate -------------------------------------------------------------

def test_evaluate_examples():
    store = ingest([up(T0 + 10, "52.0.0.1"), up(T0 + 20, "52.0.0.4")], FIVE, CFG)
    (ev,) = evaluate(store, FIVE, 0.4)
    assert (ev.matched_count, ev.required_count, ev.first_match_offset) == (2, 2, 20)
    support_only = ingest([up(T0, "52.0.0.4"), up(T0, "52.0.0.5")], FIVE, CFG)
    assert evaluate(support_only, FIVE, 0.4) == []
    assert evaluate(StateStore(), FIVE, 0.4) == []


def test_first_match_offset_waits_for_primary():
    store = ingest([up(T0 + 10, "52.0.0.4"), up(T0 + 20, "52.0.0.5"), up(T0 + 30, "52.0.0.1")], FIVE, CFG)
    (ev,) = evaluate(store, FIVE, 0.4)
    assert ev.first_match_offset == 30


def test_subscriber_once_per_rule_and_bin():
    flows = [up(T0 + i, "52.0.0.1") for i in range(5)] + [up(T0 + 9, "52.0.0.2")]
    events = detect(flows, FIVE, DetectorConfig(SALT, ROLES, D=0.4))
    assert len(events) == 1
    assert events[0].subscriber == anonymize("10.0.0.1", SALT)


# ---- hierarchy ------------------------------------------------------------

def _toy_flows(domains, sub="10.0.0.1", ts=T0 + 60):
    day = oracles.TOY_DAYS[0]
    flows = []
    for d in domains:
        ip, port, _ = sorted(TOY.daily_endpoints[day][d])[0]
        flows.append(up(ts, ip, sub=sub, port=port))
    return flows


def test_product_implies_ancestors():
    domains = ["p0.vendor.com"] + [f"m{i}.vendor.com" for i in range(4)] + [f"x{i}.vendor.com" for i in range(5)]
    events = detect(_toy_flows(domains), TOY, DetectorConfig(SALT, ROLES, D=0.4))
    by_label = {e.label: e for e in events}
    assert set(by_label) == {"Plat", "Maker", "Prod", "Prod2"}
    assert by_label["Prod"].terminal and by_label["Prod2"].terminal
    assert not by_label["Maker"].terminal and not by_label["Plat"].terminal


def test_platform_only():
    events = detect(_toy_flows(["p0.vendor.com"]), TOY, DetectorConfig(SALT, ROLES, D=0.4))
    assert [(e.label, e.terminal) for e in events] == [("Plat", True)]


def test_child_without_ancestor_dropped():
    ev = DetectionEvent("s", "Prod", "Product", T0, 3600, 4, 4, 0, Usage.IDLE)
    assert resolve_hierarchy([ev], TOY) == []


# ---- activity -------------------------------------------------------------

def test_activity_examples():
    r = rule("Alexa", {"avs"})
    st_ = SubscriberWindowState("s", T0, 3600, {"Alexa": {"avs": 0}}, {"Alexa": 12}, {"Alexa": True})
    assert detect_activity(st_, r, 0.4) is Usage.ACTIVE
    st_.packets["Alexa"] = 3
    assert detect_activity(st_, r, 0.4) is Usage.IDLE
    assert detect_activity(None, r, 0.4) is Usage.UNKNOWN
    st_.packets["Alexa"] = 10
    assert detect_activity(st_, r, 0.4) is Usage.IDLE


def test_usage_in_events():
    d = simple_dictionary([rule("Alexa", {"avs"})], {"avs": "52.1.1.1"})
    cfg = DetectorConfig(SALT, ROLES, D=0.4)
    busy = detect([up(T0, "52.1.1.1", packets=6), up(T0 + 9, "52.1.1.1", packets=6)], d, cfg)
    quiet = detect([up(T0, "52.1.1.1", packets=3)], d, cfg)
    assert busy[0].usage is Usage.ACTIVE and busy[0].packets == 12
    assert quiet[0].usage is Usage.IDLE


# ---- delay ----------------------------------------------------------------

def test_delay_examples():
    single = simple_dictionary([rule("One", {"a"})], {"a": "52.1.1.1"})
    assert detection_delay([up(T0 + 42, "52.1.1.1")], single, "One", 0.4, start=T0) == 42
    flows = [up(T0 + 100 * i, f"52.0.0.{i}") for i in range(1, 6)]
    assert detection_delay(flows, FIVE, "R", 0.4, start=T0) <= 3600
    assert detection_delay(flows[:2], FIVE, "R", 1.0, start=T0) is None


def test_delay_includes_ancestors():
    domains = [f"x{i}.vendor.com" for i in range(5)] + [f"m{i}.vendor.com" for i in range(4)]
    flows = _toy_flows(domains, ts=T0 + 10) + _toy_flows(["p0.vendor.com"], ts=T0 + 500)
    assert detection_delay(flows, TOY, "Prod", 0.4, start=T0) == 500


def test_delay_accepts_config_orientation():
    flows = [down(T0 + 42, "52.0.0.1"), down(T0 + 43, "52.0.0.2")]
    assert detection_delay(flows, FIVE, "R", 0.4, CFG, start=T0) == 43
    assert detection_delay(flows, FIVE, "R", 0.4, start=T0) == 43


# ---- serialization --------------------------------------------------------

def test_events_roundtrip_and_summary(tmp_path):
    flows = oracles.random_flows(random.Random(3), TOY, 400)
    events = detect(flows, TOY, DetectorConfig(SALT, ROLES, D=0.2))
    assert events
    path = tmp_path / "e.jsonl"
    path.write_text(events_jsonl(events))
    assert read_events(path) == events
    lines = summary_csv(events).splitlines()
    assert lines[0] == "bin,label,level,subscribers,active_subscribers"
    assert lines[1].startswith("2019-11-15T")


# ---- properties -----------------------------------------------------------

seeds = st.integers(0, 2**32)
thresholds = st.sampled_from([0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0])


def _keys(events):
    return {(e.subscriber, e.bin_start, e.label) for e in events}


def _run(flows, d, mode="isp"):
    return detect(flows, TOY, DetectorConfig(SALT, ROLES, mode=mode, D=d))


@given(seeds, thresholds, st.sampled_from(["isp", "ixp"]))
def test_matches_replay_oracle(seed, d, mode):
    flows = oracles.random_flows(random.Random(seed), TOY, 150)
    assert _keys(_run(flows, d, mode)) == oracles.replay_detect(flows, TOY, d, SALT, mode)


@given(seeds, thresholds, thresholds)
def test_monotone_in_threshold(seed, d1, d2):
    d1, d2 = sorted((d1, d2))
    flows = oracles.random_flows(random.Random(seed), TOY, 150)
    assert _keys(_run(flows, d2)) <= _keys(_run(flows, d1))


@given(seeds, st.randoms(use_true_random=False))
def test_permutation_invariant(seed, rnd):
    flows = oracles.random_flows(random.Random(seed), TOY, 150)
    shuffled = list(flows)
    rnd.shuffle(shuffled)
    assert _run(flows, 0.4) == _run(shuffled, 0.4)


@given(seeds, st.integers(0, 150))
def test_monotone_in_evidence(seed, cut):
    flows = oracles.random_flows(random.Random(seed), TOY, 150)
    assert _keys(_run(flows[:cut], 0.4)) <= _keys(_run(flows, 0.4))


@given(seeds, thresholds)
def test_hierarchy_sound(seed, d):
    events = _run(oracles.random_flows(random.Random(seed), TOY, 200), d)
    keys = _keys(events)
    seen = set()
    for e in events:
        assert (e.subscriber, e.bin_start, e.label) not in seen
        seen.add((e.subscriber, e.bin_start, e.label))
        for anc in TOY.ancestors(e.label):
            assert (e.subscriber, e.bin_start, anc) in keys
        assert e.matched_count >= e.required_count


@given(seeds)
def test_partitioned_merge_equals_whole(seed):
    flows = oracles.random_flows(random.Random(seed), TOY, 150)
    whole = ingest(flows, TOY, CFG)
    parts = [ingest([f for f in flows if hash(f.src_addr + f.dst_addr) % 3 == k], TOY, CFG) for k in range(3)]
    merged = StateStore()
    for part in parts:
        merged.merge(part)
    assert evaluate(merged, TOY, 0.4) == evaluate(whole, TOY, 0.4)


@given(seeds, thresholds, thresholds)
def test_delay_nonincreasing_as_threshold_drops(seed, d1, d2):
    d1, d2 = sorted((d1, d2))
    flows = sorted(oracles.random_flows(random.Random(seed), TOY, 80), key=lambda f: f.timestamp)
    for label in TOY.rules:
        hi = detection_delay(flows, TOY, label, d2, start=T0)
        lo = detection_delay(flows, TOY, label, d1, start=T0)
        if hi is not None:
            assert lo is not None and lo <= hi
