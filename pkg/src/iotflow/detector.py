"""Per-subscriber, per-bin detection of dictionary rules in sampled flows.

This is the reference (streaming) implementation: flows are folded one at a
time into a :class:`StateStore`, and closed bins are evaluated against the
k-of-N threshold. :mod:`iotflow.batch` computes the same events from
columnar input with the compiled kernels.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from typing import Iterable

from .dictionary import DEFAULT_D, DetectionRule, IoTDictionary, required_domain_count
from .errors import ConfigError, MissingDay
from .flows import (
    FlowRecord, RoleConfig, anonymize, anonymize_prefix, is_established_tcp, lookup_asn, orient,
)

BIN_SECONDS = {"hour": 3600, "day": 86400}
DEFAULT_PKT_THRESHOLD = 10
NOT_DETECTED = None

# (label, domain, domain is primary)
IndexEntry = tuple[str, str, bool]


class Usage(str, enum.Enum):
    ACTIVE = "Active"
    IDLE = "Idle"
    UNKNOWN = "Unknown"


def utc_day(ts: int) -> date:
    return datetime.fromtimestamp(ts, timezone.utc).date()


def bin_start(ts: int, length: int) -> int:
    return ts - ts % length


@dataclass(frozen=True)
class EndpointIndex:
    day: date
    entries: dict[tuple[str, int, str], tuple[IndexEntry, ...]]

    def lookup(self, ip: str, port: int, proto: str) -> tuple[IndexEntry, ...]:
        return self.entries.get((ip, port, proto), ())

    def __len__(self):
        return sum(len(v) for v in self.entries.values())


def index_endpoints(dictionary: IoTDictionary, day: date) -> EndpointIndex:
    """Invert the day's domain -> endpoints map into endpoint -> (rule, domain)."""
    if day not in dictionary.daily_endpoints:
        raise MissingDay(f"dictionary has no endpoints for {day}")
    per_domain = dictionary.daily_endpoints[day]
    inverted: dict[tuple[str, int, str], list[IndexEntry]] = defaultdict(list)
    for label in sorted(dictionary.rules):
        rule = dictionary.rules[label]
        for domain in sorted(rule.domains):
            is_primary = domain in rule.primary_domains
            for ep in per_domain.get(domain, ()):
                inverted[ep].append((label, domain, is_primary))
    return EndpointIndex(day, {ep: tuple(v) for ep, v in inverted.items()})


class DailyIndex:
    """Lazily built endpoint indexes for every day the dictionary covers."""

    def __init__(self, dictionary: IoTDictionary):
        self.dictionary = dictionary
        self._cache: dict[date, EndpointIndex | None] = {}

    def get(self, day: date) -> EndpointIndex | None:
        if day not in self._cache:
            try:
                self._cache[day] = index_endpoints(self.dictionary, day)
            except MissingDay:
                self._cache[day] = None
        return self._cache[day]


@dataclass(frozen=True)
class DetectorConfig:
    salt: bytes
    roles: RoleConfig = field(default_factory=RoleConfig)
    mode: str = "isp"
    bin: str = "hour"
    D: float | None = None
    pkt_threshold: int = DEFAULT_PKT_THRESHOLD
    as_lookup: object = None
    prefix_len: int = 24

    def __post_init__(self):
        if self.mode not in ("isp", "ixp"):
            raise ConfigError(f"mode must be isp or ixp, got {self.mode!r}")
        if self.bin not in BIN_SECONDS:
            raise ConfigError(f"bin must be hour or day, got {self.bin!r}")
        if self.D is not None and not 0 <= self.D <= 1:
            raise ConfigError(f"threshold {self.D} outside [0, 1]")
        if isinstance(self.salt, str):
            object.__setattr__(self, "salt", self.salt.encode())

    @property
    def bin_seconds(self) -> int:
        return BIN_SECONDS[self.bin]


@dataclass
class SubscriberWindowState:
    subscriber: str
    bin_start: int
    bin_length: int
    # label -> domain -> earliest offset (seconds from bin start) of a match
    matched: dict[str, dict[str, int]] = field(default_factory=dict)
    packets: dict[str, int] = field(default_factory=dict)
    primary_seen: dict[str, bool] = field(default_factory=dict)

    def add(self, entries: Iterable[IndexEntry], offset: int, packets: int) -> None:
        labels = set()
        for label, domain, is_primary in entries:
            per_rule = self.matched.setdefault(label, {})
            prev = per_rule.get(domain)
            if prev is None or offset < prev:
                per_rule[domain] = offset
            if is_primary:
                self.primary_seen[label] = True
            labels.add(label)
        for label in labels:
            self.packets[label] = self.packets.get(label, 0) + packets

    def merge(self, other: "SubscriberWindowState") -> None:
        for label, doms in other.matched.items():
            mine = self.matched.setdefault(label, {})
            for d, off in doms.items():
                mine[d] = min(off, mine.get(d, off))
        for label, n in other.packets.items():
            self.packets[label] = self.packets.get(label, 0) + n
        for label, seen in other.primary_seen.items():
            self.primary_seen[label] = self.primary_seen.get(label, False) or seen


@dataclass
class SubscriberMeta:
    prefix: str | None = None
    asn: int | None = None


class StateStore:
    """Window states keyed by (subscriber, bin start)."""

    def __init__(self):
        self.states: dict[tuple[str, int], SubscriberWindowState] = {}
        self.meta: dict[str, SubscriberMeta] = {}
        self._ids: dict[str, str] = {}

    def __len__(self):
        return len(self.states)

    def state(self, subscriber: str, start: int, length: int) -> SubscriberWindowState:
        key = (subscriber, start)
        st = self.states.get(key)
        if st is None:
            st = self.states[key] = SubscriberWindowState(subscriber, start, length)
        return st

    def subscriber_id(self, addr: str, config: DetectorConfig) -> str:
        sub = self._ids.get(addr)
        if sub is None:
            sub = self._ids[addr] = anonymize(addr, config.salt)
            self.meta[sub] = SubscriberMeta(
                anonymize_prefix(addr, config.salt, config.prefix_len),
                lookup_asn(config.as_lookup, addr) if config.as_lookup is not None else None,
            )
        return sub

    def merge(self, other: "StateStore") -> "StateStore":
        for key, st in other.states.items():
            if key in self.states:
                self.states[key].merge(st)
            else:
                self.states[key] = st
        for sub, meta in other.meta.items():
            self.meta.setdefault(sub, meta)
        return self


def ingest_flow(store: StateStore, flow: FlowRecord, index: DailyIndex | EndpointIndex,
                config: DetectorConfig) -> StateStore:
    """Fold one flow into ``store``. Flows that fail the IXP filter, have no
    subscriber side or hit no dictionary endpoint leave it untouched."""
    if config.mode == "ixp" and not is_established_tcp(flow, config.roles.established_rule):
        return store
    side = orient(flow, config.roles, config.as_lookup)
    if side is None:
        return store
    length = config.bin_seconds
    start = bin_start(flow.timestamp, length)
    day = utc_day(start)
    if isinstance(index, EndpointIndex):
        idx = index if index.day == day else None
    else:
        idx = index.get(day)
    if idx is None:
        return store
    entries = idx.lookup(side.server_addr, side.server_port, flow.protocol_name)
    if not entries:
        return store
    sub = store.subscriber_id(side.subscriber_addr, config)
    store.state(sub, start, length).add(entries, flow.timestamp - start, flow.packets)
    return store


def ingest(flows: Iterable[FlowRecord], dictionary: IoTDictionary, config: DetectorConfig,
           store: StateStore | None = None) -> StateStore:
    store = store if store is not None else StateStore()
    index = DailyIndex(dictionary)
    for flow in flows:
        ingest_flow(store, flow, index, config)
    return store


def satisfaction_offset(domain_offsets: dict[str, int], primary: frozenset[str], required: int) -> int | None:
    """Earliest offset at which the matched domains meet ``required`` with a Primary among them."""
    count, seen_primary = 0, False
    for off, domain in sorted((o, d) for d, o in domain_offsets.items()):
        count += 1
        seen_primary = seen_primary or domain in primary
        if count >= required and seen_primary:
            return off
    return None


@dataclass(frozen=True)
class DetectionEvent:
    subscriber: str
    label: str
    level: str
    bin_start: int
    bin_length: int
    matched_count: int
    required_count: int
    first_match_offset: int
    usage: Usage
    packets: int = 0
    terminal: bool = True
    prefix: str | None = None
    asn: int | None = None

    @property
    def bin_day(self) -> date:
        return utc_day(self.bin_start)

    def to_json(self) -> dict:
        return {
            "subscriber": self.subscriber, "label": self.label, "level": self.level,
            "bin_start": self.bin_start, "bin_length": self.bin_length,
            "matched_count": self.matched_count, "required_count": self.required_count,
            "first_match_offset": self.first_match_offset, "usage": self.usage.value,
            "packets": self.packets, "terminal": self.terminal,
            "prefix": self.prefix, "asn": self.asn,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DetectionEvent":
        doc = dict(doc)
        doc["usage"] = Usage(doc["usage"])
        return cls(**doc)


def event_key(ev: DetectionEvent):
    return (ev.bin_start, ev.subscriber, ev.label)


def detect_activity(state: SubscriberWindowState | None, rule: DetectionRule, d=None,
                    pkt_threshold: int = DEFAULT_PKT_THRESHOLD) -> Usage:
    """Active above ``pkt_threshold`` sampled packets in the bin, Idle when
    detected at or below it, Unknown when the rule is not detected."""
    if state is None:
        return Usage.UNKNOWN
    doms = state.matched.get(rule.label, {})
    if not (state.primary_seen.get(rule.label) and len(doms) >= rule.required(d)):
        return Usage.UNKNOWN
    return Usage.ACTIVE if state.packets.get(rule.label, 0) > pkt_threshold else Usage.IDLE


def evaluate(store: StateStore, dictionary: IoTDictionary, d=None,
             pkt_threshold: int = DEFAULT_PKT_THRESHOLD) -> list[DetectionEvent]:
    """Threshold every (subscriber, bin, rule) state; ``d=None`` uses each rule's default."""
    events = []
    for (sub, start), st in store.states.items():
        meta = store.meta.get(sub, SubscriberMeta())
        for label, doms in st.matched.items():
            rule = dictionary.rules[label]
            required = rule.required(d)
            if not st.primary_seen.get(label) or len(doms) < required:
                continue
            pkts = st.packets.get(label, 0)
            events.append(DetectionEvent(
                sub, label, rule.level.value, start, st.bin_length, len(doms), required,
                satisfaction_offset(doms, rule.primary_domains, required),
                Usage.ACTIVE if pkts > pkt_threshold else Usage.IDLE,
                pkts, True, meta.prefix, meta.asn,
            ))
    events.sort(key=event_key)
    return events


def resolve_hierarchy(events: Iterable[DetectionEvent], dictionary: IoTDictionary) -> list[DetectionEvent]:
    """Keep a detection only when all its ancestors are detected in the same
    (subscriber, bin); mark the most specific survivors as terminal."""
    groups: dict[tuple[str, int], dict[str, DetectionEvent]] = defaultdict(dict)
    for ev in events:
        groups[(ev.subscriber, ev.bin_start)][ev.label] = ev
    out = []
    for group in groups.values():
        kept = {
            label: ev for label, ev in group.items()
            if all(a in group for a in dictionary.ancestors(label))
        }
        parents = {dictionary.rules[label].parent for label in kept}
        for label, ev in kept.items():
            out.append(replace(ev, terminal=label not in parents))
    out.sort(key=event_key)
    return out


def detect(flows: Iterable[FlowRecord], dictionary: IoTDictionary, config: DetectorConfig) -> list[DetectionEvent]:
    """Streaming pipeline: ingest, evaluate, resolve the hierarchy."""
    store = ingest(flows, dictionary, config)
    return resolve_hierarchy(evaluate(store, dictionary, config.D, config.pkt_threshold), dictionary)


def _rule_time(offsets: dict[str, int], rule: DetectionRule, d) -> int | None:
    return satisfaction_offset(offsets, rule.primary_domains, rule.required(d))


def detection_delay(flows: Iterable[FlowRecord], dictionary: IoTDictionary, label: str, d=None,
                    config: DetectorConfig | None = None, start: int = 0) -> int | None:
    """Seconds from ``start`` until the cumulative evidence of the stream detects ``label``.

    The rule and all of its ancestors must be satisfied, so the delay is the
    latest of their individual satisfaction times. With no ``config`` both
    flow endpoints are tried as the server side. Returns ``None`` when the
    stream never detects the rule.
    """
    chain = [label] + dictionary.ancestors(label)
    index = DailyIndex(dictionary)
    offsets: dict[str, dict[str, int]] = {lbl: {} for lbl in chain}
    for flow in flows:
        if config is not None and config.mode == "ixp" and not is_established_tcp(flow, config.roles.established_rule):
            continue
        idx = index.get(utc_day(flow.timestamp))
        if idx is None:
            continue
        if config is not None:
            side = orient(flow, config.roles, config.as_lookup)
            candidates = [(side.server_addr, side.server_port)] if side else []
        else:
            candidates = [(flow.dst_addr, flow.dst_port), (flow.src_addr, flow.src_port)]
        off = flow.timestamp - start
        for addr, port in candidates:
            for lbl, domain, _ in idx.lookup(addr, port, flow.protocol_name):
                if lbl in offsets:
                    prev = offsets[lbl].get(domain)
                    if prev is None or off < prev:
                        offsets[lbl][domain] = off
    times = [_rule_time(offsets[lbl], dictionary.rules[lbl], d) for lbl in chain]
    if any(t is None for t in times):
        return NOT_DETECTED
    return max(times)


def events_jsonl(events: Iterable[DetectionEvent]) -> str:
    return "".join(json.dumps(ev.to_json(), sort_keys=True) + "\n" for ev in events)


def write_events(path, events: Iterable[DetectionEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(events_jsonl(events))


def read_events(path) -> list[DetectionEvent]:
    with open(path, encoding="utf-8") as fh:
        return [DetectionEvent.from_json(json.loads(line)) for line in fh if line.strip()]


SUMMARY_FIELDS = ("bin", "label", "level", "subscribers", "active_subscribers")


def summary_rows(events: Iterable[DetectionEvent]) -> list[tuple]:
    subs: dict[tuple, set] = defaultdict(set)
    active: dict[tuple, set] = defaultdict(set)
    for ev in events:
        key = (ev.bin_start, ev.label, ev.level)
        subs[key].add(ev.subscriber)
        if ev.usage is Usage.ACTIVE:
            active[key].add(ev.subscriber)
    return [(start, label, level, len(subs[(start, label, level)]), len(active[(start, label, level)]))
            for start, label, level in sorted(subs)]


def summary_csv(events: Iterable[DetectionEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_FIELDS)
    for start, label, level, n, n_active in summary_rows(events):
        stamp = datetime.fromtimestamp(start, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        writer.writerow([stamp, label, level, n, n_active])
    return buf.getvalue()


__all__ = [
    "BIN_SECONDS", "DEFAULT_D", "DailyIndex", "DetectionEvent", "DetectorConfig", "EndpointIndex",
    "NOT_DETECTED", "StateStore", "SubscriberWindowState", "Usage", "detect", "detect_activity",
    "detection_delay", "evaluate", "index_endpoints", "ingest", "ingest_flow", "read_events",
    "required_domain_count", "resolve_hierarchy", "summary_csv", "write_events",
]
