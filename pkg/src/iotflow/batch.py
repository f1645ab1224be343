"""Columnar detection on the compiled (or NumPy) kernels.

Produces exactly the events of :func:`iotflow.detector.detect`, but keeps
the per-flow work to an endpoint-id lookup and leaves the set algebra to
:mod:`iotflow._accel`.
"""

from __future__ import annotations

from datetime import date
from typing import Iterable

import numpy as np

from . import _accel
from .detector import (
    DetectionEvent, DetectorConfig, StateStore, SubscriberMeta, Usage, bin_start, event_key,
    resolve_hierarchy, utc_day,
)
from .dictionary import IoTDictionary
from .flows import FlowRecord, is_established_tcp, orient

# dense (group, slot) cells per kernel call; about 8 MB of int64 keeps the
# accumulation matrix cache-friendly
CHUNK_CELLS = 1 << 20


class EncodedDictionary:
    """Integer encoding of a dictionary: rules, (rule, domain) slots and daily endpoints."""

    def __init__(self, dictionary: IoTDictionary, d=None):
        self.dictionary = dictionary
        self.labels = sorted(dictionary.rules)
        self.rule_id = {label: i for i, label in enumerate(self.labels)}
        slot_rule, slot_primary, self.slot_domain = [], [], []
        rule_ptr = [0]
        slots_of: dict[str, list[int]] = {}
        for r, label in enumerate(self.labels):
            rule = dictionary.rules[label]
            for domain in sorted(rule.domains):
                slots_of.setdefault(domain, []).append(len(slot_rule))
                slot_rule.append(r)
                slot_primary.append(domain in rule.primary_domains)
                self.slot_domain.append(domain)
            rule_ptr.append(len(slot_rule))
        self.slot_rule = np.asarray(slot_rule, dtype=np.int64)
        self.slot_primary = np.asarray(slot_primary, dtype=np.uint8)
        self.rule_ptr = np.asarray(rule_ptr, dtype=np.int64)
        self.set_threshold(d)

        self.endpoint_id: dict[tuple[date, str, int, str], int] = {}
        ep_slots: list[list[int]] = []
        for day in sorted(dictionary.daily_endpoints):
            for domain, eps in sorted(dictionary.daily_endpoints[day].items()):
                for ip, port, proto in sorted(eps):
                    key = (day, ip, port, proto)
                    e = self.endpoint_id.get(key)
                    if e is None:
                        e = self.endpoint_id[key] = len(ep_slots)
                        ep_slots.append([])
                    ep_slots[e].extend(slots_of.get(domain, ()))
        self.ep_ptr = np.zeros(len(ep_slots) + 1, dtype=np.int64)
        self.ep_ptr[1:] = np.cumsum([len(s) for s in ep_slots])
        self.ep_slot = np.asarray([s for slots in ep_slots for s in sorted(slots)], dtype=np.int64)

    @property
    def n_rule(self) -> int:
        return len(self.labels)

    @property
    def n_slot(self) -> int:
        return self.slot_rule.size

    def set_threshold(self, d=None) -> None:
        self.d = d
        self.required = np.asarray(
            [self.dictionary.rules[label].required(d) for label in self.labels], dtype=np.int64
        )

    def lookup(self, day: date, ip: str, port: int, proto: str) -> int:
        return self.endpoint_id.get((day, ip, port, proto), -1)

    def accumulate(self, group, ep, packets, offsets, n_group: int, backend: str | None = None):
        """Earliest offset per (group, slot) and packets per (group, rule)."""
        k = _accel.get_kernels(backend)
        first = np.full((n_group, self.n_slot), _accel.NO_MATCH, dtype=np.int64)
        pkt = np.zeros((n_group, self.n_rule), dtype=np.int64)
        k.accumulate_matches(
            np.ascontiguousarray(group, dtype=np.int64), np.ascontiguousarray(ep, dtype=np.int64),
            np.ascontiguousarray(packets, dtype=np.int64), np.ascontiguousarray(offsets, dtype=np.int64),
            self.ep_ptr, self.ep_slot, self.slot_rule, first, pkt,
        )
        return first, pkt

    def satisfy(self, first, d=None, backend: str | None = None, required=None):
        """(matched, primary, sat) for threshold ``d`` (or the encoded default)."""
        if required is None:
            required = self.required if d is None or d == self.d else np.asarray(
                [self.dictionary.rules[label].required(d) for label in self.labels], dtype=np.int64)
        return _accel.get_kernels(backend).satisfaction_offsets(first, self.rule_ptr, self.slot_primary, required)

    def run(self, group, ep, packets, offsets, n_group: int, backend: str | None = None):
        """Accumulate and threshold in group chunks; returns (matched, primary, sat, pkt),
        each of shape (n_group, n_rule)."""
        group = np.asarray(group, dtype=np.int64)
        ep = np.asarray(ep, dtype=np.int64)
        packets = np.asarray(packets, dtype=np.int64)
        offsets = np.asarray(offsets, dtype=np.int64)
        matched = np.zeros((n_group, self.n_rule), dtype=np.int64)
        primary = np.zeros((n_group, self.n_rule), dtype=np.uint8)
        sat = np.full((n_group, self.n_rule), -1, dtype=np.int64)
        pkt = np.zeros((n_group, self.n_rule), dtype=np.int64)
        order = np.argsort(group, kind="stable")
        sorted_groups = group[order]
        step = max(1, CHUNK_CELLS // max(1, self.n_slot))
        for g0 in range(0, n_group, step):
            g1 = min(g0 + step, n_group)
            lo, hi = np.searchsorted(sorted_groups, [g0, g1])
            sel = order[lo:hi]
            first, part_pkt = self.accumulate(group[sel] - g0, ep[sel], packets[sel], offsets[sel],
                                              g1 - g0, backend)
            m, p, s = self.satisfy(first, backend=backend)
            matched[g0:g1], primary[g0:g1], sat[g0:g1], pkt[g0:g1] = m, p, s, part_pkt
        return matched, primary, sat, pkt

    def chain_times(self, sat: np.ndarray, label: str) -> np.ndarray:
        """Per group: latest satisfaction time over ``label`` and its ancestors, -1 if any is unmet."""
        cols = [self.rule_id[lbl] for lbl in [label] + self.dictionary.ancestors(label)]
        sub = sat[:, cols]
        return np.where((sub >= 0).all(axis=1), sub.max(axis=1), -1)


def detect_batch(flows: Iterable[FlowRecord], dictionary: IoTDictionary, config: DetectorConfig,
                 encoded: EncodedDictionary | None = None, backend: str | None = None) -> list[DetectionEvent]:
    """Same contract as :func:`iotflow.detector.detect`."""
    enc = encoded or EncodedDictionary(dictionary, config.D)
    if enc.d != config.D:
        enc.set_threshold(config.D)
    ids = StateStore()
    length = config.bin_seconds
    groups: dict[tuple[str, int], int] = {}
    g_col, e_col, p_col, o_col = [], [], [], []
    for flow in flows:
        if config.mode == "ixp" and not is_established_tcp(flow, config.roles.established_rule):
            continue
        side = orient(flow, config.roles, config.as_lookup)
        if side is None:
            continue
        start = bin_start(flow.timestamp, length)
        e = enc.lookup(utc_day(start), side.server_addr, side.server_port, flow.protocol_name)
        if e < 0:
            continue
        sub = ids.subscriber_id(side.subscriber_addr, config)
        g = groups.setdefault((sub, start), len(groups))
        g_col.append(g)
        e_col.append(e)
        p_col.append(flow.packets)
        o_col.append(flow.timestamp - start)
    if not groups:
        return []
    matched, _, sat, pkt = enc.run(g_col, e_col, p_col, o_col, len(groups), backend)
    events = []
    for (sub, start), g in groups.items():
        meta = ids.meta.get(sub, SubscriberMeta())
        for r in np.flatnonzero(sat[g] >= 0):
            label = enc.labels[r]
            pkts = int(pkt[g, r])
            events.append(DetectionEvent(
                sub, label, dictionary.rules[label].level.value, start, length,
                int(matched[g, r]), int(enc.required[r]), int(sat[g, r]),
                Usage.ACTIVE if pkts > config.pkt_threshold else Usage.IDLE,
                pkts, True, meta.prefix, meta.asn,
            ))
    events.sort(key=event_key)
    return resolve_hierarchy(events, dictionary)
