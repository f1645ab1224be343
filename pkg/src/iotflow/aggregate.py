"""Aggregate views over detection events and visibility of sampled traffic.

Everything here is a fold over events or observations; results do not
depend on input order.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Mapping, NamedTuple

from .detector import DetectionEvent
from .errors import MissingAsn, MissingPrefix, WindowMismatch

HOUR = 3600
DAY = 86400
ALL = "ALL"


def stamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def fmt_fraction(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


@dataclass(frozen=True)
class BinSeries:
    label: str
    bin_length: int
    starts: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.starts) != len(self.values):
            raise ValueError("starts and values differ in length")
        for a, b in zip(self.starts, self.starts[1:]):
            if b - a != self.bin_length:
                raise ValueError("bins must be contiguous")

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.starts, self.values))


def _bins(lo: int, hi: int, length: int) -> list[int]:
    return list(range(lo, hi + 1, length))


def _floor(ts: int, length: int) -> int:
    return ts - ts % length


def unique_subscribers_per_bin(events: Iterable[DetectionEvent], bin_length: int | None = None,
                               start: int | None = None, end: int | None = None) -> dict[str, BinSeries]:
    """Distinct subscribers per (label, bin).

    ``bin_length`` defaults to the events' own bin; a longer one (e.g. a day
    over hourly events) rolls them up. Every label's series spans the same
    contiguous range, zero-filled.
    """
    seen: dict[str, dict[int, set[str]]] = defaultdict(lambda: defaultdict(set))
    length = bin_length
    for ev in events:
        if length is None:
            length = ev.bin_length
        if ev.bin_length > length:
            raise ValueError("cannot split events into bins shorter than their own")
        seen[ev.label][_floor(ev.bin_start, length)].add(ev.subscriber)
    if not seen:
        return {}
    all_bins = [b for per in seen.values() for b in per]
    lo = _floor(start, length) if start is not None else min(all_bins)
    hi = _floor(end, length) if end is not None else max(all_bins)
    grid = _bins(lo, hi, length)
    return {
        label: BinSeries(label, length, tuple(grid), tuple(len(per.get(b, ())) for b in grid))
        for label, per in sorted(seen.items())
    }


def _daily_sets(events: Iterable[DetectionEvent], label: str | None, key) -> dict[int, set]:
    days: dict[int, set] = defaultdict(set)
    for ev in events:
        if label is None or ev.label == label:
            days[_floor(ev.bin_start, DAY)].add(key(ev))
    return days


def _cumulative(days: dict[int, set], horizon: int, start_day: int | None, label: str):
    if horizon < 1:
        raise ValueError("horizon must be at least one day")
    if start_day is None:
        start_day = min(days) if days else 0
    start_day = _floor(start_day, DAY)
    grid = [start_day + i * DAY for i in range(horizon)]
    union: set = set()
    daily, cumulative = [], []
    for day in grid:
        today = days.get(day, set())
        union |= today
        daily.append(len(today))
        cumulative.append(len(union))
    return (BinSeries(label, DAY, tuple(grid), tuple(daily)),
            BinSeries(label, DAY, tuple(grid), tuple(cumulative)))


def cumulative_subscribers(events: Iterable[DetectionEvent], horizon: int, label: str | None = None,
                           start_day: int | None = None) -> BinSeries:
    """Running count of distinct subscribers seen through each day."""
    days = _daily_sets(events, label, lambda ev: ev.subscriber)
    return _cumulative(days, horizon, start_day, label or ALL)[1]


def aggregate_slash24(events: Iterable[DetectionEvent], prefix_map: Mapping[str, str] | None = None,
                      horizon: int | None = None, label: str | None = None,
                      start_day: int | None = None) -> tuple[BinSeries, BinSeries]:
    """Distinct prefixes per day and their running union.

    Prefixes come from ``prefix_map`` (subscriber -> prefix) or, without
    one, from the events themselves.
    """
    events = list(events)

    def prefix(ev):
        p = prefix_map.get(ev.subscriber) if prefix_map is not None else ev.prefix
        if p is None:
            raise MissingPrefix(f"no prefix for subscriber {ev.subscriber}")
        return p

    days = _daily_sets(events, label, prefix)
    if horizon is None:
        horizon = (max(days) - min(days)) // DAY + 1 if days else 1
    return _cumulative(days, horizon, start_day, label or ALL)


class Observation(NamedTuple):
    timestamp: int
    ip: str
    domain: str
    bytes: int


@dataclass(frozen=True)
class VisibilityRow:
    bin_start: int
    gt_ips: int
    visible_ips: int
    gt_domains: int
    visible_domains: int

    @property
    def ip_fraction(self) -> float | None:
        return self.visible_ips / self.gt_ips if self.gt_ips else None

    @property
    def domain_fraction(self) -> float | None:
        return self.visible_domains / self.gt_domains if self.gt_domains else None


@dataclass(frozen=True)
class VisibilityStats:
    rows: tuple[VisibilityRow, ...]
    overall_ip_fraction: float | None
    overall_domain_fraction: float | None

    @property
    def mean_ip_fraction(self) -> float | None:
        vals = [r.ip_fraction for r in self.rows if r.ip_fraction is not None]
        return sum(vals) / len(vals) if vals else None

    @property
    def mean_domain_fraction(self) -> float | None:
        vals = [r.domain_fraction for r in self.rows if r.domain_fraction is not None]
        return sum(vals) / len(vals) if vals else None


def _window_of(obs: list[Observation]) -> tuple[int, int] | None:
    if not obs:
        return None
    return (min(o.timestamp for o in obs), max(o.timestamp for o in obs))


def _check_window(gt: list[Observation], sampled: list[Observation], window, bin_length):
    if window is None:
        window = _window_of(gt)
        if window is None:
            if sampled:
                raise WindowMismatch("sampled observations without ground truth")
            return None
        window = (_floor(window[0], bin_length), _floor(window[1], bin_length) + bin_length - 1)
    lo, hi = window
    for name, obs in (("ground truth", gt), ("sampled", sampled)):
        span = _window_of(obs)
        if span and (span[0] < lo or span[1] > hi):
            raise WindowMismatch(f"{name} observations fall outside [{lo}, {hi}]")
    return lo, hi


def visibility_stats(ground_truth: Iterable, sampled: Iterable, bin_length: int = HOUR,
                     window: tuple[int, int] | None = None) -> VisibilityStats:
    """Share of ground-truth service IPs and domains that the sampled stream still shows, per bin.

    Observations are ``(timestamp, ip, domain, bytes)`` tuples. Without an
    explicit ``window`` the ground truth's bin-aligned span is used and any
    sampled observation outside it raises :class:`WindowMismatch`.
    """
    gt = [Observation(*o) for o in ground_truth]
    smp = [Observation(*o) for o in sampled]
    span = _check_window(gt, smp, window, bin_length)
    if span is None:
        return VisibilityStats((), None, None)
    gt_ips, gt_doms = defaultdict(set), defaultdict(set)
    vis_ips, vis_doms = defaultdict(set), defaultdict(set)
    for o in gt:
        b = _floor(o.timestamp, bin_length)
        gt_ips[b].add(o.ip)
        gt_doms[b].add(o.domain)
    for o in smp:
        b = _floor(o.timestamp, bin_length)
        vis_ips[b].add(o.ip)
        vis_doms[b].add(o.domain)
    rows = []
    for b in _bins(_floor(span[0], bin_length), _floor(span[1], bin_length), bin_length):
        rows.append(VisibilityRow(
            b, len(gt_ips[b]), len(gt_ips[b] & vis_ips[b]),
            len(gt_doms[b]), len(gt_doms[b] & vis_doms[b]),
        ))
    all_gt_ips = set().union(*gt_ips.values())
    all_gt_doms = set().union(*gt_doms.values())
    all_vis_ips = set().union(*vis_ips.values()) & all_gt_ips if vis_ips else set()
    all_vis_doms = set().union(*vis_doms.values()) & all_gt_doms if vis_doms else set()
    return VisibilityStats(
        tuple(rows),
        len(all_vis_ips) / len(all_gt_ips) if all_gt_ips else None,
        len(all_vis_doms) / len(all_gt_doms) if all_gt_doms else None,
    )


@dataclass(frozen=True)
class HeavyHitterRow:
    bin_start: int
    q: float
    top_ips: int
    visible_top_ips: int

    @property
    def fraction(self) -> float | None:
        return self.visible_top_ips / self.top_ips if self.top_ips else None


def top_servers(byte_counts: Mapping[str, int], q: float) -> list[str]:
    """The ``ceil(q * n)`` addresses with most bytes (ties broken by address)."""
    if not 0 < q <= 1:
        raise ValueError(f"q must be in (0, 1], got {q}")
    ranked = sorted(byte_counts, key=lambda ip: (-byte_counts[ip], ip))
    return ranked[:math.ceil(q * len(ranked) - 1e-12)]


def heavy_hitter_visibility(ground_truth: Iterable, sampled: Iterable, q: float,
                            bin_length: int = HOUR) -> list[HeavyHitterRow]:
    """Per bin, the share of the top-``q`` ground-truth servers (by bytes) seen in the sample."""
    volume: dict[int, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for o in ground_truth:
        o = Observation(*o)
        volume[_floor(o.timestamp, bin_length)][o.ip] += o.bytes
    visible: dict[int, set[str]] = defaultdict(set)
    for o in sampled:
        o = Observation(*o)
        visible[_floor(o.timestamp, bin_length)].add(o.ip)
    rows = []
    for b in sorted(volume):
        top = top_servers(volume[b], q)
        rows.append(HeavyHitterRow(b, q, len(top), sum(1 for ip in top if ip in visible[b])))
    return rows


def mean_fraction(rows) -> float | None:
    vals = [r.fraction for r in rows if r.fraction is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass(frozen=True)
class EcdfPoint:
    label: str
    asn: int
    unique_ips: int
    share: float
    ecdf: float


def per_asn_distribution(events: Iterable[DetectionEvent], asn_map: Mapping[str, int] | None = None,
                         label: str | None = None) -> dict[str, list[EcdfPoint]]:
    """Per label, each ASN's share of the distinct detected addresses, as ECDF steps.

    ASNs come from ``asn_map`` (subscriber -> ASN) or from the events.
    Points are sorted by share; the ``i``-th of ``n`` has ECDF value ``i/n``.
    """
    members: dict[str, dict[int, set[str]]] = defaultdict(lambda: defaultdict(set))
    for ev in events:
        if label is not None and ev.label != label:
            continue
        asn = asn_map.get(ev.subscriber) if asn_map is not None else ev.asn
        if asn is None:
            raise MissingAsn(f"no ASN for subscriber {ev.subscriber}")
        members[ev.label][asn].add(ev.subscriber)
    out = {}
    for lbl, per_asn in sorted(members.items()):
        total = len(set().union(*per_asn.values()))
        counts = sorted((len(subs), asn) for asn, subs in per_asn.items())
        n = len(counts)
        out[lbl] = [
            EcdfPoint(lbl, asn, k, 100.0 * k / total, (i + 1) / n)
            for i, (k, asn) in enumerate(counts)
        ]
    return out


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def visibility_csv(stats: VisibilityStats) -> str:
    return _csv(
        ("bin", "gt_ips", "visible_ips", "ip_fraction", "gt_domains", "visible_domains", "domain_fraction"),
        [(stamp(r.bin_start), r.gt_ips, r.visible_ips, fmt_fraction(r.ip_fraction),
          r.gt_domains, r.visible_domains, fmt_fraction(r.domain_fraction)) for r in stats.rows],
    )


def heavy_hitter_csv(rows: Iterable[HeavyHitterRow]) -> str:
    return _csv(
        ("bin", "q", "top_ips", "visible_top_ips", "fraction"),
        [(stamp(r.bin_start), f"{r.q:g}", r.top_ips, r.visible_top_ips, fmt_fraction(r.fraction))
         for r in sorted(rows, key=lambda r: (r.q, r.bin_start))],
    )


def hourly_csv(series: Mapping[str, BinSeries]) -> str:
    rows = []
    for label, s in sorted(series.items()):
        rows.extend((stamp(b), label, int(v)) for b, v in zip(s.starts, s.values))
    return _csv(("bin", "label", "subscribers"), rows)


def cumulative_csv(events: Iterable[DetectionEvent], horizon: int | None = None,
                   label: str | None = None) -> str:
    events = list(events)
    days = _daily_sets(events, label, lambda ev: ev.subscriber)
    if horizon is None:
        horizon = (max(days) - min(days)) // DAY + 1 if days else 1
    if not days:
        return _csv(("day", "label", "subscribers", "cumulative_subscribers", "prefixes",
                     "cumulative_prefixes"), [])
    daily, cum = _cumulative(days, horizon, None, label or ALL)
    p_daily, p_cum = aggregate_slash24(events, None, horizon, label, min(days))
    rows = [
        (stamp(b)[:10], label or ALL, int(a), int(c), int(pa), int(pc))
        for b, a, c, pa, pc in zip(daily.starts, daily.values, cum.values, p_daily.values, p_cum.values)
    ]
    return _csv(("day", "label", "subscribers", "cumulative_subscribers", "prefixes",
                 "cumulative_prefixes"), rows)


def asn_ecdf_csv(table: Mapping[str, list[EcdfPoint]]) -> str:
    rows = [
        (p.label, p.asn, p.unique_ips, fmt_fraction(p.share), fmt_fraction(p.ecdf))
        for label in sorted(table) for p in table[label]
    ]
    return _csv(("label", "asn", "unique_ips", "share_percent", "ecdf"), rows)
