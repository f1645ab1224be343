"""Synthetic device traffic, per-packet sampling and crosscheck experiments.

Traffic model: for every (device, domain) and every flow window (60 s by
default) the number of bursts is Poisson with mean
``rate * diurnal[hour] * window / 3600 / burst_mean`` and burst sizes are
geometric with mean ``burst_mean``. All packets of a (device, endpoint)
inside one window form one flow record.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .batch import EncodedDictionary
from .detector import utc_day
from .dictionary import DEFAULT_D, DetectionRule, GroundTruthEvent, IoTDictionary, Level
from .errors import ConfigError, InputError, UnknownLabel
from .flows import PROTOCOL_NUMBERS, FlowRecord
from .pdns import days_between

FLOW_WINDOW = 60
ISP_Q = 0.001
IXP_Q = 0.0001
EPHEMERAL_BASE = 40000
FLAT_DIURNAL = (1.0,) * 24


@dataclass(frozen=True)
class DomainTraffic:
    domain: str
    ip: str
    port: int
    protocol: str
    idle_rate: float
    active_rate: float
    primary: bool = True
    bytes_per_packet: int = 400

    def rate(self, mode: str) -> float:
        return self.active_rate if mode == "Active" else self.idle_rate


@dataclass(frozen=True)
class DeviceProfile:
    device_id: str
    label: str
    device_ip: str
    domains: tuple[DomainTraffic, ...]
    diurnal: tuple[float, ...] = FLAT_DIURNAL
    burst_mean: float = 1.0
    level: str = "Manufacturer"
    parent: str | None = None

    def __post_init__(self):
        if len(self.diurnal) != 24:
            raise ConfigError(f"{self.device_id}: diurnal needs 24 multipliers")
        if min(self.diurnal) < 0 or abs(sum(self.diurnal) / 24 - 1) > 1e-6:
            raise ConfigError(f"{self.device_id}: diurnal multipliers must be >= 0 with mean 1")
        if self.burst_mean < 1:
            raise ConfigError(f"{self.device_id}: burst_mean must be >= 1")
        if not any(d.idle_rate > 0 or d.active_rate > 0 for d in self.domains):
            raise ConfigError(f"{self.device_id}: no domain with a positive rate")

    def to_json(self) -> dict:
        return {
            "device_id": self.device_id, "label": self.label, "device_ip": self.device_ip,
            "level": self.level, "parent": self.parent, "burst_mean": self.burst_mean,
            "diurnal": list(self.diurnal),
            "domains": [asdict(d) for d in self.domains],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DeviceProfile":
        try:
            return cls(
                doc["device_id"], doc["label"], doc["device_ip"],
                tuple(DomainTraffic(**d) for d in doc["domains"]),
                tuple(float(x) for x in doc.get("diurnal", FLAT_DIURNAL)),
                float(doc.get("burst_mean", 1.0)), doc.get("level", "Manufacturer"), doc.get("parent"),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad profile: {exc}") from None


def load_profiles(path: str | Path) -> list[DeviceProfile]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return [DeviceProfile.from_json(p) for p in doc]


def save_profiles(path: str | Path, profiles: Iterable[DeviceProfile]) -> None:
    Path(path).write_text(json.dumps([p.to_json() for p in profiles], indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class SamplerConfig:
    q: float
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ConfigError(f"sampling probability must be in (0, 1], got {self.q}")

    @property
    def denominator(self) -> int:
        return max(1, round(1 / self.q))


@dataclass
class FlowTable:
    """Columnar flows of simulated devices; ``endpoint`` indexes ``endpoints``."""

    timestamp: np.ndarray
    device: np.ndarray
    endpoint: np.ndarray
    packets: np.ndarray
    bytes: np.ndarray
    mode: np.ndarray  # 1 = Active, 0 = Idle
    endpoints: list[tuple[str, int, str, str]]  # (ip, port, protocol, domain)
    devices: list[tuple[str, str]]  # (device_id, device_ip)
    sampling_denominator: int = 1

    def __len__(self):
        return int(self.timestamp.size)

    def take(self, idx) -> "FlowTable":
        return FlowTable(self.timestamp[idx], self.device[idx], self.endpoint[idx], self.packets[idx],
                         self.bytes[idx], self.mode[idx], self.endpoints, self.devices,
                         self.sampling_denominator)

    def records(self) -> Iterable[FlowRecord]:
        for i in range(len(self)):
            ip, port, proto, _ = self.endpoints[self.endpoint[i]]
            _, dev_ip = self.devices[self.device[i]]
            yield FlowRecord(
                int(self.timestamp[i]), dev_ip, ip, EPHEMERAL_BASE + int(self.endpoint[i]) % 20000, port,
                PROTOCOL_NUMBERS[proto], int(self.packets[i]), int(self.bytes[i]),
                0x18 if proto == "TCP" else 0, self.sampling_denominator,
            )

    def events(self) -> Iterable[GroundTruthEvent]:
        for i in range(len(self)):
            ip, port, proto, domain = self.endpoints[self.endpoint[i]]
            yield GroundTruthEvent(
                self.devices[self.device[i]][0], int(self.timestamp[i]), domain, ip, port, proto,
                int(self.packets[i]), "Active" if self.mode[i] else "Idle",
            )

    def observations(self) -> list[tuple[int, str, str, int]]:
        """``(timestamp, ip, domain, bytes)`` tuples for visibility statistics."""
        return [
            (int(t), self.endpoints[e][0], self.endpoints[e][3], int(b))
            for t, e, b in zip(self.timestamp, self.endpoint, self.bytes)
        ]


def _mode_for_hours(schedule, n_hours: int) -> np.ndarray:
    if isinstance(schedule, str):
        schedule = [schedule]
    modes = [str(m) for m in schedule]
    for m in modes:
        if m not in ("Idle", "Active"):
            raise ConfigError(f"unknown mode {m!r}")
    return np.array([modes[h % len(modes)] == "Active" for h in range(n_hours)], dtype=bool)


def _endpoint_table(profiles: Sequence[DeviceProfile]):
    endpoints: dict[tuple[str, int, str, str], int] = {}
    cells = []  # (device idx, endpoint idx, DomainTraffic)
    for dev, prof in enumerate(profiles):
        for dt in prof.domains:
            key = (dt.ip, dt.port, dt.protocol.upper(), dt.domain)
            e = endpoints.setdefault(key, len(endpoints))
            cells.append((dev, e, dt))
    return list(endpoints), cells


def generate_ground_truth(profiles: Sequence[DeviceProfile], duration_hours: int, mode_schedule="Active",
                          seed: int = 0, start: int = 0, window: int = FLOW_WINDOW) -> FlowTable:
    """Unsampled flows of every profile for ``duration_hours`` starting at ``start``.

    ``mode_schedule`` is a mode name or a per-hour list (cycled). Use
    :meth:`FlowTable.events` for the labelled ground-truth view and
    :meth:`FlowTable.records` for flow records.
    """
    if duration_hours < 1:
        raise ConfigError("duration must be at least one hour")
    if 3600 % window:
        raise ConfigError("flow window must divide an hour")
    rng = np.random.default_rng(seed)
    active = _mode_for_hours(mode_schedule, duration_hours)
    endpoints, cells = _endpoint_table(profiles)
    n_win = duration_hours * 3600 // window
    win_start = start + np.arange(n_win, dtype=np.int64) * window
    hour_idx = np.arange(n_win) * window // 3600
    hour_of_day = (win_start // 3600) % 24
    cols = {k: [] for k in ("timestamp", "device", "endpoint", "packets", "bytes", "mode")}
    for dev, e, dt in cells:
        prof = profiles[dev]
        rates = np.where(active[hour_idx], dt.active_rate, dt.idle_rate)
        lam = rates * np.asarray(prof.diurnal)[hour_of_day] * window / 3600 / prof.burst_mean
        bursts = rng.poisson(lam)
        hit = np.flatnonzero(bursts)
        k = bursts[hit]
        if prof.burst_mean > 1:
            pkts = k + rng.negative_binomial(k, 1 / prof.burst_mean)
        else:
            pkts = k
        jitter = rng.integers(0, window, hit.size)
        cols["timestamp"].append(win_start[hit] + jitter)
        cols["device"].append(np.full(hit.size, dev))
        cols["endpoint"].append(np.full(hit.size, e))
        cols["packets"].append(pkts)
        cols["bytes"].append(pkts * dt.bytes_per_packet)
        cols["mode"].append(active[hour_idx[hit]].astype(np.uint8))
    arrays = {k: (np.concatenate(v) if v else np.zeros(0)).astype(np.int64 if k != "mode" else np.uint8)
              for k, v in cols.items()}
    order = np.lexsort((arrays["endpoint"], arrays["device"], arrays["timestamp"]))
    return FlowTable(
        **{k: v[order] for k, v in arrays.items()},
        endpoints=endpoints, devices=[(p.device_id, p.device_ip) for p in profiles],
    )


def sample_table(table: FlowTable, config: SamplerConfig) -> FlowTable:
    """Keep every packet independently with probability ``q``; drop emptied flows."""
    rng = np.random.default_rng(config.seed)
    kept = rng.binomial(table.packets, config.q) if config.q < 1 else table.packets.copy()
    idx = np.flatnonzero(kept)
    out = table.take(idx)
    out.packets = kept[idx].astype(np.int64)
    scaled = np.rint(table.bytes[idx] * (out.packets / table.packets[idx])).astype(np.int64)
    out.bytes = np.maximum(scaled, out.packets)
    out.sampling_denominator = config.denominator
    return out


def sample_stream(flows, config: SamplerConfig):
    """Binomial thinning of a :class:`FlowTable` or an iterable of :class:`FlowRecord`."""
    if isinstance(flows, FlowTable):
        return sample_table(flows, config)
    return _sample_records(flows, config)


def _sample_records(flows: Iterable[FlowRecord], config: SamplerConfig) -> Iterable[FlowRecord]:
    rng = np.random.default_rng(config.seed)
    for flow in flows:
        kept = int(rng.binomial(flow.packets, config.q)) if config.q < 1 else flow.packets
        if kept == 0:
            continue
        size = max(kept, round(flow.bytes * kept / flow.packets))
        yield FlowRecord(flow.timestamp, flow.src_addr, flow.dst_addr, flow.src_port, flow.dst_port,
                         flow.protocol, kept, size, flow.tcp_flags, config.denominator)


def visibility_probability(n: int, q: float) -> float:
    """Chance that a flow of ``n`` packets keeps at least one under 1-in-1/q sampling."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 0.0
    if q >= 1:
        return 1.0
    return -math.expm1(n * math.log1p(-q))


def expected_hourly_packets(profile: DeviceProfile, domain: DomainTraffic, mode: str, hour: int) -> float:
    return domain.rate(mode) * profile.diurnal[hour % 24]


def hourly_visibility_probability(rate: float, q: float, burst_mean: float = 1.0) -> tuple[float, float]:
    """(P(seen in ground truth), P(seen after sampling)) for one endpoint-hour
    under the compound-Poisson model."""
    lam = rate / burst_mean
    p = 1 / burst_mean
    z = 1 - q
    pgf = p * z / (1 - (1 - p) * z)  # E[(1-q)^X] for geometric burst sizes
    return -math.expm1(-lam), -math.expm1(-lam * (1 - pgf))


def dictionary_from_profiles(profiles: Sequence[DeviceProfile], days: Sequence[date],
                             d: float = DEFAULT_D) -> IoTDictionary:
    """One rule per profile label with that label's domains and endpoints on every day."""
    doms: dict[str, dict[str, DomainTraffic]] = {}
    meta: dict[str, DeviceProfile] = {}
    for prof in profiles:
        doms.setdefault(prof.label, {}).update({dt.domain: dt for dt in prof.domains})
        meta.setdefault(prof.label, prof)
    rules = {}
    for label, per in doms.items():
        prof = meta[label]
        primary = frozenset(x for x, dt in per.items() if dt.primary)
        rules[label] = DetectionRule(label, Level(prof.level), prof.parent, primary,
                                     frozenset(per) - primary, d)
    endpoints: dict[str, set] = {}
    for per in doms.values():
        for x, dt in per.items():
            endpoints.setdefault(x, set()).add((dt.ip, dt.port, dt.protocol.upper()))
    daily = {day: {x: frozenset(eps) for x, eps in endpoints.items()} for day in days}
    return IoTDictionary(rules, (min(days), max(days)) if days else None, daily, {"source": "profiles"})


def _diurnal(rng: np.random.Generator, amplitude: float) -> tuple[float, ...]:
    phase = rng.uniform(0, 24)
    raw = 1 + amplitude * np.cos(2 * np.pi * (np.arange(24) - phase) / 24)
    raw = raw / raw.mean()
    return tuple(float(x) for x in raw)


def calibrated_profiles(n: int = 20, seed: int = 7, idle_floor: float = 100.0) -> list[DeviceProfile]:
    """Active-mode testbed stand-ins with disjoint domains and endpoints.

    Every domain exchanges at least ``idle_floor`` packets/hour when idle.
    About three in four devices are chatty when used (tens of times their
    idle rate); the rest only modestly exceed it.
    """
    rng = np.random.default_rng(seed)
    sizes = [1, 1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 40]
    profiles = []
    for i in range(n):
        n_dom = int(sizes[i % len(sizes)])
        chatty = rng.random() < 0.75
        doms = []
        for j in range(n_dom):
            idle = idle_floor * float(np.exp(abs(rng.normal(0, 0.5))))
            boost = rng.uniform(10, 40) if chatty else rng.uniform(1.5, 4)
            doms.append(DomainTraffic(
                f"d{j}.dev{i:02d}-cloud.example", f"198.18.{i}.{j + 1}", 443 if j % 5 else 8883, "TCP",
                round(idle, 1), round(idle * boost, 1), primary=(j == 0 or j % 3 != 2),
                bytes_per_packet=int(rng.integers(120, 1400)),
            ))
        profiles.append(DeviceProfile(
            f"sim-dev-{i:02d}", f"SimDevice-{i:02d}", f"10.0.0.{i + 1}", tuple(doms),
            _diurnal(rng, 0.3), float(rng.choice([1.0, 2.0, 4.0])),
        ))
    return profiles


def zipf_server_profiles(n_servers: int = 200, exponent: float = 1.0, total_rate: float = 200000.0,
                         n_devices: int = 10, seed: int = 11) -> list[DeviceProfile]:
    """Devices talking to a shared pool of servers with Zipf-distributed popularity."""
    rng = np.random.default_rng(seed)
    weights = 1 / np.arange(1, n_servers + 1) ** exponent
    weights /= weights.sum()
    servers = rng.permutation(n_servers)
    profiles = []
    for dev in range(n_devices):
        doms = []
        for rank in range(n_servers):
            s = int(servers[rank])
            rate = total_rate * weights[rank] / n_devices
            doms.append(DomainTraffic(
                f"svc{s:04d}.zipf.example", f"198.19.{s // 250}.{s % 250 + 1}", 443, "TCP",
                rate, rate, bytes_per_packet=600,
            ))
        profiles.append(DeviceProfile(f"zipf-dev-{dev:02d}", "Zipf", f"10.1.0.{dev + 1}", tuple(doms)))
    return profiles


def expected_mean_visibility(profiles: Sequence[DeviceProfile], q: float, mode: str = "Active") -> float:
    """Expected share of ground-truth-visible service IPs seen after sampling in an average hour."""
    rates: dict[str, list[tuple[float, float]]] = {}
    for prof in profiles:
        for dt in prof.domains:
            rates.setdefault(dt.ip, []).append((dt.rate(mode), prof.burst_mean))
    seen = vis = 0.0
    for per_ip in rates.values():
        p_none_gt = p_none_vis = 1.0
        for rate, burst in per_ip:
            a, b = hourly_visibility_probability(rate, q, burst)
            p_none_gt *= 1 - a
            p_none_vis *= 1 - b
        seen += 1 - p_none_gt
        vis += 1 - p_none_vis
    return vis / seen if seen else 0.0


def visibility_preset(target: float = 0.16, q: float = ISP_Q, n_servers: int = 400,
                      exponent: float = 1.0, seed: int = 11) -> list[DeviceProfile]:
    """Zipf traffic whose total volume is tuned so the expected mean hourly
    service-IP visibility at ``q`` equals ``target``."""
    lo, hi = 1e2, 1e9
    for _ in range(80):
        mid = math.sqrt(lo * hi)
        val = expected_mean_visibility(zipf_server_profiles(n_servers, exponent, mid, 1, seed), q)
        if val < target:
            lo = mid
        else:
            hi = mid
    return zipf_server_profiles(n_servers, exponent, math.sqrt(lo * hi), 1, seed)


@dataclass(frozen=True)
class Experiment:
    d_grid: tuple[float, ...] = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
    q: float = ISP_Q
    duration_hours: int = 24
    seeds: tuple[int, ...] = tuple(range(20))
    subset: tuple[str, ...] | None = None
    start: int = 1573776000  # 2019-11-15T00:00:00Z
    mode: str = "Active"
    heavy_hitter_q: tuple[float, ...] = (0.1, 0.2, 0.3)

    @classmethod
    def from_json(cls, doc: dict) -> "Experiment":
        start = doc.get("start", cls.start)
        if isinstance(start, str):
            start = int(datetime.fromisoformat(start.replace("Z", "+00:00")).timestamp())
        subset = doc.get("subset")
        return cls(
            tuple(float(x) for x in doc.get("D_grid", cls.d_grid)), float(doc.get("q", cls.q)),
            int(doc.get("duration_hours", cls.duration_hours)),
            tuple(int(s) for s in doc.get("seeds", cls.seeds)),
            tuple(subset) if subset is not None else None, int(start), doc.get("mode", cls.mode),
            tuple(float(x) for x in doc.get("heavy_hitter_q", cls.heavy_hitter_q)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Experiment":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except (ValueError, TypeError) as exc:
            raise InputError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class DelayRow:
    rule: str
    level: str
    d: float
    seed: int
    delay: int | None


@dataclass(frozen=True)
class FalsePositive:
    seed: int
    rule: str
    device_id: str
    delay: int


@dataclass
class CrosscheckResult:
    delays: list[DelayRow] = field(default_factory=list)
    false_positives: list[FalsePositive] = field(default_factory=list)
    subset: tuple[str, ...] = ()

    def delay_csv(self) -> str:
        lines = ["rule,level,D,seed,delay_seconds"]
        for r in self.delays:
            lines.append(f"{r.rule},{r.level},{r.d:g},{r.seed},{'NOT_DETECTED' if r.delay is None else r.delay}")
        return "\n".join(lines) + "\n"

    def false_positive_csv(self) -> str:
        lines = ["seed,rule,device_id,delay_seconds"]
        lines += [f"{f.seed},{f.rule},{f.device_id},{f.delay}" for f in self.false_positives]
        return "\n".join(lines) + "\n"

    def detected_within(self, seconds: int, d: float | None = None) -> float:
        rows = [r for r in self.delays if d is None or r.d == d]
        if not rows:
            return 0.0
        return sum(1 for r in rows if r.delay is not None and r.delay <= seconds) / len(rows)


def _encode_table(enc: EncodedDictionary, table: FlowTable):
    """Endpoint ids of the flows, resolving (day, endpoint) pairs once."""
    days = table.timestamp // 86400
    pairs, inverse = np.unique(np.stack([days, table.endpoint]), axis=1, return_inverse=True)
    ids = np.array([
        enc.lookup(utc_day(int(day) * 86400), *table.endpoints[int(e)][:3])
        for day, e in pairs.T
    ], dtype=np.int64)
    return ids[np.asarray(inverse).reshape(-1)] if ids.size else np.zeros(0, dtype=np.int64)


def stream_times(enc: EncodedDictionary, table: FlowTable, start: int, n_devices: int,
                 d_grid: Sequence[float], backend: str | None = None) -> dict[float, np.ndarray]:
    """Per D: (device x rule) time from ``start`` until the rule and its
    ancestors are satisfied by that device's cumulative traffic (-1 if never)."""
    ep = _encode_table(enc, table)
    first, _ = enc.accumulate(table.device, ep, table.packets, table.timestamp - start, n_devices, backend)
    out = {}
    for d in d_grid:
        _, _, sat = enc.satisfy(first, d, backend)
        out[d] = np.stack([enc.chain_times(sat, label) for label in enc.labels], axis=1)
    return out


def _default_subset(profiles: Sequence[DeviceProfile]) -> tuple[str, ...]:
    """Every other device; empty when that would enable them all."""
    chosen = tuple(p.device_id for i, p in enumerate(profiles) if i % 2 == 0)
    return chosen if len(chosen) < len(profiles) else ()


def run_crosscheck(profiles: Sequence[DeviceProfile], dictionary: IoTDictionary | None = None,
                   d_grid: Sequence[float] = (0.4,), q: float = ISP_Q, duration_hours: int = 24,
                   seeds: Sequence[int] = (0,), subset: Sequence[str] | None = None,
                   start: int = 1573776000, mode="Active", backend: str | None = None) -> CrosscheckResult:
    """Detection delay per (rule, D, seed) under sampling, plus a subset run
    that reports detections of disabled rules sharing no domain with an enabled one."""
    profiles = list(profiles)
    if dictionary is None:
        days = days_between(utc_day(start), utc_day(start + duration_hours * 3600 - 1))
        dictionary = dictionary_from_profiles(profiles, days)
    for prof in profiles:
        if prof.label not in dictionary.rules:
            raise UnknownLabel(f"profile {prof.device_id} targets unknown label {prof.label!r}")
    subset = tuple(subset) if subset is not None else _default_subset(profiles)
    ids = {p.device_id for p in profiles}
    if not set(subset) < ids:
        raise ConfigError("subset must be a strict subset of the profile device ids")
    enc = EncodedDictionary(dictionary)
    labels = sorted({p.label for p in profiles})
    result = CrosscheckResult(subset=subset)
    sub_profiles = [p for p in profiles if p.device_id in subset]
    enabled = {p.label for p in sub_profiles}
    enabled_domains = set().union(*(dictionary.rules[lbl].domains for lbl in enabled)) if enabled else set()
    watch = [lbl for lbl in sorted(dictionary.rules)
             if lbl not in enabled and not dictionary.rules[lbl].domains & enabled_domains]
    for seed in seeds:
        table = generate_ground_truth(profiles, duration_hours, mode, seed, start)
        sampled = sample_table(table, SamplerConfig(q, seed + 1_000_003))
        times = stream_times(enc, sampled, start, len(profiles), d_grid, backend)
        for d in d_grid:
            for label in labels:
                col = times[d][:, enc.rule_id[label]]
                hits = col[col >= 0]
                delay = int(hits.min()) if hits.size else None
                result.delays.append(DelayRow(label, dictionary.rules[label].level.value, d, seed, delay))
        table = generate_ground_truth(sub_profiles, duration_hours, mode, seed + 500_000, start)
        sampled = sample_table(table, SamplerConfig(q, seed + 1_500_007))
        times = stream_times(enc, sampled, start, len(sub_profiles), [min(d_grid)], backend)[min(d_grid)]
        for label in watch:
            col = times[:, enc.rule_id[label]]
            for dev in np.flatnonzero(col >= 0):
                result.false_positives.append(
                    FalsePositive(seed, label, sub_profiles[dev].device_id, int(col[dev])))
    return result
