"""IoT dictionary construction: from labelled ground truth to detection rules."""

from __future__ import annotations

import csv
import enum
import fnmatch
import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping

from .certs import CertRecord, resolve_unmapped
from .errors import (
    ChildNotSuperset, ConfigError, DomainCountZero, EmptyInput, HierarchyCycle, InputError,
    InvariantError, MergedLabelWarning, UnclassifiedDomainWarning,
)
from .pdns import DnsStore, InfraClass, classify_domain_infra, days_between, domain_to_service_ips, parse_date
from .suffix import SuffixRules, normalize_domain

DEFAULT_D = 0.4
LACONIC_LIMIT = 10

# (ip, port, protocol name)
Endpoint = tuple[str, int, str]

GT_FIELDS = ("device_id", "timestamp", "domain", "ip", "port", "protocol", "packets", "mode")


class Mode(str, enum.Enum):
    IDLE = "Idle"
    ACTIVE = "Active"


class DomainClass(str, enum.Enum):
    PRIMARY = "Primary"
    SUPPORT = "Support"
    GENERIC = "Generic"


class Level(str, enum.Enum):
    PLATFORM = "Platform"
    MANUFACTURER = "Manufacturer"
    PRODUCT = "Product"


IOT_SPECIFIC = (DomainClass.PRIMARY, DomainClass.SUPPORT)


@dataclass(frozen=True, slots=True)
class GroundTruthEvent:
    device_id: str
    timestamp: int
    domain: str
    ip: str
    port: int
    protocol: str
    packets: int
    mode: Mode

    def __post_init__(self):
        if self.packets < 1:
            raise InputError(f"{self.device_id}: packets must be >= 1")
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "domain", normalize_domain(self.domain))
        object.__setattr__(self, "protocol", self.protocol.upper())

    def row(self) -> list:
        return [self.device_id, self.timestamp, self.domain, self.ip, self.port,
                self.protocol, self.packets, self.mode.value]


def read_ground_truth(path: str | Path) -> list[GroundTruthEvent]:
    events = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                events.append(GroundTruthEvent(
                    row["device_id"], int(row["timestamp"]), row["domain"] or "", row["ip"],
                    int(row["port"]), row["protocol"], int(row["packets"]), row["mode"],
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return events


def write_ground_truth(path: str | Path, events: Iterable[GroundTruthEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GT_FIELDS)
        for ev in events:
            writer.writerow(ev.row())


@dataclass
class DeviceDomainStats:
    device_id: str
    # domain -> mode -> average packets per hour
    hourly: dict[str, dict[Mode, float]]
    hours: dict[Mode, int]

    @property
    def laconic(self) -> bool:
        return len(self.hourly) < LACONIC_LIMIT


def extract_device_domains(events: Iterable[GroundTruthEvent]) -> dict[str, DeviceDomainStats]:
    """Average packets/hour per device and domain, split by experiment mode.

    The hour count of a (device, mode) sums, over the UTC days it was seen
    on, the hours from that day's first to last event inclusive; gaps
    between experiments on different days do not count.
    """
    packets: dict[tuple, int] = defaultdict(int)
    span: dict[tuple, list[int]] = {}
    seen = False
    for ev in events:
        seen = True
        hour = ev.timestamp // 3600
        lo_hi = span.setdefault((ev.device_id, ev.mode, hour // 24), [hour, hour])
        lo_hi[0] = min(lo_hi[0], hour)
        lo_hi[1] = max(lo_hi[1], hour)
        if ev.domain:
            packets[(ev.device_id, ev.domain, ev.mode)] += ev.packets
    if not seen:
        raise EmptyInput("no ground-truth events")
    out: dict[str, DeviceDomainStats] = {}
    for (device, mode, _), (lo, hi) in sorted(span.items()):
        stats = out.setdefault(device, DeviceDomainStats(device, {}, {}))
        stats.hours[mode] = stats.hours.get(mode, 0) + hi - lo + 1
    for (device, domain, mode), total in packets.items():
        stats = out[device]
        stats.hourly.setdefault(domain, {})[mode] = total / stats.hours[mode]
    return out


def load_patterns(path: str | Path) -> list[tuple[str, DomainClass]]:
    """Read ``<glob> <class>`` lines; ``#`` starts a comment."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected '<glob> <class>'")
            try:
                rules.append((parts[0].lower(), DomainClass(parts[1].capitalize())))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: unknown class {parts[1]!r}") from None
    return rules


def _first_match(domain: str, rules) -> DomainClass | None:
    for pattern, cls in rules:
        if fnmatch.fnmatchcase(domain, pattern):
            return cls
    return None


def classify_domains(domains: Iterable[str], patterns, overrides=None) -> dict[str, DomainClass]:
    """Overrides first, then patterns, first match wins; anything unmatched
    is Generic (with a warning)."""
    override_rules = list(overrides.items()) if isinstance(overrides, Mapping) else list(overrides or ())
    override_rules = [(p.lower(), DomainClass(c)) for p, c in override_rules]
    out = {}
    unmatched = []
    for domain in sorted({normalize_domain(d) for d in domains if d}):
        cls = _first_match(domain, override_rules) or _first_match(domain, patterns)
        if cls is None:
            unmatched.append(domain)
            cls = DomainClass.GENERIC
        out[domain] = cls
    if unmatched:
        warnings.warn(
            f"{len(unmatched)} domains matched no pattern and default to Generic: {unmatched[:5]}",
            UnclassifiedDomainWarning, stacklevel=2,
        )
    return out


def observed_ports(events: Iterable[GroundTruthEvent]) -> dict[str, set[tuple[int, str]]]:
    ports: dict[str, set[tuple[int, str]]] = defaultdict(set)
    for ev in events:
        if ev.domain:
            ports[ev.domain].add((ev.port, ev.protocol))
    return dict(ports)


def observed_hosts(events: Iterable[GroundTruthEvent]) -> dict[str, set[tuple[str, int]]]:
    hosts: dict[str, set[tuple[str, int]]] = defaultdict(set)
    for ev in events:
        if ev.domain:
            hosts[ev.domain].add((ev.ip, ev.port))
    return dict(hosts)


def build_daily_endpoint_sets(domains: Iterable[str], store: DnsStore, certs: Iterable[CertRecord],
                              ports: Mapping[str, Iterable[tuple[int, str]]], days: Iterable[date],
                              observed: Mapping[str, Iterable[tuple[str, int]]] | None = None,
                              suffix_rules: SuffixRules | None = None,
                              cert_window=None) -> dict[date, dict[str, set[Endpoint]]]:
    """Per-day service IPs of each domain crossed with its observed ports.

    Passive DNS supplies the daily addresses; domains that never resolve in
    passive DNS are expanded through certificate/banner matches, and those
    addresses apply to every day of the window.
    """
    days = list(days)
    domains = sorted({normalize_domain(d) for d in domains})
    certs = list(certs)
    window = cert_window if cert_window is not None else ((min(days), max(days)) if days else None)
    pdns_ips = {d: {day: domain_to_service_ips(d, day, store) for day in days} for d in domains}
    unmapped = [d for d in domains if not any(pdns_ips[d].values())]
    cert_hosts = resolve_unmapped(unmapped, certs, window, observed, suffix_rules).mapping if certs else {}
    out: dict[date, dict[str, set[Endpoint]]] = {}
    for day in days:
        per_day = {}
        for d in domains:
            ips = set(pdns_ips[d][day]) | {ip for ip, _ in cert_hosts.get(d, ())}
            per_day[d] = {(ip, port, proto) for ip in ips for port, proto in ports.get(d, ())}
        out[day] = per_day
    return out


@dataclass
class Exclusion:
    reason: str
    removed: list[str]


@dataclass
class PruneResult:
    retained: dict[str, set[str]]
    excluded: dict[str, Exclusion]
    removed: dict[str, list[str]] = field(default_factory=dict)


def prune_shared(signatures: Mapping[str, Iterable[str]], infra: Mapping[str, InfraClass],
                 classes: Mapping[str, DomainClass] | None = None,
                 resolved: Iterable[str] = ()) -> PruneResult:
    """Drop domains that cannot be monitored and the devices left without a Primary domain.

    A domain survives when its infrastructure is dedicated, or when it was
    Insufficient in passive DNS but resolved through certificates.
    """
    resolved = set(resolved)
    result = PruneResult({}, {})
    for device in sorted(signatures):
        doms = set(signatures[device])
        keep, removed = set(), []
        for d in sorted(doms):
            kind = infra.get(d, InfraClass.INSUFFICIENT)
            if kind is InfraClass.DEDICATED or (kind is InfraClass.INSUFFICIENT and d in resolved):
                keep.add(d)
            else:
                removed.append(d)
        if removed:
            result.removed[device] = removed
        has_primary = any(
            classes is None or classes.get(d) is DomainClass.PRIMARY for d in keep
        )
        if keep and has_primary:
            result.retained[device] = keep
        else:
            kinds = {infra.get(d, InfraClass.INSUFFICIENT) for d in removed}
            if kinds == {InfraClass.SHARED}:
                reason = "shared backend"
            elif InfraClass.SHARED in kinds:
                reason = "shared backend and insufficient information"
            elif removed:
                reason = "insufficient information"
            else:
                reason = "no primary domain"
            result.excluded[device] = Exclusion(reason, removed)
    return result


def _exact_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    # repr gives the shortest decimal that round-trips, i.e. what the caller wrote
    return Fraction(repr(float(value)))


def required_domain_count(n: int, d) -> int:
    """``max(1, floor(d * n))`` evaluated exactly."""
    if n < 1:
        raise DomainCountZero("a rule must monitor at least one domain")
    frac = _exact_fraction(d)
    if not 0 <= frac <= 1:
        raise ValueError(f"threshold {d} outside [0, 1]")
    return max(1, (frac * n).numerator // (frac * n).denominator)


@dataclass(frozen=True)
class DetectionRule:
    label: str
    level: Level
    parent: str | None
    primary_domains: frozenset[str]
    support_domains: frozenset[str]
    default_D: float = DEFAULT_D

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        if not self.primary_domains:
            raise InvariantError(f"rule {self.label!r} has no primary domain")
        if self.primary_domains & self.support_domains:
            raise InvariantError(f"rule {self.label!r}: domain both primary and support")

    @property
    def domains(self) -> frozenset[str]:
        return self.primary_domains | self.support_domains

    @property
    def N(self) -> int:
        return len(self.primary_domains) + len(self.support_domains)

    def required(self, d=None) -> int:
        return required_domain_count(self.N, self.default_D if d is None else d)

    def to_json(self) -> dict:
        return {
            "label": self.label, "level": self.level.value, "parent": self.parent,
            "primary_domains": sorted(self.primary_domains),
            "support_domains": sorted(self.support_domains),
            "N": self.N, "default_D": self.default_D,
        }


FORMAT = "iotflow-dictionary/1"


@dataclass
class IoTDictionary:
    rules: dict[str, DetectionRule]
    generation_dates: tuple[date, date] | None = None
    # day -> domain -> endpoints; shared by every rule monitoring the domain
    daily_endpoints: dict[date, dict[str, frozenset[Endpoint]]] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for rule in self.rules.values():
            if rule.parent is not None and rule.parent not in self.rules:
                raise InvariantError(f"rule {rule.label!r} has unknown parent {rule.parent!r}")
        for label in self.rules:
            self.ancestors(label)
        for rule in self.rules.values():
            if rule.parent is not None and not self.rules[rule.parent].domains <= rule.domains:
                raise ChildNotSuperset(f"{rule.label!r} does not contain all domains of {rule.parent!r}")
        monitored = set().union(*(r.domains for r in self.rules.values())) if self.rules else set()
        for day, per_domain in self.daily_endpoints.items():
            stray = set(per_domain) - monitored
            if stray:
                raise InvariantError(f"{day}: endpoints for unmonitored domains {sorted(stray)[:3]}")

    def ancestors(self, label: str) -> list[str]:
        """Parent chain of ``label``, nearest first."""
        chain = []
        seen = {label}
        parent = self.rules[label].parent
        while parent is not None:
            if parent in seen:
                raise HierarchyCycle(f"cycle through {parent!r}")
            seen.add(parent)
            chain.append(parent)
            parent = self.rules[parent].parent
        return chain

    def children(self, label: str) -> list[str]:
        return sorted(r.label for r in self.rules.values() if r.parent == label)

    def days(self) -> list[date]:
        return sorted(self.daily_endpoints)

    def rule_endpoints(self, label: str, day: date) -> dict[str, frozenset[Endpoint]]:
        per_domain = self.daily_endpoints.get(day, {})
        return {d: per_domain.get(d, frozenset()) for d in sorted(self.rules[label].domains)}

    def level_counts(self) -> dict[str, int]:
        counts = {lvl.value: 0 for lvl in Level}
        for rule in self.rules.values():
            counts[rule.level.value] += 1
        return counts

    def to_json(self) -> dict:
        return {
            "format": FORMAT,
            "generation_dates": (
                [self.generation_dates[0].isoformat(), self.generation_dates[1].isoformat()]
                if self.generation_dates else None
            ),
            "rules": [self.rules[k].to_json() for k in sorted(self.rules)],
            "daily_endpoints": {
                day.isoformat(): {
                    d: sorted([ip, port, proto] for ip, port, proto in eps)
                    for d, eps in sorted(per_domain.items())
                }
                for day, per_domain in sorted(self.daily_endpoints.items())
            },
            "provenance": self.provenance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> "IoTDictionary":
        if doc.get("format") != FORMAT:
            raise InputError(f"unsupported dictionary format {doc.get('format')!r}")
        rules = {}
        for r in doc["rules"]:
            rules[r["label"]] = DetectionRule(
                r["label"], Level(r["level"]), r.get("parent"),
                frozenset(r["primary_domains"]), frozenset(r["support_domains"]),
                float(r.get("default_D", DEFAULT_D)),
            )
        gen = doc.get("generation_dates")
        daily = {
            parse_date(day): {d: frozenset((ip, int(port), proto) for ip, port, proto in eps)
                              for d, eps in per_domain.items()}
            for day, per_domain in doc.get("daily_endpoints", {}).items()
        }
        return cls(rules, (parse_date(gen[0]), parse_date(gen[1])) if gen else None,
                   daily, doc.get("provenance", {}))

    @classmethod
    def load(cls, path: str | Path) -> "IoTDictionary":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read dictionary {path}: {exc}") from None
        return cls.from_json(doc)


@dataclass(frozen=True)
class LabelSpec:
    label: str
    level: Level
    parent: str | None = None
    devices: tuple[str, ...] = ()
    domains: tuple[str, ...] = ()


@dataclass
class HierarchyConfig:
    labels: list[LabelSpec] = field(default_factory=list)
    manufacturers: dict[str, str] = field(default_factory=dict)
    default_D: float = DEFAULT_D

    @classmethod
    def from_json(cls, doc: dict) -> "HierarchyConfig":
        try:
            labels = [
                LabelSpec(
                    e["label"], Level(e["level"]), e.get("parent"),
                    tuple(e.get("devices", ())), tuple(normalize_domain(d) for d in e.get("domains", ())),
                )
                for e in doc.get("labels", [])
            ]
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad hierarchy entry: {exc}") from None
        return cls(labels, dict(doc.get("manufacturers", {})), float(doc.get("default_D", DEFAULT_D)))

    @classmethod
    def load(cls, path: str | Path) -> "HierarchyConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_json(doc)


def _topo_order(specs: list[LabelSpec]) -> list[LabelSpec]:
    by_label = {}
    for spec in specs:
        if spec.label in by_label:
            raise ConfigError(f"duplicate label {spec.label!r}")
        by_label[spec.label] = spec
    for spec in specs:
        if spec.parent is not None and spec.parent not in by_label:
            raise ConfigError(f"{spec.label!r}: unknown parent {spec.parent!r}")
    order, state = [], {}

    def visit(label, path):
        mark = state.get(label)
        if mark == "done":
            return
        if mark == "open":
            raise HierarchyCycle(" -> ".join(path + [label]))
        state[label] = "open"
        parent = by_label[label].parent
        if parent is not None:
            visit(parent, path + [label])
        state[label] = "done"
        order.append(by_label[label])

    for spec in specs:
        visit(spec.label, [])
    return order


def _intersection(sets: list[set[str]]) -> set[str]:
    return set.intersection(*sets) if sets else set()


def derive_rules(signatures: Mapping[str, Iterable[str]], hierarchy: HierarchyConfig | None,
                 classes: Mapping[str, DomainClass]) -> IoTDictionary:
    """Build detection rules from pruned device signatures.

    Configured labels take the domains common to their devices plus any
    listed specialization domains; a label without devices inherits its
    parent's set. Devices no label claims are grouped per manufacturer, and
    manufacturers with identical domain sets collapse into one Platform rule.
    """
    hierarchy = hierarchy or HierarchyConfig()
    sigs = {dev: {d for d in doms if classes.get(d) in IOT_SPECIFIC} for dev, doms in signatures.items()}
    usable = set().union(*sigs.values()) if sigs else set()
    rules: dict[str, DetectionRule] = {}
    dropped: set[str] = set()

    def make_rule(label, level, parent, doms):
        primary = frozenset(d for d in doms if classes.get(d) is DomainClass.PRIMARY)
        support = frozenset(d for d in doms if classes.get(d) is DomainClass.SUPPORT)
        if not primary:
            warnings.warn(f"label {label!r} has no primary domain left; no rule emitted", stacklevel=3)
            dropped.add(label)
            return
        rules[label] = DetectionRule(label, level, parent, primary, support, hierarchy.default_D)

    for spec in _topo_order(hierarchy.labels):
        if spec.parent in dropped:
            warnings.warn(f"label {spec.label!r} dropped with its parent {spec.parent!r}", stacklevel=2)
            dropped.add(spec.label)
            continue
        devices = [d for d in spec.devices if d in sigs]
        if spec.devices and not devices:
            warnings.warn(f"label {spec.label!r}: all devices excluded; no rule emitted", stacklevel=2)
            dropped.add(spec.label)
            continue
        extra = set()
        for d in spec.domains:
            if d in usable and classes.get(d) in IOT_SPECIFIC:
                extra.add(d)
            else:
                warnings.warn(f"label {spec.label!r}: domain {d!r} is not monitorable", stacklevel=2)
        parent_set = rules[spec.parent].domains if spec.parent else frozenset()
        if devices:
            full = _intersection([sigs[d] for d in devices]) | extra
            if not parent_set <= full:
                missing = sorted(parent_set - full)
                raise ChildNotSuperset(f"{spec.label!r} lacks parent domains {missing[:5]}")
        else:
            full = set(parent_set) | extra
        make_rule(spec.label, spec.level, spec.parent, full)

    claimed = {d for spec in hierarchy.labels for d in spec.devices}
    groups: dict[str, list[str]] = defaultdict(list)
    for device in sorted(sigs):
        if device not in claimed:
            groups[hierarchy.manufacturers.get(device, device)].append(device)
    by_domains: dict[frozenset, list[str]] = defaultdict(list)
    for maker, devices in groups.items():
        doms = frozenset(_intersection([sigs[d] for d in devices]))
        if doms:
            by_domains[doms].append(maker)
    for doms, makers in sorted(by_domains.items(), key=lambda kv: sorted(kv[1])):
        makers = sorted(makers)
        if len(makers) > 1:
            label = "+".join(makers)
            warnings.warn(f"manufacturers {makers} share one domain set; emitting platform rule {label!r}",
                          MergedLabelWarning, stacklevel=2)
            level = Level.PLATFORM
        else:
            label, level = makers[0], Level.MANUFACTURER
        if label in rules:
            raise ConfigError(f"manufacturer label {label!r} collides with a configured label")
        make_rule(label, level, None, doms)
    return IoTDictionary(rules)


@dataclass(frozen=True)
class Overlap:
    first: str
    second: str
    domains: tuple[str, ...]


def disjointness_check(dictionary: IoTDictionary) -> list[Overlap]:
    """Pairs of rules outside an ancestor relation that share a domain."""
    labels = sorted(dictionary.rules)
    lineage = {label: set(dictionary.ancestors(label)) for label in labels}
    out = []
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            if a in lineage[b] or b in lineage[a]:
                continue
            shared = dictionary.rules[a].domains & dictionary.rules[b].domains
            if shared:
                out.append(Overlap(a, b, tuple(sorted(shared))))
    return out


@dataclass
class BuildResult:
    dictionary: IoTDictionary
    classes: dict[str, DomainClass]
    infra: dict[str, InfraClass]
    cert_mapping: dict[str, set[tuple[str, int]]]
    cert_unresolved: list[str]
    pruned: PruneResult
    overlaps: list[Overlap]
    stats: dict


def build_dictionary(events: list[GroundTruthEvent], store: DnsStore, certs: list[CertRecord],
                     patterns, overrides, hierarchy: HierarchyConfig | None,
                     days: list[date] | None = None, suffix_rules: SuffixRules | None = None,
                     provenance: dict | None = None) -> BuildResult:
    """Run the whole dictionary pipeline on in-memory inputs."""
    if not events:
        raise EmptyInput("no ground-truth events")
    if days is None:
        stamps = [ev.timestamp for ev in events]
        first = datetime.fromtimestamp(min(stamps), timezone.utc).date()
        last = datetime.fromtimestamp(max(stamps), timezone.utc).date()
        days = days_between(first, last)
    window = (min(days), max(days))
    domains = {ev.domain for ev in events if ev.domain}
    classes = classify_domains(domains, patterns, overrides)
    iot = sorted(d for d, c in classes.items() if c in IOT_SPECIFIC)
    infra = {d: classify_domain_infra(d, days, store, suffix_rules) for d in iot}
    insufficient = [d for d in iot if infra[d] is InfraClass.INSUFFICIENT]
    hosts = observed_hosts(events)
    resolution = resolve_unmapped(insufficient, certs, window, hosts, suffix_rules)

    signatures: dict[str, set[str]] = defaultdict(set)
    for ev in events:
        if ev.domain and classes[ev.domain] in IOT_SPECIFIC:
            signatures[ev.device_id].add(ev.domain)
    pruned = prune_shared(signatures, infra, classes, resolution.mapping)
    skeleton = derive_rules(pruned.retained, hierarchy, classes)
    monitored = set().union(*(r.domains for r in skeleton.rules.values())) if skeleton.rules else set()
    ports = observed_ports(events)
    daily = build_daily_endpoint_sets(monitored, store, certs, ports, days, hosts, suffix_rules, window)
    dictionary = IoTDictionary(
        skeleton.rules, window,
        {day: {d: frozenset(eps) for d, eps in per.items()} for day, per in daily.items()},
        dict(provenance or {}),
    )
    overlaps = disjointness_check(dictionary)

    def count(values, kinds):
        return {k.value: sum(1 for v in values if v is k) for k in kinds}

    stats = {
        "domains": len(classes),
        "classes": count(classes.values(), DomainClass),
        "infra": count(infra.values(), InfraClass),
        "cert_resolved": len(resolution.mapping),
        "cert_unresolved": len(resolution.unresolved),
        "cert_devices": len({dev for dev, doms in signatures.items() if doms & set(resolution.mapping)}),
        "devices": len(signatures),
        "devices_retained": len(pruned.retained),
        "devices_excluded": sorted(pruned.excluded),
        "rules": dictionary.level_counts(),
        "overlaps": len(overlaps),
    }
    return BuildResult(dictionary, classes, infra, resolution.mapping, resolution.unresolved,
                       pruned, overlaps, stats)
