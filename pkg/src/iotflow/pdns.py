"""Passive-DNS store and dedicated/shared infrastructure classification.

Records carry first/last-seen dates and count for every calendar day (UTC)
they overlap. An IP is *exclusive* when every name served from it on a day
belongs to one family: the registrable domain of the alias roots of the
CNAME closures reaching the IP. Names inside CDN/cloud provider domains are
keyed by their full name, so ``devA.com -> vm.compute.amazonaws.com`` stays
exclusive to ``devA.com`` while two unrelated tenants of ``akadns.net`` make
the IP shared.
"""

from __future__ import annotations

import enum
import ipaddress
import json
from collections import defaultdict, deque
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable

from .errors import InputError, UnparsableDomain
from .suffix import SuffixRules, hosting_providers, normalize_domain, sld_of

RRTYPES = ("A", "AAAA", "CNAME")


def parse_date(value) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


def days_between(start: date, end: date) -> list[date]:
    return [start + timedelta(days=i) for i in range((end - start).days + 1)]


def as_window(window) -> tuple[date, date]:
    if window is None:
        return (date.min, date.max)
    if isinstance(window, date):
        return (window, window)
    start, end = window
    return (parse_date(start), parse_date(end))


@dataclass(frozen=True, slots=True)
class DnsRecord:
    rrname: str
    rrtype: str
    rdata: str
    time_first: date
    time_last: date

    def __post_init__(self):
        rrtype = self.rrtype.upper()
        object.__setattr__(self, "rrtype", rrtype)
        object.__setattr__(self, "rrname", normalize_domain(self.rrname))
        object.__setattr__(self, "time_first", parse_date(self.time_first))
        object.__setattr__(self, "time_last", parse_date(self.time_last))
        if rrtype not in RRTYPES:
            raise InputError(f"unsupported rrtype {self.rrtype!r}")
        if self.time_first > self.time_last:
            raise InputError(f"{self.rrname}: time_first after time_last")
        if rrtype == "CNAME":
            object.__setattr__(self, "rdata", normalize_domain(self.rdata))
        else:
            try:
                ip = ipaddress.ip_address(self.rdata.strip())
            except ValueError:
                raise InputError(f"{self.rrname}: bad {rrtype} rdata {self.rdata!r}") from None
            if (ip.version == 4) != (rrtype == "A"):
                raise InputError(f"{self.rrname}: rdata {ip} inconsistent with {rrtype}")
            object.__setattr__(self, "rdata", str(ip))

    def overlaps(self, start: date, end: date) -> bool:
        return self.time_first <= end and self.time_last >= start

    def to_json(self) -> dict:
        return {
            "rrname": self.rrname, "rrtype": self.rrtype, "rdata": self.rdata,
            "time_first": self.time_first.isoformat(), "time_last": self.time_last.isoformat(),
        }


class DnsStore:
    """Immutable, indexed snapshot of passive-DNS records."""

    def __init__(self, records: Iterable[DnsRecord] = ()):
        self.records: tuple[DnsRecord, ...] = tuple(sorted(set(records), key=_record_key))
        self.by_ip: dict[str, list[DnsRecord]] = defaultdict(list)
        self.addrs_of: dict[str, list[DnsRecord]] = defaultdict(list)
        self.cname_out: dict[str, list[DnsRecord]] = defaultdict(list)
        self.cname_in: dict[str, list[DnsRecord]] = defaultdict(list)
        for rec in self.records:
            if rec.rrtype == "CNAME":
                self.cname_out[rec.rrname].append(rec)
                self.cname_in[rec.rdata].append(rec)
            else:
                self.by_ip[rec.rdata].append(rec)
                self.addrs_of[rec.rrname].append(rec)

    def __len__(self):
        return len(self.records)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "DnsStore":
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    records.append(DnsRecord(
                        row["rrname"], row["rrtype"], row["rdata"],
                        row["time_first"], row["time_last"],
                    ))
                except (KeyError, ValueError, TypeError) as exc:
                    raise InputError(f"{path}:{lineno}: {exc}") from None
        return cls(records)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")

    def names(self) -> set[str]:
        return {r.rrname for r in self.records} | {r.rdata for r in self.records if r.rrtype == "CNAME"}


def _record_key(rec: DnsRecord):
    return (rec.rrname, rec.rrtype, rec.rdata, rec.time_first, rec.time_last)


def cname_closure(domain: str, store: DnsStore, window=None) -> frozenset[str]:
    """Names connected to ``domain`` through CNAME records (both directions)
    that overlap ``window`` (a date, a ``(start, end)`` pair, or None for all time)."""
    start, end = as_window(window)
    domain = normalize_domain(domain)
    seen = {domain}
    queue = deque([domain])
    while queue:
        name = queue.popleft()
        for rec in store.cname_out.get(name, ()):
            if rec.rdata not in seen and rec.overlaps(start, end):
                seen.add(rec.rdata)
                queue.append(rec.rdata)
        for rec in store.cname_in.get(name, ()):
            if rec.rrname not in seen and rec.overlaps(start, end):
                seen.add(rec.rrname)
                queue.append(rec.rrname)
    return frozenset(seen)


def domain_to_service_ips(domain: str, day: date, store: DnsStore) -> set[str]:
    """All A/AAAA addresses reachable from the CNAME closure of ``domain`` on ``day``."""
    ips = set()
    for name in cname_closure(domain, store, day):
        for rec in store.addrs_of.get(name, ()):
            if rec.overlaps(day, day):
                ips.add(rec.rdata)
    return ips


class IpUse(enum.Enum):
    EXCLUSIVE = "exclusive"
    SHARED = "shared"
    UNOBSERVED = "unobserved"


@dataclass(frozen=True)
class Exclusivity:
    use: IpUse
    family: frozenset[str] = frozenset()


class InfraClass(enum.Enum):
    DEDICATED = "Dedicated"
    SHARED = "Shared"
    INSUFFICIENT = "Insufficient"


def family_key(name: str, suffix_rules: SuffixRules | None = None,
               providers: frozenset[str] | None = None) -> str:
    providers = hosting_providers() if providers is None else providers
    try:
        sld = sld_of(name, suffix_rules)
    except UnparsableDomain:
        return name
    return name if sld in providers else sld


def closure_roots(closure: frozenset[str], store: DnsStore, day: date) -> set[str]:
    """Members that are not the target of any CNAME inside the closure on ``day``."""
    roots = set()
    for name in closure:
        aliased = any(
            rec.rrname in closure and rec.overlaps(day, day)
            for rec in store.cname_in.get(name, ())
        )
        if not aliased:
            roots.add(name)
    return roots or set(closure)


def ip_exclusivity(ip: str, day: date, store: DnsStore, suffix_rules: SuffixRules | None = None,
                   providers: frozenset[str] | None = None) -> Exclusivity:
    ip = str(ipaddress.ip_address(ip))
    names = {rec.rrname for rec in store.by_ip.get(ip, ()) if rec.overlaps(day, day)}
    if not names:
        return Exclusivity(IpUse.UNOBSERVED)
    keys: set[str] = set()
    done: set[str] = set()
    for name in sorted(names):
        if name in done:
            continue
        closure = cname_closure(name, store, day)
        done |= closure
        for root in closure_roots(closure, store, day):
            keys.add(family_key(root, suffix_rules, providers))
    if len(keys) == 1:
        return Exclusivity(IpUse.EXCLUSIVE, frozenset(keys))
    return Exclusivity(IpUse.SHARED, frozenset(keys))


def classify_domain_infra(domain: str, days: Iterable[date], store: DnsStore,
                          suffix_rules: SuffixRules | None = None,
                          providers: frozenset[str] | None = None) -> InfraClass:
    """Dedicated when every service IP is exclusive to the domain's family on
    every day; Shared when any (ip, day) is not; Insufficient when the domain
    never resolves to an address."""
    days = list(days)
    if not days:
        raise ValueError("days must be non-empty")
    domain = normalize_domain(domain)
    resolved = False
    for day in days:
        ips = domain_to_service_ips(domain, day, store)
        if not ips:
            continue
        resolved = True
        own = {
            family_key(root, suffix_rules, providers)
            for root in closure_roots(cname_closure(domain, store, day), store, day)
        }
        for ip in sorted(ips):
            ex = ip_exclusivity(ip, day, store, suffix_rules, providers)
            if ex.use is not IpUse.EXCLUSIVE or not ex.family & own:
                return InfraClass.SHARED
    return InfraClass.DEDICATED if resolved else InfraClass.INSUFFICIENT
