"""Certificate/banner based expansion of domains that passive DNS cannot map."""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping

from .errors import InputError, NoAnchor, UnparsableDomain
from .pdns import as_window, parse_date
from .suffix import SuffixRules, normalize_domain, sld_of

Endpoint2 = tuple[str, int]


@dataclass(frozen=True, slots=True)
class CertRecord:
    ip: str
    port: int
    subject_name: str
    san_list: tuple[str, ...]
    cert_sha256: str
    banner_checksum: str
    observed_date: date

    def __post_init__(self):
        if not self.subject_name:
            raise InputError("certificate subject_name is empty")
        object.__setattr__(self, "ip", str(ipaddress.ip_address(self.ip)))
        object.__setattr__(self, "port", int(self.port))
        object.__setattr__(self, "subject_name", normalize_domain(self.subject_name))
        object.__setattr__(self, "san_list", tuple(normalize_domain(s) for s in self.san_list))
        object.__setattr__(self, "cert_sha256", self.cert_sha256.lower())
        object.__setattr__(self, "observed_date", parse_date(self.observed_date))
        if len(self.cert_sha256) != 64:
            raise InputError(f"cert_sha256 must be 32 bytes hex, got {self.cert_sha256!r}")

    @property
    def host(self) -> Endpoint2:
        return (self.ip, self.port)

    def to_json(self) -> dict:
        return {
            "ip": self.ip, "port": self.port, "subject_name": self.subject_name,
            "san_list": list(self.san_list), "cert_sha256": self.cert_sha256,
            "banner_checksum": self.banner_checksum,
            "observed_date": self.observed_date.isoformat(),
        }


def load_certs(path: str | Path) -> list[CertRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out.append(CertRecord(
                    row["ip"], row["port"], row["subject_name"], tuple(row.get("san_list") or ()),
                    row["cert_sha256"], row["banner_checksum"], row["observed_date"],
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return out


def write_certs(path: str | Path, certs: Iterable[CertRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cert in certs:
            fh.write(json.dumps(cert.to_json(), sort_keys=True) + "\n")


def _safe_sld(name: str, rules: SuffixRules | None) -> str | None:
    try:
        return sld_of(name, rules)
    except UnparsableDomain:
        return None


def _name_matches(pattern: str, domain: str, rules: SuffixRules | None) -> bool:
    if pattern == domain:
        return True
    if not pattern.startswith("*."):
        return False
    base = pattern[2:]
    # the wildcard base must be a registrable domain or deeper, never a bare suffix
    if _safe_sld(base, rules) is None:
        return False
    head, _, rest = domain.partition(".")
    return bool(head) and rest == base


def cert_matches_domain(cert: CertRecord, domain: str, suffix_rules: SuffixRules | None = None,
                        san_policy: str = "same_family") -> bool:
    """Whether ``cert`` can be attributed to ``domain``.

    The subject must equal the domain or be a one-label wildcard over it.
    With ``san_policy="same_family"`` SANs inside the domain's registrable
    domain are tolerated; ``"strict"`` only allows SANs naming the subject
    or the domain itself.
    """
    domain = normalize_domain(domain)
    if not _name_matches(cert.subject_name, domain, suffix_rules):
        return False
    family = _safe_sld(domain, suffix_rules)
    if family is None:
        return False
    for san in cert.san_list:
        if san in (cert.subject_name, domain):
            continue
        if san_policy == "strict":
            return False
        name = san[2:] if san.startswith("*.") else san
        if _safe_sld(name, suffix_rules) != family:
            return False
    return True


def expand_ips_by_cert(domain: str, anchor: CertRecord, dataset: Iterable[CertRecord], window=None,
                       suffix_rules: SuffixRules | None = None,
                       san_policy: str = "same_family") -> set[Endpoint2]:
    """All hosts in ``window`` serving the anchor's certificate *and* banner."""
    if not cert_matches_domain(anchor, domain, suffix_rules, san_policy):
        raise NoAnchor(f"anchor certificate {anchor.subject_name!r} does not match {domain!r}")
    start, end = as_window(window)
    hosts = {anchor.host}
    for cert in dataset:
        if (cert.cert_sha256 == anchor.cert_sha256
                and cert.banner_checksum == anchor.banner_checksum
                and start <= cert.observed_date <= end):
            hosts.add(cert.host)
    return hosts


@dataclass
class CertResolution:
    mapping: dict[str, set[Endpoint2]] = field(default_factory=dict)
    unresolved: list[str] = field(default_factory=list)


def resolve_unmapped(domains: Iterable[str], dataset: Iterable[CertRecord], window=None,
                     observed: Mapping[str, Iterable[Endpoint2]] | None = None,
                     suffix_rules: SuffixRules | None = None,
                     san_policy: str = "same_family") -> CertResolution:
    """Expand each domain from its usable anchors.

    An anchor is a certificate in ``window`` matching the domain; when
    ``observed`` (domain -> hosts seen in ground truth) is given the anchor
    must also sit on one of those hosts.
    """
    dataset = list(dataset)
    start, end = as_window(window)
    result = CertResolution()
    for domain in sorted({normalize_domain(d) for d in domains}):
        seen_hosts = None
        if observed is not None:
            seen_hosts = {(str(ipaddress.ip_address(ip)), int(port)) for ip, port in observed.get(domain, ())}
        anchors = [
            cert for cert in dataset
            if start <= cert.observed_date <= end
            and (seen_hosts is None or cert.host in seen_hosts)
            and cert_matches_domain(cert, domain, suffix_rules, san_policy)
        ]
        if not anchors:
            result.unresolved.append(domain)
            continue
        hosts: set[Endpoint2] = set()
        for anchor in anchors:
            hosts |= expand_ips_by_cert(domain, anchor, dataset, (start, end), suffix_rules, san_policy)
        result.mapping[domain] = hosts
    return result
