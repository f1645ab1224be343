"""Flow records: CSV parsing, endpoint roles, subscriber anonymization."""

from __future__ import annotations

import configparser
import enum
import hashlib
import hmac
import ipaddress
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NewType

from .errors import ConfigError, EmptySalt, ParseError

AnonymizedSubscriberId = NewType("AnonymizedSubscriberId", str)

FLOW_FIELDS = (
    "timestamp", "src_addr", "dst_addr", "src_port", "dst_port",
    "protocol", "packets", "bytes", "tcp_flags", "sampling_denominator",
)

PROTOCOL_NUMBERS = {"ICMP": 1, "TCP": 6, "UDP": 17}
PROTOCOL_NAMES = {v: k for k, v in PROTOCOL_NUMBERS.items()}

TCP_SYN = 0x02
TCP_ACK = 0x10

DEFAULT_SERVER_PORTS = frozenset({80, 443, 8080, 123, 53})


def protocol_name(number: int) -> str:
    return PROTOCOL_NAMES.get(number, str(number))


@dataclass(frozen=True, slots=True)
class FlowRecord:
    timestamp: int
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    protocol: int
    packets: int
    bytes: int
    tcp_flags: int = 0
    sampling_denominator: int = 1

    def __post_init__(self):
        check_flow(self)

    @property
    def protocol_name(self) -> str:
        return protocol_name(self.protocol)

    def to_csv(self) -> str:
        return ",".join((
            str(self.timestamp), self.src_addr, self.dst_addr,
            str(self.src_port), str(self.dst_port), self.protocol_name,
            str(self.packets), str(self.bytes), f"0x{self.tcp_flags:02x}",
            str(self.sampling_denominator),
        ))


def check_flow(flow: FlowRecord) -> None:
    """Raise :class:`ParseError` if ``flow`` violates a record invariant."""
    if flow.timestamp < 0:
        raise ParseError("timestamp", "must be non-negative")
    for name in ("src_port", "dst_port"):
        value = getattr(flow, name)
        if not 0 <= value <= 65535:
            raise ParseError(name, f"{value} outside 0-65535")
    if not 0 <= flow.protocol <= 255:
        raise ParseError("protocol", f"code {flow.protocol} outside 0-255")
    if flow.packets < 1:
        raise ParseError("packets", "must be >= 1")
    if flow.bytes < flow.packets:
        raise ParseError("bytes", "must be >= packets")
    if not 0 <= flow.tcp_flags <= 0xFF:
        raise ParseError("tcp_flags", "not an 8-bit mask")
    if flow.tcp_flags and flow.protocol != PROTOCOL_NUMBERS["TCP"]:
        raise ParseError("tcp_flags", "flags set on a non-TCP flow")
    if flow.sampling_denominator < 1:
        raise ParseError("sampling_denominator", "must be >= 1")


def _int_field(name: str, text: str, lineno: int | None) -> int:
    try:
        return int(text.strip(), 10)
    except ValueError:
        raise ParseError(name, f"not an integer: {text!r}", lineno) from None


def _addr_field(name: str, text: str, lineno: int | None) -> str:
    try:
        return str(ipaddress.ip_address(text.strip()))
    except ValueError:
        raise ParseError(name, f"not an IP address: {text!r}", lineno) from None


def _protocol_field(text: str, lineno: int | None) -> int:
    token = text.strip().upper()
    if token in PROTOCOL_NUMBERS:
        return PROTOCOL_NUMBERS[token]
    if token.isdigit():
        return int(token)
    raise ParseError("protocol", f"unknown protocol {text!r}", lineno)


def _flags_field(text: str, lineno: int | None) -> int:
    token = text.strip().lower()
    try:
        return int(token, 16) if token.startswith("0x") else int(token, 10)
    except ValueError:
        raise ParseError("tcp_flags", f"not a flag mask: {text!r}", lineno) from None


def parse_flow(line: str, lineno: int | None = None) -> FlowRecord:
    """Parse one CSV flow line (see ``FLOW_FIELDS`` for the column order)."""
    parts = line.rstrip("\r\n").split(",")
    if len(parts) != len(FLOW_FIELDS):
        raise ParseError("record", f"expected {len(FLOW_FIELDS)} fields, got {len(parts)}", lineno)
    try:
        return FlowRecord(
            timestamp=_int_field("timestamp", parts[0], lineno),
            src_addr=_addr_field("src_addr", parts[1], lineno),
            dst_addr=_addr_field("dst_addr", parts[2], lineno),
            src_port=_int_field("src_port", parts[3], lineno),
            dst_port=_int_field("dst_port", parts[4], lineno),
            protocol=_protocol_field(parts[5], lineno),
            packets=_int_field("packets", parts[6], lineno),
            bytes=_int_field("bytes", parts[7], lineno),
            tcp_flags=_flags_field(parts[8], lineno),
            sampling_denominator=_int_field("sampling_denominator", parts[9], lineno),
        )
    except ParseError as exc:
        if exc.lineno is None and lineno is not None:
            raise ParseError(exc.field, exc.reason, lineno) from None
        raise


def iter_flows(lines: Iterable[str], skip_malformed: bool = False,
               errors: list | None = None) -> Iterator[FlowRecord]:
    """Yield records from CSV lines; a leading header line is skipped.

    With ``skip_malformed`` bad lines are collected into ``errors`` instead
    of aborting the stream.
    """
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if lineno == 1 and line.split(",", 1)[0].strip() == "timestamp":
            continue
        try:
            yield parse_flow(line, lineno)
        except ParseError as exc:
            if not skip_malformed:
                raise
            if errors is not None:
                errors.append(exc)


def read_flows(path: str | Path, skip_malformed: bool = False,
               errors: list | None = None) -> list[FlowRecord]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_flows(fh, skip_malformed, errors))


def flows_csv(flows: Iterable[FlowRecord], header: bool = True) -> str:
    lines = [",".join(FLOW_FIELDS)] if header else []
    lines.extend(flow.to_csv() for flow in flows)
    return "".join(line + "\n" for line in lines)


def write_flows(path: str | Path, flows: Iterable[FlowRecord], header: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(flows_csv(flows, header))


class EndpointRole(enum.Enum):
    SUBSCRIBER = "Subscriber"
    SERVER = "Server"
    UNKNOWN = "Unknown"


class PrefixAsMap:
    """Longest-prefix match from CIDR blocks to AS numbers."""

    def __init__(self, entries: Mapping[str, int] | Iterable[tuple[str, int]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        # (version, prefixlen) -> {network as int: asn}
        self._tables: dict[tuple[int, int], dict[int, int]] = {}
        for cidr, asn in items:
            net = ipaddress.ip_network(cidr, strict=False)
            self._tables.setdefault((net.version, net.prefixlen), {})[int(net.network_address)] = int(asn)
        self._order = sorted(self._tables, key=lambda k: -k[1])

    def lookup(self, addr: str) -> int | None:
        ip = ipaddress.ip_address(addr)
        bits = ip.max_prefixlen
        value = int(ip)
        for version, plen in self._order:
            if version != ip.version:
                continue
            shift = bits - plen
            asn = self._tables[(version, plen)].get((value >> shift) << shift)
            if asn is not None:
                return asn
        return None

    @classmethod
    def from_file(cls, path: str | Path) -> "PrefixAsMap":
        """Read ``cidr asn`` pairs, one per line."""
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    cidr, asn = line.replace(",", " ").split()[:2]
                    entries.append((cidr, int(asn)))
        return cls(entries)


def lookup_asn(as_lookup, addr: str) -> int | None:
    if as_lookup is None:
        return None
    if hasattr(as_lookup, "lookup"):
        return as_lookup.lookup(addr)
    if isinstance(as_lookup, Mapping):
        return as_lookup.get(addr)
    return as_lookup(addr)


@dataclass(frozen=True)
class RoleConfig:
    server_ports: frozenset[int] = DEFAULT_SERVER_PORTS
    server_asns: frozenset[int] = frozenset()
    subscriber_ranges: tuple = ()
    # "ack_or_zero" or "zero_only"; see is_established_tcp
    established_rule: str = "ack_or_zero"

    def __post_init__(self):
        nets = tuple(
            n if isinstance(n, (ipaddress.IPv4Network, ipaddress.IPv6Network))
            else ipaddress.ip_network(n, strict=False)
            for n in self.subscriber_ranges
        )
        object.__setattr__(self, "subscriber_ranges", nets)
        object.__setattr__(self, "server_ports", frozenset(int(p) for p in self.server_ports))
        object.__setattr__(self, "server_asns", frozenset(int(a) for a in self.server_asns))
        if self.established_rule not in ("ack_or_zero", "zero_only"):
            raise ConfigError(f"unknown established_rule {self.established_rule!r}")

    def is_subscriber_addr(self, addr: str) -> bool:
        return _in_ranges(addr, self.subscriber_ranges)

    @classmethod
    def from_file(cls, path: str | Path) -> "RoleConfig":
        """Load the ``[roles]`` section of an INI file.

        Recognised keys: ``server_ports``, ``server_asns``,
        ``subscriber_ranges`` (comma separated) and ``established_rule``.
        """
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read role config {path}")
        if "roles" not in parser:
            raise ConfigError(f"{path}: missing [roles] section")
        sec = parser["roles"]

        def split(key):
            return [x.strip() for x in sec.get(key, "").replace("\n", ",").split(",") if x.strip()]

        try:
            return cls(
                server_ports=frozenset(int(p) for p in split("server_ports")) or DEFAULT_SERVER_PORTS,
                server_asns=frozenset(int(a) for a in split("server_asns")),
                subscriber_ranges=tuple(split("subscriber_ranges")),
                established_rule=sec.get("established_rule", "ack_or_zero").strip(),
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None


@lru_cache(maxsize=1 << 16)
def _in_ranges(addr: str, ranges: tuple) -> bool:
    ip = ipaddress.ip_address(addr)
    return any(ip.version == n.version and ip in n for n in ranges)


def classify_endpoint(addr: str, port: int | None, as_lookup, config: RoleConfig) -> EndpointRole:
    """Server if the port is well known or the AS is a cloud/CDN AS,
    else Subscriber if inside the subscriber ranges, else Unknown.

    ``port=None`` skips the port test.
    """
    if port is not None and port in config.server_ports:
        return EndpointRole.SERVER
    if config.server_asns:
        asn = lookup_asn(as_lookup, addr)
        if asn is not None and asn in config.server_asns:
            return EndpointRole.SERVER
    if config.is_subscriber_addr(addr):
        return EndpointRole.SUBSCRIBER
    return EndpointRole.UNKNOWN


def anonymize(addr: str, salt: bytes) -> AnonymizedSubscriberId:
    """Keyed 128-bit digest of an address (HMAC-SHA256, truncated)."""
    if not salt:
        raise EmptySalt("anonymization salt must be non-empty")
    if isinstance(salt, str):
        salt = salt.encode("utf-8")
    packed = ipaddress.ip_address(addr).packed
    return AnonymizedSubscriberId(hmac.new(salt, packed, hashlib.sha256).hexdigest()[:32])


def anonymize_prefix(addr: str, salt: bytes, prefixlen: int = 24) -> str:
    """Keyed digest of the address's covering prefix (/24 for IPv4, /48 for IPv6)."""
    ip = ipaddress.ip_address(addr)
    plen = prefixlen if ip.version == 4 else 48
    net = ipaddress.ip_network(f"{ip}/{plen}", strict=False)
    if not salt:
        raise EmptySalt("anonymization salt must be non-empty")
    if isinstance(salt, str):
        salt = salt.encode("utf-8")
    payload = net.network_address.packed + bytes([plen])
    return hmac.new(salt, payload, hashlib.sha256).hexdigest()[:32]


def is_established_tcp(flow: FlowRecord, rule: str = "ack_or_zero") -> bool:
    """True unless a TCP flow only shows handshake flags.

    Flow exports carry OR-ed flags, so "saw a packet without flags" is read
    as ACK-without-SYN, or an all-zero mask. ``rule="zero_only"`` accepts
    only the literal zero mask. Non-TCP flows always pass.
    """
    if flow.protocol != PROTOCOL_NUMBERS["TCP"]:
        return True
    flags = flow.tcp_flags
    if flags == 0:
        return True
    if rule == "zero_only":
        return False
    return bool(flags & TCP_ACK) and not flags & TCP_SYN


@dataclass(frozen=True)
class Orientation:
    subscriber_addr: str
    server_addr: str
    server_port: int


def orient(flow: FlowRecord, config: RoleConfig, as_lookup=None) -> Orientation | None:
    """Work out which side of ``flow`` is the subscriber line.

    Roles are first decided with ports; when that is ambiguous (e.g. NTP
    with port 123 on both sides) the address ranges alone decide.
    """
    for use_ports in (True, False):
        src = classify_endpoint(flow.src_addr, flow.src_port if use_ports else None, as_lookup, config)
        dst = classify_endpoint(flow.dst_addr, flow.dst_port if use_ports else None, as_lookup, config)
        src_sub = src is EndpointRole.SUBSCRIBER
        dst_sub = dst is EndpointRole.SUBSCRIBER
        if src_sub and not dst_sub:
            return Orientation(flow.src_addr, flow.dst_addr, flow.dst_port)
        if dst_sub and not src_sub:
            return Orientation(flow.dst_addr, flow.src_addr, flow.src_port)
    return None
