"""Registrable-domain keys under public-suffix style rules."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

from .errors import UnparsableDomain


def normalize_domain(name: str) -> str:
    return name.strip().lower().rstrip(".")


class SuffixRules:
    """Public suffix rule set (exact, ``*.`` wildcard and ``!`` exception rules).

    Matching follows the usual algorithm: an exception rule wins outright,
    otherwise the longest matching rule is the public suffix, and a name
    matching nothing uses its last label.
    """

    def __init__(self, rules: Iterable[str]):
        self.exact: set[str] = set()
        self.wildcards: set[str] = set()
        self.exceptions: set[str] = set()
        self._sld_cache: dict[str, str] = {}
        for raw in rules:
            line = raw.split("//", 1)[0].split("#", 1)[0].strip().lower()
            if not line:
                continue
            if line.startswith("!"):
                self.exceptions.add(line[1:])
            elif line.startswith("*."):
                self.wildcards.add(line[2:])
            else:
                self.exact.add(line)

    @classmethod
    def from_file(cls, path: str | Path) -> "SuffixRules":
        with open(path, encoding="utf-8") as fh:
            return cls(fh)

    @classmethod
    def bundled(cls) -> "SuffixRules":
        return _bundled_rules()

    def suffix_length(self, labels: list[str]) -> int:
        """Number of trailing labels forming the public suffix."""
        n = len(labels)
        for i in range(n):
            if ".".join(labels[i:]) in self.exceptions:
                return n - i - 1
        for i in range(n):
            if ".".join(labels[i:]) in self.exact:
                return n - i
            if i + 1 < n and ".".join(labels[i + 1:]) in self.wildcards:
                return n - i
        return 1

    def sld_of(self, fqdn: str) -> str:
        cached = self._sld_cache.get(fqdn)
        if cached is not None:
            return cached
        name = normalize_domain(fqdn)
        labels = name.split(".")
        if len(labels) < 2 or any(not label for label in labels):
            raise UnparsableDomain(f"{fqdn!r} has fewer than two labels")
        k = self.suffix_length(labels)
        if k >= len(labels):
            raise UnparsableDomain(f"{fqdn!r} is a public suffix")
        sld = ".".join(labels[-(k + 1):])
        self._sld_cache[fqdn] = sld
        return sld


@lru_cache(maxsize=1)
def _bundled_rules() -> SuffixRules:
    text = resources.files("iotflow").joinpath("data/public_suffix.dat").read_text("utf-8")
    return SuffixRules(text.splitlines())


@lru_cache(maxsize=1)
def hosting_providers() -> frozenset[str]:
    text = resources.files("iotflow").joinpath("data/hosting_providers.txt").read_text("utf-8")
    return frozenset(
        line.split("#", 1)[0].strip().lower()
        for line in text.splitlines()
        if line.split("#", 1)[0].strip()
    )


def sld_of(fqdn: str, suffix_rules: SuffixRules | None = None) -> str:
    """Return the registrable domain (public suffix plus one label) of ``fqdn``."""
    rules = suffix_rules if suffix_rules is not None else _bundled_rules()
    return rules.sld_of(fqdn)
