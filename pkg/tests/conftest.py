from __future__ import annotations

import warnings
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from iotflow.certs import load_certs
from iotflow.dictionary import HierarchyConfig, build_dictionary, load_patterns, read_ground_truth
from iotflow.pdns import DnsStore

ROOT = Path(__file__).resolve().parents[1]
TESTBED = ROOT / "fixtures" / "testbed"
SIM = ROOT / "fixtures" / "sim"
GOLDEN = Path(__file__).resolve().parent / "golden"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def testbed_build():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        return build_dictionary(
            read_ground_truth(TESTBED / "ground_truth.csv"),
            DnsStore.from_jsonl(TESTBED / "pdns.jsonl"),
            load_certs(TESTBED / "certs.jsonl"),
            load_patterns(TESTBED / "patterns.txt"),
            load_patterns(TESTBED / "overrides.txt"),
            HierarchyConfig.load(TESTBED / "hierarchy.json"),
        )


@pytest.fixture(scope="session")
def testbed_dictionary(testbed_build):
    return testbed_build.dictionary


_ACCEPTANCE: list[tuple[str, str, str, float]] = []


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        status = "PASS" if call.excinfo is None else "FAIL"
        _ACCEPTANCE.append((mark.args[0], status, mark.args[1], call.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for ident, status, text, secs in sorted(_ACCEPTANCE, key=lambda r: int(r[0][2:])):
        terminalreporter.write_line(f"{ident:<5} {status}  {text} ({secs:.2f}s)")
