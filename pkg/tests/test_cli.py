import csv
import json
import shutil
from collections import defaultdict
from datetime import datetime, timezone

import pytest

import oracles
from conftest import GOLDEN, SIM, TESTBED
from iotflow.cli import main
from iotflow.dictionary import IoTDictionary
from iotflow.flows import read_flows
from iotflow.simulate import Experiment, load_profiles

SALT = "golden-salt"


def build_args(out, **over):
    args = {
        "--gt": TESTBED / "ground_truth.csv", "--pdns": TESTBED / "pdns.jsonl", "--certs": TESTBED / "certs.jsonl",
        "--patterns": TESTBED / "patterns.txt", "--overrides": TESTBED / "overrides.txt",
        "--hierarchy": TESTBED / "hierarchy.json",
    }
    args.update(over)
    argv = ["build-dict", "--out", str(out), "--no-provenance"]
    for k, v in args.items():
        argv += [k, str(v)]
    return argv


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("dict")
    assert main(build_args(out)) == 0
    return out


def detect_args(dict_dir, out, *flows, extra=()):
    flows = flows or (TESTBED / "flows.csv",)
    return ["detect", "--dict", str(dict_dir / "dictionary.json"), "--flows", *map(str, flows), "--salt", SALT,
            "--roles", str(TESTBED / "roles.ini"), "--asn", str(TESTBED / "asn.txt"), "--out", str(out),
            "--no-provenance", *extra]


def rewrite_flows(path, rows):
    with open(TESTBED / "flows.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames
        original = list(reader)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows(original))
    return path


# ---- build-dict -----------------------------------------------------------------

def test_build_dict_fixture_counts(built):
    stats = json.loads((built / "build_stats.json").read_text())
    dictionary = IoTDictionary.load(built / "dictionary.json")
    assert dictionary.level_counts() == {"Platform": 4, "Manufacturer": 20, "Product": 11}
    assert stats["rules"] == {"Platform": 4, "Manufacturer": 20, "Product": 11}
    assert (built / "disjointness.csv").read_text() == "first,second,shared_domains\n"
    assert len((built / "exclusions.csv").read_text().splitlines()) == 1 + 6


def test_missing_pdns_is_input_error(tmp_path):
    out = tmp_path / "out"
    assert main(build_args(out, **{"--pdns": tmp_path / "absent.jsonl"})) == 2
    assert not out.exists()


def test_cyclic_hierarchy_writes_nothing(tmp_path):
    cyc = {"labels": [
        {"label": "A", "level": "Manufacturer", "parent": "B", "devices": ["echo-dot"]},
        {"label": "B", "level": "Platform", "parent": "A", "devices": ["echo-dot"]},
    ]}
    (tmp_path / "h.json").write_text(json.dumps(cyc))
    out = tmp_path / "out"
    assert main(build_args(out, **{"--hierarchy": tmp_path / "h.json"})) == 3
    assert not out.exists()


def test_strict_turns_warnings_into_violations(tmp_path):
    h = json.loads((TESTBED / "hierarchy.json").read_text())
    h["labels"].append({"label": "Apple", "level": "Manufacturer", "devices": ["apple-tv"]})
    (tmp_path / "h.json").write_text(json.dumps(h))
    with pytest.warns(UserWarning, match="all devices excluded"):
        assert main(build_args(tmp_path / "lax", **{"--hierarchy": tmp_path / "h.json"})) == 0
    strict = build_args(tmp_path / "strict", **{"--hierarchy": tmp_path / "h.json"}) + ["--strict"]
    assert main(strict) == 3
    assert not (tmp_path / "strict").exists()


def test_classify_and_infra_subcommands(tmp_path):
    common = ["--gt", str(TESTBED / "ground_truth.csv"), "--patterns", str(TESTBED / "patterns.txt"),
              "--overrides", str(TESTBED / "overrides.txt"), "--no-provenance"]
    assert main(["classify-domains", "--out", str(tmp_path / "c"), *common]) == 0
    with open(tmp_path / "c" / "domain_classes.csv", newline="") as fh:
        classes = [r["class"] for r in csv.DictReader(fh)]
    assert (classes.count("Primary"), classes.count("Support"), classes.count("Generic")) == (415, 19, 90)
    assert main(["infra-classify", "--out", str(tmp_path / "i"), "--pdns", str(TESTBED / "pdns.jsonl"),
                 "--certs", str(TESTBED / "certs.jsonl"), *common]) == 0
    with open(tmp_path / "i" / "infra.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    infra = [r["infra"] for r in rows]
    assert (infra.count("Dedicated"), infra.count("Shared"), infra.count("Insufficient")) == (217, 202, 15)
    assert sum(int(r["cert_resolved"]) for r in rows) == 8


# ---- detect ---------------------------------------------------------------------

@pytest.mark.parametrize("engine", ["stream", "batch"])
def test_detect_matches_golden(built, tmp_path, engine):
    assert main(detect_args(built, tmp_path, extra=("--engine", engine))) == 0
    for name in ("events.jsonl", "summary.csv"):
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes()


def test_golden_matches_replay_oracle(built):
    dictionary = IoTDictionary.load(built / "dictionary.json")
    flows = list(read_flows(TESTBED / "flows.csv"))
    got = set()
    with open(GOLDEN / "events.jsonl") as fh:
        for line in fh:
            ev = json.loads(line)
            got.add((ev["subscriber"], ev["bin_start"], ev["label"]))
    expected = oracles.replay_detect(flows, dictionary, 0.4, SALT.encode(),
                                     subscriber_nets=("100.64.0.0/10", "2001:db8:64::/48"))
    assert got == expected and got


def test_empty_flow_file(built, tmp_path):
    flows = rewrite_flows(tmp_path / "empty.csv", lambda rows: [])
    assert main(detect_args(built, tmp_path / "o", flows)) == 0
    assert (tmp_path / "o" / "events.jsonl").read_text() == ""
    assert len((tmp_path / "o" / "summary.csv").read_text().splitlines()) == 1


def test_ixp_syn_only_detects_nothing(built, tmp_path):
    def syn(rows):
        return [dict(r, tcp_flags="0x02") for r in rows if r["protocol"] == "TCP"]

    flows = rewrite_flows(tmp_path / "syn.csv", syn)
    assert main(detect_args(built, tmp_path / "isp", flows)) == 0
    assert (tmp_path / "isp" / "events.jsonl").read_text() != ""
    assert main(detect_args(built, tmp_path / "ixp", flows, extra=("--mode", "ixp"))) == 0
    assert (tmp_path / "ixp" / "events.jsonl").read_text() == ""


def test_malformed_line_reported_then_skipped(built, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    shutil.copy(TESTBED / "flows.csv", bad)
    lines = bad.read_text().splitlines(keepends=True)
    lines.insert(3, "1573776016,100.64.0.10,not-an-ip,1,443,TCP,1,1,0x18,1\n")
    bad.write_text("".join(lines))
    assert main(detect_args(built, tmp_path / "o", bad)) == 2
    assert "line 4" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert main(detect_args(built, tmp_path / "o", bad, extra=("--skip-malformed",))) == 0
    assert "line 4" in capsys.readouterr().err
    assert (tmp_path / "o" / "events.jsonl").read_bytes() == (GOLDEN / "events.jsonl").read_bytes()


def test_bad_threshold_rejected(built, tmp_path):
    with pytest.raises(SystemExit):
        main(detect_args(built, tmp_path, extra=("--threshold", "1.5")))


# ---- simulate / crosscheck ----------------------------------------------------------

def sim_args(out, experiment, cmd="simulate", extra=()):
    return [cmd, "--profiles", str(SIM / "profiles.json"), "--experiment", str(SIM / experiment),
            "--out", str(out), "--no-provenance", *extra]


def test_crosscheck_shape(tmp_path):
    assert main(sim_args(tmp_path, "experiment.json", "crosscheck")) == 0
    exp = Experiment.load(SIM / "experiment.json")
    rules = {p.label for p in load_profiles(SIM / "profiles.json")}
    with open(tmp_path / "delays.csv", newline="") as fh:
        keys = [(r["rule"], float(r["D"]), int(r["seed"])) for r in csv.DictReader(fh)]
    assert sorted(keys) == sorted((r, d, s) for r in rules for d in exp.d_grid for s in exp.seeds)


def test_unsampled_delays_match_replay(tmp_path):
    assert main(sim_args(tmp_path, "unsampled_experiment.json")) == 0
    assert (tmp_path / "flows.csv").read_bytes() == (tmp_path / "sampled.csv").read_bytes()
    dictionary = IoTDictionary.load(tmp_path / "dictionary.json")
    exp = Experiment.load(SIM / "unsampled_experiment.json")
    profiles = load_profiles(SIM / "profiles.json")
    flows = list(read_flows(tmp_path / "flows.csv"))
    with open(tmp_path / "delays.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len({p.label for p in profiles})
    for row in rows:
        devices = [p.device_ip for p in profiles if p.label == row["rule"]]
        expected = oracles.first_detection(flows, dictionary, row["rule"], 0.4, devices)
        assert expected is not None
        assert row["delay_seconds"] == str(expected - exp.start)


def test_subset_has_no_false_positives(tmp_path):
    assert main(sim_args(tmp_path, "subset_experiment.json", "crosscheck")) == 0
    assert (tmp_path / "false_positives.csv").read_text() == "seed,rule,device_id,delay_seconds\n"


def test_simulate_tables(tmp_path):
    assert main(sim_args(tmp_path, "experiment.json", extra=("--seed", "3", "--threshold", "0.4"))) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"delays.csv", "false_positives.csv", "visibility.csv", "heavy_hitters.csv",
            "ground_truth.csv", "flows.csv", "sampled.csv", "dictionary.json"} <= names
    with open(tmp_path / "heavy_hitters.csv", newline="") as fh:
        assert {r["q"] for r in csv.DictReader(fh)} == {"0.1", "0.2", "0.3"}


# ---- aggregate / report / idempotence --------------------------------------------------

def test_aggregate_and_report(built, tmp_path):
    assert main(["aggregate", "--events", str(GOLDEN / "events.jsonl"), "--out", str(tmp_path / "a"),
                 "--no-provenance"]) == 0
    for name in ("hourly_subscribers.csv", "cumulative.csv", "asn_ecdf.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (GOLDEN / name).read_bytes()
    assert main(["report", "--dict", str(built / "dictionary.json"), "--events", str(GOLDEN / "events.jsonl"),
                 "--out", str(tmp_path / "r")]) == 0
    text = (tmp_path / "r" / "report.md").read_text()
    assert "rules: 4 Platform, 20 Manufacturer, 11 Product" in text
    assert "| Fire-TV | Product | Amazon-products | 67 | 26 |" in text
    prov = json.loads((tmp_path / "r" / "provenance.json").read_text())
    assert prov["command"] == "report" and set(prov["inputs"]) == {"dict", "events"}


def test_reruns_are_byte_identical(tmp_path):
    for run in ("one", "two"):
        assert main(build_args(tmp_path / run / "dict")) == 0
        assert main(detect_args(tmp_path / run / "dict", tmp_path / run / "det")) == 0
    for sub in ("dict", "det"):
        for f in (tmp_path / "one" / sub).iterdir():
            assert f.read_bytes() == (tmp_path / "two" / sub / f.name).read_bytes()


def test_outputs_stay_in_out_dir(built, tmp_path):
    before = set(TESTBED.iterdir())
    assert main(detect_args(built, tmp_path / "o")) == 0
    assert set(TESTBED.iterdir()) == before
    assert {p.name for p in (tmp_path / "o").iterdir()} == {"events.jsonl", "summary.csv"}


def test_summary_consistent_with_events():
    per = defaultdict(set)
    with open(GOLDEN / "events.jsonl") as fh:
        for line in fh:
            ev = json.loads(line)
            per[(ev["label"], ev["bin_start"])].add(ev["subscriber"])
    with open(GOLDEN / "summary.csv", newline="") as fh:
        rows = {(r["label"], r["bin"]): int(r["subscribers"]) for r in csv.DictReader(fh)}
    iso = {(lbl, datetime.fromtimestamp(b, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")): len(s)
           for (lbl, b), s in per.items()}
    assert rows == iso
