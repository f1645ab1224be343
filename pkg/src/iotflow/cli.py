"""Command-line entry point: ``iotflow <subcommand> ...``.

Every subcommand computes all of its outputs in memory first and only then
writes them into ``--out``, so a failing run leaves no partial files behind.
Exit codes: 0 success, 2 input error, 3 invariant violation, 4 config error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .aggregate import (
    HOUR, asn_ecdf_csv, cumulative_csv, heavy_hitter_csv, heavy_hitter_visibility, hourly_csv,
    per_asn_distribution, unique_subscribers_per_bin, visibility_csv, visibility_stats,
)
from .certs import load_certs, resolve_unmapped
from .detector import BIN_SECONDS, DetectorConfig, detect, events_jsonl, read_events, summary_csv
from .dictionary import (
    GT_FIELDS, IOT_SPECIFIC, HierarchyConfig, IoTDictionary, build_dictionary, classify_domains,
    extract_device_domains, load_patterns, observed_hosts, read_ground_truth,
)
from .errors import ConfigError, IoTFlowError, InvariantError, MissingInput
from .flows import PrefixAsMap, RoleConfig, flows_csv, read_flows
from .pdns import DnsStore, as_window, classify_domain_infra, days_between
from .simulate import (
    Experiment, SamplerConfig, dictionary_from_profiles, generate_ground_truth, load_profiles,
    run_crosscheck, sample_table,
)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"input file not found: {path}")
    return p


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return value


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _window(args, events) -> list:
    if args.start or args.end:
        if not (args.start and args.end):
            raise ConfigError("--start and --end go together")
        return days_between(*as_window((args.start, args.end)))
    stamps = [ev.timestamp for ev in events]
    if not stamps:
        return []
    lo = datetime.fromtimestamp(min(stamps), timezone.utc).date()
    hi = datetime.fromtimestamp(max(stamps), timezone.utc).date()
    return days_between(lo, hi)


def _classes(args, events):
    domains = {ev.domain for ev in events if ev.domain}
    overrides = load_patterns(_existing(args.overrides)) if args.overrides else None
    return classify_domains(domains, load_patterns(_existing(args.patterns)), overrides)


# -- subcommands: each returns {filename: text} ------------------------------


def cmd_classify_domains(args) -> dict[str, str]:
    events = read_ground_truth(_existing(args.gt))
    classes = _classes(args, events)
    stats = extract_device_domains(events)
    devices = []
    for dev, s in sorted(stats.items()):
        hours = {m.value: h for m, h in s.hours.items()}
        devices.append((dev, len(s.hourly), int(s.laconic), hours.get("Idle", 0), hours.get("Active", 0)))
    return {
        "domain_classes.csv": _csv_text(("domain", "class"),
                                        [(d, c.value) for d, c in sorted(classes.items())]),
        "devices.csv": _csv_text(("device_id", "domains", "laconic", "idle_hours", "active_hours"), devices),
    }


def cmd_infra_classify(args) -> dict[str, str]:
    events = read_ground_truth(_existing(args.gt))
    store = DnsStore.from_jsonl(_existing(args.pdns))
    days = _window(args, events)
    classes = _classes(args, events)
    iot = sorted(d for d, c in classes.items() if c in IOT_SPECIFIC)
    infra = {d: classify_domain_infra(d, days, store) for d in iot}
    resolved: dict = {}
    if args.certs:
        insufficient = [d for d in iot if infra[d].value == "Insufficient"]
        resolved = resolve_unmapped(insufficient, load_certs(_existing(args.certs)),
                                    (min(days), max(days)), observed_hosts(events)).mapping
    rows = [
        (d, classes[d].value, infra[d].value, int(d in resolved),
         " ".join(f"{ip}:{port}" for ip, port in sorted(resolved.get(d, ()))))
        for d in iot
    ]
    return {"infra.csv": _csv_text(("domain", "class", "infra", "cert_resolved", "cert_hosts"), rows)}


def cmd_build_dict(args) -> dict[str, str]:
    paths = {"ground_truth": _existing(args.gt), "pdns": _existing(args.pdns),
             "certs": _existing(args.certs), "patterns": _existing(args.patterns)}
    if args.overrides:
        paths["overrides"] = _existing(args.overrides)
    if args.hierarchy:
        paths["hierarchy"] = _existing(args.hierarchy)
    events = read_ground_truth(paths["ground_truth"])
    hierarchy = HierarchyConfig.load(paths["hierarchy"]) if args.hierarchy else None
    if hierarchy is not None and args.threshold is not None:
        hierarchy = HierarchyConfig(hierarchy.labels, hierarchy.manufacturers, args.threshold)
    days = _window(args, events) or None
    result = build_dictionary(
        events, DnsStore.from_jsonl(paths["pdns"]), load_certs(paths["certs"]),
        load_patterns(paths["patterns"]),
        load_patterns(paths["overrides"]) if "overrides" in paths else None,
        hierarchy, days=days,
        provenance={"tool": f"iotflow {__version__}",
                    "inputs": {k: _digest(p) for k, p in sorted(paths.items())}},
    )
    excl = [(dev, e.reason, " ".join(sorted(e.removed))) for dev, e in sorted(result.pruned.excluded.items())]
    overlaps = [(o.first, o.second, " ".join(o.domains)) for o in result.overlaps]
    return {
        "dictionary.json": result.dictionary.dumps() + "\n",
        "exclusions.csv": _csv_text(("device_id", "reason", "removed_domains"), excl),
        "disjointness.csv": _csv_text(("first", "second", "shared_domains"), overlaps),
        "build_stats.json": json.dumps(result.stats, indent=1, sort_keys=True) + "\n",
    }


def _detector_config(args) -> DetectorConfig:
    roles = RoleConfig.from_file(_existing(args.roles)) if args.roles else RoleConfig()
    as_lookup = PrefixAsMap.from_file(_existing(args.asn)) if args.asn else None
    return DetectorConfig(args.salt or "", roles, args.mode, args.bin, args.threshold, args.pkt_threshold,
                          as_lookup)


def cmd_detect(args) -> dict[str, str]:
    dictionary = IoTDictionary.load(_existing(args.dict))
    config = _detector_config(args)
    flows, errors = [], []
    for path in args.flows:
        flows.extend(read_flows(_existing(path), args.skip_malformed, errors))
    for exc in errors:
        print(f"skipped malformed flow: {exc}", file=sys.stderr)
    if args.engine == "batch":
        from .batch import detect_batch
        events = detect_batch(flows, dictionary, config)
    else:
        events = detect(flows, dictionary, config)
    return {"events.jsonl": events_jsonl(events), "summary.csv": summary_csv(events)}


def cmd_aggregate(args) -> dict[str, str]:
    events = read_events(_existing(args.events))
    length = BIN_SECONDS[args.bin] if args.bin else None
    labels = sorted({ev.label for ev in events})
    cum = cumulative_csv(events, args.horizon)
    for label in labels:
        cum += "".join(cumulative_csv(events, args.horizon, label).splitlines(keepends=True)[1:])
    out = {
        "hourly_subscribers.csv": hourly_csv(unique_subscribers_per_bin(events, length)),
        "cumulative.csv": cum,
    }
    asn_map = None
    if args.asn_map:
        asn_map = {}
        with open(_existing(args.asn_map), encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                asn_map[row["subscriber"]] = int(row["asn"])
    if asn_map is not None or all(ev.asn is not None for ev in events):
        out["asn_ecdf.csv"] = asn_ecdf_csv(per_asn_distribution(events, asn_map))
    else:
        print("asn_ecdf.csv skipped: events carry no ASN (run detect with --asn)", file=sys.stderr)
    return out


def _experiment(args) -> Experiment:
    exp = Experiment.load(_existing(args.experiment)) if args.experiment else Experiment()
    if args.q is not None:
        exp = Experiment(exp.d_grid, args.q, exp.duration_hours, exp.seeds, exp.subset, exp.start, exp.mode,
                         exp.heavy_hitter_q)
    if args.threshold is not None:
        exp = Experiment((args.threshold,), exp.q, exp.duration_hours, exp.seeds, exp.subset, exp.start,
                         exp.mode, exp.heavy_hitter_q)
    if args.seed is not None:
        exp = Experiment(exp.d_grid, exp.q, exp.duration_hours, (args.seed,), exp.subset, exp.start, exp.mode,
                         exp.heavy_hitter_q)
    if not 0.0 < exp.q <= 1.0:
        raise ConfigError(f"sampling probability {exp.q} not in (0, 1]")
    return exp


def _crosscheck(args, exp, profiles) -> dict[str, str]:
    dictionary = IoTDictionary.load(_existing(args.dict)) if args.dict else None
    result = run_crosscheck(profiles, dictionary, exp.d_grid, exp.q, exp.duration_hours, exp.seeds,
                            exp.subset, exp.start, exp.mode)
    return {"delays.csv": result.delay_csv(), "false_positives.csv": result.false_positive_csv()}


def cmd_crosscheck(args) -> dict[str, str]:
    return _crosscheck(args, _experiment(args), load_profiles(_existing(args.profiles)))


def cmd_simulate(args) -> dict[str, str]:
    exp = _experiment(args)
    profiles = load_profiles(_existing(args.profiles))
    seed = exp.seeds[0]
    table = generate_ground_truth(profiles, exp.duration_hours, exp.mode, seed, exp.start)
    sampled = sample_table(table, SamplerConfig(exp.q, seed + 1_000_003))
    out = {
        "ground_truth.csv": _csv_text(GT_FIELDS, (ev.row() for ev in table.events())),
        "flows.csv": flows_csv(table.records()),
        "sampled.csv": flows_csv(sampled.records()),
    }
    if not args.dict:
        days = days_between(datetime.fromtimestamp(exp.start, timezone.utc).date(),
                            datetime.fromtimestamp(exp.start + exp.duration_hours * 3600 - 1, timezone.utc).date())
        out["dictionary.json"] = dictionary_from_profiles(profiles, days).dumps() + "\n"
    out.update(_crosscheck(args, exp, profiles))
    gt_obs, smp_obs = table.observations(), sampled.observations()
    window = (exp.start, exp.start + exp.duration_hours * 3600 - 1)
    out["visibility.csv"] = visibility_csv(visibility_stats(gt_obs, smp_obs, HOUR, window))
    rows = [r for q in exp.heavy_hitter_q for r in heavy_hitter_visibility(gt_obs, smp_obs, q, HOUR)]
    out["heavy_hitters.csv"] = heavy_hitter_csv(rows)
    return out


def cmd_report(args) -> dict[str, str]:
    dictionary = IoTDictionary.load(_existing(args.dict))
    lines = ["# iotflow report", "", "## Dictionary", ""]
    counts = dictionary.level_counts()
    lines.append("rules: " + ", ".join(f"{counts[k]} {k}" for k in ("Platform", "Manufacturer", "Product")))
    lines.append(f"days: {', '.join(d.isoformat() for d in dictionary.days())}")
    lines += ["", "| rule | level | parent | N | required |", "|---|---|---|---|---|"]
    for label in sorted(dictionary.rules):
        rule = dictionary.rules[label]
        lines.append(f"| {label} | {rule.level.value} | {rule.parent or ''} | {rule.N} | "
                     f"{rule.required(args.threshold)} |")
    if args.events:
        events = read_events(_existing(args.events))
        lines += ["", "## Detections", "", "| rule | subscribers | bins | active bins |", "|---|---|---|---|"]
        per: dict[str, list] = {}
        for ev in events:
            per.setdefault(ev.label, []).append(ev)
        for label in sorted(per):
            evs = per[label]
            lines.append(f"| {label} | {len({e.subscriber for e in evs})} | {len(evs)} | "
                         f"{sum(1 for e in evs if e.usage.value == 'Active')} |")
        lines.append("")
        lines.append(f"subscribers with any detection: {len({e.subscriber for e in events})}")
    if args.delays:
        with open(_existing(args.delays), encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        lines += ["", "## Detection delay", "", "| D | within 1h | within 24h | within 72h | runs |",
                  "|---|---|---|---|---|"]
        for d in sorted({r["D"] for r in rows}, key=float):
            sub = [r for r in rows if r["D"] == d]
            delays = [int(r["delay_seconds"]) for r in sub if r["delay_seconds"] != "NOT_DETECTED"]
            share = [sum(1 for x in delays if x <= h * 3600) / len(sub) for h in (1, 24, 72)]
            lines.append(f"| {d} | " + " | ".join(f"{s:.4f}" for s in share) + f" | {len(sub)} |")
    return {"report.md": "\n".join(lines) + "\n"}


# -- plumbing -----------------------------------------------------------------


def _write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            tmp = out_dir / f".{name}.{os.getpid()}.tmp"
            staged.append((tmp, out_dir / name))
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for tmp, final in staged:
            os.replace(tmp, final)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _provenance(args, argv) -> str:
    inputs = {}
    for key in ("gt", "pdns", "certs", "patterns", "overrides", "hierarchy", "dict", "events", "profiles",
                "experiment", "roles", "asn", "asn_map", "delays"):
        value = getattr(args, key, None)
        if value:
            inputs[key] = _digest(Path(value))
    for i, path in enumerate(getattr(args, "flows", None) or []):
        inputs[f"flows[{i}]"] = _digest(Path(path))
    doc = {"tool": f"iotflow {__version__}", "command": args.command, "argv": list(argv),
           "inputs": inputs, "generated_at": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


COMMANDS = {
    "build-dict": cmd_build_dict,
    "classify-domains": cmd_classify_domains,
    "infra-classify": cmd_infra_classify,
    "detect": cmd_detect,
    "aggregate": cmd_aggregate,
    "simulate": cmd_simulate,
    "crosscheck": cmd_crosscheck,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--strict", action="store_true", help="treat warnings as invariant violations")
    common.add_argument("--no-provenance", action="store_true", help="do not write provenance.json")

    def window(p):
        p.add_argument("--start", help="first day of the window (YYYY-MM-DD); default: ground-truth span")
        p.add_argument("--end", help="last day of the window (YYYY-MM-DD)")

    def classes(p):
        p.add_argument("--patterns", required=True, help="'<glob> <class>' pattern file")
        p.add_argument("--overrides", help="manual decisions, checked before the patterns")

    parser = argparse.ArgumentParser(prog="iotflow",
                                     description="Detect consumer IoT devices in sampled flow records.")
    parser.add_argument("--version", action="version", version=f"iotflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-dict", parents=[common], help="build the detection dictionary")
    p.add_argument("--gt", required=True, help="ground-truth events CSV")
    p.add_argument("--pdns", required=True, help="passive-DNS records (JSON lines)")
    p.add_argument("--certs", required=True, help="certificate scan (JSON lines)")
    classes(p)
    p.add_argument("--hierarchy", help="hierarchy config JSON")
    p.add_argument("--threshold", type=_fraction, help="default detection threshold D")
    window(p)

    p = sub.add_parser("classify-domains", parents=[common], help="Primary/Support/Generic per domain")
    p.add_argument("--gt", required=True)
    classes(p)

    p = sub.add_parser("infra-classify", parents=[common], help="dedicated/shared per IoT domain")
    p.add_argument("--gt", required=True)
    p.add_argument("--pdns", required=True)
    p.add_argument("--certs", help="certificate scan used for domains without passive-DNS data")
    classes(p)
    window(p)

    p = sub.add_parser("detect", parents=[common], help="detect IoT activity in flow records")
    p.add_argument("--dict", required=True, help="dictionary JSON")
    p.add_argument("--flows", required=True, nargs="+", help="flow CSV file(s)")
    p.add_argument("--salt", required=True, help="anonymization key")
    p.add_argument("--mode", choices=("isp", "ixp"), default="isp")
    p.add_argument("--threshold", type=_fraction, help="override every rule's D")
    p.add_argument("--bin", choices=tuple(BIN_SECONDS), default="hour")
    p.add_argument("--pkt-threshold", type=int, default=10, help="packets per bin above which usage is Active")
    p.add_argument("--roles", help="role config INI ([roles] section)")
    p.add_argument("--asn", help="'<prefix> <asn>' map for cloud and eyeball networks")
    p.add_argument("--engine", choices=("stream", "batch"), default="stream")
    p.add_argument("--skip-malformed", action="store_true", help="continue past unparsable flow lines")

    p = sub.add_parser("aggregate", parents=[common], help="time series and distribution tables")
    p.add_argument("--events", required=True, help="events JSONL from detect")
    p.add_argument("--bin", choices=tuple(BIN_SECONDS), help="bin of the subscriber series; default: events' own")
    p.add_argument("--horizon", type=int, help="days in the cumulative series; default: event span")
    p.add_argument("--asn-map", help="CSV subscriber,asn overriding the events' ASNs")

    for name, helptext in (("simulate", "synthetic traffic, sampling and crosscheck"),
                           ("crosscheck", "detection delay and false-positive experiments only")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--profiles", required=True, help="device profiles JSON")
        p.add_argument("--experiment", help="experiment JSON")
        p.add_argument("--dict", help="dictionary JSON; default: derived from the profiles")
        p.add_argument("--seed", type=int, help="run this single seed instead of the experiment's list")
        p.add_argument("--q", type=float, help="sampling probability")
        p.add_argument("--threshold", type=_fraction, help="single D instead of the experiment's grid")

    p = sub.add_parser("report", parents=[common], help="human-readable summary")
    p.add_argument("--dict", required=True)
    p.add_argument("--events")
    p.add_argument("--delays")
    p.add_argument("--threshold", type=_fraction)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            if args.strict:
                warnings.simplefilter("error")
            try:
                files = COMMANDS[args.command](args)
            except Warning as w:
                raise InvariantError(f"{type(w).__name__}: {w}") from None
        if not args.no_provenance:
            files["provenance.json"] = _provenance(args, argv)
        _write_outputs(Path(args.out), files)
    except IoTFlowError as exc:
        print(f"iotflow {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"iotflow {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
