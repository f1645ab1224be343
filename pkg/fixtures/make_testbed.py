"""Regenerate the testbed fixture corpus under fixtures/testbed/.

The corpus is a hand-designed stand-in for a lab testbed: 524 contacted
domains (415 Primary, 19 Support, 90 Generic); of the 434 IoT-specific ones
217 sit on dedicated infrastructure, 202 on shared infrastructure and 15
lack passive-DNS data, 8 of which are recoverable through certificates.
Running it twice produces identical files.

    python fixtures/make_testbed.py [outdir]
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import random
import sys
from collections import defaultdict
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

DAYS = [date(2019, 11, 15), date(2019, 11, 16), date(2019, 11, 17)]
T0 = int(datetime(2019, 11, 15, tzinfo=timezone.utc).timestamp())
SEED = 20191115

PREFIXES = [
    "api", "device", "fw", "ota", "mqtt", "events", "metrics", "config", "auth", "push", "relay",
    "stream", "media", "logs", "update", "registry", "telemetry", "gateway", "sync", "notify",
    "voice", "alerts", "pair", "link", "cloud", "hub", "sso", "clips", "live", "dl", "cert",
    "control", "cmd", "state", "report",
]
REGIONS = ["", "-us", "-eu", "-ap", "-na", "-fe", "-sa", "-cn", "-us2", "-eu2"]


class Corpus:
    def __init__(self):
        self.domains: dict[str, dict] = {}
        self.device_domains: dict[str, list[str]] = defaultdict(list)
        self.used: set[str] = set()
        self.rng = random.Random(SEED)

    def names(self, sld: str, n: int) -> list[str]:
        out = []
        for region in REGIONS:
            for prefix in PREFIXES:
                name = f"{prefix}{region}.{sld}"
                if name not in self.used:
                    self.used.add(name)
                    out.append(name)
                    if len(out) == n:
                        return out
        raise RuntimeError(f"name pool exhausted for {sld}")

    def add(self, names, cls: str, infra: str | None, devices, port: int = 443, proto: str = "TCP"):
        for name in names:
            self.used.add(name)
            entry = self.domains.setdefault(name, {"cls": cls, "infra": infra, "port": port, "proto": proto})
            assert entry["cls"] == cls and entry["infra"] == infra, name
            for dev in devices:
                if name not in self.device_domains[dev]:
                    self.device_domains[dev].append(name)
        return list(names)


ECHOS = ["echo-dot", "echo-spot", "echo-show-5", "echo-plus", "fire-tv"]


def build_catalog(c: Corpus):
    ded, sh = "dedicated", "shared"
    # Alexa voice service, reached by every Alexa-enabled device
    c.add(["avs-alexa-na.amazon.com"], "Primary", ded, ECHOS + ["allure-speaker"])
    amazon_slds = ["amazon.com", "a2z.com", "amazonalexa.com", "amazon-dss.com"]
    amz = []
    for i in range(29):
        amz += c.names(amazon_slds[i % 4], 1)
    c.add(amz, "Primary", ded, ECHOS)
    c.add([c.names(s, 1)[0] for s in ["tunein.com", "iheart.com", "pandora.com", "siriusxm.com"]],
          "Support", ded, ECHOS)
    fire = []
    for i in range(30):
        fire += c.names(["amazonvideo.com", "aiv-delivery.net", "media-amazon.com"][i % 3], 1)
    c.add(fire, "Primary", ded, ["fire-tv"])
    c.add([c.names(s, 1)[0] for s in ["imdbtv-ads.com", "tvguide-meta.com", "freevee-cdn.com"]],
          "Support", ded, ["fire-tv"])

    samsung = ["samsung-tv", "samsung-fridge", "smartthings-hub"]
    c.add(["otn.samsungotn.net"], "Primary", ded, samsung)
    c.add([c.names(s, 1)[0] for s in ["samsungcloudsolution.com", "samsungelectronics.com", "samsungqbe.com",
                                      "samsungosp.com", "samsungcloudsolution.com", "samsungelectronics.com",
                                      "samsungqbe.com", "samsungosp.com"]], "Primary", ded, samsung)
    c.add([c.names(s, 1)[0] for s in ["gracenote.com", "tvpluscontent.com", "gracenote.com",
                                      "tvpluscontent.com", "weatherfeed-partner.com"]], "Support", ded, samsung)
    tv = []
    for i in range(13):
        tv += c.names(["samsungcloudsolution.com", "samsungacr.com", "samsungcloudcdn.com"][i % 3], 1)
    c.add(tv, "Primary", ded, ["samsung-tv"])
    c.add([c.names(s, 1)[0] for s in ["tvpluscontent.com", "gracenote.com", "weatherfeed-partner.com"]],
          "Support", ded, ["samsung-tv"])

    tuya = ["smartlife-bulb", "smartlife-remote", "magichome-strip"]
    c.add(c.names("tuyaus.com", 3) + c.names("tuyaeu.com", 1), "Primary", ded, tuya, 8886)
    c.add(c.names("electricimp.com", 3), "Primary", ded, ["appkettle"], 31314)
    c.add(["a3k7odshaiipe8-ats.iot.us-east-1.amazonaws.com", "a1zxw2vj5rq9fu-ats.iot.us-west-2.amazonaws.com"],
          "Primary", ded, ["flux-bulb"], 8883)

    def family(sld, base_devs, base_n, products):
        c.add(c.names(sld, base_n), "Primary", ded, base_devs)
        for dev, n in products:
            c.add(c.names(sld, n), "Primary", ded, [dev])

    # one product per manufacturer, so sibling products never share inherited domains
    family("miot-spec.org", ["xiaomi-rice-cooker", "xiaomi-plug"], 3, [("xiaomi-rice-cooker", 2)])
    family("tplinkcloud.com", ["tplink-bulb", "tplink-plug"], 3, [("tplink-plug", 2)])
    family("meethue.com", ["philips-hue-bridge", "philips-hue-sync"], 3, [("philips-hue-bridge", 3)])
    family("immedia-semi.com", ["blink-camera", "blink-hub"], 4, [("blink-camera", 2)])
    family("xiaoyi.com", ["yi-cam", "yi-dome"], 7, [("yi-dome", 2)])
    family("ring.com", ["ring-doorbell", "ring-spotlight"], 7, [("ring-doorbell", 2)])
    family("nest.com", ["nest-thermostat", "nest-cam"], 8, [("nest-cam", 2)])
    family("roku.com", ["roku-tv", "roku-stick"], 10, [("roku-tv", 2)])
    c.add(c.names("smarter.am", 2), "Primary", ded, ["smarter-ikettle", "smarter-coffee"], 2081)
    c.add(c.names("smarter.am", 2), "Primary", ded, ["smarter-ikettle"], 2081)

    flat = [("amcrest-cam", "amcrestcloud.com", 6), ("reolink-cam", "reolink.com", 6),
            ("wansview-cam", "wansview.com", 5), ("zmodo-doorbell", "meshare.com", 6),
            ("microseven-cam", "microseven.com", 5), ("honeywell-thermostat", "tccna.honeywell.com", 5),
            ("lg-tv", "lgtvsdp.com", 1), ("netatmo-weather", "netatmo.net", 7),
            ("anova-sousvide", "anovaculinary.io", 4)]
    for dev, sld, n in flat:
        c.add(c.names(sld, n), "Primary", ded, [dev])

    # passive DNS has nothing on these 15; certificates recover 8 (ring 2, nest 2, roku 2, anova, honeywell)
    c.add(["cam-relay.ring.com", "es.ring.com"], "Primary", "cert", ["ring-doorbell"])
    c.add(["frontdoor.nest.com", "logsink.nest.com"], "Primary", "cert", ["nest-thermostat"])
    c.add(["scribe.roku.com", "giga.roku.com"], "Primary", "cert", ["roku-tv"])
    c.add(["pc.anovaculinary.io"], "Primary", "cert", ["anova-sousvide"])
    c.add(["mytotalconnectcomfort.tccna.honeywell.com"], "Primary", "cert", ["honeywell-thermostat"])
    c.add(["api.xbcs.net", "nat.xbcs.net", "a.fw.xbcs.net", "heartbeat.xwemo.com"], "Primary", "nocert",
          ["wemo-plug"])
    c.add(["hub-api.winkapp.com", "agent.winkapp.com", "ota.wink.com"], "Primary", "nocert", ["wink-hub"])

    # shared backends (202)
    google = c.names("googlehome-devices.com", 14) + c.names("home-assist.net", 8)
    c.add(google[:18], "Primary", sh, ["google-home", "google-home-mini"])
    c.add(google[18:], "Primary", sh, ["google-home"])
    c.add(c.names("chromecast-ota.com", 6), "Primary", sh, ["google-home-mini"])
    apple = c.names("apple-tvcloud.com", 16) + c.names("icloud-media.com", 12)
    c.add(apple, "Primary", sh, ["apple-tv"])
    c.add(c.names("appletv-partner.com", 2), "Support", sh, ["apple-tv"])
    c.add(c.names("lefun-cloud.com", 13), "Primary", sh, ["lefun-cam"])
    c.add(c.names("lgtvcommon.com", 3), "Primary", sh, ["lg-tv"])
    c.add(["samsung-eu.whisk.com", "samsung-us.whisk.com"], "Support", sh, ["samsung-fridge"])
    c.add(c.names("samsungiotcloud.com", 6), "Primary", sh, ["samsung-fridge"])
    c.add(c.names("smartthings.com", 4), "Primary", sh, ["smartthings-hub"])
    c.add(c.names("belkin-wemo.com", 2), "Primary", sh, ["wemo-plug"])
    c.add(c.names("wink-cdn.com", 2), "Primary", sh, ["wink-hub"])
    c.add(c.names("amazon-cdnassets.com", 12), "Primary", sh, ECHOS)
    c.add(c.names("firetv-images.com", 14), "Primary", sh, ["fire-tv"])
    c.add(c.names("allure-audio.com", 4), "Primary", sh, ["allure-speaker"])
    c.add(c.names("tuya-cdn.com", 6), "Primary", sh, ["smartlife-bulb", "smartlife-remote"])
    c.add(c.names("magichome-cdn.com", 3), "Primary", sh, ["magichome-strip"])
    c.add(c.names("samsungtv-cdn.com", 10), "Primary", sh, ["samsung-tv"])
    rest = {
        "ring-doorbell": ("ring-cdn.com", 6), "nest-thermostat": ("nest-static.com", 5),
        "roku-tv": ("roku-cdn.com", 8), "blink-camera": ("blink-media.com", 4),
        "tplink-plug": ("tplink-cdn.com", 3), "xiaomi-plug": ("mi-static.com", 3),
        "philips-hue-bridge": ("hue-static.com", 3), "yi-cam": ("yi-cdn.com", 4),
        "amcrest-cam": ("amcrest-cdn.com", 3), "reolink-cam": ("reolink-cdn.com", 3),
        "netatmo-weather": ("netatmo-static.com", 3), "zmodo-doorbell": ("zmodo-cdn.com", 3),
        "appkettle": ("appkettle-cdn.com", 2), "flux-bulb": ("fluxsmart-cdn.com", 2),
        "smarter-ikettle": ("smarter-cdn.com", 2), "honeywell-thermostat": ("resideo-cdn.com", 3),
        "anova-sousvide": ("anova-static.com", 2), "wansview-cam": ("wansview-cdn.com", 2),
        "microseven-cam": ("m7-cdn.com", 2),
    }
    for dev, (sld, n) in rest.items():
        c.add(c.names(sld, n), "Primary", sh, [dev])

    # generic services
    generic = ["time.microsoft.com", "wikipedia.org", "www.wikipedia.org", "time.google.com",
               "time.apple.com", "time.windows.com", "time.nist.gov"]
    generic += [f"{i}.pool.ntp.org" for i in range(4)] + [f"{i}.north-america.pool.ntp.org" for i in range(4)]
    for sld, n in [("google.com", 9), ("gstatic.com", 6), ("googleapis.com", 10), ("doubleclick.net", 5),
                   ("facebook.com", 6), ("cloudflare-dns.com", 3), ("msftconnecttest.com", 3),
                   ("spotify.com", 8), ("youtube.com", 6), ("netflix.com", 6), ("akamaihd-assets.com", 4),
                   ("digicert.com", 4), ("letsencrypt.org", 3), ("crashlytics.com", 2)]:
        generic += c.names(sld, n)
    assert len(generic) == 90, len(generic)
    devices = sorted(c.device_domains)
    for i, g in enumerate(generic):
        users = [devices[(i * 7 + k) % len(devices)] for k in range(1 + i % 3)]
        c.add([g], "Generic", None, users, 123 if g.startswith("time.") or "ntp" in g else 443,
              "UDP" if g.startswith("time.") or "ntp" in g else "TCP")


class IpPool:
    def __init__(self, base: str):
        self.net = ipaddress.ip_network(base)
        self.i = 0

    def take(self) -> str:
        self.i += 1
        return str(self.net.network_address + self.i)


def record(rrname, rrtype, rdata, first, last):
    return {"rrname": rrname, "rrtype": rrtype, "rdata": rdata,
            "time_first": first.isoformat(), "time_last": last.isoformat()}


def build_dns(c: Corpus):
    """Passive-DNS records; returns (records, day -> domain -> ips, observed ip per domain)."""
    pool = {"ded": IpPool("52.94.0.0/16"), "vm": IpPool("3.208.0.0/16"), "sh": IpPool("23.32.0.0/16"),
            "cf": IpPool("13.224.0.0/16"), "v6": IpPool("2600:1f18::/48")}
    recs = []
    ips: dict[date, dict[str, set[str]]] = {d: defaultdict(set) for d in DAYS}
    first, last = date(2019, 11, 1), date(2019, 11, 30)
    ded = sorted(n for n, e in c.domains.items() if e["infra"] == "dedicated")
    sld_of = {n: ".".join(n.split(".")[-2:]) for n in ded}
    k = 0
    pending_sibling = None
    for name in ded:
        variant = k % 5
        k += 1
        if variant == 0:
            ip = pool["ded"].take()
            recs.append(record(name, "A", ip, first, last))
            for d in DAYS:
                ips[d][name].add(ip)
        elif variant == 1:
            for d in DAYS:
                ip = pool["ded"].take()
                recs.append(record(name, "A", ip, d, d))
                ips[d][name].add(ip)
        elif variant == 2:
            ip = pool["vm"].take()
            vm = "ec2-" + ip.replace(".", "-") + ".compute-1.amazonaws.com"
            recs.append(record(name, "CNAME", vm, first, last))
            recs.append(record(vm, "A", ip, first, last))
            for d in DAYS:
                ips[d][name].add(ip)
        elif variant == 3:
            if pending_sibling and sld_of[pending_sibling[0]] == sld_of[name]:
                ip = pending_sibling[1]
            else:
                ip = pool["ded"].take()
            pending_sibling = (name, ip)
            recs.append(record(name, "A", ip, first, last))
            for d in DAYS:
                ips[d][name].add(ip)
        else:
            v4, v6 = pool["ded"].take(), pool["v6"].take()
            recs.append(record(name, "A", v4, first, last))
            recs.append(record(name, "AAAA", v6, first, last))
            # an older co-tenant that stopped before the window must not count
            recs.append(record(f"old-tenant{k}.example-shop.com", "A", v4, date(2019, 9, 1), date(2019, 10, 20)))
            for d in DAYS:
                ips[d][name] |= {v4, v6}

    shared = sorted(n for n, e in c.domains.items() if e["infra"] == "shared")
    for j, name in enumerate(shared):
        variant = j % 3
        tenant = f"www.tenant{j:03d}-store.com"
        if variant == 0:
            edge = f"e{4000 + j}.a.akamaiedge.net"
            ip = pool["sh"].take()
            for who in (name, tenant):
                alias = who.replace(".", "-") + ".edgekey.net"
                recs.append(record(who, "CNAME", alias, first, last))
                recs.append(record(alias, "CNAME", edge, first, last))
            recs.append(record(edge, "A", ip, first, last))
        elif variant == 1:
            ip = pool["sh"].take()
            recs.append(record(name, "A", ip, first, last))
            # the unrelated co-tenant shows up on the second day only
            recs.append(record(tenant, "A", ip, DAYS[1], DAYS[1]))
        else:
            ip = pool["cf"].take()
            mine, theirs = f"d{j:04d}a.cloudfront.net", f"d{j:04d}b.cloudfront.net"
            recs.append(record(name, "CNAME", mine, first, last))
            recs.append(record(mine, "A", ip, first, last))
            recs.append(record(tenant, "CNAME", theirs, first, last))
            recs.append(record(theirs, "A", ip, first, last))
        for d in DAYS:
            ips[d][name].add(ip)

    # some insufficient names only have a dangling alias
    for name in ["es.ring.com", "logsink.nest.com", "agent.winkapp.com"]:
        recs.append(record(name, "CNAME", name.split(".")[0] + "-lb.unresolved-edge.com", first, last))
    recs.sort(key=lambda r: (r["rrname"], r["rrtype"], r["rdata"], r["time_first"]))
    return recs, ips


def sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def cert(ip, port, subject, sans, key, banner, day):
    return {"ip": ip, "port": port, "subject_name": subject, "san_list": sans,
            "cert_sha256": sha(key), "banner_checksum": sha(banner)[:16], "observed_date": day.isoformat()}


def build_certs(c: Corpus):
    """Certificate scan rows; returns (certs, observed host per cert-tier domain, expansion per domain)."""
    pool = IpPool("35.160.0.0/16")
    certs, observed, expansion = [], {}, {}
    d1, d2 = DAYS[0], DAYS[1]
    resolved = {
        "cam-relay.ring.com": ("*.ring.com", ["ring.com", "*.ring.com"]),
        "es.ring.com": ("es.ring.com", []),
        "frontdoor.nest.com": ("*.nest.com", ["nest.com"]),
        "logsink.nest.com": ("logsink.nest.com", ["logsink.nest.com"]),
        "scribe.roku.com": ("*.roku.com", ["*.roku.com", "roku.com"]),
        "giga.roku.com": ("giga.roku.com", []),
        "pc.anovaculinary.io": ("*.anovaculinary.io", []),
        "mytotalconnectcomfort.tccna.honeywell.com": ("*.tccna.honeywell.com", ["honeywell.com"]),
    }
    for i, (domain, (subject, sans)) in enumerate(sorted(resolved.items())):
        key, banner = f"key-{domain}", f"banner-{domain}"
        anchor = pool.take()
        observed[domain] = anchor
        hosts = {(anchor, 443)}
        certs.append(cert(anchor, 443, subject, sans, key, banner, d1))
        for n in range(1 + i % 3):
            ip = pool.take()
            certs.append(cert(ip, 443, subject, sans, key, banner, DAYS[n % 3]))
            hosts.add((ip, 443))
        # same certificate, different banner: not the same service
        certs.append(cert(pool.take(), 443, subject, sans, key, banner + "-other", d2))
        # same pair, but scanned long after the window
        certs.append(cert(pool.take(), 443, subject, sans, key, banner, date(2020, 2, 1)))
        expansion[domain] = hosts
    unresolved = {
        "api.xbcs.net": ("*.xbcs.net", ["xbcs.net", "other-vendor.org"]),   # foreign SAN
        "nat.xbcs.net": ("*.xbcs.net", ["*.cdn-partner.net"]),               # foreign SAN
        "a.fw.xbcs.net": ("*.xbcs.net", []),                                 # wildcard covers one label only
        "heartbeat.xwemo.com": None,                                          # never scanned
        "hub-api.winkapp.com": ("portal.winkapp.com", []),                  # names another host
        "agent.winkapp.com": "elsewhere",                                     # only on an unobserved host
        "ota.wink.com": "late",                                               # only outside the window
    }
    for domain, spec in sorted(unresolved.items()):
        anchor = pool.take()
        observed[domain] = anchor
        if spec is None:
            continue
        if spec == "elsewhere":
            certs.append(cert(pool.take(), 443, domain, [], f"key-{domain}", "b", d1))
        elif spec == "late":
            certs.append(cert(anchor, 443, domain, [], f"key-{domain}", "b", date(2019, 12, 20)))
        else:
            subject, sans = spec
            certs.append(cert(anchor, 443, subject, sans, f"key-{domain}", "b", d1))
    # unrelated scan noise
    for n in range(12):
        certs.append(cert(pool.take(), 443, f"*.shop{n}.example-retail.com", [], f"noise{n}", "n", DAYS[n % 3]))
    certs.sort(key=lambda r: (r["ip"], r["port"], r["observed_date"], r["cert_sha256"]))
    return certs, observed, expansion


MODES = [("Idle", T0 + 8 * 3600, T0 + 20 * 3600), ("Active", T0 + 86400 + 8 * 3600, T0 + 86400 + 20 * 3600),
         ("Idle", T0 + 2 * 86400 + 6 * 3600, T0 + 2 * 86400 + 12 * 3600)]


def build_ground_truth(c: Corpus, ips, observed):
    rng = random.Random(SEED + 1)
    generic_ip = {}
    rows = []
    for dev in sorted(c.device_domains):
        for mode, lo, hi in MODES:
            day = DAYS[(lo - T0) // 86400]
            for name in c.device_domains[dev]:
                entry = c.domains[name]
                for _ in range(2 if mode == "Active" else 1):
                    ts = rng.randrange(lo, hi)
                    if name in observed:
                        ip = observed[name]
                    elif entry["infra"] is None:
                        ip = generic_ip.setdefault(name, f"142.250.{len(generic_ip) // 200}.{len(generic_ip) % 200 + 1}")
                    else:
                        ip = sorted(ips[day][name])[0]
                    pkts = rng.randint(30, 400) * (6 if mode == "Active" else 1)
                    rows.append((dev, ts, name, ip, entry["port"], entry["proto"], pkts, mode))
            # a few events whose name could not be recovered
            rows.append((dev, rng.randrange(lo, hi), "", "198.51.100.7", 443, "TCP", rng.randint(1, 9), mode))
    rows.sort(key=lambda r: (r[1], r[0], r[2]))
    return rows


HIERARCHY = {
    "default_D": 0.4,
    "labels": [
        {"label": "Alexa-Enabled", "level": "Platform",
         "devices": ECHOS + ["allure-speaker"]},
        {"label": "Amazon-products", "level": "Manufacturer", "parent": "Alexa-Enabled", "devices": ECHOS},
        {"label": "Fire-TV", "level": "Product", "parent": "Amazon-products", "devices": ["fire-tv"]},
        {"label": "Samsung-IoT", "level": "Manufacturer",
         "devices": ["samsung-tv", "samsung-fridge", "smartthings-hub"]},
        {"label": "Samsung-TV", "level": "Product", "parent": "Samsung-IoT", "devices": ["samsung-tv"]},
        {"label": "Tuya", "level": "Platform",
         "devices": ["smartlife-bulb", "smartlife-remote", "magichome-strip"]},
        {"label": "Electric-Imp", "level": "Platform", "devices": ["appkettle"]},
        {"label": "AWS-IoT", "level": "Platform", "devices": ["flux-bulb"]},
        {"label": "Xiaomi", "level": "Manufacturer", "devices": ["xiaomi-rice-cooker", "xiaomi-plug"]},
        {"label": "Xiaomi-Rice-Cooker", "level": "Product", "parent": "Xiaomi", "devices": ["xiaomi-rice-cooker"]},
        {"label": "TP-Link", "level": "Manufacturer", "devices": ["tplink-bulb", "tplink-plug"]},
        {"label": "TP-Link-Plug", "level": "Product", "parent": "TP-Link", "devices": ["tplink-plug"]},
        {"label": "Philips", "level": "Manufacturer", "devices": ["philips-hue-bridge", "philips-hue-sync"]},
        {"label": "Philips-Hue", "level": "Product", "parent": "Philips", "devices": ["philips-hue-bridge"]},
        {"label": "Blink", "level": "Manufacturer", "devices": ["blink-camera", "blink-hub"]},
        {"label": "Blink-Camera", "level": "Product", "parent": "Blink", "devices": ["blink-camera"]},
        {"label": "Smarter", "level": "Manufacturer", "devices": ["smarter-ikettle", "smarter-coffee"]},
        {"label": "Smarter-iKettle", "level": "Product", "parent": "Smarter", "devices": ["smarter-ikettle"]},
        {"label": "Yi", "level": "Manufacturer", "devices": ["yi-cam", "yi-dome"]},
        {"label": "Yi-Dome-Camera", "level": "Product", "parent": "Yi", "devices": ["yi-dome"]},
        {"label": "Ring", "level": "Manufacturer", "devices": ["ring-doorbell", "ring-spotlight"]},
        {"label": "Ring-Doorbell", "level": "Product", "parent": "Ring", "devices": ["ring-doorbell"]},
        {"label": "Nest", "level": "Manufacturer", "devices": ["nest-thermostat", "nest-cam"]},
        {"label": "Nest-Cam", "level": "Product", "parent": "Nest", "devices": ["nest-cam"]},
        {"label": "Roku", "level": "Manufacturer", "devices": ["roku-tv", "roku-stick"]},
        {"label": "Roku-TV", "level": "Product", "parent": "Roku", "devices": ["roku-tv"]},
    ],
    "manufacturers": {
        "amcrest-cam": "Amcrest", "reolink-cam": "Reolink", "wansview-cam": "Wansview",
        "zmodo-doorbell": "Zmodo", "microseven-cam": "Microseven", "honeywell-thermostat": "Honeywell",
        "lg-tv": "LG", "netatmo-weather": "Netatmo", "anova-sousvide": "Anova",
        "google-home": "Google", "google-home-mini": "Google", "apple-tv": "Apple", "lefun-cam": "Lefun",
        "wemo-plug": "Belkin", "wink-hub": "Wink",
    },
}


def patterns(c: Corpus) -> tuple[str, str]:
    generic_globs = ["time.*", "*.ntp.org", "*.wikipedia.org", "wikipedia.org", "*.google.com", "*.gstatic.com",
                     "*.googleapis.com", "*.doubleclick.net", "*.facebook.com", "*.cloudflare-dns.com",
                     "*.msftconnecttest.com", "*.spotify.com", "*.youtube.com", "*.netflix.com",
                     "*.akamaihd-assets.com", "*.digicert.com", "*.letsencrypt.org", "*.crashlytics.com",
                     "*.whisk.com"]
    by_cls = defaultdict(set)
    for name, e in c.domains.items():
        if e["cls"] == "Generic" or name.endswith(".whisk.com") or ".iot." in name:
            continue
        by_cls[e["cls"]].add("*." + ".".join(name.split(".")[-2:]))
    lines = ["# Domain classes; first matching glob wins.", "# generic services"]
    lines += [f"{g} Generic" for g in generic_globs]
    lines.append("# complementary services")
    lines += [f"{g} Support" for g in sorted(by_cls["Support"])]
    lines.append("# manufacturer domains")
    lines += [f"{g} Primary" for g in sorted(by_cls["Primary"] - by_cls["Support"])]
    overrides = ["# manual decisions, checked before the pattern file",
                 "samsung-*.whisk.com Support", "*.iot.*.amazonaws.com Primary"]
    return "\n".join(lines) + "\n", "\n".join(overrides) + "\n"


ROLES = """[roles]
server_ports = 80, 443, 8080, 123, 53
# cloud/CDN networks: Amazon, Akamai, Google
server_asns = 16509, 20940, 15169
subscriber_ranges = 100.64.0.0/10, 2001:db8:64::/48
established_rule = ack_or_zero
"""

ASN_MAP = """# prefix asn
100.64.0.0/18 64601
100.64.64.0/18 64602
100.64.128.0/17 64603
2001:db8:64::/48 64604
52.94.0.0/16 16509
3.208.0.0/16 16509
13.224.0.0/16 16509
35.160.0.0/16 16509
2600:1f18::/48 16509
23.32.0.0/16 20940
142.250.0.0/16 15169
"""

SUBSCRIBER_DEVICES = [
    ["echo-dot"], ["echo-dot", "fire-tv"], ["fire-tv"], ["echo-show-5", "ring-doorbell"],
    ["samsung-tv"], ["samsung-tv", "samsung-fridge"], ["tplink-plug", "tplink-bulb"], ["philips-hue-bridge"],
    ["blink-camera", "blink-hub"], ["xiaomi-rice-cooker"], ["smarter-ikettle"], ["roku-tv", "nest-thermostat"],
    ["lg-tv"], ["smartlife-bulb"], ["appkettle"], ["flux-bulb"], ["yi-cam"], ["amcrest-cam", "reolink-cam"],
    ["netatmo-weather", "nest-cam"], ["anova-sousvide", "honeywell-thermostat", "roku-stick"], ["google-home"], ["apple-tv"],
    ["echo-plus", "xiaomi-plug"], ["zmodo-doorbell", "ring-spotlight"], ["wansview-cam", "microseven-cam", "yi-dome"], ["echo-spot"],
    ["smarter-coffee"], ["philips-hue-sync"], ["allure-speaker"], ["samsung-tv", "echo-dot"],
]


def subscriber_addrs():
    v4 = [f"100.64.{(i // 6) * 40 + i % 6}.{10 + i}" for i in range(28)]
    v6 = ["2001:db8:64:1::10", "2001:db8:64:2::20"]
    return v4 + v6


def build_flows(c: Corpus, ips, expansion):
    """Sparse sampled flows of 30 subscriber lines over the three days."""
    rng = random.Random(SEED + 2)
    endpoints = {}
    for name, e in c.domains.items():
        if e["infra"] == "dedicated" or e["infra"] == "shared":
            endpoints[name] = {d: sorted(ips[d][name]) for d in DAYS}
        elif name in expansion:
            endpoints[name] = {d: sorted(ip for ip, _ in expansion[name]) for d in DAYS}
    rows = []
    subs = subscriber_addrs()
    for s, (addr, devs) in enumerate(zip(subs, SUBSCRIBER_DEVICES)):
        v6 = ":" in addr
        for hour in range(72):
            day = DAYS[hour // 24]
            busy = rng.random() < 0.25
            for dev in devs:
                for name in c.device_domains[dev]:
                    eps = endpoints.get(name, {}).get(day)
                    if not eps:
                        continue
                    cands = [ip for ip in eps if (":" in ip) == v6] or eps
                    if (":" in cands[0]) != v6:
                        continue
                    p = 0.35 if busy else 0.08
                    if rng.random() >= p:
                        continue
                    e = c.domains[name]
                    ts = T0 + hour * 3600 + rng.randrange(3600)
                    pkts = rng.randint(3, 9) if busy else rng.randint(1, 2)
                    ip = rng.choice(cands)
                    eph = rng.randrange(32768, 60999)
                    flags = 0 if e["proto"] != "TCP" else rng.choice([0x18, 0x10, 0x1a, 0x19, 0x00])
                    if e["proto"] == "TCP" and rng.random() < 0.04:
                        flags = 0x02
                    if rng.random() < 0.2:
                        rows.append((ts, ip, addr, e["port"], eph, e["proto"], pkts, pkts * rng.randint(60, 1400),
                                     flags, 1000))
                    else:
                        rows.append((ts, addr, ip, eph, e["port"], e["proto"], pkts, pkts * rng.randint(60, 1400),
                                     flags, 1000))
            # background traffic that matches nothing
            for _ in range(rng.randint(0, 3)):
                ts = T0 + hour * 3600 + rng.randrange(3600)
                dst = "2001:db8:ffff::1" if v6 else f"151.101.{rng.randrange(256)}.{rng.randrange(1, 255)}"
                rows.append((ts, addr, dst, rng.randrange(32768, 60999), 443, "TCP", 1, rng.randint(60, 1500),
                             0x18, 1000))
    rows.sort()
    return rows


def write(outdir: Path):
    c = Corpus()
    build_catalog(c)
    recs, ips = build_dns(c)
    certs, observed, expansion = build_certs(c)
    gt = build_ground_truth(c, ips, observed)
    flows = build_flows(c, ips, expansion)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "ground_truth.csv", "w", encoding="utf-8") as fh:
        fh.write("device_id,timestamp,domain,ip,port,protocol,packets,mode\n")
        for r in gt:
            fh.write(",".join(str(x) for x in r) + "\n")
    with open(outdir / "pdns.jsonl", "w", encoding="utf-8") as fh:
        for r in recs:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(outdir / "certs.jsonl", "w", encoding="utf-8") as fh:
        for r in certs:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    pat, ovr = patterns(c)
    (outdir / "patterns.txt").write_text(pat, encoding="utf-8")
    (outdir / "overrides.txt").write_text(ovr, encoding="utf-8")
    (outdir / "hierarchy.json").write_text(json.dumps(HIERARCHY, indent=1) + "\n", encoding="utf-8")
    (outdir / "roles.ini").write_text(ROLES, encoding="utf-8")
    (outdir / "asn.txt").write_text(ASN_MAP, encoding="utf-8")
    with open(outdir / "flows.csv", "w", encoding="utf-8") as fh:
        fh.write("timestamp,src_addr,dst_addr,src_port,dst_port,protocol,packets,bytes,tcp_flags,sampling_denominator\n")
        for ts, src, dst, sp, dp, proto, pk, by, fl, s in flows:
            fh.write(f"{ts},{src},{dst},{sp},{dp},{proto},{pk},{by},0x{fl:02x},{s}\n")
    counts = defaultdict(int)
    for e in c.domains.values():
        counts[e["cls"]] += 1
        counts[e["infra"]] += 1
    print(f"{len(c.domains)} domains {dict(counts)}; {len(gt)} events, {len(recs)} dns, "
          f"{len(certs)} certs, {len(flows)} flows -> {outdir}")


if __name__ == "__main__":
    write(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "testbed")
