"""Compare the compiled detection kernels with the NumPy fallback.

    python benchmarks/bench_kernels.py [--rules 200] [--flows 1000000] [--groups 20000]

Both backends run on the same encoded workload; the script checks that
their outputs agree before printing timings.
"""

from __future__ import annotations

import argparse
import time
from datetime import date

import numpy as np

from iotflow import _accel
from iotflow.batch import EncodedDictionary
from iotflow.dictionary import DetectionRule, IoTDictionary, Level

DAY = date(2019, 11, 15)


def synthetic_dictionary(n_rules: int, seed: int) -> IoTDictionary:
    rng = np.random.default_rng(seed)
    rules, endpoints = {}, {}
    for r in range(n_rules):
        n = int(rng.integers(1, 41))
        domains = [f"d{k}.vendor{r}.com" for k in range(n)]
        n_primary = int(rng.integers(1, n + 1))
        rules[f"R{r:04d}"] = DetectionRule(f"R{r:04d}", Level.MANUFACTURER, None,
                                           frozenset(domains[:n_primary]), frozenset(domains[n_primary:]))
        for k, dom in enumerate(domains):
            endpoints[dom] = frozenset({(f"10.{r // 250}.{r % 250}.{k + 1}", 443, "TCP")})
    return IoTDictionary(rules, (DAY, DAY), {DAY: endpoints})


def workload(enc: EncodedDictionary, n_flows: int, n_groups: int, seed: int):
    rng = np.random.default_rng(seed + 1)
    n_ep = enc.ep_ptr.size - 1
    group = rng.integers(0, n_groups, n_flows)
    ep = rng.integers(0, n_ep, n_flows)
    packets = rng.geometric(0.5, n_flows)
    offsets = rng.integers(0, 3600, n_flows)
    return group, ep, packets, offsets


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rules", type=int, default=200)
    ap.add_argument("--flows", type=int, default=1_000_000)
    ap.add_argument("--groups", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    enc = EncodedDictionary(synthetic_dictionary(args.rules, args.seed))
    data = workload(enc, args.flows, args.groups, args.seed)
    print(f"{enc.n_rule} rules, {enc.n_slot} slots, {args.flows} flows, {args.groups} groups")
    backends = ["python"]
    try:
        _accel.get_kernels("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled kernels not built; timing the fallback only")

    results = {}
    for name in backends:
        secs, out = best_of(lambda: enc.run(*data, args.groups, backend=name), args.repeat)
        results[name] = (secs, out)
        print(f"{name:>7}: {secs * 1000:9.1f} ms  ({args.flows / secs / 1e6:.2f} M flows/s)")
    if len(results) == 2:
        a, b = results["cython"][1], results["python"][1]
        same = all(np.array_equal(x, y) for x, y in zip(a, b))
        print(f"outputs identical: {same}")
        print(f"speedup: {results['python'][0] / results['cython'][0]:.1f}x")


if __name__ == "__main__":
    main()
