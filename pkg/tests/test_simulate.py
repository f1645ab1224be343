import math
import statistics

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import SIM
from iotflow.detector import detection_delay, utc_day
from iotflow.errors import ConfigError, UnknownLabel
from iotflow.flows import FlowRecord
from iotflow.simulate import (
    DeviceProfile, DomainTraffic, Experiment, FlowTable, SamplerConfig, calibrated_profiles, dictionary_from_profiles,
    generate_ground_truth, hourly_visibility_probability, load_profiles, run_crosscheck, sample_stream,
    sample_table, save_profiles, visibility_probability,
)
from iotflow.pdns import days_between

T0 = 1573776000


def profile(dev, label, rates, ip_base="198.18.0", burst=1.0, sub="10.0.0.1"):
    doms = tuple(
        DomainTraffic(f"d{j}.{label.lower()}.example", f"{ip_base}.{j + 1}", 443, "TCP", idle, active)
        for j, (idle, active) in enumerate(rates)
    )
    return DeviceProfile(dev, label, sub, doms, burst_mean=burst)


def table_of(n_flows, packets):
    return FlowTable(
        np.arange(n_flows, dtype=np.int64), np.zeros(n_flows, dtype=np.int64), np.zeros(n_flows, dtype=np.int64),
        np.full(n_flows, packets, dtype=np.int64), np.full(n_flows, 100 * packets, dtype=np.int64),
        np.zeros(n_flows, dtype=np.uint8), [("1.1.1.1", 443, "TCP", "a.com")], [("dev", "10.0.0.1")],
    )


# ---- generation ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_poisson_total_within_three_sigma(seed):
    p = profile("d", "Dev", [(100.0, 100.0)])
    total = int(generate_ground_truth([p], 10, "Idle", seed).packets.sum())
    assert abs(total - 1000) <= 3 * math.sqrt(1000)


def test_bursty_mean_preserved():
    p = profile("d", "Dev", [(400.0, 400.0)], burst=4.0)
    totals = [int(generate_ground_truth([p], 10, "Idle", s).packets.sum()) for s in range(30)]
    # compound Poisson: variance = lambda * E[X^2] = (rate/b) * (2b^2 - b) per hour
    sd = math.sqrt(10 * 400 / 4 * (2 * 16 - 4))
    assert abs(statistics.mean(totals) - 4000) <= 3 * sd / math.sqrt(30)


def test_zero_rate_never_emitted():
    p = profile("d", "Dev", [(50.0, 50.0), (0.0, 0.0)])
    table = generate_ground_truth([p], 12, "Active", 1)
    assert {table.endpoints[e][3] for e in table.endpoint} == {"d0.dev.example"}


def test_generation_deterministic():
    profs = calibrated_profiles(4)
    a = generate_ground_truth(profs, 3, "Active", 9, T0)
    b = generate_ground_truth(profs, 3, "Active", 9, T0)
    assert list(a.records()) == list(b.records())
    c = generate_ground_truth(profs, 3, "Active", 10, T0)
    assert list(a.records()) != list(c.records())


def test_mode_schedule_and_events():
    p = profile("d", "Dev", [(100.0, 1000.0)])
    table = generate_ground_truth([p], 2, ["Idle", "Active"], 0, T0)
    modes = {(int(t) - T0) // 3600: m for t, m in zip(table.timestamp, table.mode)}
    assert modes.get(0) == 0 and modes.get(1) == 1
    ev = next(iter(table.events()))
    assert ev.device_id == "d" and ev.domain == "d0.dev.example" and ev.mode.value == "Idle"
    with pytest.raises(ConfigError):
        generate_ground_truth([p], 0)
    with pytest.raises(ConfigError):
        generate_ground_truth([p], 1, "Sleeping")


def test_profile_validation_and_roundtrip(tmp_path):
    with pytest.raises(ConfigError):
        DeviceProfile("d", "L", "10.0.0.1", (), (2.0,) * 24)
    with pytest.raises(ConfigError):
        profile("d", "L", [(0.0, 0.0)])
    profs = calibrated_profiles(3)
    save_profiles(tmp_path / "p.json", profs)
    assert load_profiles(tmp_path / "p.json") == profs


def test_calibrated_idle_floor():
    for prof in calibrated_profiles():
        assert all(d.idle_rate >= 100 for d in prof.domains)
        assert all(d.active_rate > d.idle_rate for d in prof.domains)
        assert abs(sum(prof.diurnal) / 24 - 1) < 1e-9


def test_shipped_profiles_match_generator():
    assert load_profiles(SIM / "profiles.json") == calibrated_profiles()
    exp = Experiment.load(SIM / "experiment.json")
    assert exp.q == 0.001 and 0.4 in exp.d_grid and len(exp.seeds) == 20 and exp.start == T0


# ---- sampling -----------------------------------------------------------------

def test_q_one_is_identity():
    table = generate_ground_truth(calibrated_profiles(3), 2, "Active", 4, T0)
    out = sample_stream(table, SamplerConfig(1.0, 0))
    assert list(out.records()) == list(table.records())
    flows = list(table.records())
    assert list(sample_stream(flows, SamplerConfig(1.0))) == flows


def test_single_packet_bernoulli():
    trials, q = 1_000_000, 0.001
    kept = len(sample_stream(table_of(trials, 1), SamplerConfig(q, 3)))
    assert abs(kept / trials - q) <= 3 * math.sqrt(q * (1 - q) / trials)


def test_thousand_packet_visibility():
    trials, q = 100_000, 0.001
    p = visibility_probability(1000, q)
    kept = len(sample_stream(table_of(trials, 1000), SamplerConfig(q, 5)))
    assert abs(kept / trials - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_sampled_fields():
    flows = [FlowRecord(T0, "10.0.0.1", "1.1.1.1", 40000, 443, 6, 5000, 500000, 0x18, 1)]
    (out,) = list(sample_stream(flows, SamplerConfig(0.01, 1)))
    assert out.sampling_denominator == 100
    assert 1 <= out.packets < 5000 and out.bytes == round(500000 * out.packets / 5000)


@given(st.integers(1, 200), st.sampled_from([0.5, 0.1, 0.01]), st.integers(0, 2**31))
def test_expected_sampled_count(n, q, seed):
    trials = 2000
    out = sample_stream(table_of(trials, n), SamplerConfig(q, seed))
    mean = out.packets.sum() / trials
    assert abs(mean - n * q) <= 4 * math.sqrt(n * q * (1 - q) / trials) + 1e-12


def test_sampler_config():
    with pytest.raises(ConfigError):
        SamplerConfig(0.0)
    with pytest.raises(ConfigError):
        SamplerConfig(1.5)
    assert SamplerConfig(0.001).denominator == 1000


def test_visibility_probability_examples():
    assert visibility_probability(0, 0.3) == 0
    assert visibility_probability(17, 1.0) == 1
    assert visibility_probability(1000, 0.001) == pytest.approx(0.6323, abs=5e-5)
    assert visibility_probability(1000, 0.001) == pytest.approx(1 - 0.999 ** 1000, rel=1e-12)
    with pytest.raises(ValueError):
        visibility_probability(-1, 0.5)


def test_hourly_visibility_model():
    seen, vis = hourly_visibility_probability(100.0, 1.0)
    assert seen == vis == pytest.approx(1 - math.exp(-100))
    # burst size 1: sampled arrivals are Poisson(rate * q)
    assert hourly_visibility_probability(100.0, 0.01)[1] == pytest.approx(1 - math.exp(-1.0))


# ---- crosscheck -----------------------------------------------------------------

GRID = (0.1, 0.4, 0.8, 1.0)


def test_single_domain_delay_same_for_all_thresholds():
    profs = [profile("solo", "Solo", [(5000.0, 5000.0)]), profile("multi", "Multi", [(500.0, 500.0)] * 6, "198.18.1")]
    res = run_crosscheck(profs, d_grid=GRID, q=0.001, duration_hours=6, seeds=range(4), start=T0)
    for seed in range(4):
        delays = {r.d: r.delay for r in res.delays if r.rule == "Solo" and r.seed == seed}
        assert len(set(delays.values())) == 1 and None not in delays.values()


def test_low_rate_not_detected():
    profs = [profile("quiet", "Quiet", [(0.05, 0.05)]), profile("loud", "Loud", [(5000.0, 5000.0)], "198.18.1")]
    res = run_crosscheck(profs, d_grid=(0.4,), q=0.001, duration_hours=24, seeds=range(3), start=T0)
    assert all(r.delay is None for r in res.delays if r.rule == "Quiet")
    assert all(r.delay is not None for r in res.delays if r.rule == "Loud")


def test_unknown_label():
    profs = [profile("a", "A", [(100.0, 100.0)])]
    other = dictionary_from_profiles([profile("b", "B", [(100.0, 100.0)])], [utc_day(T0)])
    with pytest.raises(UnknownLabel):
        run_crosscheck(profs, other, start=T0)


def test_subset_must_be_strict():
    profs = [profile("a", "A", [(100.0, 100.0)]), profile("b", "B", [(100.0, 100.0)], "198.18.1")]
    with pytest.raises(ConfigError):
        run_crosscheck(profs, subset=["a", "b"], start=T0)


def test_delays_nondecreasing_in_threshold():
    res = run_crosscheck(calibrated_profiles(), d_grid=GRID, q=0.001, duration_hours=24, seeds=range(3), start=T0)
    by_key = {(r.rule, r.seed, r.d): r.delay for r in res.delays}
    for rule, seed in {(r.rule, r.seed) for r in res.delays}:
        prev = -1
        for d in GRID:
            cur = by_key[(rule, seed, d)]
            cur = math.inf if cur is None else cur
            assert cur >= prev
            prev = cur
    assert res.false_positives == []


def test_stream_times_match_reference_detector():
    profs = calibrated_profiles(6)
    start = T0
    days = days_between(utc_day(start), utc_day(start + 6 * 3600 - 1))
    dictionary = dictionary_from_profiles(profs, days)
    res = run_crosscheck(profs, dictionary, d_grid=(0.4,), q=0.01, duration_hours=6, seeds=[2], start=start)
    table = generate_ground_truth(profs, 6, "Active", 2, start)
    sampled = sample_table(table, SamplerConfig(0.01, 2 + 1_000_003))
    flows = list(sampled.records())
    for row in res.delays:
        devs = [p.device_id for p in profs if p.label == row.rule]
        per_dev = []
        for dev in devs:
            ip = next(p.device_ip for p in profs if p.device_id == dev)
            mine = sorted((f for f in flows if f.src_addr == ip), key=lambda f: f.timestamp)
            t = detection_delay(mine, dictionary, row.rule, 0.4, start=start)
            if t is not None:
                per_dev.append(t)
        assert row.delay == (min(per_dev) if per_dev else None)


def test_unsampled_detects_no_later_in_median():
    profs = [profile("p", "P", [(150.0, 150.0)] * 5)]
    full = run_crosscheck(profs, d_grid=(0.4,), q=1.0, duration_hours=4, seeds=range(100), start=T0)
    thin = run_crosscheck(profs, d_grid=(0.4,), q=0.01, duration_hours=4, seeds=range(100), start=T0)

    def med(res):
        return statistics.median(math.inf if r.delay is None else r.delay for r in res.delays)

    assert med(full) <= med(thin)


def test_reproducible():
    profs = calibrated_profiles(5)
    a = run_crosscheck(profs, d_grid=(0.4,), duration_hours=6, seeds=[1, 2], start=T0)
    b = run_crosscheck(profs, d_grid=(0.4,), duration_hours=6, seeds=[1, 2], start=T0)
    assert a.delay_csv() == b.delay_csv()
    assert a.delay_csv().splitlines()[0] == "rule,level,D,seed,delay_seconds"
