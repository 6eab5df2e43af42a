import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from redoffload.errors import ConfigError, EmptyInputError, IntegrityError, SchemaError, TraceValueError
from redoffload.trace import (PIPELINE_COLUMNS, TELEMETRY_COLUMNS, SyntheticConfig, TraceSchema,
                              calibrated_config, cdf_at, empirical_cdf, generate_synthetic, load_synthetic_config,
                              load_trace, read_stats_csv, save_config, save_trace, stationary_distribution,
                              trace_stats, write_stats_csv)

from conftest import make_trace


def _write_minimal(path, delays, extra_header=None, mutate=None):
    cols = ["task_index", "server_id", *PIPELINE_COLUMNS, *TELEMETRY_COLUMNS]
    header = {"format": "redoffload-trace", "version": 1, "n_servers": 1, "inter_arrival": 0.0667,
              "server_positions": [[33.0, -117.0, 1.0]], "columns": cols}
    header.update(extra_header or {})
    lines = ["#" + json.dumps(header), ",".join(cols)]
    for i, d in enumerate(delays):
        pipe = [str(i), "1", d, "0.0", "-50", "0", "40", "0.2", "0", "30", "3"]
        tel = ["33.0", "-117.0", "10", "0", "0", "0", "0", "0", "0", "0", "0", "0", "0", "0.4", "0.3", "0.6"]
        row = pipe + tel
        if mutate:
            row = mutate(i, row)
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def test_minimal_file(tmp_path):
    p = tmp_path / "t.csv"
    _write_minimal(p, ["0.15", "0.20"])
    ds = load_trace(p)
    assert ds.n_servers == 1 and ds.n_tasks == 2
    assert len(list(ds.samples())) == 2
    np.testing.assert_array_equal(ds.delay[:, 0], [0.15, 0.20])


def test_negative_delay_rejected(tmp_path):
    p = tmp_path / "t.csv"
    _write_minimal(p, ["0.15", "-0.1"])
    with pytest.raises(TraceValueError):
        load_trace(p)
    assert issubclass(TraceValueError, ValueError)


def test_malformed_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("task_index,server_id\n0,1\n")
    with pytest.raises(SchemaError):
        load_trace(p)
    p.write_text("#{not json\n")
    with pytest.raises(SchemaError):
        load_trace(p)
    _write_minimal(p, ["0.1"], extra_header={"columns": ["task_index"]})
    with pytest.raises(SchemaError):
        load_trace(p)


def test_non_contiguous_tasks(tmp_path):
    p = tmp_path / "t.csv"
    _write_minimal(p, ["0.1", "0.1", "0.1"], mutate=lambda i, r: ([str(i + (i == 2))] + r[1:]))
    with pytest.raises(IntegrityError):
        load_trace(p)


def test_missing_delay_rejected(tmp_path):
    p = tmp_path / "t.csv"
    _write_minimal(p, ["0.1", ""])
    with pytest.raises(IntegrityError):
        load_trace(p)


def test_schema_rename(tmp_path):
    p = tmp_path / "t.csv"
    _write_minimal(p, ["0.15", "0.2"])
    text = p.read_text().replace("comm_delay", "tx_s")
    p.write_text(text)
    ds = load_trace(p, TraceSchema({"comm_delay": "tx_s"}))
    assert ds.delay[1, 0] == 0.2


@settings(max_examples=15)
@given(st.integers(1, 4), st.integers(1, 12), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_save_load_round_trip(tmp_path_factory, n, t, seed, with_regime):
    rng = np.random.default_rng(seed)
    ds = make_trace(rng.uniform(0.05, 0.6, (t, n)), regime=rng.integers(0, 2, (t, n)) if with_regime else None,
                    rssi=rng.normal(-60, 10, (t, n)), comp=0.01)
    ds.tcp[:] = rng.normal(size=ds.tcp.shape)
    ds.velocity[:] = rng.normal(size=(t, 3))
    p = tmp_path_factory.mktemp("rt") / "trace.csv"
    save_trace(ds, p)
    assert load_trace(p) == ds


def test_config_validation():
    with pytest.raises(ConfigError):
        SyntheticConfig(regime_transition=((0.9, 0.2), (0.5, 0.5)))
    with pytest.raises(ConfigError):
        SyntheticConfig(regime_delay_params=((0.15, 0.01),))
    with pytest.raises(ConfigError):
        SyntheticConfig(regime_delay_params=((-0.1, 0.01), (0.3, 0.05)))


def test_generator_deterministic():
    cfg = calibrated_config(n_tasks=400, seed=11)
    assert generate_synthetic(cfg) == generate_synthetic(cfg)
    assert generate_synthetic(cfg) != generate_synthetic(calibrated_config(n_tasks=400, seed=12))


def test_single_regime_zero_std():
    cfg = SyntheticConfig(n_tasks=300, regimes_per_server=1, regime_delay_params=((0.2, 0.0),),
                          regime_transition=((1.0,),), seed=4)
    ds = generate_synthetic(cfg)
    np.testing.assert_allclose(ds.delay, 0.2, rtol=0, atol=1e-15)


def test_regime_occupancy_matches_stationary_distribution():
    cfg = SyntheticConfig(n_tasks=10_000, regime_delay_params=((0.15, 0.01), (0.30, 0.05)),
                          regime_transition=((0.98, 0.02), (0.02, 0.98)), seed=5, n_servers=3)
    ds = generate_synthetic(cfg)
    pi = stationary_distribution(cfg.regime_transition)
    occ = np.mean(ds.regime == 1)
    assert abs(occ - pi[1]) < 0.02 * 5  # three servers of sticky chains: allow a few percent
    # alternating sections: a sticky chain changes state rarely
    switches = np.mean(ds.regime[1:] != ds.regime[:-1])
    assert switches < 0.05
    lo, hi = 0.15, 0.30
    assert lo < ds.delay.mean() < hi


def test_per_regime_means_within_three_standard_errors():
    cfg = SyntheticConfig(n_tasks=20_000, regime_delay_params=((0.15, 0.01), (0.30, 0.05)),
                          regime_transition=((0.9, 0.1), (0.1, 0.9)), seed=6, n_servers=1)
    ds = generate_synthetic(cfg)
    d, r = ds.delay[:, 0], ds.regime[:, 0]
    for k, (mean, std) in enumerate(cfg.regime_delay_params):
        sel = d[r == k]
        assert abs(sel.mean() - mean) < 3 * std / np.sqrt(sel.size)


def test_stationary_distribution():
    np.testing.assert_allclose(stationary_distribution([[0.9, 0.1], [0.3, 0.7]]), [0.75, 0.25])


def test_stats_hand_example():
    ds = make_trace([0.1, 0.2, 0.3])
    s = trace_stats(ds)[0]
    assert s.mean == pytest.approx(0.2)
    assert s.peak_to_peak == pytest.approx(0.2)
    assert s.std == pytest.approx(np.sqrt(2 / 3) * 0.1)  # population normalisation


def test_constant_delays_step_cdf():
    s = trace_stats(make_trace([0.2] * 5))[0]
    assert s.std == 0
    np.testing.assert_array_equal(s.cdf_x, [0.2])
    np.testing.assert_array_equal(s.cdf_p, [1.0])


@given(st.lists(st.floats(0, 5), min_size=1, max_size=50))
def test_cdf_properties(xs):
    x, p = empirical_cdf(xs)
    assert np.all(np.diff(x) > 0) and np.all(np.diff(p) > 0)
    assert p[-1] == 1.0 and 0 < p[0] <= 1
    grid = np.linspace(-1, 6, 30)
    f = cdf_at(xs, grid)
    assert np.all(np.diff(f) >= 0) and f[0] == 0 and f[-1] == 1


def test_empty_inputs():
    with pytest.raises(EmptyInputError):
        empirical_cdf([])


def test_stats_csv_round_trip(tmp_path, small_trace):
    p = tmp_path / "stats.csv"
    stats = trace_stats(small_trace)
    write_stats_csv(stats, p)
    rows = read_stats_csv(p)
    assert ("mean", "all", stats[-1].mean) in rows
    assert len({r[1] for r in rows}) == small_trace.n_servers + 1


def test_config_file_round_trip(tmp_path):
    cfg = calibrated_config(n_tasks=50, seed=9, heading_coupling=1.5)
    p = tmp_path / "cfg.json"
    save_config(cfg, p)
    assert load_synthetic_config(p) == cfg
    p.write_text('{"bogus": 1}')
    with pytest.raises(ConfigError):
        load_synthetic_config(p)


def test_replay_iteration_is_stable(small_trace):
    assert list(small_trace.samples())[:20] == list(small_trace.samples())[:20]
    assert list(small_trace.telemetry())[5] == list(small_trace.telemetry())[5]


def test_telemetry_is_held_between_samples(small_trace):
    # 15 tasks/s against 5 Hz telemetry: each value serves three consecutive tasks
    h = small_trace.heading[:30]
    assert np.all(h[0::3] == h[1::3]) and np.all(h[1::3] == h[2::3])


def test_split_contiguous(small_trace):
    a, b = small_trace.split(0.8)
    assert a.n_tasks + b.n_tasks == small_trace.n_tasks
    np.testing.assert_array_equal(b.delay[0], small_trace.delay[a.n_tasks])
