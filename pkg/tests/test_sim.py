import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from redoffload.errors import ConfigError, ContractViolationError
from redoffload.features import FeatureCatalog
from redoffload.serverset import ServerSet
from redoffload.sim import (baseline_all, baseline_best_channel, baseline_fixed, baseline_random, read_result_csv,
                            rtop_accounting, run_episode, write_result_csv, write_summary_json)

from conftest import make_trace

CAT = FeatureCatalog.of("delay", "rssi")


def test_all_servers_takes_the_row_minimum(small_trace):
    cat = CAT.fit(small_trace)
    res = run_episode(small_trace, baseline_all(3), cat)
    np.testing.assert_array_equal(res.delta_min, small_trace.delay[3:].min(axis=1))
    assert res.avg_set_size == 3.0


def test_fixed_server_reads_its_own_delays(small_trace):
    cat = CAT.fit(small_trace)
    for n in (1, 2, 3):
        res = run_episode(small_trace, baseline_fixed(n, 3), cat)
        np.testing.assert_array_equal(res.delta_min, small_trace.delay[3:, n - 1])


def test_all_servers_dominates_each_fixed(small_trace):
    cat = CAT.fit(small_trace)
    best = run_episode(small_trace, baseline_all(3), cat).fraction_below
    recount = np.mean(small_trace.delay[3:].min(axis=1) <= 0.175)
    assert best == recount
    for n in (1, 2, 3):
        assert best >= run_episode(small_trace, baseline_fixed(n, 3), cat).fraction_below


def test_best_channel_and_ties():
    rssi = np.tile([-40.0, -60.0, -55.0], (6, 1))
    ds = make_trace(np.full((6, 3), 0.1), rssi=rssi)
    cat = CAT.fit(make_trace(np.random.default_rng(0).uniform(0.1, 0.2, (6, 3)),
                             rssi=np.random.default_rng(1).normal(-50, 5, (6, 3))))
    res = run_episode(ds, baseline_best_channel(cat), cat, history=1)
    assert set(res.selection.tolist()) == {1}
    tie = make_trace(np.full((6, 3), 0.1), rssi=np.tile([-70.0, -50.0, -50.0], (6, 1)))
    res = run_episode(tie, baseline_best_channel(cat), cat, history=1)
    assert set(res.selection.tolist()) == {2}
    with pytest.raises(ConfigError):
        baseline_best_channel(FeatureCatalog.of("delay"))


def test_random_baseline_is_uniform():
    ds = make_trace(np.full((10_003, 3), 0.1))
    res = run_episode(ds, baseline_random(3, seed=7), FeatureCatalog.of("delay").fit(ds))
    counts = np.bincount(res.selection, minlength=5)[[1, 2, 4]]
    assert chisquare(counts).pvalue > 0.001


def test_controller_sees_only_its_own_history():
    seen = []

    class Probe:
        name = "probe"

        def select(self, state):
            seen.append(state.mask[:, 0, -1].copy())
            return ServerSet.of([2], 2)

    ds = make_trace(np.random.default_rng(0).uniform(0.1, 0.3, (8, 2)))
    run_episode(ds, Probe(), FeatureCatalog.of("delay").fit(ds), history=2)
    # first decision follows the all-server warm-up, later ones only observe server 2
    assert seen[0].tolist() == [True, True]
    assert all(m.tolist() == [False, True] for m in seen[1:])


@given(st.sampled_from([0, -1, 8, "x", None]))
def test_invalid_selection_is_a_contract_violation(bad):
    class Bad:
        name = "bad"

        def select(self, state):
            return bad

    ds = make_trace(np.full((5, 3), 0.1))
    with pytest.raises(ContractViolationError):
        run_episode(ds, Bad(), FeatureCatalog.of("delay").fit(ds))


def test_short_trace_rejected():
    ds = make_trace(np.full((3, 2), 0.1))
    with pytest.raises(ConfigError):
        run_episode(ds, baseline_all(2), FeatureCatalog.of("delay"), history=3)


def test_rtop_accounting_and_recount(small_trace):
    cat = CAT.fit(small_trace)
    res = run_episode(small_trace, baseline_random(3, 1), cat)
    rep = rtop_accounting(res, 0.1)
    records = list(res.records())
    assert rep.violation_prob == sum(r.delta_min > 0.175 for r in records) / len(records)
    assert rep.expected_set_size == np.mean([len(r.selection) for r in records])
    ds = make_trace([0.1] * 8 + [0.3] * 2 + [0.1] * 3)
    res = run_episode(ds, baseline_all(1), FeatureCatalog.of("delay"))
    assert rtop_accounting(res, 0.1).violation_prob == 0.2 and not rtop_accounting(res, 0.1).satisfied
    clean = run_episode(make_trace([0.1] * 10), baseline_all(1), FeatureCatalog.of("delay"))
    assert rtop_accounting(clean, 1e-9).satisfied


def test_result_files_round_trip(tmp_path, small_trace):
    cat = CAT.fit(small_trace)
    res = run_episode(small_trace, baseline_random(3, 2), cat)
    write_result_csv(res, tmp_path / "r.csv")
    assert read_result_csv(tmp_path / "r.csv") == res
    write_summary_json([res], tmp_path / "s.json")
    assert '"fraction_below"' in (tmp_path / "s.json").read_text()
