from __future__ import annotations

import csv
import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from therapycert.certifier import (
    SAMPLE_SIZE_NOTE, CertificationSpec, Cost, CostKind, GMatrix, admissible_set, certify,
    draw_scenarios, failure_indicator, run_scenarios, sample_size, sample_size_bound,
    select_optimal, validate_out_of_sample,
)
from therapycert.dynamics import UncertaintyModel, nominal_params
from therapycert.errors import ConfigError
from therapycert.integrator import SimConfig, simulate_closed_loop
from therapycert.therapy import PRESETS, Protocol, TherapyDesign, build_design_grid


def oracle_n(eta, delta, m, n_theta):
    mpmath.mp.dps = 50
    L = mpmath.log(mpmath.mpf(n_theta) / mpmath.mpf(delta))
    val = (m + L + mpmath.sqrt(2 * m * L)) / mpmath.mpf(eta)
    return int(mpmath.ceil(val))


# ------------------------------------------------------------ sample size

def test_sample_size_reference_cells():
    assert sample_size(0.1, 1e-3, 1, 1) == 117
    assert sample_size(0.01, 1e-3, 1, 576) == 1942
    assert sample_size_bound(0.1, 1e-3, 1, 1) == pytest.approx(116.25, abs=0.01)


@pytest.mark.parametrize("n_theta", [1, 5, 10, 100, 1000, 10000])
@pytest.mark.parametrize("eta", [0.1, 0.05, 0.01, 0.001])
def test_sample_size_matches_high_precision(n_theta, eta):
    assert sample_size(eta, 1e-3, 1, n_theta) == oracle_n(eta, 1e-3, 1, n_theta)


def test_sample_size_without_failures_drops_root_term():
    import math
    assert sample_size(0.1, 1e-3, 0, 1) == math.ceil(math.log(1000) / 0.1)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 0.5), st.floats(1e-9, 0.5), st.integers(0, 20), st.integers(1, 10**6))
def test_sample_size_properties(eta, delta, m, n_theta):
    n = sample_size(eta, delta, m, n_theta)
    assert n == oracle_n(eta, delta, m, n_theta)
    assert m / n <= eta
    assert sample_size(eta, delta, m, n_theta * 10) >= n
    assert sample_size(eta, delta, m + 1, n_theta) >= n


def test_sample_size_grows_logarithmically():
    for eta in (0.1, 0.01):
        assert sample_size(eta, 1e-3, 1, 5760) / sample_size(eta, 1e-3, 1, 576) < 1.35


@pytest.mark.parametrize("args", [(0.0, 1e-3, 1, 1), (1.0, 1e-3, 1, 1), (0.1, 0.0, 1, 1),
                                  (0.1, 1e-3, -1, 1), (0.1, 1e-3, 1, 0), (0.1, 1e-3, 1.5, 1)])
def test_sample_size_rejects_out_of_range(args):
    with pytest.raises(ConfigError):
        sample_size(*args)


def test_note_mentions_published_gap():
    assert "132" in SAMPLE_SIZE_NOTE and "2155" in SAMPLE_SIZE_NOTE


def test_explicit_n_overrides_and_checks_budget():
    spec = CertificationSpec(eta=0.01, N_explicit=2155)
    assert spec.resolve_n(576) == 2155
    with pytest.raises(ConfigError):
        CertificationSpec(eta=0.01, m=5, N_explicit=100).resolve_n(576)


# -------------------------------------------------------------- scenarios

def test_scenarios_within_bounds_and_prefix():
    model = UncertaintyModel(lam1=0.6, lam2=1.8)
    big = draw_scenarios(model, 2155, master_seed=11)
    nom = nominal_params().to_array()
    assert big.shape == (2155, 14)
    assert np.all(big >= 0.6 * nom) and np.all(big <= 1.8 * nom)
    np.testing.assert_array_equal(draw_scenarios(model, 100, master_seed=11), big[:100])
    assert not np.array_equal(draw_scenarios(model, 100, master_seed=12), big[:100])


def test_validation_stream_is_disjoint_from_certification_stream():
    model = UncertaintyModel()
    a = draw_scenarios(model, 20, 3)
    b = draw_scenarios(model, 20, 3, label="valid")
    assert not np.any(np.all(a == b, axis=1))


# ----------------------------------------------------------------- matrix

def small_grid(**defaults):
    proto = Protocol()
    return build_design_grid({"beta": [1.05, 2.0], "r_target": [0.25, 0.5], "d": [0.5, 1.0]},
                             proto, defaults=TherapyDesign(**defaults)), proto


def test_degenerate_uncertainty_gives_constant_rows():
    grid, proto = small_grid()
    scen = draw_scenarios(UncertaintyModel(lam1=1.0, lam2=1.0), 10, 0)
    gm = run_scenarios(grid, scen, proto, SimConfig(), CertificationSpec(eta=0.1))
    for s, design in enumerate(grid):
        expected = failure_indicator(simulate_closed_loop(design, nominal_params(), proto=proto),
                                     design.gamma_c, proto.C_min)
        assert np.all(gm.g[s] == expected)
    assert gm.stats["simulated"] == 80


def test_failure_indicator_cases():
    proto = Protocol()
    traj = simulate_closed_loop(PRESETS["sim1"], nominal_params(), proto=proto)
    assert failure_indicator(traj, 0.1, proto.C_min) == 0
    assert failure_indicator(traj, 1e-9, proto.C_min) == 1
    assert failure_indicator(traj, 0.1, 2e8) == 1
    blown = simulate_closed_loop(PRESETS["sim1"], nominal_params(), cfg=SimConfig(blowup_guard=1e9),
                                 raise_on_blowup=False)
    assert failure_indicator(blown, 0.1, proto.C_min) == 1


def test_matrix_independent_of_threads():
    grid, proto = small_grid()
    scen = draw_scenarios(UncertaintyModel(lam1=0.6, lam2=1.8), 150, 5)
    spec = CertificationSpec(eta=0.1)
    ref = run_scenarios(grid, scen, proto, SimConfig(), spec, threads=1)
    for t in (3, 8):
        other = run_scenarios(grid, scen, proto, SimConfig(), spec, threads=t)
        np.testing.assert_array_equal(ref.g, other.g)


def pruning_fixture():
    # with gamma_c = 1e-3 the two smallest budgets fail on the nominal model
    proto = Protocol()
    grid = build_design_grid({"r_target": [0.5, 0.8], "d": [0.1, 0.25, 0.5, 1.0]}, proto,
                             defaults=TherapyDesign(gamma_c=1e-3))
    scen = draw_scenarios(UncertaintyModel(lam1=1.0, lam2=1.0), 5, 0)
    return grid, proto, scen


def test_pruning_skips_only_dominated_rows():
    grid, proto, scen = pruning_fixture()
    spec = CertificationSpec(eta=0.5, m=1)
    full = run_scenarios(grid, scen, proto, SimConfig(), spec)
    pruned = run_scenarios(grid, scen, proto, SimConfig(), spec, pruning=True)
    assert pruned.stats["pruned_rows"] > 0
    assert pruned.stats["simulated"] < full.stats["simulated"]
    assert set(admissible_set(pruned, 1)) <= set(admissible_set(full, 1))
    for s in np.flatnonzero(pruned.pruned):
        assert full.row_sums[s] > spec.m
    unpruned = ~pruned.pruned
    np.testing.assert_array_equal(pruned.g[unpruned], full.g[unpruned])


def test_matrix_csv_marks_pruned_rows(tmp_path):
    grid, proto, scen = pruning_fixture()
    gm = run_scenarios(grid, scen, proto, SimConfig(), CertificationSpec(eta=0.5), pruning=True)
    gm.write_csv(tmp_path / "g.csv")
    gm.write_row_sums_csv(tmp_path / "rs.csv")
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0] == ["sigma"] + [f"s{i}" for i in range(5)]
    na = [int(r[0]) for r in rows[1:] if r[1] == "NA"]
    assert na == np.flatnonzero(gm.pruned).tolist()
    sums = list(csv.DictReader(open(tmp_path / "rs.csv")))
    assert len(sums) == len(grid)


def test_dry_run_counts_without_simulating():
    grid, proto = small_grid()
    scen = np.zeros((37, 14))
    gm = run_scenarios(grid, scen, proto, SimConfig(), CertificationSpec(), dry_run=True)
    assert gm.stats["scheduled"] == 8 * 37 and gm.stats["simulated"] == 0


# -------------------------------------------------------------- selection

def handmade(sums, pruned=None):
    n = len(sums)
    g = np.zeros((n, 10), dtype=np.uint8)
    for s, k in enumerate(sums):
        g[s, :k] = 1
    pr = np.zeros(n, dtype=bool) if pruned is None else np.asarray(pruned)
    return GMatrix(g, np.zeros_like(g), pr)


def test_admissible_set_threshold():
    gm = handmade([0, 1, 2, 1], pruned=[False, False, False, True])
    assert admissible_set(gm, 1) == [0, 1]
    assert admissible_set(gm, 0) == [0]


def test_cost_kinds_and_tie_break():
    grid = build_design_grid({"gamma": [0.3, 0.8], "d": [0.5, 1.0]}, Protocol(),
                             defaults=TherapyDesign(N_T=4))
    every = list(range(len(grid)))
    drug = select_optimal(every, grid, Cost(CostKind.MIN_DRUG))
    assert drug.index == 0 and drug.cost == 0.5
    hosp = select_optimal([1, 2, 3], grid, Cost("min-hospitalization"))
    assert hosp.index == 1 and hosp.design.gamma == 0.3
    # designs 1 (gamma .3, d 1) and 2 (gamma .8, d .5) tie under equal weights
    assert select_optimal([2, 0], grid, Cost()).index == 0
    conv = select_optimal([1, 2, 3], grid, Cost("convex", 0.5))
    assert conv.index == 1 and conv.cost == pytest.approx(0.65)
    assert select_optimal([], grid, Cost()) is None
    with pytest.raises(ConfigError):
        Cost("convex", 1.5)


# ---------------------------------------------------------------- pipeline

def test_certify_report_contents():
    grid, proto = small_grid()
    spec = CertificationSpec(eta=0.1, master_seed=7)
    report, gm, scen = certify(grid, UncertaintyModel(), spec, proto, SimConfig())
    d = report.to_dict()
    assert d["N"] == sample_size(0.1, 1e-3, 1, 8) == scen.shape[0]
    assert d["n_theta"] == 8 and len(d["designs"]) == 8
    assert d["work"]["simulated"] == 8 * d["N"]
    assert d["admissible"] == admissible_set(gm, 1)
    json.dumps(d)
    if d["optimal"] is not None:
        assert d["optimal"]["index"] in d["admissible"]


def test_certify_empty_admissible_set():
    proto = Protocol()
    grid = build_design_grid({"d": [0.5, 1.0]}, proto, defaults=TherapyDesign(gamma_c=1e-12))
    report, _, _ = certify(grid, UncertaintyModel(), CertificationSpec(eta=0.1), proto, SimConfig())
    assert report.selection is None
    assert report.to_dict()["status"] == "empty_admissible_set"


def test_validation_counts_and_determinism(tmp_path):
    proto = Protocol()
    model = UncertaintyModel()
    a = validate_out_of_sample(PRESETS["sim1"], model, 5, 20, proto, SimConfig(), 1, threads=1)
    b = validate_out_of_sample(PRESETS["sim1"], model, 5, 20, proto, SimConfig(), 1, threads=4)
    assert a.n_scenarios == 100
    np.testing.assert_array_equal(a.contraction_ratio, b.contraction_ratio)
    assert a.violation_rate == a.violations / 100
    one = validate_out_of_sample(PRESETS["sim1"], model, 1, 20, proto, SimConfig(), 1)
    assert one.n_scenarios == 20
    empty = validate_out_of_sample(PRESETS["sim1"], model, 0, 20, proto, SimConfig(), 1)
    assert empty.n_scenarios == 0 and empty.violation_rate is None
    a.write_scatter_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 100
    assert all(float(r["drug1_used"]) <= float(r["drug1_available"]) for r in rows)
