import math

import numpy as np
import pytest

from runoff.inference import SamplerConfig
from runoff.model import ModelSpec, ParameterState
from runoff.simulator import (
    Outbreak,
    SimulationScenario,
    coverage_experiment,
    coverage_summary,
    simulate,
    true_totals,
)
from runoff.triangle import RegionMap, censor, marginal_totals


def test_poisson_limit():
    spec = ModelSpec("BASE", 1000, 99)
    truth = ParameterState.zeros(spec, mu=math.log(5.0), phi=1e8)
    full, _ = simulate(SimulationScenario(spec, truth=truth, seed=1))
    x = full.counts.ravel()
    assert x.size == 10**5
    assert abs(x.mean() - 5) < 4 * math.sqrt(5 / x.size)
    assert abs(x.var() - 5) < 4 * math.sqrt((2 * 25 + 5) / x.size)


def test_cell_moments_at_fixed_parameters():
    spec = ModelSpec("BASE", 2000, 49)
    truth = ParameterState.zeros(spec, mu=math.log(3.0), phi=1.5)
    full, _ = simulate(SimulationScenario(spec, truth=truth, seed=2))
    x = full.counts.ravel()
    var = 3 * (1 + 3 / 1.5)
    assert abs(x.mean() - 3) < 4 * math.sqrt(var / x.size)
    m4 = np.mean((x - x.mean()) ** 4)
    assert abs(x.var() - var) < 4 * math.sqrt((m4 - var**2) / x.size)


def test_unit_amplitude_is_identity():
    spec = ModelSpec("BASE", 20, 4)
    a, ta = simulate(SimulationScenario(spec, seed=3))
    b, tb = simulate(SimulationScenario(spec, seed=3, outbreak=Outbreak(5, 6, 1.0)))
    assert np.array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(ta.log_lambda, tb.log_lambda)


def test_outbreak_scales_lambda():
    spec = ModelSpec("BASE", 20, 4)
    _, ta = simulate(SimulationScenario(spec, seed=3))
    _, tb = simulate(SimulationScenario(spec, seed=3, outbreak=Outbreak(5, 6, 3.0)))
    diff = tb.log_lambda - ta.log_lambda
    np.testing.assert_allclose(diff[5:11], math.log(3.0))
    np.testing.assert_allclose(np.delete(diff, range(5, 11), axis=0), 0.0)
    with pytest.raises(ValueError):
        Outbreak(0, 2, 0.0)


def test_deterministic_and_seed_sensitive():
    rm = RegionMap.chain(4)
    sc = SimulationScenario(ModelSpec("M7", 15, 3, 4), region_map=rm, seed=9)
    a, _ = simulate(sc)
    b, _ = simulate(sc)
    assert np.array_equal(a.counts, b.counts)
    c, _ = simulate(sc.replicate(1))
    assert not np.array_equal(a.counts, c.counts)


def test_truth_totals_and_censor():
    sc = SimulationScenario(ModelSpec("M4", 15, 3, 3), region_map=RegionMap.chain(3), seed=4)
    full, truth = simulate(sc)
    np.testing.assert_array_equal(true_totals(full), truth.totals)
    tri = censor(full, full.T)
    assert (~tri.mask).sum() == 3 * 3 * 4 // 2
    mt = marginal_totals(tri)
    # partial sums never exceed the truth and agree on complete rows
    assert np.all(mt.observed <= truth.totals)
    np.testing.assert_array_equal(mt.observed[mt.fully_observed], truth.totals[mt.fully_observed])


def test_iar_truth_is_centred():
    sc = SimulationScenario(ModelSpec("M1", 10, 2, 6), region_map=RegionMap.chain(6), seed=5)
    _, truth = simulate(sc)
    assert abs(truth.state.delta_iar.sum()) < 1e-12
    assert np.all(truth.state.beta_ds == 0)


def test_overflow_guard():
    spec = ModelSpec("BASE", 10, 2)
    with pytest.raises(ValueError, match="rescale"):
        simulate(SimulationScenario(spec, truth=ParameterState.zeros(spec, mu=31.0)))


def test_scenario_validation_and_roundtrip():
    with pytest.raises(ValueError, match="unknown"):
        SimulationScenario(ModelSpec("BASE", 10, 2), hyper={"sigma_gamma": 1.0})
    with pytest.raises(ValueError, match="region map"):
        SimulationScenario(ModelSpec("M1", 10, 2, 3))
    sc = SimulationScenario(ModelSpec("M5", 10, 2, 3), hyper={"phi": 4.0}, region_map=RegionMap.chain(3),
                            outbreak=Outbreak(2, 3, 2.0), seed=12)
    back = SimulationScenario.from_dict(sc.to_dict())
    assert np.array_equal(simulate(back)[0].counts, simulate(sc)[0].counts)


def test_coverage_experiment_one_replicate():
    sc = SimulationScenario(ModelSpec("BASE", 14, 3), seed=1)
    cfg = SamplerConfig(chains=2, iterations=600, burn_in=300, thin=3)
    table = coverage_experiment(sc, 1, cfg)
    assert len(table) == 3
    assert table["lag"].tolist() == [2, 1, 0]
    assert (table["lower"] <= table["upper"]).all()
    assert (table["observed_partial"] <= table["truth"]).all()
    summary = coverage_summary(table)
    assert summary["n"].sum() == 3
    with pytest.raises(ValueError):
        coverage_experiment(sc, 0, cfg)


def test_coverage_records_failures():
    spec = ModelSpec("BASE", 14, 3)
    sc = SimulationScenario(spec, truth=ParameterState.zeros(spec, mu=40.0))
    table = coverage_experiment(sc, 2, SamplerConfig(chains=1, iterations=20, burn_in=10, thin=1))
    assert table["error"].notna().all() and len(table) == 2
