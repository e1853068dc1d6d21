"""Error metrics and genetic-algorithm calibration tests."""
from __future__ import annotations

import numpy as np
import pytest

from stopgo.calibration import (
    COLLISION_PENALTY,
    CalibrationResult,
    GaConfig,
    calibrate_ga,
    default_bounds,
    error_abs,
    error_mixed,
    error_rel,
    evaluate_fitness,
)
from stopgo.carfollowing import ConstantProfile, FvdmParams
from stopgo.errors import LengthMismatch, NonpositiveHeadway
from stopgo.trajectory_io import generate_synthetic_pair

THETA_TRUE = FvdmParams(1.5, 1.2, 3.0, 20.0, 18.0, 0.08, 0.5)


def _make_pair(duration=40.0, v=12.0, headway=18.0):
    return generate_synthetic_pair(THETA_TRUE, ConstantProfile(v), duration, headway)


def test_error_metrics_hand_values():
    sim = np.array([11.0, 3.0])
    data = np.array([10.0, 2.0])
    # rel: sqrt(mean((1/10)^2 + (1/2)^2) / 2)   -> sqrt(0.13)
    assert error_rel(sim, data) == pytest.approx(0.36055512754639896, abs=1e-15)
    # abs: sqrt(mean(1,1)) / mean(10,10) with flat data
    assert error_abs(np.array([11.0, 11.0]), np.array([10.0, 10.0])) == pytest.approx(
        0.1, abs=1e-15
    )
    # mixed: sqrt(mean(1/10, 1/2) / mean(10, 2)) = sqrt(0.3 / 6)
    assert error_mixed(sim, data) == pytest.approx(0.22360679774997896, abs=1e-15)


def test_error_metrics_zero_on_identical_series():
    s = np.array([3.0, 4.0, 5.5])
    assert error_rel(s, s) == 0.0
    assert error_abs(s, s) == 0.0
    assert error_mixed(s, s) == 0.0


def test_error_metric_input_validation():
    with pytest.raises(LengthMismatch):
        error_mixed(np.ones(3), np.ones(4))
    with pytest.raises(LengthMismatch):
        error_mixed(np.array([]), np.array([]))
    with pytest.raises(NonpositiveHeadway):
        error_mixed(np.ones(3), np.array([1.0, 0.0, 2.0]))


def test_default_bounds_box():
    b = default_bounds()
    assert b["alpha"] == (1.0, 10.0)
    assert b["beta"] == (1.0, 10.0)
    assert b["b_c"] == (0.1, 8.0)
    assert b["b_f"] == (0.1, 100.0)
    assert b["v0"] == (1.0, 70.0)
    assert b["m"] == (1e-5, 10.0)
    assert b["tau"] == (0.0, 3.0)


def test_bounds_overrides_must_nest_in_master_box():
    pair = _make_pair(duration=10.0)
    cfg = GaConfig(population_size=8, max_generations=2, rng_seed=1)
    calibrate_ga(pair, bounds={"tau": (0.0, 0.0)}, cfg=cfg)  # pinning is fine
    with pytest.raises(ValueError):
        calibrate_ga(pair, bounds={"alpha": (0.5, 5.0)}, cfg=cfg)
    with pytest.raises(ValueError):
        calibrate_ga(pair, bounds={"v0": (1.0, 80.0)}, cfg=cfg)
    with pytest.raises(ValueError):
        calibrate_ga(pair, bounds={"viscosity": (0.0, 1.0)}, cfg=cfg)


def test_fitness_is_mixed_error_of_simulated_headway():
    pair = _make_pair(duration=20.0)
    assert evaluate_fitness(THETA_TRUE, pair) <= 1e-12


def test_fitness_collision_penalty():
    pair = _make_pair(duration=20.0)
    # maximal attraction with a near-zero stopping distance rams the leader
    reckless = FvdmParams(10.0, 1.0, 0.1, 0.1, 70.0, 10.0, 0.0)
    assert evaluate_fitness(reckless, pair) == COLLISION_PENALTY


def test_ga_is_deterministic_for_a_seed():
    pair = _make_pair(duration=15.0)
    cfg = GaConfig(population_size=16, max_generations=12, stagnation_limit=50, rng_seed=9)
    r1 = calibrate_ga(pair, cfg=cfg)
    r2 = calibrate_ga(pair, cfg=cfg)
    assert r1.theta == r2.theta
    assert r1.fitness_history == r2.fitness_history
    assert r1.mixed_error == r2.mixed_error

    r3 = calibrate_ga(pair, cfg=GaConfig(population_size=16, max_generations=12,
                                         stagnation_limit=50, rng_seed=10))
    assert r3.theta != r1.theta or r3.fitness_history != r1.fitness_history


def test_ga_history_is_monotone_and_tracks_best():
    pair = _make_pair(duration=15.0)
    cfg = GaConfig(population_size=20, max_generations=25, stagnation_limit=100, rng_seed=3)
    res = calibrate_ga(pair, cfg=cfg)
    hist = np.asarray(res.fitness_history)
    assert hist.size == res.generations_run + 1  # initial population included
    assert np.all(np.diff(hist) <= 0.0)
    assert hist[-1] == pytest.approx(res.mixed_error, abs=1e-15)


def test_ga_stagnation_termination_with_perfect_seed():
    pair = _make_pair(duration=15.0)
    cfg = GaConfig(population_size=12, max_generations=500, stagnation_limit=20, rng_seed=4)
    res = calibrate_ga(pair, cfg=cfg, seed_individuals=[THETA_TRUE])
    assert res.converged_by == "Stagnation"
    assert res.mixed_error <= 1e-12
    assert res.generations_run <= 25


def test_ga_max_generations_termination():
    pair = _make_pair(duration=10.0)
    cfg = GaConfig(population_size=8, max_generations=5, stagnation_limit=100, rng_seed=5)
    res = calibrate_ga(pair, cfg=cfg)
    assert res.converged_by == "MaxGenerations"
    assert res.generations_run == 5


def test_ga_results_respect_bounds_and_tau_grid():
    pair = _make_pair(duration=10.0)
    cfg = GaConfig(population_size=14, max_generations=8, rng_seed=6)
    res = calibrate_ga(pair, cfg=cfg)
    b = default_bounds()
    for name, (lo, hi) in b.items():
        val = getattr(res.theta, name)
        assert lo <= val <= hi
    # reaction delays live on the sampling grid
    assert res.theta.tau == pytest.approx(round(res.theta.tau / 0.1) * 0.1, abs=1e-9)


def test_ga_pinned_tau_stays_pinned():
    pair = _make_pair(duration=10.0)
    cfg = GaConfig(population_size=10, max_generations=6, rng_seed=7)
    res = calibrate_ga(pair, bounds={"tau": (0.0, 0.0)}, cfg=cfg)
    assert res.theta.tau == 0.0


def test_result_reports_all_three_errors():
    pair = _make_pair(duration=10.0)
    cfg = GaConfig(population_size=10, max_generations=6, rng_seed=8)
    res = calibrate_ga(pair, cfg=cfg)
    assert isinstance(res, CalibrationResult)
    assert res.mixed_error >= 0 and res.abs_error >= 0 and res.rel_error >= 0
    assert res.rng_seed == 8
