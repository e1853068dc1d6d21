"""Calibration of the car-following model against observed leader-follower pairs.

The follower is re-simulated against the recorded leader from the pair's
initial state; the objective compares simulated to observed headways with a
mixed relative/absolute error that neither over-weights small headways (as a
pure relative error does) nor large ones (as a pure absolute error does).
A real-coded genetic algorithm searches the parameter box.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .carfollowing import PARAM_BOUNDS, PARAM_ORDER, FvdmParams, simulate_followers_batch
from .errors import LengthMismatch, NonpositiveHeadway
from .trajectory_io import VehiclePair

COLLISION_PENALTY = 1.0e6
TAU_STEP = 0.1  # s, resolution of the reaction-delay gene
_ROULETTE_EPS = 1e-12


def _check_series(s_sim, s_data):
    s_sim = np.asarray(s_sim, dtype=float)
    s_data = np.asarray(s_data, dtype=float)
    if s_sim.shape != s_data.shape or s_sim.ndim != 1:
        raise LengthMismatch("series must be 1-d and equally long")
    if s_sim.size == 0:
        raise LengthMismatch("series must be nonempty")
    if np.any(s_data <= 0):
        raise NonpositiveHeadway("observed headways must be positive")
    return s_sim, s_data


def error_rel(s_sim, s_data) -> float:
    """Root mean square of pointwise relative headway errors."""
    s_sim, s_data = _check_series(s_sim, s_data)
    return float(np.sqrt(np.mean(((s_sim - s_data) / s_data) ** 2)))


def error_abs(s_sim, s_data) -> float:
    """Root mean square headway error normalized by the mean headway."""
    s_sim, s_data = _check_series(s_sim, s_data)
    return float(np.sqrt(np.mean((s_sim - s_data) ** 2) / np.mean(s_data) ** 2))


def error_mixed(s_sim, s_data) -> float:
    """Mixed error: squared deviations weighted by the inverse headway,
    normalized by the mean headway.  Falls between the relative and absolute
    errors and coincides with both on constant data."""
    s_sim, s_data = _check_series(s_sim, s_data)
    scale = np.mean(np.abs(s_data))
    return float(np.sqrt(np.mean((s_sim - s_data) ** 2 / np.abs(s_data)) / scale))


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    max_generations: int = 1000
    stagnation_limit: int = 100
    crossover_probability: float = 0.9
    mutation_probability: float = 0.1
    mutation_scale: float = 0.1  # fraction of each parameter's bound range
    elitism_count: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2 or self.elitism_count >= self.population_size:
            raise ValueError("population must hold elites plus offspring")
        if not (0 <= self.crossover_probability <= 1 and 0 <= self.mutation_probability <= 1):
            raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class CalibrationResult:
    theta: FvdmParams
    mixed_error: float  # objective value at theta (penalty if it collides)
    abs_error: float
    rel_error: float
    generations_run: int
    converged_by: str  # "Stagnation" or "MaxGenerations"
    fitness_history: list  # best fitness in each generation's population
    rng_seed: int


def default_bounds() -> dict:
    """The full calibration box, copyable and overridable per parameter."""
    return dict(PARAM_BOUNDS)


def _bounds_arrays(bounds: dict | None):
    box = default_bounds()
    if bounds:
        for name, pair in bounds.items():
            if name not in box:
                raise ValueError(f"unknown parameter {name!r}")
            lo, hi = float(pair[0]), float(pair[1])
            mlo, mhi = PARAM_BOUNDS[name]
            if not (mlo <= lo <= hi <= mhi):
                raise ValueError(f"bounds for {name} must nest inside [{mlo}, {mhi}]")
            box[name] = (lo, hi)
    lo = np.array([box[n][0] for n in PARAM_ORDER])
    hi = np.array([box[n][1] for n in PARAM_ORDER])
    return lo, hi


_TAU_IDX = PARAM_ORDER.index("tau")


def _snap_tau(pop: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> None:
    # reaction delay is searched on a fixed time grid
    pop[:, _TAU_IDX] = np.round(pop[:, _TAU_IDX] / TAU_STEP) * TAU_STEP
    np.clip(pop[:, _TAU_IDX], lo[_TAU_IDX], hi[_TAU_IDX], out=pop[:, _TAU_IDX])


def _pair_fitness(pop: np.ndarray, pair: VehiclePair) -> np.ndarray:
    """Mixed error per candidate parameter vector, penalty on any collision."""
    lx = pair.leader.positions
    lv = pair.leader.speeds
    x0 = pair.follower.positions[0]
    v0 = pair.follower.speeds[0]
    X = simulate_followers_batch(pop, lx, lv, x0, v0, pair.leader.dt)
    data = pair.headways()
    fits = np.empty(pop.shape[0])
    for p in range(pop.shape[0]):
        s_sim = np.ascontiguousarray(lx - X[:, p])
        if s_sim.min() <= 0.0:
            fits[p] = COLLISION_PENALTY
        else:
            fits[p] = error_mixed(s_sim, data)
    return fits


def evaluate_fitness(theta: FvdmParams, pair: VehiclePair) -> float:
    """Mixed headway error of the model simulated over the pair's window.

    The follower starts from the observed initial position and speed; a
    simulated collision (nonpositive headway) returns the fixed penalty.
    Pure function: identical inputs give bit-identical outputs.
    """
    return float(_pair_fitness(np.asarray(theta.as_array())[None, :], pair)[0])


def calibrate_ga(
    pair: VehiclePair,
    bounds: dict | None = None,
    cfg: GaConfig | None = None,
    seed_individuals=None,
) -> CalibrationResult:
    """Fit model parameters to one leader-follower pair with a genetic search.

    Real-coded GA: roulette selection on inverse fitness, uniform crossover,
    per-gene Gaussian mutation clipped to the bounds, elitism.  Terminates at
    max_generations or once the best fitness has not improved for
    stagnation_limit consecutive generations.  Fully deterministic for a
    given rng seed.

    Args:
        pair: observed leader-follower pair (the calibration window).
        bounds: optional {name: (lo, hi)} overrides nested in the default box.
        cfg: GA settings; defaults are the standard configuration.
        seed_individuals: optional FvdmParams injected into the initial
            population (testing hook).

    Returns:
        CalibrationResult with the best parameters ever seen.
    """
    cfg = cfg or GaConfig()
    lo, hi = _bounds_arrays(bounds)
    span = hi - lo
    sigma = cfg.mutation_scale * span
    rng = np.random.default_rng(cfg.rng_seed)
    P = cfg.population_size

    pop = lo + rng.random((P, 7)) * span
    if seed_individuals:
        for i, theta in enumerate(seed_individuals[:P]):
            pop[i] = theta.as_array()
    _snap_tau(pop, lo, hi)

    fits = _pair_fitness(pop, pair)
    best_i = int(np.argmin(fits))
    best_vec = pop[best_i].copy()
    best_fit = float(fits[best_i])
    history = [best_fit]

    generations = 0
    stagnant = 0
    converged_by = "MaxGenerations"
    for _ in range(cfg.max_generations):
        generations += 1

        weights = 1.0 / (fits + _ROULETTE_EPS)
        probs = weights / weights.sum()
        order = np.argsort(fits, kind="stable")
        children = [pop[i].copy() for i in order[: cfg.elitism_count]]

        while len(children) < P:
            i, j = rng.choice(P, size=2, p=probs)
            a, b = pop[i].copy(), pop[j].copy()
            if rng.random() < cfg.crossover_probability:
                mask = rng.random(7) < 0.5
                swap = a[mask].copy()
                a[mask] = b[mask]
                b[mask] = swap
            for child in (a, b):
                if len(children) >= P:
                    break
                mmask = rng.random(7) < cfg.mutation_probability
                noise = rng.standard_normal(7) * sigma
                child = np.where(mmask, child + noise, child)
                np.clip(child, lo, hi, out=child)
                children.append(child)

        pop = np.vstack(children)
        _snap_tau(pop, lo, hi)
        fits = _pair_fitness(pop, pair)

        gen_best = float(fits.min())
        history.append(gen_best)
        if gen_best < best_fit:
            best_fit = gen_best
            best_vec = pop[int(np.argmin(fits))].copy()
            stagnant = 0
        else:
            stagnant += 1
        if stagnant >= cfg.stagnation_limit:
            converged_by = "Stagnation"
            break

    theta = FvdmParams.from_array(best_vec)
    lx = pair.leader.positions
    X = simulate_followers_batch(best_vec[None, :], lx, pair.leader.speeds,
                                 pair.follower.positions[0], pair.follower.speeds[0],
                                 pair.leader.dt)
    s_sim = np.ascontiguousarray(lx - X[:, 0])
    data = pair.headways()
    if s_sim.min() <= 0.0:
        abs_err = rel_err = COLLISION_PENALTY
    else:
        abs_err = error_abs(s_sim, data)
        rel_err = error_rel(s_sim, data)
    return CalibrationResult(
        theta=theta,
        mixed_error=best_fit,
        abs_error=abs_err,
        rel_error=rel_err,
        generations_run=generations,
        converged_by=converged_by,
        fitness_history=history,
        rng_seed=cfg.rng_seed,
    )
