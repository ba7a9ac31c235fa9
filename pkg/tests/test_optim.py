from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgeofchaos import esn, optim
from edgeofchaos.data import chrono_split, mackey_glass

BOX4 = optim.SearchSpace.box(-5, 5, 4)


def test_search_space_validation():
    with pytest.raises(ValueError):
        optim.SearchSpace((1.0,), (1.0,), (optim.REAL,))
    with pytest.raises(ValueError):
        optim.SearchSpace((0.0,), (1.0, 2.0), (optim.REAL,))
    with pytest.raises(ValueError):
        optim.SearchSpace((0.0,), (1.0,), ("complex",))
    assert BOX4.dim == 4 and BOX4.names == ("x0", "x1", "x2", "x3")


def test_snap_rounds_half_away_from_zero():
    space = optim.SearchSpace((-10.0, -10.0), (10.0, 10.0), (optim.INTEGER, optim.REAL))
    assert space.snap([2.5, 2.5]).tolist() == [3.0, 2.5]
    assert space.snap([-2.5, 0.1]).tolist() == [-3.0, 0.1]
    assert space.snap([99.0, -99.0]).tolist() == [10.0, -10.0]


def test_sphere_converges():
    res = optim.minimize(BOX4, optim.sphere, budget=200, population=30, seed=0)
    assert res.best_fitness < 1e-3
    assert res.evaluations == 200 * 30


def test_constant_fitness():
    res = optim.minimize(BOX4, lambda x: 7.0, budget=10, population=5, seed=1)
    assert res.history == [7.0] * 10
    assert np.all(np.abs(res.best_position) <= 5)


def test_integer_exhaustive_optimum():
    space = optim.SearchSpace((1.0,), (6.0,), (optim.INTEGER,))
    res = optim.minimize(space, lambda x: abs(x[0] - 3), budget=20, population=6, seed=2)
    assert res.best_position.tolist() == [3.0] and res.best_fitness == 0


def test_non_finite_fitness_penalised():
    def fitness(x):
        return float("nan") if x[0] > 0 else optim.sphere(x)

    res = optim.minimize(BOX4, fitness, budget=30, population=10, seed=3)
    assert np.isfinite(res.best_fitness) and res.best_position[0] <= 0


def test_budget_one_returns_best_initial():
    seen = []
    res = optim.minimize(BOX4, optim.sphere, budget=1, population=8, seed=4,
                         on_generation=lambda g, pos, f: seen.append(f.copy()))
    assert res.best_fitness == seen[0].min()


def test_argument_errors():
    with pytest.raises(ValueError):
        optim.minimize(BOX4, optim.sphere, budget=0)
    with pytest.raises(ValueError):
        optim.minimize(BOX4, optim.sphere, population=1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([optim.sphere, optim.rastrigin, optim.rosenbrock]))
def test_history_non_increasing_and_bounded(seed, fn):
    positions = []
    res = optim.minimize(BOX4, fn, budget=15, population=6, seed=seed,
                         on_generation=lambda g, pos, f: positions.append(pos))
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert all(np.all((p >= -5) & (p <= 5)) for p in positions)
    assert res.best_fitness == min(min(fn(p) for p in gen) for gen in positions)


def test_integer_positions_snapped_every_generation():
    space = optim.SearchSpace((0.0, -1.0), (20.0, 1.0), (optim.INTEGER, optim.REAL))
    seen = []
    optim.minimize(space, lambda x: (x[0] - 7.3) ** 2 + x[1] ** 2, budget=10, population=6, seed=0,
                   on_generation=lambda g, pos, f: seen.append(pos))
    assert all(np.all(p[:, 0] == np.round(p[:, 0])) for p in seen)


def test_parallel_map_matches_serial():
    serial = optim.minimize(BOX4, optim.rastrigin, budget=20, population=8, seed=9)
    with ThreadPoolExecutor(4) as pool:
        parallel = optim.minimize(BOX4, optim.rastrigin, budget=20, population=8, seed=9, map_fn=pool.map)
    assert serial.history == parallel.history
    assert np.array_equal(serial.best_position, parallel.best_position)


def test_masses():
    m = optim.masses_from_fitness(np.array([1.0, 2.0, 3.0, np.inf]))
    assert m.sum() == pytest.approx(1.0) and m[3] == 0 and m[0] > m[1] > m[2] == 0
    assert np.allclose(optim.masses_from_fitness(np.array([2.0, 2.0])), 0.5)
    assert np.allclose(optim.masses_from_fitness(np.array([np.inf, np.inf])), 0.5)


def test_history_csv():
    res = optim.minimize(optim.SearchSpace((1.0, 0.0), (4.0, 1.0), (optim.INTEGER, optim.REAL)),
                         lambda x: x[0] + x[1], budget=3, population=4, seed=0)
    lines = res.history_csv(["depth", "rate"]).splitlines()
    assert lines[0] == "generation,best_fitness,depth,rate" and len(lines) == 4


SERIES = mackey_glass(700, transient=300)
SPLIT = chrono_split(len(SERIES), 0.7, 0.1, 0.2)
TEMPLATE = esn.DeepEsnConfig(num_layers=1, reservoir_size=20, washout=50)
SMALL_SPACE = optim.SearchSpace((1.0, 5.0), (2.0, 40.0), (optim.INTEGER, optim.INTEGER), ("depth", "width"))


def test_evolve_esn_structure():
    evo = optim.evolve_esn(SERIES, SPLIT, TEMPLATE, SMALL_SPACE, budget=3, population=4, seed=0,
                           snapshot_window=60)
    assert len(evo.snapshots) == 3
    assert all(s.states.shape == (60, s.depth * s.width) for s in evo.snapshots)
    assert all(0 < s.recurrence_rate <= 1 for s in evo.snapshots)
    best = evo.best_config
    assert (best.num_layers, best.reservoir_size) == tuple(int(v) for v in evo.result.best_position)
    assert evo.result.best_fitness == min(evo.fitness_cache.values())
    assert evo.snapshot_csv().splitlines()[0] == "generation,depth,width,fitness,recurrence_rate"


def test_evolve_esn_fitness_is_validation_rmse():
    evo = optim.evolve_esn(SERIES, SPLIT, TEMPLATE, SMALL_SPACE, budget=1, population=3, seed=1)
    (depth, width), value = next(iter(evo.fitness_cache.items()))
    cfg = esn.with_updates(TEMPLATE, num_layers=depth, reservoir_size=width)
    assert value == esn.evaluate_split(cfg, SERIES, SPLIT).validation.rmse


def test_evolve_esn_all_failures_abort():
    broken = esn.with_updates(TEMPLATE, washout=10_000)
    with pytest.raises(optim.EvolutionError, match="failed to train"):
        optim.evolve_esn(SERIES, SPLIT, broken, SMALL_SPACE, budget=2, population=3)
