"""Hybrid particle swarm / gravitational search (MPSOGSA) over box-bounded spaces.

Velocity update for particle ``i`` at iteration ``t`` of ``T``::

    v_i <- w(t) v_i + c1 r1 a_i + c2 r2 (gbest - x_i)

where ``a_i`` is the gravitational acceleration from all other particles,
``a_i = sum_j rand_j G(t) M_j (x_j - x_i) / (R_ij + eps)``, with
``G(t) = G0 exp(-alpha t / T)`` and masses from min-max normalised fitness.
The inertia ``w`` decays linearly from ``w_start`` to ``w_end``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

INTEGER = "integer"
REAL = "real"


@dataclass(frozen=True)
class SearchSpace:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    kinds: tuple[str, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.kinds)) or not self.lower:
            raise ValueError("bounds and kinds must have the same, non-zero length")
        for lo, hi, k in zip(self.lower, self.upper, self.kinds):
            if not lo < hi:
                raise ValueError(f"lower bound {lo} is not below upper bound {hi}")
            if k not in (INTEGER, REAL):
                raise ValueError(f"unknown dimension kind {k!r}")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{i}" for i in range(len(self.lower))))

    @classmethod
    def box(cls, lower: float, upper: float, dim: int) -> "SearchSpace":
        return cls((float(lower),) * dim, (float(upper),) * dim, (REAL,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def snap(self, x: np.ndarray) -> np.ndarray:
        """Round integer dimensions (half away from zero) and clip to bounds."""
        x = np.array(x, dtype=float)
        ints = np.array([k == INTEGER for k in self.kinds])
        x[..., ints] = np.sign(x[..., ints]) * np.floor(np.abs(x[..., ints]) + 0.5)
        return self.clip(x)


@dataclass(frozen=True)
class SwarmParams:
    w_start: float = 0.9
    w_end: float = 0.4
    c1: float = 1.0
    c2: float = 1.0
    g0: float = 1.0
    alpha: float = 20.0


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    fitness: np.ndarray
    personal_best: np.ndarray
    personal_best_fitness: np.ndarray
    global_best: np.ndarray
    global_best_fitness: float
    masses: np.ndarray
    iteration: int
    seed: int


@dataclass
class OptimizeResult:
    best_position: np.ndarray
    best_fitness: float
    history: list[float]
    best_positions: list[np.ndarray] = field(default_factory=list)
    generation_best: list[tuple[np.ndarray, float]] = field(default_factory=list)
    evaluations: int = 0
    state: SwarmState | None = None

    def history_csv(self, names: Sequence[str] | None = None) -> str:
        names = list(names) if names else [f"x{i}" for i in range(len(self.best_position))]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "best_fitness", *names])
        for g, (f, pos) in enumerate(zip(self.history, self.best_positions)):
            w.writerow([g, repr(float(f)), *(_fmt(v) for v in pos)])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def masses_from_fitness(fitness: np.ndarray) -> np.ndarray:
    """Normalised GSA masses for a minimisation problem; non-finite fitness gets zero mass."""
    finite = np.isfinite(fitness)
    if not finite.any():
        return np.full(len(fitness), 1.0 / len(fitness))
    best = fitness[finite].min()
    worst = fitness[finite].max()
    if worst == best:
        raw = finite.astype(float)
    else:
        raw = np.where(finite, (fitness - worst) / (best - worst), 0.0)
    total = raw.sum()
    if total == 0:
        # Only the worst finite values remain; spread mass over them.
        raw = finite.astype(float)
        total = raw.sum()
    return raw / total


def gravitational_acceleration(positions: np.ndarray, masses: np.ndarray, g: float,
                               rng: np.random.Generator) -> np.ndarray:
    diff = positions[None, :, :] - positions[:, None, :]          # x_j - x_i
    dist = np.sqrt(np.sum(diff**2, axis=2))
    pull = rng.random(dist.shape) * masses[None, :] / (dist + np.finfo(float).eps)
    np.fill_diagonal(pull, 0.0)
    return g * np.einsum("ij,ijk->ik", pull, diff)


def _evaluate(fitness: Callable, points: np.ndarray, map_fn: Callable) -> np.ndarray:
    values = list(map_fn(fitness, [p.copy() for p in points]))
    out = np.empty(len(points))
    for i, v in enumerate(values):
        try:
            v = float(v)
        except (TypeError, ValueError):
            v = math.inf
        out[i] = v if math.isfinite(v) else math.inf
    return out


def minimize(space: SearchSpace, fitness: Callable[[np.ndarray], float], budget: int = 100,
             population: int = 30, seed: int = 0, params: SwarmParams = SwarmParams(),
             map_fn: Callable = map, initial: Sequence[Sequence[float]] | None = None,
             on_generation: Callable | None = None) -> OptimizeResult:
    """Minimise ``fitness`` over ``space`` for ``budget`` generations.

    ``fitness`` receives snapped positions (integers rounded) and must be
    pure. ``map_fn`` may be an executor's ``map``; results are consumed in
    particle order, so the run does not depend on scheduling. ``initial``
    optionally fixes the first particles' starting positions.
    ``on_generation(generation, positions, fitness)`` is called after each
    evaluation round.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if population < 2:
        raise ValueError("population must be >= 2")
    rng = np.random.default_rng(seed)
    lo, hi = np.array(space.lower), np.array(space.upper)
    x = lo + rng.random((population, space.dim)) * (hi - lo)
    if initial is not None:
        for i, p in enumerate(initial[:population]):
            x[i] = space.clip(np.asarray(p, dtype=float))
    v = np.zeros_like(x)
    pbest = x.copy()
    pbest_f = np.full(population, math.inf)
    gbest = space.snap(x[0])
    gbest_f = math.inf
    history, best_positions, gen_best = [], [], []
    evaluations = 0
    masses = np.full(population, 1.0 / population)
    for t in range(budget):
        snapped = space.snap(x)
        f = _evaluate(fitness, snapped, map_fn)
        evaluations += population
        better = f < pbest_f
        pbest[better] = x[better]
        pbest_f[better] = f[better]
        i_best = int(np.argmin(f))              # lowest index wins ties
        gen_best.append((snapped[i_best].copy(), float(f[i_best])))
        if f[i_best] < gbest_f:
            gbest_f = float(f[i_best])
            gbest = snapped[i_best].copy()
        history.append(gbest_f)
        best_positions.append(gbest.copy())
        if on_generation is not None:
            on_generation(t, snapped, f)
        if t == budget - 1:
            break
        masses = masses_from_fitness(f)
        g = params.g0 * math.exp(-params.alpha * t / budget)
        acc = gravitational_acceleration(x, masses, g, rng)
        w = params.w_start - (params.w_start - params.w_end) * t / max(1, budget - 1)
        r1 = rng.random(x.shape)
        r2 = rng.random(x.shape)
        v = w * v + params.c1 * r1 * acc + params.c2 * r2 * (gbest - x)
        x = x + v
        clipped = space.clip(x)
        v[clipped != x] = 0.0
        x = clipped
    state = SwarmState(x, v, f, pbest, pbest_f, gbest, gbest_f, masses, t, seed)
    return OptimizeResult(gbest, gbest_f, history, best_positions, gen_best, evaluations, state)


def sphere(x) -> float:
    return float(np.sum(np.asarray(x) ** 2))


def rastrigin(x) -> float:
    x = np.asarray(x)
    return float(10 * len(x) + np.sum(x**2 - 10 * np.cos(2 * np.pi * x)))


def rosenbrock(x) -> float:
    x = np.asarray(x)
    return float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))


class EvolutionError(RuntimeError):
    """Every candidate in the evolution failed to train."""


@dataclass
class GenerationSnapshot:
    generation: int
    depth: int
    width: int
    fitness: float
    states: np.ndarray          # concatenated reservoir states over the snapshot window
    recurrence_rate: float


@dataclass
class EvolutionResult:
    best_config: object
    result: OptimizeResult
    snapshots: list[GenerationSnapshot]
    fitness_cache: dict
    failures: dict

    def snapshot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "depth", "width", "fitness", "recurrence_rate"])
        for s in self.snapshots:
            w.writerow([s.generation, s.depth, s.width, repr(float(s.fitness)), repr(float(s.recurrence_rate))])
        return buf.getvalue()


DEFAULT_ESN_SPACE = SearchSpace((1.0, 50.0), (4.0, 500.0), (INTEGER, INTEGER), ("depth", "width"))


def evolve_esn(series, split, template, space: SearchSpace = DEFAULT_ESN_SPACE, budget: int = 6,
               population: int = 8, seed: int = 0, horizon: int = 1, snapshot_window: int = 200,
               epsilon_fraction: float | None = None, map_fn: Callable = map,
               initial: Sequence[Sequence[float]] | None = None) -> EvolutionResult:
    """Evolve DeepESN (depth, width) to minimise validation RMSE.

    ``template`` supplies every other hyperparameter, including the reservoir
    seed; ``seed`` drives the swarm only. Candidates are scored once per
    distinct (depth, width). For the best candidate of every generation the
    concatenated reservoir states over the last ``snapshot_window`` training
    steps are kept together with their recurrence rate.
    """
    from . import esn
    from .dynamics import DEFAULT_EPSILON_FRACTION, epsilon_from_fraction, recurrence_plot

    frac = DEFAULT_EPSILON_FRACTION if epsilon_fraction is None else epsilon_fraction
    y = np.asarray(series, dtype=float)
    cache: dict[tuple[int, int], float] = {}
    failures: dict[tuple[int, int], str] = {}

    def config_for(depth, width):
        return esn.with_updates(template, num_layers=int(depth), reservoir_size=int(width))

    def score(pos):
        key = (int(pos[0]), int(pos[1]))
        if key not in cache:
            try:
                cache[key] = esn.evaluate_split(config_for(*key), y, split, horizon=horizon).validation.rmse
            except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
                failures[key] = f"{type(exc).__name__}: {exc}"
                cache[key] = math.inf
        return cache[key]

    result = minimize(space, score, budget=budget, population=population, seed=seed,
                      map_fn=map_fn, initial=initial)
    if not math.isfinite(result.best_fitness):
        detail = "; ".join(f"{k}: {v}" for k, v in sorted(failures.items())[:5])
        raise EvolutionError(f"all {len(cache)} candidates failed to train ({detail})")

    stop = split.train.stop
    start = max(0, stop - snapshot_window)
    snapshots = []
    for g, (pos, fit) in enumerate(result.generation_best):
        depth, width = int(pos[0]), int(pos[1])
        if math.isfinite(fit):
            res = esn.build(config_for(depth, width), 1 if y.ndim == 1 else y.shape[1])
            states = esn.concat_states(esn.run_states(res, y[:stop], washout=0))[start:stop]
            rate = recurrence_plot(states, epsilon_from_fraction(states, frac)).recurrence_rate
        else:
            states, rate = np.empty((0, 0)), math.nan
        snapshots.append(GenerationSnapshot(g, depth, width, fit, states, rate))
    best = config_for(*result.best_position)
    return EvolutionResult(best, result, snapshots, cache, failures)
