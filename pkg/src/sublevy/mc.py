"""Monte Carlo dual: feedback-controlled paths bound the envelope from below.

A simple strategy fixes a time partition and, per interval, a finite-range
feedback map from grid points to family members.  Simulating the controlled
path and averaging the payoff yields a lower bound on the worst-case value;
the feedback extracted from the recorded maximizer fields should come within
the scheme tolerance of attaining it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from .errors import ConfigurationError
from .grid import GridFunction, TorusGrid, wrap_point
from .levy import GeneratorFamily, sample_increment
from .nisio import NisioResult, Partition

MIN_PATHS = 100


@dataclass(frozen=True)
class SimpleStrategy:
    """Per-interval feedback maps from grid points to family member indices."""

    grid: TorusGrid
    partition: Partition
    feedback: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        fb = np.asarray(self.feedback, dtype=np.int64)
        expect = (self.partition.step_count,) + self.grid.shape
        if fb.shape != expect:
            raise ConfigurationError(
                f"feedback shape {fb.shape} must be (intervals, grid points) = {expect}"
            )
        if fb.size and fb.min() < 0:
            raise ConfigurationError("feedback indices must be nonnegative")
        fb = fb.copy()
        fb.flags.writeable = False
        object.__setattr__(self, "feedback", fb)

    def member_range_check(self, family: GeneratorFamily) -> None:
        if self.feedback.size and int(self.feedback.max()) >= len(family):
            raise ConfigurationError(
                f"feedback selects member {int(self.feedback.max())}, "
                f"family has {len(family)}"
            )


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int

    def __post_init__(self) -> None:
        if self.stderr < 0:
            raise ConfigurationError("standard error cannot be negative")


def constant_strategy(grid: TorusGrid, partition: Partition, index: int) -> SimpleStrategy:
    fb = np.full((partition.step_count,) + grid.shape, int(index), dtype=np.int64)
    return SimpleStrategy(grid, partition, fb)


def random_strategy(grid: TorusGrid, partition: Partition, member_count: int,
                    rng: Generator) -> SimpleStrategy:
    fb = rng.integers(0, member_count, size=(partition.step_count,) + grid.shape)
    return SimpleStrategy(grid, partition, fb)


def extract_strategy(result: NisioResult, level: int) -> SimpleStrategy:
    """Turn the recorded maximizer fields of a dyadic run into feedback maps."""
    argmax = result.argmax
    if argmax is None or argmax.level != level:
        have = "none" if argmax is None else f"level {argmax.level}"
        raise ConfigurationError(f"argmax not recorded at level {level} (have {have})")
    partition = Partition.dyadic(result.t, level)
    return SimpleStrategy(result.value.grid, partition, argmax.selections)


def interpolate_linear(f: GridFunction, point) -> float:
    """Periodic multilinear interpolation of a grid function."""
    grid = f.grid
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if p.shape != (grid.dim,):
        raise ConfigurationError(f"point must have {grid.dim} coordinates")
    u = (p + np.pi) / grid.spacing
    i0 = np.floor(u).astype(int)
    frac = u - i0
    i0 %= grid.n
    if grid.dim == 1:
        a, b = f.values[i0[0]], f.values[(i0[0] + 1) % grid.n]
        return float(a * (1 - frac[0]) + b * frac[0])
    i1 = (i0 + 1) % grid.n
    v = f.values
    fx, fy = frac
    return float(
        v[i0[0], i0[1]] * (1 - fx) * (1 - fy)
        + v[i1[0], i0[1]] * fx * (1 - fy)
        + v[i0[0], i1[1]] * (1 - fx) * fy
        + v[i1[0], i1[1]] * fx * fy
    )


def simulate_path(family: GeneratorFamily, strat: SimpleStrategy, x0, t: float,
                  rng: Generator) -> np.ndarray:
    """Advance a controlled path over the strategy partition; returns the
    terminal torus point.  The feedback is looked up at the nearest grid point
    of the current position."""
    if abs(strat.partition.end - t) > 1e-12 * max(1.0, t):
        raise ConfigurationError(
            f"strategy partition ends at {strat.partition.end}, horizon is {t}"
        )
    strat.member_range_check(family)
    grid = strat.grid
    pos = wrap_point(np.atleast_1d(np.asarray(x0, dtype=float)))
    if pos.shape != (grid.dim,):
        raise ConfigurationError(f"start point must have {grid.dim} coordinates")
    gaps = strat.partition.gaps()
    if grid.dim == 1:
        # scalar arithmetic; this loop dominates estimate() runtime
        inv_spacing = 1.0 / grid.spacing
        two_pi = 2.0 * math.pi
        p = float(pos[0])
        for j in range(gaps.size):
            cell = int(round((p + math.pi) * inv_spacing)) % grid.n
            member = family.members[strat.feedback[j, cell]]
            p += float(sample_increment(member, float(gaps[j]), rng)[0])
            p -= two_pi * math.ceil((p - math.pi) / two_pi)
        return np.array([p])
    for j in range(gaps.size):
        cell = grid.nearest_index(pos)
        member = int(strat.feedback[(j, *cell)])
        pos = wrap_point(pos + sample_increment(family.members[member], float(gaps[j]), rng))
    return pos


def _path_rng(seed: int, path_index: int) -> Generator:
    # counter-based: an independent Philox stream keyed by (seed, path index)
    return Generator(Philox(key=np.array([seed, path_index], dtype=np.uint64)))


def estimate(family: GeneratorFamily, strat: SimpleStrategy, f: GridFunction, x0,
             t: float, n_paths: int, seed: int) -> McEstimate:
    """Mean payoff over independent controlled paths, with its standard error.

    Path i uses the stream keyed by (seed, i), and the reduction runs in path
    order, so results are bitwise reproducible regardless of scheduling.
    """
    if n_paths < MIN_PATHS:
        raise ConfigurationError(f"need at least {MIN_PATHS} paths, got {n_paths}")
    if f.grid != strat.grid:
        raise ConfigurationError("payoff function and strategy live on different grids")
    payoffs = np.empty(n_paths)
    for i in range(n_paths):
        terminal = simulate_path(family, strat, x0, t, _path_rng(seed, i))
        payoffs[i] = interpolate_linear(f, terminal)
    mean = float(np.mean(payoffs))
    stderr = float(np.std(payoffs, ddof=1) / math.sqrt(n_paths))
    return McEstimate(mean=mean, stderr=stderr, n_paths=n_paths, seed=seed)


@dataclass(frozen=True)
class BoundRow:
    name: str
    mean: float
    stderr: float
    n_paths: int
    seed: int
    bound_ok: bool


@dataclass(frozen=True)
class DualBoundReport:
    rows: tuple[BoundRow, ...]
    reference_value: float
    scheme_tol: float
    best_name: str
    best_mean: float

    @property
    def ok(self) -> bool:
        return all(r.bound_ok for r in self.rows)

    @property
    def violations(self) -> list[str]:
        return [r.name for r in self.rows if not r.bound_ok]

    @property
    def gap(self) -> float:
        return self.reference_value - self.best_mean


def dual_bound_suite(family: GeneratorFamily, f: GridFunction, x0, t: float,
                     strategies, n_paths: int, seed: int,
                     reference_value: float, scheme_tol: float) -> DualBoundReport:
    """Estimate every strategy and check mean <= reference + 3 stderr + tol.

    strategies is a sequence of (name, SimpleStrategy).  Violations are
    reported by name, not raised; a violation signals a bug in either the
    envelope or the simulator.
    """
    if scheme_tol < 0:
        raise ConfigurationError("scheme tolerance must be nonnegative")
    rows = []
    best_name, best_mean = "", -math.inf
    for name, strat in strategies:
        est = estimate(family, strat, f, x0, t, n_paths, seed)
        ok = est.mean <= reference_value + 3.0 * est.stderr + scheme_tol
        rows.append(BoundRow(str(name), est.mean, est.stderr, est.n_paths, est.seed, ok))
        if est.mean > best_mean:
            best_name, best_mean = str(name), est.mean
    if not rows:
        raise ConfigurationError("dual bound suite needs at least one strategy")
    return DualBoundReport(tuple(rows), reference_value, scheme_tol, best_name, best_mean)


# -- interchange ---------------------------------------------------------------

def strategy_to_dict(strat: SimpleStrategy) -> dict:
    return {
        "partition": [float(x) for x in strat.partition.times],
        "feedback": [strat.feedback[j].ravel().tolist()
                     for j in range(strat.partition.step_count)],
    }


def strategy_from_dict(obj: dict, grid: TorusGrid) -> SimpleStrategy:
    try:
        partition = Partition(np.asarray(obj["partition"], dtype=float))
        fb = np.asarray(obj["feedback"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed strategy object: {exc}") from exc
    if fb.ndim != 2 or fb.shape[1] != grid.size:
        raise ConfigurationError(
            f"strategy feedback must be (intervals, {grid.size}), got {fb.shape}"
        )
    return SimpleStrategy(grid, partition, fb.reshape((-1,) + grid.shape))


def save_strategy(path, strat: SimpleStrategy) -> None:
    with open(path, "w") as fh:
        json.dump(strategy_to_dict(strat), fh)


def load_strategy(path, grid: TorusGrid) -> SimpleStrategy:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read strategy file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"strategy file {path} is not valid JSON: {exc}") from exc
    return strategy_from_dict(data, grid)


def write_estimates_csv(path, report: DualBoundReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "mean", "stderr", "n_paths", "seed", "bound_ok"])
        for r in report.rows:
            w.writerow([r.name, f"{r.mean:.17g}", f"{r.stderr:.17g}",
                        r.n_paths, r.seed, int(r.bound_ok)])
