"""Independent ground-truth computations used to cross-check the sup-envelope.

Nothing here composes envelope steps: the series oracle exponentiates the
jump part directly in real space, and the classical integrator time-steps
du/dt = max-of-generators with fourth-order Runge-Kutta on the same symbols.
Agreement between these routes and the dyadic iteration is the central
numerical check of the artifact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ConfigurationError, ConsistencyError
from .grid import GridFunction, TorusGrid, _fft, _ifft
from .levy import IMAG_RESIDUE_TOL, SymbolTable

SERIES_TERM_BUDGET = 10**4
RK4_ABS_STABILITY = 2.5  # inside the negative real-axis stability interval (~2.785)


@dataclass(frozen=True)
class Trajectory:
    """Snapshots of one evolution at increasing times starting at 0."""

    times: np.ndarray
    snapshots: tuple[GridFunction, ...] = field(repr=False)

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float).reshape(-1)
        snaps = tuple(self.snapshots)
        if t.size != len(snaps):
            raise ConfigurationError("snapshot count must equal time count")
        if t.size == 0 or t[0] != 0.0:
            raise ConfigurationError("trajectory must start at time 0")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("trajectory times must be strictly increasing")
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "snapshots", snaps)

    @property
    def final(self) -> GridFunction:
        return self.snapshots[-1]


# -- compound-Poisson series ------------------------------------------------------

def _atom_offsets(grid: TorusGrid, points: np.ndarray) -> np.ndarray:
    offsets = np.round(points / grid.spacing).astype(int)
    back = offsets * grid.spacing
    err = np.abs(points - back)
    err = np.minimum(err, 2.0 * np.pi - err)
    if points.size and float(np.max(err)) > 1e-9:
        raise ConfigurationError("series oracle requires atoms on grid points")
    return offsets % grid.n


def poisson_series_apply(rate: float, mu_atoms, t: float, f: GridFunction,
                         tail_tol: float = 1e-10) -> GridFunction:
    """Exponentiate a pure large-jump generator by the jump-count series.

    Sums exp(-m) m^k / k! Q^k f over k <= N where Q convolves with the
    normalized jump kernel (exact cyclic shifts, atoms lie on the grid),
    m = rate * total atom weight, and N is chosen so the neglected tail
    contributes at most tail_tol in sup norm.
    """
    if rate < 0:
        raise ConfigurationError(f"rate must be nonnegative, got {rate}")
    if t < 0:
        raise ConfigurationError(f"time must be nonnegative, got {t}")
    if tail_tol <= 0:
        raise ConfigurationError(f"tail tolerance must be positive, got {tail_tol}")
    grid = f.grid
    points, weights = [], []
    for p, w in mu_atoms:
        points.append(np.atleast_1d(np.asarray(p, dtype=float)))
        weights.append(float(w))
    if not points or rate == 0 or t == 0:
        return f
    pts = np.stack(points)
    wts = np.asarray(weights)
    if pts.shape[1] != grid.dim:
        raise ConfigurationError("atom dimension does not match the grid")
    if np.any(wts <= 0):
        raise ConfigurationError("atom weights must be strictly positive")
    offsets = _atom_offsets(grid, pts)

    total = float(wts.sum())
    m = rate * total * t
    probs = wts / total

    # smallest N with Poisson(m) tail below the scaled target
    target = tail_tol / (1.0 + f.sup_norm)
    pmf = math.exp(-m)
    cum = pmf
    n_terms = 0
    while 1.0 - cum > target:
        n_terms += 1
        if n_terms > SERIES_TERM_BUDGET:
            raise BudgetError(
                f"series needs more than {SERIES_TERM_BUDGET} terms (m = {m:.3g})"
            )
        pmf *= m / n_terms
        cum += pmf

    def convolve(v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v)
        axes = tuple(range(grid.dim))
        for j in range(offsets.shape[0]):
            shift = tuple(-int(o) for o in offsets[j])
            out += probs[j] * np.roll(v, shift=shift, axis=axes)
        return out

    pmf = math.exp(-m)
    term = f.values
    acc = pmf * term
    for k in range(1, n_terms + 1):
        term = convolve(term)
        pmf *= m / k
        acc = acc + pmf * term
    return GridFunction(grid, acc)


# -- classical integration of the sup-generator equation ---------------------------

def _sup_generator_rhs(grid: TorusGrid, psi: np.ndarray, values: np.ndarray) -> np.ndarray:
    coeffs = _fft(grid, values)
    best = None
    for i in range(psi.shape[0]):
        arr = _ifft(grid, psi[i] * coeffs)
        residue = float(np.max(np.abs(arr.imag)))
        if residue > IMAG_RESIDUE_TOL:
            raise ConsistencyError(
                f"member {i}: imaginary residue {residue:.3e} exceeds 1e-10"
            )
        best = arr.real if best is None else np.maximum(best, arr.real)
    return best


def stability_limit(table: SymbolTable) -> float:
    """Largest step the explicit integrator accepts for this symbol table."""
    top = table.max_abs_symbol()
    if top == 0.0:
        return math.inf
    return RK4_ABS_STABILITY / top


def picard_solve(table: SymbolTable, f: GridFunction, t: float, dt: float) -> Trajectory:
    """Integrate du/dt = (sup-generator) u with classical 4-stage Runge-Kutta.

    The step must satisfy dt <= stability_limit(table); snapshots are kept at
    every multiple of dt, so the final snapshot approximates the worst-case
    evolution at time t with O(dt^4) accuracy away from maximizer switches.
    """
    if t <= 0:
        raise ConfigurationError(f"horizon must be positive, got {t}")
    if dt <= 0:
        raise ConfigurationError(f"step must be positive, got {dt}")
    if f.grid != table.grid:
        raise ConfigurationError("grid function does not live on the table's grid")
    steps = round(t / dt)
    if steps < 1 or abs(steps * dt - t) > 1e-9 * max(1.0, t):
        raise ConfigurationError(f"horizon {t} must be an integer multiple of dt {dt}")
    limit = stability_limit(table)
    if dt > limit:
        raise ConfigurationError(
            f"step {dt} exceeds the stability limit {limit:.3e} for this table"
        )
    grid = table.grid
    u = f.values
    times = [0.0]
    snaps = [f]
    for k in range(1, steps + 1):
        k1 = _sup_generator_rhs(grid, table.psi, u)
        k2 = _sup_generator_rhs(grid, table.psi, u + 0.5 * dt * k1)
        k3 = _sup_generator_rhs(grid, table.psi, u + 0.5 * dt * k2)
        k4 = _sup_generator_rhs(grid, table.psi, u + dt * k3)
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise ConsistencyError(f"integration blew up at step {k}")
        times.append(k * dt)
        snaps.append(GridFunction(grid, u))
    return Trajectory(np.asarray(times), tuple(snaps))


@dataclass(frozen=True)
class ResidualSample:
    time: float
    sup_residual: float
    pointwise: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        p = np.asarray(self.pointwise, dtype=float).copy()
        p.flags.writeable = False
        object.__setattr__(self, "pointwise", p)


def residual_check(traj: Trajectory, table: SymbolTable) -> list[ResidualSample]:
    """Central-difference defect of a trajectory against the sup-generator.

    Per interior snapshot time the residual is the sup norm of
    (u(t+d) - u(t-d)) / (2d) - (sup-generator) u(t); the pointwise field is
    kept so maximizer-switch loci can be inspected instead of failing a
    blanket tolerance.
    """
    if len(traj.snapshots) < 3:
        raise ConfigurationError("residual check needs at least 3 snapshots")
    gaps = np.diff(traj.times)
    if np.max(gaps) - np.min(gaps) > 1e-9 * float(np.max(gaps)):
        raise ConfigurationError("residual check needs uniformly spaced snapshots")
    delta = float(gaps[0])
    grid = traj.snapshots[0].grid
    out = []
    for i in range(1, len(traj.snapshots) - 1):
        du = (traj.snapshots[i + 1].values - traj.snapshots[i - 1].values) / (2.0 * delta)
        rhs = _sup_generator_rhs(grid, table.psi, traj.snapshots[i].values)
        pointwise = du - rhs
        out.append(ResidualSample(float(traj.times[i]),
                                  float(np.max(np.abs(pointwise))), pointwise))
    return out


# -- mass / wrap-around diagnostic --------------------------------------------------

def mass_diagnostic(table: SymbolTable, t: float, window_halfwidth: float,
                    shrink: float = 0.5) -> float:
    """Worst-case mass escaping a plateau window under any single member.

    A function equal to 1 on the window (per-axis halfwidth) and decaying to 0
    over a raised-cosine ramp is evolved under each member alone; the report
    is max over members of 1 - min over the shrunk window (halfwidth scaled by
    shrink) of the evolved plateau.  Small values certify that a line-valued
    example embedded on a large torus does not see the wrap-around.
    """
    if not 0 < window_halfwidth < np.pi:
        raise ConfigurationError("window halfwidth must lie strictly inside (0, pi)")
    if not 0 < shrink < 1:
        raise ConfigurationError("shrink factor must lie in (0, 1)")
    if t < 0:
        raise ConfigurationError(f"time must be nonnegative, got {t}")
    grid = table.grid
    w = window_halfwidth
    ramp = min(np.pi - w, w) / 2.0
    plateau = np.ones(grid.shape)
    inside = np.ones(grid.shape, dtype=bool)
    for xi in grid.meshgrid():
        d = np.abs(xi)
        axis_val = np.where(
            d <= w, 1.0,
            np.where(d <= w + ramp, 0.5 * (1.0 + np.cos(np.pi * (d - w) / ramp)), 0.0),
        )
        plateau = plateau * axis_val
        inside &= d <= shrink * w
    escaped = 0.0
    mults = table.multipliers(t)
    for i in range(len(table)):
        arr = _ifft(grid, mults[i] * _fft(grid, plateau))
        residue = float(np.max(np.abs(arr.imag)))
        if residue > IMAG_RESIDUE_TOL:
            raise ConsistencyError(
                f"member {i}: imaginary residue {residue:.3e} exceeds 1e-10"
            )
        escaped = max(escaped, 1.0 - float(np.min(arr.real[inside])))
    return max(escaped, 0.0)


# -- CSV emission --------------------------------------------------------------------

def write_trajectory_csv(path, traj: Trajectory) -> None:
    grid = traj.snapshots[0].grid
    mesh = [m.ravel() for m in grid.meshgrid()]
    head = ["time", "index", "x", "value"] if grid.dim == 1 else \
        ["time", "index", "x", "y", "value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for ti, snap in zip(traj.times, traj.snapshots):
            flat = snap.values.ravel()
            for i in range(grid.size):
                coords = [f"{m[i]:.17g}" for m in mesh]
                w.writerow([f"{ti:.17g}", i, *coords, f"{flat[i]:.17g}"])


def write_residual_csv(path, samples: list[ResidualSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "sup_residual"])
        for s in samples:
            w.writerow([f"{s.time:.17g}", f"{s.sup_residual:.17g}"])
