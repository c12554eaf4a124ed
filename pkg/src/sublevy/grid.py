"""Uniform periodic grids on the 1- and 2-torus, grid functions, and transforms.

The torus is represented by (-pi, pi]^d sampled at x_j = -pi + j * (2*pi/n)
per axis.  Spectra follow the convention f(x) = sum_k c_k exp(i k.x) with
integer modes k in {-n/2+1, ..., n/2} per axis; the forward transform is the
unnormalized DFT sum divided by n^d.  Coefficient arrays are stored in FFT
index order.

All containers are immutable values; the operations below are pure functions
and safe to call concurrently on shared inputs.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

MAX_POINTS_PER_AXIS = 2**16

TWO_PI = 2.0 * np.pi


@functools.lru_cache(maxsize=None)
def _mode_axis(n: int) -> np.ndarray:
    """Integer Fourier modes in FFT order with the Nyquist mode taken as +n/2."""
    k = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
    k[k == -n // 2] = n // 2
    k.flags.writeable = False
    return k


@functools.lru_cache(maxsize=None)
def _phase_axis(n: int) -> np.ndarray:
    # exp(-i k x_0) = (-1)^k for x_0 = -pi; relates the FFT (indexed from x=-pi)
    # to coefficients in the centered convention.
    p = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    p.flags.writeable = False
    return p


@functools.lru_cache(maxsize=None)
def _neg_index_axis(n: int) -> np.ndarray:
    idx = (-np.arange(n)) % n
    idx.flags.writeable = False
    return idx


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with n points per axis on the d-torus, d in {1, 2}."""

    dim: int
    n: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ConfigurationError(f"grid dim must be 1 or 2, got {self.dim}")
        if self.n % 2 != 0:
            raise ConfigurationError(f"grid size must be even, got n={self.n}")
        if not 4 <= self.n <= MAX_POINTS_PER_AXIS:
            raise ConfigurationError(
                f"grid size out of range [4, {MAX_POINTS_PER_AXIS}]: n={self.n}"
            )

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def axis_points(self) -> np.ndarray:
        """Grid coordinates -pi + j*spacing along one axis."""
        return -np.pi + self.spacing * np.arange(self.n)

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        x = self.axis_points()
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def mode_grids(self) -> tuple[np.ndarray, ...]:
        """Integer mode arrays (FFT order, Nyquist = +n/2), one per axis."""
        k = _mode_axis(self.n)
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    def nearest_index(self, point: np.ndarray) -> tuple[int, ...]:
        """Row-major multi-index of the grid point closest to a torus point."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if p.shape != (self.dim,):
            raise ConfigurationError(f"point must have {self.dim} coordinates")
        return tuple(int(round((c + np.pi) / self.spacing)) % self.n for c in p)


def make_grid(dim: int, n: int) -> TorusGrid:
    return TorusGrid(dim=int(dim), n=int(n))


@dataclass(frozen=True)
class GridFunction:
    """Real samples of a function on a TorusGrid, with sup-norm semantics."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ConfigurationError(
                f"values shape {v.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("grid function values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def value_at(self, index: tuple[int, ...]) -> float:
        return float(self.values[index])


@dataclass(frozen=True)
class Spectrum:
    """Fourier coefficients of a grid function, in FFT index order."""

    grid: TorusGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != self.grid.shape:
            raise ConfigurationError(
                f"coeffs shape {c.shape} does not match grid shape {self.grid.shape}"
            )
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)


def _phase_nd(grid: TorusGrid) -> np.ndarray:
    p = _phase_axis(grid.n)
    if grid.dim == 1:
        return p
    return np.multiply.outer(p, p)


def _fft(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """Raw forward transform (ndarray in, ndarray out); hot-path helper."""
    return np.fft.fftn(values) * _phase_nd(grid) / grid.size


def _ifft(grid: TorusGrid, coeffs: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(coeffs * _phase_nd(grid)) * grid.size


def forward_transform(f: GridFunction) -> Spectrum:
    return Spectrum(f.grid, _fft(f.grid, f.values))


def inverse_transform(s: Spectrum) -> GridFunction:
    return GridFunction(s.grid, _ifft(s.grid, s.coeffs).real)


def negation_permutation(grid: TorusGrid) -> tuple[np.ndarray, ...] | np.ndarray:
    """Index object mapping each FFT slot to the slot of the negated mode.

    Modes on the Nyquist shell are self-aliased: -n/2 and +n/2 occupy the
    same slot, so the permutation wraps through it.
    """
    idx = _neg_index_axis(grid.n)
    if grid.dim == 1:
        return idx
    return np.ix_(idx, idx)


def _check_same_grid(f: GridFunction, g: GridFunction) -> None:
    if f.grid != g.grid:
        raise ConfigurationError("grid functions live on different grids")


def sup_distance(f: GridFunction, g: GridFunction) -> float:
    _check_same_grid(f, g)
    return float(np.max(np.abs(f.values - g.values)))


def pointwise_max(fs: list[GridFunction]) -> GridFunction:
    if not fs:
        raise ConfigurationError("pointwise_max of an empty list")
    for g in fs[1:]:
        _check_same_grid(fs[0], g)
    return GridFunction(fs[0].grid, np.maximum.reduce([f.values for f in fs]))


def cyclic_shift(f: GridFunction, offset) -> GridFunction:
    """Translate by whole grid steps: out(x) = f(x + offset*spacing) per axis."""
    if np.isscalar(offset):
        offset = (int(offset),) * f.grid.dim
    offset = tuple(int(m) for m in offset)
    if len(offset) != f.grid.dim:
        raise ConfigurationError(f"offset must have {f.grid.dim} entries")
    return GridFunction(
        f.grid,
        np.roll(f.values, shift=tuple(-m for m in offset), axis=tuple(range(f.grid.dim))),
    )


def wrap_point(p: np.ndarray) -> np.ndarray:
    """Representative of a torus point in (-pi, pi]^d."""
    p = np.asarray(p, dtype=float)
    return p - TWO_PI * np.ceil((p - np.pi) / TWO_PI)


# -- named initial functions -------------------------------------------------

def _cosine(grid: TorusGrid, k, phase: float = 0.0) -> np.ndarray:
    ks = np.atleast_1d(np.asarray(k))
    if ks.shape != (grid.dim,):
        raise ConfigurationError(f"cosine needs {grid.dim} wave numbers, got {k!r}")
    if not np.all(ks == np.round(ks)):
        raise ConfigurationError(f"cosine wave numbers must be integers, got {k!r}")
    mesh = grid.meshgrid()
    arg = sum(int(ki) * xi for ki, xi in zip(ks, mesh)) + float(phase)
    return np.cos(arg)


def _bump(grid: TorusGrid, center, width: float) -> np.ndarray:
    if width <= 0:
        raise ConfigurationError(f"bump width must be positive, got {width}")
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.shape != (grid.dim,):
        raise ConfigurationError(f"bump center needs {grid.dim} coordinates")
    out = np.ones(grid.shape)
    for axis, xi in enumerate(grid.meshgrid()):
        d = xi - c[axis]
        d = np.abs(d - TWO_PI * np.round(d / TWO_PI))  # torus arc distance
        out = out * np.where(d <= width, 0.5 * (1.0 + np.cos(np.pi * d / width)), 0.0)
    return out


def sample(grid: TorusGrid, kind: str, **params) -> GridFunction:
    """Evaluate a named initial function pointwise at the grid points.

    Builtins: cosine(k, phase), bump(center, width), constant(value),
    samples(path) reading the grid-function CSV format.
    """
    if kind == "cosine":
        try:
            return GridFunction(grid, _cosine(grid, **params))
        except TypeError as exc:
            raise ConfigurationError(f"bad cosine parameters {params!r}: {exc}") from None
    if kind == "bump":
        try:
            return GridFunction(grid, _bump(grid, **params))
        except TypeError as exc:
            raise ConfigurationError(f"bad bump parameters {params!r}: {exc}") from None
    if kind == "constant":
        try:
            value = float(params["value"])
        except KeyError:
            raise ConfigurationError("constant needs a 'value' parameter") from None
        return GridFunction(grid, np.full(grid.shape, value))
    if kind == "samples":
        try:
            path = params["path"]
        except KeyError:
            raise ConfigurationError("samples needs a 'path' parameter") from None
        return read_function_csv(path, grid=grid)
    raise ConfigurationError(f"unknown initial function {kind!r}")


# -- CSV interchange ----------------------------------------------------------

def _csv_header(dim: int) -> list[str]:
    return ["index", "x", "value"] if dim == 1 else ["index", "x", "y", "value"]


def write_function_csv(path, f: GridFunction) -> None:
    """One row per grid point, row-major; floats at 17 significant digits."""
    mesh = [m.ravel() for m in f.grid.meshgrid()]
    flat = f.values.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_csv_header(f.grid.dim))
        for i in range(f.grid.size):
            coords = [f"{m[i]:.17g}" for m in mesh]
            w.writerow([i, *coords, f"{flat[i]:.17g}"])


def read_function_csv(path, grid: TorusGrid | None = None) -> GridFunction:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read sample file {path}: {exc}") from exc
    if not rows:
        raise ConfigurationError(f"sample file {path} is empty")
    header = rows[0]
    if header == _csv_header(1):
        dim = 1
    elif header == _csv_header(2):
        dim = 2
    else:
        raise ConfigurationError(f"sample file {path} has unexpected header {header}")
    body = rows[1:]
    count = len(body)
    n = round(count ** (1.0 / dim))
    if n**dim != count:
        raise ConfigurationError(f"sample file {path} has {count} rows, not a {dim}-d grid")
    if grid is None:
        grid = make_grid(dim, n)
    elif grid.dim != dim or grid.size != count:
        raise ConfigurationError(
            f"sample file {path} has {count} rows of dim {dim}, expected grid {grid}"
        )
    try:
        values = np.array([float(r[-1]) for r in body]).reshape(grid.shape)
    except (ValueError, IndexError) as exc:
        raise ConfigurationError(f"sample file {path} is malformed: {exc}") from exc
    return GridFunction(grid, values)
