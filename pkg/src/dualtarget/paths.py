"""Pathwise stochastic calculus on discretized canonical paths.

Everything here is measure-free: integrals are left-endpoint Riemann sums
along the path's own sampling grid, so the quadratic variation of a path is
the running sum of its squared increments and the diffusion density is a
backward difference quotient of that quadratic variation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np


class PathError(ValueError):
    pass


def _as_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise PathError("grid must be a non-empty 1-d array")
    if not np.all(np.isfinite(grid)):
        raise PathError("grid contains non-finite times")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise PathError("grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > 1 + 1e-12:
        raise PathError("grid must lie in [0, 1]")
    return grid


@dataclass(frozen=True)
class SamplePath:
    """A d-dimensional path sampled on an explicit time grid.

    ``values`` has shape ``(len(grid), d)``. Canonical paths start at the
    zero vector; use ``anchored=False`` for raw integrands that need not.
    """

    grid: np.ndarray
    values: np.ndarray

    def __init__(self, grid, values, anchored: bool = True):
        grid = _as_grid(grid)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != grid.size:
            raise PathError(
                f"values shape {values.shape} does not match grid of {grid.size} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise PathError("path contains non-finite values")
        if anchored and np.any(values[0] != 0.0):
            raise PathError("canonical path must start at the zero vector")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    def __len__(self) -> int:
        return self.grid.size

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    @classmethod
    def uniform(cls, values, t0: float = 0.0, t1: float = 1.0, anchored: bool = True):
        values = np.asarray(values, dtype=float)
        return cls(np.linspace(t0, t1, values.shape[0]), values, anchored=anchored)


@dataclass(frozen=True)
class MatrixPath:
    """A d x d matrix per grid node (quadratic variation, densities)."""

    grid: np.ndarray
    values: np.ndarray

    def __init__(self, grid, values):
        grid = _as_grid(grid)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        if values.ndim != 3 or values.shape[0] != grid.size or values.shape[1] != values.shape[2]:
            raise PathError(f"matrix path values have bad shape {values.shape}")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, grid, a):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.broadcast_to(a, (grid.size,) + a.shape).copy())


def _check_same_grid(p: SamplePath, q) -> None:
    if p.grid.shape != q.grid.shape or np.any(p.grid != q.grid):
        raise PathError("integrand and driver must share the same grid")


def pathwise_integral(integrand: SamplePath, driver: SamplePath) -> SamplePath:
    """Left-endpoint sums of ``integrand . d(driver)``, accumulated per node.

    The integrand may be d-dimensional (dot product with the increments) or
    scalar with a 1-d driver. The output is scalar-valued and starts at zero.
    """
    _check_same_grid(integrand, driver)
    z = integrand.values[:-1]
    db = driver.increments()
    if z.shape[1] != db.shape[1]:
        raise PathError(
            f"integrand dimension {z.shape[1]} incompatible with driver dimension {db.shape[1]}"
        )
    terms = np.einsum("kd,kd->k", z, db)
    out = np.concatenate([[0.0], np.cumsum(terms)])
    return SamplePath(driver.grid, out)


def quadratic_variation(path: SamplePath) -> MatrixPath:
    """Running sum of ``dB dB^T``.

    This is what ``B B^T - 2 int B dB^T`` (symmetrized) reduces to when the
    integral is a left-endpoint sum, so we compute it directly.
    """
    db = path.increments()
    outer = np.einsum("ki,kj->kij", db, db)
    d = path.dim
    qv = np.concatenate([np.zeros((1, d, d)), np.cumsum(outer, axis=0)])
    return MatrixPath(path.grid, qv)


def density_estimate(qv: MatrixPath, window: float) -> MatrixPath:
    """Backward difference quotient ``(<B>_t - <B>_{t-window}) / window``.

    Near the origin the window is truncated to ``t - t0``. The quadratic
    variation is linearly interpolated in time between grid nodes. At the
    origin itself the quotient over the first grid step is used.
    """
    if not window > 0:
        raise PathError("window must be positive")
    grid = qv.grid
    if grid.size < 2:
        raise PathError("density estimate needs at least two grid nodes")
    if window < np.min(np.diff(grid)) * (1 - 1e-9):
        raise PathError("window must span at least one grid step")
    t0 = grid[0]
    d = qv.dim
    flat = qv.values.reshape(grid.size, d * d)
    lag_times = np.maximum(grid - window, t0)
    lagged = np.column_stack([np.interp(lag_times, grid, flat[:, j]) for j in range(d * d)])
    span = grid - lag_times
    span[0] = grid[1] - t0
    lagged[0] = flat[0]
    num = flat.copy()
    num[0] = flat[1]
    dens = (num - lagged) / span[:, None]
    return MatrixPath(grid, dens.reshape(grid.size, d, d))


def _inv_sqrt(a: np.ndarray, node: int) -> np.ndarray:
    sym = 0.5 * (a + a.T)
    if not np.allclose(sym, a, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise PathError(f"density at node {node} is not symmetric")
    w, v = np.linalg.eigh(sym)
    if w.min() <= 0:
        raise PathError(f"density at node {node} is not positive definite (min eigenvalue {w.min():.3g})")
    return (v / np.sqrt(w)) @ v.T


def brownian_extract(path: SamplePath, density: MatrixPath) -> SamplePath:
    """Recover the driving Brownian motion as left sums of ``a^{-1/2} dB``."""
    _check_same_grid(path, density)
    if density.dim != path.dim:
        raise PathError("density dimension does not match path dimension")
    db = path.increments()
    dens = density.values
    out = np.zeros_like(path.values)
    d = path.dim
    if d == 1:
        a = dens[:-1, 0, 0]
        bad = np.flatnonzero(~(a > 0))
        if bad.size:
            raise PathError(f"density at node {bad[0]} is not positive definite ({a[bad[0]]!r})")
        out[1:, 0] = np.cumsum(db[:, 0] / np.sqrt(a))
    else:
        steps = np.empty_like(db)
        for k in range(db.shape[0]):
            steps[k] = _inv_sqrt(dens[k], k) @ db[k]
        out[1:] = np.cumsum(steps, axis=0)
    return SamplePath(path.grid, out)


def concat_shift(
    prefix: SamplePath,
    suffix: SamplePath,
    functional: Optional[Callable[[SamplePath], float]] = None,
):
    """Concatenate ``prefix`` on [0, t] with a zero-anchored ``suffix`` on [t, 1].

    Returns the concatenated path, and ``functional`` evaluated on it when a
    functional is given (the shifted functional evaluated at ``suffix``).
    """
    t = prefix.grid[-1]
    if suffix.grid[0] != t:
        raise PathError(f"suffix starts at {suffix.grid[0]!r} but prefix ends at {t!r}")
    if np.any(suffix.values[0] != 0.0):
        raise PathError("suffix must start at the zero vector")
    if suffix.dim != prefix.dim:
        raise PathError("prefix and suffix dimensions differ")
    grid = np.concatenate([prefix.grid, suffix.grid[1:]])
    tail = prefix.values[-1] + suffix.values[1:]
    values = np.concatenate([prefix.values, tail])
    joined = SamplePath(grid, values, anchored=not np.any(prefix.values[0]))
    if functional is None:
        return joined, None
    return joined, float(functional(joined))


def split(path: SamplePath, t: float):
    """Inverse of :func:`concat_shift`: the prefix on [t0, t] and the shifted suffix.

    ``t`` must be a grid node.
    """
    idx = np.flatnonzero(path.grid == t)
    if idx.size != 1:
        raise PathError(f"split time {t!r} is not a grid node")
    k = int(idx[0])
    prefix = SamplePath(path.grid[: k + 1], path.values[: k + 1])
    suffix = SamplePath(path.grid[k:], path.values[k:] - path.values[k])
    return prefix, suffix


def write_csv(path: SamplePath, dest) -> None:
    dest = Path(dest)
    with dest.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(path.dim)])
        for t, row in zip(path.grid, path.values):
            w.writerow([format(t, ".17g")] + [format(v, ".17g") for v in row])


def read_csv(src, anchored: bool = True) -> SamplePath:
    with Path(src).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[0] != "t":
            raise PathError("path CSV header must start with 't'")
        rows = [[float(v) for v in row] for row in r if row]
    arr = np.asarray(rows, dtype=float)
    return SamplePath(arr[:, 0], arr[:, 1:], anchored=anchored)


def scale(path: SamplePath, a) -> SamplePath:
    """Multiply every node by ``a^{1/2}`` for a constant SPD ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    w, v = np.linalg.eigh(a)
    root = (v * np.sqrt(w)) @ v.T
    return SamplePath(path.grid, path.values @ root.T)


def stack(paths: Sequence[SamplePath]) -> np.ndarray:
    return np.stack([p.values for p in paths])
