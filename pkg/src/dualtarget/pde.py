"""Explicit finite-difference oracles for the Hessian-nonlinear PDE.

The fully nonlinear equation is written through the conjugate,

    -u_t - sup_a { a u_xx / 2 - F(t, x, u, u_x, a) } = 0,   u(1, x) = g(x),

and marched backward with central differences:

    u_k = max_a [ u_{k+1} + dt (a D2 u_{k+1} / 2 - F(t, x, u_{k+1}, D1 u_{k+1}, a)) ].

Boundary nodes are filled by linear extrapolation. The semilinear equation
for a fixed ``a`` is the same march without the max.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .lattice import Lattice


class PdeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PdeSolution:
    x: np.ndarray
    times: np.ndarray
    u_field: np.ndarray  # (n_time + 1, n_space)
    u0: float
    a_grid: tuple = ()


def _a_grid(gen, a_grid: Optional[Sequence[float]]) -> np.ndarray:
    if a_grid is None:
        dom = gen.domain_F
        if dom.is_point:
            return np.array([dom.lo])
        if not dom.bounded:
            raise PdeError(f"D_F = {dom} is unbounded; pass an explicit a grid (or set a_max)")
        return np.linspace(dom.lo, dom.hi, 5)
    arr = np.asarray(a_grid, dtype=float).ravel()
    if arr.size == 0:
        raise PdeError("a grid is empty")
    keep = np.asarray(gen.in_domain_F(arr), dtype=bool)
    if not np.any(keep):
        raise PdeError(f"no point of the a grid lies in D_F = {gen.domain_F}")
    return arr[keep]


def _check_cfl(a_max: float, dt: float, dx: float) -> None:
    if a_max * dt / (dx * dx) > 1 + 1e-12:
        raise PdeError(
            f"CFL violated: a_max*dt/dx^2 = {a_max * dt / dx ** 2:.6g} > 1; need dt <= {dx * dx / a_max:.6g}"
        )


def _march(grid: Lattice, g_values: np.ndarray, gen, a_grid: np.ndarray) -> np.ndarray:
    x = grid.x
    dx = float(x[1] - x[0])
    times = grid.times
    n = times.size - 1
    u = np.empty((n + 1, x.size))
    u[n] = g_values
    for k in range(n - 1, -1, -1):
        dt = float(times[k + 1] - times[k])
        nxt = u[k + 1]
        d2 = (nxt[2:] - 2.0 * nxt[1:-1] + nxt[:-2]) / (dx * dx)
        d1 = (nxt[2:] - nxt[:-2]) / (2.0 * dx)
        xi = x[1:-1]
        best = None
        for a in a_grid:
            cand = nxt[1:-1] + dt * (0.5 * a * d2 - gen.F(times[k], xi, nxt[1:-1], d1, a))
            best = cand if best is None else np.maximum(best, cand)
        row = u[k]
        row[1:-1] = best
        row[0] = 2.0 * row[1] - row[2]
        row[-1] = 2.0 * row[-2] - row[-3]
    return u


def solve_fully_nonlinear(gen, payoff, grid: Lattice, a_grid: Optional[Sequence[float]] = None) -> PdeSolution:
    """Monotone explicit scheme for the fully nonlinear equation.

    ``a_grid`` discretizes ``D_F`` for the supremum; it defaults to the
    point itself for singleton domains and to 5 points on bounded intervals.
    """
    arr = _a_grid(gen, a_grid)
    _check_cfl(float(arr.max()), grid.dt, grid.dx)
    u = _march(grid, payoff.at_terminal(grid.x), gen, arr)
    return PdeSolution(grid.x, grid.times, u, float(np.interp(0.0, grid.x, u[0])), tuple(arr))


def solve_semilinear(a: float, gen, payoff, grid: Lattice) -> PdeSolution:
    """Same march for one fixed diffusion value ``a`` (no maximization)."""
    if not bool(gen.in_domain_F(a)):
        raise PdeError(f"a={a!r} lies outside D_F = {gen.domain_F}")
    _check_cfl(float(a), grid.dt, grid.dx)
    u = _march(grid, payoff.at_terminal(grid.x), gen, np.array([float(a)]))
    return PdeSolution(grid.x, grid.times, u, float(np.interp(0.0, grid.x, u[0])), (float(a),))


@dataclass(frozen=True)
class EnvelopeReport:
    max_violation: float  # max over a, interior nodes of (u^a - u)^+
    root_gap: float  # |u0 - max_a u^a_0|
    attained_by: float  # a whose slice gives the largest root value
    ok: bool


def envelope_check(u: PdeSolution, family: Sequence[PdeSolution], tol: float = 5e-3) -> EnvelopeReport:
    """Compare ``u`` against the semilinear slices ``u^a`` on a common grid.

    Boundary columns are extrapolated rather than solved, so the comparison
    runs over interior nodes only.
    """
    if not family:
        raise PdeError("empty family")
    violation = 0.0
    roots = []
    for ua in family:
        if ua.u_field.shape != u.u_field.shape:
            raise PdeError("envelope check needs a common grid")
        violation = max(violation, float(np.max(ua.u_field[:, 1:-1] - u.u_field[:, 1:-1])))
        roots.append(ua.u0)
    best = int(np.argmax(roots))
    gap = abs(u.u0 - roots[best])
    violation = max(violation, 0.0)
    return EnvelopeReport(violation, gap, family[best].a_grid[0], violation <= tol and gap <= tol)


def write_surface(sol: PdeSolution, dest) -> None:
    with Path(dest).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for k, t in enumerate(sol.times):
            ts = format(float(t), ".17g")
            for x, v in zip(sol.x, sol.u_field[k]):
                w.writerow([ts, format(float(x), ".17g"), format(float(v), ".17g")])
