"""Forward (primal) side: hedged wealth simulation and superhedging reports.

Hedge ratios come from differentiating a dual value field on its lattice.
Three wealth dynamics are available on sampled paths:

* ``primal``   dY = (a Gamma / 2 - H(Y, Z, Gamma)) dt + Z dX, Gamma = D2 V
* ``relaxed``  same, with Gamma chosen as the smallest-norm maximizer of
               ``a gamma / 2 - H`` at the realized ``a``
* ``further``  dY = F(Y, Z, a) dt + Z dX (no Gamma at all)

Quasi-sure statements are checked on a finite family of controls: a claim
passes only if it passes on every sampled path of every family member.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dual import ValueField
from .generators import maximizer_array
from .lattice import Lattice, PathBundle, control_label, sample_control_paths
from .paths import SamplePath

MODES = ("primal", "relaxed", "further")


class PrimalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HedgeFields:
    """Hedge ratio ``z`` and gamma per lattice node, for the step ``k -> k+1``.

    Layer ``k`` is differentiated from ``V_{k+1}`` so the hedge over a step
    matches the backward step that produced ``V_k``.
    """

    lattice: Lattice
    z_field: np.ndarray  # (n_time, n_space)
    gamma_field: np.ndarray  # (n_time, n_space)

    @classmethod
    def from_value_field(cls, vf: ValueField) -> "HedgeFields":
        lat = vf.model
        if not isinstance(lat, Lattice):
            raise PrimalError("hedge fields need a lattice value field")
        dx = lat.dx
        nxt = np.stack(vf.v_field[1:])
        z = np.empty_like(nxt)
        g = np.empty_like(nxt)
        z[:, 1:-1] = (nxt[:, 2:] - nxt[:, :-2]) / (2.0 * dx)
        g[:, 1:-1] = (nxt[:, 2:] - 2.0 * nxt[:, 1:-1] + nxt[:, :-2]) / (dx * dx)
        z[:, 0], z[:, -1] = z[:, 1], z[:, -2]
        g[:, 0], g[:, -1] = g[:, 1], g[:, -2]
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(g))):
            raise PrimalError("hedge fields are not finite")
        return cls(lat, z, g)

    @classmethod
    def zero(cls, lattice: Lattice) -> "HedgeFields":
        shape = (lattice.n_steps, lattice.n_space)
        return cls(lattice, np.zeros(shape), np.zeros(shape))

    def at(self, k: int, xs: np.ndarray):
        """Linear interpolation of (z, gamma) at states ``xs``; also returns the clamp mask."""
        x = self.lattice.x
        out = (xs < x[0]) | (xs > x[-1])
        return np.interp(xs, x, self.z_field[k]), np.interp(xs, x, self.gamma_field[k]), out


@dataclass(frozen=True, eq=False)
class ForwardResult:
    y: np.ndarray  # (n_paths, n_nodes)
    clamped: int

    @property
    def y1(self) -> np.ndarray:
        return self.y[:, -1]


@dataclass(frozen=True, eq=False)
class PathHedge:
    """Hedge fields interpolated along every path of a bundle."""

    z: np.ndarray  # (n_paths, n_steps)
    gamma: np.ndarray
    clamped: int


def hedge_along(hedge: HedgeFields, bundle: PathBundle) -> PathHedge:
    lat = hedge.lattice
    n_steps = bundle.values.shape[1] - 1
    if n_steps != lat.n_steps:
        raise PrimalError(f"paths have {n_steps} steps but the hedge lattice has {lat.n_steps}")
    z = np.empty((len(bundle), n_steps))
    g = np.empty_like(z)
    clamped = np.zeros(len(bundle), dtype=bool)
    for k in range(n_steps):
        z[:, k], g[:, k], out = hedge.at(k, bundle.values[:, k])
        clamped |= out
    return PathHedge(z, g, int(clamped.sum()))


def forward_state(
    y0: float,
    hedge: HedgeFields,
    gen,
    bundle: PathBundle,
    mode: str = "primal",
    kink_layers: int = 2,
    along: Optional[PathHedge] = None,
    eps: Optional[float] = None,
) -> ForwardResult:
    """Euler simulation of the hedged wealth along every path in ``bundle``.

    In ``primal`` mode the last ``kink_layers`` steps switch to the
    ``further`` dynamics, since gamma of a kinked payoff blows up at maturity.
    Paths leaving the lattice use the boundary hedge and are counted.
    With ``eps`` set, ``relaxed`` mode checks that every chosen gamma is an
    ``eps``-maximizer of ``a gamma / 2 - H`` and raises otherwise.
    """
    if mode not in MODES:
        raise PrimalError(f"unknown mode {mode!r}; expected one of {MODES}")
    if along is None:
        along = hedge_along(hedge, bundle)
    x = bundle.values
    n_steps = x.shape[1] - 1
    y = np.empty_like(x)
    y[:, 0] = y0
    dts = bundle.dt
    dom = gen.domain_H
    for k in range(n_steps):
        t = float(bundle.grid[k])
        xk = x[:, k]
        ak = bundle.a[:, k]
        dxk = x[:, k + 1] - xk
        z, gam = along.z[:, k], along.gamma[:, k]
        yk = y[:, k]
        if mode == "further" or (mode == "primal" and k >= n_steps - kink_layers):
            drift = gen.F(t, xk, yk, z, ak)
        else:
            if mode == "primal":
                gam = np.clip(gam, dom.lo, dom.hi)
            else:
                gam = maximizer_array(gen, t, xk, yk, z, ak)
            drift = 0.5 * ak * gam - gen.Hval(t, xk, yk, z, gam)
            if eps is not None and mode == "relaxed":
                short = gen.F(t, xk, yk, z, ak) - drift
                if np.max(short) > eps:
                    raise PrimalError(f"gamma at step {k} misses the conjugate by {np.max(short):.3g} > eps={eps:g}")
        y[:, k + 1] = yk + drift * dts[k] + z * dxk
    return ForwardResult(y, along.clamped)


@dataclass(frozen=True)
class ControlRow:
    control_id: str
    pass_fraction: float
    min_gap: float
    p05_gap: float


@dataclass(frozen=True)
class SuperhedgeReport:
    rows: tuple
    overall: float  # min pass fraction over the family
    mixture: float  # pass fraction under the 2^-i mixture of family members
    threshold: float
    tol: float
    clamped: int

    @property
    def passed(self) -> bool:
        return self.overall >= self.threshold


def default_tol(lattice: Lattice) -> float:
    return 2.0 * (lattice.dx + math.sqrt(lattice.dt))


def sample_family(family: Sequence, n_paths: int, n_steps: int, seed: int) -> list:
    return [sample_control_paths(c, n_paths, n_steps, seed, stream=i) for i, c in enumerate(family)]


def superhedge_report(
    y0: float,
    hedge: HedgeFields,
    gen,
    payoff,
    family: Sequence,
    n_paths: int = 10_000,
    seed: int = 0,
    tol: Optional[float] = None,
    mode: str = "primal",
    threshold: float = 0.99,
    bundles: Optional[Sequence[PathBundle]] = None,
    alongs: Optional[Sequence[PathHedge]] = None,
) -> SuperhedgeReport:
    """Fraction of paths with ``Y_1 >= xi - tol`` under each family member."""
    if not family:
        raise PrimalError("measure family is empty")
    if tol is None:
        tol = default_tol(hedge.lattice)
    if bundles is None:
        bundles = sample_family(family, n_paths, hedge.lattice.n_steps, seed)
    if alongs is None:
        alongs = [hedge_along(hedge, b) for b in bundles]
    rows = []
    clamped = 0
    for c, bundle, along in zip(family, bundles, alongs):
        res = forward_state(y0, hedge, gen, bundle, mode, along=along)
        clamped += res.clamped
        gap = res.y1 - payoff.on_paths(bundle.values)
        rows.append(
            ControlRow(
                control_label(c),
                float(np.mean(gap >= -tol)),
                float(gap.min()),
                float(np.quantile(gap, 0.05)),
            )
        )
    fracs = np.array([r.pass_fraction for r in rows])
    w = 2.0 ** -np.arange(1, len(rows) + 1)
    w /= w.sum()
    return SuperhedgeReport(tuple(rows), float(fracs.min()), float(w @ fracs), threshold, tol, clamped)


def minimal_superhedge_price(
    hedge: HedgeFields,
    gen,
    payoff,
    family: Sequence,
    lo: float,
    hi: float,
    n_paths: int = 10_000,
    seed: int = 0,
    tol: Optional[float] = None,
    mode: str = "primal",
    threshold: float = 0.99,
    iters: int = 30,
    xtol: float = 1e-5,
) -> float:
    """Bisection for the smallest ``y0`` whose report passes; paths are sampled once."""
    bundles = sample_family(family, n_paths, hedge.lattice.n_steps, seed)
    alongs = [hedge_along(hedge, b) for b in bundles]

    def ok(y):
        return superhedge_report(y, hedge, gen, payoff, family, n_paths, seed, tol, mode, threshold, bundles, alongs).passed

    if ok(lo):
        raise PrimalError(f"lower bracket {lo!r} already superhedges")
    if not ok(hi):
        raise PrimalError(f"upper bracket {hi!r} does not superhedge")
    for _ in range(iters):
        if hi - lo <= xtol:
            break
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def write_superhedge_report(report: SuperhedgeReport, dest) -> None:
    with Path(dest).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["control_id", "pass_fraction", "min_gap", "p05_gap"])
        for r in report.rows:
            w.writerow([r.control_id, format(r.pass_fraction, ".17g"), format(r.min_gap, ".17g"), format(r.p05_gap, ".17g")])


# ---------------------------------------------------------------------------
# finite-variation approximation of an integrand


@dataclass(frozen=True, eq=False)
class BankBaumResult:
    approx: SamplePath
    deviation: float
    total_variation: float


def moving_average(z_path: SamplePath, n: float) -> SamplePath:
    """``n * int_{t-1/n}^t Z ds`` with ``Z = 0`` before the start, ``Z`` piecewise constant from the left."""
    if not n >= 1:
        raise PrimalError("smoothing level must be >= 1")
    grid = z_path.grid
    z = z_path.values
    steps = np.diff(grid)[:, None] * z[:-1]
    cum = np.concatenate([np.zeros((1, z.shape[1])), np.cumsum(steps, axis=0)])
    lag = grid - 1.0 / n
    # cum is exactly piecewise linear in t, so interpolation is exact
    lagged = np.column_stack([np.interp(lag, grid, cum[:, j], left=0.0) for j in range(z.shape[1])])
    return SamplePath(grid, n * (cum - lagged), anchored=False)


def controlled_state(z_path: SamplePath, driver: SamplePath, h: Optional[Callable] = None, x0: float = 0.0) -> np.ndarray:
    """Euler solution of ``dX = h(t, X, Z) dt + Z dB`` with left-point sums."""
    grid = driver.grid
    z = z_path.values
    db = driver.increments()
    dts = np.diff(grid)
    x = np.empty(grid.size)
    x[0] = x0
    if h is None:
        x[1:] = x0 + np.cumsum(np.einsum("kd,kd->k", z[:-1], db))
        return x
    for k in range(grid.size - 1):
        x[k + 1] = x[k] + float(h(grid[k], x[k], z[k])) * dts[k] + float(z[k] @ db[k])
    return x


def bank_baum_approx(z_path: SamplePath, driver: SamplePath, n: float, h: Optional[Callable] = None, x0: float = 0.0) -> BankBaumResult:
    """Moving-average integrand and the sup distance between the two controlled states."""
    if z_path.grid.shape != driver.grid.shape or np.any(z_path.grid != driver.grid):
        raise PrimalError("integrand and driver must share a grid")
    approx = moving_average(z_path, n)
    x_ref = controlled_state(z_path, driver, h, x0)
    x_app = controlled_state(approx, driver, h, x0)
    tv = float(np.sum(np.abs(np.diff(approx.values, axis=0))))
    return BankBaumResult(approx, float(np.max(np.abs(x_app - x_ref))), tv)
