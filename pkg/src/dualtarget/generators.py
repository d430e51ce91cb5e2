"""Hessian nonlinearities H and their conjugates F in the diffusion variable.

For a nonlinearity ``H(t, x, y, z, gamma)`` defined on a domain ``D_H`` of
gammas, the conjugate is

    F(t, x, y, z, a) = sup_{gamma in D_H} { a * gamma / 2 - H(t, x, y, z, gamma) }

and ``D_F`` is the set of ``a`` where it is finite. The lattice and PDE
machinery is one-dimensional, so ``a``, ``z`` and ``gamma`` are scalars
here (1x1 arrays are accepted and flattened).

``+inf`` is carried as an explicit extended-real value (``math.inf``), never
as a large finite float, so that domain filtering is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

INF = math.inf

# relative tolerance for membership in degenerate (single point) domains
_POINT_RTOL = 1e-12


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lo: float = -INF
    hi: float = INF
    lo_closed: bool = True
    hi_closed: bool = True

    def __post_init__(self):
        if self.lo > self.hi:
            raise GeneratorError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, v: float) -> "Interval":
        return cls(v, v)

    @property
    def is_point(self) -> bool:
        return self.lo == self.hi

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def contains(self, v):
        v = np.asarray(v, dtype=float)
        if self.is_point:
            return np.abs(v - self.lo) <= _POINT_RTOL * max(1.0, abs(self.lo))
        lo_ok = v >= self.lo if self.lo_closed else v > self.lo
        hi_ok = v <= self.hi if self.hi_closed else v < self.hi
        return lo_ok & hi_ok

    def __str__(self) -> str:
        if self.is_point:
            return f"{{{self.lo:g}}}"
        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{left}{self.lo:g}, {self.hi:g}{right}"


def _scalar(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2 and a.shape == (1, 1):
        return a[0, 0]
    return a


def _zero_modulus(delta: float) -> float:
    return 0.0


@dataclass(frozen=True)
class Generator:
    """A nonlinearity together with its conjugate.

    ``H`` and ``closed_F`` are vectorized callables ``(t, x, y, z, gamma_or_a)``.
    When ``closed_F`` is missing the conjugate is computed on ``gamma_grid``.
    ``closed_argmax`` returns the smallest-norm exact maximizer when known.
    """

    name: str
    H: Callable
    domain_H: Interval
    domain_F: Interval
    lipschitz_yz: float = 0.0
    lipschitz_z_scaled: float = 0.0
    modulus: Callable[[float], float] = _zero_modulus
    closed_F: Optional[Callable] = None
    closed_argmax: Optional[Callable] = None
    gamma_grid: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.domain_H.contains(0.0):
            raise GeneratorError("domain of H must contain 0")
        if self.closed_F is None and self.gamma_grid is None:
            raise GeneratorError(f"generator {self.name!r} needs either a closed-form F or a gamma grid")

    def in_domain_F(self, a):
        return self.domain_F.contains(_scalar(a))

    def F(self, t, x, y, z, a):
        """Conjugate value; ``+inf`` wherever ``a`` is outside ``D_F``."""
        a = _scalar(a)
        inside = self.domain_F.contains(a)
        if self.closed_F is not None:
            val = self.closed_F(t, x, y, z, a)
        else:
            val = _grid_conjugate(self, self.gamma_grid, t, x, y, z, a)
        val = np.asarray(val, dtype=float)
        shape = np.broadcast_shapes(np.shape(val), np.shape(inside))
        out = np.where(np.broadcast_to(inside, shape), np.broadcast_to(val, shape), INF)
        return out[()] if out.ndim == 0 else out

    def Hval(self, t, x, y, z, gamma):
        gamma = _scalar(gamma)
        val = np.asarray(self.H(t, x, y, z, gamma), dtype=float)
        inside = self.domain_H.contains(gamma)
        shape = np.broadcast_shapes(val.shape, np.shape(inside))
        out = np.where(np.broadcast_to(inside, shape), np.broadcast_to(val, shape), INF)
        return out[()] if out.ndim == 0 else out


def _grid_conjugate(gen: Generator, grid, t, x, y, z, a):
    grid = np.asarray(grid, dtype=float)
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    g = grid.reshape((1,) * max(a.ndim, y.ndim, z.ndim, x.ndim) + (-1,))
    obj = 0.5 * a[..., None] * g - gen.H(t, x[..., None], y[..., None], z[..., None], g)
    return np.max(obj, axis=-1)


def conjugate(gen: Generator, a, y, z, gamma_grid, t: float = 0.0, x: float = 0.0) -> float:
    """Maximize ``a*gamma/2 - H`` over a finite gamma grid.

    Returns ``+inf`` when ``a`` lies outside the generator's ``D_F``.
    """
    grid = np.asarray(gamma_grid, dtype=float).ravel()
    if grid.size == 0:
        raise GeneratorError("gamma grid is empty")
    outside = ~gen.domain_H.contains(grid)
    if np.any(outside):
        raise GeneratorError(f"gamma grid point {grid[outside][0]!r} lies outside D_H = {gen.domain_H}")
    a = float(_scalar(a))
    if not bool(gen.in_domain_F(a)):
        return INF
    vals = 0.5 * a * grid - np.asarray(gen.H(t, x, y, z, grid), dtype=float)
    return float(np.max(vals))


def evaluate_hatF(gen: Generator, t, x, y, z, a):
    """``F`` with the realized diffusion density ``a`` plugged in."""
    return gen.F(t, x, y, z, a)


class EpsMaximizer(NamedTuple):
    gamma: float
    objective: float
    conjugate: float
    bound_ratio: float  # |gamma| / (1 + |y| + |z|)


def _grid_argmax(gen: Generator, t, x, y, z, a):
    grid = np.asarray(gen.gamma_grid, dtype=float)
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    lead = np.broadcast_shapes(a.shape, y.shape, z.shape, x.shape)
    obj = 0.5 * a[..., None] * grid - gen.H(t, x[..., None], y[..., None], z[..., None], grid)
    obj = np.broadcast_to(obj, lead + grid.shape)
    best = obj.max(axis=-1, keepdims=True)
    ties = obj >= best - 1e-12 * np.maximum(1.0, np.abs(best))
    norms = np.where(ties, np.abs(grid), INF)
    idx = np.argmin(norms, axis=-1)
    return grid[idx]


def maximizer_array(gen: Generator, t, x, y, z, a):
    """Vectorized smallest-norm maximizer of ``a*gamma/2 - H`` (closed form or grid)."""
    if gen.closed_argmax is not None:
        return np.asarray(gen.closed_argmax(t, x, y, z, _scalar(a)), dtype=float)
    return _grid_argmax(gen, t, x, y, z, _scalar(a))


def eps_maximizer(gen: Generator, a, y, z, eps: float, t: float = 0.0, x: float = 0.0) -> EpsMaximizer:
    """A gamma in ``D_H`` whose objective is within ``eps`` of ``F(a)``.

    Ties are broken toward the smallest ``|gamma|``.
    """
    if not eps > 0:
        raise GeneratorError("eps must be positive")
    a = float(_scalar(a))
    if not bool(gen.in_domain_F(a)):
        raise GeneratorError(f"conjugate infinite: a={a!r} is outside D_F = {gen.domain_F}")
    gamma = float(maximizer_array(gen, t, x, y, z, a))
    objective = 0.5 * a * gamma - float(gen.Hval(t, x, y, z, gamma))
    fval = float(gen.F(t, x, y, z, a))
    if objective < fval - eps:
        raise GeneratorError(
            f"no eps-maximizer found: best objective {objective!r} vs F={fval!r}; refine the gamma grid"
        )
    znorm = float(np.linalg.norm(np.ravel(np.asarray(z, dtype=float))))
    ratio = abs(gamma) / (1.0 + abs(float(y)) + znorm)
    return EpsMaximizer(gamma, objective, fval, ratio)


# ---------------------------------------------------------------------------
# built-in generators


def linear(r: float = 0.0, sigma: float = 1.0) -> Generator:
    """Constant-volatility generator: ``D_F`` is the single point ``sigma**2``.

    Parameterized so that ``F(y, z, sigma**2) = r * y``, i.e.
    ``H = -r*y + sigma**2 * gamma / 2``.
    """
    s2 = float(sigma) ** 2

    def H(t, x, y, z, g):
        return -r * np.asarray(y, dtype=float) + 0.5 * s2 * np.asarray(g, dtype=float)

    def F(t, x, y, z, a):
        return r * np.asarray(y, dtype=float) + 0.0 * np.asarray(a, dtype=float)

    def argmax(t, x, y, z, a):
        return np.zeros(np.broadcast_shapes(np.shape(y), np.shape(z), np.shape(a)))

    return Generator(
        name="linear",
        H=H,
        domain_H=Interval(),
        domain_F=Interval.point(s2),
        lipschitz_yz=abs(r),
        lipschitz_z_scaled=0.0,
        closed_F=F,
        closed_argmax=argmax,
        params={"r": r, "sigma": sigma},
    )


def uvm(sig_lo: float = 1.0, sig_hi: float = 2.0) -> Generator:
    """Uncertain volatility: ``H = (sig_hi^2 gamma^+ - sig_lo^2 gamma^-) / 2``.

    ``F`` vanishes on ``[sig_lo^2, sig_hi^2]`` and is infinite elsewhere.
    """
    if not sig_hi > sig_lo >= 0:
        raise GeneratorError("uvm needs sig_hi > sig_lo >= 0")
    lo2, hi2 = float(sig_lo) ** 2, float(sig_hi) ** 2

    def H(t, x, y, z, g):
        g = np.asarray(g, dtype=float)
        return 0.5 * (hi2 * np.maximum(g, 0.0) - lo2 * np.maximum(-g, 0.0))

    def F(t, x, y, z, a):
        return np.zeros(np.broadcast_shapes(np.shape(y), np.shape(z), np.shape(a), np.shape(x)))

    def argmax(t, x, y, z, a):
        return np.zeros(np.broadcast_shapes(np.shape(y), np.shape(z), np.shape(a)))

    return Generator(
        name="uvm",
        H=H,
        domain_H=Interval(),
        domain_F=Interval(lo2, hi2),
        closed_F=F,
        closed_argmax=argmax,
        params={"sig_lo": sig_lo, "sig_hi": sig_hi},
    )


def gamma_band(sigma: float = 1.0, gam_lo: float = 1.0, gam_hi: float = 1.0) -> Generator:
    """Superhedging under a gamma constraint ``-gam_lo <= gamma <= gam_hi``.

    ``H = sigma^2 gamma / 2`` inside the band, ``+inf`` outside, which gives
    ``F(a) = (gam_hi (a - sigma^2)^+ + gam_lo (a - sigma^2)^-) / 2`` on ``a >= 0``.
    """
    if gam_lo < 0 or gam_hi < 0:
        raise GeneratorError("gamma bounds must be nonnegative")
    s2 = float(sigma) ** 2

    def H(t, x, y, z, g):
        return 0.5 * s2 * np.asarray(g, dtype=float)

    def F(t, x, y, z, a):
        a = np.asarray(a, dtype=float)
        val = 0.5 * (gam_hi * np.maximum(a - s2, 0.0) + gam_lo * np.maximum(s2 - a, 0.0))
        return val + np.zeros(np.broadcast_shapes(np.shape(y), np.shape(z), np.shape(x)))

    def argmax(t, x, y, z, a):
        a = np.asarray(a, dtype=float)
        g = np.where(a > s2, gam_hi, np.where(a < s2, -gam_lo, 0.0))
        return g + np.zeros(np.broadcast_shapes(np.shape(y), np.shape(z)))

    return Generator(
        name="gamma_band",
        H=H,
        domain_H=Interval(-gam_lo, gam_hi),
        domain_F=Interval(0.0, INF),
        closed_F=F,
        closed_argmax=argmax,
        params={"sigma": sigma, "gam_lo": gam_lo, "gam_hi": gam_hi},
    )


def quadratic_H(q: float = 1.0, r: float = 0.0):
    """``H = q gamma^2 / 2 - r y``; conjugate ``a^2 / (8 q) + r y`` on ``a >= 0``."""

    def H(t, x, y, z, g):
        return 0.5 * q * np.asarray(g, dtype=float) ** 2 - r * np.asarray(y, dtype=float)

    def F(t, x, y, z, a):
        return np.asarray(a, dtype=float) ** 2 / (8.0 * q) + r * np.asarray(y, dtype=float)

    return H, F


def custom(
    H: Callable,
    gamma_min: float,
    gamma_max: float,
    n_gamma: int = 2001,
    domain_F: Interval = Interval(0.0, INF),
    lipschitz_yz: float = 0.0,
    lipschitz_z_scaled: float = 0.0,
    closed_F: Optional[Callable] = None,
    domain_H: Optional[Interval] = None,
    name: str = "custom",
) -> Generator:
    """User nonlinearity with a numerical conjugate on a uniform gamma grid.

    Passing ``closed_F`` keeps the grid for maximizer recovery only.
    """
    if n_gamma < 1 or not gamma_max >= gamma_min:
        raise GeneratorError("custom generator needs gamma_max >= gamma_min and n_gamma >= 1")
    grid = np.linspace(gamma_min, gamma_max, n_gamma)
    if domain_H is None:
        domain_H = Interval(gamma_min, gamma_max)
    return Generator(
        name=name,
        H=H,
        domain_H=domain_H,
        domain_F=domain_F,
        lipschitz_yz=lipschitz_yz,
        lipschitz_z_scaled=lipschitz_z_scaled,
        closed_F=closed_F,
        gamma_grid=grid,
        params={"gamma_min": gamma_min, "gamma_max": gamma_max, "n_gamma": n_gamma},
    )


BUILTINS = {"linear": linear, "uvm": uvm, "gamma_band": gamma_band}
