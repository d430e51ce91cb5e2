"""Backward solvers for the BSDE under one fixed diffusion control.

On a tree or lattice a backward step reads

    Z_k = E[Y_{k+1} dB] / (a_k dt)
    Y_k = E[Y_{k+1}] - dt * F(t_k, x, proxy, Z_k, a_k)

with ``proxy = E[Y_{k+1}]`` (explicit) or ``proxy = Y_k`` solved by
fixed-point iteration (picard).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .lattice import DiffusionControl, Lattice, PathBundle, Tree

SCHEMES = ("explicit", "picard")


class BsdeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    y_field: tuple  # one array per time layer, terminal layer last
    z_field: tuple  # one array per layer k < n
    y0: float
    stderr: float = 0.0


def backward_step(model, k: int, v_next, a, gen, scheme: str = "explicit", picard_tol: float = 1e-12, max_iter: int = 10_000):
    """One step of the backward operator; returns ``(Y_k, Z_k)``.

    ``v_next`` may carry leading batch axes; ``a`` broadcasts against layer ``k``.
    """
    e = model.expect(k, v_next, a)
    z = model.zeta(k, v_next, a)
    t = float(model.times[k])
    x = model.state(k)
    dt = model.dt
    y = e - dt * gen.F(t, x, e, z, a)
    if scheme == "explicit":
        return y, z
    if scheme != "picard":
        raise BsdeError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if dt * gen.lipschitz_yz >= 1:
        raise BsdeError(
            f"picard iteration not contractive: dt*C = {dt * gen.lipschitz_yz:.3g} >= 1; use a smaller dt"
        )
    if not np.all(np.isfinite(y)):
        return y, z
    for _ in range(max_iter):
        y_new = e - dt * gen.F(t, x, y, z, a)
        if np.max(np.abs(y_new - y), initial=0.0) <= picard_tol:
            return y_new, z
        y = y_new
    raise BsdeError("picard iteration did not converge")


def _a_layers(model, control) -> list:
    if isinstance(control, DiffusionControl):
        if len(control.layers) != model.n_steps:
            raise BsdeError("control has the wrong number of layers for this model")
        return [control.a_layer(k) for k in range(model.n_steps)]
    a = float(control)
    return [np.full(model.layer_size(k), a) for k in range(model.n_steps)]


def backward_values(model, a_layers, gen, terminal, scheme: str = "explicit", picard_tol: float = 1e-12, keep: bool = False):
    """Run the backward recursion for (possibly batched) per-layer controls.

    ``a_layers[k]`` has shape ``(..., layer_size(k))``. Returns the root layer,
    or the full ``(y_layers, z_layers)`` when ``keep`` is set.
    """
    v = np.asarray(terminal, dtype=float)
    ys, zs = [v], []
    for k in range(model.n_steps - 1, -1, -1):
        v, z = backward_step(model, k, v, a_layers[k], gen, scheme, picard_tol)
        if keep:
            ys.append(v)
            zs.append(z)
    if keep:
        return ys[::-1], zs[::-1]
    return v


def solve_tree(model: Union[Tree, Lattice], control, gen, payoff, scheme: str = "explicit", picard_tol: float = 1e-12) -> BsdeSolution:
    """Exact backward induction on a tree or lattice under ``control``.

    ``control`` is a :class:`DiffusionControl` or a constant diffusion value.
    """
    a_layers = _a_layers(model, control)
    for k, a in enumerate(a_layers):
        bad = ~np.asarray(gen.in_domain_F(a))
        if np.any(bad):
            raise BsdeError(
                f"control value a={float(np.asarray(a)[bad][0])!r} at layer {k} lies outside D_F = {gen.domain_F}"
            )
    if scheme not in SCHEMES:
        raise BsdeError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    ys, zs = backward_values(model, a_layers, gen, model.terminal_values(payoff), scheme, picard_tol, keep=True)
    return BsdeSolution(tuple(ys), tuple(zs), model.root(ys[0]))


def _basis(x: np.ndarray, degree: int) -> np.ndarray:
    s = x.std()
    u = (x - x.mean()) / s if s > 0 else np.zeros_like(x)
    return np.vander(u, degree + 1, increasing=True)


def _project(x: np.ndarray, targets: np.ndarray, degree: int):
    """Least-squares projection of each column of ``targets`` on polynomials of ``x``."""
    if x.std() == 0:
        return np.broadcast_to(targets.mean(axis=0), targets.shape).copy(), 0
    deg = degree
    while True:
        basis = _basis(x, deg)
        rank = np.linalg.matrix_rank(basis)
        if rank == deg + 1 or deg == 0:
            break
        warnings.warn(f"regression basis rank deficient at degree {deg}; reducing degree", RuntimeWarning)
        deg -= 1
    coef, *_ = np.linalg.lstsq(basis, targets, rcond=None)
    return basis @ coef, deg


@dataclass(frozen=True, eq=False)
class RegressionSolution:
    y_paths: np.ndarray  # (n_paths, n_nodes)
    z_paths: np.ndarray  # (n_paths, n_steps)
    y0: float
    stderr: float
    degree_used: int


def solve_regression_mc(bundle: PathBundle, gen, payoff, basis_degree: int = 3) -> RegressionSolution:
    """Backward least-squares Monte Carlo on sampled paths (Markov in the state).

    Conditional expectations are projections on monomials of the current state.
    ``y0`` is the mean at the root, reported with the standard error of the
    values being averaged there.
    """
    if len(bundle) < 1000:
        raise BsdeError("regression Monte Carlo needs at least 1000 paths")
    if basis_degree < 1:
        raise BsdeError("basis degree must be at least 1")
    x = bundle.values
    n_paths, n_nodes = x.shape
    n_steps = n_nodes - 1
    dts = bundle.dt
    y = np.empty((n_paths, n_nodes))
    zf = np.empty((n_paths, n_steps))
    y[:, -1] = payoff.on_paths(x)
    deg_used = basis_degree
    stderr = 0.0
    for k in range(n_steps - 1, -1, -1):
        xk = x[:, k]
        dx = x[:, k + 1] - xk
        ak = bundle.a[:, k]
        if np.any(~np.asarray(gen.in_domain_F(ak))):
            raise BsdeError(f"realized diffusion at step {k} lies outside D_F = {gen.domain_F}")
        nxt = y[:, k + 1]
        fitted, deg = _project(xk, nxt[:, None], basis_degree)
        deg_used = min(deg_used, deg) if deg else deg_used
        e = fitted[:, 0]
        # centred target: constants and deterministic parts contribute no Z noise
        cov, _ = _project(xk, ((nxt - e) * dx)[:, None], basis_degree)
        z = cov[:, 0] / (ak * dts[k])
        zf[:, k] = z
        y[:, k] = e - dts[k] * gen.F(bundle.grid[k], xk, e, z, ak)
        if k == 0:
            stderr = float(nxt.std(ddof=1) / np.sqrt(n_paths))
    return RegressionSolution(y, zf, float(y[:, 0].mean()), stderr, deg_used)
