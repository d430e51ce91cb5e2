"""Discrete carriers for the family of diffusion-control measures.

Two models share one interface (``n_steps``, ``times``, ``state(k)``,
``expect``, ``zeta``):

* :class:`Lattice` -- recombining trinomial grid with feedback controls.
* :class:`Tree` -- non-recombining tree whose nodes are whole path prefixes,
  so an assignment of controls to nodes is an arbitrary adapted control.

The canonical process is the same under every control; a control only
changes the transition probabilities (mean 0, variance ``a * dt``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .paths import SamplePath


class LatticeError(ValueError):
    pass


_CFL_SLACK = 1e-12


@dataclass(frozen=True)
class ControlClass:
    """Finite set of diffusion values with switching times.

    ``switch_times=None`` means switching is allowed at every step of
    whatever grid the class is used on.
    """

    A0: tuple
    switch_times: Optional[tuple] = None
    a_lo: Optional[float] = None
    a_hi: Optional[float] = None
    mix_weights: Optional[tuple] = None

    def __post_init__(self):
        A0 = tuple(float(a) for a in self.A0)
        if not A0:
            raise LatticeError("A0 must contain at least one diffusion value")
        if any(not (a > 0 and math.isfinite(a)) for a in A0):
            raise LatticeError(f"A0 values must be positive and finite, got {A0}")
        object.__setattr__(self, "A0", A0)
        lo = min(A0) if self.a_lo is None else float(self.a_lo)
        hi = max(A0) if self.a_hi is None else float(self.a_hi)
        if any(a < lo or a > hi for a in A0):
            raise LatticeError(f"A0 values must lie within [{lo}, {hi}]")
        object.__setattr__(self, "a_lo", lo)
        object.__setattr__(self, "a_hi", hi)
        if self.switch_times is not None:
            ts = tuple(sorted(float(t) for t in self.switch_times))
            if ts[0] != 0.0 or ts[-1] != 1.0 or any(t < 0 or t > 1 for t in ts):
                raise LatticeError("switching times must lie in [0, 1] and contain 0 and 1")
            object.__setattr__(self, "switch_times", ts)
        if self.mix_weights is None:
            w = np.array([2.0 ** -(i + 1) for i in range(len(A0))])
            w = w / w.sum()
        else:
            w = np.asarray(self.mix_weights, dtype=float)
            if w.shape != (len(A0),) or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
                raise LatticeError("mix_weights must be positive, one per A0 value, summing to 1")
        object.__setattr__(self, "mix_weights", tuple(float(v) for v in w))

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.A0)

    def admissible(self, gen) -> list:
        """Indices of A0 values inside the generator's ``D_F``."""
        return [i for i, a in enumerate(self.A0) if bool(gen.in_domain_F(a))]

    def switch_allowed(self, t: float, tol: float = 1e-12) -> bool:
        if self.switch_times is None:
            return True
        return any(abs(t - s) <= tol for s in self.switch_times)


def trinomial_probs(a, dt: float, dx: float):
    """``(p_down, p_mid, p_up)`` with mean 0 and variance ``a * dt`` exactly."""
    a = np.asarray(a, dtype=float)
    ratio = a * dt / (dx * dx)
    if np.any(ratio > 1 + _CFL_SLACK):
        amax = float(np.max(a))
        raise LatticeError(
            f"CFL violated: a*dt/dx^2 = {float(np.max(ratio)):.6g} > 1; "
            f"largest admissible dt for a={amax:g} is {dx * dx / amax:.6g}"
        )
    p = 0.5 * ratio
    return p, 1.0 - 2.0 * p, p


@dataclass(frozen=True, eq=False)
class Lattice:
    """Recombining trinomial lattice on a uniform space-time grid."""

    x: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        for arr in (self.x, self.times):
            arr.setflags(write=False)

    @classmethod
    def build(cls, x_min: float, x_max: float, n_space: int, n_time: int, control_class: Optional[ControlClass] = None):
        if n_space < 3:
            raise LatticeError("n_space must be at least 3")
        if n_time < 1:
            raise LatticeError("n_time must be at least 1")
        if not x_max > x_min:
            raise LatticeError("x_max must exceed x_min")
        lat = cls(np.linspace(x_min, x_max, n_space), np.linspace(0.0, 1.0, n_time + 1))
        if control_class is not None:
            trinomial_probs(max(control_class.A0), lat.dt, lat.dx)
        return lat

    @classmethod
    def cfl_tied(cls, a_max: float, n_space: int, n_time: int, ratio: float = 1.0):
        """Lattice centred at 0 with ``a_max * dt / dx^2 = ratio``."""
        if not 0 < ratio <= 1:
            raise LatticeError("CFL ratio must lie in (0, 1]")
        if n_space < 3 or n_space % 2 == 0:
            raise LatticeError("a centred lattice needs an odd n_space >= 3")
        if n_time < 1:
            raise LatticeError("n_time must be at least 1")
        dx = math.sqrt(a_max / n_time / ratio)
        half = (n_space - 1) // 2
        return cls(dx * np.arange(-half, half + 1, dtype=float), np.linspace(0.0, 1.0, n_time + 1))

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def n_space(self) -> int:
        return self.x.size

    def layer_size(self, k: int) -> int:
        return self.x.size

    def state(self, k: int) -> np.ndarray:
        return self.x

    def terminal_values(self, payoff) -> np.ndarray:
        return payoff.at_terminal(self.x)

    def probs(self, a):
        return trinomial_probs(a, self.dt, self.dx)

    def expect(self, k: int, v_next: np.ndarray, a) -> np.ndarray:
        """One-step expectation; boundary nodes use a frozen stencil."""
        a = np.asarray(a, dtype=float)
        shape = np.broadcast_shapes(v_next.shape, a.shape)
        v_next = np.broadcast_to(v_next, shape)
        p, q, _ = self.probs(np.broadcast_to(a, shape)[..., 1:-1])
        out = np.empty(shape)
        out[..., 1:-1] = p * (v_next[..., 2:] + v_next[..., :-2]) + q * v_next[..., 1:-1]
        out[..., 0] = v_next[..., 0]
        out[..., -1] = v_next[..., -1]
        return out

    def zeta(self, k: int, v_next: np.ndarray, a) -> np.ndarray:
        """``E[V dB] / (a dt)``; for the trinomial stencil this is the central difference."""
        dx = self.dx
        out = np.empty_like(v_next)
        out[..., 1:-1] = (v_next[..., 2:] - v_next[..., :-2]) / (2.0 * dx)
        out[..., 0] = (v_next[..., 1] - v_next[..., 0]) / dx
        out[..., -1] = (v_next[..., -1] - v_next[..., -2]) / dx
        return out

    def root(self, layer0: np.ndarray) -> float:
        return float(np.interp(0.0, self.x, layer0))

    def node_index(self, xs) -> np.ndarray:
        idx = np.rint((np.asarray(xs, dtype=float) - self.x[0]) / self.dx).astype(int)
        return np.clip(idx, 0, self.x.size - 1)


@dataclass(frozen=True, eq=False)
class Tree:
    """Non-recombining tree of depth ``depth`` with 2 or 3 children per node.

    Children of node ``j`` at layer ``k`` are ``branching * j + c``. Offsets
    are ``(-dx, 0, +dx)`` for trinomial and ``(-dx, +dx)`` for binomial trees.
    """

    depth: int
    branching: int
    dx: float
    paths: tuple = field(repr=False)

    @classmethod
    def build(cls, depth: int, branching: int = 3, dx: Optional[float] = None, a_max: Optional[float] = None):
        if depth < 1:
            raise LatticeError("tree depth must be at least 1")
        if branching not in (2, 3):
            raise LatticeError("branching must be 2 or 3")
        dt = 1.0 / depth
        if dx is None:
            if a_max is None:
                raise LatticeError("give dx or a_max")
            dx = math.sqrt(a_max * dt)
        offsets = np.array([-dx, 0.0, dx]) if branching == 3 else np.array([-dx, dx])
        layers = [np.zeros((1, 1))]
        for k in range(depth):
            prev = layers[-1]
            rep = np.repeat(prev, branching, axis=0)
            nxt = rep[:, -1] + np.tile(offsets, prev.shape[0])
            layers.append(np.column_stack([rep, nxt]))
        for arr in layers:
            arr.setflags(write=False)
        return cls(depth, branching, float(dx), tuple(layers))

    @property
    def n_steps(self) -> int:
        return self.depth

    @property
    def dt(self) -> float:
        return 1.0 / self.depth

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.depth + 1)

    def layer_size(self, k: int) -> int:
        return self.branching ** k

    def state(self, k: int) -> np.ndarray:
        return self.paths[k][:, -1]

    @property
    def n_decision_nodes(self) -> int:
        return sum(self.layer_size(k) for k in range(self.depth))

    def layer_offset(self, k: int) -> int:
        return sum(self.layer_size(j) for j in range(k))

    def terminal_values(self, payoff) -> np.ndarray:
        return np.asarray(payoff.on_paths(self.paths[-1]), dtype=float)

    def sample_path(self, k: int, j: int) -> SamplePath:
        return SamplePath(self.times[: k + 1], self.paths[k][j])

    def probs(self, a):
        if self.branching == 3:
            return trinomial_probs(a, self.dt, self.dx)
        a = np.asarray(a, dtype=float)
        if np.any(np.abs(a * self.dt - self.dx ** 2) > 1e-12 * self.dx ** 2):
            raise LatticeError("binomial tree only carries the diffusion a = dx^2 / dt")
        return 0.5 + 0.0 * a, 0.0 * a, 0.5 + 0.0 * a

    def _children(self, k: int, v_next: np.ndarray) -> np.ndarray:
        return v_next.reshape(v_next.shape[:-1] + (self.layer_size(k), self.branching))

    def expect(self, k: int, v_next: np.ndarray, a) -> np.ndarray:
        ch = self._children(k, v_next)
        a = np.asarray(a, dtype=float)
        lead = np.broadcast_shapes(ch.shape[:-1], a.shape)
        ch = np.broadcast_to(ch, lead + ch.shape[-1:])
        p, q, _ = self.probs(np.broadcast_to(a, lead))
        if self.branching == 3:
            return p * (ch[..., 2] + ch[..., 0]) + q * ch[..., 1]
        return p * (ch[..., 1] + ch[..., 0])

    def zeta(self, k: int, v_next: np.ndarray, a) -> np.ndarray:
        ch = self._children(k, v_next)
        return (ch[..., -1] - ch[..., 0]) / (2.0 * self.dx)

    def root(self, layer0: np.ndarray) -> float:
        return float(np.asarray(layer0).reshape(-1)[0])

    def ancestor(self, k: int, j, m: int):
        """Index at layer ``m <= k`` of the ancestor of node ``j`` at layer ``k``."""
        return np.asarray(j) // self.branching ** (k - m)


Model = Union[Lattice, Tree]


@dataclass(frozen=True)
class DiffusionControl:
    """Per-node indices into ``a_values``; one integer array per time layer."""

    layers: tuple
    a_values: np.ndarray

    def __post_init__(self):
        layers = tuple(np.asarray(l, dtype=np.int64) for l in self.layers)
        a_values = np.asarray(self.a_values, dtype=float)
        for l in layers:
            if l.size and (l.min() < 0 or l.max() >= a_values.size):
                raise LatticeError("control index out of range")
            l.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "a_values", a_values)

    def a_layer(self, k: int) -> np.ndarray:
        return self.a_values[self.layers[k]]

    @classmethod
    def constant(cls, model: Model, control_class: ControlClass, index: int) -> "DiffusionControl":
        layers = tuple(np.full(model.layer_size(k), index) for k in range(model.n_steps))
        return cls(layers, control_class.values)

    @classmethod
    def from_flat(cls, tree: Tree, flat: Sequence[int], a_values) -> "DiffusionControl":
        flat = np.asarray(flat, dtype=np.int64)
        if flat.size != tree.n_decision_nodes:
            raise LatticeError(f"expected {tree.n_decision_nodes} node assignments, got {flat.size}")
        layers = []
        off = 0
        for k in range(tree.depth):
            n = tree.layer_size(k)
            layers.append(flat[off : off + n])
            off += n
        return cls(tuple(layers), a_values)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.layers)

    def __eq__(self, other):
        if not isinstance(other, DiffusionControl):
            return NotImplemented
        return (
            len(self.layers) == len(other.layers)
            and all(np.array_equal(a, b) for a, b in zip(self.layers, other.layers))
            and np.array_equal(self.a_values, other.a_values)
        )

    __hash__ = None


def build_lattice(x_min: float, x_max: float, n_space: int, n_time: int, control_class: ControlClass) -> Lattice:
    return Lattice.build(x_min, x_max, n_space, n_time, control_class)


def in_class(tree: Tree, control: DiffusionControl, control_class: ControlClass) -> bool:
    """Structural membership: values in A0, switches only at allowed times."""
    if not np.array_equal(control.a_values, control_class.values):
        return False
    times = tree.times
    for k in range(1, tree.depth):
        if control_class.switch_allowed(times[k]):
            continue
        parent = control.layers[k - 1][tree.ancestor(k, np.arange(tree.layer_size(k)), k - 1)]
        if np.any(control.layers[k] != parent):
            return False
    return True


def paste_control(
    tree: Tree,
    base: DiffusionControl,
    t_index: int,
    partition: Sequence[Sequence[int]],
    continuations: Sequence[DiffusionControl],
) -> DiffusionControl:
    """Use ``base`` before layer ``t_index`` and ``continuations[i]`` on subtrees of cell ``i``."""
    if not 0 <= t_index <= tree.depth:
        raise LatticeError("pasting layer out of range")
    if len(partition) != len(continuations):
        raise LatticeError("need exactly one continuation per partition cell")
    n_t = tree.layer_size(t_index)
    owner = np.full(n_t, -1)
    for i, cell in enumerate(partition):
        cell = np.asarray(cell, dtype=int)
        if cell.size and (cell.min() < 0 or cell.max() >= n_t):
            raise LatticeError(f"partition cell {i} names a node outside layer {t_index}")
        if np.any(owner[cell] >= 0) or np.unique(cell).size != cell.size:
            raise LatticeError(f"partition cell {i} overlaps another cell")
        owner[cell] = i
    if np.any(owner < 0):
        raise LatticeError(f"partition does not cover node {int(np.flatnonzero(owner < 0)[0])} at layer {t_index}")
    for c in continuations:
        if not np.array_equal(c.a_values, base.a_values):
            raise LatticeError("continuations must index the same diffusion values as the base control")
    layers = [np.array(l) for l in base.layers[:t_index]]
    for m in range(t_index, tree.depth):
        nodes = np.arange(tree.layer_size(m))
        cell_of = owner[tree.ancestor(m, nodes, t_index)]
        stacked = np.stack([c.layers[m] for c in continuations])
        layers.append(stacked[cell_of, nodes])
    return DiffusionControl(tuple(layers), base.a_values)


def control_count(tree: Tree, n_choices: int) -> int:
    return n_choices ** tree.n_decision_nodes


def control_index_matrix(tree: Tree, choices: Sequence[int], cap: int = 10**6) -> np.ndarray:
    """All assignments as rows (most significant node first, like ``itertools.product``)."""
    choices = np.asarray(choices, dtype=np.int64)
    m = choices.size
    n = tree.n_decision_nodes
    count = m ** n
    if count > cap:
        raise LatticeError(f"enumeration of {count} controls exceeds the cap of {cap}")
    codes = np.arange(count, dtype=np.int64)
    powers = m ** np.arange(n - 1, -1, -1, dtype=np.int64)
    digits = (codes[:, None] // powers[None, :]) % m
    return choices[digits]


def enumerate_controls(
    tree: Tree, control_class: ControlClass, cap: int = 10**6, gen=None
) -> Iterator[DiffusionControl]:
    """Yield every adapted assignment of (admissible) A0 values to decision nodes."""
    choices = control_class.admissible(gen) if gen is not None else list(range(len(control_class.A0)))
    count = len(choices) ** tree.n_decision_nodes
    if count > cap:
        raise LatticeError(f"enumeration of {count} controls exceeds the cap of {cap}")
    a_values = control_class.values
    for combo in itertools.product(choices, repeat=tree.n_decision_nodes):
        yield DiffusionControl.from_flat(tree, combo, a_values)


# ---------------------------------------------------------------------------
# path sampling


@dataclass(frozen=True)
class Schedule:
    """Deterministic piecewise-constant control: ``values[i]`` on ``[times[i], times[i+1])``."""

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times or self.times[0] != 0.0:
            raise LatticeError("schedule needs matching times/values starting at t=0")
        if any(v <= 0 for v in self.values):
            raise LatticeError("schedule values must be positive")

    def at(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.times), t, side="right") - 1
        return np.asarray(self.values, dtype=float)[idx]

    @property
    def label(self) -> str:
        return "switch:" + "/".join(f"{t:g}->{v:g}" for t, v in zip(self.times, self.values))


@dataclass(frozen=True, eq=False)
class Feedback:
    """Lattice control looked up at the nearest node of the current state."""

    lattice: Lattice
    control: DiffusionControl

    @property
    def label(self) -> str:
        return "feedback"


def control_label(control) -> str:
    if isinstance(control, (int, float)):
        return f"const:{float(control):g}"
    return control.label


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Many scalar paths on one grid with their realized diffusion per step."""

    grid: np.ndarray
    values: np.ndarray  # (n_paths, n_nodes)
    a: np.ndarray  # (n_paths, n_steps)
    normals: np.ndarray  # (n_paths, n_steps)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> SamplePath:
        return SamplePath(self.grid, self.values[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.grid)


def gaussian_stream(seed: int, path: int, n: int, stream: int = 0) -> np.ndarray:
    """Standard normals keyed by ``(seed, stream, path)``; order independent."""
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, int(stream), int(path)])
    return np.random.Generator(bitgen).standard_normal(n)


def sample_control_paths(
    control,
    n_paths: int,
    n_steps: int,
    seed: int = 0,
    stream: int = 0,
    normals: Optional[np.ndarray] = None,
) -> PathBundle:
    """Euler paths ``X_{k+1} = X_k + sqrt(a_k dt) * N_k`` on a uniform grid of [0, 1].

    ``control`` is a positive constant, a :class:`Schedule`, or a
    :class:`Feedback` lattice control (whose lattice must have ``n_steps`` steps).
    """
    grid = np.linspace(0.0, 1.0, n_steps + 1)
    dt = np.diff(grid)
    if normals is None:
        normals = np.stack([gaussian_stream(seed, i, n_steps, stream) for i in range(n_paths)]) if n_paths else np.zeros((0, n_steps))
    else:
        normals = np.asarray(normals, dtype=float).reshape(n_paths, n_steps)
    x = np.zeros((n_paths, n_steps + 1))
    if isinstance(control, (int, float, np.floating)):
        if not control > 0:
            raise LatticeError("constant control must be positive")
        a = np.full((n_paths, n_steps), float(control))
        x[:, 1:] = np.cumsum(np.sqrt(a * dt) * normals, axis=1)
    elif isinstance(control, Schedule):
        a = np.broadcast_to(control.at(grid[:-1]), (n_paths, n_steps)).copy()
        x[:, 1:] = np.cumsum(np.sqrt(a * dt) * normals, axis=1)
    elif isinstance(control, Feedback):
        lat = control.lattice
        if lat.n_steps != n_steps:
            raise LatticeError("feedback lattice and sampling grid have different step counts")
        a = np.empty((n_paths, n_steps))
        for k in range(n_steps):
            a[:, k] = control.control.a_layer(k)[lat.node_index(x[:, k])]
            x[:, k + 1] = x[:, k] + np.sqrt(a[:, k] * dt[k]) * normals[:, k]
    else:
        raise LatticeError(f"unsupported control {control!r}")
    return PathBundle(grid, x, a, normals)
