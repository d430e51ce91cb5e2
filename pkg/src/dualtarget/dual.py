"""Dual value: supremum of BSDE values over the diffusion-control family.

The dynamic-programming solver maximizes the one-step backward operator
over the admissible diffusion values at every node. The oracle instead
enumerates every adapted control on a small tree and keeps the best root
value; the two must agree.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .bsde import backward_step, backward_values
from .lattice import (
    ControlClass,
    DiffusionControl,
    Lattice,
    Tree,
    control_index_matrix,
    paste_control,
)


class DualError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ValueField:
    model: object
    control_class: ControlClass
    v_field: tuple  # per layer, terminal layer last
    argmax_field: tuple  # per layer k < n, index into A0
    v0: float
    admissible: tuple

    def argmax_control(self) -> DiffusionControl:
        return DiffusionControl(self.argmax_field, self.control_class.values)


def _admissible(control_class: ControlClass, gen) -> list:
    idx = control_class.admissible(gen)
    if not idx:
        raise DualError(f"no A0 value lies in D_F = {gen.domain_F}; admissible control set is empty")
    return idx


def dual_value_dp(model, control_class: ControlClass, gen, payoff, scheme: str = "explicit") -> ValueField:
    """Backward recursion ``V_k = max_a Phi_a(V_{k+1})``; ties go to the lowest A0 index."""
    idx = _admissible(control_class, gen)
    vals = control_class.values
    # CFL for the largest admissible value
    model.probs(vals[idx].max())
    v = np.asarray(model.terminal_values(payoff), dtype=float)
    vs, args = [v], []
    for k in range(model.n_steps - 1, -1, -1):
        cand = np.stack([backward_step(model, k, v, vals[i], gen, scheme)[0] for i in idx])
        best = np.argmax(cand, axis=0)
        v = np.take_along_axis(cand, best[None], axis=0)[0]
        vs.append(v)
        args.append(np.asarray(idx)[best])
    vs.reverse()
    args.reverse()
    return ValueField(model, control_class, tuple(vs), tuple(args), model.root(vs[0]), tuple(idx))


def _batched_root(tree: Tree, flat_idx: np.ndarray, a_values: np.ndarray, gen, payoff, scheme: str) -> np.ndarray:
    a_layers = []
    off = 0
    for k in range(tree.depth):
        n = tree.layer_size(k)
        a_layers.append(a_values[flat_idx[:, off : off + n]])
        off += n
    root = backward_values(tree, a_layers, gen, tree.terminal_values(payoff), scheme)
    return root[:, 0]


def dual_value_oracle(tree: Tree, control_class: ControlClass, gen, payoff, cap: int = 10**6, scheme: str = "explicit", return_control: bool = False):
    """Exhaustive supremum of the root BSDE value over all adapted controls.

    Every assignment of admissible A0 values to the decision nodes is solved
    (vectorized across assignments); the best root value is returned.
    """
    idx = _admissible(control_class, gen)
    flat = control_index_matrix(tree, idx, cap)
    roots = _batched_root(tree, flat, control_class.values, gen, payoff, scheme)
    best = int(np.argmax(roots))
    if return_control:
        return float(roots[best]), DiffusionControl.from_flat(tree, flat[best], control_class.values)
    return float(roots[best])


@dataclass(frozen=True, eq=False)
class KField:
    increments: tuple  # per layer k < n
    min: float
    max_abs: float
    total: float


def extract_K(vf: ValueField, control, gen, scheme: str = "explicit") -> KField:
    """Per-node increment ``V_k - Phi_a(V_{k+1})`` of the nondecreasing process.

    ``control`` is a :class:`DiffusionControl` or a constant diffusion value.
    """
    model = vf.model
    incs = []
    for k in range(model.n_steps):
        a = control.a_layer(k) if isinstance(control, DiffusionControl) else float(control)
        y, _ = backward_step(model, k, vf.v_field[k + 1], a, gen, scheme)
        incs.append(vf.v_field[k] - y)
    flat = np.concatenate(incs)
    return KField(tuple(incs), float(flat.min()), float(np.abs(flat).max()), float(flat.sum()))


@dataclass(frozen=True, eq=False)
class LambdaBound:
    lambda_field: tuple
    lambda0: float


def lambda_bound(model, control_class: ControlClass, gen, payoff) -> LambdaBound:
    """Square root of the maximal expected ``xi^2 + int F(0, 0)^2 dt``, node by node."""
    idx = _admissible(control_class, gen)
    vals = control_class.values
    sq = np.square(np.asarray(model.terminal_values(payoff), dtype=float))
    fields = [sq]
    for k in range(model.n_steps - 1, -1, -1):
        t = float(model.times[k])
        x = model.state(k)
        cand = []
        for i in idx:
            f0 = np.asarray(gen.F(t, x, 0.0, 0.0, vals[i]), dtype=float)
            cand.append(model.expect(k, sq, vals[i]) + model.dt * np.square(f0) * np.ones_like(x))
        sq = np.max(np.stack(cand), axis=0)
        fields.append(sq)
    fields.reverse()
    lam = tuple(np.sqrt(f) for f in fields)
    return LambdaBound(lam, model.root(lam[0]))


def backward_operator(model, gen, v_layer, k_from: int, k_to: int, control, scheme: str = "explicit"):
    """Apply the single-control backward operator from layer ``k_from`` down to ``k_to``."""
    if not 0 <= k_to <= k_from <= model.n_steps:
        raise DualError("need 0 <= k_to <= k_from <= n_steps")
    v = np.asarray(v_layer, dtype=float)
    for k in range(k_from - 1, k_to - 1, -1):
        a = control.a_layer(k) if isinstance(control, DiffusionControl) else float(control)
        v, _ = backward_step(model, k, v, a, gen, scheme)
    return v


def dpp_value(tree: Tree, vf: ValueField, gen, payoff, t_index: int, scheme: str = "explicit") -> float:
    """Best root value over controls pasted at layer ``t_index``.

    Before ``t_index`` every admissible assignment is tried; from each
    layer-``t_index`` node onward the value field's own optimizer is pasted in
    (one partition cell per node).
    """
    idx = list(vf.admissible)
    a_values = vf.control_class.values
    optimal = vf.argmax_control()
    n_t = tree.layer_size(t_index)
    cells = [[j] for j in range(n_t)]
    n_before = sum(tree.layer_size(k) for k in range(t_index))
    best = -math.inf
    for combo in np.ndindex(*([len(idx)] * n_before)):
        flat = np.concatenate([np.asarray(idx)[list(combo)], np.concatenate(optimal.layers[t_index:]) if t_index < tree.depth else np.zeros(0, int)])
        base = DiffusionControl.from_flat(tree, flat.astype(int), a_values)
        pasted = paste_control(tree, base, t_index, cells, [optimal] * n_t)
        root = backward_values(tree, [pasted.a_layer(k) for k in range(tree.depth)], gen, tree.terminal_values(payoff), scheme)
        best = max(best, float(root[0]))
    return best


def write_value_surface(vf: ValueField, dest) -> None:
    model = vf.model
    vals = vf.control_class.values
    with Path(dest).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "V", "argmax_a"])
        for k in range(model.n_steps + 1):
            t = format(float(model.times[k]), ".17g")
            xs = model.state(k)
            arg = vals[vf.argmax_field[k]] if k < model.n_steps else None
            for j, x in enumerate(xs):
                a = format(float(arg[j]), ".17g") if arg is not None else ""
                w.writerow([t, format(float(x), ".17g"), format(float(vf.v_field[k][j]), ".17g"), a])


def write_k_process(vf: ValueField, kf: KField, dest) -> None:
    model = vf.model
    with Path(dest).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "dK"])
        for k, inc in enumerate(kf.increments):
            t = format(float(model.times[k]), ".17g")
            for x, dk in zip(model.state(k), inc):
                w.writerow([t, format(float(x), ".17g"), format(float(dk), ".17g")])
