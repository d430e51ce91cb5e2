"""Terminal payoffs (path functionals) with sup-norm Lipschitz metadata."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .paths import SamplePath


@dataclass(frozen=True)
class Payoff:
    """A path functional ``xi``.

    ``on_paths`` maps an array of sampled paths ``(..., n_nodes)`` (scalar
    state) to payoff values. Markov payoffs also carry ``terminal`` so the
    recombining lattice solvers can use them.
    """

    name: str
    on_paths: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    terminal: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def markov(self) -> bool:
        return self.terminal is not None

    def modulus(self, delta: float) -> float:
        return self.lipschitz * delta

    def __call__(self, path: SamplePath) -> float:
        return float(self.on_paths(path.values[:, 0]))

    def at_terminal(self, x) -> np.ndarray:
        if self.terminal is None:
            raise ValueError(f"payoff {self.name!r} is path dependent; use a tree model")
        return np.asarray(self.terminal(np.asarray(x, dtype=float)), dtype=float)


def markov(name: str, g: Callable, lipschitz: float) -> Payoff:
    return Payoff(name, lambda p: g(np.asarray(p)[..., -1]), lipschitz, g)


def call(k: float = 0.0) -> Payoff:
    return markov(f"call{{k={k:g}}}", lambda x: np.maximum(x - k, 0.0), 1.0)


def put(k: float = 0.0) -> Payoff:
    return markov(f"put{{k={k:g}}}", lambda x: np.maximum(k - x, 0.0), 1.0)


def neg_square() -> Payoff:
    # not globally Lipschitz; the constant below is meaningless off bounded sets
    return markov("neg_square", lambda x: -np.square(x), np.inf)


def butterfly(k: float = 0.0, w: float = 1.0) -> Payoff:
    def g(x):
        return np.maximum(x - (k - w), 0.0) - 2.0 * np.maximum(x - k, 0.0) + np.maximum(x - (k + w), 0.0)

    return markov(f"butterfly{{k={k:g},w={w:g}}}", g, 1.0)


def constant(c: float) -> Payoff:
    return markov(f"constant{{c={c:g}}}", lambda x: np.full(np.shape(x), float(c)), 0.0)


def linear_payoff(slope: float = 1.0) -> Payoff:
    return markov(f"linear{{slope={slope:g}}}", lambda x: slope * np.asarray(x, dtype=float), abs(slope))


def table(xs: Sequence[float], ys: Sequence[float]) -> Payoff:
    """Piecewise-linear interpolation of ``(xs, ys)``, flat beyond the ends."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise ValueError("payoff table needs >= 2 strictly increasing abscissae with matching ordinates")
    lip = float(np.max(np.abs(np.diff(ys) / np.diff(xs))))
    return markov("table", lambda x: np.interp(x, xs, ys), lip)


def running_max(weight: float = 1.0) -> Payoff:
    """``weight * max_t omega_t``: path dependent, Lipschitz in sup norm."""
    return Payoff(
        f"running_max{{w={weight:g}}}",
        lambda p: weight * np.max(np.asarray(p), axis=-1),
        abs(weight),
    )


def average(weight: float = 1.0) -> Payoff:
    """``weight * mean of sampled values``."""
    return Payoff(
        f"average{{w={weight:g}}}",
        lambda p: weight * np.mean(np.asarray(p), axis=-1),
        abs(weight),
    )


def combine(parts: Sequence[Payoff], coeffs: Sequence[float]) -> Payoff:
    parts = list(parts)
    coeffs = [float(c) for c in coeffs]

    def f(p):
        return sum(c * q.on_paths(p) for c, q in zip(coeffs, parts))

    terminal = None
    if all(q.markov for q in parts):

        def terminal(x):
            return sum(c * q.terminal(x) for c, q in zip(coeffs, parts))

    lip = sum(abs(c) * q.lipschitz for c, q in zip(coeffs, parts))
    name = "+".join(f"{c:g}*{q.name}" for c, q in zip(coeffs, parts))
    return Payoff(name, f, lip, terminal)


NAMED = {
    "call": call,
    "put": put,
    "neg_square": neg_square,
    "butterfly": butterfly,
    "constant": constant,
}
