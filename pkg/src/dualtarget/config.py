"""Experiment configuration: a sectioned ``key = value`` text file.

Example::

    [generator]
    name = uvm
    sig_lo = 1.0
    sig_hi = 2.0

    [payoff]
    name = call
    k = 0.0

    [controls]
    A0 = [1.0, 4.0]
    T0 = grid

    [lattice]
    n_space = 401
    n_time = 100

Recognized sections and keys are listed in ``SCHEMA``. Unknown sections or
keys are errors, and every error names the file, line and key.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

GENERATOR_PARAMS = {
    "linear": ("r", "sigma"),
    "uvm": ("sig_lo", "sig_hi"),
    "gamma_band": ("sigma", "gam_lo", "gam_hi"),
    "custom": ("gamma_min", "gamma_max", "n_gamma", "q", "r"),
}
PAYOFF_PARAMS = {
    "call": ("k",),
    "put": ("k",),
    "neg_square": (),
    "butterfly": ("k", "w"),
    "constant": ("c",),
    "table": ("xs", "ys"),
}
SCHEMA = {
    "generator": ("name",) + tuple(sorted({k for v in GENERATOR_PARAMS.values() for k in v})),
    "payoff": ("name",) + tuple(sorted({k for v in PAYOFF_PARAMS.values() for k in v})),
    "controls": ("A0", "T0"),
    "lattice": ("n_space", "n_time", "x_max"),
    "bsde": ("scheme", "picard_tol", "basis_degree", "a", "n_paths"),
    "pde": ("x_max", "n_space", "n_time", "a_grid"),
    "tree": ("depth", "branching"),
    "verify": ("y0", "margin", "tol", "n_paths", "threshold", "mode", "bisect"),
    "qv": ("a", "n_steps", "window"),
    "run": ("seed",),
}


class ConfigError(ValueError):
    pass


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines.setdefault((section, None), n)
        elif section is not None:
            for sep in ("=", ":"):
                if sep in s:
                    lines.setdefault((section, s.split(sep, 1)[0].strip()), n)
                    break
    return lines


def _floats(text: str) -> list:
    s = text.strip()
    if s.startswith("[") and s.endswith("]"):
        s = s[1:-1]
    parts = [p.strip() for p in s.split(",")]
    if parts == [""]:
        return []
    return [float(p) for p in parts]


@dataclass
class ExperimentConfig:
    text: str
    source: str
    sections: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)

    # -- access -----------------------------------------------------------

    def where(self, section: str, key: Optional[str] = None) -> str:
        n = self.lines.get((section, key)) or self.lines.get((section, None))
        loc = f"{self.source}:{n}" if n else self.source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def fail(self, section: str, key: Optional[str], msg: str):
        raise ConfigError(f"{self.where(section, key)}: {msg}")

    def has(self, section: str, key: str) -> bool:
        return key in self.sections.get(section, {})

    def raw(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def get_float(self, section: str, key: str, default=None, lo=None, hi=None, strict_lo=False) -> Optional[float]:
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            v = float(raw)
        except ValueError:
            self.fail(section, key, f"expected a number, got {raw!r}")
        if not math.isfinite(v):
            self.fail(section, key, f"expected a finite number, got {raw!r}")
        if lo is not None and (v <= lo if strict_lo else v < lo):
            self.fail(section, key, f"must be {'>' if strict_lo else '>='} {lo}, got {v:g}")
        if hi is not None and v > hi:
            self.fail(section, key, f"must be <= {hi}, got {v:g}")
        return v

    def get_int(self, section: str, key: str, default=None, lo=None, hi=None) -> Optional[int]:
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            v = int(raw)
        except ValueError:
            self.fail(section, key, f"expected an integer, got {raw!r}")
        if lo is not None and v < lo:
            self.fail(section, key, f"must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            self.fail(section, key, f"must be <= {hi}, got {v}")
        return v

    def get_list(self, section: str, key: str, default=None) -> Optional[list]:
        raw = self.raw(section, key)
        if raw is None:
            return default
        try:
            return _floats(raw)
        except ValueError:
            self.fail(section, key, f"expected a list of numbers like [1.0, 4.0], got {raw!r}")

    def get_str(self, section: str, key: str, default=None, choices=None) -> Optional[str]:
        raw = self.raw(section, key)
        if raw is None:
            return default
        v = raw.strip().strip('"').strip("'")
        if choices is not None and v not in choices:
            self.fail(section, key, f"expected one of {', '.join(choices)}, got {v!r}")
        return v

    def get_bool(self, section: str, key: str, default=False) -> bool:
        raw = self.raw(section, key)
        if raw is None:
            return default
        v = raw.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        self.fail(section, key, f"expected true or false, got {raw!r}")

    def set(self, section: str, key: str, value) -> None:
        """Override a value (command-line flags); the rendered config records it."""
        self.sections.setdefault(section, {})[key] = str(value)

    # -- rendering --------------------------------------------------------

    def render(self) -> str:
        """The effective configuration, overrides included, in canonical form."""
        buf = io.StringIO()
        for sec in SCHEMA:
            if sec not in self.sections:
                continue
            buf.write(f"[{sec}]\n")
            for key, val in self.sections[sec].items():
                buf.write(f"{key} = {val}\n")
            buf.write("\n")
        return buf.getvalue()

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.render().encode()).hexdigest()

    # -- builders ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.get_int("run", "seed", 0, lo=0, hi=2**64 - 1)

    def generator(self):
        from . import generators as G

        sec = "generator"
        name = self.get_str(sec, "name", "uvm", choices=tuple(GENERATOR_PARAMS))
        allowed = set(GENERATOR_PARAMS[name]) | {"name"}
        for key in self.sections.get(sec, {}):
            if key not in allowed:
                self.fail(sec, key, f"not a parameter of generator {name!r} (expected {', '.join(GENERATOR_PARAMS[name]) or 'none'})")
        try:
            if name == "linear":
                return G.linear(self.get_float(sec, "r", 0.0), self.get_float(sec, "sigma", 1.0, lo=0.0, strict_lo=True))
            if name == "uvm":
                lo = self.get_float(sec, "sig_lo", 1.0, lo=0.0)
                hi = self.get_float(sec, "sig_hi", 2.0, lo=0.0)
                if not hi > lo:
                    self.fail(sec, "sig_hi", f"must exceed sig_lo={lo:g}")
                return G.uvm(lo, hi)
            if name == "gamma_band":
                return G.gamma_band(
                    self.get_float(sec, "sigma", 1.0, lo=0.0),
                    self.get_float(sec, "gam_lo", 1.0, lo=0.0),
                    self.get_float(sec, "gam_hi", 1.0, lo=0.0),
                )
            # custom: quadratic H on a truncated gamma range, numerical conjugate
            gmin = self.get_float(sec, "gamma_min", -10.0, hi=0.0)
            gmax = self.get_float(sec, "gamma_max", 10.0, lo=0.0)
            n = self.get_int(sec, "n_gamma", 2001, lo=2)
            q = self.get_float(sec, "q", 1.0, lo=0.0, strict_lo=True)
            r = self.get_float(sec, "r", 0.0)
            H, _ = G.quadratic_H(q, r)
            return G.custom(H, gmin, gmax, n, lipschitz_yz=abs(r))
        except G.GeneratorError as exc:
            self.fail(sec, None, str(exc))

    def payoff(self):
        from . import payoffs as P

        sec = "payoff"
        name = self.get_str(sec, "name", "call", choices=tuple(PAYOFF_PARAMS))
        allowed = set(PAYOFF_PARAMS[name]) | {"name"}
        for key in self.sections.get(sec, {}):
            if key not in allowed:
                self.fail(sec, key, f"not a parameter of payoff {name!r}")
        if name in ("call", "put"):
            return P.NAMED[name](self.get_float(sec, "k", 0.0))
        if name == "neg_square":
            return P.neg_square()
        if name == "butterfly":
            return P.butterfly(self.get_float(sec, "k", 0.0), self.get_float(sec, "w", 1.0, lo=0.0, strict_lo=True))
        if name == "constant":
            return P.constant(self.get_float(sec, "c", 0.0))
        xs = self.get_list(sec, "xs")
        ys = self.get_list(sec, "ys")
        if not xs:
            self.fail(sec, "xs", "table payoff needs a nonempty xs list")
        if ys is None or len(ys) != len(xs):
            self.fail(sec, "ys", "table payoff needs ys with one value per xs entry")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            self.fail(sec, "xs", "xs must be strictly increasing")
        return P.table(xs, ys)

    def control_class(self):
        from .lattice import ControlClass

        sec = "controls"
        a0 = self.get_list(sec, "A0", [1.0, 4.0])
        if not a0:
            self.fail(sec, "A0", "must contain at least one diffusion value")
        if any(not a > 0 for a in a0):
            self.fail(sec, "A0", f"diffusion values must be positive, got {a0}")
        t0 = self.get_str(sec, "T0", "grid")
        if t0 == "grid":
            times = None
        else:
            times = self.get_list(sec, "T0")
            if not times or min(times) != 0.0 or max(times) != 1.0 or any(t < 0 or t > 1 for t in times):
                self.fail(sec, "T0", "must be 'grid' or a list of times in [0, 1] containing 0 and 1")
        return ControlClass(tuple(a0), times)

    def a_max(self) -> float:
        """Largest admissible diffusion value; sets the CFL-tied lattice spacing."""
        gen = self.generator()
        cc = self.control_class()
        idx = cc.admissible(gen)
        if not idx:
            self.fail("controls", "A0", f"no value lies in D_F = {gen.domain_F}")
        return float(max(cc.A0[i] for i in idx))

    def lattice(self):
        from .lattice import Lattice, LatticeError

        sec = "lattice"
        n_space = self.get_int(sec, "n_space", 401, lo=3)
        n_time = self.get_int(sec, "n_time", 100, lo=1)
        x_max = self.get_float(sec, "x_max", None, lo=0.0, strict_lo=True)
        try:
            if x_max is None:
                if n_space % 2 == 0:
                    self.fail(sec, "n_space", "must be odd when x_max is omitted (the lattice is centred on 0)")
                return Lattice.cfl_tied(self.a_max(), n_space, n_time)
            return Lattice.build(-x_max, x_max, n_space, n_time, self.control_class())
        except LatticeError as exc:
            self.fail(sec, None, str(exc))

    def pde_grid(self):
        """PDE grid; defaults to the dual lattice so the two solvers share nodes."""
        from .lattice import Lattice

        sec = "pde"
        if not any(self.has(sec, k) for k in ("x_max", "n_space", "n_time")):
            return self.lattice()
        lat = self.lattice()
        x_max = self.get_float(sec, "x_max", float(lat.x[-1]), lo=0.0, strict_lo=True)
        n_space = self.get_int(sec, "n_space", lat.n_space, lo=3)
        n_time = self.get_int(sec, "n_time", lat.n_steps, lo=1)
        return Lattice.build(-x_max, x_max, n_space, n_time)

    def pde_a_grid(self) -> list:
        grid = self.get_list("pde", "a_grid")
        if grid is None:
            return list(self.control_class().A0)
        if not grid:
            self.fail("pde", "a_grid", "must not be empty")
        return grid

    def tree(self):
        from .lattice import Tree

        depth = self.get_int("tree", "depth", 3, lo=1, hi=12)
        branching = self.get_int("tree", "branching", 3, lo=2, hi=3)
        return Tree.build(depth, branching, a_max=self.a_max())

    def bsde_options(self) -> dict:
        sec = "bsde"
        return {
            "scheme": self.get_str(sec, "scheme", "explicit", choices=("explicit", "picard")),
            "picard_tol": self.get_float(sec, "picard_tol", 1e-12, lo=0.0, strict_lo=True),
            "basis_degree": self.get_int(sec, "basis_degree", 3, lo=1, hi=12),
            "a": self.get_float(sec, "a", None, lo=0.0, strict_lo=True),
            "n_paths": self.get_int(sec, "n_paths", 0, lo=0),
        }

    def verify_options(self) -> dict:
        sec = "verify"
        return {
            "y0": self.get_float(sec, "y0", None),
            "margin": self.get_float(sec, "margin", 0.05),
            "tol": self.get_float(sec, "tol", None, lo=0.0),
            "n_paths": self.get_int(sec, "n_paths", 10_000, lo=1),
            "threshold": self.get_float(sec, "threshold", 0.99, lo=0.0, hi=1.0),
            "mode": self.get_str(sec, "mode", "primal", choices=("primal", "relaxed", "further")),
            "bisect": self.get_bool(sec, "bisect", False),
        }

    def qv_options(self) -> dict:
        sec = "qv"
        return {
            "a": self.get_float(sec, "a", 4.0, lo=0.0, strict_lo=True),
            "n_steps": self.get_int(sec, "n_steps", 100_000, lo=1),
            "window": self.get_float(sec, "window", 0.25, lo=0.0, strict_lo=True),
        }

    def validate(self) -> None:
        """Build every object once so that errors surface before any solve."""
        self.generator()
        self.payoff()
        self.control_class()
        self.a_max()
        self.seed
        self.bsde_options()
        self.verify_options()
        self.qv_options()
        self.pde_a_grid()
        self.get_int("tree", "depth", 3, lo=1, hi=12)
        self.get_int("tree", "branching", 3, lo=2, hi=3)


def parse(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (A0, T0)
    lines = _key_lines(text)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        loc = f"{source}:{line}" if line else source
        raise ConfigError(f"{loc}: {exc.message if hasattr(exc, 'message') else exc}") from None
    cfg = ExperimentConfig(text, source, {}, lines)
    for sec in cp.sections():
        if sec not in SCHEMA:
            cfg.fail(sec, None, f"unknown section (expected one of {', '.join(SCHEMA)})")
        for key, val in cp.items(sec):
            if key not in SCHEMA[sec]:
                cfg.fail(sec, key, f"unknown key (expected one of {', '.join(SCHEMA[sec])})")
        cfg.sections[sec] = dict(cp.items(sec))
    return cfg


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from None
    return parse(text, str(p))


def default() -> ExperimentConfig:
    return parse("", "<defaults>")
