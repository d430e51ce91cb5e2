import math

import pytest

from dualtarget import config as C
from dualtarget.lattice import Lattice

UVM_CALL = """\
[generator]
name = uvm
sig_lo = 1.0
sig_hi = 2.0

[payoff]
name = call
k = 0.0

[controls]
A0 = [1.0, 4.0]   # variances

[lattice]
n_space = 401
n_time = 100
"""


def test_defaults_build_the_reference_problem():
    cfg = C.default()
    cfg.validate()
    assert cfg.generator().name == "uvm"
    assert cfg.control_class().A0 == (1.0, 4.0)
    lat = cfg.lattice()
    assert lat.n_space == 401 and lat.n_steps == 100 and lat.dx == pytest.approx(0.2)
    assert cfg.seed == 0


def test_parse_reads_values():
    cfg = C.parse(UVM_CALL, "uvm.cfg")
    cfg.validate()
    assert cfg.generator().domain_F.lo == 1.0 and cfg.generator().domain_F.hi == 4.0
    assert cfg.payoff().name.startswith("call")
    assert cfg.a_max() == 4.0


def test_errors_name_file_line_and_key():
    bad = UVM_CALL.replace("A0 = [1.0, 4.0]", "A0 = []")
    with pytest.raises(C.ConfigError, match=r"^bad\.cfg:11: \[controls\] A0: must contain at least one diffusion value"):
        C.parse(bad, "bad.cfg").validate()


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("[lattice]\nn_spce = 3\n", r"x\.cfg:2: \[lattice\] n_spce: unknown key"),
        ("[latice]\n", r"x\.cfg:1: \[latice\]: unknown section"),
        ("[lattice]\nn_time = ten\n", r"x\.cfg:2: \[lattice\] n_time: expected an integer"),
        ("[lattice]\nn_time = 0\n", r"n_time: must be >= 1"),
        ("[generator]\nname = uvm\nsig_lo = 2\nsig_hi = 1\n", r"x\.cfg:4: \[generator\] sig_hi: must exceed"),
        ("[generator]\nname = linear\nsig_hi = 1\n", r"sig_hi: not a parameter of generator 'linear'"),
        ("[generator]\nname = heston\n", r"name: expected one of"),
        ("[payoff]\nname = call\nw = 1\n", r"w: not a parameter of payoff 'call'"),
        ("[payoff]\nname = table\nxs = [0, 1]\nys = [1]\n", r"ys: table payoff needs ys"),
        ("[payoff]\nname = table\nxs = [1, 0]\nys = [1, 2]\n", r"xs must be strictly increasing"),
        ("[controls]\nA0 = [1, -4]\n", r"A0: diffusion values must be positive"),
        ("[controls]\nA0 = one\n", r"A0: expected a list of numbers"),
        ("[controls]\nT0 = [0.5, 1]\n", r"T0: must be 'grid'"),
        ("[generator]\nname = uvm\nsig_lo = 3\nsig_hi = 4\n", r"\[controls\] A0: no value lies in D_F"),
        ("[bsde]\nscheme = implicit\n", r"scheme: expected one of explicit, picard"),
        ("[verify]\nthreshold = 2\n", r"threshold: must be <= 1"),
        ("[verify]\nbisect = maybe\n", r"bisect: expected true or false"),
        ("[run]\nseed = -1\n", r"seed: must be >= 0"),
        ("[lattice]\nn_space = 400\n", r"n_space: must be odd"),
        ("[lattice]\nx_max = 1\nn_time = 10\n", r"\[lattice\].*CFL"),
        ("[pde]\na_grid = []\n", r"a_grid: must not be empty"),
        ("[lattice]\nn_space\n", r"x\.cfg"),
    ],
)
def test_validation_errors(text, pattern):
    with pytest.raises(C.ConfigError, match=pattern):
        cfg = C.parse(text, "x.cfg")
        cfg.validate()
        cfg.lattice()


def test_missing_file(tmp_path):
    with pytest.raises(C.ConfigError, match="cannot read config"):
        C.load(tmp_path / "nope.cfg")


def test_render_round_trip_and_digest():
    cfg = C.parse(UVM_CALL, "uvm.cfg")
    again = C.parse(cfg.render(), "rendered.cfg")
    assert again.render() == cfg.render()
    assert again.digest == cfg.digest
    cfg.set("run", "seed", 7)
    assert "[run]\nseed = 7\n" in cfg.render()
    assert cfg.digest != again.digest


def test_explicit_lattice_and_pde_grid():
    cfg = C.parse("[lattice]\nx_max = 5\nn_space = 51\nn_time = 400\n[pde]\nn_time = 800\n")
    lat = cfg.lattice()
    assert lat.x[0] == -5.0 and lat.n_space == 51
    grid = cfg.pde_grid()
    assert isinstance(grid, Lattice) and grid.n_steps == 800 and grid.x[-1] == 5.0
    assert cfg.pde_a_grid() == [1.0, 4.0]


def test_custom_generator_from_text():
    cfg = C.parse("[generator]\nname = custom\nq = 2\nr = 0.1\nn_gamma = 401\n[controls]\nA0 = [1, 2]\n")
    gen = cfg.generator()
    assert gen.lipschitz_yz == pytest.approx(0.1)
    # conjugate of q g^2 / 2 - r y at a = 2 is a^2 / (8 q) + r y
    assert float(gen.F(0.0, 0.0, 1.0, 0.0, 2.0)) == pytest.approx(4 / 16 + 0.1, abs=1e-3)


def test_option_defaults():
    cfg = C.default()
    assert cfg.bsde_options()["scheme"] == "explicit"
    v = cfg.verify_options()
    assert v["threshold"] == 0.99 and v["tol"] is None and v["bisect"] is False
    q = cfg.qv_options()
    assert q["n_steps"] == 100_000 and math.isclose(q["window"], 0.25)
