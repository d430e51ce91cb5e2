import math

import numpy as np
import pytest

from dualtarget import generators as G
from dualtarget import payoffs as P
from dualtarget.dual import dual_value_dp
from dualtarget.lattice import ControlClass, Lattice, Schedule, sample_control_paths
from dualtarget.paths import SamplePath
from dualtarget.primal import (
    HedgeFields,
    PrimalError,
    bank_baum_approx,
    forward_state,
    hedge_along,
    minimal_superhedge_price,
    moving_average,
    superhedge_report,
    write_superhedge_report,
)

UVM = G.uvm(1.0, 2.0)
CC = ControlClass((1.0, 4.0))


@pytest.fixture(scope="module")
def call_setup():
    # 1000 steps keep the discrete hedging error well under the 0.05 margin
    lat = Lattice.cfl_tied(4.0, 319, 1000)
    vf = dual_value_dp(lat, CC, UVM, P.call())
    return lat, vf, HedgeFields.from_value_field(vf)


def test_zero_hedge_keeps_wealth_constant():
    lat = Lattice.cfl_tied(4.0, 41, 20)
    b = sample_control_paths(2.0, 100, 20, seed=0)
    for mode in ("primal", "relaxed", "further"):
        res = forward_state(0.7, HedgeFields.zero(lat), UVM, b, mode)
        np.testing.assert_array_equal(res.y, 0.7)


def test_linear_generator_grows_at_the_rate():
    lat = Lattice.cfl_tied(1.0, 41, 100)
    b = sample_control_paths(1.0, 50, 100, seed=0)
    res = forward_state(math.exp(-0.1), HedgeFields.zero(lat), G.linear(0.1, 1.0), b)
    np.testing.assert_allclose(res.y1, 1.0, atol=1e-3)


def test_hedged_call_mean_gap(call_setup):
    lat, vf, hedge = call_setup
    b = sample_control_paths(4.0, 5000, lat.n_steps, seed=1)
    res = forward_state(vf.v0, hedge, UVM, b)
    gap = res.y1 - P.call().on_paths(b.values)
    assert -0.01 <= gap.mean() <= 0.03
    assert res.clamped == 0


def test_report_above_and_below_the_price(call_setup):
    lat, vf, hedge = call_setup
    family = (1.0, 4.0, Schedule((0.0, 0.5), (1.0, 4.0)))
    rep = superhedge_report(vf.v0 + 0.05, hedge, UVM, P.call(), family, n_paths=2000, seed=2, tol=0.02)
    assert rep.passed and rep.overall >= 0.99
    assert len(rep.rows) == 3
    low = superhedge_report(vf.v0 - 0.2, hedge, UVM, P.call(), (4.0,), n_paths=2000, seed=2, tol=0.02)
    assert not low.passed and low.rows[0].pass_fraction < 0.99


def test_zero_claim_is_superhedged_by_nothing():
    lat = Lattice.cfl_tied(4.0, 41, 20)
    rep = superhedge_report(0.0, HedgeFields.zero(lat), UVM, P.constant(0.0), (1.0, 4.0), n_paths=500, tol=0.0)
    assert rep.overall == 1.0 and rep.mixture == 1.0


def test_relaxed_and_further_dominate_primal(call_setup):
    lat, vf, hedge = call_setup
    b = sample_control_paths(Schedule((0.0, 0.5), (4.0, 1.0)), 2000, lat.n_steps, seed=3)
    along = hedge_along(hedge, b)
    prim = forward_state(vf.v0, hedge, UVM, b, "primal", along=along).y1
    relx = forward_state(vf.v0, hedge, UVM, b, "relaxed", along=along).y1
    furt = forward_state(vf.v0, hedge, UVM, b, "further", along=along).y1
    assert np.all(relx - prim >= -1e-12)
    assert np.all(furt - relx >= -1e-12)


def test_relaxed_eps_check():
    H, F = G.quadratic_H(1.0, 0.0)
    coarse = G.custom(H, -10.0, 10.0, n_gamma=5, closed_F=F)
    lat = Lattice.cfl_tied(4.0, 41, 20)
    b = sample_control_paths(2.37, 10, 20, seed=0)
    with pytest.raises(PrimalError, match="misses the conjugate"):
        forward_state(0.0, HedgeFields.zero(lat), coarse, b, "relaxed", eps=1e-3)
    fine = G.custom(H, -10.0, 10.0, n_gamma=401, closed_F=F)
    forward_state(0.0, HedgeFields.zero(lat), fine, b, "relaxed", eps=1e-3)


def test_minimal_price_brackets_the_dual_value(call_setup):
    lat, vf, hedge = call_setup
    y = minimal_superhedge_price(hedge, UVM, P.call(), (4.0,), vf.v0 - 0.1, vf.v0 + 0.3, n_paths=1000, tol=0.02, xtol=1e-3)
    assert vf.v0 - 0.1 < y < vf.v0 + 0.3
    with pytest.raises(PrimalError, match="lower bracket"):
        minimal_superhedge_price(hedge, UVM, P.call(), (4.0,), vf.v0 + 0.3, vf.v0 + 0.4, n_paths=500, tol=0.02)


def test_errors(call_setup):
    lat, vf, hedge = call_setup
    b = sample_control_paths(1.0, 10, 10, seed=0)
    with pytest.raises(PrimalError, match="steps"):
        forward_state(0.0, hedge, UVM, b)
    with pytest.raises(PrimalError, match="mode"):
        forward_state(0.0, HedgeFields.zero(Lattice.cfl_tied(1.0, 11, 10)), UVM, b, "dual")
    with pytest.raises(PrimalError, match="empty"):
        superhedge_report(0.0, hedge, UVM, P.call(), ())


def test_write_report(tmp_path):
    lat = Lattice.cfl_tied(4.0, 41, 20)
    rep = superhedge_report(0.0, HedgeFields.zero(lat), UVM, P.constant(0.0), (1.0, 4.0), n_paths=100)
    write_superhedge_report(rep, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "control_id,pass_fraction,min_gap,p05_gap" and len(lines) == 3


# --- finite-variation approximation ------------------------------------------


def driver(n=1000, seed=0):
    db = np.random.default_rng(seed).standard_normal(n) / math.sqrt(n)
    return SamplePath.uniform(np.concatenate([[0.0], np.cumsum(db)])[:, None])


def test_moving_average_of_constant():
    z = SamplePath.uniform(np.full((1001, 1), 2.0), anchored=False)
    approx = moving_average(z, 10)
    # Z = 0 before the start, so the average ramps up over the first 1/n
    np.testing.assert_allclose(approx.values[100:, 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(approx.values[:101, 0], 2.0 * 10 * z.grid[:101], atol=1e-12)


def test_zero_integrand():
    res = bank_baum_approx(SamplePath.uniform(np.zeros((1001, 1)), anchored=False), driver(), 20)
    assert res.deviation == 0.0 and res.total_variation == 0.0


def test_approximation_improves_with_n():
    b = driver(4096, seed=4)
    z = SamplePath.uniform(np.sign(b.values), anchored=False)
    devs = [bank_baum_approx(z, b, n).deviation for n in (4, 16, 64)]
    assert devs[2] < devs[0]
    res = bank_baum_approx(z, b, 16)
    assert math.isfinite(res.total_variation) and res.total_variation <= 2 * 2 * 16 + 2


def test_bank_baum_errors():
    z = SamplePath.uniform(np.zeros((11, 1)), anchored=False)
    with pytest.raises(PrimalError, match="share a grid"):
        bank_baum_approx(z, driver(20), 5)
    with pytest.raises(PrimalError):
        moving_average(z, 0.5)
