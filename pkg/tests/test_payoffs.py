import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualtarget import payoffs as P
from dualtarget.paths import SamplePath

paths = st.lists(st.floats(-5, 5), min_size=2, max_size=20).map(lambda v: np.array([0.0] + v[1:]))


def test_named_payoffs():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    np.testing.assert_array_equal(P.call(0.0).at_terminal(x), [0, 0, 0, 0.5, 2.0])
    np.testing.assert_array_equal(P.put(0.0).at_terminal(x), [2.0, 0.5, 0, 0, 0])
    np.testing.assert_array_equal(P.neg_square().at_terminal(x), -(x**2))
    np.testing.assert_array_equal(P.constant(1.5).at_terminal(x), 1.5)


def test_table_interpolates():
    t = P.table([-1.0, 0.0, 1.0], [0.0, 1.0, 0.0])
    assert t.at_terminal(np.array([0.5]))[0] == pytest.approx(0.5)


def test_path_dependent_payoff_rejects_terminal():
    with pytest.raises(ValueError):
        P.running_max().at_terminal(np.zeros(3))


@pytest.mark.parametrize(
    "payoff",
    [P.call(0.3), P.put(-0.2), P.butterfly(0.0, 1.0), P.running_max(1.0), P.average(2.0), P.linear_payoff(-0.7)],
    ids=lambda p: p.name,
)
@given(paths, paths)
def test_lipschitz_in_sup_norm(payoff, u, v):
    n = min(len(u), len(v))
    p, q = SamplePath.uniform(u[:n]), SamplePath.uniform(v[:n])
    gap = abs(payoff(p) - payoff(q))
    assert gap <= payoff.modulus(float(np.max(np.abs(p.values - q.values)))) + 1e-12
