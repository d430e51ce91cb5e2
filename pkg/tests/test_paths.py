import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualtarget.lattice import gaussian_stream
from dualtarget.paths import (
    MatrixPath,
    PathError,
    SamplePath,
    brownian_extract,
    concat_shift,
    density_estimate,
    pathwise_integral,
    quadratic_variation,
    read_csv,
    scale,
    split,
    write_csv,
)


def brownian(n, a=1.0, seed=0, stream=0):
    dt = 1.0 / n
    x = np.concatenate([[0.0], np.cumsum(math.sqrt(a * dt) * gaussian_stream(seed, 0, n, stream))])
    return SamplePath(np.linspace(0, 1, n + 1), x)


int_paths = st.lists(st.integers(-50, 50), min_size=2, max_size=30).map(
    lambda v: np.concatenate([[0.0], np.cumsum(v[1:])]).astype(float)
)


# --- construction -----------------------------------------------------------


def test_path_must_start_at_zero():
    with pytest.raises(PathError):
        SamplePath([0, 0.5, 1], [1.0, 2.0, 3.0])
    SamplePath([0, 0.5, 1], [1.0, 2.0, 3.0], anchored=False)


def test_grid_must_increase():
    with pytest.raises(PathError):
        SamplePath([0, 0.5, 0.5], [0.0, 1.0, 2.0])
    with pytest.raises(PathError):
        SamplePath([0, 0.5, 1.5], [0.0, 1.0, 2.0])


def test_non_finite_rejected():
    with pytest.raises(PathError):
        SamplePath([0, 1], [0.0, np.nan])


# --- integral ---------------------------------------------------------------


def test_unit_integrand_telescopes():
    b = brownian(200, seed=4)
    one = SamplePath(b.grid, np.ones(201), anchored=False)
    out = pathwise_integral(one, b)
    np.testing.assert_allclose(out.values, b.values, atol=1e-12)


def test_integral_of_b_db():
    b = brownian(500, seed=1)
    lhs = 2 * pathwise_integral(SamplePath(b.grid, b.values), b).values[:, 0]
    sq = np.concatenate([[0.0], np.cumsum(np.diff(b.values[:, 0]) ** 2)])
    rhs = b.values[:, 0] ** 2 - sq
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_left_riemann_sum_of_t_dt():
    n = 1000
    grid = np.linspace(0, 1, n + 1)
    out = pathwise_integral(SamplePath(grid, grid), SamplePath(grid, grid))
    # sum_k t_k * dt = (1 - dt) / 2
    assert out.values[-1, 0] == pytest.approx(0.4995, abs=1e-12)


def test_integral_grid_mismatch():
    b = brownian(10)
    with pytest.raises(PathError):
        pathwise_integral(SamplePath(np.linspace(0, 1, 12), np.zeros(12)), b)


def test_integral_dimension_mismatch():
    b = brownian(10)
    z = SamplePath(b.grid, np.zeros((11, 2)))
    with pytest.raises(PathError):
        pathwise_integral(z, b)


# --- quadratic variation ----------------------------------------------------


def test_qv_of_linear_path():
    grid = np.linspace(0, 1, 101)
    qv = quadratic_variation(SamplePath(grid, grid))
    assert qv.values[-1, 0, 0] == pytest.approx(0.01, abs=1e-15)


def test_qv_of_constant_path():
    qv = quadratic_variation(SamplePath(np.linspace(0, 1, 11), np.zeros(11)))
    assert np.all(qv.values == 0)


def test_qv_of_brownian_path():
    qv = quadratic_variation(brownian(100_000, a=4.0, seed=12))
    assert 3.8 <= qv.values[-1, 0, 0] <= 4.2


@given(int_paths)
def test_qv_equals_running_sum_of_squares(v):
    p = SamplePath.uniform(v)
    qv = quadratic_variation(p).values[:, 0, 0]
    ref = np.concatenate([[0.0], np.cumsum(np.diff(v) ** 2)])
    np.testing.assert_array_equal(qv, ref)


def test_qv_symmetric_and_psd_increments():
    rng = np.random.default_rng(0)
    x = np.vstack([np.zeros(3), np.cumsum(rng.standard_normal((50, 3)), axis=0)])
    qv = quadratic_variation(SamplePath.uniform(x)).values
    np.testing.assert_array_equal(qv, np.transpose(qv, (0, 2, 1)))
    for inc in np.diff(qv, axis=0):
        assert np.linalg.eigvalsh(inc).min() >= -1e-12


# --- density estimate -------------------------------------------------------


def test_density_of_linear_qv():
    grid = np.linspace(0, 1, 101)
    ahat = density_estimate(MatrixPath(grid, 4 * grid), 0.05)
    np.testing.assert_allclose(ahat.values[:, 0, 0], 4.0, rtol=1e-12)


def test_density_of_zero_qv():
    grid = np.linspace(0, 1, 11)
    assert np.all(density_estimate(MatrixPath(grid, np.zeros(11)), 0.2).values == 0)


def test_density_truncates_window_near_origin():
    grid = np.linspace(0, 1, 11)
    qv = MatrixPath(grid, grid**2)
    ahat = density_estimate(qv, 0.5).values[:, 0, 0]
    # t = 0.3 < window: quotient over [0, 0.3]
    assert ahat[3] == pytest.approx(0.09 / 0.3, rel=1e-12)
    # t = 0.8: quotient over [0.3, 0.8]
    assert ahat[8] == pytest.approx((0.64 - 0.09) / 0.5, rel=1e-12)


def test_density_rejects_bad_window():
    grid = np.linspace(0, 1, 11)
    with pytest.raises(PathError):
        density_estimate(MatrixPath(grid, grid), 0.0)
    with pytest.raises(PathError):
        density_estimate(MatrixPath(grid, grid), 0.01)


def test_density_of_unit_brownian_over_seeds():
    hits = 0
    n_seeds = 200
    for s in range(n_seeds):
        qv = quadratic_variation(brownian(100_000, a=1.0, seed=s, stream=3))
        a = density_estimate(qv, 0.05).values[50_000, 0, 0]
        hits += 0.8 <= a <= 1.2
    # sd of the estimate is sqrt(2 / 5000) = 0.02, so 0.2 is ten sd
    assert hits / n_seeds >= 0.99


# --- extraction -------------------------------------------------------------


def test_extract_constant_density():
    b = brownian(100, seed=2)
    w = brownian_extract(b, MatrixPath.constant(b.grid, 4.0))
    np.testing.assert_allclose(w.values, b.values / 2, atol=1e-15)


def test_extract_identity_density():
    b = brownian(100, seed=2)
    w = brownian_extract(b, MatrixPath.constant(b.grid, 1.0))
    np.testing.assert_allclose(w.values, b.values, atol=1e-15)


def test_extract_round_trip_alpha_9():
    w = brownian(1000, seed=8)
    x = SamplePath(w.grid, 3.0 * w.values)
    back = brownian_extract(x, MatrixPath.constant(w.grid, 9.0))
    np.testing.assert_allclose(back.values, w.values, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.integers(0, 1000))
def test_extract_round_trip_spd(entries, seed):
    m = np.array(entries).reshape(2, 2)
    a = m @ m.T + 0.5 * np.eye(2)
    rng = np.random.default_rng(seed)
    w = SamplePath.uniform(np.vstack([np.zeros(2), np.cumsum(rng.standard_normal((40, 2)), axis=0)]))
    back = brownian_extract(scale(w, a), MatrixPath.constant(w.grid, a))
    np.testing.assert_allclose(back.values, w.values, atol=1e-12)


def test_extract_names_singular_node():
    b = brownian(10)
    dens = np.ones(11)
    dens[4] = 0.0
    with pytest.raises(PathError, match="node 4"):
        brownian_extract(b, MatrixPath(b.grid, dens))


def test_extract_names_non_psd_node_2d():
    w = SamplePath.uniform(np.vstack([np.zeros(2), np.ones((3, 2))]))
    dens = np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
    dens[2] = [[1.0, 2.0], [2.0, 1.0]]
    with pytest.raises(PathError, match="node 2"):
        brownian_extract(w, MatrixPath(w.grid, dens))


# --- concatenation ----------------------------------------------------------


def test_concat_additive_shift():
    pre = SamplePath(np.linspace(0, 0.5, 3), np.linspace(0, 0.5, 3))
    suf = SamplePath(np.linspace(0.5, 1, 3), np.linspace(0, 0.5, 3))
    joined, _ = concat_shift(pre, suf)
    assert joined.values[3, 0] == pytest.approx(0.75)


def test_concat_zero_suffix_freezes():
    pre = SamplePath(np.linspace(0, 0.5, 3), [0.0, 0.4, -0.3])
    suf = SamplePath(np.linspace(0.5, 1, 4), np.zeros(4))
    joined, _ = concat_shift(pre, suf)
    assert np.all(joined.values[2:, 0] == -0.3)


def test_concat_shifted_functional():
    pre = SamplePath([0, 0.3], [0.0, 0.3])
    suf = SamplePath([0.3, 1.0], [0.0, 0.2])
    _, val = concat_shift(pre, suf, lambda p: p.values[-1, 0])
    assert val == pytest.approx(0.5)


def test_concat_errors():
    pre = SamplePath([0, 0.5], [0.0, 1.0])
    with pytest.raises(PathError):
        concat_shift(pre, SamplePath([0.6, 1.0], [0.0, 1.0]))
    with pytest.raises(PathError):
        concat_shift(pre, SamplePath([0.5, 1.0], [1.0, 1.0], anchored=False))


@given(int_paths, int_paths, int_paths)
def test_concat_associative(a, b, c):
    na, nb, nc = len(a), len(b), len(c)
    s, t = 0.25, 0.6
    p = SamplePath(np.linspace(0, s, na), a)
    q = SamplePath(np.linspace(s, t, nb), b)
    r = SamplePath(np.linspace(t, 1, nc), c)
    left, _ = concat_shift(concat_shift(p, q)[0], r)
    right, _ = concat_shift(p, concat_shift(q, r)[0])
    np.testing.assert_array_equal(left.grid, right.grid)
    np.testing.assert_array_equal(left.values, right.values)


@given(int_paths, st.data())
def test_shift_consistency(v, data):
    p = SamplePath.uniform(v)
    k = data.draw(st.integers(0, len(v) - 1))
    prefix, suffix = split(p, p.grid[k])
    xi = lambda q: float(np.max(q.values) - q.values[-1, 0])  # noqa: E731
    _, val = concat_shift(prefix, suffix, xi)
    assert val == xi(p)


def test_split_requires_grid_node():
    with pytest.raises(PathError):
        split(brownian(10), 0.55)


# --- csv --------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    p = SamplePath.uniform(np.vstack([np.zeros(2), rng.standard_normal((20, 2))]))
    write_csv(p, tmp_path / "p.csv")
    q = read_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(p.grid, q.grid)
    np.testing.assert_array_equal(p.values, q.values)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,x1,x2"
