import math

import numpy as np
import pytest
from scipy.stats import kstest

from rbmkpz.dynamics import (
    burke_check,
    evolve_skorokhod,
    evolve_truncated_infinite,
    exit_point,
    rescaled_samples,
    scaled_index,
    variational_value,
)
from rbmkpz.paths import TimeGrid, make_initial_condition, sample_paths


def _evolved(flavor, seed, window=(1, 8), t_end=2.0, n_steps=400, **kw):
    grid = TimeGrid(t_end=t_end, n_steps=n_steps)
    ic = make_initial_condition(flavor, {}, window, seed)
    p = sample_paths(seed, grid, window, replica=0)
    return evolve_skorokhod(ic, p, **kw)


def test_ordering_invariant():
    traj = _evolved("packed", 4)
    assert np.all(np.diff(traj.x, axis=0) >= 0.0)


def test_initial_values():
    traj = _evolved("half-flat", 5)
    np.testing.assert_allclose(traj.x[:, 0], np.arange(1.0, 9.0))


def test_leftmost_particle_is_free_bm():
    grid = TimeGrid(t_end=1.0, n_steps=100)
    ic = make_initial_condition("packed", {}, (1, 3), 6)
    p = sample_paths(6, grid, (1, 3), replica=0)
    traj = evolve_skorokhod(ic, p)
    np.testing.assert_allclose(traj.x[0], p.path(1), atol=1e-14)


def test_leftmost_drift():
    grid = TimeGrid(t_end=1.0, n_steps=100)
    ic = make_initial_condition("stat-flat", {"rho": 0.5}, (1, 2), 6)
    p = sample_paths(6, grid, (1, 2), replica=0)
    traj = evolve_skorokhod(ic, p, leftmost_drift=0.5)
    np.testing.assert_allclose(traj.x[0], 1.0 + p.path(1) + 0.5 * grid.times(),
                               atol=1e-12)


def test_variational_identity():
    # the Skorokhod sweep and the last-passage dynamic program compute the
    # same quantity pathwise (without bridge correction)
    grid = TimeGrid(t_end=1.5, n_steps=300)
    for seed in (0, 1, 2):
        ic = make_initial_condition("half-flat", {}, (1, 6), seed)
        p = sample_paths(seed, grid, (1, 6), replica=0)
        traj = evolve_skorokhod(ic, p)
        for n in (3, 6):
            lpp = variational_value(p, ic, 1, n, 1.5)
            assert traj.at(n, 300) == pytest.approx(lpp, abs=1e-10)


def test_bridge_correction_raises_values():
    a = _evolved("packed", 9)
    b = _evolved("packed", 9, bridge_correction=True)
    assert np.all(b.x[:, -1] >= a.x[:, -1] - 1e-12)
    assert np.any(b.x[:, -1] > a.x[:, -1])


def test_evolve_rejects_mismatched_windows():
    grid = TimeGrid(t_end=1.0, n_steps=10)
    ic = make_initial_condition("packed", {}, (1, 3), 0)
    p = sample_paths(0, grid, (1, 4), replica=0)
    with pytest.raises(ValueError):
        evolve_skorokhod(ic, p)


def test_scaled_index():
    assert scaled_index(25.0, 0.0) == 25
    assert scaled_index(25.0, 1.0) == 25 + int(2 * 25 ** (2.0 / 3.0))
    assert scaled_index(100.0, 0.0, theta=7.0) == 107


def test_evolve_truncated_infinite_converges():
    grid = TimeGrid(t_end=1.0, n_steps=200)
    val, M, ok = evolve_truncated_infinite("flat", {}, 3, grid, 2, 1.0)
    assert ok
    # flat data: contributions from far-left particles are suppressed
    assert M <= 4096
    assert np.isfinite(val)


def test_exit_point_in_range():
    grid = TimeGrid(t_end=1.0, n_steps=200)
    p = sample_paths(1, grid, (0, 4), replica=0)
    rec = exit_point(p, 1.0, 3, 1.0)
    assert 0.0 <= rec.Z <= rec.t


def test_rescaled_samples_shape_and_reproducibility():
    a = rescaled_samples("packed", 8.0, [0.0, 0.5], n_samples=3, seed=12)
    b = rescaled_samples("packed", 8.0, [0.0, 0.5], n_samples=3, seed=12)
    assert len(a) == 3 and len(a[0]) == 2
    assert all(x.value == y.value for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def test_single_particle_marginal_is_gaussian():
    # x_1(t) for packed is a free BM: its rescaled law is exactly known
    t = 4.0
    grid = TimeGrid(t_end=t, n_steps=400)
    vals = []
    for rep in range(800):
        p = sample_paths(21, grid, (1, 1), replica=rep)
        vals.append(p.path(1)[-1])
    stat, pval = kstest(np.array(vals) / math.sqrt(t), "norm")
    assert pval > 1e-3


def test_burke_check_statistics():
    st = burke_check(seed=5, rho=1.0, t=10.0, n_samples=5000)
    assert abs(st["sup_mean"] - st["sup_mean_target"]) < 0.1 * st["sup_mean_target"]
    assert st["gaps_ks"] <= 2.0 * st["gaps_dkw99"]
    assert abs(st["departure_var"] - st["departure_var_target"]) \
        <= 0.1 * st["departure_var_target"]


def test_burke_check_rejects_bad_rho():
    with pytest.raises(ValueError):
        burke_check(seed=0, rho=0.0, t=1.0, n_samples=10)
