import itertools
import math

import numpy as np
import pytest
from scipy import stats

from mocahesp.acquisition import (
    CandidatePool,
    default_pool_size,
    ei_from_moments,
    expected_improvement,
    interleaved_search,
    local_search,
    neighbours,
    thompson_indices,
    thompson_select,
)
from mocahesp.space import MixedSpace, VariableSpec
from mocahesp.surrogate import MATERN52, KernelSpec, build_model, posterior


def small_model(noise=1e-3, values=(1.0, 0.2, 0.7), ls=0.3):
    X = np.array([[0.0], [0.5], [1.0]])[: len(values)]
    return build_model(KernelSpec(MATERN52, [ls]), noise, X, list(values))


def test_pool_size_default():
    assert default_pool_size(20) == 2000
    assert default_pool_size(125) == 5000


def test_pool_validation():
    with pytest.raises(ValueError):
        CandidatePool(np.zeros((2, 1)), np.zeros((3, 1)))
    pool = CandidatePool(np.zeros((3, 1)), np.arange(3.0)[:, None])
    assert len(pool) == 3 and len(pool.subset([0, 2])) == 2


# --------------------------------------------------------------------------- Thompson sampling


def test_ts_pool_of_one():
    model = small_model()
    pool = CandidatePool([[0.3]], [[0.3]])
    for seed in range(10):
        np.testing.assert_array_equal(thompson_select(model, pool, 1, np.random.default_rng(seed)), [[0.3]])


def test_ts_zero_variance_returns_training_argmin():
    X = np.array([[0.0], [0.4], [1.0]])
    y = np.array([3.0, -1.0, 2.0])
    model = build_model(KernelSpec(MATERN52, [0.2]), 1e-12, X, y)
    pool = CandidatePool(X, X)
    for seed in range(20):
        assert thompson_indices(model, pool, 1, np.random.default_rng(seed))[0] == 1


def test_ts_count_and_distinct():
    model = small_model()
    Q = np.linspace(0, 1, 9)[:, None]
    idx = thompson_indices(model, CandidatePool(Q, Q), 5, np.random.default_rng(0))
    assert len(set(idx.tolist())) == 5
    with pytest.raises(ValueError):
        thompson_indices(model, CandidatePool(Q, Q), 10, np.random.default_rng(0))


def test_ts_two_point_frequency_matches_normal_difference():
    model = small_model(noise=1e-2)
    Q = np.array([[0.25], [0.8]])
    mean, cov = posterior(model, Q)
    sd = math.sqrt(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1])
    want = stats.norm.cdf((mean[1] - mean[0]) / sd)
    pool = CandidatePool(Q, Q)
    rng = np.random.default_rng(0)
    hits = sum(thompson_indices(model, pool, 1, rng)[0] == 0 for _ in range(10_000))
    assert abs(hits / 10_000 - want) <= 0.02


def test_ts_scale_equivariant():
    X = np.array([[0.0], [0.3], [0.55], [1.0]])
    y = np.array([1.0, 0.4, 0.9, -0.2])
    Q = np.linspace(0, 1, 15)[:, None]
    pool = CandidatePool(Q, Q)
    base = build_model(KernelSpec(MATERN52, [0.25]), 1e-3, X, y)
    for a, b in ((3.0, 0.0), (0.01, 5.0), (250.0, -40.0)):
        scaled = build_model(KernelSpec(MATERN52, [0.25]), 1e-3, X, a * y + b)
        for seed in range(10):
            i = thompson_indices(base, pool, 3, np.random.default_rng(seed))
            j = thompson_indices(scaled, pool, 3, np.random.default_rng(seed))
            np.testing.assert_array_equal(i, j)


# --------------------------------------------------------------------------- EI


def test_ei_examples():
    assert ei_from_moments(1.0, 0.0, 1.0) == 0.0
    assert ei_from_moments(2.0, 0.0, 1.0) == 0.0
    assert ei_from_moments(0.0, 0.0, 1.0) == 1.0
    assert float(ei_from_moments(1.0, 1.0, 1.0)) == pytest.approx(0.39894, abs=1e-5)
    assert float(ei_from_moments(1.0, 1.0, 1.0)) == pytest.approx(stats.norm.pdf(0), rel=1e-14)


def test_ei_monotone_in_sigma_and_nonnegative():
    s = np.linspace(0.0, 5.0, 200)
    for mu in (0.0, 0.5, 3.0):
        ei = ei_from_moments(np.full_like(s, mu), s, 0.0)
        assert np.all(np.diff(ei) >= 0)
    rng = np.random.default_rng(0)
    ei = ei_from_moments(rng.normal(size=1000) * 10, rng.uniform(0, 3, 1000), 0.3)
    assert np.all(ei >= 0)


def test_ei_against_numeric_integration():
    from scipy import integrate
    for mu, sd, inc in ((0.3, 0.7, 0.0), (-1.0, 2.0, 0.5), (2.0, 0.4, 1.0)):
        num, _ = integrate.quad(lambda f: max(inc - f, 0.0) * stats.norm.pdf(f, mu, sd), mu - 12 * sd, mu + 12 * sd,
                                points=[inc], limit=200)
        assert float(ei_from_moments(mu, sd, inc)) == pytest.approx(num, abs=1e-9)


def test_ei_zero_at_noise_free_training_points():
    model = small_model(noise=1e-12)
    ei = expected_improvement(model, model.train_inputs, incumbent=0.2)
    assert np.all(ei <= 1e-6)
    assert isinstance(expected_improvement(model, [0.3], 0.2), float)


# --------------------------------------------------------------------------- local and interleaved search


def test_neighbours_of_mixed_point():
    sp = MixedSpace((VariableSpec.categorical("abc"), VariableSpec.continuous(0, 1)))
    nb = neighbours([0.0, 0.5], sp)
    assert {tuple(r) for r in nb} == {(1.0, 0.5), (2.0, 0.5), (0.0, 0.4), (0.0, 0.6)}


def test_local_search_budget_zero_returns_start():
    sp = MixedSpace.categorical(3, 2)
    p, v = local_search(lambda X: np.sum(X, 1), [0.0, 1.0, 0.0], sp, budget=0)
    np.testing.assert_array_equal(p, [0.0, 1.0, 0.0])
    assert math.isnan(v)


def test_local_search_linear_on_binary_cube():
    sp = MixedSpace.categorical(3, 2)
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.normal(size=3)
        acq = lambda X, w=w: np.atleast_2d(X) @ w
        verts = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
        best = verts[np.argmax(verts @ w)]
        start = verts[rng.integers(8)]
        p, v = local_search(acq, start, sp, budget=100)
        np.testing.assert_array_equal(p, best)
        assert v >= acq(start[None])[0]


def test_local_search_visits_only_feasible_points():
    sp = MixedSpace((VariableSpec.categorical(range(4)), VariableSpec.categorical(range(4)),
                     VariableSpec.continuous(-1, 1)))
    rng = np.random.default_rng(2)
    for _ in range(20):
        center = np.array([float(rng.integers(4)), float(rng.integers(4)), rng.uniform(-0.5, 0.5)])
        feasible = lambda X, c=center: (np.count_nonzero(X[:, :2] != c[:2], axis=1) <= 1) & (np.abs(X[:, 2] - c[2]) <= 0.35)
        seen = []
        w = rng.normal(size=3)

        def acq(X, w=w):
            X = np.atleast_2d(X)
            seen.append(X.copy())
            return X @ w

        p, v = local_search(acq, center, sp, budget=60, feasible=feasible, rng=rng)
        assert np.all(feasible(np.vstack(seen)))
        assert v >= acq(center[None])[0]


def _toy_space():
    return MixedSpace((VariableSpec.categorical("01"), VariableSpec.categorical("01"), VariableSpec.continuous(0, 1)))


def test_interleaved_separable_toy():
    sp = _toy_space()
    a = {(0, 0): 0.0, (0, 1): 0.4, (1, 0): 1.0, (1, 1): 0.3}
    b = lambda x: -(x - 0.7) ** 2
    acq = lambda X: np.array([a[(int(r[0]), int(r[1]))] + b(r[2]) for r in np.atleast_2d(X)])
    grid_x = np.round(np.linspace(0, 1, 11), 10)
    h_star = max(a, key=a.get)
    x_star = grid_x[np.argmax([b(x) for x in grid_x])]
    pool = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.5], [1.0, 1.0, 0.2]])
    p, v = interleaved_search(acq, pool, pool[0], sp, rounds=3, rng=np.random.default_rng(0))
    assert (int(p[0]), int(p[1])) == h_star
    assert p[2] == pytest.approx(x_star, abs=1e-9)
    assert v == pytest.approx(a[h_star] + b(x_star))


def test_interleaved_zero_rounds_and_monotone():
    sp = _toy_space()
    rng = np.random.default_rng(3)
    w = rng.normal(size=3)
    acq = lambda X: np.atleast_2d(X) @ w
    pool = np.column_stack([rng.integers(0, 2, (10, 2)), rng.uniform(size=10)])
    p0, v0 = interleaved_search(acq, pool, pool[0], sp, rounds=0)
    assert v0 == pytest.approx(acq(pool).max())
    p, v = interleaved_search(acq, pool, pool[0], sp, rounds=2, rng=rng)
    assert v >= v0


def test_interleaved_respects_feasibility():
    sp = _toy_space()
    rng = np.random.default_rng(4)
    feasible = lambda X: np.atleast_2d(X)[:, 2] <= 0.45
    seen = []

    def acq(X):
        X = np.atleast_2d(X)
        seen.append(X.copy())
        return X[:, 2] + X[:, 0]

    pool = np.column_stack([rng.integers(0, 2, (6, 2)), rng.uniform(0, 0.4, 6)])
    p, _ = interleaved_search(acq, pool, pool[0], sp, rounds=2, feasible=feasible, rng=rng)
    assert feasible(p[None])[0]
    assert np.all(feasible(np.vstack(seen)))


def test_interleaved_needs_mixed_space():
    with pytest.raises(ValueError):
        interleaved_search(lambda X: np.zeros(len(X)), [[0.0, 1.0]], [0.0, 1.0], MixedSpace.categorical(2, 2))
