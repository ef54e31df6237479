import math

import numpy as np
import pytest
from scipy import stats

from mocahesp.surrogate import (
    BOUNCE,
    COCABO,
    MATERN52,
    OVERLAP,
    KernelSpec,
    build_model,
    fit,
    kernel_matern52_ard,
    kernel_matrix,
    kernel_mixed,
    kernel_transformed_overlap,
    log_marginal_likelihood,
    one_hot,
    pack,
    posterior,
    standardize,
)

from oracles import matern52_1d, two_point_posterior


def matern(dim, ls=1.0, sv=1.0):
    return KernelSpec(MATERN52, np.full(dim, ls), sv)


# --------------------------------------------------------------------------- kernels


def test_matern_examples():
    spec = matern(1)
    assert kernel_matern52_ard([0.3], [0.3], KernelSpec(MATERN52, [1.0], 2.5)) == pytest.approx(2.5)
    assert kernel_matern52_ard([0.0], [1.0], spec) == pytest.approx(0.52399, abs=1e-5)
    assert kernel_matern52_ard([0.0], [1.0], spec) == pytest.approx(matern52_1d(1.0), rel=1e-12)
    assert kernel_matern52_ard([0.0], [1e4], spec) < 1e-300 + 1e-12


def test_matern_ard_scaling():
    spec = KernelSpec(MATERN52, [2.0, 0.5], 1.3)
    r = math.sqrt((1.0 / 2.0) ** 2 + (0.25 / 0.5) ** 2)
    assert kernel_matern52_ard([0.0, 0.0], [1.0, 0.25], spec) == pytest.approx(1.3 * matern52_1d(r), rel=1e-12)


def test_overlap_examples():
    spec = KernelSpec(OVERLAP, [0.7, 0.7, 0.7], 1.5, n_comb=3)
    assert kernel_transformed_overlap([0, 1, 2], [0, 1, 2], spec) == pytest.approx(1.5)
    assert kernel_transformed_overlap([0, 1, 2], [1, 0, 0], spec) == pytest.approx(1.5 * math.exp(-0.7))


def test_overlap_matrix_agrees_with_pairwise():
    rng = np.random.default_rng(0)
    spec = KernelSpec(OVERLAP, rng.uniform(0.1, 3, 4), 0.8, n_comb=4, n_categories=(3, 2, 4, 3))
    H = np.column_stack([rng.integers(0, c, 12) for c in (3, 2, 4, 3)]).astype(float)
    K = kernel_matrix(spec, H, H)
    for i in range(12):
        for j in range(12):
            assert K[i, j] == pytest.approx(kernel_transformed_overlap(H[i], H[j], spec), rel=1e-12)


def test_overlap_monotone_in_matches():
    rng = np.random.default_rng(1)
    spec = KernelSpec(OVERLAP, rng.uniform(0.1, 3, 5), 1.0, n_comb=5)
    a = np.zeros(5)
    b = np.ones(5)
    prev = kernel_transformed_overlap(a, b, spec)
    for j in range(5):
        b[j] = 0
        cur = kernel_transformed_overlap(a, b, spec)
        assert cur >= prev
        prev = cur


@pytest.mark.parametrize("variant", [COCABO, BOUNCE])
def test_mixed_reductions(variant):
    rng = np.random.default_rng(2)
    for _ in range(20):
        xa, xb = rng.uniform(size=2), rng.uniform(size=2)
        ha, hb = rng.integers(0, 3, 3).astype(float), rng.integers(0, 3, 3).astype(float)
        ls = rng.uniform(0.2, 2, 5)
        base = dict(n_comb=3, n_categories=(3, 3, 3))
        if variant == COCABO:
            kh_spec = KernelSpec(OVERLAP, ls[:3], 1.0, n_comb=3, n_categories=(3, 3, 3))
            kh = kernel_matrix(kh_spec, ha[None], hb[None])[0, 0]
            assert kh == pytest.approx(kernel_transformed_overlap(ha, hb, kh_spec), rel=1e-14)
        else:
            kh = kernel_matern52_ard(ha, hb, KernelSpec(MATERN52, ls[:3]))
        kx = kernel_matern52_ard(xa, xb, KernelSpec(MATERN52, ls[3:]))
        s0 = KernelSpec(variant, ls, 1.0, 0.0, **base)
        s1 = KernelSpec(variant, ls, 1.0, 1.0, **base)
        assert kernel_mixed(xa, ha, xb, hb, s0) == (kh + kx) / 2
        assert kernel_mixed(xa, ha, xb, hb, s1) == kh * kx
        sw = KernelSpec(variant, ls, 1.0, 0.3, **base)
        assert kernel_mixed(xa, ha, xa, ha, sw) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("variant", [MATERN52, OVERLAP, COCABO, BOUNCE])
def test_kernel_matrices_psd(variant):
    rng = np.random.default_rng(3)
    for _ in range(100):
        n, d_h, d_x = int(rng.integers(2, 15)), 3, 2
        H = rng.integers(0, 4, (n, d_h)).astype(float)
        X = rng.uniform(size=(n, d_x))
        if variant == MATERN52:
            A, spec = X, KernelSpec(MATERN52, rng.uniform(0.05, 3, d_x), rng.uniform(0.1, 3))
        elif variant == OVERLAP:
            A, spec = H, KernelSpec(OVERLAP, rng.uniform(0.05, 3, d_h), rng.uniform(0.1, 3), n_comb=d_h)
        else:
            A = np.hstack([H, X])
            spec = KernelSpec(variant, rng.uniform(0.05, 3, d_h + d_x), rng.uniform(0.1, 3),
                              rng.uniform(), n_comb=d_h, n_categories=(4, 4, 4))
        K = kernel_matrix(spec, A, A)
        assert np.allclose(K, K.T, atol=1e-14)
        assert np.linalg.eigvalsh(K + 1e-10 * np.eye(n)).min() >= -1e-12


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(MATERN52, [1.0, -1.0])
    with pytest.raises(ValueError):
        KernelSpec(COCABO, [1.0], mix_weight=1.5)
    with pytest.raises(ValueError):
        KernelSpec("rbf", [1.0])


def test_one_hot():
    np.testing.assert_array_equal(one_hot([[0, 2], [1, 0]], [2, 3]), [[1, 0, 0, 0, 1], [0, 1, 1, 0, 0]])


# --------------------------------------------------------------------------- likelihood and fit


@pytest.mark.parametrize("variant", [MATERN52, OVERLAP, COCABO, BOUNCE])
def test_lml_gradient_matches_central_differences(variant):
    rng = np.random.default_rng(4)
    for _ in range(5):
        if variant == MATERN52:
            X = rng.uniform(size=(5, 3))
            template = KernelSpec(MATERN52, np.ones(3))
        elif variant == OVERLAP:
            X = rng.integers(0, 3, (5, 3)).astype(float)
            template = KernelSpec(OVERLAP, np.ones(3), n_comb=3, n_categories=(3, 3, 3))
        else:
            X = np.hstack([rng.integers(0, 3, (5, 2)), rng.uniform(size=(5, 2))])
            template = KernelSpec(variant, np.ones(4), n_comb=2, n_categories=(3, 3))
        y = rng.normal(size=5)
        theta = pack(template, 1e-2)
        theta[: template.dim] = rng.uniform(-1, 1, template.dim)
        theta[-2] = rng.uniform(-0.5, 0.5)
        _, g = log_marginal_likelihood(theta, template, X, y)
        h = 1e-5
        for i in range(len(theta)):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd = (log_marginal_likelihood(tp, template, X, y, grad=False)
                  - log_marginal_likelihood(tm, template, X, y, grad=False)) / (2 * h)
            assert abs(g[i] - fd) <= 1e-4 * max(abs(fd), 1e-3)


def test_fit_interpolates_training_points():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(12, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    model = fit(X, y, MATERN52, np.random.default_rng(0))
    mean, var = posterior(model, X, full_cov=False)
    np.testing.assert_allclose(mean, y, atol=1e-6 * max(1.0, np.ptp(y)) + 3 * math.sqrt(model.noise_variance) * model.y_std)
    exact = build_model(model.kernel, 1e-12, X, y)
    m2, v2 = posterior(exact, X, full_cov=False)
    np.testing.assert_allclose(m2, y, atol=1e-6)
    assert np.all(v2 <= 1e-8)
    assert np.all(var >= 0)


def test_duplicate_conflicting_point_forces_noise():
    X = np.array([[0.2], [0.2], [0.8]])
    y = np.array([0.0, 1.0, 0.5])
    model = fit(X, y, MATERN52, np.random.default_rng(0))
    assert model.noise_variance > 1e-8


def test_fit_is_deterministic_and_cholesky_reconstructs():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(10, 3))
    y = rng.normal(size=10)
    a = fit(X, y, MATERN52, np.random.default_rng(11))
    b = fit(X, y, MATERN52, np.random.default_rng(11))
    np.testing.assert_array_equal(a.theta, b.theta)
    K = kernel_matrix(a.kernel, X, X) + a.noise_variance * np.eye(10)
    L = a.cholesky_factor
    assert np.max(np.abs(L @ L.T - K)) <= 1e-8 * np.max(np.abs(K))


def test_fit_preconditions():
    with pytest.raises(ValueError):
        fit([[0.0]], [1.0], MATERN52, np.random.default_rng(0))
    with pytest.raises(ValueError):
        fit([[0.0], [1.0]], [1.0, np.nan], MATERN52, np.random.default_rng(0))


def test_fit_caps_training_set():
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(30, 1))
    model = fit(X, X[:, 0], MATERN52, rng, restarts=1, max_points=10)
    assert len(model.train_inputs) == 10
    np.testing.assert_array_equal(model.train_inputs, X[-10:])


# --------------------------------------------------------------------------- posterior


def test_two_point_posterior_oracle():
    spec = KernelSpec(MATERN52, [0.7], 1.4)
    X = np.array([[0.1], [0.6]])
    y = np.array([1.0, -2.0])
    noise = 0.05
    model = build_model(spec, noise, X, y)
    ys = model.transform(y)
    for q in (0.0, 0.35, 0.9, 2.0):
        k = lambda a, b: kernel_matern52_ard([a], [b], spec)
        m, v = two_point_posterior(k(0.1, 0.1), k(0.1, 0.6), k(0.6, 0.6), k(q, 0.1), k(q, 0.6), k(q, q),
                                   ys[0], ys[1], noise)
        mean, var = posterior(model, [[q]], full_cov=False)
        assert mean[0] == pytest.approx(model.inverse_transform(m), abs=1e-12)
        assert var[0] == pytest.approx(v * model.y_std**2, abs=1e-12)


def test_posterior_far_from_data_reverts_to_prior():
    spec = KernelSpec(MATERN52, [0.3], 2.0)
    model = build_model(spec, 1e-6, [[0.0], [0.5]], [1.0, 3.0])
    mean, var = posterior(model, [[1e3]], full_cov=False)
    assert mean[0] == pytest.approx(model.y_mean, abs=1e-12)
    assert var[0] == pytest.approx(2.0 * model.y_std**2, rel=1e-12)


def test_full_covariance_diagonal_matches_variance():
    rng = np.random.default_rng(8)
    X = rng.uniform(size=(8, 2))
    model = build_model(KernelSpec(MATERN52, [0.4, 0.9]), 1e-4, X, rng.normal(size=8))
    Q = rng.uniform(size=(5, 2))
    m1, C = posterior(model, Q)
    m2, v = posterior(model, Q, full_cov=False)
    np.testing.assert_allclose(m1, m2, atol=1e-14)
    np.testing.assert_allclose(np.diag(C), v, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(C) >= -1e-10)


def test_transform_round_trip():
    rng = np.random.default_rng(9)
    for _ in range(20):
        y = rng.normal(size=6) * rng.uniform(1e-3, 1e3) + rng.normal() * 100
        model = build_model(matern(1), 1e-3, rng.uniform(size=(6, 1)), y)
        np.testing.assert_allclose(model.inverse_transform(model.transform(y)), y, rtol=0, atol=1e-12 * max(1, np.abs(y).max()))
    ys, mu, sd = standardize([3.0, 3.0])
    assert sd == 1.0 and np.all(ys == 0)


def test_standardized_values_are_unit_scaled():
    ys, _, _ = standardize(stats.norm.rvs(size=50, random_state=1) * 7 + 2)
    assert abs(ys.mean()) < 1e-12 and abs(ys.std() - 1) < 1e-12
