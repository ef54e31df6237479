"""Gaussian-process surrogates for encoded and mixed inputs.

Four kernel variants are supported:

``matern52``
    Matern-5/2 with one lengthscale per input column.
``overlap``
    Transformed overlap kernel on category-index columns,
    ``exp(-(1/D) * sum_i l_i * [h_i != h'_i])``.
``cocabo``
    Overlap kernel on the first ``n_comb`` columns (category indices) mixed
    with a Matern-5/2 ARD kernel on the rest.
``bounce``
    Matern-5/2 ARD on the first ``n_comb`` columns (one-hot) mixed with a
    Matern-5/2 ARD kernel on the rest.

Mixed kernels use ``(1 - w) (k_h + k_x) / 2 + w k_h k_x`` scaled by the signal
variance. Hyperparameters are fitted by maximizing the log marginal
likelihood with L-BFGS-B from several starting points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, optimize

MATERN52 = "matern52"
OVERLAP = "overlap"
COCABO = "cocabo"
BOUNCE = "bounce"
KERNEL_VARIANTS = (MATERN52, OVERLAP, COCABO, BOUNCE)

SQRT5 = math.sqrt(5.0)
LENGTHSCALE_BOUNDS = (1e-3, 1e3)
SIGNAL_BOUNDS = (1e-2, 1e2)
NOISE_BOUNDS = (1e-8, 1e-1)
MIX_RAW_BOUNDS = (-8.0, 8.0)
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
MAX_TRAIN = 500


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class KernelSpec:
    variant: str
    lengthscales: np.ndarray
    signal_variance: float = 1.0
    mix_weight: float = 0.5
    n_comb: int = 0
    n_categories: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.variant not in KERNEL_VARIANTS:
            raise ValueError(f"unknown kernel {self.variant!r}")
        ls = np.asarray(self.lengthscales, dtype=float)
        if np.any(ls <= 0) or self.signal_variance <= 0:
            raise ValueError("hyperparameters must be positive")
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError("mix weight must lie in [0, 1]")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return len(self.lengthscales)


def _one_hot_indicator(H: np.ndarray, sizes) -> Tuple[np.ndarray, np.ndarray]:
    """Indicator matrix of category membership and the column -> variable map."""
    H = H.astype(int)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    O = np.zeros((len(H), int(np.sum(sizes))))
    rows = np.arange(len(H))
    for i, off in enumerate(offsets):
        O[rows, off + H[:, i]] = 1.0
    owner = np.repeat(np.arange(len(sizes)), sizes)
    return O, owner


def _sizes(H: np.ndarray, n_categories) -> np.ndarray:
    if n_categories is not None:
        return np.asarray(n_categories, dtype=int)
    return H.max(axis=0).astype(int) + 1 if len(H) else np.ones(H.shape[1], dtype=int)


def _matern(A: np.ndarray, B: np.ndarray, ls: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-variance Matern-5/2 and the factor g with dk/dlog(l_j) = g * (diff_j / l_j)^2."""
    As, Bs = A / ls, B / ls
    sq = np.sum(As**2, 1)[:, None] + np.sum(Bs**2, 1)[None, :] - 2.0 * As @ Bs.T
    r = np.sqrt(np.maximum(sq, 0.0))
    e = np.exp(-SQRT5 * r)
    k = (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    g = 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    return k, g


def _overlap(HA: np.ndarray, HB: np.ndarray, ls: np.ndarray, sizes) -> np.ndarray:
    OA, owner = _one_hot_indicator(HA, sizes)
    OB, _ = _one_hot_indicator(HB, sizes)
    D = len(ls)
    matched = (OA * ls[owner]) @ OB.T
    return np.exp((matched - ls.sum()) / D)


def _split(spec: KernelSpec, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return X[:, : spec.n_comb], X[:, spec.n_comb :]


def kernel_parts(spec: KernelSpec, A: np.ndarray, B: np.ndarray):
    """Unit-variance sub-kernels ``(k_h, k_x)``; either may be None."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    ls = spec.lengthscales
    if spec.variant == MATERN52:
        return None, _matern(A, B, ls)[0]
    if spec.variant == OVERLAP:
        return _overlap(A, B, ls, _sizes(np.vstack([A, B]), spec.n_categories)), None
    HA, XA = _split(spec, A)
    HB, XB = _split(spec, B)
    lh, lx = ls[: spec.n_comb], ls[spec.n_comb :]
    if spec.variant == COCABO:
        kh = _overlap(HA, HB, lh, _sizes(np.vstack([HA, HB]), spec.n_categories))
    else:
        kh = _matern(HA, HB, lh)[0]
    kx = _matern(XA, XB, lx)[0]
    return kh, kx


def combine(spec: KernelSpec, kh, kx) -> np.ndarray:
    if kh is None:
        return spec.signal_variance * kx
    if kx is None:
        return spec.signal_variance * kh
    w = spec.mix_weight
    return spec.signal_variance * ((1.0 - w) * (kh + kx) / 2.0 + w * kh * kx)


def kernel_matrix(spec: KernelSpec, A, B) -> np.ndarray:
    return combine(spec, *kernel_parts(spec, A, B))


def kernel_diag(spec: KernelSpec, n: int) -> np.ndarray:
    """All kernels here are stationary with k(x, x) = signal variance."""
    return np.full(n, spec.signal_variance)


def kernel_matern52_ard(a, b, spec: KernelSpec) -> float:
    k = _matern(np.atleast_2d(np.asarray(a, float)), np.atleast_2d(np.asarray(b, float)), spec.lengthscales)[0]
    return float(spec.signal_variance * k[0, 0])


def kernel_transformed_overlap(h_a, h_b, spec: KernelSpec) -> float:
    h_a = np.asarray(h_a, dtype=float)
    h_b = np.asarray(h_b, dtype=float)
    mismatch = (h_a != h_b).astype(float)
    return float(spec.signal_variance * np.exp(-np.dot(spec.lengthscales, mismatch) / len(h_a)))


def kernel_mixed(x_a, h_a, x_b, h_b, spec: KernelSpec) -> float:
    """Mixed kernel on a single pair; ``spec.variant`` picks the categorical part."""
    a = np.concatenate([np.asarray(h_a, float), np.asarray(x_a, float)])
    b = np.concatenate([np.asarray(h_b, float), np.asarray(x_b, float)])
    return float(kernel_matrix(spec, a[None], b[None])[0, 0])


# --------------------------------------------------------------------------- likelihood


def pack(spec: KernelSpec, noise: float) -> np.ndarray:
    parts = [np.log(spec.lengthscales)]
    if spec.variant in (COCABO, BOUNCE):
        w = min(max(spec.mix_weight, 1e-12), 1 - 1e-12)
        parts.append([math.log(w / (1.0 - w))])
    parts.append([math.log(spec.signal_variance), math.log(noise)])
    return np.concatenate(parts)


def unpack(template: KernelSpec, theta: np.ndarray) -> Tuple[KernelSpec, float]:
    D = template.dim
    ls = np.exp(theta[:D])
    i = D
    w = template.mix_weight
    if template.variant in (COCABO, BOUNCE):
        w = 1.0 / (1.0 + math.exp(-theta[i]))
        i += 1
    spec = KernelSpec(template.variant, ls, math.exp(theta[i]), w, template.n_comb, template.n_categories)
    return spec, math.exp(theta[i + 1])


def theta_bounds(spec: KernelSpec):
    b = [tuple(np.log(LENGTHSCALE_BOUNDS))] * spec.dim
    if spec.variant in (COCABO, BOUNCE):
        b.append(MIX_RAW_BOUNDS)
    b.append(tuple(np.log(SIGNAL_BOUNDS)))
    b.append(tuple(np.log(NOISE_BOUNDS)))
    return b


def _cholesky(K: np.ndarray) -> np.ndarray:
    n = len(K)
    for jitter in JITTERS:
        try:
            return linalg.cholesky(K + jitter * np.eye(n), lower=True)
        except linalg.LinAlgError:
            continue
    raise NumericalFailure("Cholesky failed at every jitter level")


def _matern_grad_contract(G: np.ndarray, X: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """sum_ab G_ab (x_aj - x_bj)^2 / l_j^2 for symmetric G, per column j."""
    Xs = X / ls
    s = G.sum(axis=1)
    return 2.0 * (s @ (Xs**2)) - 2.0 * np.sum(Xs * (G @ Xs), axis=0)


def _overlap_grad_contract(G: np.ndarray, H: np.ndarray, ls: np.ndarray, sizes) -> np.ndarray:
    """sum_ab G_ab [h_ai != h_bi] * (-l_i / D), per column i."""
    O, owner = _one_hot_indicator(H, sizes)
    matched = np.bincount(owner, weights=np.sum(O * (G @ O), axis=0), minlength=len(ls))
    return -(ls / len(ls)) * (G.sum() - matched)


def _parts_and_factors(spec: KernelSpec, X: np.ndarray):
    """Sub-kernels on the training inputs plus the Matern gradient factors."""
    ls = spec.lengthscales
    if spec.variant == MATERN52:
        kx, gx = _matern(X, X, ls)
        return None, kx, None, gx
    if spec.variant == OVERLAP:
        return _overlap(X, X, ls, _sizes(X, spec.n_categories)), None, None, None
    H, Xc = _split(spec, X)
    lh, lx = ls[: spec.n_comb], ls[spec.n_comb :]
    if spec.variant == COCABO:
        kh, gh = _overlap(H, H, lh, _sizes(H, spec.n_categories)), None
    else:
        kh, gh = _matern(H, H, lh)
    kx, gx = _matern(Xc, Xc, lx)
    return kh, kx, gh, gx


def _cho_inverse(L: np.ndarray) -> np.ndarray:
    inv, info = linalg.lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalFailure("inverse from Cholesky factor failed")
    inv = np.tril(inv)
    return inv + np.tril(inv, -1).T


def log_marginal_likelihood(theta, template: KernelSpec, X: np.ndarray, y: np.ndarray, grad: bool = True):
    """Log marginal likelihood (and gradient w.r.t. ``theta``) of standardized data."""
    spec, noise = unpack(template, np.asarray(theta, dtype=float))
    n = len(y)
    kh, kx, gh_f, gx_f = _parts_and_factors(spec, X)
    K = combine(spec, kh, kx)
    L = _cholesky(K + noise * np.eye(n))
    alpha = linalg.cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    if not grad:
        return lml
    W = np.outer(alpha, alpha) - _cho_inverse(L)
    s2 = spec.signal_variance
    g = []
    if spec.variant == MATERN52:
        g.append(0.5 * _matern_grad_contract(W * s2 * gx_f, X, spec.lengthscales))
    elif spec.variant == OVERLAP:
        sizes = _sizes(X, spec.n_categories)
        g.append(0.5 * _overlap_grad_contract(W * s2 * kh, X, spec.lengthscales, sizes))
    else:
        w = spec.mix_weight
        H, Xc = _split(spec, X)
        lh, lx = spec.lengthscales[: spec.n_comb], spec.lengthscales[spec.n_comb :]
        dh = s2 * ((1 - w) / 2.0 + w * kx)
        dx = s2 * ((1 - w) / 2.0 + w * kh)
        if spec.variant == COCABO:
            gh = _overlap_grad_contract(W * dh * kh, H, lh, _sizes(H, spec.n_categories))
        else:
            gh = _matern_grad_contract(W * dh * gh_f, H, lh)
        gx = _matern_grad_contract(W * dx * gx_f, Xc, lx)
        g.append(0.5 * gh)
        g.append(0.5 * gx)
        dk_dw = s2 * (-(kh + kx) / 2.0 + kh * kx) * w * (1 - w)
        g.append([0.5 * np.sum(W * dk_dw)])
    g.append([0.5 * np.sum(W * K)])
    g.append([0.5 * np.trace(W) * noise])
    return lml, np.concatenate([np.ravel(x) for x in g])


# --------------------------------------------------------------------------- model


@dataclass(frozen=True, eq=False)
class GpModel:
    kernel: KernelSpec
    noise_variance: float
    train_inputs: np.ndarray
    train_values: np.ndarray
    y_mean: float
    y_std: float
    cholesky_factor: np.ndarray
    alpha: np.ndarray = field(repr=False)

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_transform(self, y_std_units):
        return np.asarray(y_std_units, dtype=float) * self.y_std + self.y_mean

    @property
    def theta(self) -> np.ndarray:
        return pack(self.kernel, self.noise_variance)


def standardize(values) -> Tuple[np.ndarray, float, float]:
    y = np.asarray(values, dtype=float)
    mu = float(y.mean())
    sd = float(y.std())
    if not sd > 0 or not np.isfinite(sd):
        sd = 1.0
    return (y - mu) / sd, mu, sd


def default_kernel(variant: str, dim: int, n_comb: int = 0, n_categories=None) -> KernelSpec:
    if variant == OVERLAP:
        n_comb = dim
    return KernelSpec(variant, np.ones(dim), 1.0, 0.5, n_comb, None if n_categories is None else tuple(n_categories))


def build_model(spec: KernelSpec, noise: float, X, y) -> GpModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ys, mu, sd = standardize(y)
    K = kernel_matrix(spec, X, X) + noise * np.eye(len(X))
    L = _cholesky(K)
    alpha = linalg.cho_solve((L, True), ys)
    return GpModel(spec, noise, X, ys, mu, sd, L, alpha)


def fit(
    inputs,
    values,
    variant: str,
    rng: np.random.Generator,
    n_comb: int = 0,
    n_categories=None,
    restarts: int = 4,
    init: Optional[np.ndarray] = None,
    maxiter: int = 40,
    max_points: int = MAX_TRAIN,
) -> GpModel:
    """Fit hyperparameters by multi-start L-BFGS-B on the log marginal likelihood.

    ``init`` (a packed parameter vector, e.g. ``previous_model.theta``) is
    used as the first start when its layout matches.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))[-max_points:]
    y = np.asarray(values, dtype=float).ravel()[-max_points:]
    if len(y) < 2:
        raise ValueError("need at least two training points")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite training values")
    template = default_kernel(variant, X.shape[1], n_comb, n_categories)
    ys, _, _ = standardize(y)
    bounds = theta_bounds(template)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    starts = []
    if init is not None and len(init) == len(lo):
        starts.append(np.clip(init, lo, hi))
    starts.append(pack(template, 1e-3))
    while len(starts) < max(restarts, 1):
        t = pack(template, 1e-3)
        t[: template.dim] = rng.uniform(math.log(0.1), math.log(10.0), template.dim)
        t[-2] = rng.uniform(math.log(0.3), math.log(3.0))
        t[-1] = rng.uniform(math.log(1e-6), math.log(1e-2))
        starts.append(t)

    def objective(theta):
        try:
            lml, g = log_marginal_likelihood(theta, template, X, ys)
        except NumericalFailure:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        return -lml, -g

    best_theta, best_val = None, np.inf
    for t0 in starts[: max(restarts, 1)]:
        res = optimize.minimize(objective, t0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        if res.fun < best_val:
            best_val, best_theta = float(res.fun), res.x
    if best_theta is None or best_val >= 1e25:
        raise NumericalFailure("likelihood could not be evaluated at any start")
    spec, noise = unpack(template, best_theta)
    return build_model(spec, noise, X, y)


def posterior(model: GpModel, query, full_cov: bool = True):
    """Posterior mean and covariance (or variance) in original value units."""
    Q = np.atleast_2d(np.asarray(query, dtype=float))
    Ks = kernel_matrix(model.kernel, model.train_inputs, Q)
    mean = Ks.T @ model.alpha
    V = linalg.solve_triangular(model.cholesky_factor, Ks, lower=True)
    scale = model.y_std**2
    if full_cov:
        cov = kernel_matrix(model.kernel, Q, Q) - V.T @ V
        cov = (cov + cov.T) / 2.0
        return model.inverse_transform(mean), cov * scale
    var = kernel_diag(model.kernel, len(Q)) - np.sum(V * V, axis=0)
    return model.inverse_transform(mean), np.maximum(var, 0.0) * scale


def one_hot(H, sizes) -> np.ndarray:
    """One-hot expansion of category-index columns."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    return _one_hot_indicator(H, np.asarray(sizes, dtype=int))[0]
