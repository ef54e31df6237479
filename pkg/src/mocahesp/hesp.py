"""Hyper-ellipsoid local regions driven by a CMA-ES search distribution.

All coordinates handled here are *unit* encoded coordinates: every encoded
dimension is affinely mapped to [0, 1] by its encoder before it reaches this
module, so a single initial step-size fits every dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

SIGMA_INIT_FRACTION = 0.3
SIGMA_LOWER_BOUND = 0.1
DEFAULT_ALPHA = 0.05
EIGEN_FLOOR = 1e-12
MAX_CONDITION = 1e14
MIN_SPREAD = 1e-10
SAMPLING_ATTEMPT_FACTOR = 100
MIN_ACCEPTANCE_RATE = 1e-4


class SamplingExhausted(RuntimeError):
    """Raised when rejection sampling cannot fill a region (degenerate region)."""


class NumericalFailure(RuntimeError):
    pass


def lambda_default(d: int, rule: str = "printed") -> int:
    """Population size.

    ``rule="printed"`` gives ``4 + floor(3 + ln d)``; ``rule="canonical"``
    gives the usual CMA-ES ``4 + floor(3 ln d)``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if rule == "printed":
        return 4 + math.floor(3 + math.log(d))
    if rule == "canonical":
        return 4 + math.floor(3 * math.log(d))
    raise ValueError(f"unknown population rule {rule!r}")


def chi_squared_quantile(p: float, dof: int) -> float:
    """Inverse CDF of the chi-squared distribution."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p={p} must lie in (0, 1)")
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    return 2.0 * float(special.gammaincinv(dof / 2.0, p))


@dataclass(frozen=True)
class CMAParams:
    """Standard CMA-ES strategy constants for dimension ``d`` and population ``lam``."""

    d: int
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float


@lru_cache(maxsize=256)
def cma_params(d: int, lam: int) -> CMAParams:
    if lam < 2:
        raise ValueError("population size must be >= 2")
    mu = lam // 2
    raw = math.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1))
    w = raw / raw.sum()
    w.setflags(write=False)
    mu_eff = 1.0 / float(np.sum(w**2))
    c_sigma = (mu_eff + 2.0) / (d + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (d + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / d) / (d + 4.0 + 2.0 * mu_eff / d)
    c_1 = 2.0 / ((d + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((d + 2.0) ** 2 + mu_eff))
    chi_n = math.sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d))
    return CMAParams(d, lam, mu, w, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n)


@dataclass(frozen=True)
class Gaussian:
    """A multivariate normal given by its full covariance (step-size included)."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class SearchDistribution:
    mean: np.ndarray
    C: np.ndarray
    sigma: float
    lam: int
    comb_mask: np.ndarray
    p_sigma: np.ndarray = None
    p_c: np.ndarray = None
    generation: int = 0
    sigma_lb: float = SIGMA_LOWER_BOUND
    repaired: bool = False

    def __post_init__(self):
        d = len(self.mean)
        if self.p_sigma is None:
            object.__setattr__(self, "p_sigma", np.zeros(d))
        if self.p_c is None:
            object.__setattr__(self, "p_c", np.zeros(d))
        if self.C.shape != (d, d) or len(self.comb_mask) != d:
            raise ValueError("inconsistent distribution dimensions")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def d(self) -> int:
        return len(self.mean)

    @property
    def params(self) -> CMAParams:
        return cma_params(self.d, self.lam)

    @property
    def covariance(self) -> np.ndarray:
        """sigma^2 * C."""
        return self.sigma**2 * self.C

    @property
    def stds(self) -> np.ndarray:
        return self.sigma * np.sqrt(np.diag(self.C))

    def gaussian(self) -> Gaussian:
        return Gaussian(self.mean, self.covariance)


def as_gaussian(dist) -> Gaussian:
    return dist.gaussian() if isinstance(dist, SearchDistribution) else dist


def init_distribution(
    encoded_data,
    values,
    comb_mask,
    lam: int,
    bounds: Tuple[float, float] = (0.0, 1.0),
    sigma_lb: float = SIGMA_LOWER_BOUND,
) -> SearchDistribution:
    """Mean at the best encoded point, identity covariance, sigma = 0.3 (u - l)."""
    X = np.atleast_2d(np.asarray(encoded_data, dtype=float))
    y = np.asarray(values, dtype=float).ravel()
    if len(y) == 0 or len(X) != len(y):
        raise ValueError("need a non-empty encoded dataset with matching values")
    lo, hi = bounds
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
        raise ValueError(f"invalid bounds {bounds}")
    d = X.shape[1]
    return SearchDistribution(
        mean=X[int(np.argmin(y))].copy(),
        C=np.eye(d),
        sigma=SIGMA_INIT_FRACTION * (hi - lo),
        lam=lam,
        comb_mask=np.asarray(comb_mask, dtype=bool).copy(),
        sigma_lb=sigma_lb,
    )


def _repair_spd(C: np.ndarray) -> Tuple[np.ndarray, bool]:
    C = (C + C.T) / 2.0
    evals, evecs = np.linalg.eigh(C)
    if evals.min() > EIGEN_FLOOR and np.all(np.isfinite(evals)):
        return C, False
    evals = np.maximum(evals, EIGEN_FLOOR)
    return (evecs * evals) @ evecs.T, True


def apply_std_floor(C: np.ndarray, sigma: float, mask: np.ndarray, floor: float) -> np.ndarray:
    """Rescale rows/columns of masked dims so that sigma * sqrt(C_ii) >= floor."""
    std = sigma * np.sqrt(np.diag(C))
    s = np.ones(len(C))
    low = mask & (std < floor)
    if not np.any(low):
        return C
    s[low] = floor / std[low]
    return C * s[:, None] * s[None, :]


def cma_update(dist: SearchDistribution, vectors, values) -> SearchDistribution:
    """One CMA-ES generation from an evaluated batch (minimization)."""
    X = np.atleast_2d(np.asarray(vectors, dtype=float))
    f = np.asarray(values, dtype=float).ravel()
    n = len(f)
    if n < 2 or len(X) != n:
        raise ValueError("cma_update needs a batch of at least 2 evaluated vectors")
    if not np.all(np.isfinite(f)) or not np.all(np.isfinite(X)):
        raise ValueError("non-finite batch")
    d = dist.d
    par = cma_params(d, n)
    order = np.argsort(f, kind="stable")[: par.mu]
    m_old, sigma, C = dist.mean, dist.sigma, dist.C

    Y = (X[order] - m_old) / sigma
    y_w = par.weights @ Y
    mean = m_old + sigma * y_w

    evals, B = np.linalg.eigh(C)
    evals = np.maximum(evals, EIGEN_FLOOR)
    C_inv_sqrt = (B / np.sqrt(evals)) @ B.T

    p_sigma = (1 - par.c_sigma) * dist.p_sigma + math.sqrt(
        par.c_sigma * (2 - par.c_sigma) * par.mu_eff
    ) * (C_inv_sqrt @ y_w)
    g = dist.generation + 1
    norm_ps = float(np.linalg.norm(p_sigma))
    h_sigma = norm_ps / math.sqrt(1 - (1 - par.c_sigma) ** (2 * g)) < (1.4 + 2.0 / (d + 1)) * par.chi_n
    h = 1.0 if h_sigma else 0.0
    p_c = (1 - par.c_c) * dist.p_c + h * math.sqrt(par.c_c * (2 - par.c_c) * par.mu_eff) * y_w

    rank_mu = (Y.T * par.weights) @ Y
    C_new = (
        (1 - par.c_1 - par.c_mu + (1 - h) * par.c_1 * par.c_c * (2 - par.c_c)) * C
        + par.c_1 * np.outer(p_c, p_c)
        + par.c_mu * rank_mu
    )
    sigma_new = sigma * math.exp((par.c_sigma / par.d_sigma) * (norm_ps / par.chi_n - 1))

    C_new, repaired = _repair_spd(C_new)
    C_new = apply_std_floor(C_new, sigma_new, dist.comb_mask, dist.sigma_lb)
    return replace(
        dist,
        mean=mean,
        C=C_new,
        sigma=sigma_new,
        p_sigma=p_sigma,
        p_c=p_c,
        generation=g,
        repaired=repaired,
    )


def check_restart(dist: SearchDistribution, history: Sequence[float], window: Optional[int] = None) -> bool:
    """Restart test: ill-conditioning, collapsed spread, or stagnation.

    ``history`` holds the incumbent (best-so-far since the last restart)
    after each iteration. The stagnation window defaults to
    ``10 * ceil(d / lam)`` iterations.
    """
    evals = np.linalg.eigvalsh(dist.C)
    if evals.min() <= 0 or evals.max() / evals.min() > MAX_CONDITION:
        return True
    if dist.sigma * math.sqrt(max(evals.max(), 0.0)) < MIN_SPREAD:
        return True
    if window is None:
        window = 10 * math.ceil(dist.d / dist.lam)
    h = np.asarray(history, dtype=float)
    if len(h) > window:
        return bool(h[-window:].min() >= h[:-window].min())
    return False


# --------------------------------------------------------------------------- regions


@dataclass(frozen=True, eq=False)
class RegionSpec:
    """Confidence ellipsoid, optionally scaled per dimension and Hamming-limited.

    Membership uses the squared Mahalanobis distance against
    ``chi2_threshold`` (a squared-radius quantile).
    """

    alpha: float
    scale: np.ndarray
    comb_idx: np.ndarray
    hamming_limit: Optional[int] = None
    chi2_threshold: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        scale = np.asarray(self.scale, dtype=float)
        if np.any(scale <= 0):
            raise ValueError("scale entries must be positive")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "comb_idx", np.asarray(self.comb_idx, dtype=int))
        object.__setattr__(self, "chi2_threshold", chi_squared_quantile(1.0 - self.alpha, len(scale)))

    @property
    def radius(self) -> float:
        return math.sqrt(self.chi2_threshold)


def make_region(
    d: int,
    comb_idx,
    alpha: float = DEFAULT_ALPHA,
    cont_idx=(),
    length_x: float = 1.0,
    hamming_limit: Optional[int] = None,
) -> RegionSpec:
    scale = np.ones(d)
    scale[np.asarray(cont_idx, dtype=int)] = length_x**2
    return RegionSpec(alpha, scale, np.asarray(comb_idx, dtype=int), hamming_limit)


def scaled_covariance(cov: np.ndarray, scale) -> np.ndarray:
    """Multiply coordinate ``i`` of the ellipsoid's radii by ``sqrt(scale[i])``."""
    s = np.sqrt(np.asarray(scale, dtype=float))
    return cov * s[:, None] * s[None, :]


def _chol(cov: np.ndarray) -> np.ndarray:
    cov = (cov + cov.T) / 2.0
    jitter = 0.0
    for _ in range(8):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-14 * max(1.0, float(np.abs(np.diag(cov)).max())))
    raise NumericalFailure("covariance is not positive definite")


def mahalanobis(v, dist, scale=None) -> np.ndarray:
    """Distance of ``v`` (one vector or a stack) to N(m, psi(sigma^2 C, L))."""
    g = as_gaussian(dist)
    cov = g.cov if scale is None else scaled_covariance(g.cov, scale)
    L = _chol(cov)
    V = np.asarray(v, dtype=float)
    diff = np.atleast_2d(V) - g.mean
    z = np.linalg.solve(L, diff.T)
    dist_ = np.sqrt(np.sum(z * z, axis=0))
    return float(dist_[0]) if V.ndim == 1 else dist_


Decoder = Callable[[np.ndarray], np.ndarray]


def in_region(v, dist, region: RegionSpec, dec: Optional[Decoder] = None, center_decoded=None) -> np.ndarray:
    """Membership in the (scaled, Hamming-limited) ellipsoid for one vector or a stack."""
    V = np.asarray(v, dtype=float)
    M = np.atleast_2d(V)
    ok = mahalanobis(M, dist, region.scale) ** 2 <= region.chi2_threshold * (1 + 1e-12)
    if region.hamming_limit is not None and len(region.comb_idx):
        H = np.atleast_2d(dec(M))
        diff = np.count_nonzero(H[:, region.comb_idx] != np.asarray(center_decoded)[region.comb_idx], axis=1)
        ok &= diff <= region.hamming_limit
    return bool(ok[0]) if V.ndim == 1 else ok


def sample_in_region(
    dist,
    region: RegionSpec,
    count: int,
    rng: np.random.Generator,
    dec: Optional[Decoder] = None,
    center_decoded=None,
    bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> np.ndarray:
    """Rejection-sample ``count`` vectors from the scaled search distribution.

    Draws are clipped to ``bounds`` (if given) and must pass the Mahalanobis
    test. Draws violating the Hamming limit get randomly chosen excess
    coordinates reset to the mean's value (which decodes to the center's
    category) and are then re-tested. May return fewer than ``count`` vectors
    when the attempt budget runs out with a usable acceptance rate.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    g = as_gaussian(dist)
    cov = scaled_covariance(g.cov, region.scale)
    L = _chol(cov)
    d = len(g.mean)
    limit = region.hamming_limit if len(region.comb_idx) else None
    if limit is not None:
        center = np.asarray(center_decoded, dtype=float)
    budget = SAMPLING_ATTEMPT_FACTOR * count
    accepted = []
    n_acc = attempts = 0
    while n_acc < count and attempts < budget:
        n_draw = min(budget - attempts, max(2 * (count - n_acc), 64))
        attempts += n_draw
        X = g.mean + rng.standard_normal((n_draw, d)) @ L.T
        if bounds is not None:
            X = np.clip(X, bounds[0], bounds[1])
        X = X[in_region(X, g, RegionSpec(region.alpha, region.scale, region.comb_idx, None))]
        if limit is not None and len(X):
            H = dec(X)
            ci = region.comb_idx
            for r in np.flatnonzero(np.count_nonzero(H[:, ci] != center[ci], axis=1) > limit):
                differing = ci[H[r, ci] != center[ci]]
                reset = rng.choice(differing, size=len(differing) - limit, replace=False)
                X[r, reset] = g.mean[reset]
            X = X[in_region(X, g, region, dec, center)]
        accepted.append(X)
        n_acc += len(X)
    out = np.vstack(accepted)[:count] if accepted else np.zeros((0, d))
    if len(out) < count and len(out) / max(attempts, 1) < MIN_ACCEPTANCE_RATE:
        raise SamplingExhausted(f"accepted {len(out)} of {attempts} draws")
    return out
