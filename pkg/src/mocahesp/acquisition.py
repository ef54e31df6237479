"""Thompson sampling, expected improvement, and acquisition optimizers.

Acquisition optimizers work on points of a :class:`MixedSpace` and take the
acquisition as a vectorized callable (larger is better) plus an optional
feasibility predicate describing the active region.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import stats

from .space import MixedSpace
from .surrogate import GpModel, NumericalFailure, posterior

DEFAULT_LOCAL_BUDGET = 100
CONTINUOUS_STEP = 0.1
TS_JITTERS = (1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

Acquisition = Callable[[np.ndarray], np.ndarray]
Feasible = Callable[[np.ndarray], np.ndarray]


def default_pool_size(d: int) -> int:
    return int(min(100 * d, 5000))


@dataclass(frozen=True, eq=False)
class CandidatePool:
    """Region samples with their decoded points and surrogate inputs.

    ``features`` is what the surrogate consumes; it defaults to ``decoded``.
    """

    encoded: np.ndarray
    decoded: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        enc = np.atleast_2d(np.asarray(self.encoded, dtype=float))
        dec = np.atleast_2d(np.asarray(self.decoded, dtype=float))
        if len(enc) != len(dec):
            raise ValueError("encoded and decoded entries must correspond 1-to-1")
        object.__setattr__(self, "encoded", enc)
        object.__setattr__(self, "decoded", dec)
        feats = dec if self.features is None else np.atleast_2d(np.asarray(self.features, dtype=float))
        if len(feats) != len(dec):
            raise ValueError("features must have one row per candidate")
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.decoded)

    def subset(self, idx) -> "CandidatePool":
        idx = np.asarray(idx, dtype=int)
        return CandidatePool(self.encoded[idx], self.decoded[idx], self.features[idx])


def posterior_sample(model: GpModel, features, rng: np.random.Generator) -> np.ndarray:
    """One joint posterior draw over ``features`` (original value units)."""
    mean, cov = posterior(model, features, full_cov=True)
    scale = model.y_std**2
    cov = cov / scale
    n = len(mean)
    for jitter in TS_JITTERS:
        try:
            L = np.linalg.cholesky(cov + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise NumericalFailure("posterior covariance is not positive definite")
    return mean + model.y_std * (L @ rng.standard_normal(n))


def thompson_indices(model: GpModel, pool: CandidatePool, count: int, rng: np.random.Generator) -> np.ndarray:
    if len(pool) == 0:
        raise ValueError("empty candidate pool")
    if not 1 <= count <= len(pool):
        raise ValueError(f"cannot select {count} of {len(pool)} candidates")
    draw = posterior_sample(model, pool.features, rng)
    return np.argsort(draw, kind="stable")[:count]


def thompson_select(model: GpModel, pool: CandidatePool, count: int, rng: np.random.Generator) -> np.ndarray:
    """The ``count`` pool points with the smallest values of one joint posterior draw."""
    return pool.decoded[thompson_indices(model, pool, count, rng)]


def ei_from_moments(mean, std, incumbent: float) -> np.ndarray:
    """Expected improvement below ``incumbent`` (minimization)."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    gain = incumbent - mean
    out = np.maximum(gain, 0.0)
    pos = std > 0
    u = np.where(pos, gain / np.where(pos, std, 1.0), 0.0)
    ei = gain * stats.norm.cdf(u) + std * stats.norm.pdf(u)
    out = np.where(pos, np.maximum(ei, 0.0), out)
    return out


def expected_improvement(model: GpModel, points, incumbent: float) -> np.ndarray:
    """EI of each row of ``points`` (surrogate inputs) for minimization."""
    P = np.asarray(points, dtype=float)
    mean, var = posterior(model, np.atleast_2d(P), full_cov=False)
    ei = ei_from_moments(mean, np.sqrt(var), incumbent)
    return float(ei[0]) if P.ndim == 1 else ei


def neighbours(point, space: MixedSpace, step: float = CONTINUOUS_STEP) -> np.ndarray:
    """All 1-Hamming neighbours plus +-step*range moves of each continuous coordinate."""
    z = np.asarray(point, dtype=float)
    out = []
    for j in space.comb_idx:
        for c in range(int(space.cardinalities[j])):
            if c != z[j]:
                n = z.copy()
                n[j] = c
                out.append(n)
    lo, hi = space.lower, space.upper
    for j in space.cont_idx:
        delta = step * (hi[j] - lo[j])
        for s in (-delta, delta):
            n = z.copy()
            n[j] = np.clip(z[j] + s, lo[j], hi[j])
            if n[j] != z[j]:
                out.append(n)
    return np.array(out).reshape(-1, space.d)


def _filter(points: np.ndarray, feasible: Optional[Feasible]) -> np.ndarray:
    if feasible is None or len(points) == 0:
        return points
    return points[np.asarray(feasible(points), dtype=bool)]


def local_search(
    acquisition: Acquisition,
    start,
    space: MixedSpace,
    budget: int = DEFAULT_LOCAL_BUDGET,
    feasible: Optional[Feasible] = None,
    rng: Optional[np.random.Generator] = None,
    step: float = CONTINUOUS_STEP,
    free=None,
) -> Tuple[np.ndarray, float]:
    """Best-improvement hill climbing over feasible neighbours.

    At most ``budget`` acquisition evaluations are spent (the start's value
    is free if already known by the caller; here it costs one). ``free``
    restricts moves to the given coordinates. When the neighbourhood is
    larger than the remaining budget a random subset is evaluated.
    """
    best = np.asarray(start, dtype=float).copy()
    if budget <= 0:
        return best, float("nan")
    best_val = float(np.asarray(acquisition(best[None]))[0])
    used = 1
    free_mask = None
    if free is not None:
        free_mask = np.zeros(space.d, dtype=bool)
        free_mask[np.asarray(free, dtype=int)] = True
    while used < budget:
        cand = neighbours(best, space, step)
        if free_mask is not None and len(cand):
            cand = cand[np.all((cand == best) | free_mask, axis=1)]
        cand = _filter(cand, feasible)
        if len(cand) == 0:
            break
        room = budget - used
        if len(cand) > room:
            pick = (rng or np.random.default_rng(0)).choice(len(cand), size=room, replace=False)
            cand = cand[np.sort(pick)]
        vals = np.asarray(acquisition(cand), dtype=float)
        used += len(cand)
        i = int(np.argmax(vals))
        if vals[i] <= best_val:
            break
        best, best_val = cand[i].copy(), float(vals[i])
    return best, best_val


def _block_size(space: MixedSpace, idx) -> int:
    return int(np.prod([int(space.cardinalities[j]) for j in idx], dtype=float))


def _block_grid(space: MixedSpace, idx) -> np.ndarray:
    return np.array(list(itertools.product(*(range(int(space.cardinalities[j])) for j in idx))), dtype=float)


def interleaved_search(
    acquisition: Acquisition,
    pool_points,
    incumbent,
    space: MixedSpace,
    rounds: int = 3,
    feasible: Optional[Feasible] = None,
    budget: int = DEFAULT_LOCAL_BUDGET,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, float]:
    """Alternate optimization of the combinatorial and continuous blocks.

    Each round first recombines the pool's categorical parts with the current
    continuous part and hill-climbs the categorical block, then does the
    converse for the continuous block. Returns a point whose acquisition is
    at least the best pool point's.
    """
    if not space.is_mixed:
        raise ValueError("interleaved search needs a mixed space")
    P = np.atleast_2d(np.asarray(pool_points, dtype=float))
    cand = P
    inc = np.asarray(incumbent, dtype=float)
    if feasible is None or bool(np.asarray(feasible(inc[None]))[0]):
        cand = np.vstack([P, inc])
    vals = np.asarray(acquisition(cand), dtype=float)
    i = int(np.argmax(vals))
    best, best_val = cand[i].copy(), float(vals[i])
    ci, xi = space.comb_idx, space.cont_idx
    per_block = max(1, budget // max(2 * rounds, 1))
    for _ in range(rounds):
        for block, other in ((ci, xi), (xi, ci)):
            mixed = P.copy()
            mixed[:, other] = best[other]
            mixed = _filter(mixed, feasible)
            if len(mixed):
                v = np.asarray(acquisition(mixed), dtype=float)
                j = int(np.argmax(v))
                if v[j] > best_val:
                    best, best_val = mixed[j].copy(), float(v[j])
            if block is ci and _block_size(space, ci) <= per_block:
                # tiny categorical block: enumerate instead of hill-climbing
                full = np.tile(best, (_block_size(space, ci), 1))
                full[:, ci] = _block_grid(space, ci)
                full = _filter(full, feasible)
                if len(full):
                    v = np.asarray(acquisition(full), dtype=float)
                    j = int(np.argmax(v))
                    if v[j] > best_val:
                        best, best_val = full[j].copy(), float(v[j])
                continue
            z, zv = local_search(acquisition, best, space, per_block, feasible, rng, free=block)
            if zv > best_val:
                best, best_val = z, zv
    return best, best_val
