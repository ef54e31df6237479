"""Optimizers: the three HESP-driven methods and their plain counterparts.

``moca-bo``, ``moca-casmo`` and ``moca-bounce`` run the meta-algorithm: a CMA
search distribution over unit-encoded coordinates defines the local region,
an EXP3 bandit picks the categorical encoder each iteration, and a BO
optimizer proposes ``lam`` points inside the region. ``bo``, ``casmo`` and
``bounce`` use the same surrogates and acquisitions without the HESP region.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import surrogate as sg
from .acquisition import (
    CandidatePool,
    default_pool_size,
    ei_from_moments,
    interleaved_search,
    local_search,
    posterior_sample,
)
from .encode import (
    ORDINAL,
    TARGET,
    Encoder,
    Exp3State,
    _separate,
    exp3_eta,
    exp3_update,
    fit_encoder,
    fit_ordinal,
)
from .hesp import (
    DEFAULT_ALPHA,
    Gaussian,
    RegionSpec,
    SearchDistribution,
    cma_update,
    check_restart,
    in_region,
    init_distribution,
    lambda_default,
    make_region,
    sample_in_region,
)
from .space import Dataset, MixedSpace, Objective, VariableSpec
from .trace import RunTrace

MOCA_BO = "moca-bo"
MOCA_CASMO = "moca-casmo"
MOCA_BOUNCE = "moca-bounce"
BO = "bo"
CASMO = "casmo"
BOUNCE = "bounce"
MOCA_VARIANTS = (MOCA_BO, MOCA_CASMO, MOCA_BOUNCE)
BASELINES = (BO, CASMO, BOUNCE)
VARIANTS = MOCA_VARIANTS + BASELINES

L_X_MIN = 2.0**-7
L_X_MAX = 1.6
TAU_SUCC = 3
TAU_FAIL = 40
BOUNCE_FAIL_STEPS = 20  # failures per halving under the per-iteration rule


@dataclass(frozen=True)
class DriverConfig:
    n0: int = 20
    alpha: float = DEFAULT_ALPHA
    lam: Optional[int] = None
    lam_rule: str = "printed"
    pool_size: Optional[int] = None
    target_m: float = 1.0
    encoders: Tuple[str, ...] = (ORDINAL, TARGET)
    eta: Optional[float] = None
    L_x_init: float = 0.8
    L_h_init: Optional[int] = None
    d_A_init: Optional[int] = None
    sigma_lb: float = 0.1
    gp_restarts: int = 4
    gp_maxiter: int = 40
    gp_max_points: int = sg.MAX_TRAIN
    local_budget: int = 100
    interleaved_rounds: int = 3

    def __post_init__(self):
        if self.n0 < 2:
            raise ValueError("n0 must be >= 2")
        if self.lam is not None and self.lam < 1:
            raise ValueError("lam must be positive")
        if not self.encoders or any(e not in (ORDINAL, TARGET) for e in self.encoders):
            raise ValueError(f"encoders must be drawn from {(ORDINAL, TARGET)}")
        object.__setattr__(self, "encoders", tuple(self.encoders))

    def to_dict(self) -> Dict:
        return asdict(self)


# --------------------------------------------------------------------------- trust regions


@dataclass(frozen=True)
class TrustRegionState:
    L_x: float
    L_h: int
    L_h_max: int
    success_count: int = 0
    failure_count: int = 0
    rule: str = "casmo"
    h_level: Optional[float] = None
    L_x_min: float = L_X_MIN
    L_x_max: float = L_X_MAX
    tau_succ: int = TAU_SUCC
    tau_fail: int = TAU_FAIL

    def __post_init__(self):
        if self.rule not in ("casmo", "bounce"):
            raise ValueError(f"unknown trust-region rule {self.rule!r}")
        if self.L_h_max < 1:
            raise ValueError("L_h_max must be >= 1")
        if not self.L_x_min <= self.L_x <= self.L_x_max or not 1 <= self.L_h <= self.L_h_max:
            raise ValueError(f"trust region ({self.L_x}, {self.L_h}) out of bounds")
        if self.h_level is None:
            object.__setattr__(self, "h_level", float(self.L_h))

    @classmethod
    def initial(cls, d_h: int, L_x: float = 0.8, L_h: Optional[int] = None, rule: str = "casmo") -> "TrustRegionState":
        L_h_max = max(d_h, 1)
        if L_h is None:
            L_h = max(math.ceil(d_h / 5), 2)
        return cls(min(max(L_x, L_X_MIN), L_X_MAX), int(min(max(L_h, 1), L_h_max)), L_h_max, rule=rule)


def update_trust_region(tr: TrustRegionState, improved: bool) -> TrustRegionState:
    """Expand after ``tau_succ`` consecutive successes, shrink after ``tau_fail`` failures.

    The ``bounce`` rule instead rescales every iteration by ``2**(1/tau_succ)``
    on success and ``2**(-1/20)`` on failure.
    """
    if tr.rule == "bounce":
        f = 2.0 ** (1.0 / tr.tau_succ) if improved else 2.0 ** (-1.0 / BOUNCE_FAIL_STEPS)
        L_x = min(max(tr.L_x * f, tr.L_x_min), tr.L_x_max)
        level = min(max(tr.h_level * f, 1.0), float(tr.L_h_max))
        L_h = int(min(max(round(level), 1), tr.L_h_max))
        return replace(tr, L_x=L_x, L_h=L_h, h_level=level, success_count=0, failure_count=0)
    succ = tr.success_count + 1 if improved else 0
    fail = 0 if improved else tr.failure_count + 1
    if succ >= tr.tau_succ:
        L_h = min(tr.L_h + 1, tr.L_h_max)
        return replace(tr, L_x=min(2.0 * tr.L_x, tr.L_x_max), L_h=L_h, h_level=float(L_h),
                       success_count=0, failure_count=0)
    if fail >= tr.tau_fail:
        L_h = max(tr.L_h - 1, 1)
        return replace(tr, L_x=max(tr.L_x / 2.0, tr.L_x_min), L_h=L_h, h_level=float(L_h),
                       success_count=0, failure_count=0)
    return replace(tr, success_count=succ, failure_count=fail)


# --------------------------------------------------------------------------- embedding


@dataclass(frozen=True, eq=False)
class EmbeddingState:
    """Random type-homogeneous binning of the input dimensions.

    ``Q`` (d x d_A) sends a target coordinate to its members with sign
    ``s_j``; ``P`` (d_A x d) is its pseudo-inverse. Target coordinates of
    continuous bins live in [0, 1] and map to centred unit inputs
    ``u_j - 0.5 = s_j (a_b - 0.5)``; a categorical bin holds one category
    index broadcast to all of its members.
    """

    space: MixedSpace
    bins: Tuple[np.ndarray, ...]
    signs: np.ndarray
    m_D: float = 0.0

    def __post_init__(self):
        bins = tuple(np.asarray(b, dtype=int) for b in self.bins)
        if any(len(b) == 0 for b in bins):
            raise ValueError("empty bin")
        members = np.sort(np.concatenate(bins))
        if not np.array_equal(members, np.arange(self.space.d)):
            raise ValueError("every input dimension must belong to exactly one bin")
        for b in bins:
            kinds = {self._group(j) for j in b}
            if len(kinds) != 1:
                raise ValueError("bins must be type-homogeneous")
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "signs", np.asarray(self.signs, dtype=float))
        Q = np.zeros((self.space.d, len(bins)))
        for k, b in enumerate(bins):
            Q[b, k] = self.signs[b]
        P = Q.T / np.array([len(b) for b in bins])[:, None]
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P", P)
        vars_ = []
        for b in bins:
            j = b[0]
            if self.space.variables[j].is_continuous:
                vars_.append(VariableSpec.continuous(0.0, 1.0))
            else:
                vars_.append(VariableSpec.categorical(range(int(self.space.cardinalities[j]))))
        object.__setattr__(self, "target_space", MixedSpace(tuple(vars_)))

    def _group(self, j: int):
        return -1 if self.space.variables[j].is_continuous else int(self.space.cardinalities[j])

    @property
    def d_A(self) -> int:
        return len(self.bins)

    @property
    def max_bin_size(self) -> int:
        return max(len(b) for b in self.bins)

    @property
    def remaining_doublings(self) -> int:
        return int(math.ceil(math.log2(self.max_bin_size))) if self.max_bin_size > 1 else 0

    def project_up(self, A) -> np.ndarray:
        """Target points -> input points."""
        A = np.asarray(A, dtype=float)
        single = A.ndim == 1
        A = np.atleast_2d(A)
        sp = self.space
        Z = np.empty((len(A), sp.d))
        lo, hi = sp.lower, sp.upper
        for k, b in enumerate(self.bins):
            if sp.variables[b[0]].is_continuous:
                u = 0.5 + self.signs[b][None, :] * (A[:, k : k + 1] - 0.5)
                Z[:, b] = lo[b] + u * (hi[b] - lo[b])
            else:
                Z[:, b] = A[:, k : k + 1]
        return Z[0] if single else Z

    def project_down(self, Z) -> np.ndarray:
        """Input points in the embedding's image -> target points."""
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        sp = self.space
        lo, hi = sp.lower, sp.upper
        A = np.empty((len(Z), self.d_A))
        for k, b in enumerate(self.bins):
            if sp.variables[b[0]].is_continuous:
                u = (Z[:, b] - lo[b]) / (hi[b] - lo[b])
                A[:, k] = 0.5 + (u - 0.5) @ self.P[k, b]
            else:
                A[:, k] = Z[:, b[0]]
        return A[0] if single else A


def _allocate_bins(sizes: Sequence[int], d_A: int) -> List[int]:
    """Largest-remainder split of d_A bins over groups, each getting 1..size."""
    sizes = np.asarray(sizes, dtype=int)
    share = sizes / sizes.sum() * d_A
    n = np.clip(np.floor(share).astype(int), 1, sizes)
    while n.sum() < d_A:
        room = np.flatnonzero(n < sizes)
        if not len(room):
            break
        k = room[np.argmax((share - n)[room])]
        n[k] += 1
    while n.sum() > d_A:
        room = np.flatnonzero(n > 1)
        k = room[np.argmax((n - share)[room])]
        n[k] -= 1
    return n.tolist()


def build_embedding(space: MixedSpace, d_A: int, rng: np.random.Generator, m_D: float = 0.0) -> EmbeddingState:
    """Assign dims uniformly at random to ``d_A`` balanced type-homogeneous bins.

    Continuous dims form one group and combinatorial dims are grouped by
    cardinality; each group receives at least one bin.
    """
    if not 1 <= d_A <= space.d:
        raise ValueError(f"d_A={d_A} must lie in [1, {space.d}]")
    keys = []
    for j in range(space.d):
        keys.append(-1 if space.variables[j].is_continuous else int(space.cardinalities[j]))
    groups = sorted(set(keys))
    if d_A < len(groups):
        raise ValueError(f"d_A={d_A} is below the number of variable groups ({len(groups)})")
    members = [np.array([j for j in range(space.d) if keys[j] == g]) for g in groups]
    counts = _allocate_bins([len(m) for m in members], d_A)
    bins = []
    for m, n in zip(members, counts):
        perm = rng.permutation(m)
        bins.extend(np.array_split(perm, n))
    signs = np.ones(space.d)
    if space.d_x:
        signs[space.cont_idx] = rng.choice([-1.0, 1.0], size=space.d_x)
    return EmbeddingState(space, tuple(np.sort(b) for b in bins), signs, m_D)


def increase_embedding(emb: EmbeddingState, data_A, rng: np.random.Generator) -> Tuple[EmbeddingState, np.ndarray]:
    """Split every bin in two random halves; singleton bins stay whole.

    Returns the new embedding and the target coordinates of ``data_A``
    under it (children inherit their parent's value, so every point keeps
    its input-space pre-image).
    """
    if emb.d_A >= emb.space.d:
        raise ValueError("embedding already has full dimension")
    bins, parent = [], []
    for k, b in enumerate(emb.bins):
        halves = [h for h in np.array_split(rng.permutation(b), 2) if len(h)]
        for h in halves:
            bins.append(np.sort(h))
            parent.append(k)
    new = EmbeddingState(emb.space, tuple(bins), emb.signs, emb.m_D)
    data_A = np.atleast_2d(np.asarray(data_A, dtype=float)).reshape(-1, emb.d_A)
    return new, data_A[:, parent]


def target_encoder(emb: EmbeddingState, enc: Encoder) -> Encoder:
    """Encoder on the target space whose raw values are V coordinates.

    A categorical bin's table is the mean of its members' unit tables, so an
    input point broadcast from a target point projects onto that value.
    """
    unit = dict(zip(enc.space.comb_idx.tolist(), enc.unit_tables()))
    tables = []
    for b in emb.bins:
        if not emb.space.variables[b[0]].is_continuous:
            t = np.mean([unit[j] for j in b], axis=0)
            tables.append(_separate(t) if len(np.unique(t)) < len(t) else t)
    return Encoder(enc.variant, emb.target_space, tuple(tables))


def project_distribution(dist: SearchDistribution, emb: EmbeddingState) -> Gaussian:
    """N_V = (0.5 + P (m - 0.5), P sigma^2 C P^T) in unit coordinates."""
    P = emb.P
    return Gaussian(0.5 + P @ (dist.mean - 0.5), P @ dist.covariance @ P.T)


# --------------------------------------------------------------------------- surrogate inputs


@dataclass(frozen=True, eq=False)
class SurrogateInputs:
    """How points of a space are presented to the GP."""

    space: MixedSpace
    variant: str
    kernel: str
    n_comb: int
    n_categories: Optional[Tuple[int, ...]]

    @classmethod
    def for_driver(cls, space: MixedSpace, family: str) -> "SurrogateInputs":
        card = tuple(int(c) for c in space.cardinalities[space.comb_idx])
        if family == "bo" or space.d_h == 0:
            return cls(space, "bo", sg.MATERN52, 0, None)
        if family == "casmo":
            if space.d_x == 0:
                return cls(space, "casmo", sg.OVERLAP, space.d_h, card)
            return cls(space, "casmo", sg.COCABO, space.d_h, card)
        if family == "bounce":
            n_oh = int(sum(card))
            if space.d_x == 0:
                return cls(space, "bounce", sg.MATERN52, 0, None)
            return cls(space, "bounce", sg.BOUNCE, n_oh, None)
        raise ValueError(f"unknown surrogate family {family!r}")

    def features(self, points) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(points, dtype=float))
        sp = self.space
        xi = sp.cont_idx
        X = (Z[:, xi] - sp.lower[xi]) / (sp.upper[xi] - sp.lower[xi]) if len(xi) else np.zeros((len(Z), 0))
        H = Z[:, sp.comb_idx]
        if self.variant == "bo":
            if sp.d_h == 0:
                return X
            return fit_ordinal(sp).encode_unit(Z)
        if self.variant == "casmo":
            return np.hstack([H, X])
        card = sp.cardinalities[sp.comb_idx]
        return np.hstack([sg.one_hot(H, card), X]) if sp.d_h else X


def fit_surrogate(inputs: SurrogateInputs, points, values, rng, cfg: DriverConfig, warm: Optional[dict] = None):
    feats = inputs.features(points)
    init = None if warm is None else warm.get(inputs.kernel)
    model = sg.fit(feats, values, inputs.kernel, rng, n_comb=inputs.n_comb, n_categories=inputs.n_categories,
                   restarts=cfg.gp_restarts, init=init, maxiter=cfg.gp_maxiter, max_points=cfg.gp_max_points)
    if warm is not None:
        warm[inputs.kernel] = model.theta
    return model


# --------------------------------------------------------------------------- proposal helpers


def _key(z) -> tuple:
    return tuple(np.asarray(z, dtype=float).tolist())


def _unique_rows(X: np.ndarray) -> np.ndarray:
    """Indices of the first occurrence of each distinct row, in order."""
    seen, keep = set(), []
    for i, row in enumerate(X):
        k = _key(row)
        if k not in seen:
            seen.add(k)
            keep.append(i)
    return np.array(keep, dtype=int)


def _pick_distinct(order: Sequence[int], points: np.ndarray, lam: int, seen: set) -> List[int]:
    """First ``lam`` indices of ``order`` whose points are new; repeats fill any gap."""
    chosen, taken = [], set()
    for i in order:
        k = _key(points[i])
        if k in seen or k in taken:
            continue
        chosen.append(int(i))
        taken.add(k)
        if len(chosen) == lam:
            return chosen
    for i in order:
        if len(chosen) == lam:
            break
        if int(i) not in chosen:
            chosen.append(int(i))
    while len(chosen) < lam:
        chosen.append(int(order[len(chosen) % len(order)]))
    return chosen


def _thompson_batch(model, inputs: SurrogateInputs, pool_points: np.ndarray, lam: int, rng, seen: set) -> np.ndarray:
    keep = _unique_rows(pool_points)
    pts = pool_points[keep]
    pool = CandidatePool(pts, pts, inputs.features(pts))
    draw = posterior_sample(model, pool.features, rng)
    order = np.argsort(draw, kind="stable")
    return pts[_pick_distinct(order, pts, lam, seen)]


def _ei_batch(model, inputs: SurrogateInputs, pool_points: np.ndarray, incumbent_A, best_y: float, lam: int,
              rng, seen: set, to_input: Callable, feasible, cfg: DriverConfig) -> np.ndarray:
    """Greedy batch: local (or interleaved) EI search from the best pool points."""
    space = inputs.space

    def acq(A):
        mean, var = sg.posterior(model, inputs.features(A), full_cov=False)
        return ei_from_moments(mean, np.sqrt(var), best_y)

    keep = _unique_rows(pool_points)
    pool = pool_points[keep]
    vals = acq(pool)
    order = np.argsort(-vals, kind="stable")
    top = pool[order[: min(len(order), 100)]]
    batch, keys = [], set()
    for i in order:
        if len(batch) == lam:
            break
        start = pool[i]
        if space.is_mixed:
            z, _ = interleaved_search(acq, top, start, space, cfg.interleaved_rounds, feasible, cfg.local_budget, rng)
        else:
            z, _ = local_search(acq, start, space, cfg.local_budget, feasible, rng)
        for cand in (z, start):
            k = _key(to_input(cand))
            if k not in seen and k not in keys:
                batch.append(cand)
                keys.add(k)
                break
    if len(batch) < lam:
        rest = _pick_distinct(order, pool, lam, seen | keys)
        for i in rest:
            if len(batch) == lam:
                break
            batch.append(pool[i])
    return np.array(batch)


def _hamming_box_sample(center, space: MixedSpace, L_x: float, L_h: int, count: int, rng) -> np.ndarray:
    """Uniform-ish samples of a trust region: up to L_h changed categories, box of side L_x."""
    center = np.asarray(center, dtype=float)
    out = np.repeat(center[None], count, axis=0)
    ci, xi = space.comb_idx, space.cont_idx
    if len(ci):
        card = space.cardinalities
        for r in range(count):
            k = int(rng.integers(1, min(L_h, len(ci)) + 1))
            for j in rng.choice(ci, size=k, replace=False):
                out[r, j] = rng.integers(card[j])
    if len(xi):
        lo, hi = space.lower[xi], space.upper[xi]
        half = L_x * (hi - lo) / 2.0
        a = np.maximum(center[xi] - half, lo)
        b = np.minimum(center[xi] + half, hi)
        out[:, xi] = rng.uniform(a, b, size=(count, len(xi)))
    return out


def in_trust_region(points, center, space: MixedSpace, L_x: float, L_h: int) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    center = np.asarray(center, dtype=float)
    ci, xi = space.comb_idx, space.cont_idx
    ok = np.count_nonzero(P[:, ci] != center[ci], axis=1) <= L_h
    if len(xi):
        half = L_x * (space.upper[xi] - space.lower[xi]) / 2.0
        ok &= np.all(np.abs(P[:, xi] - center[xi]) <= half * (1 + 1e-12), axis=1)
    return ok


# --------------------------------------------------------------------------- HESP regions


def region_bo(dist, space: MixedSpace, alpha: float = DEFAULT_ALPHA) -> RegionSpec:
    return make_region(len(dist.mean), space.comb_idx, alpha)


def region_casmo(dist, space: MixedSpace, tr: TrustRegionState, alpha: float = DEFAULT_ALPHA) -> RegionSpec:
    return make_region(len(dist.mean), space.comb_idx, alpha, space.cont_idx, tr.L_x, tr.L_h)


def _bounce_view(dist: SearchDistribution, enc: Encoder, emb: EmbeddingState, tr: TrustRegionState, alpha: float):
    g = project_distribution(dist, emb)
    tenc = target_encoder(emb, enc)
    A = emb.target_space
    region = make_region(emb.d_A, A.comb_idx, alpha, A.cont_idx, tr.L_x, min(tr.L_h, max(A.d_h, 1)))
    center = tenc.decode(g.mean)
    return g, tenc, region, center


def propose_bo(dist: SearchDistribution, enc: Encoder, data: Dataset, lam: int, rng: np.random.Generator,
               cfg: DriverConfig, warm: Optional[dict] = None) -> np.ndarray:
    """Thompson sampling over a pool drawn from the unscaled ellipsoid."""
    space = enc.space
    region = region_bo(dist, space, cfg.alpha)
    n_pool = cfg.pool_size or default_pool_size(space.d)
    V = sample_in_region(dist, region, n_pool, rng, bounds=(0.0, 1.0))
    pool = np.vstack([enc.decode_unit(V), enc.decode_unit(dist.mean)[None]])
    inputs = SurrogateInputs.for_driver(space, "bo")
    model = fit_surrogate(inputs, data.points, data.values, rng, cfg, warm)
    return _thompson_batch(model, inputs, pool, lam, rng, {_key(z) for z in data.points})


def propose_casmo(dist: SearchDistribution, enc: Encoder, tr: TrustRegionState, data: Dataset, lam: int,
                  rng: np.random.Generator, cfg: DriverConfig, warm: Optional[dict] = None) -> np.ndarray:
    """Thompson sampling over the L_x-scaled, Hamming-limited ellipsoid."""
    space = enc.space
    region = region_casmo(dist, space, tr, cfg.alpha)
    center = enc.decode_unit(dist.mean)
    n_pool = cfg.pool_size or default_pool_size(space.d)
    V = sample_in_region(dist, region, n_pool, rng, enc.decode_unit, center, bounds=(0.0, 1.0))
    pool = np.vstack([enc.decode_unit(V), center[None]])
    inputs = SurrogateInputs.for_driver(space, "casmo")
    model = fit_surrogate(inputs, data.points, data.values, rng, cfg, warm)
    return _thompson_batch(model, inputs, pool, lam, rng, {_key(z) for z in data.points})


def propose_bounce(dist: SearchDistribution, enc: Encoder, tr: TrustRegionState, emb: EmbeddingState,
                   data: Dataset, data_A: np.ndarray, lam: int, rng: np.random.Generator, cfg: DriverConfig,
                   warm: Optional[dict] = None) -> np.ndarray:
    """EI with local/interleaved search inside the projected region; returns target points."""
    g, tenc, region, center = _bounce_view(dist, enc, emb, tr, cfg.alpha)
    A = emb.target_space
    n_pool = cfg.pool_size or default_pool_size(A.d)
    V = sample_in_region(g, region, n_pool, rng, tenc.decode, center, bounds=(tenc.lower, tenc.upper))
    pool = np.vstack([tenc.decode(V), center[None]])

    def feasible(P):
        return in_region(np.atleast_2d(tenc.encode(P)), g, region, tenc.decode, center)

    inputs = SurrogateInputs.for_driver(A, "bounce")
    model = fit_surrogate(inputs, data_A, data.values, rng, cfg, warm)
    i_best = int(np.argmin(data.values))
    return _ei_batch(model, inputs, pool, data_A[i_best], float(data.values[i_best]), lam, rng,
                     {_key(z) for z in data.points}, emb.project_up, feasible, cfg)


# --------------------------------------------------------------------------- run loop


class _Abort(Exception):
    pass


class _Run:
    """Budget-exact evaluation bookkeeping shared by every driver."""

    def __init__(self, objective: Objective, space: MixedSpace, budget: int, trace: RunTrace):
        self.objective = objective
        self.space = space
        self.budget = budget
        self.trace = trace
        self.data = Dataset.empty(space.d)

    @property
    def remaining(self) -> int:
        return self.budget - len(self.data)

    def evaluate(self, points, iteration: int, restart: int, encoder=None, region=None) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))[: self.remaining]
        values = []
        for z in points:
            z = self.space.validate(z)
            try:
                y = float(self.objective(z.copy()))
            except Exception as exc:  # noqa: BLE001 - any objective failure aborts the run
                raise _Abort(f"objective failed at evaluation {len(self.data)}: {exc!r}") from exc
            if not math.isfinite(y):
                raise _Abort(f"objective returned {y} at evaluation {len(self.data)}")
            self.trace.append(z, y, iteration, restart, encoder, region)
            self.data = self.data.extend(z[None], [y])
            values.append(y)
        return np.array(values)


def _default_d_A(space: MixedSpace) -> int:
    groups = len({(-1 if v.is_continuous else v.cardinality) for v in space.variables})
    base = 4 if space.is_mixed else 2
    return min(space.d, max(base, groups))


def _region_summary(dist: SearchDistribution, enc: Encoder, alpha: float, tr=None, emb=None, mean_decoded=None):
    out = {
        "mean": dist.mean,
        "cov_diag": dist.sigma**2 * np.diag(dist.C),
        "sigma": dist.sigma,
        "chi2": make_region(dist.d, (), alpha).chi2_threshold,
        "mean_decoded": mean_decoded if mean_decoded is not None else enc.decode_unit(dist.mean),
        "repaired": bool(dist.repaired),
    }
    if tr is not None:
        out["L_x"] = tr.L_x
        out["L_h"] = tr.L_h
    if emb is not None:
        out["d_A"] = emb.d_A
    return out


class _Hesp:
    """Search distribution, encoder bandit and replay history for one restart."""

    def __init__(self, space: MixedSpace, cfg: DriverConfig, lam: int, n_iter: int, rng, init_points, init_values,
                 all_data: Dataset):
        self.space = space
        self.cfg = cfg
        self.lam = lam
        self.rng = rng
        self.comb_mask = np.zeros(space.d, dtype=bool)
        self.comb_mask[space.comb_idx] = True
        K = len(cfg.encoders) if space.d_h else 1
        eta = cfg.eta if cfg.eta is not None else exp3_eta(K, max(n_iter, 1)) if K > 1 else 0.0
        self.exp3 = Exp3State.initial(K, eta, lam, rng)
        self.init = (np.asarray(init_points), np.asarray(init_values))
        self.batches: List[Tuple[np.ndarray, np.ndarray]] = []
        self.values = list(init_values)
        self.history: List[float] = []
        self.best = float(np.min(init_values))
        self._fit(all_data)

    @property
    def encoder_name(self) -> str:
        return self.cfg.encoders[self.exp3.action] if self.space.d_h else ORDINAL

    def _fit(self, all_data: Dataset):
        if self.space.d_h:
            self.enc = fit_encoder(self.encoder_name, self.space, all_data, self.cfg.target_m)
        else:
            self.enc = Encoder(ORDINAL, self.space, ())
        X0, y0 = self.init
        dist = init_distribution(self.enc.encode_unit(X0), y0, self.comb_mask, self.lam, sigma_lb=self.cfg.sigma_lb)
        for Z, y in self.batches:
            if len(y) >= 2:
                dist = cma_update(dist, self.enc.encode_unit(Z), y)
        self.dist = dist

    def update(self, Z: np.ndarray, y: np.ndarray, all_data: Dataset):
        self.batches.append((Z, y))
        self.values.extend(y.tolist())
        if len(y) >= 2:
            self.dist = cma_update(self.dist, self.enc.encode_unit(Z), y)
        self.best = min(self.best, float(y.min()))
        self.history.append(self.best)
        previous = self.exp3.action
        if self.exp3.K > 1:
            self.exp3, _ = exp3_update(self.exp3, y, self.values, self.rng)
        if self.exp3.action != previous or self.encoder_name == TARGET:
            self._fit(all_data)

    def should_restart(self) -> bool:
        return check_restart(self.dist, self.history)


def batch_size(space: MixedSpace, cfg: DriverConfig) -> int:
    return cfg.lam or lambda_default(space.d, cfg.lam_rule)


def run_moca_hesp(objective: Objective, space: MixedSpace, budget: int, n0: int = 20, bo_opt: str = "bo",
                  K: Optional[int] = None, seed: int = 0, cfg: Optional[DriverConfig] = None) -> RunTrace:
    """The HESP meta-algorithm wrapped around ``bo_opt`` in {bo, casmo, bounce}."""
    cfg = cfg or DriverConfig(n0=n0)
    if K is not None:
        cfg = replace(cfg, encoders=cfg.encoders[:K])
    cfg = replace(cfg, n0=n0)
    if bo_opt not in ("bo", "casmo", "bounce"):
        raise ValueError(f"unknown bo_opt {bo_opt!r}")
    if budget < n0:
        raise ValueError("budget must be at least n0")
    variant = "moca-" + bo_opt
    trace = RunTrace(config={"variant": variant, "budget": budget, "seed": seed, **cfg.to_dict()})
    rng = np.random.default_rng(seed)
    run = _Run(objective, space, budget, trace)
    lam = batch_size(space, cfg)
    n_iter = max(1, (budget - n0) // lam)
    warm: dict = {}
    emb = data_A = None
    if bo_opt == "bounce":
        d_A0 = min(cfg.d_A_init or _default_d_A(space), space.d)
        emb = build_embedding(space, d_A0, rng, m_D=budget / 2.0)
        data_A = np.zeros((0, emb.d_A))
        split_start = 0
    try:
        restart = iteration = 0
        while run.remaining > 0:
            # (re)initialization: fresh points, fresh encoder weights and region
            t0 = time.perf_counter()
            if emb is not None:
                A0 = emb.target_space.sample(min(n0, run.remaining), rng)
                Z0 = emb.project_up(A0)
            else:
                Z0 = space.sample(min(n0, run.remaining), rng)
            y0 = run.evaluate(Z0, iteration, restart)
            if emb is not None:
                data_A = np.vstack([data_A, A0[: len(y0)]])
            trace.iteration_seconds.append(time.perf_counter() - t0)
            if run.remaining <= 0:
                break
            hesp = _Hesp(space, cfg, lam, n_iter, rng, Z0[: len(y0)], y0, run.data)
            tr_space_h = emb.target_space.d_h if emb is not None else space.d_h
            tr = TrustRegionState.initial(tr_space_h, cfg.L_x_init, cfg.L_h_init,
                                          "bounce" if bo_opt == "bounce" else "casmo")
            while run.remaining > 0:
                iteration += 1
                t0 = time.perf_counter()
                n = min(lam, run.remaining)
                if bo_opt == "bo":
                    Z = propose_bo(hesp.dist, hesp.enc, run.data, n, rng, cfg, warm)
                    summary = _region_summary(hesp.dist, hesp.enc, cfg.alpha)
                elif bo_opt == "casmo":
                    Z = propose_casmo(hesp.dist, hesp.enc, tr, run.data, n, rng, cfg, warm)
                    summary = _region_summary(hesp.dist, hesp.enc, cfg.alpha, tr)
                else:
                    A = propose_bounce(hesp.dist, hesp.enc, tr, emb, run.data, data_A, n, rng, cfg, warm)
                    Z = emb.project_up(A)
                    center = emb.project_up(target_encoder(emb, hesp.enc).decode(project_distribution(hesp.dist, emb).mean))
                    summary = _region_summary(hesp.dist, hesp.enc, cfg.alpha, tr, emb, center)
                best_before = float(run.data.values.min())
                y = run.evaluate(Z, iteration, restart, hesp.encoder_name, summary)
                Z = Z[: len(y)]
                if emb is not None:
                    data_A = np.vstack([data_A, A[: len(y)]])
                tr = update_trust_region(tr, bool(y.min() < best_before))
                hesp.update(Z, y, run.data)
                trace.iteration_seconds.append(time.perf_counter() - t0)
                if emb is not None and emb.remaining_doublings > 0:
                    spent = len(run.data) - split_start
                    if spent >= (emb.m_D - split_start) / emb.remaining_doublings:
                        emb, data_A = increase_embedding(emb, data_A, rng)
                        split_start = len(run.data)
                        tr = TrustRegionState.initial(emb.target_space.d_h, cfg.L_x_init, cfg.L_h_init, "bounce")
                if hesp.should_restart() and run.remaining >= n0 + lam:
                    restart += 1
                    break
    except _Abort as exc:
        trace.status = "failed"
        trace.error = str(exc)
    return trace


def run_baseline(objective: Objective, space: MixedSpace, budget: int, n0: int = 20, variant: str = BO,
                 seed: int = 0, cfg: Optional[DriverConfig] = None) -> RunTrace:
    """Standard BO, CASMOPOLITAN-style or Bounce-style optimization without HESP."""
    if variant not in BASELINES:
        raise ValueError(f"unknown baseline {variant!r}")
    cfg = replace(cfg or DriverConfig(), n0=n0)
    if budget < n0:
        raise ValueError("budget must be at least n0")
    trace = RunTrace(config={"variant": variant, "budget": budget, "seed": seed, **cfg.to_dict()})
    rng = np.random.default_rng(seed)
    run = _Run(objective, space, budget, trace)
    lam = batch_size(space, cfg)
    warm: dict = {}
    try:
        t0 = time.perf_counter()
        if variant == BOUNCE:
            emb = build_embedding(space, min(cfg.d_A_init or _default_d_A(space), space.d), rng, m_D=budget / 2.0)
            data_A = emb.target_space.sample(n0, rng)
            run.evaluate(emb.project_up(data_A), 0, 0)
            work = emb.target_space
            split_start = 0
        else:
            run.evaluate(space.sample(n0, rng), 0, 0)
            work = space
        trace.iteration_seconds.append(time.perf_counter() - t0)
        tr = TrustRegionState.initial(work.d_h, cfg.L_x_init, cfg.L_h_init, "bounce" if variant == BOUNCE else "casmo")
        iteration = 0
        n_pool = cfg.pool_size or default_pool_size(space.d)
        while run.remaining > 0:
            iteration += 1
            t0 = time.perf_counter()
            n = min(lam, run.remaining)
            seen = {_key(z) for z in run.data.points}
            best_before = float(run.data.values.min())
            i_best = int(np.argmin(run.data.values))
            summary = None
            if variant == BO:
                inputs = SurrogateInputs.for_driver(space, "bo")
                model = fit_surrogate(inputs, run.data.points, run.data.values, rng, cfg, warm)
                Z = _thompson_batch(model, inputs, space.sample(n_pool, rng), n, rng, seen)
            elif variant == CASMO:
                center = run.data.points[i_best]
                pool = np.vstack([_hamming_box_sample(center, space, tr.L_x, tr.L_h, n_pool, rng)])
                inputs = SurrogateInputs.for_driver(space, "casmo")
                model = fit_surrogate(inputs, run.data.points, run.data.values, rng, cfg, warm)
                Z = _thompson_batch(model, inputs, pool, n, rng, seen)
                summary = {"L_x": tr.L_x, "L_h": tr.L_h, "center": center}
            else:
                center = data_A[i_best]
                pool = _hamming_box_sample(center, work, tr.L_x, tr.L_h, n_pool, rng)
                inputs = SurrogateInputs.for_driver(work, "bounce")
                model = fit_surrogate(inputs, data_A, run.data.values, rng, cfg, warm)
                L_x, L_h = tr.L_x, tr.L_h

                def feasible(P, c=center, L_x=L_x, L_h=L_h):
                    return in_trust_region(P, c, work, L_x, L_h)

                A = _ei_batch(model, inputs, pool, center, best_before, n, rng, seen, emb.project_up, feasible, cfg)
                Z = emb.project_up(A)
                summary = {"L_x": tr.L_x, "L_h": tr.L_h, "d_A": emb.d_A}
            y = run.evaluate(Z, iteration, 0, None, summary)
            if variant == BOUNCE:
                data_A = np.vstack([data_A, A[: len(y)]])
            tr = update_trust_region(tr, bool(y.min() < best_before))
            trace.iteration_seconds.append(time.perf_counter() - t0)
            if variant == BOUNCE and emb.remaining_doublings > 0:
                spent = len(run.data) - split_start
                if spent >= (emb.m_D - split_start) / emb.remaining_doublings:
                    emb, data_A = increase_embedding(emb, data_A, rng)
                    split_start = len(run.data)
                    work = emb.target_space
                    tr = TrustRegionState.initial(work.d_h, cfg.L_x_init, cfg.L_h_init, "bounce")
    except _Abort as exc:
        trace.status = "failed"
        trace.error = str(exc)
    return trace


def run_driver(variant: str, objective: Objective, space: MixedSpace, budget: int, seed: int = 0,
               cfg: Optional[DriverConfig] = None) -> RunTrace:
    cfg = cfg or DriverConfig()
    if variant in MOCA_VARIANTS:
        return run_moca_hesp(objective, space, budget, cfg.n0, variant.split("-", 1)[1], None, seed, cfg)
    if variant in BASELINES:
        return run_baseline(objective, space, budget, cfg.n0, variant, seed, cfg)
    raise ValueError(f"unknown driver {variant!r}; choose from {', '.join(VARIANTS)}")
