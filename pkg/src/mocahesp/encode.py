"""Categorical encoders, their nearest-value decoder, and EXP3 encoder selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import numpy as np

from .space import Dataset, MixedSpace

ORDINAL = "ordinal"
TARGET = "target"
ENCODER_VARIANTS = (ORDINAL, TARGET)

DEFAULT_TARGET_WEIGHT = 1.0


@dataclass(frozen=True, eq=False)
class Encoder:
    """A fitted 1-to-1 map between category indices and reals, per variable.

    ``tables[j][c]`` is the encoded value of category ``c`` of the ``j``-th
    combinatorial variable (in ``space.comb_idx`` order). Continuous
    coordinates pass through unchanged.

    Besides raw encoded values the encoder also exposes a *unit* view where
    every coordinate is affinely mapped to [0, 1]; for a combinatorial
    variable the unit interval spans the encoded values padded by half the
    gap to the nearest neighbour at each end, so the outermost categories get
    decoding cells as wide as their neighbours'.
    """

    variant: str
    space: MixedSpace
    tables: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.tables) != self.space.d_h:
            raise ValueError("one table per combinatorial variable required")
        tables = []
        for t, c in zip(self.tables, self.space.cardinalities[self.space.comb_idx]):
            t = np.asarray(t, dtype=float).copy()
            if t.shape != (c,):
                raise ValueError(f"table of shape {t.shape} for a {c}-category variable")
            if len(np.unique(t)) != c:
                raise ValueError("encoder tables must be 1-to-1")
            t.setflags(write=False)
            tables.append(t)
        object.__setattr__(self, "tables", tuple(tables))
        lo = self.space.lower.copy()
        hi = self.space.upper.copy()
        for j, t in zip(self.space.comb_idx, tables):
            s = np.sort(t)
            lo[j] = s[0] - (s[1] - s[0]) / 2.0
            hi[j] = s[-1] + (s[-1] - s[-2]) / 2.0
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def encode(self, points) -> np.ndarray:
        Z = np.asarray(points, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        if Z.shape[1] != self.space.d:
            raise ValueError(f"points of width {Z.shape[1]}, expected {self.space.d}")
        out = Z.copy()
        for j, t in zip(self.space.comb_idx, self.tables):
            h = Z[:, j]
            idx = h.astype(int)
            if np.any(idx != h) or np.any(idx < 0) or np.any(idx >= len(t)):
                raise ValueError(f"unknown category in coordinate {j}")
            out[:, j] = t[idx]
        return out[0] if single else out

    def decode(self, vectors) -> np.ndarray:
        V = np.asarray(vectors, dtype=float)
        single = V.ndim == 1
        V = np.atleast_2d(V)
        if V.shape[1] != self.space.d:
            raise ValueError(f"vectors of width {V.shape[1]}, expected {self.space.d}")
        if not np.all(np.isfinite(V)):
            raise ValueError("non-finite entries cannot be decoded")
        out = V.copy()
        ci = self.space.cont_idx
        if len(ci):
            out[:, ci] = np.clip(V[:, ci], self.space.lower[ci], self.space.upper[ci])
        for j, t in zip(self.space.comb_idx, self.tables):
            # argmin picks the lowest category index on exact ties
            out[:, j] = np.argmin(np.abs(V[:, j, None] - t[None, :]), axis=1)
        return out[0] if single else out

    def to_unit(self, encoded) -> np.ndarray:
        return (np.asarray(encoded, dtype=float) - self.lower) / (self.upper - self.lower)

    def from_unit(self, unit) -> np.ndarray:
        return self.lower + np.asarray(unit, dtype=float) * (self.upper - self.lower)

    def encode_unit(self, points) -> np.ndarray:
        return self.to_unit(self.encode(points))

    def decode_unit(self, unit) -> np.ndarray:
        return self.decode(self.from_unit(unit))

    def unit_tables(self) -> Tuple[np.ndarray, ...]:
        """Encoded category values in unit coordinates."""
        return tuple(
            (t - self.lower[j]) / (self.upper[j] - self.lower[j])
            for j, t in zip(self.space.comb_idx, self.tables)
        )


def encode_point(enc: Encoder, z) -> np.ndarray:
    return enc.encode(z)


def decode_point(enc: Encoder, v) -> np.ndarray:
    return enc.decode(v)


def fit_ordinal(space: MixedSpace) -> Encoder:
    if space.d_h == 0:
        raise ValueError("ordinal encoder needs at least one combinatorial variable")
    tables = tuple(np.arange(c, dtype=float) for c in space.cardinalities[space.comb_idx])
    return Encoder(ORDINAL, space, tables)


def _separate(values: np.ndarray) -> np.ndarray:
    """Nudge later duplicates upward so all entries are distinct."""
    values = values.copy()
    spread = float(values.max() - values.min())
    eps = 1e-9 * spread if spread > 0 else 1e-9 * max(1.0, float(np.abs(values).max()))
    for i in range(1, len(values)):
        while np.any(np.abs(values[:i] - values[i]) < eps / 2):
            values[i] += eps
    return values


def fit_target(space: MixedSpace, data: Dataset, m: float = DEFAULT_TARGET_WEIGHT) -> Encoder:
    """Smoothed target-mean encoder: ``(n_i * mean_i + m * mean) / (n_i + m)``.

    Categories never observed map to the overall mean.
    """
    if len(data) == 0:
        raise ValueError("target encoder needs a non-empty dataset")
    if space.d_h == 0:
        raise ValueError("target encoder needs at least one combinatorial variable")
    if m < 0:
        raise ValueError("m must be nonnegative")
    y = data.values
    y_bar = float(y.mean())
    tables = []
    for j in space.comb_idx:
        c = int(space.cardinalities[j])
        h = data.points[:, j].astype(int)
        counts = np.bincount(h, minlength=c).astype(float)
        sums = np.bincount(h, weights=y, minlength=c)
        denom = counts + m
        with np.errstate(invalid="ignore", divide="ignore"):
            enc = np.where(denom > 0, (sums + m * y_bar) / denom, y_bar)
        tables.append(_separate(enc))
    return Encoder(TARGET, space, tuple(tables))


def fit_encoder(variant: str, space: MixedSpace, data: Dataset, m: float = DEFAULT_TARGET_WEIGHT) -> Encoder:
    if variant == ORDINAL:
        return fit_ordinal(space)
    if variant == TARGET:
        return fit_target(space, data, m)
    raise ValueError(f"unknown encoder variant {variant!r}")


# --------------------------------------------------------------------------- EXP3


@dataclass(frozen=True)
class Exp3State:
    weights: Tuple[float, ...]
    eta: float
    action: int
    lam: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) < 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError(f"weights must be positive and finite: {self.weights}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta={self.eta} outside [0, 1]")
        if not 0 <= self.action < len(w):
            raise ValueError(f"action {self.action} out of range")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @property
    def K(self) -> int:
        return len(self.weights)

    @classmethod
    def initial(cls, K: int, eta: float, lam: int, rng: np.random.Generator) -> "Exp3State":
        """Unit weights with the first action drawn uniformly."""
        return cls((1.0,) * K, eta, int(rng.integers(K)), lam)


def exp3_eta(K: int, n_iterations: int) -> float:
    """min{1, sqrt(K ln K / ((e - 1) N))}."""
    if K < 1 or n_iterations < 1:
        raise ValueError("K and the iteration budget must be positive")
    return min(1.0, math.sqrt(K * math.log(K) / ((math.e - 1.0) * n_iterations)))


def exp3_probabilities(state: Exp3State) -> np.ndarray:
    w = np.asarray(state.weights)
    p = (1.0 - state.eta) * w / w.sum() + state.eta / state.K
    return p / p.sum()


def normalize_values(values) -> np.ndarray:
    """Min-max normalize so the minimum maps to 1 and the maximum to 0.

    Returns zeros when all values are equal.
    """
    y = np.asarray(values, dtype=float)
    hi, lo = y.max(), y.min()
    if hi == lo:
        return np.zeros_like(y)
    return (y - hi) / (lo - hi)


def exp3_reward(recent_values: Sequence[float], all_values: Sequence[float]) -> float:
    """Normalized value of the best (lowest) objective value in the recent batch."""
    all_values = np.asarray(all_values, dtype=float)
    recent_values = np.asarray(recent_values, dtype=float)
    if len(all_values) == 0 or len(recent_values) == 0:
        raise ValueError("empty value history")
    hi, lo = all_values.max(), all_values.min()
    if hi == lo:
        return 0.0
    return float((recent_values.min() - hi) / (lo - hi))


def exp3_update(
    state: Exp3State,
    recent_values: Sequence[float],
    all_values: Sequence[float],
    rng: np.random.Generator,
) -> Tuple[Exp3State, int]:
    p = exp3_probabilities(state)
    reward = exp3_reward(recent_values, all_values)
    estimated = reward / p[state.action]
    w = np.array(state.weights)
    step = state.eta * estimated / state.K
    if math.log(w[state.action]) + step > 600.0:
        # rescale all weights together; probabilities are scale-invariant
        w = np.maximum(w / w[state.action], np.finfo(float).tiny)
        w[state.action] = math.exp(step)
    else:
        w[state.action] *= math.exp(step)
    updated = replace(state, weights=tuple(w))
    next_action = int(rng.choice(state.K, p=exp3_probabilities(updated)))
    return replace(updated, action=next_action), next_action
