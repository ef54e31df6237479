"""Mixed search spaces, points and datasets.

Points are plain float arrays of length ``d`` following the variable order of
the space: continuous entries hold the real value, ordinal/categorical entries
hold the integer index of the level/category (stored as float).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

CONTINUOUS = "continuous"
ORDINAL = "ordinal"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, ORDINAL, CATEGORICAL)

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class VariableSpec:
    kind: str
    bounds: Optional[Tuple[float, float]] = None
    values: Optional[Tuple] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == CONTINUOUS:
            if self.bounds is None:
                raise ValueError("continuous variable needs bounds")
            lo, hi = float(self.bounds[0]), float(self.bounds[1])
            if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
                raise ValueError(f"invalid bounds {self.bounds}")
            object.__setattr__(self, "bounds", (lo, hi))
        else:
            if self.values is None or len(self.values) < 2:
                raise ValueError(f"{self.kind} variable needs at least 2 values")
            vals = tuple(self.values)
            if len(set(vals)) != len(vals):
                raise ValueError(f"duplicate values in {vals}")
            object.__setattr__(self, "values", vals)

    @classmethod
    def continuous(cls, lower: float, upper: float, name: str = "") -> "VariableSpec":
        return cls(CONTINUOUS, bounds=(lower, upper), name=name)

    @classmethod
    def ordinal(cls, levels: Sequence, name: str = "") -> "VariableSpec":
        return cls(ORDINAL, values=tuple(levels), name=name)

    @classmethod
    def categorical(cls, categories: Sequence, name: str = "") -> "VariableSpec":
        return cls(CATEGORICAL, values=tuple(categories), name=name)

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS

    @property
    def cardinality(self) -> int:
        """Number of levels/categories; 0 for continuous variables."""
        return 0 if self.is_continuous else len(self.values)


@dataclass(frozen=True)
class MixedSpace:
    """Ordered collection of variables.

    Ordinal variables are handled as categorical ones by every optimizer; their
    declared order is only used by the ordinal encoder.
    """

    variables: Tuple[VariableSpec, ...]
    cont_idx: np.ndarray = field(init=False, repr=False, compare=False)
    comb_idx: np.ndarray = field(init=False, repr=False, compare=False)
    cardinalities: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        variables = tuple(self.variables)
        if not variables:
            raise ValueError("empty space")
        object.__setattr__(self, "variables", variables)
        cont = np.array([i for i, v in enumerate(variables) if v.is_continuous], dtype=int)
        comb = np.array([i for i, v in enumerate(variables) if not v.is_continuous], dtype=int)
        for arr in (cont, comb):
            arr.setflags(write=False)
        card = np.array([v.cardinality for v in variables], dtype=int)
        card.setflags(write=False)
        object.__setattr__(self, "cont_idx", cont)
        object.__setattr__(self, "comb_idx", comb)
        object.__setattr__(self, "cardinalities", card)

    @classmethod
    def categorical(cls, n_vars: int, n_categories: int) -> "MixedSpace":
        return cls(tuple(VariableSpec.categorical(range(n_categories)) for _ in range(n_vars)))

    @property
    def d(self) -> int:
        return len(self.variables)

    @property
    def d_x(self) -> int:
        return len(self.cont_idx)

    @property
    def d_w(self) -> int:
        return sum(v.kind == ORDINAL for v in self.variables)

    @property
    def d_q(self) -> int:
        return sum(v.kind == CATEGORICAL for v in self.variables)

    @property
    def d_h(self) -> int:
        return len(self.comb_idx)

    @property
    def is_mixed(self) -> bool:
        return self.d_x > 0 and self.d_h > 0

    @property
    def lower(self) -> np.ndarray:
        """Lower bound per coordinate (0 for combinatorial)."""
        return np.array([v.bounds[0] if v.is_continuous else 0.0 for v in self.variables])

    @property
    def upper(self) -> np.ndarray:
        """Upper bound per coordinate (c_i - 1 for combinatorial)."""
        return np.array([v.bounds[1] if v.is_continuous else v.cardinality - 1.0 for v in self.variables])

    def contains(self, point) -> bool:
        z = np.asarray(point, dtype=float)
        if z.shape != (self.d,) or not np.all(np.isfinite(z)):
            return False
        lo, hi = self.lower, self.upper
        if np.any(z < lo) or np.any(z > hi):
            return False
        h = z[self.comb_idx]
        return bool(np.all(h == np.round(h)))

    def validate(self, point) -> np.ndarray:
        z = np.asarray(point, dtype=float)
        if z.shape != (self.d,):
            raise ValueError(f"point has shape {z.shape}, expected ({self.d},)")
        if not self.contains(z):
            raise ValueError(f"point {z} outside the space")
        return z

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples over the box x grid, shape ``(n, d)``."""
        out = np.empty((n, self.d))
        for i, v in enumerate(self.variables):
            if v.is_continuous:
                out[:, i] = rng.uniform(v.bounds[0], v.bounds[1], size=n)
            else:
                out[:, i] = rng.integers(0, v.cardinality, size=n)
        return out

    def grid(self) -> np.ndarray:
        """All points of a purely combinatorial space (small spaces only)."""
        if self.d_x:
            raise ValueError("grid() requires a purely combinatorial space")
        axes = [np.arange(c) for c in self.cardinalities]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1).astype(float)


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.points, dtype=float))
        y = np.asarray(self.values, dtype=float).ravel()
        if len(y) == 0:
            X = X.reshape(0, X.shape[-1] if X.size else 0)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} points but {len(y)} values")
        if not np.all(np.isfinite(y)):
            raise ValueError("non-finite objective values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "values", y)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.zeros((0, d)), np.zeros(0))

    def extend(self, points, values) -> "Dataset":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if len(self) == 0:
            return Dataset(points, values)
        return Dataset(np.vstack([self.points, points]), np.concatenate([self.values, np.ravel(values)]))

    def best(self) -> Tuple[np.ndarray, float]:
        i = int(np.argmin(self.values))
        return self.points[i], float(self.values[i])


def hamming_distance(a, b, space: MixedSpace) -> int:
    """Number of combinatorial coordinates where ``a`` and ``b`` differ."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (space.d,) or b.shape != (space.d,):
        raise ValueError(f"dimension mismatch: {a.shape}, {b.shape} vs d={space.d}")
    idx = space.comb_idx
    return int(np.count_nonzero(a[idx] != b[idx]))


def shift_wrap(f: Objective, delta, space: MixedSpace) -> Objective:
    """Return ``f`` with each categorical index permuted by ``(h + delta) % c``."""
    delta = np.asarray(delta, dtype=int)
    card = space.cardinalities[space.comb_idx]
    if delta.shape != card.shape:
        raise ValueError(f"delta needs {len(card)} entries, got {delta.shape}")
    if np.any(delta < 0) or np.any(delta >= card):
        raise ValueError("delta entries must satisfy 0 <= delta_i < c_i")
    idx = space.comb_idx

    def shifted(z):
        z = np.array(z, dtype=float)
        z[idx] = (z[idx].astype(int) + delta) % card
        return f(z)

    shifted.delta = delta
    return shifted
