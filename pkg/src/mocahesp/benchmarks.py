"""Benchmark objectives (all minimized) and a name registry.

Includes discretized and mixed Ackley functions, LABS, and weighted MaxSAT
with a DIMACS ``wcnf`` reader/writer. Bundled MaxSAT instances are generated
pseudo-randomly with fixed seeds and shipped as ``.wcnf`` files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .space import MixedSpace, Objective, VariableSpec, shift_wrap

ACKLEY_A = 20.0
ACKLEY_B = 0.2
ACKLEY_C = 2.0 * math.pi
ACKLEY_BOUND = 32.768
LABS_ZERO_ENERGY = -1e9


def ackley(v) -> float:
    v = np.asarray(v, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input")
    term1 = -ACKLEY_A * math.exp(-ACKLEY_B * math.sqrt(float(np.mean(v * v))))
    term2 = -math.exp(float(np.mean(np.cos(ACKLEY_C * v))))
    return term1 + term2 + ACKLEY_A + math.e


def ackley_levels(n_levels: int, bound: float = ACKLEY_BOUND) -> np.ndarray:
    """Evenly spaced values on [-bound, bound]; the middle level is exactly 0."""
    k = np.arange(n_levels, dtype=float)
    return bound * (2.0 * k / (n_levels - 1) - 1.0)


def discrete_ackley(h, n_levels: int) -> float:
    idx = np.asarray(h, dtype=float)
    if np.any(idx != np.round(idx)) or np.any(idx < 0) or np.any(idx >= n_levels):
        raise ValueError(f"indices must be integers in 0..{n_levels - 1}")
    return ackley(ackley_levels(n_levels)[idx.astype(int)])


def ackley20c(h) -> float:
    h = np.asarray(h, dtype=float)
    if h.shape != (20,):
        raise ValueError("ackley20c takes 20 indices")
    return discrete_ackley(h, 11)


def ackley53m(z) -> float:
    """50 binary entries followed by 3 continuous ones declared on [-1, 1].

    The continuous block is mapped affinely onto [0, 1] before entering the
    Ackley function, so the optimum is all-zero bits with x = -1.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (53,):
        raise ValueError("ackley53m takes 53 entries")
    bits, x = z[:50], z[50:]
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("binary entries must be 0 or 1")
    if np.any(x < -1) or np.any(x > 1):
        raise ValueError("continuous entries must lie in [-1, 1]")
    return ackley(np.concatenate([bits, (x + 1.0) / 2.0]))


def _as_pm1(s) -> np.ndarray:
    s = np.asarray(s, dtype=float).ravel()
    if np.any((s != 0) & (s != 1) & (s != -1)):
        raise ValueError("sequence entries must be in {0, 1} or {-1, +1}")
    return np.where(s == 0, -1.0, s)


def labs_energy(s) -> float:
    s = _as_pm1(s)
    n = len(s)
    return float(sum(np.dot(s[: n - k], s[k:]) ** 2 for k in range(1, n)))


def labs_merit(s, minimize: bool = True) -> float:
    """Merit factor n^2 / (2E); negated when ``minimize`` (0 maps to -1).

    Zero energy (impossible for n >= 2) returns a -1e9 sentinel when
    minimizing.
    """
    s = _as_pm1(s)
    n = len(s)
    if n < 2:
        raise ValueError("LABS needs n >= 2")
    E = labs_energy(s)
    if E == 0:
        return LABS_ZERO_ENERGY if minimize else -LABS_ZERO_ENERGY
    F = n * n / (2.0 * E)
    return -F if minimize else F


# --------------------------------------------------------------------------- MaxSAT


class WcnfParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class WcnfInstance:
    n_vars: int
    clauses: Tuple[Tuple[float, Tuple[int, ...]], ...]
    top: Optional[float] = None
    _var: np.ndarray = field(init=False, repr=False, compare=False)
    _sign: np.ndarray = field(init=False, repr=False, compare=False)
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_vars < 1:
            raise ValueError("instance needs at least one variable")
        clauses = tuple((float(w), tuple(int(l) for l in lits)) for w, lits in self.clauses)
        width = 1
        for w, lits in clauses:
            if not (math.isfinite(w) and w > 0):
                raise ValueError(f"clause weight {w} must be finite and positive")
            if not lits:
                raise ValueError("empty clause")
            if any(l == 0 or abs(l) > self.n_vars for l in lits):
                raise ValueError(f"literal out of range in {lits}")
            width = max(width, len(lits))
        object.__setattr__(self, "clauses", clauses)
        var = np.zeros((len(clauses), width), dtype=int)
        sign = np.full((len(clauses), width), -1, dtype=int)  # -1 marks padding
        for i, (_, lits) in enumerate(clauses):
            var[i, : len(lits)] = [abs(l) - 1 for l in lits]
            sign[i, : len(lits)] = [1 if l > 0 else 0 for l in lits]
        object.__setattr__(self, "_var", var)
        object.__setattr__(self, "_sign", sign)
        object.__setattr__(self, "_weights", np.array([w for w, _ in clauses]))

    @property
    def n_clauses(self) -> int:
        return len(self.clauses)

    @property
    def total_weight(self) -> float:
        return float(self._weights.sum())

    def satisfied(self, assignment) -> np.ndarray:
        a = np.asarray(assignment, dtype=float).ravel()
        if a.shape != (self.n_vars,):
            raise ValueError(f"assignment of length {len(a)}, expected {self.n_vars}")
        if np.any((a != 0) & (a != 1)):
            raise ValueError("assignment entries must be 0 or 1")
        lit_true = a.astype(int)[self._var] == self._sign
        return np.any(lit_true, axis=1)


def maxsat_eval(inst: WcnfInstance, assignment) -> float:
    """Negated total weight of satisfied clauses."""
    return -float(inst._weights[inst.satisfied(assignment)].sum())


def _number(tok: str, line: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise WcnfParseError(f"bad number {tok!r}", line) from None


def parse_wcnf(text: str) -> WcnfInstance:
    header = None
    clauses = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        toks = line.split()
        if toks[0] == "p":
            if header is not None:
                raise WcnfParseError("duplicate header", lineno)
            if len(toks) not in (4, 5) or toks[1] != "wcnf":
                raise WcnfParseError("expected 'p wcnf nv nc [top]'", lineno)
            try:
                nv, nc = int(toks[2]), int(toks[3])
            except ValueError:
                raise WcnfParseError("non-integer header counts", lineno) from None
            top = _number(toks[4], lineno) if len(toks) == 5 else None
            if nv < 1 or nc < 0:
                raise WcnfParseError("invalid header counts", lineno)
            header = (nv, nc, top, lineno)
            continue
        if header is None:
            raise WcnfParseError("clause before header", lineno)
        if toks[-1] != "0":
            raise WcnfParseError("clause not terminated by 0", lineno)
        weight = _number(toks[0], lineno)
        if not (math.isfinite(weight) and weight > 0):
            raise WcnfParseError(f"invalid weight {toks[0]}", lineno)
        try:
            lits = tuple(int(t) for t in toks[1:-1])
        except ValueError:
            raise WcnfParseError("non-integer literal", lineno) from None
        if not lits:
            raise WcnfParseError("empty clause", lineno)
        if any(l == 0 or abs(l) > header[0] for l in lits):
            raise WcnfParseError("literal out of range", lineno)
        clauses.append((weight, lits))
    if header is None:
        raise WcnfParseError("missing header", 0)
    nv, nc, top, hline = header
    if len(clauses) != nc:
        raise WcnfParseError(f"header declares {nc} clauses, found {len(clauses)}", hline)
    return WcnfInstance(nv, tuple(clauses), top)


def _fmt_weight(w: float) -> str:
    return str(int(w)) if float(w).is_integer() else repr(float(w))


def serialize_wcnf(inst: WcnfInstance, comment: str = "") -> str:
    lines = [f"c {c}" for c in comment.splitlines()]
    head = f"p wcnf {inst.n_vars} {inst.n_clauses}"
    if inst.top is not None:
        head += f" {_fmt_weight(inst.top)}"
    lines.append(head)
    for w, lits in inst.clauses:
        lines.append(" ".join([_fmt_weight(w), *map(str, lits), "0"]))
    return "\n".join(lines) + "\n"


def random_wcnf(n_vars: int, n_clauses: int, seed: int, max_len: int = 3, max_weight: int = 100) -> WcnfInstance:
    """Random weighted instance: clauses of 1..max_len distinct variables, integer weights."""
    rng = np.random.default_rng(seed)
    clauses = []
    for _ in range(n_clauses):
        k = int(rng.integers(1, max_len + 1))
        vars_ = rng.choice(n_vars, size=min(k, n_vars), replace=False) + 1
        signs = rng.choice([-1, 1], size=len(vars_))
        clauses.append((float(rng.integers(1, max_weight + 1)), tuple(int(v) for v in vars_ * signs)))
    return WcnfInstance(n_vars, tuple(clauses))


# name -> (n_vars, n_clauses, seed)
BUNDLED_WCNF = {
    "maxsat28": (28, 150, 28),
    "maxsat125": (125, 500, 125),
    "maxsat-small-a": (10, 40, 1010),
    "maxsat-small-b": (12, 50, 1212),
    "maxsat-small-c": (15, 60, 1515),
}


@lru_cache(maxsize=None)
def load_bundled_wcnf(name: str) -> WcnfInstance:
    if name not in BUNDLED_WCNF:
        raise KeyError(f"no bundled instance {name!r}")
    text = resources.files("mocahesp").joinpath("data").joinpath(f"{name}.wcnf").read_text()
    return parse_wcnf(text)


def brute_force_maxsat(inst: WcnfInstance) -> Tuple[float, np.ndarray]:
    """Exhaustive optimum (minimized value, assignment) for small instances."""
    if inst.n_vars > 20:
        raise ValueError("brute force limited to 20 variables")
    grid = ((np.arange(2**inst.n_vars)[:, None] >> np.arange(inst.n_vars)) & 1).astype(float)
    vals = np.array([maxsat_eval(inst, a) for a in grid])
    i = int(np.argmin(vals))
    return float(vals[i]), grid[i]


# --------------------------------------------------------------------------- registry


@dataclass(frozen=True)
class Benchmark:
    name: str
    space: MixedSpace
    objective: Objective
    budget: int
    optimum: Optional[float] = None


def binary_space(n: int) -> MixedSpace:
    return MixedSpace(tuple(VariableSpec.categorical((0, 1)) for _ in range(n)))


def ackley_space(n_vars: int, n_levels: int) -> MixedSpace:
    levels = tuple(float(v) for v in ackley_levels(n_levels))
    return MixedSpace(tuple(VariableSpec.ordinal(levels) for _ in range(n_vars)))


def ackley53m_space() -> MixedSpace:
    bits = tuple(VariableSpec.categorical((0, 1)) for _ in range(50))
    cont = tuple(VariableSpec.continuous(-1.0, 1.0) for _ in range(3))
    return MixedSpace(bits + cont)


def shift_vector(space: MixedSpace, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([rng.integers(c) for c in space.cardinalities[space.comb_idx]], dtype=int)


SHIFT_SEED = 2024


def _shifted(b: Benchmark) -> Benchmark:
    delta = shift_vector(b.space, SHIFT_SEED)
    return Benchmark("shifted-" + b.name, b.space, shift_wrap(b.objective, delta, b.space), b.budget, b.optimum)


def _maxsat(name: str, budget: int) -> Benchmark:
    inst = load_bundled_wcnf(name)
    optimum = brute_force_maxsat(inst)[0] if inst.n_vars <= 15 else None
    return Benchmark(name, binary_space(inst.n_vars), lambda z: maxsat_eval(inst, z), budget, optimum)


def _labs(n: int) -> Benchmark:
    return Benchmark(f"labs{n}", binary_space(n), labs_merit, 800)


_BASE: Dict[str, Callable[[], Benchmark]] = {
    "ackley20c": lambda: Benchmark("ackley20c", ackley_space(20, 11), ackley20c, 400, 0.0),
    "ackley53m": lambda: Benchmark("ackley53m", ackley53m_space(), ackley53m, 400, 0.0),
    "ackley2d": lambda: Benchmark("ackley2d", ackley_space(2, 51), lambda h: discrete_ackley(h, 51), 200, 0.0),
    "labs50": lambda: _labs(50),
    "maxsat28": lambda: _maxsat("maxsat28", 400),
    "maxsat125": lambda: _maxsat("maxsat125", 500),
    "maxsat-small-a": lambda: _maxsat("maxsat-small-a", 200),
    "maxsat-small-b": lambda: _maxsat("maxsat-small-b", 200),
    "maxsat-small-c": lambda: _maxsat("maxsat-small-c", 200),
}
_SHIFTABLE = ("ackley20c", "ackley53m", "ackley2d", "labs50")


def list_benchmarks() -> Sequence[str]:
    return sorted(list(_BASE) + ["shifted-" + n for n in _SHIFTABLE])


@lru_cache(maxsize=None)
def get_benchmark(name: str) -> Benchmark:
    if name in _BASE:
        return _BASE[name]()
    if name.startswith("shifted-") and name[len("shifted-") :] in _SHIFTABLE:
        return _shifted(_BASE[name[len("shifted-") :]]())
    raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(list_benchmarks())}")
