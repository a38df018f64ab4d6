"""Marked point-process environments for the 1D Mott walk.

An environment is the bi-infinite sequence of impurity positions ``x_i`` (with
``x_0 = 0``) and energy marks ``E_i``. Gaps ``Z_i = x_{i+1} - x_i`` and marks are
i.i.d. across indices; the value at index ``i`` is a pure function of
``(model, seed, i)``, so windows can be grown in any order and stay bit-identical
on their overlap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np
from scipy import integrate

from mottlab.errors import ConfigError, UsageError, WindowRangeError

logger = logging.getLogger(__name__)

BLOCK_SIZE = 256
GAP_KINDS = ("deterministic", "shifted_exponential", "shifted_pareto")
MARK_KINDS = ("point_mass", "power_uniform")
U_KINDS = ("zero", "mott")


# ---------------------------------------------------------------------------
# Distribution specs
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True)
class GapLaw:
    """Law of the interpoint distance Z.

    ``deterministic``: Z = d. ``shifted_exponential``: Z = d + Exp(rate c).
    ``shifted_pareto``: Pareto with scale d and tail exponent ``tail``, i.e.
    P(Z > z) = (d / z)^tail for z >= d.
    """

    kind: str
    d: float
    c: float = 0.0
    tail: float = 0.0

    @classmethod
    def deterministic(cls, z: float) -> "GapLaw":
        return cls(kind="deterministic", d=float(z))

    @classmethod
    def shifted_exponential(cls, d: float, c: float) -> "GapLaw":
        return cls(kind="shifted_exponential", d=float(d), c=float(c))

    @classmethod
    def shifted_pareto(cls, d: float, tail: float) -> "GapLaw":
        return cls(kind="shifted_pareto", d=float(d), tail=float(tail))

    def validate(self) -> None:
        if self.kind not in GAP_KINDS:
            raise ConfigError(f"gap law must be one of {GAP_KINDS}, got {self.kind!r}")
        if not self.d > 0:
            raise ConfigError("gap law needs a minimal gap d > 0")
        if self.kind == "shifted_exponential" and not self.c > 0:
            raise ConfigError("shifted_exponential needs rate c > 0")
        # E[Z] < inf requires tail > 1
        if self.kind == "shifted_pareto" and not self.tail > 1:
            raise ConfigError("shifted_pareto needs tail exponent > 1 for a finite mean gap")

    @property
    def min_gap(self) -> float:
        return self.d

    def mean(self) -> float:
        if self.kind == "deterministic":
            return self.d
        if self.kind == "shifted_exponential":
            return self.d + 1.0 / self.c
        return self.tail * self.d / (self.tail - 1.0)

    def variance(self) -> float:
        if self.kind == "deterministic":
            return 0.0
        if self.kind == "shifted_exponential":
            return 1.0 / self.c**2
        if self.tail <= 2:
            return math.inf
        a = self.tail
        return a * self.d**2 / ((a - 1.0) ** 2 * (a - 2.0))

    def mgf_abscissa(self) -> float:
        """Supremum of the s for which E[e^{sZ}] is finite."""
        if self.kind == "deterministic":
            return math.inf
        if self.kind == "shifted_exponential":
            return self.c
        return 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "deterministic":
            return np.full(size, self.d, dtype=np.float64)
        if self.kind == "shifted_exponential":
            return self.d + rng.exponential(1.0 / self.c, size)
        # numpy's pareto is the Lomax law; shifting by one gives the classical Pareto
        return self.d * (1.0 + rng.pareto(self.tail, size))

    def mgf(self, s: float) -> tuple[float, float]:
        """E[e^{sZ}] and an absolute error bound; ``inf`` when divergent."""
        s = float(s)
        if s == 0.0:
            return 1.0, 0.0
        if self.kind == "deterministic":
            return math.exp(s * self.d), 0.0
        if self.kind == "shifted_exponential":
            if s >= self.c:
                return math.inf, 0.0
            return math.exp(s * self.d) * self.c / (self.c - s), 0.0
        if s > 0:
            return math.inf, 0.0
        a, d = self.tail, self.d
        value, abserr = integrate.quad(lambda z: math.exp(s * z) * a * d**a * z ** (-a - 1.0), d, math.inf)
        return float(value), float(abserr)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "d": self.d}
        if self.kind == "shifted_exponential":
            out["c"] = self.c
        if self.kind == "shifted_pareto":
            out["tail"] = self.tail
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GapLaw":
        return cls(
            kind=str(data.get("kind", "")),
            d=float(data.get("d", 0.0)),
            c=float(data.get("c", 0.0)),
            tail=float(data.get("tail", 0.0)),
        )


@dataclass(slots=True, frozen=True)
class MarkLaw:
    """Law of the energy mark E, supported on [-A, A]."""

    kind: str
    value: float = 0.0
    alpha: float = 0.0
    amplitude: float = 1.0

    @classmethod
    def point_mass(cls, value: float = 0.0) -> "MarkLaw":
        return cls(kind="point_mass", value=float(value))

    @classmethod
    def power_uniform(cls, alpha: float, amplitude: float) -> "MarkLaw":
        return cls(kind="power_uniform", alpha=float(alpha), amplitude=float(amplitude))

    def validate(self) -> None:
        if self.kind not in MARK_KINDS:
            raise ConfigError(f"mark law must be one of {MARK_KINDS}, got {self.kind!r}")
        if self.kind == "power_uniform":
            if not self.amplitude > 0:
                raise ConfigError("power_uniform needs amplitude A > 0")
            if not self.alpha >= 0:
                raise ConfigError("power_uniform needs exponent alpha >= 0")
        elif not math.isfinite(self.value):
            raise ConfigError("point_mass value must be finite")

    @property
    def bound(self) -> float:
        """A with supp(E) contained in [-A, A]."""
        if self.kind == "point_mass":
            return abs(self.value)
        return self.amplitude

    @property
    def density_constant(self) -> float:
        """c in the density c|E|^alpha on [-A, A]."""
        if self.kind != "power_uniform":
            raise UsageError("density_constant is only defined for power_uniform")
        return (self.alpha + 1.0) / (2.0 * self.amplitude ** (self.alpha + 1.0))

    def mean(self) -> float:
        return self.value if self.kind == "point_mass" else 0.0

    def variance(self) -> float:
        if self.kind == "point_mass":
            return 0.0
        return self.amplitude**2 * (self.alpha + 1.0) / (self.alpha + 3.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "point_mass":
            return np.full(size, self.value, dtype=np.float64)
        u = rng.random((2, size))
        magnitude = self.amplitude * u[0] ** (1.0 / (self.alpha + 1.0))
        return np.where(u[1] < 0.5, -magnitude, magnitude)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "point_mass":
            return {"kind": self.kind, "value": self.value}
        return {"kind": self.kind, "alpha": self.alpha, "amplitude": self.amplitude}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MarkLaw":
        return cls(
            kind=str(data.get("kind", "")),
            value=float(data.get("value", 0.0)),
            alpha=float(data.get("alpha", 0.0)),
            amplitude=float(data.get("amplitude", 1.0)),
        )


@dataclass(slots=True, frozen=True)
class EnvModel:
    """Distribution of (Z_k, E_k) together with the interaction u."""

    gap_law: GapLaw
    mark_law: MarkLaw = field(default_factory=MarkLaw.point_mass)
    beta: float = 1.0
    u_kind: str = "zero"

    def validate(self) -> "EnvModel":
        self.gap_law.validate()
        self.mark_law.validate()
        if self.u_kind not in U_KINDS:
            raise ConfigError(f"u_kind must be one of {U_KINDS}, got {self.u_kind!r}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ConfigError("beta must be finite and >= 0")
        return self

    @property
    def min_gap(self) -> float:
        return self.gap_law.min_gap

    @property
    def oracle_only(self) -> bool:
        """Deterministic lattices are periodic in law, so they only serve as oracles."""
        return self.gap_law.kind == "deterministic"

    def interaction(self, e_i: np.ndarray | float, e_j: np.ndarray | float) -> np.ndarray:
        e_i = np.asarray(e_i, dtype=np.float64)
        e_j = np.asarray(e_j, dtype=np.float64)
        if self.u_kind == "zero" or self.beta == 0.0:
            return np.zeros(np.broadcast(e_i, e_j).shape)
        return self.beta * (np.abs(e_i) + np.abs(e_j) + np.abs(e_i - e_j))

    def to_dict(self) -> dict[str, Any]:
        return {
            "gap_law": self.gap_law.to_dict(),
            "mark_law": self.mark_law.to_dict(),
            "beta": self.beta,
            "u_kind": self.u_kind,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EnvModel":
        model = cls(
            gap_law=GapLaw.from_dict(dict(data.get("gap_law") or {})),
            mark_law=MarkLaw.from_dict(dict(data.get("mark_law") or {"kind": "point_mass"})),
            beta=float(data.get("beta", 1.0)),
            u_kind=str(data.get("u_kind", "zero")),
        )
        return model.validate()


def lattice_model() -> EnvModel:
    """Unit-gap, zero-energy lattice used as the closed-form oracle."""
    return EnvModel(gap_law=GapLaw.deterministic(1.0), mark_law=MarkLaw.point_mass(0.0), u_kind="zero")


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True, eq=False)
class EnvWindow:
    """Finite contiguous window [i_min, i_max] of an environment.

    ``positions[k]`` and ``marks[k]`` belong to index ``i_min + k``;
    ``gap_values[k]`` is the sampled gap Z between that index and the next.
    Positions are float partial sums of the gaps, so spacing is read from
    ``gap_values``, which keep Z >= d exactly.
    """

    model: EnvModel
    seed: int
    i_min: int
    i_max: int
    positions: np.ndarray
    marks: np.ndarray
    gap_values: np.ndarray

    @property
    def index_range(self) -> tuple[int, int]:
        return self.i_min, self.i_max

    def __len__(self) -> int:
        return self.i_max - self.i_min + 1

    def contains(self, *indices: int) -> bool:
        return all(self.i_min <= i <= self.i_max for i in indices)

    def _offset(self, i: int) -> int:
        if not self.i_min <= i <= self.i_max:
            raise WindowRangeError(f"index {i} outside window [{self.i_min}, {self.i_max}]")
        return i - self.i_min

    def x(self, i: int) -> float:
        return float(self.positions[self._offset(i)])

    def energy(self, i: int) -> float:
        return float(self.marks[self._offset(i)])

    def slice(self, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        """Positions and marks of indices lo..hi inclusive."""
        a, b = self._offset(lo), self._offset(hi)
        return self.positions[a : b + 1], self.marks[a : b + 1]

    def gaps(self) -> np.ndarray:
        return self.gap_values

    def gap(self, i: int) -> float:
        """Z_i = x_{i+1} - x_i as sampled."""
        if not self.i_min <= i < self.i_max:
            raise WindowRangeError(f"gap {i} needs indices {i} and {i + 1} inside [{self.i_min}, {self.i_max}]")
        return float(self.gap_values[i - self.i_min])

    def restrict(self, index_range: tuple[int, int]) -> "EnvWindow":
        lo, hi = _check_range(index_range)
        if lo < self.i_min or hi > self.i_max:
            raise UsageError(f"cannot restrict [{self.i_min}, {self.i_max}] to larger range [{lo}, {hi}]")
        positions, marks = self.slice(lo, hi)
        gaps = self.gap_values[lo - self.i_min : hi - self.i_min]
        return EnvWindow(self.model, self.seed, lo, hi, positions, marks, gaps)

    def same_values(self, other: "EnvWindow") -> bool:
        return (
            self.index_range == other.index_range
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.marks, other.marks)
            and np.array_equal(self.gap_values, other.gap_values)
        )


def _check_range(index_range: tuple[int, int]) -> tuple[int, int]:
    lo, hi = (int(v) for v in index_range)
    if lo > 0 or hi < 0:
        raise UsageError(f"window range [{lo}, {hi}] must contain 0")
    return lo, hi


def _zigzag(block: int) -> int:
    return 2 * block if block >= 0 else -2 * block - 1


@lru_cache(maxsize=8192)
def _block_values(model: EnvModel, seed: int, block: int) -> tuple[np.ndarray, np.ndarray]:
    """Gaps Z_i and marks E_i for i in [block * BLOCK_SIZE, (block + 1) * BLOCK_SIZE)."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(_zigzag(block),))
    rng = np.random.default_rng(seq)
    gaps = model.gap_law.sample(rng, BLOCK_SIZE)
    marks = model.mark_law.sample(rng, BLOCK_SIZE)
    gaps.setflags(write=False)
    marks.setflags(write=False)
    return gaps, marks


def _values(model: EnvModel, seed: int, lo: int, hi: int, which: int) -> np.ndarray:
    """Concatenate per-block values for indices lo..hi inclusive (empty if hi < lo)."""
    if hi < lo:
        return np.empty(0, dtype=np.float64)
    first, last = lo // BLOCK_SIZE, hi // BLOCK_SIZE
    parts = [_block_values(model, seed, b)[which] for b in range(first, last + 1)]
    joined = np.concatenate(parts)
    start = lo - first * BLOCK_SIZE
    return joined[start : start + (hi - lo + 1)]


def sample_window(model: EnvModel, index_range: tuple[int, int], seed: int) -> EnvWindow:
    """Window of the environment (model, seed) over ``index_range``."""
    model.validate()
    lo, hi = _check_range(index_range)
    seed = int(seed)
    if seed < 0:
        raise ConfigError("seed must be >= 0")

    # right side: x_i = Z_0 + ... + Z_{i-1}; left side: x_{-k} = -(Z_{-1} + ... + Z_{-k})
    gaps = np.array(_values(model, seed, lo, hi - 1, 0), dtype=np.float64)
    right = np.cumsum(gaps[-lo:])
    left = np.cumsum(gaps[:-lo][::-1])
    positions = np.concatenate([-left[::-1], [0.0], right])
    marks = np.array(_values(model, seed, lo, hi, 1), dtype=np.float64)
    for arr in (positions, marks, gaps):
        arr.setflags(write=False)
    logger.debug("sampled window [%d, %d] seed=%d", lo, hi, seed)
    return EnvWindow(model=model, seed=seed, i_min=lo, i_max=hi, positions=positions, marks=marks, gap_values=gaps)


def extend_window(window: EnvWindow, new_range: tuple[int, int]) -> EnvWindow:
    lo, hi = _check_range(new_range)
    if lo > window.i_min or hi < window.i_max:
        raise UsageError(
            f"extension must contain [{window.i_min}, {window.i_max}], got [{lo}, {hi}]"
        )
    if (lo, hi) == window.index_range:
        return window
    return sample_window(window.model, (lo, hi), window.seed)


def gap_mgf(model: EnvModel, s: float) -> float:
    """E[e^{s Z_0}], ``inf`` when divergent."""
    return gap_mgf_with_error(model, s)[0]


def gap_mgf_with_error(model: EnvModel, s: float) -> tuple[float, float]:
    model.validate()
    return model.gap_law.mgf(s)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

WINDOW_CSV_HEADER = ("index", "x", "E")


def window_rows(window: EnvWindow) -> list[tuple[int, float, float]]:
    return [
        (window.i_min + k, float(window.positions[k]), float(window.marks[k]))
        for k in range(len(window))
    ]


def window_descriptor(window: EnvWindow) -> dict[str, Any]:
    return {"model": window.model.to_dict(), "seed": window.seed, "range": [window.i_min, window.i_max]}


def window_from_descriptor(data: dict[str, Any]) -> EnvWindow:
    model = EnvModel.from_dict(dict(data["model"]))
    lo, hi = data["range"]
    return sample_window(model, (int(lo), int(hi)), int(data["seed"]))
