"""Jump rates, truncated jump rows and the local drift.

Rates follow r_ij = exp{-|x_i - x_j| + lam (x_j - x_i) - u(E_i, E_j)} and are
evaluated in log space. Rows are truncated at the smallest radius R (in index
steps) for which the omitted rate mass, majorised by a geometric series using
the minimal gap d, is at most ``eps_tail * exit_rate``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from mottlab.core.env_model import EnvWindow, extend_window
from mottlab.errors import InsufficientWindowError, UsageError, WindowRangeError

logger = logging.getLogger(__name__)

DEFAULT_EPS_TAIL = 1e-10
JUMP_ROW_CSV_HEADER = ("source", "target", "dx", "rate", "prob")


def check_bias(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam < 1.0:
        raise UsageError(f"bias lambda must lie in [0, 1), got {lam}")
    return lam


def log_rates(model, dx: np.ndarray, e_src: float | np.ndarray, e_dst: np.ndarray, lam: float) -> np.ndarray:
    """Log of the jump rates for displacements ``dx`` (no range checks, any real lam)."""
    return -np.abs(dx) + lam * dx - model.interaction(e_src, e_dst)


def jump_rate(window: EnvWindow, i: int, j: int, lam: float) -> float:
    lam = check_bias(lam)
    if not window.contains(i, j):
        raise WindowRangeError(f"jump {i}->{j} outside window {window.index_range}")
    if i == j:
        return 0.0
    dx = window.x(j) - window.x(i)
    return float(math.exp(-abs(dx) + lam * dx - float(window.model.interaction(window.energy(i), window.energy(j)))))


def tail_mass_bound(radius: int, lam: float, d: float) -> float:
    """Bound on the rate mass of targets more than ``radius`` index steps away."""
    right = (1.0 - lam) * d
    left = (1.0 + lam) * d
    k = radius + 1
    return math.exp(-right * k) / -math.expm1(-right) + math.exp(-left * k) / -math.expm1(-left)


def radius_cap(lam: float, d: float, eps_tail: float, exit_lower: float) -> int:
    """Radius R with tail_mass_bound(R) <= eps_tail * exit_lower."""
    a = (1.0 - abs(lam)) * d
    target = eps_tail * exit_lower
    # tail_mass_bound(R) <= 2 e^{-a(R+1)} / (1 - e^{-a})
    k = math.log(2.0 / (-math.expm1(-a) * target)) / a
    radius = max(1, math.ceil(k) - 1)
    while tail_mass_bound(radius, lam, d) > target:
        radius += 1
    return radius


@dataclass(slots=True, frozen=True, eq=False)
class JumpRow:
    """Truncated jump distribution out of one site."""

    source_index: int
    lam: float
    target_index: np.ndarray
    displacement: np.ndarray
    rate: np.ndarray
    prob: np.ndarray
    exit_rate: float
    tail_bound: float
    drift: float

    @property
    def radius(self) -> int:
        return int(np.max(np.abs(self.target_index - self.source_index)))

    def rows(self) -> list[tuple[int, int, float, float, float]]:
        return [
            (self.source_index, int(t), float(dx), float(r), float(p))
            for t, dx, r, p in zip(self.target_index, self.displacement, self.rate, self.prob)
        ]


def _minimal_radius(rates: np.ndarray, offsets: np.ndarray, cap: int, lam: float, d: float, eps_tail: float) -> tuple[int, float]:
    """Smallest R <= cap whose truncated exit rate certifies the tail, and that exit rate."""
    per_radius = np.zeros(cap + 1)
    np.add.at(per_radius, np.abs(offsets), rates)
    exits = np.cumsum(per_radius)
    for radius in range(1, cap + 1):
        if tail_mass_bound(radius, lam, d) <= eps_tail * exits[radius]:
            return radius, float(exits[radius])
    return cap, float(exits[cap])


def build_jump_row(window: EnvWindow, i: int, lam: float, eps_tail: float = DEFAULT_EPS_TAIL) -> JumpRow:
    lam = check_bias(lam)
    if not eps_tail > 0:
        raise UsageError("eps_tail must be > 0")
    if not window.contains(i - 1, i, i + 1):
        raise InsufficientWindowError(i, 1)
    model = window.model
    d = model.min_gap

    nearest = max(jump_rate(window, i, i - 1, lam), jump_rate(window, i, i + 1, lam))
    cap = radius_cap(lam, d, eps_tail, nearest)
    if not window.contains(i - cap, i + cap):
        raise InsufficientWindowError(i, cap)

    positions, marks = window.slice(i - cap, i + cap)
    offsets = np.concatenate([np.arange(-cap, 0), np.arange(1, cap + 1)])
    local = offsets + cap
    dx = positions[local] - positions[cap]
    rates = np.exp(log_rates(model, dx, marks[cap], marks[local], lam))

    radius, _ = _minimal_radius(rates, offsets, cap, lam, d, eps_tail)
    keep = np.abs(offsets) <= radius
    rates, dx, offsets = rates[keep], dx[keep], offsets[keep]
    exit_rate = float(rates.sum())
    prob = rates / exit_rate
    return JumpRow(
        source_index=int(i),
        lam=lam,
        target_index=offsets + int(i),
        displacement=dx,
        rate=rates,
        prob=prob,
        exit_rate=exit_rate,
        tail_bound=tail_mass_bound(radius, lam, d),
        drift=paired_drift(dx, prob),
    )


def paired_drift(dx: np.ndarray, prob: np.ndarray) -> float:
    """Sum of dx * p over offsets laid out as [-R..-1, 1..R], pairing +k with -k.

    Mirror-symmetric rows cancel pair by pair, so their drift is exactly zero.
    """
    half = dx.size // 2
    left = (dx[:half] * prob[:half])[::-1]
    right = dx[half:] * prob[half:]
    return float(np.sum(left + right))


def drift_derivative_check(window: EnvWindow, i: int, h: float) -> float:
    """Max |d/dlam p^lam_k at 0 - central difference| over the targets of site i.

    The analytic derivative is p_k (dx_k - phi). All three distributions are
    normalised over the target set of the lam = 0 row.
    """
    if not 0.0 < h <= 0.1:
        raise UsageError("h must lie in (0, 0.1]")
    row = build_jump_row(window, i, 0.0)
    marks = np.array([window.energy(int(t)) for t in row.target_index])
    e_src = window.energy(i)

    def probs(lam: float) -> np.ndarray:
        logr = log_rates(window.model, row.displacement, e_src, marks, lam)
        w = np.exp(logr - logr.max())
        return w / w.sum()

    analytic = row.prob * (row.displacement - row.drift)
    numeric = (probs(h) - probs(-h)) / (2.0 * h)
    return float(np.max(np.abs(analytic - numeric)))


# ---------------------------------------------------------------------------
# Alias sampling
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True, eq=False)
class AliasTable:
    """Vose alias table for O(1) sampling from a finite distribution."""

    prob: np.ndarray
    alias: np.ndarray

    @classmethod
    def build(cls, weights: np.ndarray) -> "AliasTable":
        w = np.asarray(weights, dtype=np.float64)
        n = w.size
        if n == 0 or not np.all(w >= 0) or w.sum() <= 0:
            raise UsageError("alias table needs non-negative weights with positive sum")
        scaled = w * (n / w.sum())
        prob = np.ones(n)
        alias = np.arange(n)
        small = [k for k in range(n) if scaled[k] < 1.0]
        large = [k for k in range(n) if scaled[k] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are 1 up to rounding
        return cls(prob=prob, alias=alias)

    def __len__(self) -> int:
        return int(self.prob.size)

    def draw(self, u_slot: float, u_coin: float) -> int:
        k = int(u_slot * self.prob.size)
        if k >= self.prob.size:
            k = self.prob.size - 1
        return k if u_coin < self.prob[k] else int(self.alias[k])


# ---------------------------------------------------------------------------
# Lazily extended row cache
# ---------------------------------------------------------------------------

class RowCache:
    """Memoised jump rows and alias tables over a lazily extended window.

    One cache belongs to one walker (or one worker); it is not shared between
    threads.
    """

    def __init__(self, window: EnvWindow, lam: float, eps_tail: float = DEFAULT_EPS_TAIL) -> None:
        self.window = window
        self.lam = check_bias(lam)
        self.eps_tail = float(eps_tail)
        self._rows: dict[int, tuple[JumpRow, AliasTable]] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def get(self, site: int) -> tuple[JumpRow, AliasTable]:
        entry = self._rows.get(site)
        if entry is not None:
            return entry
        while True:
            try:
                row = build_jump_row(self.window, site, self.lam, self.eps_tail)
                break
            except InsufficientWindowError as exc:
                self._grow(site, exc.required_radius)
        entry = (row, AliasTable.build(row.prob))
        self._rows[site] = entry
        return entry

    def row(self, site: int) -> JumpRow:
        return self.get(site)[0]

    def _grow(self, site: int, radius: int) -> None:
        lo, hi = self.window.index_range
        pad = max(hi - lo, 64)
        new_lo = min(lo, site - radius - pad) if site - radius < lo else lo
        new_hi = max(hi, site + radius + pad) if site + radius > hi else hi
        logger.debug("extending window %s -> [%d, %d]", self.window.index_range, new_lo, new_hi)
        self.window = extend_window(self.window, (new_lo, new_hi))


def row_to_dict(row: JumpRow) -> dict[str, Any]:
    return {
        "source": row.source_index,
        "lambda": row.lam,
        "exit_rate": row.exit_rate,
        "tail_bound": row.tail_bound,
        "drift": row.drift,
        "radius": row.radius,
    }
