"""Exact computations on a periodized environment viewed from the walker.

An environment window over sites 0..N is closed into a torus of N sites with
period L = x_N. The jump chain then has exactly N states; its transition
matrix is banded (offsets -R..-1, 1..R, modulo N) and carries the unwrapped
displacement of every jump. Stationary measures, correctors, diffusion
coefficients and mobilities are linear algebra on that matrix.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spilu, splu

from mottlab.core.env_model import EnvModel, EnvWindow, sample_window
from mottlab.core.rate_kernel import DEFAULT_EPS_TAIL, log_rates, radius_cap, tail_mass_bound
from mottlab.errors import ChainTooSmallError, NumericError, UsageError

logger = logging.getLogger(__name__)

# smallest torus with 2R < N at R = 1; runs set their own floor in RunConfig
MIN_SITES = 3
DIRECT_SOLVE_MAX_SITES = 8192
STATIONARY_TOL = 1e-12
RESIDUAL_TOL = 1e-8
MAX_REFINEMENTS = 2
ILU_DROP_TOL = 1e-10
ILU_FILL_FACTOR = 10
KRYLOV_RTOL = 1e-12
KRYLOV_RESTART = 100
KRYLOV_MAXITER = 200
KRYLOV_SWEEPS = 4
KRYLOV_SAFETY = 0.1


@dataclass(slots=True, frozen=True, eq=False)
class FiniteChain:
    """N-state jump chain on a torus.

    Column ``c`` of the (N, 2R) arrays holds offset ``offsets[c]`` with the
    layout [-R..-1, 1..R]; ``targets[i, c] = (i + offsets[c]) mod N``.
    """

    model: EnvModel
    lam: float
    positions: np.ndarray
    marks: np.ndarray
    period_length: float
    radius: int
    offsets: np.ndarray
    targets: np.ndarray
    displacement: np.ndarray
    rates: np.ndarray
    prob: np.ndarray
    exit_rates: np.ndarray
    tail_bound: float
    gaps: np.ndarray

    @property
    def n_sites(self) -> int:
        return int(self.positions.size)

    @property
    def drift(self) -> np.ndarray:
        """Local drift phi_i, summed pairwise over +k / -k offsets."""
        r = self.radius
        weighted = self.displacement * self.prob
        return (weighted[:, :r][:, ::-1] + weighted[:, r:]).sum(axis=1)

    def transition_matrix(self) -> sp.csr_matrix:
        n = self.n_sites
        rows = np.repeat(np.arange(n), self.offsets.size)
        return sp.csr_matrix((self.prob.ravel(), (rows, self.targets.ravel())), shape=(n, n))

    def rate_matrix(self) -> sp.csr_matrix:
        n = self.n_sites
        rows = np.repeat(np.arange(n), self.offsets.size)
        return sp.csr_matrix((self.rates.ravel(), (rows, self.targets.ravel())), shape=(n, n))

    def row_sums(self) -> np.ndarray:
        return self.prob.sum(axis=1)


def chain_window(model: EnvModel, n_sites: int, seed: int) -> EnvWindow:
    """Window over sites 0..n_sites, the input of ``build_chain``."""
    return sample_window(model, (0, int(n_sites)), seed)


def _periodic_layout(window: EnvWindow, n_sites: int | None) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    n = int(n_sites) if n_sites is not None else window.i_max
    if n < MIN_SITES:
        raise ChainTooSmallError(f"chain needs at least {MIN_SITES} sites, got {n}")
    if not window.contains(0, n):
        raise UsageError(f"window {window.index_range} does not cover sites 0..{n}")
    positions, marks = window.slice(0, n)
    gaps = window.gap_values[-window.i_min : n - window.i_min]
    return positions[:n].copy(), marks[:n].copy(), gaps, float(positions[n])


def _banded(
    model: EnvModel,
    marks: np.ndarray,
    gaps: np.ndarray,
    lam: float,
    radius: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Offsets, targets, displacements and rates for offsets -radius..radius."""
    n = marks.size
    cum = np.concatenate([[0.0], np.cumsum(np.concatenate([gaps, gaps[:radius]]))])
    k = np.arange(1, radius + 1)
    sites = np.arange(n)
    # forward displacement S(i, k) = x_{i+k} - x_i along the torus
    forward = cum[sites[:, None] + k[None, :]] - cum[sites[:, None]]
    # the -k jump out of i is the reverse of the +k jump out of i-k
    back_src = (sites[:, None] - k[None, :]) % n
    backward = -forward[back_src, k[None, :] - 1]
    offsets = np.concatenate([-k[::-1], k])
    displacement = np.concatenate([backward[:, ::-1], forward], axis=1)
    targets = (sites[:, None] + offsets[None, :]) % n
    logr = log_rates(model, displacement, marks[:, None], marks[targets], lam)
    return offsets, targets, displacement, np.exp(logr)


def certified_radius(window: EnvWindow, lam: float, eps_tail: float = DEFAULT_EPS_TAIL, n_sites: int | None = None) -> int:
    """Smallest radius certifying ``eps_tail`` on every row of the torus."""
    _, marks, gaps, _ = _periodic_layout(window, n_sites)
    n = marks.size
    d = window.model.min_gap
    max_radius = (n - 1) // 2
    _, _, _, near = _banded(window.model, marks, gaps, lam, 1)
    cap = min(radius_cap(lam, d, eps_tail, float(near.max(axis=1).min())), max_radius)
    _, _, _, rates = _banded(window.model, marks, gaps, lam, cap)
    # exit rate truncated at radius m, for m = 1..cap
    exits = np.cumsum(rates[:, :cap][:, ::-1] + rates[:, cap:], axis=1)
    tails = np.array([tail_mass_bound(m, lam, d) for m in range(1, cap + 1)])
    ok = tails[None, :] <= eps_tail * exits
    if not ok[:, -1].all():
        raise ChainTooSmallError(
            f"chain too small for requested tail accuracy: radius {cap} does not certify eps_tail={eps_tail:g} on {n} sites"
        )
    return int(np.argmax(ok, axis=1).max()) + 1


def build_chain(
    window: EnvWindow,
    lam: float,
    eps_tail: float = DEFAULT_EPS_TAIL,
    *,
    radius: int | None = None,
    n_sites: int | None = None,
) -> FiniteChain:
    """Periodize ``window`` (sites 0..N) into an N-state jump chain with bias ``lam``."""
    lam = float(lam)
    # negative lam mirrors the bias; it is only used for central differences
    if not -1.0 < lam < 1.0:
        raise UsageError(f"bias lambda must lie in (-1, 1), got {lam}")
    positions, marks, gaps, period = _periodic_layout(window, n_sites)
    n = marks.size
    if radius is None:
        radius = certified_radius(window, lam, eps_tail, n_sites)
    radius = int(radius)
    if not 1 <= radius or 2 * radius >= n:
        raise ChainTooSmallError(f"chain too small for requested tail accuracy: radius {radius} needs 2R < N={n}")

    offsets, targets, displacement, rates = _banded(window.model, marks, gaps, lam, radius)
    reach = float(np.abs(displacement).max())
    if reach >= period / 2.0:
        raise ChainTooSmallError(
            f"chain too small for requested tail accuracy: reach {reach:.4g} >= L/2 = {period / 2.0:.4g}"
        )
    exit_rates = rates.sum(axis=1)
    prob = rates / exit_rates[:, None]
    gaps = gaps.copy()
    for arr in (positions, marks, offsets, targets, displacement, rates, prob, exit_rates, gaps):
        arr.setflags(write=False)
    logger.debug("built chain N=%d lam=%.4g radius=%d", n, lam, radius)
    return FiniteChain(
        model=window.model,
        lam=lam,
        positions=positions,
        marks=marks,
        period_length=period,
        radius=radius,
        offsets=offsets,
        targets=targets,
        displacement=displacement,
        rates=rates,
        prob=prob,
        exit_rates=exit_rates,
        tail_bound=tail_mass_bound(radius, lam, window.model.min_gap),
        gaps=gaps,
    )


def build_chain_family(
    window: EnvWindow,
    lambdas: Sequence[float],
    eps_tail: float = DEFAULT_EPS_TAIL,
    *,
    n_sites: int | None = None,
) -> list[FiniteChain]:
    """Chains over a lambda grid sharing one radius, so the target sets agree."""
    radius = max(certified_radius(window, lam, eps_tail, n_sites) for lam in lambdas)
    return [build_chain(window, lam, eps_tail, radius=radius, n_sites=n_sites) for lam in lambdas]


# ---------------------------------------------------------------------------
# Stationary distribution
# ---------------------------------------------------------------------------

def stationary_residual(chain: FiniteChain, pi: np.ndarray) -> float:
    return float(np.max(np.abs(chain.transition_matrix().T @ pi - pi)))


def _grounded_system(chain: FiniteChain) -> sp.csc_matrix:
    """P^T - I with row 0 replaced by ones; its solution against e_0 is pi."""
    n = chain.n_sites
    a = (chain.transition_matrix().T - sp.identity(n, format="csr")).tolil()
    a[0, :] = np.ones(n)
    return a.tocsc()


def _stationary_direct(chain: FiniteChain) -> np.ndarray:
    a = _grounded_system(chain)
    lu = splu(a)
    b = np.zeros(chain.n_sites)
    b[0] = 1.0
    pi = lu.solve(b)
    for _ in range(MAX_REFINEMENTS):
        pi = pi + lu.solve(b - a @ pi)
    return pi


def _stationary_krylov(chain: FiniteChain, tol: float) -> np.ndarray:
    """ILU-preconditioned GMRES on the grounded system, then refinement sweeps."""
    n = chain.n_sites
    a = _grounded_system(chain)
    ilu = spilu(a, drop_tol=ILU_DROP_TOL, fill_factor=ILU_FILL_FACTOR)
    precond = LinearOperator((n, n), matvec=ilu.solve, dtype=np.float64)
    b = np.zeros(n)
    b[0] = 1.0
    pi = np.full(n, 1.0 / n)
    for sweep in range(KRYLOV_SWEEPS):
        if stationary_residual(chain, pi / pi.sum()) <= tol * KRYLOV_SAFETY:
            break
        step, info = gmres(
            a,
            b - a @ pi,
            M=precond,
            rtol=KRYLOV_RTOL,
            atol=0.0,
            restart=KRYLOV_RESTART,
            maxiter=KRYLOV_MAXITER,
        )
        if info < 0:
            raise NumericError(f"gmres breakdown (info={info})", stationary_residual(chain, pi))
        if info > 0:
            logger.debug("gmres sweep %d stopped after %d iterations above rtol", sweep, info)
        pi = pi + step
    return pi


def stationary_distribution(chain: FiniteChain, method: str = "auto", tol: float = STATIONARY_TOL) -> np.ndarray:
    """Stationary law pi of the chain.

    ``auto`` uses the reversible closed form exit_rate / sum(exit_rate) at
    lam = 0, a direct sparse solve up to 8192 sites and ILU-preconditioned
    GMRES beyond.
    """
    if method == "auto":
        if chain.lam == 0.0:
            method = "reversible"
        else:
            method = "direct" if chain.n_sites <= DIRECT_SOLVE_MAX_SITES else "krylov"
    if method == "reversible":
        if chain.lam != 0.0:
            raise UsageError("the reversible closed form only holds at lambda = 0")
        pi = chain.exit_rates / chain.exit_rates.sum()
    elif method == "direct":
        pi = _stationary_direct(chain)
    elif method == "krylov":
        pi = _stationary_krylov(chain, tol)
    else:
        raise UsageError(f"unknown stationary method {method!r}")
    pi = pi / pi.sum()
    residual = stationary_residual(chain, pi)
    if residual > tol or not np.all(pi > 0):
        raise NumericError(f"stationary solve ({method}) failed", residual)
    return pi


# ---------------------------------------------------------------------------
# Velocities
# ---------------------------------------------------------------------------

def mean_holding_time(chain: FiniteChain, pi: np.ndarray) -> float:
    """Q[1 / exit_rate]."""
    return float(np.dot(pi, 1.0 / chain.exit_rates))


def chain_velocities(chain: FiniteChain, pi: np.ndarray) -> tuple[float, float]:
    """(v_Y, v_X) with v_Y = Q[phi] and v_X = v_Y / Q[1 / exit_rate]."""
    v_y = float(np.dot(pi, chain.drift))
    return v_y, v_y / mean_holding_time(chain, pi)


# ---------------------------------------------------------------------------
# Correctors and diffusion
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True, eq=False)
class CorrectorSolution:
    """Solution of (eps - L0) g = f - pi(f) with pi(g) = 0."""

    g: np.ndarray
    residual: float
    eps_used: float
    f_name: str

    def to_dict(self) -> dict[str, Any]:
        return {"residual": self.residual, "eps": self.eps_used, "f": self.f_name}


def _require_reversible(chain: FiniteChain) -> None:
    if chain.lam != 0.0:
        raise UsageError("correctors are defined on the lambda = 0 chain")


def _weighted_norm(pi: np.ndarray, v: np.ndarray) -> float:
    return float(math.sqrt(np.dot(pi, v * v)))


def solve_corrector(
    chain: FiniteChain,
    f: np.ndarray,
    eps: float = 0.0,
    *,
    f_name: str = "f",
    tol: float = RESIDUAL_TOL,
) -> CorrectorSolution:
    """Resolvent (eps > 0) or Poisson (eps = 0) corrector of the centered ``f``.

    The system is factorised once (grounded at site 0 when eps = 0) and
    polished by at most two iterative-refinement sweeps; the residual is the
    pi-weighted 2-norm of (eps - L0) g - f_c.
    """
    _require_reversible(chain)
    if eps < 0:
        raise UsageError("eps must be >= 0")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (chain.n_sites,) or not np.all(np.isfinite(f)):
        raise UsageError("f must be a finite per-site vector")
    pi = stationary_distribution(chain)
    fc = f - np.dot(pi, f)
    n = chain.n_sites
    generator = sp.identity(n, format="csr") - chain.transition_matrix()  # -L0
    system = (generator + eps * sp.identity(n, format="csr")).tocsc()

    if eps == 0.0:
        lu = splu(system[1:, 1:].tocsc())

        def solve(rhs: np.ndarray) -> np.ndarray:
            return np.concatenate([[0.0], lu.solve(rhs[1:])])
    else:
        lu = splu(system)
        solve = lu.solve

    g = solve(fc)
    g = g - np.dot(pi, g)
    residual = _weighted_norm(pi, system @ g - fc)
    for sweep in range(MAX_REFINEMENTS):
        if residual <= tol * 1e-2:
            break
        g = g + solve(fc - system @ g)
        g = g - np.dot(pi, g)
        residual = _weighted_norm(pi, system @ g - fc)
        logger.debug("corrector refinement %d residual=%.3e", sweep + 1, residual)
    if residual > tol:
        raise NumericError(f"corrector solve for {f_name} did not reach tolerance", residual)
    return CorrectorSolution(g=g, residual=residual, eps_used=float(eps), f_name=f_name)


def gradient(chain: FiniteChain, g: np.ndarray) -> np.ndarray:
    """Gradient form (nabla g)(i, c) = g(target) - g(i)."""
    return g[chain.targets] - g[:, None]


def gradient_distance(chain: FiniteChain, pi: np.ndarray, g1: np.ndarray, g2: np.ndarray) -> float:
    """L2(M) distance between the gradient forms of g1 and g2."""
    diff = gradient(chain, g1) - gradient(chain, g2)
    return float(math.sqrt(np.dot(pi, (chain.prob * diff**2).sum(axis=1))))


def diffusion_from_corrector(chain: FiniteChain, pi: np.ndarray, g: np.ndarray) -> float:
    """D_Y = Q0[sum_k p_k (dx_k - phi)(dx_k + nabla g)] for the corrector g of phi."""
    _require_reversible(chain)
    centered = chain.displacement - chain.drift[:, None]
    harmonic = chain.displacement + gradient(chain, g)
    d_y = float(np.dot(pi, (chain.prob * centered * harmonic).sum(axis=1)))
    if d_y < -1e-10:
        raise NumericError(f"negative diffusion coefficient {d_y:.3e}", abs(d_y))
    return d_y


def diffusion_coefficients(chain: FiniteChain, tol: float = RESIDUAL_TOL) -> tuple[float, float, CorrectorSolution]:
    """(D_Y, D_X, corrector of phi) on a lambda = 0 chain."""
    pi = stationary_distribution(chain)
    sol = solve_corrector(chain, chain.drift, 0.0, f_name="drift", tol=tol)
    d_y = diffusion_from_corrector(chain, pi, sol.g)
    return d_y, d_y / mean_holding_time(chain, pi), sol


def drift_sensitivity(chain: FiniteChain, pi: np.ndarray) -> float:
    """Q0[d/dlam phi_lam at 0] = Q0[sum_k p_k (dx_k - phi) dx_k]."""
    centered = chain.displacement - chain.drift[:, None]
    return float(np.dot(pi, (chain.prob * centered * chain.displacement).sum(axis=1)))


# ---------------------------------------------------------------------------
# Linear response
# ---------------------------------------------------------------------------

def q_lambda_expectation(chains: Sequence[FiniteChain], f: np.ndarray) -> list[float]:
    """Q_lam(f) for every chain of a family built on one window."""
    f = np.asarray(f, dtype=np.float64)
    return [float(np.dot(stationary_distribution(chain), f)) for chain in chains]


@dataclass(slots=True, frozen=True)
class RadonNikodymReport:
    lambdas: tuple[float, ...]
    norms: tuple[float, ...]
    p: float

    @property
    def supremum(self) -> float:
        return max(self.norms)

    def to_dict(self) -> dict[str, Any]:
        return {"lambdas": list(self.lambdas), "norms": list(self.norms), "p": self.p, "supremum": self.supremum}


def rn_derivative_norms(chains: Sequence[FiniteChain], p: float = 2.0) -> RadonNikodymReport:
    """L^p(pi_0) norms of pi_lam / pi_0; the first chain must be the lambda = 0 one."""
    if p < 2:
        raise UsageError("the Radon-Nikodym bound is stated for p >= 2")
    if not chains or chains[0].lam != 0.0:
        raise UsageError("the chain family must start at lambda = 0")
    pi0 = stationary_distribution(chains[0])
    norms = []
    for chain in chains:
        density = stationary_distribution(chain) / pi0
        norms.append(float(np.dot(pi0, density**p) ** (1.0 / p)))
    return RadonNikodymReport(lambdas=tuple(c.lam for c in chains), norms=tuple(norms), p=float(p))


def derivative_representation(chain: FiniteChain, pi: np.ndarray, f: np.ndarray, f_name: str = "f") -> float:
    """d/dlam Q_lam(f) at 0 as Q0[sum_k p_k (dx_k - phi) nabla g], g the corrector of f."""
    _require_reversible(chain)
    sol = solve_corrector(chain, f, 0.0, f_name=f_name)
    centered = chain.displacement - chain.drift[:, None]
    return float(np.dot(pi, (chain.prob * centered * gradient(chain, sol.g)).sum(axis=1)))


def one_sided_derivative(f0: float, f1: float, f2: float, h: float) -> float:
    """Second-order forward difference from values at 0, h and 2h."""
    return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)


def q_lambda_derivative_fd(
    window: EnvWindow,
    f: np.ndarray,
    h: float,
    eps_tail: float = DEFAULT_EPS_TAIL,
    *,
    scheme: str = "one_sided",
    n_sites: int | None = None,
) -> float:
    """Finite-difference d/dlam Q_lam(f) at 0.

    ``one_sided`` uses lam = 0, h, 2h; ``central`` uses lam = -h and h.
    """
    if scheme == "one_sided":
        values = q_lambda_expectation(build_chain_family(window, [0.0, h, 2.0 * h], eps_tail, n_sites=n_sites), f)
        return one_sided_derivative(*values, h)
    if scheme == "central":
        low, high = q_lambda_expectation(build_chain_family(window, [-h, h], eps_tail, n_sites=n_sites), f)
        return (high - low) / (2.0 * h)
    raise UsageError(f"unknown difference scheme {scheme!r}")


@dataclass(slots=True, frozen=True)
class Mobility:
    h: float
    field_scale: float
    v_y: tuple[float, float, float]
    v_x: tuple[float, float, float]

    @property
    def mobility_y(self) -> float:
        return one_sided_derivative(*self.v_y, self.h)

    @property
    def mobility_x(self) -> float:
        return one_sided_derivative(*self.v_x, self.h)

    def to_dict(self) -> dict[str, Any]:
        return {
            "h": self.h,
            "field_scale": self.field_scale,
            "v_Y": list(self.v_y),
            "v_X": list(self.v_x),
            "mobility_Y": self.mobility_y,
            "mobility_X": self.mobility_x,
        }


def mobility_fd(
    window: EnvWindow,
    h: float,
    eps_tail: float = DEFAULT_EPS_TAIL,
    *,
    field_scale: float = 1.0,
    n_sites: int | None = None,
) -> Mobility:
    """d/dlam v(lam) at 0 from chains at tilts 0, h and 2h (times ``field_scale``)."""
    if not 0.0 < h <= 0.05:
        raise UsageError("h must lie in (0, 0.05]")
    tilts = [0.0, h * field_scale, 2.0 * h * field_scale]
    v_y, v_x = [], []
    for chain in build_chain_family(window, tilts, eps_tail, n_sites=n_sites):
        vy, vx = chain_velocities(chain, stationary_distribution(chain))
        v_y.append(vy)
        v_x.append(vx)
    return Mobility(h=float(h), field_scale=float(field_scale), v_y=tuple(v_y), v_x=tuple(v_x))
