"""Experiment drivers: regime classification, phase sweep, Einstein relation, Arrhenius decay.

Every grid point is an independent task built from an explicit seed path, so
the reports are identical for any worker count. Finite-size gates are module
constants and are echoed into every report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from mottlab.core.chain import (
    RESIDUAL_TOL,
    STATIONARY_TOL,
    build_chain,
    build_chain_family,
    chain_velocities,
    chain_window,
    diffusion_coefficients,
    mean_holding_time,
    mobility_fd,
    rn_derivative_norms,
    stationary_distribution,
)
from mottlab.core.env_model import EnvModel, GapLaw, gap_mgf
from mottlab.core.rate_kernel import DEFAULT_EPS_TAIL
from mottlab.core.stats import DEFAULT_BATCHES, Estimate, LinearFit, independent_mean, linear_fit
from mottlab.core.tasks import ENV_STREAM, derive_seed, run_tasks
from mottlab.core.walker import Horizon, velocity_estimate
from mottlab.errors import UsageError

logger = logging.getLogger(__name__)

BALLISTIC = "ballistic"
SUB_BALLISTIC = "sub_ballistic"
INDETERMINATE = "indeterminate"

STABLE_RATIO = (0.8, 1.2)
DECAY_RATIO_PER_DECADE = 0.5
EINSTEIN_TOLERANCE = 0.05
CONTINUITY_FACTOR = 3.0
ARRHENIUS_MIN_R2 = 0.9
EINSTEIN_MGF_ORDER = 2.0
# discrepancies below this are at finite-difference resolution
DOUBLING_FLOOR = 1e-3


def _extended(value: float) -> float | str:
    return value if math.isfinite(value) else "inf"


# ---------------------------------------------------------------------------
# Regime classification and the phase sweep
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True)
class RegimeVerdict:
    lam: float
    predicted: str
    mgf_ballistic: float
    mgf_subballistic: float
    horizons: tuple[float, ...] = ()
    measured_velocity: tuple[Estimate, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "predicted": self.predicted,
            "mgf_ballistic": _extended(self.mgf_ballistic),
            "mgf_subballistic": _extended(self.mgf_subballistic),
            "horizons": list(self.horizons),
            "measured_velocity": [e.to_dict() for e in self.measured_velocity],
        }


def predict_regime(model: EnvModel, lam: float) -> tuple[str, float, float]:
    """Verdict and the two moment functionals E[e^{(1-lam)Z}], E[e^{-(1+lam)Z}] E[e^{(1-lam)Z}]."""
    if not 0.0 < lam < 1.0:
        raise UsageError(f"regime classification needs lambda in (0, 1), got {lam}")
    forward = gap_mgf(model, 1.0 - lam)
    # gaps are i.i.d., so the two-gap functional factorises
    product = gap_mgf(model, -(1.0 + lam)) * forward
    if math.isfinite(forward):
        return BALLISTIC, forward, product
    if not math.isfinite(product):
        return SUB_BALLISTIC, forward, product
    return INDETERMINATE, forward, product


def classify_regime(
    model: EnvModel,
    lam: float,
    *,
    horizons: Sequence[float] = (),
    kind: str = "continuous",
    n_walkers: int = 16,
    seed: int = 0,
    n_batches: int = DEFAULT_BATCHES,
    eps_tail: float = DEFAULT_EPS_TAIL,
    jobs: int = 1,
) -> RegimeVerdict:
    """Moment-based verdict, with velocity estimates attached when ``horizons`` is given."""
    predicted, forward, product = predict_regime(model, lam)
    measured = tuple(
        velocity_estimate(
            model, lam, Horizon(kind, float(h)).validate(), n_walkers, seed,
            n_batches=n_batches, eps_tail=eps_tail, jobs=jobs,
        )
        for h in horizons
    )
    logger.info("lambda=%.3g gap=%s: %s", lam, model.gap_law.to_dict(), predicted)
    return RegimeVerdict(
        lam=float(lam),
        predicted=predicted,
        mgf_ballistic=forward,
        mgf_subballistic=product,
        horizons=tuple(float(h) for h in horizons),
        measured_velocity=measured,
    )


def velocity_ratios(horizons: Sequence[float], estimates: Sequence[Estimate]) -> list[float]:
    """v(T_{k+1}) / v(T_k); NaN when the earlier estimate is not positive."""
    out = []
    for a, b in zip(estimates, estimates[1:]):
        out.append(b.value / a.value if a.value > 0 else math.nan)
    return out


def measurement_agrees(verdict: RegimeVerdict) -> bool:
    """Stable velocities for a ballistic verdict, decay by half per decade for a sub-ballistic one."""
    ratios = velocity_ratios(verdict.horizons, verdict.measured_velocity)
    if not ratios:
        return True
    if verdict.predicted == BALLISTIC:
        lo, hi = STABLE_RATIO
        return all(lo <= r <= hi for r in ratios)
    if verdict.predicted == SUB_BALLISTIC:
        decades = np.log10(np.asarray(verdict.horizons[1:]) / np.asarray(verdict.horizons[:-1]))
        # a non-positive earlier estimate already counts as decayed
        return all(math.isnan(r) or r <= DECAY_RATIO_PER_DECADE**dec for r, dec in zip(ratios, decades))
    return True


@dataclass(slots=True, frozen=True)
class PhaseRow:
    c: float
    verdict: RegimeVerdict
    ratios: tuple[float, ...]
    consistent: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "c": self.c,
            "verdict": self.verdict.to_dict(),
            "ratios": [r if math.isfinite(r) else None for r in self.ratios],
            "consistent": self.consistent,
        }


@dataclass(slots=True, frozen=True)
class PhaseSweep:
    lam: float
    rows: tuple[PhaseRow, ...]
    gates: dict[str, Any] = field(
        default_factory=lambda: {"stable_ratio": list(STABLE_RATIO), "decay_ratio_per_decade": DECAY_RATIO_PER_DECADE}
    )

    @property
    def threshold(self) -> float:
        return 1.0 - self.lam

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "threshold_c": self.threshold,
            "rows": [row.to_dict() for row in self.rows],
            "gates": dict(self.gates),
        }

    def table(self) -> list[tuple[float, str, float, float, float]]:
        """(c, verdict, horizon, value, stderr) rows."""
        out = []
        for row in self.rows:
            for horizon, est in zip(row.verdict.horizons, row.verdict.measured_velocity):
                out.append((row.c, row.verdict.predicted, horizon, est.value, est.stderr))
        return out


PHASE_CSV_HEADER = ("c", "verdict", "horizon", "value", "stderr")


def phase_sweep(
    lam: float,
    c_grid: Sequence[float],
    horizons: Sequence[float],
    seed: int,
    *,
    d: float = 1.0,
    base: EnvModel | None = None,
    kind: str = "continuous",
    n_walkers: int = 16,
    n_batches: int = DEFAULT_BATCHES,
    eps_tail: float = DEFAULT_EPS_TAIL,
    jobs: int = 1,
) -> PhaseSweep:
    """Shifted-exponential gap rates ``c_grid`` at fixed lam; the grid should straddle 1 - lam."""
    if not (min(c_grid) < 1.0 - lam < max(c_grid)):
        logger.warning("c grid %s does not straddle the threshold %.3g", list(c_grid), 1.0 - lam)
    rows = []
    for c in sorted(float(c) for c in c_grid):
        model = replace(base, gap_law=GapLaw.shifted_exponential(d, c)) if base is not None else EnvModel(
            gap_law=GapLaw.shifted_exponential(d, c)
        )
        verdict = classify_regime(
            model, lam, horizons=horizons, kind=kind, n_walkers=n_walkers, seed=seed,
            n_batches=n_batches, eps_tail=eps_tail, jobs=jobs,
        )
        rows.append(
            PhaseRow(
                c=c,
                verdict=verdict,
                ratios=tuple(velocity_ratios(verdict.horizons, verdict.measured_velocity)),
                consistent=measurement_agrees(verdict),
            )
        )
        logger.info("phase sweep c=%.3g done (%s)", c, verdict.predicted)
    return PhaseSweep(lam=float(lam), rows=tuple(rows))


# ---------------------------------------------------------------------------
# Continuity of the velocities
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True)
class ContinuityScan:
    lambdas: tuple[float, ...]
    v_y: tuple[float, ...]
    v_x: tuple[float, ...]

    @staticmethod
    def _max_jump_ratio(values: Sequence[float]) -> float:
        steps = np.abs(np.diff(np.asarray(values)))
        if steps.size < 2:
            return 0.0
        worst = 0.0
        for k, step in enumerate(steps):
            neighbours = [steps[j] for j in (k - 1, k + 1) if 0 <= j < steps.size]
            trend = float(np.mean(neighbours))
            if trend == 0.0:
                ratio = 0.0 if step == 0.0 else math.inf
            else:
                ratio = float(step) / trend
            worst = max(worst, ratio)
        return worst

    @property
    def max_jump_ratio(self) -> float:
        return max(self._max_jump_ratio(self.v_y), self._max_jump_ratio(self.v_x))

    @property
    def continuous(self) -> bool:
        return self.max_jump_ratio <= CONTINUITY_FACTOR

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambdas": list(self.lambdas),
            "v_Y": list(self.v_y),
            "v_X": list(self.v_x),
            "max_jump_ratio": _extended(self.max_jump_ratio),
            "continuous": self.continuous,
            "factor": CONTINUITY_FACTOR,
        }


def continuity_scan(window, lambdas: Sequence[float], eps_tail: float = DEFAULT_EPS_TAIL) -> ContinuityScan:
    """v_Y and v_X over a lam grid on one periodized window."""
    grid = sorted(float(lam) for lam in lambdas)
    v_y, v_x = [], []
    for chain in build_chain_family(window, grid, eps_tail):
        vy, vx = chain_velocities(chain, stationary_distribution(chain))
        v_y.append(vy)
        v_x.append(vx)
    return ContinuityScan(lambdas=tuple(grid), v_y=tuple(v_y), v_x=tuple(v_x))


# ---------------------------------------------------------------------------
# Einstein relation
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True)
class EinsteinTask:
    model: EnvModel
    n_sites: int
    env_seed: int
    h: float
    eps_tail: float


@dataclass(slots=True, frozen=True)
class EnvironmentEinstein:
    env_seed: int
    n_sites: int
    d_y: float
    d_x: float
    mobility_y: float
    mobility_x: float
    scaled_mobility_y: float | None
    residual: float

    @property
    def discrepancy_y(self) -> float:
        return abs(self.mobility_y - self.d_y) / self.d_y

    @property
    def discrepancy_x(self) -> float:
        return abs(self.mobility_x - self.d_x) / self.d_x

    def row(self) -> tuple[Any, ...]:
        return (
            self.env_seed, self.n_sites, self.d_y, self.mobility_y, self.d_x, self.mobility_x,
            self.discrepancy_y, self.discrepancy_x, self.residual,
        )


EINSTEIN_CSV_HEADER = (
    "env_seed", "N", "D_Y", "mobility_Y", "D_X", "mobility_X", "rel_Y", "rel_X", "residual",
)


def _einstein_task(task: EinsteinTask) -> EnvironmentEinstein:
    window = chain_window(task.model, task.n_sites, task.env_seed)
    chain0 = build_chain(window, 0.0, task.eps_tail)
    d_y, d_x, sol = diffusion_coefficients(chain0)
    mob = mobility_fd(window, task.h, task.eps_tail)
    scaled = None
    beta = task.model.beta
    if task.model.u_kind == "mott" and beta > 0 and 2.0 * task.h * beta < 1.0:
        scaled = mobility_fd(window, task.h, task.eps_tail, field_scale=beta).mobility_y
    return EnvironmentEinstein(
        env_seed=task.env_seed,
        n_sites=task.n_sites,
        d_y=d_y,
        d_x=d_x,
        mobility_y=mob.mobility_y,
        mobility_x=mob.mobility_x,
        scaled_mobility_y=scaled,
        residual=sol.residual,
    )


@dataclass(slots=True, frozen=True)
class EinsteinReport:
    model: EnvModel
    h: float
    hypothesis_ok: bool
    environments: tuple[EnvironmentEinstein, ...]
    doubled: tuple[EnvironmentEinstein, ...] = ()
    continuity: ContinuityScan | None = None

    @staticmethod
    def _mean(values: Sequence[float]) -> float:
        return float(np.mean(values)) if values else math.nan

    @property
    def discrepancy_y(self) -> float:
        return self._mean([e.discrepancy_y for e in self.environments])

    @property
    def discrepancy_x(self) -> float:
        return self._mean([e.discrepancy_x for e in self.environments])

    @property
    def passed(self) -> bool:
        return self.discrepancy_y <= EINSTEIN_TOLERANCE and self.discrepancy_x <= EINSTEIN_TOLERANCE

    @property
    def scaled_discrepancy(self) -> float:
        """Mean |d/dlam v(lam beta) - beta D_Y| / (beta D_Y)."""
        beta = self.model.beta
        values = [
            abs(e.scaled_mobility_y - beta * e.d_y) / (beta * e.d_y)
            for e in self.environments
            if e.scaled_mobility_y is not None
        ]
        return self._mean(values)

    @property
    def doubling_ok(self) -> bool | None:
        """Whether the discrepancy does not grow (beyond two standard errors) when N doubles.

        Discrepancies already below ``DOUBLING_FLOOR`` at 2N count as not growing.
        """
        if not self.doubled:
            return None
        before = np.array([e.discrepancy_y + e.discrepancy_x for e in self.environments])
        after = np.array([e.discrepancy_y + e.discrepancy_x for e in self.doubled])
        diff = after - before
        slack = 2.0 * float(np.std(diff, ddof=1)) / math.sqrt(diff.size) if diff.size > 1 else 0.0
        return float(np.mean(diff)) <= slack or float(np.mean(after)) <= DOUBLING_FLOOR

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "model": self.model.to_dict(),
            "h": self.h,
            "hypothesis_ok": self.hypothesis_ok,
            "tolerance": EINSTEIN_TOLERANCE,
            "mean_D_Y": self._mean([e.d_y for e in self.environments]),
            "mean_D_X": self._mean([e.d_x for e in self.environments]),
            "mean_mobility_Y": self._mean([e.mobility_y for e in self.environments]),
            "mean_mobility_X": self._mean([e.mobility_x for e in self.environments]),
            "discrepancy_Y": self.discrepancy_y,
            "discrepancy_X": self.discrepancy_x,
            "passed": self.passed,
            "max_residual": max(e.residual for e in self.environments),
            "scaled_discrepancy": None if math.isnan(self.scaled_discrepancy) else self.scaled_discrepancy,
            "doubling_ok": self.doubling_ok,
        }
        if self.doubled:
            out["doubled_discrepancy_Y"] = self._mean([e.discrepancy_y for e in self.doubled])
            out["doubled_discrepancy_X"] = self._mean([e.discrepancy_x for e in self.doubled])
        if self.continuity is not None:
            out["continuity"] = self.continuity.to_dict()
        return out

    def table(self) -> list[tuple[Any, ...]]:
        return [e.row() for e in self.environments + self.doubled]


def einstein_report(
    model: EnvModel,
    n_sites: int,
    n_envs: int,
    h: float,
    seed: int,
    *,
    eps_tail: float = DEFAULT_EPS_TAIL,
    double: bool = False,
    continuity_lambdas: Sequence[float] = (),
    jobs: int = 1,
) -> EinsteinReport:
    """Paired mobility against corrector diffusion on ``n_envs`` periodized environments.

    Each environment provides both sides of the relation. With ``double`` the
    same environment seeds are re-solved at 2N; windows are extension
    consistent, so the doubled torus contains the original gaps.
    """
    abscissa = model.gap_law.mgf_abscissa()
    hypothesis_ok = abscissa > EINSTEIN_MGF_ORDER
    if not hypothesis_ok:
        logger.warning(
            "gap law %s has no finite exponential moment of order > %g; the report is flagged",
            model.gap_law.to_dict(), EINSTEIN_MGF_ORDER,
        )
    seeds = [derive_seed(seed, ENV_STREAM, k) for k in range(int(n_envs))]
    tasks = [EinsteinTask(model, int(n_sites), s, float(h), eps_tail) for s in seeds]
    if double:
        tasks += [EinsteinTask(model, 2 * int(n_sites), s, float(h), eps_tail) for s in seeds]
    results = run_tasks(_einstein_task, tasks, jobs)
    continuity = None
    if continuity_lambdas:
        continuity = continuity_scan(chain_window(model, n_sites, seeds[0]), continuity_lambdas, eps_tail)
    report = EinsteinReport(
        model=model,
        h=float(h),
        hypothesis_ok=hypothesis_ok,
        environments=tuple(results[: len(seeds)]),
        doubled=tuple(results[len(seeds) :]),
        continuity=continuity,
    )
    logger.info("einstein: discrepancy Y=%.3g X=%.3g", report.discrepancy_y, report.discrepancy_x)
    return report


# ---------------------------------------------------------------------------
# Arrhenius sweep
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True)
class ArrheniusTask:
    model: EnvModel
    n_sites: int
    env_seed: int
    eps_tail: float


def _diffusion_task(task: ArrheniusTask) -> tuple[float, float, float]:
    chain0 = build_chain(chain_window(task.model, task.n_sites, task.env_seed), 0.0, task.eps_tail)
    d_y, d_x, sol = diffusion_coefficients(chain0)
    return d_y, d_x, sol.residual


@dataclass(slots=True, frozen=True)
class ArrheniusFit:
    """Per-beta D over environments and the fit of log D_X against beta.

    ``residuals`` holds the largest corrector residual at each beta.
    """

    betas: tuple[float, ...]
    d_y: tuple[Estimate, ...]
    d_x: tuple[Estimate, ...]
    residuals: tuple[float, ...]
    fit: LinearFit

    @property
    def log_d(self) -> tuple[float, ...]:
        return tuple(math.log(e.value) for e in self.d_x)

    @property
    def log_d_stderr(self) -> tuple[float, ...]:
        # delta method: se(log D) = se(D) / D
        return tuple(e.stderr / e.value for e in self.d_x)

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.log_d, self.log_d[1:]))

    @property
    def passed(self) -> bool:
        return self.fit.r_squared >= ARRHENIUS_MIN_R2 and self.fit.slope < 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "betas": list(self.betas),
            "D_Y": [e.to_dict() for e in self.d_y],
            "D_X": [e.to_dict() for e in self.d_x],
            "log_D": list(self.log_d),
            "log_D_stderr": list(self.log_d_stderr),
            "corrector_residual": list(self.residuals),
            "fit": self.fit.to_dict(),
            "kappa": -self.fit.slope,
            "strictly_decreasing": self.strictly_decreasing,
            "min_r_squared": ARRHENIUS_MIN_R2,
            "passed": self.passed,
        }

    def table(self) -> list[tuple[float, float, float, float, float, float]]:
        return [
            (beta, d.value, d.stderr, log_d, log_se, residual)
            for beta, d, log_d, log_se, residual in zip(
                self.betas, self.d_x, self.log_d, self.log_d_stderr, self.residuals
            )
        ]


ARRHENIUS_CSV_HEADER = ("beta", "D", "D_stderr", "logD", "logD_stderr", "residual")


def arrhenius_sweep(
    betas: Sequence[float],
    model: EnvModel,
    n_sites: int,
    n_envs: int,
    seed: int,
    *,
    eps_tail: float = DEFAULT_EPS_TAIL,
    jobs: int = 1,
) -> ArrheniusFit:
    """Environment-averaged D_X(beta) on matched seeds and a least-squares fit of log D against beta."""
    if model.u_kind != "mott":
        raise UsageError("the Arrhenius sweep needs the mott interaction")
    if len(betas) < 2:
        raise UsageError("the Arrhenius sweep needs at least two temperatures")
    if not math.isfinite(gap_mgf(model, 1.0)):
        logger.warning("E[e^Z] is infinite for %s; exponential decay of D is not guaranteed", model.gap_law.to_dict())
    seeds = [derive_seed(seed, ENV_STREAM, k) for k in range(int(n_envs))]
    grid = [float(b) for b in betas]
    tasks = [ArrheniusTask(replace(model, beta=b), int(n_sites), s, eps_tail) for b in grid for s in seeds]
    results = run_tasks(_diffusion_task, tasks, jobs)
    d_y: list[Estimate] = []
    d_x: list[Estimate] = []
    residuals: list[float] = []
    for k, beta in enumerate(grid):
        chunk = np.array(results[k * len(seeds) : (k + 1) * len(seeds)])
        d_y.append(independent_mean(chunk[:, 0]))
        d_x.append(independent_mean(chunk[:, 1]))
        residuals.append(float(chunk[:, 2].max()))
        logger.info("beta=%.3g D_X=%.4g +- %.2g residual=%.2g", beta, d_x[-1].value, d_x[-1].stderr, residuals[-1])
    fit = linear_fit(np.array(grid), np.log([e.value for e in d_x]))
    return ArrheniusFit(betas=tuple(grid), d_y=tuple(d_y), d_x=tuple(d_x), residuals=tuple(residuals), fit=fit)


# ---------------------------------------------------------------------------
# Chain summary
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True, eq=False)
class ChainSummary:
    record: dict[str, Any]
    vectors: dict[str, np.ndarray]


VECTOR_CSV_HEADER = ("site", "x", "pi", "g", "exit_rate", "drift")


def chain_summary(
    model: EnvModel,
    n_sites: int,
    lam: float,
    seed: int,
    *,
    h: float = 1e-3,
    eps_tail: float = DEFAULT_EPS_TAIL,
    rn_lambdas: Sequence[float] = (),
    rn_p: float = 2.0,
    tol: float = STATIONARY_TOL,
    residual_tol: float = RESIDUAL_TOL,
) -> ChainSummary:
    """Velocities at ``lam``, diffusion, mobility and Radon-Nikodym norms on one periodized environment."""
    window = chain_window(model, n_sites, seed)
    chain0 = build_chain(window, 0.0, eps_tail)
    pi0 = stationary_distribution(chain0, tol=tol)
    d_y, d_x, sol = diffusion_coefficients(chain0, residual_tol)
    mob = mobility_fd(window, h, eps_tail)
    if lam == 0.0:
        chain, pi = chain0, pi0
    else:
        chain = build_chain(window, lam, eps_tail)
        pi = stationary_distribution(chain, tol=tol)
    v_y, v_x = chain_velocities(chain, pi)
    record: dict[str, Any] = {
        "N": chain0.n_sites,
        "L": chain0.period_length,
        "lambda": float(lam),
        "radius": chain.radius,
        "v_Y": v_y,
        "v_X": v_x,
        "D_Y": d_y,
        "D_X": d_x,
        "mobility_Y": mob.mobility_y,
        "mobility_X": mob.mobility_x,
        "mean_holding_time": mean_holding_time(chain, pi),
        "residuals": {
            "corrector": sol.residual,
            "stationary": float(np.max(np.abs(chain.transition_matrix().T @ pi - pi))),
            "tail_bound": chain.tail_bound,
        },
    }
    grid = sorted({0.0, *(float(v) for v in rn_lambdas)})
    if len(grid) > 1:
        norms = rn_derivative_norms(build_chain_family(window, grid, eps_tail), rn_p)
        record["rn_norm_p2" if rn_p == 2.0 else f"rn_norm_p{rn_p:g}"] = norms.supremum
        record["rn_norms"] = norms.to_dict()
    vectors = {
        "x": chain0.positions,
        "pi": pi0,
        "g": sol.g,
        "exit_rate": chain0.exit_rates,
        "drift": chain0.drift,
    }
    return ChainSummary(record=record, vectors=vectors)


def vector_rows(summary: ChainSummary) -> list[tuple[Any, ...]]:
    v = summary.vectors
    return [
        (k, float(v["x"][k]), float(v["pi"][k]), float(v["g"][k]), float(v["exit_rate"][k]), float(v["drift"][k]))
        for k in range(v["pi"].size)
    ]
