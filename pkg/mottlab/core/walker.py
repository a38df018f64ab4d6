"""Monte Carlo simulation of the jump chain Y and the continuous-time walk X.

Walkers start at site 0 (x = 0). The environment is grown lazily through a
``RowCache``; on a ``FiniteChain`` the walker moves on the torus while the
unwrapped displacement is accumulated from the per-jump displacements.

Each walk seed is split into two streams: one drives jump choices (two
uniforms per step, fed to an alias table) and one drives holding times. Runs
at different lam with the same seeds therefore share their random numbers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from mottlab.core.chain import FiniteChain
from mottlab.core.env_model import EnvModel, EnvWindow, sample_window
from mottlab.core.rate_kernel import DEFAULT_EPS_TAIL, AliasTable, RowCache, check_bias
from mottlab.core.stats import DEFAULT_BATCHES, Estimate, batch_means, long_run_covariance, ratio_of_means
from mottlab.core.tasks import ENV_STREAM, WALK_STREAM, derive_seed, run_tasks
from mottlab.errors import UsageError

logger = logging.getLogger(__name__)

KINDS = ("discrete", "continuous")
RECORDS = ("full", "endpoints")
MODES = ("annealed", "quenched")
INITIAL_HALF_WIDTH = 64
BUFFER = 8192
DEFAULT_BURN_IN = 0.05

ENDPOINT_CSV_HEADER = ("env_seed", "walk_seed", "lambda", "horizon", "final_x", "final_t", "n_jumps")
PATH_CSV_HEADER = ("t", "x")


@dataclass(slots=True, frozen=True)
class Horizon:
    """Run length: a number of jumps (discrete) or a physical time (continuous)."""

    kind: str
    value: float

    @classmethod
    def steps(cls, n: int) -> "Horizon":
        return cls(kind="discrete", value=float(int(n)))

    @classmethod
    def time(cls, t: float) -> "Horizon":
        return cls(kind="continuous", value=float(t))

    def validate(self) -> "Horizon":
        if self.kind not in KINDS:
            raise UsageError(f"horizon kind must be one of {KINDS}, got {self.kind!r}")
        if not (math.isfinite(self.value) and self.value > 0):
            raise UsageError("horizon must be positive and finite")
        return self


@dataclass(slots=True, eq=False)
class Trajectory:
    """One walk. With ``record='endpoints'`` the sequences hold only the start and end."""

    kind: str
    lam: float
    seed: int
    env_seed: int | None
    model: EnvModel
    horizon: Horizon
    times: np.ndarray
    site_indices: np.ndarray
    positions: np.ndarray
    n_jumps: int
    final_x: float
    final_t: float
    record: str = "full"
    eps_tail: float = DEFAULT_EPS_TAIL
    window: EnvWindow | None = field(default=None, repr=False)

    @property
    def displacement(self) -> float:
        return self.final_x

    def endpoint_row(self) -> tuple[Any, ...]:
        env_seed = "" if self.env_seed is None else self.env_seed
        return (env_seed, self.seed, self.lam, self.horizon.value, self.final_x, self.final_t, self.n_jumps)

    def path_rows(self) -> list[tuple[float, float]]:
        return [(float(t), float(x)) for t, x in zip(self.times, self.positions)]


# ---------------------------------------------------------------------------
# Step sources
# ---------------------------------------------------------------------------

# (targets, displacements, landing positions or None, exit rate, alias prob, alias index)
StepEntry = tuple[list[int], list[float], "list[float] | None", float, list[float], list[int]]


class EnvironmentSource:
    """Jump rows of the infinite environment, grown on demand."""

    def __init__(self, model: EnvModel, env_seed: int, lam: float, eps_tail: float = DEFAULT_EPS_TAIL) -> None:
        window = sample_window(model, (-INITIAL_HALF_WIDTH, INITIAL_HALF_WIDTH), env_seed)
        self.cache = RowCache(window, lam, eps_tail)
        self._entries: dict[int, StepEntry] = {}

    @property
    def window(self) -> EnvWindow:
        return self.cache.window

    def entry(self, site: int) -> StepEntry:
        cached = self._entries.get(site)
        if cached is not None:
            return cached
        row, table = self.cache.get(site)
        window = self.cache.window
        # landing positions come from the window so x always equals x_site
        landing = [window.x(int(t)) for t in row.target_index]
        entry = (
            row.target_index.tolist(),
            row.displacement.tolist(),
            landing,
            row.exit_rate,
            table.prob.tolist(),
            table.alias.tolist(),
        )
        self._entries[site] = entry
        return entry


class ChainSource:
    """Rows of a periodized chain; the walker's displacement is unwrapped."""

    def __init__(self, chain: FiniteChain) -> None:
        self.chain = chain
        self._entries: dict[int, StepEntry] = {}

    def entry(self, site: int) -> StepEntry:
        cached = self._entries.get(site)
        if cached is not None:
            return cached
        table = AliasTable.build(self.chain.prob[site])
        entry = (
            self.chain.targets[site].tolist(),
            self.chain.displacement[site].tolist(),
            None,
            float(self.chain.exit_rates[site]),
            table.prob.tolist(),
            table.alias.tolist(),
        )
        self._entries[site] = entry
        return entry


class _Streams:
    """Buffered uniforms (jump choice) and unit exponentials (holding times)."""

    def __init__(self, seed: int) -> None:
        jump_seq, clock_seq = np.random.SeedSequence(int(seed)).spawn(2)
        self._jump = np.random.default_rng(jump_seq)
        self._clock = np.random.default_rng(clock_seq)
        self._u: list[float] = []
        self._ui = 0
        self._e: list[float] = []
        self._ei = 0

    def uniform_pair(self) -> tuple[float, float]:
        if self._ui + 2 > len(self._u):
            self._u = self._jump.random(2 * BUFFER).tolist()
            self._ui = 0
        i = self._ui
        self._ui = i + 2
        return self._u[i], self._u[i + 1]

    def exponential(self) -> float:
        if self._ei >= len(self._e):
            self._e = self._clock.standard_exponential(BUFFER).tolist()
            self._ei = 0
        value = self._e[self._ei]
        self._ei += 1
        return value


def _walk(source: EnvironmentSource | ChainSource, horizon: Horizon, seed: int, record: str) -> dict[str, Any]:
    horizon.validate()
    if record not in RECORDS:
        raise UsageError(f"record must be one of {RECORDS}, got {record!r}")
    streams = _Streams(seed)
    full = record == "full"
    continuous = horizon.kind == "continuous"
    site, x, t, n = 0, 0.0, 0.0, 0
    sites, xs, ts = [0], [0.0], [0.0]
    limit = horizon.value

    while True:
        targets, dxs, landing, exit_rate, aprob, alias = source.entry(site)
        if continuous:
            hold = streams.exponential() / exit_rate
            if t + hold > limit:
                break
            t += hold
        elif n >= limit:
            break
        u_slot, u_coin = streams.uniform_pair()
        m = len(aprob)
        k = int(u_slot * m)
        if k >= m:
            k = m - 1
        if u_coin >= aprob[k]:
            k = alias[k]
        x = landing[k] if landing is not None else x + dxs[k]
        site = targets[k]
        n += 1
        if full:
            sites.append(site)
            xs.append(x)
            ts.append(t if continuous else float(n))

    final_t = limit if continuous else float(n)
    if not full:
        sites.append(site)
        xs.append(x)
        ts.append(final_t)
    return {
        "times": np.asarray(ts),
        "site_indices": np.asarray(sites, dtype=np.int64),
        "positions": np.asarray(xs),
        "n_jumps": n,
        "final_x": x,
        "final_t": final_t,
    }


def simulate(
    model: EnvModel,
    lam: float,
    horizon: Horizon,
    seed: int,
    record: str = "endpoints",
    *,
    env_seed: int | None = None,
    eps_tail: float = DEFAULT_EPS_TAIL,
) -> Trajectory:
    """Walk in the environment ``env_seed`` (default ``seed``) with walk stream ``seed``."""
    lam = check_bias(lam)
    env_seed = int(seed if env_seed is None else env_seed)
    source = EnvironmentSource(model, env_seed, lam, eps_tail)
    result = _walk(source, horizon, seed, record)
    logger.debug(
        "walk lam=%.3g env=%d seed=%d: %d jumps, x=%.4g", lam, env_seed, seed, result["n_jumps"], result["final_x"]
    )
    return Trajectory(
        kind=horizon.kind,
        lam=lam,
        seed=int(seed),
        env_seed=env_seed,
        model=model,
        horizon=horizon,
        record=record,
        eps_tail=eps_tail,
        window=source.window,
        **result,
    )


def simulate_on_chain(chain: FiniteChain, horizon: Horizon, seed: int, record: str = "full") -> Trajectory:
    """Walk on the torus of ``chain``; positions are unwrapped displacements."""
    result = _walk(ChainSource(chain), horizon, seed, record)
    return Trajectory(
        kind=horizon.kind,
        lam=chain.lam,
        seed=int(seed),
        env_seed=None,
        model=chain.model,
        horizon=horizon,
        record=record,
        **result,
    )


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True)
class WalkerTask:
    model: EnvModel
    lam: float
    horizon: Horizon
    env_seed: int
    walk_seed: int
    eps_tail: float
    record: str = "endpoints"


def _run_walker(task: WalkerTask) -> Trajectory:
    traj = simulate(
        task.model,
        task.lam,
        task.horizon,
        task.walk_seed,
        task.record,
        env_seed=task.env_seed,
        eps_tail=task.eps_tail,
    )
    # windows are rebuilt on demand; keep results light for the process pool
    traj.window = None
    return traj


def walker_tasks(
    model: EnvModel,
    lam: float,
    horizon: Horizon,
    n_walkers: int,
    seed: int,
    mode: str = "annealed",
    eps_tail: float = DEFAULT_EPS_TAIL,
    record: str = "endpoints",
) -> list[WalkerTask]:
    """Annealed: one fresh environment per walker. Quenched: one environment for all."""
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    if n_walkers < 1:
        raise UsageError("n_walkers must be >= 1")
    tasks = []
    for k in range(int(n_walkers)):
        env_seed = derive_seed(seed, ENV_STREAM, k if mode == "annealed" else 0)
        tasks.append(WalkerTask(model, float(lam), horizon, env_seed, derive_seed(seed, WALK_STREAM, k), eps_tail, record))
    return tasks


def run_walkers(
    model: EnvModel,
    lam: float,
    horizon: Horizon,
    n_walkers: int,
    seed: int,
    *,
    mode: str = "annealed",
    eps_tail: float = DEFAULT_EPS_TAIL,
    record: str = "endpoints",
    jobs: int = 1,
) -> list[Trajectory]:
    check_bias(lam)
    horizon.validate()
    tasks = walker_tasks(model, lam, horizon, n_walkers, seed, mode, eps_tail, record)
    return run_tasks(_run_walker, tasks, jobs)


@dataclass(slots=True, frozen=True, eq=False)
class ChainWalkerTask:
    chain: FiniteChain
    horizon: Horizon
    walk_seed: int
    record: str = "endpoints"


def _run_chain_walker(task: ChainWalkerTask) -> Trajectory:
    return simulate_on_chain(task.chain, task.horizon, task.walk_seed, task.record)


def run_chain_walkers(
    chain: FiniteChain,
    horizon: Horizon,
    n_walkers: int,
    seed: int,
    *,
    record: str = "endpoints",
    jobs: int = 1,
) -> list[Trajectory]:
    """Independent walks on one periodized environment."""
    horizon.validate()
    tasks = [ChainWalkerTask(chain, horizon, derive_seed(seed, WALK_STREAM, k), record) for k in range(int(n_walkers))]
    return run_tasks(_run_chain_walker, tasks, jobs)


def velocity_estimate(
    model: EnvModel,
    lam: float,
    horizon: Horizon,
    n_walkers: int,
    seed: int,
    *,
    mode: str = "annealed",
    n_batches: int = DEFAULT_BATCHES,
    eps_tail: float = DEFAULT_EPS_TAIL,
    jobs: int = 1,
) -> Estimate:
    """Endpoint displacement over the horizon, averaged over walkers.

    Discrete horizons estimate v_Y, continuous ones v_X.
    """
    trajs = run_walkers(model, lam, horizon, n_walkers, seed, mode=mode, eps_tail=eps_tail, jobs=jobs)
    return batch_means(np.array([t.final_x / horizon.value for t in trajs]), n_batches)


def msd_diffusion_estimate(
    model: EnvModel,
    horizon: Horizon,
    n_walkers: int,
    seed: int,
    *,
    lam: float = 0.0,
    mode: str = "annealed",
    n_batches: int = DEFAULT_BATCHES,
    eps_tail: float = DEFAULT_EPS_TAIL,
    jobs: int = 1,
) -> Estimate:
    """Mean of x^2 / horizon for the unbiased walk (D_Y for steps, D_X for time)."""
    if lam != 0.0:
        raise UsageError("MSD diffusion is only defined for the unbiased walk (lambda = 0)")
    trajs = run_walkers(model, 0.0, horizon, n_walkers, seed, mode=mode, eps_tail=eps_tail, jobs=jobs)
    return batch_means(np.array([t.final_x**2 / horizon.value for t in trajs]), n_batches)


# ---------------------------------------------------------------------------
# Ergodic averages along one trajectory
# ---------------------------------------------------------------------------

def _site_rows(sites: np.ndarray, source: EnvWindow | FiniteChain, lam: float, eps_tail: float) -> dict[str, np.ndarray]:
    """Exit rate, drift and right gap for every distinct site in ``sites``."""
    unique, inverse = np.unique(sites, return_inverse=True)
    if isinstance(source, FiniteChain):
        if source.lam != lam:
            raise UsageError(f"chain has lambda {source.lam}, trajectory has {lam}")
        exit_rates = source.exit_rates[unique]
        drift = source.drift[unique]
        gaps = source.gaps[unique]
    else:
        cache = RowCache(source, lam, eps_tail)
        rows = [cache.row(int(s)) for s in unique]
        exit_rates = np.array([r.exit_rate for r in rows])
        drift = np.array([r.drift for r in rows])
        window = cache.window
        gaps = np.array([window.gap(int(s)) for s in unique])
    return {
        "exit_rate": exit_rates[inverse],
        "drift": drift[inverse],
        "nearest_gap": gaps[inverse],
    }


OBSERVABLES = ("one", "exit_rate", "inv_exit_rate", "drift", "nearest_gap")


def observable_values(
    name: str,
    sites: np.ndarray,
    source: EnvWindow | FiniteChain,
    lam: float,
    eps_tail: float = DEFAULT_EPS_TAIL,
) -> np.ndarray:
    """Named local observable evaluated at each visited site."""
    if name not in OBSERVABLES:
        raise UsageError(f"observable must be one of {OBSERVABLES}, got {name!r}")
    if name == "one":
        return np.ones(sites.size)
    rows = _site_rows(sites, source, lam, eps_tail)
    if name == "inv_exit_rate":
        return 1.0 / rows["exit_rate"]
    return rows[name]


def _visited(trajectory: Trajectory, burn_in: float) -> np.ndarray:
    if trajectory.record != "full":
        raise UsageError("ergodic averages need a trajectory recorded with record='full'")
    if not 0.0 <= burn_in < 1.0:
        raise UsageError("burn_in must lie in [0, 1)")
    # states occupied before each jump
    sites = trajectory.site_indices[:-1]
    return sites[int(burn_in * sites.size) :]


def occupation_stats(
    trajectory: Trajectory,
    source: EnvWindow | FiniteChain,
    f: str | Callable[[np.ndarray], np.ndarray],
    *,
    burn_in: float = DEFAULT_BURN_IN,
    n_batches: int = DEFAULT_BATCHES,
) -> Estimate:
    """Time average of f over the environment seen from the jump chain.

    ``f`` is a name from ``OBSERVABLES`` or a callable mapping site indices to
    values.
    """
    if trajectory.kind != "discrete":
        raise UsageError("occupation_stats needs a discrete-kind trajectory")
    sites = _visited(trajectory, burn_in)
    if callable(f):
        values = np.asarray(f(sites), dtype=np.float64)
    else:
        values = observable_values(f, sites, source, trajectory.lam, trajectory.eps_tail)
    return batch_means(values, n_batches)


def path_velocity(
    trajectory: Trajectory,
    source: EnvWindow | FiniteChain,
    *,
    burn_in: float = DEFAULT_BURN_IN,
    n_batches: int = DEFAULT_BATCHES,
) -> tuple[Estimate, Estimate]:
    """(v_Y, v_X) from the per-jump increments of one recorded trajectory.

    v_X divides by realised holding times on continuous trajectories and by
    the expected holding time 1/exit_rate on discrete ones.
    """
    sites = _visited(trajectory, burn_in)
    start = trajectory.site_indices.size - 1 - sites.size
    steps = np.diff(trajectory.positions)[start:]
    v_y = batch_means(steps, n_batches)
    if trajectory.kind == "continuous":
        holds = np.diff(trajectory.times)[start:]
    else:
        holds = observable_values("inv_exit_rate", sites, source, trajectory.lam, trajectory.eps_tail)
    return v_y, ratio_of_means(steps, holds, n_batches)


def covariance_representation(
    chain0: FiniteChain,
    f: np.ndarray,
    n_steps: int,
    seed: int,
    *,
    burn_in: float = DEFAULT_BURN_IN,
    n_batches: int = DEFAULT_BATCHES,
) -> Estimate:
    """-Cov(N^f, N^phi) from the joint fluctuations of f and phi along the lam = 0 walk."""
    if chain0.lam != 0.0:
        raise UsageError("covariance representation uses the lambda = 0 chain")
    traj = simulate_on_chain(chain0, Horizon.steps(n_steps), seed, "full")
    sites = _visited(traj, burn_in)
    est = long_run_covariance(np.asarray(f)[sites], chain0.drift[sites], n_batches)
    return Estimate(value=-est.value, stderr=est.stderr, n_batches=est.n_batches, n_samples=est.n_samples)


# ---------------------------------------------------------------------------
# Transience
# ---------------------------------------------------------------------------

@dataclass(slots=True, frozen=True)
class TransienceReport:
    checkpoints: tuple[int, ...]
    running_max: tuple[float, ...]

    @property
    def increasing(self) -> bool:
        return all(b > a for a, b in zip(self.running_max, self.running_max[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {"checkpoints": list(self.checkpoints), "running_max": list(self.running_max), "increasing": self.increasing}


def running_max_checkpoints(trajectory: Trajectory, checkpoints: Sequence[int]) -> TransienceReport:
    """Running maximum of the position at the given jump counts."""
    if trajectory.record != "full" or trajectory.kind != "discrete":
        raise UsageError("transience checkpoints need a full discrete trajectory")
    running = np.maximum.accumulate(trajectory.positions)
    last = running.size - 1
    values = tuple(float(running[min(int(c), last)]) for c in checkpoints)
    return TransienceReport(checkpoints=tuple(int(c) for c in checkpoints), running_max=values)


def transience_monitor(
    model: EnvModel,
    lam: float,
    base_steps: int,
    doublings: int,
    seed: int,
    *,
    eps_tail: float = DEFAULT_EPS_TAIL,
) -> TransienceReport:
    """Running max at base_steps * 2^k, k = 0..doublings, along one walk."""
    checkpoints = [int(base_steps) * 2**k for k in range(int(doublings) + 1)]
    traj = simulate(model, lam, Horizon.steps(checkpoints[-1]), seed, "full", eps_tail=eps_tail)
    return running_max_checkpoints(traj, checkpoints)
