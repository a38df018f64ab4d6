"""Long-running end-to-end gates. Run with ``pytest -m slow``."""

import math

import numpy as np
import pytest

from mottlab.core.chain import (
    build_chain,
    build_chain_family,
    chain_velocities,
    chain_window,
    derivative_representation,
    gradient_distance,
    mean_holding_time,
    q_lambda_derivative_fd,
    rn_derivative_norms,
    solve_corrector,
    stationary_distribution,
)
from mottlab.core.env_model import EnvModel, GapLaw, MarkLaw
from mottlab.core.stats import Estimate
from mottlab.core.tasks import ENV_STREAM, derive_seed
from mottlab.core.walker import (
    Horizon,
    covariance_representation,
    occupation_stats,
    path_velocity,
    simulate_on_chain,
    velocity_estimate,
)
from mottlab.experiments import (
    BALLISTIC,
    SUB_BALLISTIC,
    arrhenius_sweep,
    einstein_report,
    predict_regime,
)

pytestmark = pytest.mark.slow


def _mott_model(c: float = 2.0) -> EnvModel:
    return EnvModel(
        gap_law=GapLaw.shifted_exponential(1.0, c),
        mark_law=MarkLaw.power_uniform(0.0, 1.0),
        beta=1.0,
        u_kind="mott",
    )


# ---------------------------------------------------------------------------
# Monte Carlo against the exact chain
# ---------------------------------------------------------------------------

def _pooled_z(estimates: list[Estimate], exact: list[float]) -> float:
    """|mean(estimate - exact)| over environments in units of the combined standard error."""
    diff = np.mean([e.value - x for e, x in zip(estimates, exact)])
    combined = math.sqrt(sum(e.stderr**2 for e in estimates)) / len(estimates)
    return abs(float(diff)) / combined


def test_walk_averages_agree_with_chain() -> None:
    measured: dict[str, list[Estimate]] = {"v_Y": [], "v_X": [], "drift": [], "holding": []}
    exact: dict[str, list[float]] = {"v_Y": [], "v_X": [], "drift": [], "holding": []}
    for k in range(8):
        chain = build_chain(chain_window(_mott_model(), 2048, derive_seed(0, ENV_STREAM, k)), 0.3)
        pi = stationary_distribution(chain)
        v_y, v_x = chain_velocities(chain, pi)
        traj = simulate_on_chain(chain, Horizon.steps(400_000), seed=k)
        est_y, est_x = path_velocity(traj, chain, n_batches=32)
        pairs = {
            "v_Y": (est_y, v_y),
            "v_X": (est_x, v_x),
            "drift": (occupation_stats(traj, chain, "drift", n_batches=32), v_y),
            "holding": (occupation_stats(traj, chain, "inv_exit_rate", n_batches=32), mean_holding_time(chain, pi)),
        }
        for name, (est, value) in pairs.items():
            assert est.agrees_with(value, sigmas=4.0), (k, name, est, value)
            measured[name].append(est)
            exact[name].append(value)
    for name in measured:
        assert _pooled_z(measured[name], exact[name]) <= 3.0, name


def test_covariance_representation_matches_corrector_formula() -> None:
    chain = build_chain(chain_window(_mott_model(), 256, 11), 0.0)
    pi = stationary_distribution(chain)
    exact = derivative_representation(chain, pi, chain.exit_rates, "exit_rate")
    est = covariance_representation(chain, chain.exit_rates, 400_000, seed=3)
    assert est.agrees_with(exact, sigmas=4.0)


# ---------------------------------------------------------------------------
# Phase transition
# ---------------------------------------------------------------------------

def test_velocity_regimes_on_both_sides_of_threshold() -> None:
    lam = 0.5
    fast = EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 1.0))
    slow = EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 0.3))
    assert predict_regime(fast, lam)[0] == BALLISTIC
    assert predict_regime(slow, lam)[0] == SUB_BALLISTIC

    fast_v = [velocity_estimate(fast, lam, Horizon.time(t), 16, seed=1).value for t in (1e5, 1e6)]
    assert 0.8 <= fast_v[1] / fast_v[0] <= 1.2

    slow_v = [velocity_estimate(slow, lam, Horizon.time(t), 16, seed=1).value for t in (1e5, 1e6)]
    assert slow_v[1] / slow_v[0] <= 0.5


# ---------------------------------------------------------------------------
# Linear response
# ---------------------------------------------------------------------------

def test_einstein_relation_and_doubling() -> None:
    report = einstein_report(_mott_model(3.0), 4096, 8, 1e-3, seed=0, double=True)
    assert report.hypothesis_ok
    assert report.passed
    assert report.doubling_ok


def test_derivative_representation_large_chain() -> None:
    window = chain_window(_mott_model(), 2048, 21)
    chain = build_chain(window, 0.0)
    pi = stationary_distribution(chain)
    exact = derivative_representation(chain, pi, chain.exit_rates, "exit_rate")
    numeric = q_lambda_derivative_fd(window, chain.exit_rates, 1e-3)
    assert numeric == pytest.approx(exact, rel=1e-2)


def test_resolvent_sweep_is_monotone() -> None:
    chain = build_chain(chain_window(_mott_model(), 2048, 5), 0.0)
    pi = stationary_distribution(chain)
    exact = solve_corrector(chain, chain.drift)
    assert exact.residual <= 1e-8
    distances = []
    for eps in (1e-2, 1e-3, 1e-4, 1e-5):
        sol = solve_corrector(chain, chain.drift, eps)
        assert sol.residual <= 1e-8
        distances.append(gradient_distance(chain, pi, sol.g, exact.g))
    assert all(b < a for a, b in zip(distances, distances[1:]))


def test_arrhenius_fit() -> None:
    fit = arrhenius_sweep([1.0, 2.0, 3.0, 4.0, 5.0], _mott_model(3.0), 1024, 4, seed=0)
    assert fit.strictly_decreasing
    assert fit.passed


def test_radon_nikodym_norm_is_stable_under_doubling() -> None:
    lambdas = [0.0, 0.2, 0.4, 0.6, 0.8]
    suprema = []
    for n_sites in (4096, 8192):
        chains = build_chain_family(chain_window(_mott_model(3.0), n_sites, 2), lambdas)
        report = rn_derivative_norms(chains)
        assert report.norms[0] == pytest.approx(1.0, abs=1e-12)
        assert all(math.isfinite(v) for v in report.norms)
        suprema.append(report.supremum)
    assert abs(suprema[1] - suprema[0]) / suprema[0] < 0.1
    assert np.isfinite(suprema).all()
