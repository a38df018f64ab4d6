import math
from dataclasses import replace

import numpy as np
import pytest

from mottlab.core.chain import build_chain, chain_window, diffusion_coefficients
from mottlab.core.env_model import EnvModel, GapLaw, MarkLaw, lattice_model
from mottlab.core.stats import Estimate
from mottlab.core.tasks import ENV_STREAM, derive_seed
from mottlab.errors import UsageError
from mottlab.experiments import (
    BALLISTIC,
    SUB_BALLISTIC,
    ContinuityScan,
    RegimeVerdict,
    arrhenius_sweep,
    chain_summary,
    classify_regime,
    continuity_scan,
    einstein_report,
    measurement_agrees,
    phase_sweep,
    predict_regime,
    vector_rows,
)

X = math.exp(-1.0)
LATTICE_D_Y = (1.0 + X) / (1.0 - X) ** 2


def _mott_model(beta: float = 1.0, amplitude: float = 1.0) -> EnvModel:
    return EnvModel(
        gap_law=GapLaw.shifted_exponential(1.0, 3.0),
        mark_law=MarkLaw.power_uniform(0.0, amplitude),
        beta=beta,
        u_kind="mott",
    )


def _estimate(value: float) -> Estimate:
    return Estimate(value=value, stderr=0.01, n_batches=16, n_samples=16)


# ---------------------------------------------------------------------------
# Regime classification
# ---------------------------------------------------------------------------

def test_exponential_gaps_split_at_one_minus_lambda() -> None:
    ballistic = EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 2.0))
    trapped = EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 0.3))
    assert classify_regime(ballistic, 0.5).predicted == BALLISTIC
    verdict = classify_regime(trapped, 0.5)
    assert verdict.predicted == SUB_BALLISTIC
    assert verdict.mgf_ballistic == math.inf
    assert verdict.mgf_subballistic == math.inf
    assert verdict.to_dict()["mgf_ballistic"] == "inf"


def test_deterministic_gaps_are_ballistic() -> None:
    predicted, forward, product = predict_regime(lattice_model(), 0.9)
    assert predicted == BALLISTIC
    assert forward == pytest.approx(math.exp(0.1))
    assert product == pytest.approx(math.exp(0.1) * math.exp(-1.9))


def test_pareto_gaps_are_sub_ballistic() -> None:
    model = EnvModel(gap_law=GapLaw.shifted_pareto(1.0, 3.0))
    assert predict_regime(model, 0.2)[0] == SUB_BALLISTIC


def test_classification_needs_positive_bias() -> None:
    with pytest.raises(UsageError):
        classify_regime(lattice_model(), 0.0)
    with pytest.raises(UsageError):
        classify_regime(lattice_model(), 1.0)


def test_measurement_gates() -> None:
    stable = RegimeVerdict(0.5, BALLISTIC, 1.0, 1.0, (1e3, 1e4), (_estimate(1.0), _estimate(1.1)))
    assert measurement_agrees(stable)
    drifting = RegimeVerdict(0.5, BALLISTIC, 1.0, 1.0, (1e3, 1e4), (_estimate(1.0), _estimate(0.5)))
    assert not measurement_agrees(drifting)
    decaying = RegimeVerdict(0.5, SUB_BALLISTIC, math.inf, math.inf, (1e3, 1e4), (_estimate(1.0), _estimate(0.4)))
    assert measurement_agrees(decaying)
    flat = RegimeVerdict(0.5, SUB_BALLISTIC, math.inf, math.inf, (1e3, 1e4), (_estimate(1.0), _estimate(0.9)))
    assert not measurement_agrees(flat)


def test_classification_with_measured_velocities() -> None:
    verdict = classify_regime(
        EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 2.0)),
        0.5,
        horizons=[200.0, 400.0],
        kind="discrete",
        n_walkers=8,
        seed=1,
    )
    assert len(verdict.measured_velocity) == 2
    assert all(e.value > 0 for e in verdict.measured_velocity)


def test_phase_sweep_without_horizons() -> None:
    sweep = phase_sweep(0.5, [0.3, 0.4, 0.6, 0.8], [], seed=0)
    verdicts = {row.c: row.verdict.predicted for row in sweep.rows}
    assert verdicts == {0.3: SUB_BALLISTIC, 0.4: SUB_BALLISTIC, 0.6: BALLISTIC, 0.8: BALLISTIC}
    assert sweep.threshold == 0.5
    assert sweep.table() == []
    assert all(row.consistent for row in sweep.rows)


# ---------------------------------------------------------------------------
# Continuity
# ---------------------------------------------------------------------------

def test_continuity_scan_on_random_window() -> None:
    scan = continuity_scan(chain_window(_mott_model(), 256, 4), [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    assert scan.v_y[0] == pytest.approx(0.0, abs=1e-12)
    assert all(b > a for a, b in zip(scan.v_y, scan.v_y[1:]))
    assert scan.continuous


def test_continuity_flags_a_jump() -> None:
    scan = ContinuityScan(
        lambdas=(0.0, 0.1, 0.2, 0.3, 0.4),
        v_y=(0.0, 1.0, 2.0, 3.0, 10.0),
        v_x=(0.0, 1.0, 2.0, 3.0, 4.0),
    )
    assert scan.max_jump_ratio == pytest.approx(7.0)
    assert not scan.continuous


# ---------------------------------------------------------------------------
# Einstein relation
# ---------------------------------------------------------------------------

def test_einstein_report_on_lattice() -> None:
    report = einstein_report(lattice_model(), 128, 1, 1e-3, seed=0)
    env = report.environments[0]
    assert env.d_y == pytest.approx(LATTICE_D_Y, rel=1e-6)
    assert env.discrepancy_y <= 1e-2
    assert report.hypothesis_ok
    assert report.passed
    assert report.doubling_ok is None


def test_einstein_report_on_random_environments() -> None:
    report = einstein_report(_mott_model(), 256, 2, 1e-3, seed=1, double=True, continuity_lambdas=[0.0, 0.1, 0.2])
    assert report.passed
    assert len(report.doubled) == 2
    assert report.doubled[0].n_sites == 512
    assert report.scaled_discrepancy <= 0.05
    data = report.to_dict()
    assert data["continuity"]["continuous"] is True
    assert len(report.table()) == 4


def test_einstein_report_flags_heavy_tails() -> None:
    model = EnvModel(gap_law=GapLaw.shifted_pareto(1.0, 3.0))
    report = einstein_report(model, 128, 1, 1e-3, seed=0, eps_tail=1e-6)
    assert not report.hypothesis_ok
    assert report.to_dict()["hypothesis_ok"] is False


# ---------------------------------------------------------------------------
# Arrhenius
# ---------------------------------------------------------------------------

def test_arrhenius_diffusion_decreases_with_beta() -> None:
    fit = arrhenius_sweep([1.0, 2.0, 3.0], _mott_model(), 256, 2, seed=0)
    assert fit.strictly_decreasing
    assert fit.fit.slope < 0
    assert fit.to_dict()["kappa"] > 0
    assert [row[0] for row in fit.table()] == [1.0, 2.0, 3.0]


def test_arrhenius_rows_carry_stderr_and_residual() -> None:
    fit = arrhenius_sweep([1.0, 2.0], _mott_model(), 128, 3, seed=4)
    for _, d, d_se, log_d, log_se, residual in fit.table():
        assert d > 0 and math.isfinite(d_se) and d_se >= 0
        assert log_d == pytest.approx(math.log(d))
        assert log_se == pytest.approx(d_se / d)
        assert 0.0 <= residual <= 1e-8
    record = fit.to_dict()
    assert record["D_X"][0]["n_samples"] == 3
    assert len(record["corrector_residual"]) == 2
    # the reported D is the plain mean over the matched environments
    seeds = [derive_seed(4, ENV_STREAM, k) for k in range(3)]
    per_env = [
        diffusion_coefficients(build_chain(chain_window(_mott_model(beta=1.0), 128, s), 0.0))[1]
        for s in seeds
    ]
    assert fit.d_x[0].value == pytest.approx(float(np.mean(per_env)), rel=1e-12)
    assert fit.d_x[0].stderr == pytest.approx(float(np.std(per_env, ddof=1) / math.sqrt(3)), rel=1e-9)


def test_arrhenius_needs_mott_interaction() -> None:
    with pytest.raises(UsageError):
        arrhenius_sweep([1.0, 2.0], EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 3.0)), 64, 1, seed=0)
    with pytest.raises(UsageError):
        arrhenius_sweep([1.0], _mott_model(), 64, 1, seed=0)


def test_zero_beta_matches_zero_interaction() -> None:
    mott = chain_summary(_mott_model(beta=0.0), 256, 0.0, seed=5).record
    bare = chain_summary(replace(_mott_model(), u_kind="zero"), 256, 0.0, seed=5).record
    assert mott["D_Y"] == pytest.approx(bare["D_Y"], rel=1e-12)
    assert mott["D_X"] == pytest.approx(bare["D_X"], rel=1e-12)


def test_larger_energy_amplitude_lowers_diffusion() -> None:
    small = chain_summary(_mott_model(amplitude=1.0), 256, 0.0, seed=5).record
    large = chain_summary(_mott_model(amplitude=2.0), 256, 0.0, seed=5).record
    assert large["D_X"] < small["D_X"]


# ---------------------------------------------------------------------------
# Chain summary
# ---------------------------------------------------------------------------

def test_chain_summary_record() -> None:
    summary = chain_summary(_mott_model(), 256, 0.3, seed=2, rn_lambdas=[0.1, 0.2])
    record = summary.record
    assert record["N"] == 256
    assert record["v_Y"] > 0
    assert record["D_Y"] > 0
    assert record["residuals"]["stationary"] <= 1e-12
    assert record["residuals"]["corrector"] <= 1e-8
    assert record["rn_norms"]["norms"][0] == pytest.approx(1.0, abs=1e-12)
    assert record["rn_norm_p2"] >= 1.0 - 1e-12
    rows = vector_rows(summary)
    assert len(rows) == 256
    assert sum(r[2] for r in rows) == pytest.approx(1.0)
    assert np.isclose(rows[0][1], 0.0)
