import math

import numpy as np
import pytest

from mottlab.core.env_model import (
    EnvModel,
    GapLaw,
    MarkLaw,
    extend_window,
    gap_mgf,
    gap_mgf_with_error,
    lattice_model,
    sample_window,
    window_descriptor,
    window_from_descriptor,
    window_rows,
)
from mottlab.errors import ConfigError, UsageError, WindowRangeError


def _random_model() -> EnvModel:
    return EnvModel(
        gap_law=GapLaw.shifted_exponential(1.0, 2.0),
        mark_law=MarkLaw.power_uniform(0.0, 1.0),
        beta=1.0,
        u_kind="mott",
    )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def test_lattice_window_positions_are_integers() -> None:
    window = sample_window(lattice_model(), (-3, 3), seed=7)
    assert window.positions.tolist() == [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]
    assert window.marks.tolist() == [0.0] * 7
    assert window.x(0) == 0.0


def test_window_is_deterministic_in_seed() -> None:
    a = sample_window(_random_model(), (-40, 90), seed=3)
    b = sample_window(_random_model(), (-40, 90), seed=3)
    c = sample_window(_random_model(), (-40, 90), seed=4)
    assert a.same_values(b)
    assert not np.array_equal(a.positions, c.positions)


def test_gaps_respect_minimal_distance() -> None:
    window = sample_window(_random_model(), (-500, 500), seed=1)
    assert np.all(window.gaps() >= 1.0)
    assert np.all(np.abs(window.marks) <= 1.0)


def test_deterministic_gaps_equal_minimal_gap_exactly() -> None:
    window = sample_window(EnvModel(gap_law=GapLaw.deterministic(0.1)), (-500, 500), seed=0)
    gaps = window.gaps()
    assert gaps.size == 1000
    assert np.all(gaps == 0.1)
    assert window.gap(-500) == 0.1
    assert window.gap(499) == 0.1
    # positions stay within rounding of the exact lattice
    np.testing.assert_allclose(window.positions, 0.1 * np.arange(-500, 501), atol=1e-12)


def test_gaps_match_positions_and_survive_restriction() -> None:
    window = sample_window(_random_model(), (-300, 300), seed=8)
    np.testing.assert_allclose(window.gaps(), np.diff(window.positions), rtol=0, atol=1e-12)
    inner = window.restrict((-20, 40))
    np.testing.assert_array_equal(inner.gaps(), window.gaps()[280:340])
    assert inner.gap(-20) == window.gap(-20)
    with pytest.raises(WindowRangeError):
        inner.gap(40)


def test_shifted_exponential_gap_mean() -> None:
    n = 100_000
    window = sample_window(EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 2.0)), (0, n), seed=11)
    gaps = window.gaps()
    stderr = 0.5 / math.sqrt(n)
    assert abs(gaps.mean() - 1.5) <= 4 * stderr


def test_power_uniform_marks_moments() -> None:
    n = 100_000
    law = MarkLaw.power_uniform(2.0, 1.5)
    window = sample_window(EnvModel(gap_law=GapLaw.deterministic(1.0), mark_law=law), (0, n), seed=5)
    marks = window.marks
    assert np.all(np.abs(marks) <= 1.5)
    stderr = math.sqrt(law.variance() / n)
    assert abs(marks.mean()) <= 4 * stderr
    assert abs(np.mean(marks**2) - law.variance()) <= 0.02 * law.variance()


def test_extension_is_consistent_on_overlap() -> None:
    small = sample_window(_random_model(), (-10, 10), seed=9)
    large = extend_window(small, (-700, 300))
    assert large.restrict((-10, 10)).same_values(small)
    # growing in two steps gives the same values as growing at once
    staged = extend_window(extend_window(small, (-100, 50)), (-700, 300))
    assert staged.same_values(large)


def test_extension_must_contain_old_range() -> None:
    window = sample_window(_random_model(), (-10, 10), seed=9)
    with pytest.raises(UsageError):
        extend_window(window, (-5, 20))


def test_range_must_contain_origin() -> None:
    with pytest.raises(UsageError):
        sample_window(_random_model(), (1, 10), seed=0)


def test_out_of_window_index_raises() -> None:
    window = sample_window(_random_model(), (-2, 2), seed=0)
    with pytest.raises(WindowRangeError):
        window.x(3)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "model",
    [
        EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 0.0)),
        EnvModel(gap_law=GapLaw.shifted_exponential(0.0, 1.0)),
        EnvModel(gap_law=GapLaw.shifted_pareto(1.0, 1.0)),
        EnvModel(gap_law=GapLaw.deterministic(1.0), mark_law=MarkLaw.power_uniform(-1.0, 1.0)),
        EnvModel(gap_law=GapLaw.deterministic(1.0), mark_law=MarkLaw.power_uniform(0.0, 0.0)),
        EnvModel(gap_law=GapLaw.deterministic(1.0), beta=-1.0, u_kind="mott"),
        EnvModel(gap_law=GapLaw.deterministic(1.0), u_kind="coulomb"),
    ],
)
def test_invalid_parameters_raise_config_error(model: EnvModel) -> None:
    with pytest.raises(ConfigError):
        sample_window(model, (-2, 2), seed=0)


def test_negative_seed_is_rejected() -> None:
    with pytest.raises(ConfigError):
        sample_window(_random_model(), (-2, 2), seed=-1)


def test_interaction_vanishes_without_mott_energy() -> None:
    model = EnvModel(gap_law=GapLaw.deterministic(1.0), mark_law=MarkLaw.power_uniform(0.0, 1.0), beta=0.0, u_kind="mott")
    assert np.all(model.interaction(np.array([0.5, -0.3]), np.array([0.2, 0.9])) == 0.0)
    mott = _random_model()
    assert mott.interaction(0.5, -0.25) == pytest.approx(0.5 + 0.25 + 0.75)


# ---------------------------------------------------------------------------
# Moment generating function
# ---------------------------------------------------------------------------

def test_shifted_exponential_mgf_closed_form() -> None:
    model = EnvModel(gap_law=GapLaw.shifted_exponential(1.0, 2.0))
    assert gap_mgf(model, 0.5) == pytest.approx(math.exp(0.5) * 2.0 / 1.5)
    assert gap_mgf(model, 2.0) == math.inf
    assert gap_mgf(model, 0.0) == 1.0


def test_pareto_mgf_diverges_for_positive_argument() -> None:
    model = EnvModel(gap_law=GapLaw.shifted_pareto(1.0, 3.0))
    assert gap_mgf(model, 0.1) == math.inf
    value = gap_mgf(model, -1.0)
    assert 0.0 < value < math.exp(-1.0)


def test_deterministic_mgf() -> None:
    assert gap_mgf(lattice_model(), 0.7) == pytest.approx(math.exp(0.7))


def test_mgf_abscissa_per_gap_law() -> None:
    assert GapLaw.deterministic(1.0).mgf_abscissa() == math.inf
    assert GapLaw.shifted_exponential(1.0, 2.5).mgf_abscissa() == 2.5
    assert GapLaw.shifted_pareto(1.0, 3.0).mgf_abscissa() == 0.0


def test_mgf_error_bound_is_zero_for_closed_forms() -> None:
    assert gap_mgf_with_error(lattice_model(), 0.3)[1] == 0.0
    assert gap_mgf_with_error(_random_model(), 1.0)[1] == 0.0

    pareto = EnvModel(gap_law=GapLaw.shifted_pareto(1.0, 3.0))
    value, abserr = gap_mgf_with_error(pareto, -0.5)
    assert value == gap_mgf(pareto, -0.5)
    assert 0.0 <= abserr < 1e-6


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def test_descriptor_rebuilds_the_same_window() -> None:
    window = sample_window(_random_model(), (-20, 30), seed=42)
    rebuilt = window_from_descriptor(window_descriptor(window))
    assert rebuilt.same_values(window)


def test_window_rows_cover_every_index() -> None:
    window = sample_window(lattice_model(), (-2, 2), seed=0)
    rows = window_rows(window)
    assert [r[0] for r in rows] == [-2, -1, 0, 1, 2]
    assert rows[0][1] == -2.0
