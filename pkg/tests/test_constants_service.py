import math

import pytest

from app.core.exceptions import DomainError
from app.services import constants_service as cs


def test_R_at_zero_epsilon():
    assert cs.R_bound(0.0, 0.05) == pytest.approx(0.0392, abs=5e-4)


def test_R_at_the_averaging_threshold():
    assert cs.R_bound(1.0 / 20000.0, 0.05) == pytest.approx(0.0271, abs=5e-4)


def test_D_at_L_eps_is_one_tenth():
    for epsilon in (0.0, 1e-6, 1.0 / 70000.0, 2e-5):
        assert cs.D_bound(epsilon, cs.L_eps(epsilon)) == pytest.approx(0.1, abs=1e-15)


def test_delta_needs_short_curves():
    with pytest.raises(DomainError):
        cs.delta(0.0, 0.11)
    with pytest.raises(DomainError):
        cs.delta(-1e-6, 0.05)
    assert 0.0 < cs.delta(0.0, 0.1) < math.pi / 2


def test_R_needs_positive_length():
    with pytest.raises(DomainError):
        cs.R_bound(1e-5, 0.0)


def test_containment_crossing_brackets_the_sign_change():
    crossing = cs.containment_crossing()
    assert 1e-5 < crossing < 1.0 / 70000.0
    assert cs.containment_gap(crossing) == pytest.approx(0.0, abs=1e-10)
    assert cs.check_containment(0.99 * crossing)
    assert not cs.check_containment(1.01 * crossing)


def test_containment_at_the_hypothesis_thresholds():
    assert cs.check_containment(1e-5)
    assert not cs.check_containment(1.0 / 70000.0)
    # far outside the chain the check reports False instead of raising
    assert not cs.check_containment(1.0)


def test_operator_norm_bound_stays_below_1_53():
    for epsilon in (0.0, 1e-5, 1.0 / 70000.0):
        assert 1.0 < cs.op_norm_bound(epsilon) <= 1.53


def test_displacement_bound_is_below_842_eps():
    epsilon = 1e-5
    assert cs.displacement_bound(epsilon) == pytest.approx(374.0 * (math.exp(1.45) - 1.0) / 1.45 * epsilon)
    assert cs.displacement_bound(epsilon) < 842.0 * epsilon


def test_constants_table_defaults_to_L_eps():
    table = cs.constants(1e-5)
    assert table.L == pytest.approx(cs.L_eps(1e-5))
    assert table.D_eps == pytest.approx(0.1)
    assert table.containment
    assert table.R_eps == pytest.approx(cs.R_bound(1e-5, table.L))
    assert table.nondegeneracy_floor == pytest.approx(1.0 - table.form_bound)
    data = table.as_dict()
    assert data["thresholds"]["displacement"] == 842.0


def test_constants_table_marks_undefined_entries():
    epsilon = 1e-4  # L_eps < 0
    table = cs.constants(epsilon, length=0.01)
    assert table.L_eps < 0
    assert table.R_eps is None
    assert table.op_norm_bound is None
    with pytest.raises(DomainError):
        cs.constants(epsilon)


def test_sweep_columns_and_monotone_lhs():
    frame = cs.sweep(count=11, upper=2e-5)
    assert list(frame.columns) == ["epsilon", "lhs_842_eps", "R_eps_L_eps", "contained"]
    assert len(frame) == 11
    assert bool(frame["contained"].iloc[0])
    assert not bool(frame["contained"].iloc[-1])
    assert frame["lhs_842_eps"].is_monotonic_increasing
