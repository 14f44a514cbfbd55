import json
import math

import numpy as np
import pytest

from inflammfc._validation import DomainError
from inflammfc.patient import (DEATH_THRESHOLD, RATE_FIELDS, Label, PatientParameters,
                               PatientState, classify, hill_f, load_reference_rates,
                               reference_parameters, rhs)


@pytest.fixture
def params():
    return reference_parameters()


def test_reference_rates_complete():
    rates = load_reference_rates()
    assert set(rates) == set(RATE_FIELDS)
    assert rates["s_c"] / rates["mu_c"] == pytest.approx(0.125)


def test_reference_rates_reject_unknown_key(tmp_path):
    rates = load_reference_rates()
    rates["k_zz"] = 1.0
    path = tmp_path / "rates.json"
    path.write_text(json.dumps(rates))
    with pytest.raises(KeyError, match="k_zz"):
        load_reference_rates(path)


def test_hill_f():
    assert hill_f(2.0, 0.0, 0.28) == 2.0
    assert hill_f(2.0, 0.28, 0.28) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        hill_f(-1.0, 0.1, 0.28)
    with pytest.raises(DomainError):
        hill_f(1.0, 0.1, 0.0)


def test_healthy_equilibrium_is_fixed(params):
    np.testing.assert_allclose(rhs(PatientState(0, 0, 0, params.resting_ca), params), 0, atol=1e-12)


def test_controls_enter_additively(params):
    x = PatientState(0.3, 0.1, 0.05, 0.14)
    base = rhs(x, params)
    dosed = rhs(x, params, u_p=0.2, u_a=0.05)
    np.testing.assert_allclose(dosed - base, [0.0, 0.2, 0.0, 0.05], atol=1e-15)


def test_damage_is_uncontrolled(params):
    x = PatientState(0.3, 0.1, 0.05, 0.14)
    assert rhs(x, params, 1.0, 1.0)[2] == rhs(x, params)[2]


def test_rhs_rejects_negative_dose(params):
    with pytest.raises(DomainError):
        rhs(PatientState(0, 0, 0, 0.125), params, u_p=-0.1)


def test_state_rejects_negative_and_nan():
    with pytest.raises(DomainError):
        PatientState(-1e-9, 0, 0, 0)
    with pytest.raises(DomainError):
        PatientState(0, math.nan, 0, 0)


def test_parameters_validate(params):
    with pytest.raises(DomainError, match="c_inf"):
        params.replace(c_inf=0.0)
    with pytest.raises(DomainError, match="k_pg"):
        params.replace(k_pg=-0.1)


def test_parameters_round_trip(params):
    p = params.replace(k_pg=0.5, initial_state=PatientState(0.4, 0, 0, 0.13), label="x")
    assert PatientParameters.from_dict(json.loads(json.dumps(p.to_dict()))) == p


def test_from_dict_names_offending_key(params):
    data = params.to_dict()
    del data["params"]["mu_d"]
    with pytest.raises(KeyError, match="mu_d"):
        PatientParameters.from_dict(data)
    data = params.to_dict()
    data["params"]["k_np"] = "abc"
    with pytest.raises(ValueError, match="k_np"):
        PatientParameters.from_dict(data)


@pytest.mark.parametrize("state, label, dead", [
    ((0, 0, 0, 0.125), Label.HEALTHY, False),
    ((0, 0.2, 3.0, 0.3), Label.ASEPTIC, False),
    ((0, 0.5, 17.2, 0.3), Label.ASEPTIC, True),
    ((5.0, 0.5, 2.0, 0.3), Label.SEPTIC, False),
    ((2e-3, 0, 0, 0.125), Label.SEPTIC, False),
])
def test_classify(state, label, dead):
    out = classify(PatientState(*state))
    assert out.label is label
    assert out.dead is dead
    assert out.status == ("dead" if dead else label.value)


def test_classify_tolerance():
    x = PatientState(5e-4, 5e-4, 5e-4, 0.1)
    assert classify(x).label is Label.HEALTHY
    assert classify(x, tol_zero=1e-4).label is Label.SEPTIC


def test_death_threshold_is_inclusive():
    assert classify(PatientState(0, 0, DEATH_THRESHOLD, 0.1)).dead
