import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpclay.constitutive import (
    EosParams, EosState, FlowState, JcParams, MaterialParams, PARAM_COLUMNS,
    effective_strength, eos_pressure, jc_flow_stress, rate_factor, thermal_factor,
)
from rpclay.errors import DomainError, InvalidParameterError

JC = JcParams()
EOS = EosParams()

# Hand-evaluated with mpmath at 30 digits, independent of this package.
JC_HALF_STRAIN_TENFOLD_RATE = 306.732147109559638952970886884  # kPa
EOS_COMPRESSION_001 = 32074000.0  # Pa
EOS_TENSION_001 = -23970000.0  # Pa


def test_reference_state_collapses_to_A():
    s = jc_flow_stress(JC, FlowState(0.0, JC.eps_dot_ref, JC.T0))
    assert s == pytest.approx(0.01, abs=1e-12)


def test_unit_strain_gives_A_plus_B():
    s = jc_flow_stress(JC, FlowState(1.0, JC.eps_dot_ref, JC.T0))
    assert s == pytest.approx(238.01, rel=1e-12)


def test_golden_flow_stress():
    s = jc_flow_stress(JC, FlowState(0.5, 1.18, JC.T0))
    assert s == pytest.approx(JC_HALF_STRAIN_TENFOLD_RATE, rel=1e-12)


def test_rate_bracket_floored_below_reference():
    assert rate_factor(JC, 0.0) == 1.0
    assert rate_factor(JC, JC.eps_dot_ref / 10) == 1.0


def test_thermal_bracket():
    assert thermal_factor(JC, JC.T0) == 1.0
    assert thermal_factor(JC, JC.T0 - 20) == 1.0
    assert thermal_factor(JC, JC.Tm) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainError):
        thermal_factor(JC, JC.Tm + 1)


@pytest.mark.parametrize("kw", [dict(B=0), dict(n=-1), dict(C=-0.1), dict(m=0),
                                dict(eps_dot_ref=0), dict(T0=400.0), dict(A=-1)])
def test_invalid_jc_params(kw):
    with pytest.raises(InvalidParameterError):
        JcParams(**kw)


def test_eos_zero():
    assert eos_pressure(EOS, EosState(0.0, 0.0)) == 0.0


def test_eos_golden_compression_and_tension():
    assert eos_pressure(EOS, EosState(0.01)) == pytest.approx(EOS_COMPRESSION_001, rel=1e-12)
    assert eos_pressure(EOS, EosState(-0.01)) == pytest.approx(EOS_TENSION_001, rel=1e-12)


def test_eos_energy_term():
    e = 1000.0
    assert eos_pressure(EOS, EosState(0.0, e)) == pytest.approx(1.7 * 1600 * e)
    assert eos_pressure(EOS, EosState(-1e-12, e)) == pytest.approx(1.7 * 1600 * e, rel=1e-6)


def test_eos_rejects_mu_at_or_below_minus_one():
    with pytest.raises(InvalidParameterError):
        EosState(-1.0)


def test_erosion_cap():
    mat = MaterialParams()
    below = effective_strength(mat, FlowState(0.0, 1.0))
    assert below.stress == jc_flow_stress(mat.jc, FlowState(0.0, 1.0))
    assert not below.eroded
    at = effective_strength(mat, FlowState(mat.ise, 1.0), post_erosion=True)
    assert at == (0.0, True)
    twice = effective_strength(mat, FlowState(2 * mat.ise, 1.0))
    assert twice == effective_strength(mat, FlowState(mat.ise, 1.0))
    assert twice.eroded


def test_material_flat_round_trip():
    mat = MaterialParams().updated(B=119.0, A1=0.701, ise=2.5)
    flat = mat.to_flat()
    assert tuple(flat) == PARAM_COLUMNS
    assert MaterialParams.from_flat(flat) == mat
    with pytest.raises(KeyError):
        mat.updated(Q=1.0)


strain = st.floats(0.0, 5.0)
rate = st.floats(0.0, 1e4)


@settings(max_examples=200, deadline=None)
@given(e1=strain, e2=strain, r=rate)
def test_monotone_in_strain(e1, e2, r):
    lo, hi = sorted((e1, e2))
    assert jc_flow_stress(JC, FlowState(lo, r)) <= jc_flow_stress(JC, FlowState(hi, r)) + 1e-12


@settings(max_examples=200, deadline=None)
@given(e=strain, r1=rate, r2=rate)
def test_monotone_in_rate(e, r1, r2):
    lo, hi = sorted((r1, r2))
    assert jc_flow_stress(JC, FlowState(e, lo)) <= jc_flow_stress(JC, FlowState(e, hi)) + 1e-12


@settings(max_examples=200, deadline=None)
@given(mu=st.floats(-0.5, 0.5))
def test_eos_finite_and_signed(mu):
    p = eos_pressure(EOS, EosState(mu))
    assert math.isfinite(p)
    if 0 < mu < 0.05:
        assert p > 0
