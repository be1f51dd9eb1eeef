import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spincluster import models
from spincluster.models import (HHParams, SpinEntry, dse_signal, hh_model, idse_phase,
                                idse_phase_grad, idse_visibility, pumping_curve, pumping_oracle,
                                transfer_rate, wrap_phase)

deltas = st.floats(-3e6, 3e6)
pols = st.floats(-1, 1)
taus = st.floats(0, 3e-6)


@given(st.floats(-50, 50))
def test_wrap_range(x):
    w = float(wrap_phase(x))
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(x), abs_tol=1e-9)


def test_wrap_maps_minus_pi_to_pi():
    assert float(wrap_phase(-math.pi)) == pytest.approx(math.pi)


@given(taus, st.lists(st.tuples(deltas, pols), min_size=1, max_size=4))
def test_phase_equals_twice_visibility_argument(tau, spins):
    d, p = zip(*spins)
    v = idse_visibility(tau, d, p)
    if abs(v) < 1e-6:
        return
    expected = wrap_phase(2 * np.angle(v))
    got = idse_phase(tau, d, p)
    assert math.cos(got - expected) == pytest.approx(1.0, abs=1e-8)


@given(taus, deltas, pols)
def test_phase_antisymmetric_in_polarization(tau, d, p):
    a = float(idse_phase(tau, [d], [p]))
    b = float(idse_phase(tau, [d], [-p]))
    assert math.sin(a + b) == pytest.approx(0.0, abs=1e-9)


def test_unpolarized_cluster_has_no_phase():
    assert np.allclose(idse_phase(np.linspace(0, 2e-6, 7), [1e6, -2e6], [0.0, 0.0]), 0)


def test_fully_polarized_spin_gives_linear_phase():
    tau = np.linspace(0, 0.1e-6, 5)
    got = idse_phase(tau, [1e6], [1.0])
    assert np.allclose(got, wrap_phase(4 * np.pi * 1e6 * tau))


def test_phase_needs_matching_lengths():
    with pytest.raises(ValueError):
        idse_phase(1e-6, [1e6], [0.1, 0.2])
    with pytest.raises(ValueError):
        idse_phase(1e-6, [], [])


@given(st.floats(1e-8, 2e-6), st.floats(-2e6, 2e6).filter(lambda d: abs(d) > 1e3), st.floats(-0.9, 0.9))
def test_gradient_matches_finite_difference(tau, d, p):
    gd, gp = idse_phase_grad(tau, d, p)
    f = lambda dd, pp: 2 * math.atan2(pp * math.sin(2 * math.pi * dd * tau), math.cos(2 * math.pi * dd * tau))
    hd, hp = 1e-3, 1e-7
    fd = float(wrap_phase(f(d + hd, p) - f(d - hd, p))) / (2 * hd)
    fp = float(wrap_phase(f(d, p + hp) - f(d, p - hp))) / (2 * hp)
    if abs(math.cos(2 * math.pi * d * tau)) < 1e-3:
        return
    assert float(gd) == pytest.approx(fd, rel=1e-4, abs=1e-9)
    assert float(gp) == pytest.approx(fp, rel=1e-4, abs=1e-6)


def test_dse_signal_shape():
    assert dse_signal(0.0, 0.0, 1e-6) == pytest.approx(0.5)
    assert dse_signal(0.0, math.pi / 2, 1e-6) == pytest.approx(1.0)
    assert dse_signal(1e-6, 0.0, 1e-6) == pytest.approx(0.5 / math.e)
    with pytest.raises(ValueError):
        dse_signal(0.0, 0.0, 0.0)


def test_hh_model_limits():
    assert hh_model(0.0, 0.2, 1e6, 1e-6, 2e-6, 0.5) == pytest.approx(1.0)
    assert hh_model(1.0, 0.2, 1e6, 1e-6, 2e-6, 0.5) == pytest.approx(0.5)
    p = HHParams(0.2, 1e6, 1e-6, 2e-6, 0.5)
    assert models.hh_model_params(0.0, p) == pytest.approx(1.0)


def test_param_validation():
    with pytest.raises(ValueError):
        SpinEntry(1e6, 1.5)
    with pytest.raises(ValueError):
        HHParams(1.2, 1e6, 1e-6, 1e-6, 0.0)
    with pytest.raises(ValueError):
        HHParams(0.2, 1e6, 0.0, 1e-6, 0.0)
    with pytest.raises(ValueError):
        pumping_curve(1e-6, 1e5, 0.0, 1e-3)


def test_transfer_rate_limits():
    gamma = 5e6
    weak = 1e3
    assert transfer_rate(weak, gamma) == pytest.approx(4 * (2 * math.pi * weak) ** 2 / gamma, rel=1e-4)
    assert transfer_rate(1e7, gamma) == pytest.approx(gamma / 2)


@given(st.floats(1e4, 2e6), st.floats(1e6, 1e7))
def test_transfer_rate_bounded(omega, gamma):
    r = float(transfer_rate(omega, gamma))
    assert 0 <= r <= gamma / 2 + 1e-6


def test_pumping_curve_saturates():
    t1 = 1e-3
    R = float(transfer_rate(1e5, 5e6))
    assert pumping_curve(1.0, 1e5, 5e6, t1) == pytest.approx(R * t1 / (1 + R * t1))
    assert pumping_curve(0.0, 1e5, 5e6, t1) == 0.0


def test_rate_model_tracks_oracle_in_weak_coupling():
    # two independent routes: rate equation and the full master equation
    t = np.array([1e-6, 5e-6, 20e-6])
    exact = pumping_oracle(t, 5e4, 5e6, 1e-3)
    approx = pumping_curve(t, 5e4, 5e6, 1e-3)
    assert np.max(np.abs(approx - exact)) / np.max(exact) < 0.05


def test_oracle_scalar_and_vector_agree():
    v = pumping_oracle(np.array([2e-6]), 2e5, 5e6, 1e-3)
    s = pumping_oracle(2e-6, 2e5, 5e6, 1e-3)
    assert isinstance(s, float) and v[0] == pytest.approx(s)


def test_corrected_curve_uses_oracle_when_needed():
    t1 = 1e-3
    t = np.array([2e-6, 10e-6])
    got = models.corrected_pumping_curve(t, 3e5, 5e6, t1)
    if models.rate_model_error(t1) > models.CORRECTION_THRESHOLD:
        assert np.allclose(got, pumping_oracle(t, 3e5, 5e6, t1))
    else:
        assert np.allclose(got, pumping_curve(t, 3e5, 5e6, t1))
