import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from gframe_dd.device import (CouplingModel, Device, DeviceParams, DomainError, FluxMap, SingularityError,
                              coupler_frequency, flux_sensitivity, flux_sensitivity_analytic, net_coupling,
                              qubit_frequency, swap_rate)

DEV = Device()
# root of G/(wq - wc) + g12 = -97.1 MHz / 2 with G = g12 (6.15 - 4.62), solved by hand
WC_MIN_RATE = 4.62 + 0.012 * (6.15 - 4.62) / (0.0971 / 2 + 0.012)


def test_params_invariants():
    assert DeviceParams().violations() == []
    assert DeviceParams(omega2=9.0).violations()
    assert DeviceParams(alpha1=0.1).violations()
    assert DeviceParams(g12=-1e-3).violations()


def test_coupler_anchors():
    assert coupler_frequency(DEV.coupler_map, 0.0) == pytest.approx(8.8, abs=1e-12)
    assert coupler_frequency(DEV.coupler_map, 0.17) == pytest.approx(6.15, abs=1e-12)
    assert DEV.anchor_report() == []


def test_q1_anchors():
    assert qubit_frequency(DEV.q1_map, 0.0) == pytest.approx(5.27, abs=1e-12)
    phi = DEV.q1_bias_for_detuning(0.035)
    assert qubit_frequency(DEV.q1_map, phi) == pytest.approx(4.655, abs=1e-9)
    phi0 = DEV.q1_bias_for_detuning(0.0)
    assert qubit_frequency(DEV.q1_map, phi0) == pytest.approx(4.62, abs=1e-9)
    assert 0 < phi < phi0


def test_window_errors():
    with pytest.raises(DomainError):
        coupler_frequency(DEV.coupler_map, 0.3)
    with pytest.raises(DomainError):
        flux_sensitivity(DEV.coupling, DEV.coupler_map, DEV.coupler_map.window[1])


def test_tabulated_nodes_exact():
    phi = (0.0, 0.05, 0.1, 0.15, 0.2)
    f = (8.8, 8.5, 7.6, 6.5, 5.0)
    m = FluxMap(kind="tabulated", table_phi=phi, table_freq=f, window=(0.0, 0.2))
    for p, v in zip(phi, f):
        assert coupler_frequency(m, p) == v
    with pytest.raises(ValueError):
        FluxMap(kind="tabulated", table_phi=phi, table_freq=(8.8, 8.9, 7.6, 6.5, 5.0))


def test_net_coupling_examples():
    c = DEV.coupling
    assert net_coupling(c, 6.15) == pytest.approx(0.0, abs=1e-15)
    assert net_coupling(c, 1e9) == pytest.approx(c.g12_eff, rel=1e-6)
    assert 2e3 * net_coupling(c, WC_MIN_RATE) == pytest.approx(-97.1, rel=1e-12)
    with pytest.raises(SingularityError):
        net_coupling(c, c.omega_q)


def test_net_coupling_monotone_each_side():
    c = DEV.coupling
    above = net_coupling(c, np.linspace(c.omega_q + 0.01, 20, 500))
    below = net_coupling(c, np.linspace(0.5, c.omega_q - 0.01, 500))
    assert np.all(np.diff(above) > 0) and np.all(np.diff(below) > 0)


def test_swap_rate_examples():
    assert DEV.swap_rate(0.17) == pytest.approx(0.0, abs=1e-12)
    hi_end = DEV.swap_rate(DEV.coupler_map.window[0])
    assert 0 < hi_end < 2e3 * DEV.coupling.g12_eff
    phi = DEV.bias_for_rate(-25.0)
    assert DEV.swap_rate(phi) == pytest.approx(-25.0, abs=1e-9)
    phi = DEV.bias_for_rate(-97.1)
    assert coupler_frequency(DEV.coupler_map, phi) == pytest.approx(WC_MIN_RATE, abs=1e-9)


def test_single_zero_crossing():
    phis = np.linspace(*DEV.coupler_map.window, 4001)
    r = DEV.swap_rate(phis)
    flips = np.nonzero(np.diff(np.sign(r)))[0]
    assert len(flips) == 1
    assert phis[flips[0]] <= 0.17 <= phis[flips[0] + 1]


def test_sensitivity_examples():
    assert flux_sensitivity(DEV.coupling, DEV.coupler_map, 0.0) == pytest.approx(0.0, abs=1e-12)
    phis = np.linspace(0.17, 0.2, 30)
    mags = np.abs(flux_sensitivity_analytic(DEV.coupling, DEV.coupler_map, phis))
    assert np.all(np.diff(mags) > 0)


def test_fd_vs_analytic_random_biases():
    rng = np.random.default_rng(7)
    lo, hi = DEV.coupler_map.window
    phis = rng.uniform(lo + 1e-3, hi - 1e-3, 100)
    fd = flux_sensitivity(DEV.coupling, DEV.coupler_map, phis)
    an = flux_sensitivity_analytic(DEV.coupling, DEV.coupler_map, phis)
    mask = np.abs(an) > 1e-6
    assert np.max(np.abs(fd[mask] / an[mask] - 1)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-0.09, 0.1), width=st.floats(0.005, 0.1))
def test_integrated_sensitivity_recovers_rate(a, width):
    b = min(a + width, 0.2)
    integral, _ = quad(lambda p: flux_sensitivity_analytic(DEV.coupling, DEV.coupler_map, p) * 1e3, a, b,
                       epsabs=1e-10, limit=200)
    assert integral == pytest.approx(DEV.swap_rate(b) - DEV.swap_rate(a), abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.1, 0.205), st.floats(-0.1, 0.205))
def test_coupler_decreasing_in_abs_flux(p, q):
    if abs(p) < abs(q) - 1e-9:
        assert coupler_frequency(DEV.coupler_map, p) > coupler_frequency(DEV.coupler_map, q)


@settings(max_examples=30, deadline=None)
@given(st.floats(5.0, 7.0))
def test_anchored_coupling_zero(wc0):
    m = CouplingModel.anchored(wc0, 4.62)
    assert net_coupling(m, wc0) == pytest.approx(0.0, abs=1e-14)
    assert swap_rate(m, FluxMap.anchored(8.8, 0.17, wc0), 0.17) == pytest.approx(0.0, abs=1e-10)
