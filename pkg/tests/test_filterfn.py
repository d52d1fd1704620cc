import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gframe_dd.config import load_config
from gframe_dd.filterfn import (SENS_TO_RAD, FilterPoleError, SequenceKind, SignFunction, coherence_integral,
                                dephasing_rate, filter_closed_form, filter_numeric, sequence_coefficient,
                                write_a_of_n_csv, write_rate_curve_csv)
from gframe_dd.noise import NoisePsdModel

CFG = load_config()
COMBINED = CFG.noise_model("coupler", 20.0)
KINDS = [SequenceKind("Y", n) for n in (1, 2, 4, 8)]


def test_kind_placement():
    k = SequenceKind.parse("Y-4")
    assert np.allclose(k.flip_fractions, [0.25, 0.5, 0.75])
    assert k.pulse_axes == "YYY"
    xy8 = SequenceKind.parse("XY-8")
    assert xy8.pulse_axes == "YXYXXYXY"
    assert np.allclose(xy8.pulse_fractions, np.arange(1, 9) / 8)
    assert SequenceKind.parse("XY-4").pulse_axes == "YXYX"
    with pytest.raises(ValueError):
        SequenceKind("XY", 3)
    with pytest.raises(ValueError):
        SequenceKind("Z", 2)


def test_sign_function():
    sf = SequenceKind("X", 4).sign_function(4.0)
    assert list(sf(np.array([0.5, 1.5, 2.5, 3.5]))) == [1, -1, 1, -1]
    with pytest.raises(ValueError):
        SignFunction((2.0, 1.0), 3.0)


def test_ramsey_limits():
    assert filter_closed_form(KINDS[0], 0.0, 1e-6) == 1.0
    assert filter_closed_form(KINDS[0], np.pi / 1e-6, 1e-6) == pytest.approx(4 / np.pi ** 2, rel=1e-14)
    ramsey = SignFunction((), 1e-6)
    assert filter_numeric(ramsey, np.pi / 1e-6) == pytest.approx(4 / np.pi ** 2, rel=1e-14)


def test_echo_matches_closed_form():
    echo = SequenceKind("Y", 2)
    w = np.geomspace(1e2, 1e10, 300)
    # absolute floor: near the zeros of sin^4 the segment sum cancels to ~1e-16
    assert np.allclose(filter_numeric(echo.sign_function(3e-6), w), filter_closed_form(echo, w, 3e-6),
                       rtol=1e-12, atol=1e-15)


def test_dc_limit_signed_area():
    sf = SignFunction((0.3, 0.5), 1.0)   # areas +0.3 -0.2 +0.5
    assert filter_numeric(sf, 0.0) == pytest.approx(0.6 ** 2)
    for k in KINDS[1:]:
        assert filter_numeric(k.sign_function(1.0), 0.0) == pytest.approx(0.0, abs=1e-30)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_dc_blocking_quadratic(n):
    k = SequenceKind("Y", n)
    f1 = filter_closed_form(k, 1e-3, 1.0)
    f2 = filter_closed_form(k, 2e-3, 1.0)
    assert f2 / f1 == pytest.approx(4.0, rel=1e-5)


def test_pole_error():
    k = SequenceKind("Y", 4)
    t = 1e-6
    w_pole = np.pi / 2 * 2 * 4 / t
    with pytest.raises(FilterPoleError):
        filter_closed_form(k, w_pole, t)


@settings(max_examples=200, deadline=None)
@given(n=st.sampled_from([1, 2, 4, 8]), logw=st.floats(0.0, 10.0), logt=st.floats(-8.0, -4.0))
def test_closed_form_equals_numeric(n, logw, logt):
    k = SequenceKind("Y", n)
    w, t = 10 ** logw, 10 ** logt
    y = w * t / (2 * n)
    m = np.round(y / np.pi - 0.5)
    if abs(y - np.pi * (m + 0.5)) < 1e-6:
        return
    fc = filter_closed_form(k, w, t)
    fn = filter_numeric(k.sign_function(t), w)
    assert fc == pytest.approx(fn, rel=1e-10, abs=1e-15)


def test_chi_trivial_zeros():
    assert coherence_integral(COMBINED, 5.0, KINDS[0], 0.0, 1e-6) == 0.0
    assert coherence_integral(COMBINED, 0.0, KINDS[0], 1e-6) == 0.0


def test_echo_one_over_f_ln2():
    a = 1e-9
    m = NoisePsdModel(a1=a, f_max=1e11)
    s = 5.0
    for t in (1e-7, 1e-6, 1e-5):
        chi = coherence_integral(m, s, KINDS[1], t)
        # int_0^inf sin^4(x)/x^3 dx = ln 2, one-sided PSD -> 1/(2 pi), chi carries 1/2
        expect = (s * SENS_TO_RAD) ** 2 * a * np.log(2) * t ** 2 / (4 * np.pi)
        assert chi == pytest.approx(expect, rel=0.01)


def test_ramsey_echo_ratio_one_over_f_11():
    m = NoisePsdModel(a_gl=1e-10, alpha_gl=1.1)
    r = dephasing_rate(m, 5.0, KINDS[0]).gamma_phi / dephasing_rate(m, 5.0, KINDS[1]).gamma_phi
    assert r == pytest.approx(7.9, rel=0.15)


def test_factorization_exact():
    a = dephasing_rate(COMBINED, 3.0, KINDS[2])
    b = dephasing_rate(COMBINED, 6.0, KINDS[2])
    assert b.gamma_phi == 2 * a.gamma_phi
    assert b.a_of_n == a.a_of_n
    assert a.gamma_phi == pytest.approx(3.0 * a.a_of_n, rel=1e-15)
    assert a.converged


def _tau_star_spread(m, kinds=KINDS):
    worst = 0.0
    for k in kinds:
        p = dephasing_rate(m, 5.0, k)
        for f in (0.5, 1.5):
            g = dephasing_rate(m, 5.0, k, tau_star=f * p.tau_star).gamma_phi
            worst = max(worst, abs(g / p.gamma_phi - 1))
    return worst


@pytest.mark.parametrize("name,atten", [("q1", 0.0), ("coupler", 20.0)])
def test_tau_star_insensitivity_default_models(name, atten):
    assert _tau_star_spread(CFG.noise_model(name, atten)) < 0.10


@settings(max_examples=8, deadline=None)
@given(alpha=st.floats(0.8, 1.3))
def test_tau_star_insensitivity_power_law(alpha):
    m = NoisePsdModel(a_gl=1e-10, alpha_gl=alpha)
    assert _tau_star_spread(m, KINDS[:2]) < 0.10


def test_ordering_combined_model():
    a = [sequence_coefficient(COMBINED, k) for k in KINDS]
    assert a[0] > a[1] > a[2] > a[3]


def test_white_noise_not_refocused():
    m = NoisePsdModel(a_white=1e-16, f_max=1e12)
    a = [sequence_coefficient(m, k) for k in KINDS]
    assert np.allclose(a, a[0], rtol=1e-3)


def test_xy8_improvement_in_range():
    xy8 = SequenceKind.parse("XY-8")
    r = sequence_coefficient(COMBINED, KINDS[0]) / sequence_coefficient(COMBINED, xy8)
    assert 10 <= r <= 18


def test_csv_formats(tmp_path):
    write_a_of_n_csv(tmp_path / "a.csv", [(1, 2.5e5), (2, 3e4)])
    write_rate_curve_csv(tmp_path / "r.csv", [(1.0, 1e5)])
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "n,a_of_n_hz_per_mhz_per_mphi0"
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "sens_mhz_per_mphi0,gamma_phi_per_s"


@settings(max_examples=15, deadline=None)
@given(s=st.floats(0.1, 50.0), n=st.sampled_from([1, 2, 4, 8]))
def test_rate_linear_in_sensitivity(s, n):
    k = SequenceKind("Y", n)
    p = dephasing_rate(COMBINED, s, k)
    assert p.gamma_phi / s == pytest.approx(sequence_coefficient(COMBINED, k), rel=1e-12)
