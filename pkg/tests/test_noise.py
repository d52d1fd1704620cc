import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gframe_dd.config import load_config
from gframe_dd.device import DomainError
from gframe_dd.noise import (Lorentzian, NoisePsdModel, NoiseTrajectory, band_power, log_band_average,
                             periodogram, psd_eval, synthesize_trajectory)

TWO_PI = 2 * np.pi
CFG = load_config()


def test_white_identity():
    m = NoisePsdModel(a_white=3e-14)
    w = np.geomspace(m.omega_min, m.omega_max, 50)
    assert np.all(psd_eval(m, w) == 3e-14)


def test_one_over_f_scaling():
    m = NoisePsdModel(a1=1e-9)
    for w in (1.0, 1e3, 1e6):
        assert psd_eval(m, 2 * w) / psd_eval(m, w) == pytest.approx(0.5, rel=1e-14)


def test_out_of_band_raises():
    m = NoisePsdModel(a1=1.0)
    with pytest.raises(DomainError):
        psd_eval(m, 1e-3)
    with pytest.raises(DomainError):
        psd_eval(m, TWO_PI * 2e8)


def test_lorentzian_is_positive_form():
    lz = Lorentzian(2.0, 100.0, 5.0)
    assert lz(100.0) == pytest.approx(2.0 / 5.0)
    assert lz(95.0) == pytest.approx(2.0 * 5 / 50)


def test_invariants_rejected():
    with pytest.raises(ValueError):
        NoisePsdModel(a1=-1.0)
    with pytest.raises(ValueError):
        NoisePsdModel(lorentz_low=Lorentzian(1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        NoisePsdModel(f_min=10.0, f_max=1.0)


@pytest.mark.parametrize("name", ["q1", "coupler"])
def test_default_models_positive_and_bump(name):
    m = CFG.noise_model(name)
    w = np.geomspace(m.omega_min, m.omega_max, 400)
    s = psd_eval(m, w)
    assert np.all(np.isfinite(s)) and np.all(s > 0)
    inst = m.without_ground_loop()
    peak = psd_eval(inst, TWO_PI * 150.0)
    assert peak > psd_eval(inst, TWO_PI * 15.0) and peak > psd_eval(inst, TWO_PI * 1500.0)


def test_attenuation_leaves_ground_loop():
    m = CFG.noise_model("coupler")
    w = np.geomspace(m.omega_min, m.omega_max, 40)
    att = m.attenuated(20.0)
    expect = 0.01 * m.without_ground_loop().instrument(w) + m.ground_loop(w)
    assert np.allclose(psd_eval(att, w), expect, rtol=1e-13)


def test_white_variance():
    dt = 1e-8
    m = NoisePsdModel(a_white=1e-12)
    x = synthesize_trajectory(m, dt, 1 << 20, 5).samples
    expected = 1e-12 * (np.pi / dt) / TWO_PI
    assert np.var(x) == pytest.approx(expected, rel=0.05)


def test_determinism():
    m = CFG.noise_model("coupler")
    a = synthesize_trajectory(m, 1e-9, 4096, 42).samples
    b = synthesize_trajectory(m, 1e-9, 4096, 42).samples
    assert np.array_equal(a, b)
    assert not np.array_equal(a, synthesize_trajectory(m, 1e-9, 4096, 43).samples)


def test_short_trajectory_rejected():
    with pytest.raises(ValueError):
        synthesize_trajectory(NoisePsdModel(a_white=1.0), 1e-9, 1, 0)
    traj = synthesize_trajectory(NoisePsdModel(a_white=1.0), 1e-9, 100, 0)
    with pytest.raises(ValueError):
        periodogram(traj, 64)


def test_one_over_f_slope():
    m = NoisePsdModel(a1=1e-10)
    dt = 1e-6
    traj = synthesize_trajectory(m, dt, 1 << 20, 3)
    w, p = periodogram(traj, 64)
    fs = w / TWO_PI
    band = (fs > 1e2) & (fs < 1e4)   # two decades well inside the segment band
    slope = np.polyfit(np.log(fs[band]), np.log(p[band]), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.05)


def test_white_periodogram_flat():
    traj = synthesize_trajectory(NoisePsdModel(a_white=1e-12), 1e-8, 1 << 16, 11)
    w, p = periodogram(traj, 64)
    inner = p[1:-1]
    assert inner.max() / inner.min() < 3


def test_tone_power():
    dt, n, amp = 1e-3, 1 << 14, 0.7
    t = np.arange(n) * dt
    f0 = 64 / (n // 16 * dt) * 1.0   # on a bin of the 16-segment grid
    traj = NoiseTrajectory(dt, amp * np.sin(TWO_PI * f0 * t), 0, NoisePsdModel(a_white=1.0))
    w, p = periodogram(traj, 16)
    df = (w[1] - w[0]) / TWO_PI
    near = np.abs(w / TWO_PI - f0) < 5 * df
    assert np.sum(p[near]) * df == pytest.approx(amp ** 2 / 2, rel=1e-3)


def test_round_trip_default_model():
    m = CFG.noise_model("coupler")
    dt = 1e-7
    traj = synthesize_trajectory(m, dt, 1 << 18, 9, static=False)
    w, p = periodogram(traj, 64)
    mid = (w > 20 * w[1]) & (w < 0.2 * w[-1])
    ratio = p[mid] / psd_eval(m, w[mid])
    assert np.all(ratio > 0.5) and np.all(ratio < 2.0)
    wb, pb = log_band_average(w[mid], p[mid], 5)
    wb, sb = log_band_average(w[mid], psd_eval(m, w[mid]), 5)
    assert np.all(np.abs(pb / sb - 1) < 0.1)


def test_static_offset_carries_sub_record_power():
    m = NoisePsdModel(a1=1e-10)
    dt, n = 1e-6, 1024
    offsets = [synthesize_trajectory(m, dt, n, s).samples.mean() for s in range(400)]
    sub = band_power(m, m.f_min, 0.5 / (n * dt))
    assert np.var(offsets) == pytest.approx(sub, rel=0.25)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(0.01, 100.0))
def test_scaling_exact(c):
    m = CFG.noise_model("coupler")
    w = np.geomspace(m.omega_min, m.omega_max, 30)
    assert np.allclose(psd_eval(m.scaled(c), w), c * psd_eval(m, w), rtol=1e-12)


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.1, 10.0), seed=st.integers(0, 2 ** 31))
def test_scaling_variance(c, seed):
    m = NoisePsdModel(a_white=1e-12, a1=1e-12)
    a = synthesize_trajectory(m, 1e-8, 4096, seed).samples
    b = synthesize_trajectory(m.scaled(c), 1e-8, 4096, seed).samples
    # same seed, same Gaussian draws: scaling is exact sample by sample
    assert np.var(b) == pytest.approx(c * np.var(a), rel=1e-9)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_zero_mean(seed):
    m = NoisePsdModel(a_white=1e-12)
    x = synthesize_trajectory(m, 1e-8, 1 << 14, seed, static=False).samples
    assert abs(x.mean()) < 6 * np.sqrt(1e-12 / 2e-8 / x.size)
