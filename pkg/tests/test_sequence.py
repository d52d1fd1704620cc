import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gframe_dd import su2
from gframe_dd.config import load_config
from gframe_dd.filterfn import SequenceKind
from gframe_dd.sequence import (Calibration, CalibrationError, GFrameGate, Pulse, PulseSchedule, ScheduleError,
                                TransferMap, build_dd_circuit, calibrate_pi_amplitude, compile, decompile,
                                ideal_unitary, pi_residual, pulse_train_population, schedule_unitary)

CFG = load_config()
CAL = CFG.calibration
# exact pi pulses with linear maps (amplitude = rate in MHz)
EXACT = Calibration(delta_pi_rate=1 / (2 * 6e-9) / 1e6)
FAMILIES = ["Y-1", "Y-2", "X-2", "Y-4", "X-4", "Y-8", "X-8", "XY-4", "XY-8"]


def phase_free_distance(u, v):
    return su2.unitary_distance(u, v)


def test_gate_angles():
    assert CAL.omega_pi().angle == pytest.approx(-np.pi, rel=1e-15)
    assert CAL.delta_pi().angle == pytest.approx(0.996 * np.pi, rel=1e-15)
    assert pi_residual(83.0, 6e-9) == pytest.approx(-0.004, abs=1e-12)
    assert CAL.residuals()["delta_pi"] == pytest.approx(-0.004, abs=1e-12)
    with pytest.raises(ValueError):
        GFrameGate("omega", 1.0, 0.0)


def test_y_composite_is_sigma_y():
    u = ideal_unitary(EXACT.y_pi())
    assert phase_free_distance(u, su2.SY) < 1e-12
    assert [g.kind for g in EXACT.y_pi()] == ["omega", "delta"]


def test_empty_circuit_identity():
    assert np.allclose(ideal_unitary([]), np.eye(2))


def test_ramsey_and_echo_layout():
    r = build_dd_circuit(SequenceKind("Y", 1), 400e-9, -25.0, CAL)
    assert len(r.gates) == 1 and r.gates[0].kind == "free" and r.gates[0].duration == 400e-9
    e = build_dd_circuit(SequenceKind("Y", 2), 400e-9, -25.0, CAL)
    w = CAL.pulse_width("Y")
    assert [g.kind for g in e.gates] == ["free", "omega", "delta", "free"]
    assert e.gates[0].duration == pytest.approx(200e-9 - w / 2, abs=1e-18)
    assert e.gates[-1].duration == pytest.approx(200e-9 - w / 2, abs=1e-18)


def test_xy4_layout():
    c = build_dd_circuit(SequenceKind.parse("XY-4"), 800e-9, -25.0, CAL)
    assert np.allclose(c.pulse_centers, np.array([1, 2, 3, 4]) * 200e-9)
    tags = [g.tag for g in c.gates if g.kind != "free"]
    assert tags == ["Y", "Y", "X", "Y", "Y", "X"]
    assert c.duration == pytest.approx(800e-9 + CAL.pulse_width("X") / 2, abs=1e-18)


@pytest.mark.parametrize("label", FAMILIES)
def test_pulse_centres_periodic(label):
    kind = SequenceKind.parse(label)
    c = build_dd_circuit(kind, 640e-9, -25.0, CAL)
    t, centres = 0.0, []
    gates = list(c.gates)
    i = 0
    while i < len(gates):
        g = gates[i]
        if g.kind == "free":
            t += g.duration
            i += 1
            continue
        w = g.duration + (gates[i + 1].duration if g.tag == "Y" else 0.0)
        centres.append(t + w / 2)
        t += w
        i += 2 if g.tag == "Y" else 1
    assert np.allclose(centres, kind.pulse_fractions * 640e-9, atol=1e-18)


@pytest.mark.parametrize("label", FAMILIES)
def test_pulse_parity(label):
    # transverse pi pulses anticommute with the free Z evolution: an even count
    # leaves a pure Z rotation, an odd count a pure transverse one
    kind = SequenceKind.parse(label)
    u = ideal_unitary(build_dd_circuit(kind, 640e-9, -25.0, EXACT))
    if len(kind.pulse_axes) % 2 == 0:
        assert abs(u[0, 1]) < 1e-12 and abs(u[1, 0]) < 1e-12
    else:
        assert abs(u[0, 0]) < 1e-12 and abs(u[1, 1]) < 1e-12


def test_xy4_identity_short_pulses():
    w = 1e-15
    cal = Calibration(omega_pi_rate=-1 / (2 * w) / 1e6, omega_pi_width=w, delta_pi_rate=1 / (2 * w) / 1e6,
                      delta_pi_width=w, grid=0.0)
    c = build_dd_circuit(SequenceKind.parse("XY-4"), 400e-9, -25.0, cal)
    u = ideal_unitary(c)
    # free evolution alternates sign between pulses and cancels
    assert phase_free_distance(u, np.eye(2)) < 1e-6


def test_build_errors():
    with pytest.raises(ScheduleError):
        build_dd_circuit(SequenceKind("Y", 8), 100e-9, -25.0, CAL)
    # eight 26 ns composites need 208 ns
    with pytest.raises(ScheduleError):
        build_dd_circuit(SequenceKind("Y", 8), 200e-9, -25.0, CAL)
    assert len(build_dd_circuit(SequenceKind("Y", 8), 210e-9, -25.0, CAL).gates) > 8
    with pytest.raises(ValueError):
        build_dd_circuit(SequenceKind("Y", 2), 400e-9, 0.0, CAL)


def test_compile_gate_channels():
    circ = build_dd_circuit(SequenceKind("Y", 2), 400e-9, -25.0, CAL)
    s = compile(circ, CAL)
    q1 = s.channels["q1_z"]
    cp = s.channels["coupler_z"]
    assert len(q1) == 1 and q1[0].width == pytest.approx(6e-9)
    assert q1[0].amplitude == pytest.approx(CAL.amp_to_delta.inverse(83.0), rel=1e-12)
    pi = [p for p in cp if p.width == pytest.approx(20e-9)]
    assert len(pi) == 1 and pi[0].amplitude == pytest.approx(229.0, rel=1e-9)
    assert 2 * np.pi * 25e6 * pi[0].width == pytest.approx(np.pi, rel=1e-12)
    assert s.residuals["delta_pi"] == pytest.approx(-0.004, abs=1e-12)


def test_identity_crosstalk_passthrough():
    assert np.array_equal(CAL.emitted([3.0, -2.0]), [3.0, -2.0])


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.5, 2.0), b=st.floats(-0.3, 0.3), c=st.floats(-0.3, 0.3), d=st.floats(0.5, 2.0))
def test_crosstalk_correction(a, b, c, d):
    m = ((a, b), (c, d))
    cal = Calibration(crosstalk=m, grid=0.0)
    base = Calibration(grid=0.0)
    circ = build_dd_circuit(SequenceKind.parse("XY-4"), 400e-9, -25.0, base)
    s_m, s_i = compile(circ, cal), compile(circ, base)
    assert np.allclose(decompile(s_m, cal), decompile(s_i, base), rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(t=st.floats(250e-9, 2e-6), label=st.sampled_from(FAMILIES), om=st.floats(-40.0, -1.0))
def test_round_trip_before_alignment(t, label, om):
    circ = build_dd_circuit(SequenceKind.parse(label), t, om, CAL)
    segs = decompile(compile(circ, CAL, grid=0.0), CAL)
    assert len(segs) == len(circ.gates)
    for (dur, o, dl), g in zip(segs, circ.gates):
        assert dur == pytest.approx(g.duration, rel=1e-9)
        rate = o if g.kind != "delta" else dl
        assert rate == pytest.approx(g.rate, rel=1e-9, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(t=st.floats(250e-9, 2e-6), label=st.sampled_from(FAMILIES))
def test_alignment_phase_error_bounded(t, label):
    circ = build_dd_circuit(SequenceKind.parse(label), t, -25.0, CAL)
    s = compile(circ, CAL)
    for p in s.channels["q1_z"] + s.channels["coupler_z"]:
        assert abs(p.start / CAL.grid - round(p.start / CAL.grid)) < 1e-6
    bound = 2 * np.pi * max(abs(g.rate) for g in circ.gates) * 1e6 * CAL.grid
    assert s.max_phase_error <= bound + 1e-12


@pytest.mark.parametrize("label", FAMILIES)
def test_compiled_matches_ideal(label):
    circ = build_dd_circuit(SequenceKind.parse(label), 400e-9, -25.0, CAL)
    for grid in (0.0, None):
        u = schedule_unitary(compile(circ, CAL, grid=grid), CAL)
        assert phase_free_distance(u, ideal_unitary(circ)) < 1e-6


def test_out_of_range_rate():
    circ = build_dd_circuit(SequenceKind("Y", 1), 400e-9, -500.0, CAL)
    with pytest.raises(CalibrationError):
        compile(circ, CAL)


def test_schedule_overlap_detected(tmp_path):
    s = PulseSchedule({"q1_z": [Pulse(0, 10e-9, 1.0), Pulse(5e-9, 10e-9, 1.0)], "coupler_z": []}, 0.5e-9, 20e-9)
    with pytest.raises(ScheduleError):
        s.check()
    ok = PulseSchedule({"q1_z": [Pulse(0, 10e-9, 1.0)], "coupler_z": []}, 0.5e-9, 20e-9)
    paths = ok.to_csv(tmp_path / "s")
    assert paths[0].read_text().splitlines() == ["t_start_ns,width_ns,amplitude", "0.000000,10.000000,1.000000000e+00"]


def test_transfer_map_checks():
    with pytest.raises(ValueError):
        TransferMap(slope=0.0)
    with pytest.raises(ValueError):
        TransferMap(kind="coupler", slope=1e-3, device=CFG.device, amp_range=(-300.0, 300.0))
    lin = TransferMap(slope=2.0, offset=1.0, amp_range=(0.0, 10.0))
    assert lin.inverse(lin(3.3)) == pytest.approx(3.3)
    with pytest.raises(CalibrationError):
        lin.inverse(100.0)


@settings(max_examples=20, deadline=None)
@given(s=st.floats(0.05, 5.0))
def test_omega_calibration_linear_oracle(s):
    cal = Calibration(amp_to_omega=TransferMap(slope=-s, amp_range=(0.0, 1e4)))
    expected = np.pi / (2 * np.pi * s * 1e6 * 20e-9)
    sweep = expected * np.linspace(0.9, 1.1, 21)
    amp = calibrate_pi_amplitude("OmegaPi", cal, sweep, 10)
    assert amp == pytest.approx(expected, rel=1e-6)
    p = pulse_train_population("OmegaPi", amp, cal, 10)
    assert all(p >= pulse_train_population("OmegaPi", a, cal, 10) - 1e-12 for a in sweep)


@settings(max_examples=20, deadline=None)
@given(s=st.floats(0.5, 5.0))
def test_ypi_calibration_linear_oracle(s):
    cal = Calibration(amp_to_delta=TransferMap(slope=s, amp_range=(0.0, 1e4)))
    expected = np.pi / (2 * np.pi * s * 1e6 * 6e-9)
    amp = calibrate_pi_amplitude("YPi", cal, expected * np.linspace(0.9, 1.1, 21), 10)
    assert amp == pytest.approx(expected, rel=1e-6)


def test_device_calibration_amplitudes():
    om = calibrate_pi_amplitude("OmegaPi", CAL, np.arange(200.0, 261.0), 10)
    de = calibrate_pi_amplitude("YPi", CAL, np.arange(60.0, 76.25, 0.25), 10)
    assert om == pytest.approx(229.0, abs=0.5)
    assert de == pytest.approx(68.0, abs=0.5)


def test_calibration_errors():
    with pytest.raises(CalibrationError):
        calibrate_pi_amplitude("OmegaPi", CAL, np.arange(200.0, 261.0), 9)
    with pytest.raises(CalibrationError):
        calibrate_pi_amplitude("OmegaPi", CAL, np.arange(230.0, 240.0), 10)
