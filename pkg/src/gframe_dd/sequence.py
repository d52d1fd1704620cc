"""g-frame gates, DD circuits, pulse compilation and pulse-train calibration.

Gate angles follow ``angle = 2 pi rate duration`` with rates in MHz; Omega
rotations (and free evolution) act about z, Delta rotations about x.  A Y_pi
is always the composite ``[OmegaRot, DeltaRot]`` (z first, then x).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import su2
from .device import Device
from .filterfn import SequenceKind

TWO_PI = 2 * np.pi
CHANNELS = ("q1_z", "coupler_z")


class ScheduleError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


# --------------------------------------------------------------------- gates

@dataclass(frozen=True)
class GFrameGate:
    kind: str          # "omega", "delta" or "free"
    rate: float        # MHz
    duration: float    # s
    tag: str = ""      # "Y" for the halves of a composite Y_pi, "X" for a Delta_pi

    def __post_init__(self):
        if self.kind not in ("omega", "delta", "free"):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("gate duration must be > 0")

    @property
    def angle(self) -> float:
        return TWO_PI * self.rate * 1e6 * self.duration

    @property
    def axis(self) -> str:
        return "x" if self.kind == "delta" else "z"

    def unitary(self) -> np.ndarray:
        return su2.rotation(self.angle, self.axis)


def pi_residual(rate_mhz: float, width_s: float) -> float:
    """Relative deviation of |2 pi rate width| from pi."""
    return abs(2 * rate_mhz * 1e6 * width_s) - 1.0


# ----------------------------------------------------------- calibration maps

@dataclass(frozen=True)
class TransferMap:
    """Control amplitude -> rate (MHz) for one channel.

    ``linear``: rate = offset + slope * amp.  ``coupler``: the swap rate at
    coupler flux ``phi0 + slope * amp``.  ``qubit``: the Q1-Q2 detuning (MHz)
    at Q1 flux ``phi0 + slope * amp``.  ``slope`` is in MHz or flux quanta per
    amplitude unit.
    """

    kind: str = "linear"
    slope: float = 1.0
    offset: float = 0.0
    amp_range: tuple[float, float] = (-1e3, 1e3)
    device: Device | None = None
    phi0: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "coupler", "qubit"):
            raise ValueError(f"unknown transfer map kind {self.kind!r}")
        if self.kind != "linear":
            if self.device is None:
                raise ValueError(f"{self.kind} transfer map needs a device")
            if self.phi0 is None:
                dev = self.device
                phi0 = dev.params.phic_idle if self.kind == "coupler" else dev.q1_bias_for_detuning(0.0)
                object.__setattr__(self, "phi0", float(phi0))
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(bad))

    def violations(self) -> list[str]:
        lo, hi = self.amp_range
        if not lo < hi:
            return ["amp_range must be increasing"]
        if self.slope == 0:
            return ["slope must be non-zero"]
        if self.kind == "linear":
            return []
        try:
            r = self(np.linspace(lo, hi, 401))
        except ValueError as exc:
            return [f"amp_range leaves the flux window: {exc}"]
        d = np.diff(r)
        if not (np.all(d > 0) or np.all(d < 0)):
            return ["transfer map is not monotone over amp_range"]
        return []

    @classmethod
    def anchored(cls, kind: str, device: Device, amp: float, rate: float,
                 amp_range: tuple[float, float] | None = None, phi0: float | None = None) -> "TransferMap":
        """Device-based map whose slope makes ``amp`` produce ``rate`` MHz."""
        probe = cls(kind=kind, slope=1e-6, device=device, phi0=phi0, amp_range=(0.0, 1.0))
        if kind == "coupler":
            phi = device.bias_for_rate(rate)
        else:
            # omega_1 rises towards zero flux on the positive branch
            phi = device.q1_map.solve(device.params.omega2 + rate * 1e-3,
                                      (0.0, probe.phi0) if rate > 0
                                      else (probe.phi0, device.q1_map.window[1]))
        slope = (phi - probe.phi0) / amp
        if amp_range is None:
            amp_range = (0.0, 1.3 * amp) if amp > 0 else (1.3 * amp, 0.0)
        return cls(kind=kind, slope=slope, device=device, phi0=probe.phi0, amp_range=amp_range)

    def __call__(self, amp):
        a = np.asarray(amp, dtype=float)
        if self.kind == "linear":
            out = self.offset + self.slope * a
        elif self.kind == "coupler":
            out = self.device.swap_rate(self.phi0 + self.slope * a)
        else:
            out = 1e3 * (self.device.q1_map.frequency(self.phi0 + self.slope * a) - self.device.params.omega2)
        return float(out) if np.ndim(out) == 0 else out

    def inverse(self, rate: float) -> float:
        lo, hi = self.amp_range
        if self.kind == "linear":
            amp = (rate - self.offset) / self.slope
            if not lo <= amp <= hi:
                raise CalibrationError(f"rate {rate} MHz needs amplitude {amp:g} outside {self.amp_range}")
            return float(amp)
        f_lo, f_hi = self(lo) - rate, self(hi) - rate
        if f_lo == 0:
            return float(lo)
        if f_hi == 0:
            return float(hi)
        if f_lo * f_hi > 0:
            raise CalibrationError(f"rate {rate} MHz outside the calibrated range "
                                   f"[{min(f_lo, f_hi) + rate:g}, {max(f_lo, f_hi) + rate:g}]")
        return float(brentq(lambda a: self(a) - rate, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200))


@dataclass(frozen=True)
class Calibration:
    amp_to_omega: TransferMap = field(default_factory=TransferMap)
    amp_to_delta: TransferMap = field(default_factory=TransferMap)
    crosstalk: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    omega_pi_rate: float = -25.0      # MHz
    omega_pi_width: float = 20e-9     # s
    delta_pi_rate: float = 83.0       # MHz
    delta_pi_width: float = 6e-9      # s
    grid: float = 0.5e-9              # s, 0 disables alignment

    def __post_init__(self):
        m = np.asarray(self.crosstalk, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("crosstalk must be a 2x2 matrix")
        if abs(np.linalg.det(m)) < 1e-12 or np.linalg.cond(m) > 1e12:
            raise ValueError("crosstalk matrix must be invertible")
        if self.grid < 0:
            raise ValueError("grid must be >= 0")

    @property
    def crosstalk_matrix(self) -> np.ndarray:
        return np.asarray(self.crosstalk, dtype=float)

    @property
    def pi_pulse_amps(self) -> dict[str, float]:
        return {"omega": self.amp_to_omega.inverse(self.omega_pi_rate),
                "delta": self.amp_to_delta.inverse(self.delta_pi_rate)}

    def with_pi_amps(self, omega_amp: float | None = None, delta_amp: float | None = None) -> "Calibration":
        out = self
        if omega_amp is not None:
            out = replace(out, omega_pi_rate=float(self.amp_to_omega(omega_amp)))
        if delta_amp is not None:
            out = replace(out, delta_pi_rate=float(self.amp_to_delta(delta_amp)))
        return out

    def omega_pi(self, tag: str = "") -> GFrameGate:
        return GFrameGate("omega", self.omega_pi_rate, self.omega_pi_width, tag)

    def delta_pi(self, tag: str = "X") -> GFrameGate:
        return GFrameGate("delta", self.delta_pi_rate, self.delta_pi_width, tag)

    def y_pi(self) -> list[GFrameGate]:
        return [self.omega_pi("Y"), self.delta_pi("Y")]

    def pulse_width(self, axis: str) -> float:
        if axis == "X":
            return self.delta_pi_width
        if axis == "Y":
            return self.omega_pi_width + self.delta_pi_width
        raise ValueError(f"unknown pulse axis {axis!r}")

    def residuals(self) -> dict[str, float]:
        return {"omega_pi": pi_residual(self.omega_pi_rate, self.omega_pi_width),
                "delta_pi": pi_residual(self.delta_pi_rate, self.delta_pi_width)}

    def emitted(self, intended) -> np.ndarray:
        """Amplitudes to emit so that crosstalk @ emitted == intended."""
        return np.linalg.solve(self.crosstalk_matrix, np.asarray(intended, dtype=float))


# ------------------------------------------------------------------ circuits

@dataclass(frozen=True)
class GFrameCircuit:
    gates: tuple[GFrameGate, ...]
    total_free_time: float
    family: str = ""
    n_periods: int = 0
    pulse_centers: tuple[float, ...] = ()

    @property
    def duration(self) -> float:
        return float(sum(g.duration for g in self.gates))


def build_dd_circuit(kind: SequenceKind, total_free_time: float, omega_free: float,
                     calib: Calibration) -> GFrameCircuit:
    """DD circuit with pulse centres at ``kind.pulse_fractions * total_free_time``.

    Free segments run at ``omega_free`` (MHz) and give up half a pulse width on
    each side of every pulse.  An XY terminal pulse is centred on the end time,
    so that circuit lasts half a pulse width longer than ``total_free_time``.
    """
    if total_free_time <= 0:
        raise ScheduleError("total free time must be positive")
    if omega_free == 0:
        raise ValueError("omega_free must be non-zero")
    t = float(total_free_time)
    centers = kind.pulse_fractions * t
    axes = kind.pulse_axes
    widths = [calib.pulse_width(a) for a in axes]
    gates: list[GFrameGate] = []
    cursor = 0.0
    for c, a, w in zip(centers, axes, widths):
        free = c - 0.5 * w - cursor
        if free < -1e-15:
            raise ScheduleError(f"free time {t:g} s too short to host {kind.label} pulses of width {w:g} s")
        if free > 1e-15:
            gates.append(GFrameGate("free", omega_free, free))
        gates.extend(calib.y_pi() if a == "Y" else [calib.delta_pi()])
        cursor = c + 0.5 * w
    tail = t - cursor
    if tail < -1e-15 and not (kind.family == "XY" and np.isclose(centers[-1], t)):
        raise ScheduleError(f"free time {t:g} s too short for the final pulse")
    if tail > 1e-15:
        gates.append(GFrameGate("free", omega_free, tail))
    return GFrameCircuit(tuple(gates), t, kind.family, kind.n_periods, tuple(centers))


def ideal_unitary(circuit: GFrameCircuit | Sequence[GFrameGate]) -> np.ndarray:
    gates = circuit.gates if isinstance(circuit, GFrameCircuit) else circuit
    u = np.eye(2, dtype=complex)
    for g in gates:
        u = g.unitary() @ u
    return u


# ---------------------------------------------------------------- schedules

@dataclass(frozen=True)
class Pulse:
    start: float   # s
    width: float   # s
    amplitude: float


@dataclass
class PulseSchedule:
    channels: dict[str, list[Pulse]]
    grid: float
    duration: float
    phase_errors: list[float] = field(default_factory=list)   # rad, one per gate
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def max_phase_error(self) -> float:
        return max((abs(e) for e in self.phase_errors), default=0.0)

    def check(self) -> None:
        for name, pulses in self.channels.items():
            for p, q in zip(pulses, pulses[1:]):
                if q.start < p.start + p.width - 1e-15:
                    raise ScheduleError(f"overlapping pulses on {name} at {q.start:g} s")

    def to_csv(self, stem) -> list[Path]:
        """One CSV per channel: ``<stem>_<channel>.csv``."""
        stem = Path(stem)
        paths = []
        for name in CHANNELS:
            path = stem.parent / f"{stem.name}_{name}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t_start_ns", "width_ns", "amplitude"])
                for p in self.channels.get(name, []):
                    w.writerow([f"{p.start * 1e9:.6f}", f"{p.width * 1e9:.6f}", f"{p.amplitude:.9e}"])
            paths.append(path)
        return paths


def _align(x: float, grid: float) -> float:
    return round(x / grid) * grid if grid > 0 else x


def compile_circuit(circuit: GFrameCircuit, calib: Calibration, grid: float | None = None) -> PulseSchedule:
    """Square pulses on ``q1_z`` (Delta) and ``coupler_z`` (Omega and free bias).

    Amplitudes come from the inverse calibration maps, then the crosstalk
    correction; start and end times snap to ``grid`` (default: calib.grid) and
    the resulting rotation-angle error of every gate is recorded.
    """
    grid = calib.grid if grid is None else grid
    channels: dict[str, list[Pulse]] = {c: [] for c in CHANNELS}
    errors = []
    cursor = 0.0
    for g in circuit.gates:
        start, end = cursor, cursor + g.duration
        cursor = end
        a0, a1 = _align(start, grid), _align(end, grid)
        errors.append(TWO_PI * g.rate * 1e6 * ((a1 - a0) - g.duration))
        if a1 - a0 <= 0:
            continue
        if g.kind == "delta":
            intended = (calib.amp_to_delta.inverse(g.rate), 0.0)
        else:
            intended = (0.0, calib.amp_to_omega.inverse(g.rate))
        for name, amp in zip(CHANNELS, calib.emitted(intended)):
            if amp != 0.0:
                channels[name].append(Pulse(a0, a1 - a0, float(amp)))
    sched = PulseSchedule(channels, grid, _align(cursor, grid), errors, calib.residuals())
    sched.check()
    return sched


# keep the short public name used throughout
compile = compile_circuit


def decompile(schedule: PulseSchedule, calib: Calibration) -> list[tuple[float, float, float]]:
    """Piecewise-constant ``(duration_s, omega_mhz, delta_mhz)`` segments of a schedule."""
    edges = {0.0, schedule.duration}
    for pulses in schedule.channels.values():
        for p in pulses:
            edges.update((p.start, p.start + p.width))
    edges = sorted(edges)
    m = calib.crosstalk_matrix
    idle = (float(calib.amp_to_omega(0.0)), float(calib.amp_to_delta(0.0)))
    segs = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo <= 0:
            continue
        mid = 0.5 * (lo + hi)
        emitted = []
        for name in CHANNELS:
            amp = 0.0
            for p in schedule.channels.get(name, []):
                if p.start <= mid < p.start + p.width:
                    amp = p.amplitude
                    break
            emitted.append(amp)
        q1, cp = m @ np.asarray(emitted)
        om = idle[0] if cp == 0 else float(calib.amp_to_omega(cp))
        de = idle[1] if q1 == 0 else float(calib.amp_to_delta(q1))
        segs.append((hi - lo, om, de))
    return segs


def schedule_unitary(schedule: PulseSchedule, calib: Calibration) -> np.ndarray:
    """Noiseless propagator of a compiled schedule."""
    return su2.segments_unitary(decompile(schedule, calib))


# -------------------------------------------------------- pulse-train calib

def _default_simulator(segments, psi0):
    return su2.segments_unitary(segments) @ psi0


def pulse_train_population(kind: str, amp: float, calib: Calibration, n_pulses: int,
                           spacing: float = 2e-9, simulate: Callable | None = None) -> float:
    """Final P(|01>) of the pulse-train protocol at one trial amplitude.

    ``OmegaPi`` starts in |01> and repeats Omega pulses of the calibrated
    width.  ``YPi`` sweeps only the Delta half of the composite.  |01> is an
    eigenstate of any Delta rotation, so the state is first put on the y axis
    by an ideal Omega pi/2 and rotated back before readout.  A train of
    identical composites would cancel Delta errors pairwise (Z_pi conjugates
    X_theta into X_-theta), so the composite order alternates Omega-Delta,
    Delta-Omega: each pair is X_2theta up to sign and the errors accumulate.
    """
    simulate = simulate or _default_simulator
    idle = (float(calib.amp_to_omega(0.0)), float(calib.amp_to_delta(0.0)))
    gap = (spacing, idle[0], idle[1])
    if kind == "OmegaPi":
        pulse = [(calib.omega_pi_width, float(calib.amp_to_omega(amp)), idle[1])]
        pulses = [pulse, pulse]
        pre = post = np.eye(2)
    elif kind == "YPi":
        pulse = [(calib.omega_pi_width, calib.omega_pi_rate, idle[1]),
                 (calib.delta_pi_width, idle[0], float(calib.amp_to_delta(amp)))]
        pulses = [pulse, pulse[::-1]]
        pre, post = su2.rotation(np.pi / 2, "z"), su2.rotation(-np.pi / 2, "z")
    else:
        raise ValueError(f"unknown calibration kind {kind!r}")
    segs = []
    for i in range(n_pulses):
        segs.extend(pulses[i % 2])
        if i < n_pulses - 1:
            segs.append(gap)
    psi = post @ simulate(segs, pre @ su2.KET_01)
    return float(su2.p01(psi))


def calibrate_pi_amplitude(kind: str, calib: Calibration, sweep: Sequence[float], n_pulses: int = 10,
                           simulate: Callable | None = None, spacing: float = 2e-9,
                           refine: bool = True) -> float:
    """Amplitude maximising the final |01> population of a pulse train.

    The sweep is evaluated in ascending order (ties go to the lowest
    amplitude); the winner is refined between its two neighbours.
    """
    if n_pulses < 2 or n_pulses % 2:
        raise CalibrationError("n_pulses must be a positive even number")
    amps = np.sort(np.asarray(sweep, dtype=float))
    if amps.size < 3:
        raise CalibrationError("sweep needs at least 3 amplitudes")
    pop = lambda a: pulse_train_population(kind, a, calib, n_pulses, spacing, simulate)
    p = np.array([pop(a) for a in amps])
    i = int(np.argmax(p))
    if i == 0 or i == amps.size - 1:
        raise CalibrationError(f"no interior maximum in the sweep (best at {amps[i]:g})")
    if not refine:
        return float(amps[i])
    res = minimize_scalar(lambda a: -pop(a), bounds=(amps[i - 1], amps[i + 1]), method="bounded",
                          options={"xatol": 1e-10 * max(1.0, abs(amps[i]))})
    return float(res.x) if -res.fun >= p[i] else float(amps[i])
