"""Time-domain engines: Monte-Carlo g-frame evolution, the two-qubit Lindblad
model and swap chevrons.

Monte-Carlo trajectories evolve SU(2) propagators stored as ``(a, b)`` pairs
(see :mod:`gframe_dd.su2`), vectorised over trajectories.  Noise is piecewise
constant on a ``noise_dt`` grid.  Segments without any x drive only rotate
about z, so their propagator is the exact exponential of the integrated
phase; segments with an x drive are stepped (<= 0.1 ns in pulses, <= 1 ns in
free evolution) with the exact exponential on each step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares

from . import su2
from .device import Device, DeviceParams
from .noise import NoisePsdModel, synthesize_many, psd_eval
from .sequence import GFrameCircuit, PulseSchedule, Calibration, decompile
from .filterfn import SENS_TO_RAD

TWO_PI = 2 * np.pi


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseChannel:
    """Flux-noise model plus the sensitivity (MHz/mPhi0) that maps it to a rate."""

    model: NoisePsdModel
    sensitivity: float

    @property
    def hz_per_flux(self) -> float:
        # MHz/mPhi0 == GHz/Phi0
        return self.sensitivity * 1e9


@dataclass
class EnsembleTrace:
    t: np.ndarray                 # s
    amplitude: np.ndarray         # coherent amplitude, 0..1
    stderr: np.ndarray
    n_traj: int
    seed: object = None
    p01: np.ndarray | None = None
    label: str = ""

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_us", "amplitude", "stderr"])
            for t, a, e in zip(self.t, self.amplitude, self.stderr):
                w.writerow([f"{t * 1e6:.9f}", f"{a:.12e}", f"{e:.12e}"])


# --------------------------------------------------------------- segments

Segment = tuple  # (duration_s, omega_mhz, delta_mhz, is_pulse)


def circuit_segments(program) -> list[Segment]:
    if isinstance(program, GFrameCircuit):
        out = []
        for g in program.gates:
            om = g.rate if g.kind in ("omega", "free") else 0.0
            de = g.rate if g.kind == "delta" else 0.0
            out.append((g.duration, om, de, g.kind != "free"))
        return out
    segs = []
    for s in program:
        s = tuple(s)
        segs.append(s if len(s) == 4 else (s[0], s[1], s[2], s[2] != 0.0))
    return segs


def _split(segs: list[Segment], times: np.ndarray) -> tuple[list[Segment], list[int]]:
    """Split segments at the requested times; returns segments and, per time,
    the number of segments completed when that time is reached."""
    out, marks = [], []
    edges = np.concatenate(([0.0], np.cumsum([s[0] for s in segs])))
    total = edges[-1]
    if np.any(times < 0) or np.any(times > total * (1 + 1e-12)):
        raise ValueError("t_grid must lie within the program duration")
    ti = 0
    order = np.argsort(times, kind="stable")
    st = times[order]
    cursor = 0.0
    for (dur, om, de, pl), lo, hi in zip(segs, edges[:-1], edges[1:]):
        while ti < st.size and st[ti] <= hi + 1e-18:
            cut = st[ti] - cursor
            if cut > 0:
                out.append((cut, om, de, pl))
                cursor = st[ti]
            marks.append(len(out))
            ti += 1
        if hi - cursor > 0:
            out.append((hi - cursor, om, de, pl))
            cursor = hi
    while ti < st.size:
        marks.append(len(out))
        ti += 1
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return out, [marks[i] for i in inv]


# ---------------------------------------------------------------- engine

class _NoiseBlock:
    """Rate fluctuations (Hz) for a block of trajectories on a uniform grid."""

    def __init__(self, rates: np.ndarray | None, dt: float):
        self.dt = dt
        self.r = rates
        if rates is not None:
            c = np.zeros((rates.shape[0], rates.shape[1] + 1))
            np.cumsum(rates * dt, axis=1, out=c[:, 1:])
            self.c = c

    def integral(self, t: float) -> np.ndarray | float:
        """int_0^t rate dt' per trajectory."""
        if self.r is None:
            return 0.0
        n = self.r.shape[1]
        k = min(int(t / self.dt), n - 1)
        return self.c[:, k] + self.r[:, k] * (t - k * self.dt)

    def at(self, t: float) -> np.ndarray | float:
        if self.r is None:
            return 0.0
        k = min(int(t / self.dt), self.r.shape[1] - 1)
        return self.r[:, k]


def _evolve(segs: list[Segment], marks: list[int], n: int, nz: _NoiseBlock, nx: _NoiseBlock,
            max_step_pulse: float, max_step_free: float):
    """Propagators (a, b) at every mark, shape (len(marks), n)."""
    a = np.ones(n, dtype=complex)
    b = np.zeros(n, dtype=complex)
    snaps = {}
    want = sorted(set(marks))
    wi = 0
    while wi < len(want) and want[wi] == 0:
        snaps[0] = (a.copy(), b.copy())
        wi += 1
    t = 0.0
    for idx, (dur, om, de, pulse) in enumerate(segs, start=1):
        t1 = t + dur
        if de == 0.0 and nx.r is None:
            phase = TWO_PI * (om * 1e6 * dur + (nz.integral(t1) - nz.integral(t)))
            a2 = np.exp(-0.5j * phase) * np.ones(n)
            a, b = su2.compose(a2, np.zeros(n, dtype=complex), a, b)
        else:
            h = max_step_pulse if pulse else max_step_free
            # break at noise-grid edges and at most h apart
            k0, k1 = int(np.floor(t / nz.dt)), int(np.ceil(t1 / nz.dt))
            cuts = np.arange(k0, k1 + 1) * nz.dt
            cuts = np.unique(np.concatenate(([t, t1], cuts[(cuts > t) & (cuts < t1)])))
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                m = max(1, int(np.ceil((hi - lo) / h - 1e-9)))
                step = (hi - lo) / m
                mid = 0.5 * (lo + hi)
                pz = TWO_PI * (om * 1e6 + nz.at(mid)) * step * np.ones(n)
                px = TWO_PI * (de * 1e6 + nx.at(mid)) * step * np.ones(n)
                a2, b2 = su2.step_ab(pz, px)
                for _ in range(m):
                    a, b = su2.compose(a2, b2, a, b)
        t = t1
        drift = np.max(np.abs(np.abs(a) ** 2 + np.abs(b) ** 2 - 1.0))
        if drift > 1e-6:
            raise NumericError(f"dynamics.run_stochastic: norm drift {drift:.2e} at t = {t:.3e} s")
        while wi < len(want) and want[wi] == idx:
            snaps[idx] = (a.copy(), b.copy())
            wi += 1
    return np.array([snaps[m][0] for m in marks]), np.array([snaps[m][1] for m in marks])


def _trajectory_seeds(seed, n_traj: int):
    ss = np.random.SeedSequence(seed)
    return [c.spawn(2) for c in ss.spawn(n_traj)]


def _record_length(duration: float, dt: float, factor: int) -> int:
    n = max(16, int(np.ceil(factor * duration / dt)))
    return 1 << (n - 1).bit_length()


def run_states(program, noise_omega: NoiseChannel | None = None, noise_delta: NoiseChannel | None = None,
               n_traj: int = 100, seed=0, t_grid: Sequence[float] = (), *, psi0=su2.KET_01,
               noise_dt: float = 1e-9, record_factor: int = 8, max_step_pulse: float = 1e-10,
               max_step_free: float = 1e-9, chunk: int | None = None) -> np.ndarray:
    """Final g-frame states, shape (len(t_grid), n_traj, 2).

    ``program`` is either a callable ``t -> circuit or segments`` (one run per
    grid time, e.g. a DD sequence of total free time t) or a fixed circuit or
    segment list sampled at the grid times.  Each trajectory draws its own
    dOmega and dDelta realisations from a seed spawned off ``seed``; the same
    realisation is reused at every grid time.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D grid")
    if max_step_pulse > 1e-10 + 1e-21 or max_step_free > 1e-9 + 1e-20:
        raise ValueError("step sizes above 0.1 ns (pulses) / 1 ns (free) are not allowed")
    if callable(program):
        runs = []
        for t in t_grid:
            segs = circuit_segments(program(float(t)))
            runs.append((segs, [len(segs)]))
    else:
        segs = circuit_segments(program)
        segs, marks = _split(segs, t_grid)
        runs = [(segs, marks)]
    duration = max(sum(s[0] for s in r[0]) for r in runs)
    n_rec = _record_length(duration, noise_dt, record_factor)
    if chunk is None:
        chunk = int(np.clip(2 ** 23 // n_rec, 1, 256))
    seeds = _trajectory_seeds(seed, n_traj)
    out = np.empty((t_grid.size, n_traj, 2), dtype=complex)
    psi0 = np.asarray(psi0, dtype=complex)
    for c0 in range(0, n_traj, chunk):
        sl = slice(c0, min(n_traj, c0 + chunk))
        ss = seeds[sl]
        nz = _NoiseBlock(None, noise_dt)
        nx = _NoiseBlock(None, noise_dt)
        if noise_omega is not None:
            nz = _NoiseBlock(synthesize_many(noise_omega.model, noise_dt, n_rec, [s[0] for s in ss])
                             * noise_omega.hz_per_flux, noise_dt)
        if noise_delta is not None:
            nx = _NoiseBlock(synthesize_many(noise_delta.model, noise_dt, n_rec, [s[1] for s in ss])
                             * noise_delta.hz_per_flux, noise_dt)
        m = len(ss)
        row = 0
        for segs, marks in runs:
            a, b = _evolve(segs, marks, m, nz, nx, max_step_pulse, max_step_free)
            for j in range(len(marks)):
                # U psi0 with U = [[a, -b*], [b, a*]]
                out[row, sl, 0] = a[j] * psi0[0] - np.conj(b[j]) * psi0[1]
                out[row, sl, 1] = b[j] * psi0[0] + np.conj(a[j]) * psi0[1]
                row += 1
    return out


def coherent_amplitude(states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Length of the ensemble-mean Bloch vector in the Delta-Y plane, and its
    standard error (std of per-trajectory projections on the mean direction / sqrt n)."""
    v = su2.bloch(states)[..., :2]
    mean = v.mean(axis=-2)
    amp = np.hypot(mean[..., 0], mean[..., 1])
    safe = np.where(amp > 0, amp, 1.0)
    u = mean / safe[..., None]
    proj = np.einsum("...ni,...i->...n", v, u)
    n = states.shape[-2]
    err = proj.std(axis=-1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(amp)
    return amp, err


def run_stochastic(program, noise_omega: NoiseChannel | None = None, noise_delta: NoiseChannel | None = None,
                   n_traj: int = 100, seed=0, t_grid: Sequence[float] = (), *, envelope_rate: float = 0.0,
                   label: str = "", **kw) -> EnsembleTrace:
    """Ensemble coherent-amplitude trace (see :func:`run_states`).

    ``envelope_rate`` (s^-1) multiplies the trace by exp(-rate t), the
    relaxation envelope that the two-level engine does not model.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    states = run_states(program, noise_omega, noise_delta, n_traj, seed, t_grid, **kw)
    amp, err = coherent_amplitude(states)
    env = np.exp(-envelope_rate * t_grid)
    p01 = su2.p01(states).mean(axis=-1)
    return EnsembleTrace(t_grid, amp * env, err * env, n_traj, seed, p01, label)


def dd_program(kind, calib: Calibration, omega_free: float):
    """Callable t -> DD circuit, for :func:`run_stochastic`."""
    from .sequence import build_dd_circuit
    return lambda t: build_dd_circuit(kind, t, omega_free, calib)


def schedule_program(schedule: PulseSchedule, calib: Calibration) -> list[Segment]:
    """Segments of a compiled schedule; segments with a Delta drive are stepped as pulses."""
    return [(d, om, de, de != 0.0) for d, om, de in decompile(schedule, calib)]


# ------------------------------------------------------------- tomography

@dataclass
class TomographySamples:
    t: np.ndarray          # s
    p01: np.ndarray
    rate: float            # MHz
    n_traj: int

    @property
    def contrast(self) -> np.ndarray:
        """1 - 2 P01, whose oscillation amplitude is the coherent amplitude."""
        return 1.0 - 2.0 * self.p01


def tomography_oscillation(states: np.ndarray, rate: float, t_tomo: Sequence[float]) -> TomographySamples:
    """Ensemble P(|01>) while the final states precess at ``rate`` MHz.

    The readout rotation is about the Omega (z) axis: it turns the Delta-Y
    projection into a P01 oscillation of peak-to-peak size equal to the
    projected Bloch length.
    """
    t_tomo = np.asarray(t_tomo, dtype=float)
    states = np.asarray(states, dtype=complex)
    n = states.shape[-2] if states.ndim > 1 else 1
    phase = TWO_PI * rate * 1e6 * t_tomo
    ph = np.exp(-0.5j * phase)
    rot = np.stack([ph[:, None] * states[None, ..., 0], np.conj(ph)[:, None] * states[None, ..., 1]], axis=-1)
    return TomographySamples(t_tomo, su2.p01(rot).mean(axis=-1), rate, n)


# ---------------------------------------------------------------- Lindblad

_SM = np.array([[0, 1], [0, 0]], dtype=complex)   # |0><1|
_SP = _SM.T.copy()
_SZ = np.diag([1.0, -1.0]).astype(complex)
_I2 = np.eye(2, dtype=complex)
BASIS4 = ("00", "01", "10", "11")


@dataclass
class LindbladResult:
    t: np.ndarray        # s
    rho: np.ndarray      # (T, 4, 4)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.einsum("tii->ti", self.rho))

    @property
    def trace(self) -> np.ndarray:
        return np.real(np.einsum("tii->t", self.rho))

    @property
    def gframe_polarization(self) -> np.ndarray:
        """<sigma_z> of the g-frame: P(e1) - P(e2) = 2 Re rho[10, 01]."""
        return 2.0 * np.real(self.rho[:, 2, 1])

    @property
    def gframe_coherence(self) -> np.ndarray:
        """|<sigma_x> + i <sigma_y>| of the g-frame (Bell-state coherence)."""
        p01, p10 = self.rho[:, 1, 1].real, self.rho[:, 2, 2].real
        x = p10 - p01
        y = 2.0 * np.imag(self.rho[:, 2, 1])
        return np.hypot(x, y)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_us", "p00", "p01", "p10", "p11"])
            for t, p in zip(self.t, self.populations):
                w.writerow([f"{t * 1e6:.9f}"] + [f"{x:.12e}" for x in p])


def lindblad_operators(params: DeviceParams, omega: float, gamma_omega: float, detuning: float = 0.0):
    """Hamiltonian and collapse operators in the frame rotating at omega_2,
    with time in microseconds (rates MHz, decay rates s^-1 converted)."""
    h = (TWO_PI * detuning / 2) * np.kron(_SZ, _I2) \
        + (TWO_PI * omega / 2) * (np.kron(_SM, _SP) + np.kron(_SP, _SM))
    cs = [np.sqrt(params.gamma1_q1 * 1e-6) * np.kron(_SM, _I2),
          np.sqrt(params.gamma1_q2 * 1e-6) * np.kron(_I2, _SM),
          np.sqrt(0.5 * gamma_omega * 1e-6) * np.kron(_SZ, _I2)]
    return h, cs


def liouvillian(h: np.ndarray, cs) -> np.ndarray:
    """Superoperator acting on row-major vec(rho)."""
    d = h.shape[0]
    eye = np.eye(d)
    L = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in cs:
        cdc = c.conj().T @ c
        L += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return L


def _check_rho(rho: np.ndarray, what: str) -> None:
    if rho.shape != (4, 4):
        raise ValueError(f"{what} must be 4x4")
    if not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise ValueError(f"{what} must be Hermitian")
    if abs(np.trace(rho).real - 1) > 1e-9:
        raise ValueError(f"{what} must have unit trace")
    if np.linalg.eigvalsh(rho).min() < -1e-9:
        raise ValueError(f"{what} must be positive semidefinite")


def run_lindblad(params: DeviceParams, omega: float, gamma_omega: float, rho0: np.ndarray,
                 t_grid: Sequence[float], *, detuning: float = 0.0, rtol: float = 1e-9,
                 atol: float = 1e-12) -> LindbladResult:
    """Two-qubit master equation (DOP853, adaptive embedded RK pair).

    ``omega`` and ``detuning`` (omega_1 - omega_2) in MHz; ``gamma_omega`` and
    the qubit T1 rates of ``params`` in s^-1; ``t_grid`` in s.
    """
    if gamma_omega < 0 or params.gamma1_q1 < 0 or params.gamma1_q2 < 0:
        raise ValueError("rates must be >= 0")
    rho0 = np.asarray(rho0, dtype=complex)
    _check_rho(rho0, "rho0")
    t_us = np.asarray(t_grid, dtype=float) * 1e6
    if t_us.ndim != 1 or np.any(np.diff(t_us) < 0) or t_us[0] < 0:
        raise ValueError("t_grid must be non-decreasing and >= 0")
    L = liouvillian(*lindblad_operators(params, omega, gamma_omega, detuning))
    # real form: [Re; Im]
    A = np.block([[L.real, -L.imag], [L.imag, L.real]])
    y0 = np.concatenate([rho0.ravel().real, rho0.ravel().imag])
    sol = solve_ivp(lambda _t, y: A @ y, (0.0, float(t_us[-1]) if t_us[-1] > 0 else 1e-12), y0,
                    method="DOP853", t_eval=t_us, rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericError(f"dynamics.run_lindblad: integrator failed: {sol.message}")
    y = sol.y.T
    rho = (y[:, :16] + 1j * y[:, 16:]).reshape(-1, 4, 4)
    res = LindbladResult(t_us * 1e-6, rho)
    drift = np.max(np.abs(res.trace - 1.0))
    if drift > 1e-8:
        raise NumericError(f"dynamics.run_lindblad: trace drift {drift:.2e}")
    return res


def bell_state(sign: int = +1) -> np.ndarray:
    """Density matrix of (|10> + sign |01>)/sqrt2 (g-frame +z for sign=+1)."""
    v = np.zeros(4, dtype=complex)
    v[2], v[1] = 1 / np.sqrt(2), sign / np.sqrt(2)
    return np.outer(v, v.conj())


def basis_state(label: str) -> np.ndarray:
    v = np.zeros(4, dtype=complex)
    v[BASIS4.index(label)] = 1.0
    return np.outer(v, v.conj())


def gamma_omega_from_noise(model: NoisePsdModel, q1_sensitivity: float, omega: float) -> float:
    """Bell-state flip rate from transverse Delta noise at the swap frequency.

    With one-sided PSDs the flip rate of H = dDelta sigma_x / 2 is
    S_Delta(|Omega|) / 4, S_Delta = (dDelta/dPhi_1)^2 S_Phi1.
    """
    s_rad = q1_sensitivity * SENS_TO_RAD
    return 0.25 * s_rad ** 2 * psd_eval(model, TWO_PI * abs(omega) * 1e6)


# ----------------------------------------------------------------- chevron

@dataclass
class Chevron:
    phi_c: np.ndarray     # flux quanta
    tau: np.ndarray       # s
    p01: np.ndarray       # (len(phi_c), len(tau))
    omega: np.ndarray     # model swap rate per bias, MHz

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phi_c_mphi0", "tau_ns", "p01"])
            for phi, row in zip(self.phi_c, self.p01):
                for tau, p in zip(self.tau, row):
                    w.writerow([f"{phi * 1e3:.6f}", f"{tau * 1e9:.6f}", f"{p:.12e}"])


def swap_chevron(device: Device, phi_c: Sequence[float], tau: Sequence[float], detuning: float = 0.0) -> Chevron:
    """Noiseless swap evolution from |01> for each coupler bias."""
    phi_c = np.asarray(phi_c, dtype=float)
    tau = np.asarray(tau, dtype=float)
    omega = np.atleast_1d(device.swap_rate(phi_c)).astype(float)
    pz = TWO_PI * omega[:, None] * 1e6 * tau[None, :]
    px = TWO_PI * detuning * 1e6 * tau[None, :] * np.ones_like(pz)
    a, b = su2.step_ab(pz, px)
    psi0 = su2.KET_01
    psi = np.stack([a * psi0[0] - np.conj(b) * psi0[1], b * psi0[0] + np.conj(a) * psi0[1]], axis=-1)
    return Chevron(phi_c, tau, su2.p01(psi), omega)


def fringe_frequency(tau: np.ndarray, p: np.ndarray, flat_tol: float = 1e-9) -> float:
    """Oscillation frequency (MHz) of a chevron row, 0 for a flat row.

    FFT peak as the starting guess, then a least-squares sinusoid fit.
    """
    tau = np.asarray(tau, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.ptp(p) < flat_tol:
        return 0.0
    dt = tau[1] - tau[0]
    if not np.allclose(np.diff(tau), dt, rtol=1e-9, atol=1e-18):
        raise ValueError("fringe_frequency needs a uniform tau grid")
    n = 8 * tau.size
    spec = np.abs(np.fft.rfft(p - p.mean(), n=n))
    f = np.fft.rfftfreq(n, dt)
    f0 = f[1 + np.argmax(spec[1:])]
    x = tau - tau[0]

    def resid(q):
        c, amp, fr, ph = q
        return c + amp * np.cos(TWO_PI * fr * x + ph) - p

    c0 = p.mean()
    base = np.exp(-2j * np.pi * f0 * x)
    z = 2 * np.mean((p - c0) * base)
    sol = least_squares(resid, [c0, abs(z), f0, np.angle(z)], x_scale=[1, 1, max(f0, 1.0), 1],
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return abs(float(sol.x[2])) * 1e-6
