"""Flux-noise spectra and their time-domain realisations.

PSD convention (one-sided): the variance of the process is
``integral_0^inf S(omega) d omega / (2 pi)``, so S is numerically a density per
Hz evaluated at ``f = omega / 2 pi``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .device import DomainError

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class Lorentzian:
    amplitude: float = 0.0
    center: float = 0.0   # rad/s
    width: float = 1.0    # rad/s

    def __call__(self, omega):
        return self.amplitude * self.width / ((omega - self.center) ** 2 + self.width ** 2)


@dataclass(frozen=True)
class NoisePsdModel:
    """Instrument noise (five features) plus a 1/omega^alpha ground-loop term.

    Amplitudes are in flux-quanta^2 per Hz with omega in rad/s inside the power
    laws.  ``atten_db`` scales the instrument part only; the ground loop is
    generated after the attenuator and is left untouched.
    """

    a1: float = 0.0
    a2: float = 0.0
    lorentz_low: Lorentzian = field(default_factory=Lorentzian)
    lorentz_high: Lorentzian = field(default_factory=Lorentzian)
    a_white: float = 0.0
    a_gl: float = 0.0
    alpha_gl: float = 1.1
    f_min: float = 1e-2
    f_max: float = 1e8
    atten_db: float = 0.0

    def __post_init__(self):
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(bad))

    def violations(self) -> list[str]:
        out = []
        for name in ("a1", "a2", "a_white", "a_gl"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        for name in ("lorentz_low", "lorentz_high"):
            lz = getattr(self, name)
            if lz.amplitude < 0:
                out.append(f"{name}.amplitude must be >= 0")
            if lz.width <= 0:
                out.append(f"{name}.width must be > 0")
        if not 0 < self.f_min < self.f_max:
            out.append("need 0 < f_min < f_max")
        return out

    @property
    def omega_min(self) -> float:
        return TWO_PI * self.f_min

    @property
    def omega_max(self) -> float:
        return TWO_PI * self.f_max

    @property
    def instrument_factor(self) -> float:
        return 10.0 ** (-self.atten_db / 10.0)

    def attenuated(self, atten_db: float) -> "NoisePsdModel":
        return replace(self, atten_db=atten_db)

    def scaled(self, c: float) -> "NoisePsdModel":
        lo, hi = self.lorentz_low, self.lorentz_high
        return replace(self, a1=c * self.a1, a2=c * self.a2, a_white=c * self.a_white, a_gl=c * self.a_gl,
                       lorentz_low=replace(lo, amplitude=c * lo.amplitude),
                       lorentz_high=replace(hi, amplitude=c * hi.amplitude))

    def without_ground_loop(self) -> "NoisePsdModel":
        return replace(self, a_gl=0.0)

    def ground_loop_only(self) -> "NoisePsdModel":
        return replace(self, a1=0.0, a2=0.0, a_white=0.0,
                       lorentz_low=replace(self.lorentz_low, amplitude=0.0),
                       lorentz_high=replace(self.lorentz_high, amplitude=0.0))

    def instrument(self, omega):
        return (self.a1 / omega + self.a2 / omega ** 2 + self.lorentz_low(omega)
                + self.lorentz_high(omega) + self.a_white)

    def ground_loop(self, omega):
        return self.a_gl / omega ** self.alpha_gl

    def _eval(self, omega):
        """Unchecked evaluation; callers guarantee omega > 0."""
        return self.instrument_factor * self.instrument(omega) + self.ground_loop(omega)


def psd_eval(model: NoisePsdModel, omega):
    """S(omega) for in-band omega (rad/s)."""
    w = np.asarray(omega, dtype=float)
    # tiny slack so band edges computed as 2*pi*f survive rounding
    if np.any(w < model.omega_min * (1 - 1e-12)) or np.any(w > model.omega_max * (1 + 1e-12)):
        raise DomainError(f"omega outside [{model.omega_min:g}, {model.omega_max:g}] rad/s")
    out = model._eval(w)
    return float(out) if out.ndim == 0 else out


def band_power(model: NoisePsdModel, f_lo: float, f_hi: float, n_per_decade: int = 64) -> float:
    """Variance carried by the band [f_lo, f_hi] (Hz), clipped to the model bounds."""
    f_lo = max(f_lo, model.f_min)
    f_hi = min(f_hi, model.f_max)
    if f_hi <= f_lo:
        return 0.0
    n = max(16, int(np.ceil(np.log10(f_hi / f_lo) * n_per_decade)))
    edges = np.geomspace(f_lo, f_hi, n + 1)
    return float(np.sum(_bin_powers(model, edges[:-1], edges[1:])))


def _bin_powers(model: NoisePsdModel, lo: np.ndarray, hi: np.ndarray, order: int = 8) -> np.ndarray:
    """Integral of S over each frequency bin [lo, hi] (Hz)."""
    x, w = np.polynomial.legendre.leggauss(order)
    # geometric mapping inside each bin copes with steep power laws
    llo, lhi = np.log(lo), np.log(hi)
    half = 0.5 * (lhi - llo)
    mid = 0.5 * (lhi + llo)
    f = np.exp(mid[:, None] + half[:, None] * x[None, :])
    vals = model._eval(TWO_PI * f) * f
    return (vals * w[None, :]).sum(axis=1) * half


@dataclass
class NoiseTrajectory:
    dt: float
    samples: np.ndarray
    seed: object
    source_model: NoisePsdModel
    static_offset: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "dphi_flux_quanta"])
            for t, x in zip(self.times, self.samples):
                w.writerow([f"{t:.12e}", f"{x:.12e}"])


def _spectral_weights(model: NoisePsdModel, dt: float, n: int) -> tuple[np.ndarray, float]:
    """Variance per rfft bin for a length-n record, and the variance below the
    lowest resolved bin (handled as a static offset)."""
    df = 1.0 / (n * dt)
    k = np.arange(n // 2 + 1)
    edges = np.concatenate(([0.5 * df], (k[1:] + 0.5) * df))
    edges[-1] = min(edges[-1], 0.5 / dt)
    lo = np.clip(edges[:-1], model.f_min, model.f_max)
    hi = np.clip(edges[1:], model.f_min, model.f_max)
    power = np.zeros(k.size)
    ok = hi > lo
    if np.any(ok):
        power[1:][ok] = _bin_powers(model, lo[ok], hi[ok])
    static_var = band_power(model, model.f_min, 0.5 * df)
    return power, static_var


def synthesize_many(model: NoisePsdModel, dt: float, n: int, seeds, *, static: bool = True) -> np.ndarray:
    """Stack of independent trajectories, one row per seed (see synthesize_trajectory)."""
    if n < 2:
        raise ValueError("need n >= 2 samples")
    power, static_var = _spectral_weights(model, dt, n)
    nb = power.size
    coeffs = np.empty((len(seeds), nb), dtype=complex)
    offsets = np.empty(len(seeds))
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        z = rng.standard_normal((2, nb))
        # irfft(c) * n = c_0 + 2 sum_k Re(c_k e^{i w_k t}) (+ Nyquist term):
        # each bin then carries variance `power`
        coeffs[i] = (z[0] + 1j * z[1]) * np.sqrt(power) / 2.0
        if n % 2 == 0:
            coeffs[i, -1] = z[0, -1] * np.sqrt(power[-1])
        offsets[i] = rng.standard_normal() * np.sqrt(static_var) if static else 0.0
    x = np.fft.irfft(coeffs, n=n, axis=1) * n
    return x + offsets[:, None]


def synthesize_trajectory(model: NoisePsdModel, dt: float, n: int, seed, *, static: bool = True) -> NoiseTrajectory:
    """Stationary Gaussian realisation whose one-sided PSD is ``model``.

    Each rfft bin gets a complex Gaussian coefficient carrying the PSD
    integrated over that bin; bins outside [f_min, f_max] are empty.  Spectral
    content between f_min and half the lowest bin is drawn once per realisation
    as a constant offset (``static=True``), so slow noise reaches Ramsey-type
    sequences.
    """
    x = synthesize_many(model, dt, n, [seed], static=static)[0]
    return NoiseTrajectory(dt=dt, samples=x, seed=seed, source_model=model)


def periodogram(traj: NoiseTrajectory, n_segments: int = 64, window: str = "hann"):
    """Welch estimate on non-overlapping segments.

    Returns ``(omega, S_hat)`` with omega in rad/s and S_hat in the module's PSD
    convention, so ``sum(S_hat) * d_omega / 2pi`` approximates the sample variance.
    """
    x = np.asarray(traj.samples if isinstance(traj, NoiseTrajectory) else traj, dtype=float)
    dt = traj.dt
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    nper = x.size // n_segments
    if nper < 8:
        raise ValueError(f"trajectory of {x.size} samples too short for {n_segments} segments of >= 8")
    f, p = signal.welch(x[: nper * n_segments], fs=1.0 / dt, window=window, nperseg=nper,
                        noverlap=0, detrend="constant", scaling="density", return_onesided=True)
    return TWO_PI * f, p


def log_band_average(omega: np.ndarray, values: np.ndarray, n_per_decade: int = 5):
    """Average ``values`` in logarithmic frequency bands; empty bands dropped."""
    pos = omega > 0
    omega, values = omega[pos], values[pos]
    edges = 10 ** np.arange(np.floor(np.log10(omega[0])), np.log10(omega[-1]) + 1e-9, 1 / n_per_decade)
    idx = np.digitize(omega, edges)
    centers, means = [], []
    for i in np.unique(idx):
        m = idx == i
        centers.append(np.exp(np.mean(np.log(omega[m]))))
        means.append(np.mean(values[m]))
    return np.array(centers), np.array(means)
