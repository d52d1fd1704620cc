"""Filter functions of periodic DD sequences and the Gaussian dephasing rate.

Conventions
-----------
* A sequence with ``N`` free-evolution sections over total time ``t`` flips the
  sign function at ``k t / N`` for ``k = 1 .. N-1`` (``N = 1`` is Ramsey,
  ``N = 2`` the single-pulse echo).  The XY family appends one terminal pulse
  at ``t`` so the pulse group closes to the identity; a pulse at ``t`` does not
  change the sign function on ``[0, t]``.
* ``F(omega, t) = |f~(omega)|^2 / t^2`` with ``f~ = int_0^t f(t') e^{-i omega t'} dt'``.
* Noise PSDs are one-sided (see :mod:`gframe_dd.noise`), hence
  ``chi(t) = 1/2 t^2 (dOmega/dPhi)^2 int S(omega) F(omega, tau*) d omega / 2 pi``.
* Sensitivities are in MHz per milli-flux-quantum; internally they are
  converted to rad/s per flux quantum.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .noise import NoisePsdModel

TWO_PI = 2 * np.pi
# MHz/mPhi0 -> (rad/s)/Phi0
SENS_TO_RAD = TWO_PI * 1e6 * 1e3


class FilterPoleError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


XY8_ORDER = "YXYXXYXY"


@dataclass(frozen=True)
class SequenceKind:
    family: str   # "X", "Y" or "XY"
    n_periods: int

    def __post_init__(self):
        if self.family not in ("X", "Y", "XY"):
            raise ValueError(f"unknown sequence family {self.family!r}")
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")
        if self.family == "XY" and self.n_periods % 2:
            raise ValueError("XY family needs an even number of periods")

    @classmethod
    def parse(cls, label: str) -> "SequenceKind":
        fam, _, n = label.partition("-")
        return cls(fam.upper(), int(n))

    @property
    def label(self) -> str:
        return f"{self.family}-{self.n_periods}"

    @property
    def flip_fractions(self) -> np.ndarray:
        n = self.n_periods
        return np.arange(1, n) / n

    @property
    def pulse_fractions(self) -> np.ndarray:
        n = self.n_periods
        if self.family == "XY":
            return np.arange(1, n + 1) / n
        return self.flip_fractions

    @property
    def pulse_axes(self) -> str:
        n_pulses = len(self.pulse_fractions)
        if self.family != "XY":
            return self.family * n_pulses
        if n_pulses % 8 == 0:
            return XY8_ORDER * (n_pulses // 8)
        return "YX" * (n_pulses // 2)

    def sign_function(self, t: float) -> "SignFunction":
        return SignFunction(tuple(self.flip_fractions * t), t)


@dataclass(frozen=True)
class SignFunction:
    """+1 on [0, first switch), flipping at every switching time, up to ``t``."""

    switches: tuple[float, ...]
    t: float

    def __post_init__(self):
        s = np.asarray(self.switches, dtype=float)
        if self.t <= 0:
            raise ValueError("t must be positive")
        if s.size and (np.any(np.diff(s) <= 0) or s[0] <= 0 or s[-1] >= self.t):
            raise ValueError("switching times must be increasing and inside (0, t)")

    def segments(self):
        edges = np.concatenate(([0.0], np.asarray(self.switches, dtype=float), [self.t]))
        signs = (-1.0) ** np.arange(edges.size - 1)
        return edges[:-1], edges[1:], signs

    def __call__(self, tp):
        tp = np.asarray(tp, dtype=float)
        return (-1.0) ** np.searchsorted(np.asarray(self.switches), tp, side="right")


def filter_numeric(sign_fn: SignFunction, omega, t: float | None = None):
    """|f~|^2 / t^2 from exact per-segment integrals."""
    if t is not None and not np.isclose(t, sign_fn.t, rtol=1e-12, atol=0):
        raise ValueError("t does not match the sign function's duration")
    t = sign_fn.t
    w = np.asarray(omega, dtype=float)
    a, b, s = sign_fn.segments()
    length = b - a
    centre = 0.5 * (a + b)
    # int_a^b e^{-iwt} dt = (b-a) sinc(w(b-a)/2pi) e^{-iw(a+b)/2}
    wf = w[..., None]
    terms = s * length * np.sinc(wf * length / TWO_PI) * np.exp(-1j * wf * centre)
    ft = terms.sum(axis=-1)
    out = (ft.real ** 2 + ft.imag ** 2) / t ** 2
    return float(out) if np.ndim(out) == 0 else out


def filter_closed_form(kind: SequenceKind, omega, t: float):
    """Closed-form filter function of periodic sequences.

    N = 1: (4/(w t)^2) sin^2(w t/2); N = 2: (16/(w t)^2) sin^4(w t/4);
    even N: (4/(w t)^2) tan^2(w t/2N) sin^2(w t/2); odd N > 1 replaces the last
    sine by a cosine.  Raises FilterPoleError within 1e-9 of a tan pole.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("omega must be >= 0")
    n = kind.n_periods
    if n == 1:
        out = np.sinc(w * t / TWO_PI) ** 2
    elif n == 2:
        x = w * t / 4
        out = np.sinc(x / np.pi) ** 2 * np.sin(x) ** 2
    else:
        y = w * t / (2 * n)
        m = np.round(y / np.pi - 0.5)
        if np.any(np.abs(y - np.pi * (m + 0.5)) < 1e-9):
            raise FilterPoleError(f"omega*t/(2N) within 1e-9 of a tan pole (N={n})")
        with np.errstate(invalid="ignore", divide="ignore"):
            tan_over = np.where(y == 0, 1.0, np.tan(y) / np.where(y == 0, 1.0, y))
        last = np.sin(n * y) if n % 2 == 0 else np.cos(n * y)
        out = tan_over ** 2 * last ** 2 / n ** 2
    return float(out) if np.ndim(out) == 0 else out


# -- quadrature -------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)


# oscillation periods of F resolved explicitly before switching to the cycle average
_OSC_RESOLVED = 2000


def _panel_edges(model: NoisePsdModel, t: float, w_tail: float) -> np.ndarray:
    lo, hi = model.omega_min, model.omega_max
    edges = [np.geomspace(lo, hi, int(np.ceil(20 * np.log10(hi / lo))) + 1)]
    # resolve the filter's oscillations (period ~ 2 pi / t in omega) below the tail
    w_top = min(hi, w_tail)
    if w_top * t > 8 * np.pi:
        edges.append(np.arange(8 * np.pi / t, w_top, np.pi / t))
    for lz in (model.lorentz_low, model.lorentz_high):
        if lz.amplitude > 0:
            edges.append(lz.center + lz.width * np.linspace(-10, 10, 41))
    edges.append([w_tail])
    e = np.unique(np.concatenate(edges))
    return e[(e >= lo) & (e <= hi)]


def _gl(f, a, b, x, w):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = mid[:, None] + half[:, None] * x[None, :]
    return (f(nodes) * w[None, :]).sum(axis=1) * half


def filtered_noise_integral(model: NoisePsdModel, kind: SequenceKind | SignFunction, t: float,
                            rtol: float = 1e-6, max_rounds: int = 40) -> float:
    """int_{w_min}^{w_max} S(w) F(w, t) dw / 2pi by adaptive Gauss-Legendre panels.

    Beyond ``2000 * 2pi / t`` the filter is replaced by its cycle average
    ``(4 n_switch + 2) / (w t)^2``; that tail carries a relative weight of order
    ``1e-4`` or less of the integral.
    """
    sign_fn = kind.sign_function(t) if isinstance(kind, SequenceKind) else kind
    t = sign_fn.t
    n_sw = len(sign_fn.switches)
    w_tail = _OSC_RESOLVED * TWO_PI / t

    def integrand(w):
        out = np.empty_like(w)
        near = w <= w_tail
        out[near] = filter_numeric(sign_fn, w[near])
        wt = w[~near] * t
        out[~near] = (4 * n_sw + 2) / wt / wt
        return model._eval(w) * out

    edges = _panel_edges(model, t, w_tail)
    a, b = edges[:-1], edges[1:]
    for _ in range(max_rounds):
        fine = _gl(integrand, a, b, _GL_X, _GL_W)
        coarse = _gl(integrand, a, b, _GL8_X, _GL8_W)
        total = fine.sum()
        if total == 0:
            return 0.0
        err = np.abs(fine - coarse)
        if err.sum() <= rtol * abs(total):
            return total / TWO_PI
        # split the panels holding the bulk of the error estimate
        order = np.argsort(err)[::-1]
        cum = np.cumsum(err[order])
        n_split = int(np.searchsorted(cum, 0.9 * cum[-1])) + 1
        bad = np.zeros(a.size, dtype=bool)
        bad[order[:n_split]] = True
        mid = 0.5 * (a[bad] + b[bad])
        a = np.concatenate([a[~bad], a[bad], mid])
        b = np.concatenate([b[~bad], mid, b[bad]])
        idx = np.argsort(a, kind="stable")
        a, b = a[idx], b[idx]
    raise QuadratureError(f"quadrature did not converge: error estimate "
                          f"{err.sum() / abs(total):.2e} of the integral after {max_rounds} rounds")


def coherence_integral(model: NoisePsdModel, sensitivity: float, kind: SequenceKind, t: float,
                       tau_star: float | None = None) -> float:
    """chi(t) with the filter evaluated at the constant duration ``tau_star``."""
    if sensitivity < 0:
        raise ValueError("sensitivity must be >= 0")
    tau = t if tau_star is None else tau_star
    if tau <= 0:
        raise ValueError("tau_star must be positive")
    if t == 0 or sensitivity == 0:
        return 0.0
    s = sensitivity * SENS_TO_RAD
    return 0.5 * t ** 2 * s ** 2 * filtered_noise_integral(model, kind, tau)


@dataclass(frozen=True)
class DephasingPrediction:
    gamma_phi: float       # 1/s
    a_of_n: float          # 1/s per (MHz/mPhi0)
    tau_star: float        # s
    converged: bool
    iterations: int = 0


def _rate_at(model, kind, tau, sens):
    return sens * SENS_TO_RAD * np.sqrt(0.5 * filtered_noise_integral(model, kind, tau))


def solve_tau_star(model: NoisePsdModel, sensitivity: float, kind: SequenceKind,
                   tau0: float = 1e-6, rtol: float = 1e-4, max_iter: int = 50) -> tuple[float, bool, int]:
    """Fixed point tau* = 1/Gamma(tau*), i.e. chi(tau*) = 1."""
    tau = tau0
    best = tau
    for i in range(1, max_iter + 1):
        gamma = _rate_at(model, kind, tau, sensitivity)
        if gamma <= 0:
            return np.inf, False, i
        new = 1.0 / gamma
        best = new
        if abs(new - tau) <= rtol * abs(new):
            return new, True, i
        tau = new
    return best, False, max_iter


def dephasing_rate(model: NoisePsdModel, sensitivity: float, kind: SequenceKind, *,
                   reference_sensitivity: float | None = 5.0, tau_star: float | None = None,
                   tau0: float = 1e-6) -> DephasingPrediction:
    """Gaussian pure-dephasing rate Gamma = |dOmega/dPhi| * A(N).

    tau* is the fixed point chi(tau*) = 1 evaluated at ``reference_sensitivity``
    (``None``: at ``sensitivity`` itself) unless given explicitly.  With a
    shared tau*, Gamma is exactly linear in the sensitivity.
    """
    sensitivity = abs(sensitivity)
    converged, iters = True, 0
    if tau_star is None:
        ref = sensitivity if reference_sensitivity is None else abs(reference_sensitivity)
        if ref == 0:
            return DephasingPrediction(0.0, 0.0, np.inf, True, 0)
        tau_star, converged, iters = solve_tau_star(model, ref, kind, tau0=tau0)
        if not np.isfinite(tau_star):
            return DephasingPrediction(0.0, 0.0, np.inf, converged, iters)
    a_of_n = _rate_at(model, kind, tau_star, 1.0)
    return DephasingPrediction(sensitivity * a_of_n, a_of_n, tau_star, converged, iters)


def sequence_coefficient(model: NoisePsdModel, kind: SequenceKind, *,
                         reference_sensitivity: float | None = 5.0, tau_star: float | None = None) -> float:
    """A(N) in 1/s per (MHz/mPhi0)."""
    return dephasing_rate(model, 1.0, kind, reference_sensitivity=reference_sensitivity,
                          tau_star=tau_star).a_of_n


def write_a_of_n_csv(path, rows: Sequence[tuple[int, float]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "a_of_n_hz_per_mhz_per_mphi0"])
        for n, a in rows:
            w.writerow([n, f"{a:.10e}"])


def write_rate_curve_csv(path, rows: Sequence[tuple[float, float]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sens_mhz_per_mphi0", "gamma_phi_per_s"])
        for s, g in rows:
            w.writerow([f"{s:.10e}", f"{g:.10e}"])
