"""Amplitude extraction, decay and relaxation fits, and the Gamma_phi slope."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

TWO_PI = 2 * np.pi
GAMMA_BAR_1 = 0.18e6   # s^-1, fixed exponential envelope
SENS_THRESHOLD = 1.5   # MHz/mPhi0


class FitError(RuntimeError):
    pass


def _txy(trace, y=None, sigma=None):
    """(t, y, sigma) from a trace-like object or explicit arrays."""
    if y is None:
        t = np.asarray(trace.t, dtype=float)
        if hasattr(trace, "amplitude"):
            y = trace.amplitude
            sigma = getattr(trace, "stderr", None) if sigma is None else sigma
        elif hasattr(trace, "contrast"):
            y = trace.contrast
        else:
            raise TypeError("trace needs t and amplitude (or contrast)")
    else:
        t = np.asarray(trace, dtype=float)
    y = np.asarray(y, dtype=float)
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != y.shape or not np.all(sigma > 0):
            sigma = None
    if t.shape != y.shape:
        raise ValueError("t and y must have the same shape")
    return t, y, sigma


# ------------------------------------------------------------ amplitude

@dataclass
class AmplitudeFit:
    amplitude: float
    stderr: float
    phase: float
    offset: float


def extract_amplitude(samples, rate: float | None = None, y=None) -> AmplitudeFit:
    """Least-squares sinusoid at the known ``rate`` (MHz) with free amplitude,
    phase and offset.  Accepts tomography samples (their 1 - 2 P01 contrast)
    or explicit ``(t, y)``."""
    if y is None:
        t = np.asarray(samples.t, dtype=float)
        y = samples.contrast
        rate = samples.rate if rate is None else rate
    else:
        t = np.asarray(samples, dtype=float)
    y = np.asarray(y, dtype=float)
    if rate is None or rate == 0:
        raise ValueError("a non-zero rotation rate is required")
    if t.size < 3:
        raise FitError("need at least 3 samples")
    span = t.max() - t.min()
    f = abs(rate) * 1e6
    if span > 0 and (t.size - 1) / (span * f) < 8 - 1e-9:
        raise ValueError("need >= 8 samples per oscillation period")
    x = TWO_PI * rate * 1e6 * t
    X = np.column_stack([np.cos(x), np.sin(x), np.ones_like(x)])
    if np.linalg.matrix_rank(X) < 3:
        raise FitError("rank-deficient sinusoid fit (time grid too short or aliased)")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    a, b, c = coef
    amp = float(np.hypot(a, b))
    dof = t.size - 3
    rss = float(np.sum((X @ coef - y) ** 2))
    if dof > 0:
        cov = rss / dof * np.linalg.inv(X.T @ X)
        if amp > 0:
            g = np.array([a, b]) / amp
            err = float(np.sqrt(max(0.0, g @ cov[:2, :2] @ g)))
        else:
            err = float(np.sqrt(0.5 * (cov[0, 0] + cov[1, 1])))
    else:
        err = 0.0
    return AmplitudeFit(amp, err, float(np.arctan2(-b, a)), float(c))


# ---------------------------------------------------------------- decays

@dataclass
class DecayFit:
    a: float
    b: float
    gamma_bar_1: float
    gamma_phi: float
    gamma_phi_err: float
    covariance: np.ndarray     # over (a, b, gamma_phi^2)
    residual_norm: float
    r2: float

    def model(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * np.exp(-self.gamma_bar_1 * t - (self.gamma_phi * t) ** 2) + self.b


def _covariance(res, sigma, n, p) -> np.ndarray:
    J = res.jac
    jtj_inv = np.linalg.pinv(J.T @ J)
    if sigma is None:
        dof = max(1, n - p)
        return jtj_inv * (2 * res.cost) / dof
    return jtj_inv


def _r2(y, yfit, w) -> float:
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    ss_res = np.sum(w * (y - yfit) ** 2)
    return float(1 - ss_res / ss_tot) if ss_tot > 0 else 1.0


def _linear_ab(basis, y, w):
    X = np.column_stack([basis, np.ones_like(basis)]) * w[:, None]
    coef, *_ = np.linalg.lstsq(X, y * w, rcond=None)
    return coef


def fit_decay(trace, gamma_bar_1_fixed: float = GAMMA_BAR_1, y=None, sigma=None,
              n_starts: int = 8, weighted: bool = False) -> DecayFit:
    """Fit A exp(-Gbar1 t - (Gphi t)^2) + B with Gbar1 held fixed.

    Unweighted by default: ensemble error bars shrink towards t = 0, where a
    1/f dephasing exponent is least like t^2, and inverse-variance weights
    would pin the fit there.  ``weighted=True`` uses the trace errors.

    Internally fits u = Gphi^2 (well conditioned at Gphi = 0) with a damped
    Levenberg-Marquardt solver from ``n_starts`` log-spaced Gphi guesses; the
    lowest residual wins, ties going to the lowest Gphi.
    """
    t, y, sigma = _txy(trace, y, sigma)
    if not weighted:
        sigma = None
    if t.size < 6:
        raise FitError("fit_decay needs at least 6 time points")
    tmax = float(np.max(t))
    if tmax <= 0:
        raise FitError("time grid must extend beyond 0")
    w = 1.0 / sigma if sigma is not None else np.ones_like(y)
    g1 = gamma_bar_1_fixed
    ts = t * 1e6   # work in microseconds

    def resid(q):
        a, b, u = q
        return (a * np.exp(-g1 * t - u * ts ** 2) + b - y) * w

    def jac(q):
        a, b, u = q
        e = np.exp(-g1 * t - u * ts ** 2)
        return np.column_stack([e, np.ones_like(e), -a * ts ** 2 * e]) * w[:, None]

    starts = np.geomspace(0.03, 30.0, n_starts) / (tmax * 1e6)
    best = None
    for g0 in starts:
        u0 = g0 ** 2
        a0, b0 = _linear_ab(np.exp(-g1 * t - u0 * ts ** 2), y, w)
        try:
            # trial steps with large negative u overflow harmlessly; LM rejects them
            with np.errstate(over="ignore", invalid="ignore"):
                res = least_squares(resid, [a0, b0, u0], jac=jac, method="lm", xtol=1e-15, ftol=1e-15,
                                    gtol=1e-15, max_nfev=4000)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if not np.all(np.isfinite(res.x)):
            continue
        gphi = np.sqrt(max(res.x[2], 0.0))
        key = (round(res.cost, 14) if res.cost > 0 else 0.0, gphi)
        if best is None or key < best[0]:
            best = (key, res)
    if best is None:
        raise FitError(f"fit_decay did not converge from any of {n_starts} starts (t_max = {tmax:.3e} s)")
    res = best[1]
    a, b, u = res.x
    cov = _covariance(res, sigma, t.size, 3)
    var_u = max(cov[2, 2], 0.0)
    gphi_us = np.sqrt(max(u, 0.0))
    su = np.sqrt(var_u)
    err_us = su / (2 * gphi_us) if gphi_us > 0 and gphi_us ** 2 > su else np.sqrt(su)
    scale = np.diag([1.0, 1.0, 1e12])   # u from us^-2 to s^-2
    yfit = a * np.exp(-g1 * t - u * ts ** 2) + b
    return DecayFit(float(a), float(b), g1, float(gphi_us * 1e6), float(err_us * 1e6),
                    scale @ cov @ scale, float(np.sqrt(2 * res.cost)), _r2(y, yfit, w ** 2))


@dataclass
class RelaxationFit:
    gamma: float
    gamma_err: float
    a: float
    b: float
    residual_norm: float


def fit_relaxation(trace, y=None, sigma=None, n_starts: int = 8) -> RelaxationFit:
    """Single-exponential fit A exp(-Gamma t) + B."""
    t, y, sigma = _txy(trace, y, sigma)
    if t.size < 4:
        raise FitError("fit_relaxation needs at least 4 time points")
    tmax = float(np.max(t))
    w = 1.0 / sigma if sigma is not None else np.ones_like(y)
    ts = t * 1e6

    def resid(q):
        a, b, g = q
        return (a * np.exp(-g * ts) + b - y) * w

    def jac(q):
        a, b, g = q
        e = np.exp(-g * ts)
        return np.column_stack([e, np.ones_like(e), -a * ts * e]) * w[:, None]

    best = None
    for g0 in np.geomspace(0.01, 30.0, n_starts) / (tmax * 1e6):
        a0, b0 = _linear_ab(np.exp(-g0 * ts), y, w)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                res = least_squares(resid, [a0, b0, g0], jac=jac, method="lm", xtol=1e-15, ftol=1e-15,
                                    gtol=1e-15, max_nfev=4000)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if not np.all(np.isfinite(res.x)):
            continue
        key = (round(res.cost, 14) if res.cost > 0 else 0.0, abs(res.x[2]))
        if best is None or key < best[0]:
            best = (key, res)
    if best is None:
        raise FitError("fit_relaxation did not converge")
    res = best[1]
    cov = _covariance(res, sigma, t.size, 3)
    a, b, g = res.x
    return RelaxationFit(float(g * 1e6), float(np.sqrt(max(cov[2, 2], 0.0)) * 1e6), float(a), float(b),
                         float(np.sqrt(2 * res.cost)))


# ----------------------------------------------------------------- slope

@dataclass
class SlopeFit:
    slope: float            # s^-1 per (MHz/mPhi0)
    intercept: float        # s^-1
    slope_err: float
    intercept_err: float
    r2: float
    n_used: int
    threshold: float


def slope_vs_sensitivity(points: Sequence, threshold: float = SENS_THRESHOLD, weighted: bool = True) -> SlopeFit:
    """Weighted straight line Gamma_phi = slope |s| + intercept through the
    points with |s| >= threshold.  Points are (s, gamma) or (s, gamma, err);
    weights are 1/err^2 when errors are given and ``weighted``."""
    arr = [tuple(p) for p in points]
    s = np.abs(np.array([p[0] for p in arr], dtype=float))
    g = np.array([p[1] for p in arr], dtype=float)
    err = np.array([p[2] if len(p) > 2 else np.nan for p in arr], dtype=float)
    keep = s >= threshold
    if keep.sum() < 3:
        raise FitError(f"need >= 3 points with sensitivity >= {threshold} MHz/mPhi0, got {int(keep.sum())}")
    s, g, err = s[keep], g[keep], err[keep]
    if weighted and np.all(np.isfinite(err)) and np.all(err > 0):
        w = 1.0 / err ** 2
        absolute = True
    else:
        w = np.ones_like(s)
        absolute = False
    X = np.column_stack([s, np.ones_like(s)])
    W = X * w[:, None]
    A = X.T @ W
    coef = np.linalg.solve(A, W.T @ g)
    fit = X @ coef
    cov = np.linalg.inv(A)
    if not absolute:
        dof = max(1, s.size - 2)
        cov = cov * np.sum((g - fit) ** 2) / dof
    return SlopeFit(float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])),
                    _r2(g, fit, w), int(s.size), threshold)


def write_fit_results(path, rows: Sequence[dict]) -> None:
    """Rows with keys sequence, n, sens, gamma_phi, gamma_phi_err, r2."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "n", "sens_mhz_per_mphi0", "gamma_phi_per_s", "gamma_phi_err", "r2"])
        for r in rows:
            w.writerow([r["sequence"], int(r["n"]), f"{r['sens']:.9g}", f"{r['gamma_phi']:.9e}",
                        f"{r['gamma_phi_err']:.9e}", f"{r['r2']:.9f}"])
