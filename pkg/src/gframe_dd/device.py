"""Flux-to-frequency maps, the coupler-mediated coupling model and the swap rate.

Units: frequencies in GHz (cycles, i.e. omega/2pi), swap rates in MHz, flux in
flux quanta, sensitivities in MHz per milli-flux-quantum.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq


class DomainError(ValueError):
    """Query outside the operating window of a map."""


class SingularityError(ValueError):
    """Coupler frequency coincides with the qubit frequency."""


@dataclass(frozen=True)
class DeviceParams:
    omega1_max: float = 5.27      # GHz
    omega2: float = 4.62          # GHz
    omegac_max: float = 8.8       # GHz
    alpha1: float = -0.210
    alpha2: float = -0.240
    alphac: float = -0.370
    g1c: float = 0.122
    g2c: float = 0.105
    g12: float = 0.012
    phic_idle: float = 0.17       # flux quanta
    gamma1_q1: float = 1 / 9.68e-6    # 1/s
    gamma1_q2: float = 1 / 12.78e-6

    def violations(self) -> list[str]:
        out = []
        if not self.omega2 < self.omegac_max:
            out.append("omega2 must lie below omegac_max")
        if not self.omega1_max > self.omega2:
            out.append("omega1_max must lie above omega2")
        for name in ("g1c", "g2c", "g12"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be positive")
        for name in ("alpha1", "alpha2", "alphac"):
            if getattr(self, name) >= 0:
                out.append(f"{name} must be negative")
        for name in ("gamma1_q1", "gamma1_q2"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be non-negative")
        return out

    @property
    def gamma_bar_1(self) -> float:
        return 0.5 * (self.gamma1_q1 + self.gamma1_q2)


@dataclass(frozen=True)
class FluxMap:
    """Applied flux -> transition frequency.

    ``kind="analytic"`` is the symmetric SQUID curve
    ``f_max * sqrt(|cos(pi * scale * (phi - offset))|)``; ``scale`` is free so
    that two frequency anchors can be honoured at once.  ``kind="tabulated"``
    interpolates a measured table with a monotone (PCHIP) interpolant.
    """

    kind: str = "analytic"
    f_max: float = 8.8
    scale: float = 1.0
    offset: float = 0.0
    window: tuple[float, float] = (-0.1, 0.205)
    table_phi: tuple[float, ...] = ()
    table_freq: tuple[float, ...] = ()
    _interp: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("analytic", "tabulated"):
            raise ValueError(f"unknown flux map kind {self.kind!r}")
        lo, hi = self.window
        if not lo < hi:
            raise ValueError("flux window must satisfy lo < hi")
        if self.kind == "tabulated":
            phi = np.asarray(self.table_phi, dtype=float)
            f = np.asarray(self.table_freq, dtype=float)
            if phi.size < 2 or phi.size != f.size:
                raise ValueError("tabulated map needs matching phi/freq tables of length >= 2")
            if np.any(np.diff(phi) <= 0):
                raise ValueError("table_phi must be strictly increasing")
            df = np.diff(f)
            if not (np.all(df > 0) or np.all(df < 0)):
                raise ValueError("table_freq must be strictly monotone")
            object.__setattr__(self, "_interp", PchipInterpolator(phi, f, extrapolate=False))
            object.__setattr__(self, "window", (max(lo, phi[0]), min(hi, phi[-1])))
        elif self.scale <= 0 or self.f_max <= 0:
            raise ValueError("analytic map needs positive f_max and scale")

    @classmethod
    def anchored(cls, f_max: float, phi_anchor: float, f_anchor: float,
                 window: tuple[float, float] = (-0.1, 0.205)) -> "FluxMap":
        """Symmetric map through ``f(0) = f_max`` and ``f(phi_anchor) = f_anchor``."""
        ratio = (f_anchor / f_max) ** 2
        if not 0 < ratio < 1:
            raise ValueError("anchor frequency must lie strictly below f_max")
        scale = np.arccos(ratio) / (np.pi * phi_anchor)
        return cls(kind="analytic", f_max=f_max, scale=float(scale), window=window)

    def _check(self, phi):
        lo, hi = self.window
        phi = np.asarray(phi, dtype=float)
        if np.any(phi < lo) or np.any(phi > hi):
            raise DomainError(f"flux {phi} outside operating window [{lo}, {hi}]")
        return phi

    def _raw(self, phi):
        if self.kind == "tabulated":
            return self._interp(phi)
        return self.f_max * np.sqrt(np.abs(np.cos(np.pi * self.scale * (phi - self.offset))))

    def frequency(self, phi):
        out = self._raw(self._check(phi))
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, phi):
        """Analytic d(frequency)/d(phi) in GHz per flux quantum."""
        phi = self._check(phi)
        if self.kind == "tabulated":
            out = self._interp.derivative()(phi)
        else:
            x = np.pi * self.scale * (phi - self.offset)
            c = np.cos(x)
            out = -self.f_max * np.pi * self.scale * np.sign(c) * np.sin(x) / (2 * np.sqrt(np.abs(c)))
        return float(out) if np.ndim(out) == 0 else out

    def solve(self, f_target: float, bracket: tuple[float, float] | None = None) -> float:
        """Flux at which the map reaches ``f_target`` (on the bracket, default the
        non-negative half of the window for the symmetric kind)."""
        lo, hi = bracket if bracket is not None else (max(self.window[0], self.offset), self.window[1])
        return brentq(lambda p: self._raw(p) - f_target, lo, hi, xtol=1e-14, rtol=1e-14)


def coupler_frequency(fmap: FluxMap, phi_c) -> float:
    return fmap.frequency(phi_c)


def qubit_frequency(fmap: FluxMap, phi_1) -> float:
    return fmap.frequency(phi_1)


@dataclass(frozen=True)
class CouplingModel:
    """Net qubit-qubit coupling ``g = G / (omega_q - omega_c) + g12`` (GHz)."""

    g_eff_product: float
    g12_eff: float
    omega_q: float

    @classmethod
    def anchored(cls, omega_c_zero: float, omega_q: float, g12_eff: float = 0.012) -> "CouplingModel":
        # G/(wq - wc0) + g12 = 0
        return cls(g_eff_product=g12_eff * (omega_c_zero - omega_q), g12_eff=g12_eff, omega_q=omega_q)

    @classmethod
    def bare(cls, params: DeviceParams) -> "CouplingModel":
        return cls(g_eff_product=params.g1c * params.g2c, g12_eff=params.g12, omega_q=params.omega2)

    def zero_frequency(self) -> float:
        return self.omega_q + self.g_eff_product / self.g12_eff


def net_coupling(model: CouplingModel, omega_c):
    omega_c = np.asarray(omega_c, dtype=float)
    detuning = model.omega_q - omega_c
    if np.any(np.abs(detuning) < 1e-12):
        raise SingularityError(f"coupler at {omega_c} GHz is resonant with the qubits")
    # one fraction, so the anchored model cancels exactly at its zero-coupling frequency
    out = (model.g_eff_product + model.g12_eff * detuning) / detuning
    return float(out) if out.ndim == 0 else out


def _net_coupling_derivative(model: CouplingModel, omega_c):
    return model.g_eff_product / (model.omega_q - omega_c) ** 2


def swap_rate(model: CouplingModel, fmap: FluxMap, phi_c):
    """Swap rate Omega(phi_c) = 2 g in MHz."""
    return 2e3 * net_coupling(model, coupler_frequency(fmap, phi_c))


def flux_sensitivity(model: CouplingModel, fmap: FluxMap, phi_c, step: float = 1e-5):
    """dOmega/dphi_c in MHz per milli-flux-quantum, by the fourth-order central
    difference (stencil +/-step, +/-2 step)."""
    phi_c = np.asarray(phi_c, dtype=float)
    lo, hi = fmap.window
    if np.any(phi_c - 2 * step < lo) or np.any(phi_c + 2 * step > hi):
        raise DomainError(f"sensitivity at {phi_c} needs +/-{2 * step} inside [{lo}, {hi}]")
    r = lambda k: swap_rate(model, fmap, phi_c + k * step)
    d = (8 * (r(1) - r(-1)) - (r(2) - r(-2))) / (12 * step)
    return d * 1e-3


def flux_sensitivity_analytic(model: CouplingModel, fmap: FluxMap, phi_c):
    wc = coupler_frequency(fmap, phi_c)
    return 2e3 * _net_coupling_derivative(model, wc) * fmap.derivative(phi_c) * 1e-3


@dataclass(frozen=True)
class Device:
    """Device parameters plus the calibrated maps that act on them."""

    params: DeviceParams = field(default_factory=DeviceParams)
    coupler_map: FluxMap | None = None
    q1_map: FluxMap | None = None
    coupling: CouplingModel | None = None
    omega_c_idle: float = 6.15

    def __post_init__(self):
        p = self.params
        if self.coupler_map is None:
            object.__setattr__(self, "coupler_map",
                               FluxMap.anchored(p.omegac_max, p.phic_idle, self.omega_c_idle))
        if self.q1_map is None:
            object.__setattr__(self, "q1_map",
                               FluxMap(kind="analytic", f_max=p.omega1_max, window=(-0.45, 0.45)))
        if self.coupling is None:
            object.__setattr__(self, "coupling",
                               CouplingModel.anchored(self.omega_c_idle, p.omega2, p.g12))

    def swap_rate(self, phi_c):
        return swap_rate(self.coupling, self.coupler_map, phi_c)

    def sensitivity(self, phi_c, step: float = 1e-5):
        return flux_sensitivity(self.coupling, self.coupler_map, phi_c, step)

    def omega_window(self) -> tuple[float, float]:
        lo, hi = self.coupler_map.window
        return lo, hi

    def bias_for_rate(self, omega_mhz: float) -> float:
        """Coupler flux giving swap rate ``omega_mhz`` on the monotone branch."""
        lo = max(self.coupler_map.window[0], self.coupler_map.offset)
        hi = self.coupler_map.window[1]
        f = lambda p: self.swap_rate(p) - omega_mhz
        if f(lo) * f(hi) > 0:
            raise DomainError(f"swap rate {omega_mhz} MHz not reachable in the window")
        return brentq(f, lo, hi, xtol=1e-15, rtol=1e-14)

    def bias_for_sensitivity(self, sens: float) -> float:
        """Coupler flux where |dOmega/dphi| equals ``sens`` (MHz/mPhi0)."""
        lo = max(self.coupler_map.window[0], self.coupler_map.offset) + 1e-4
        hi = self.coupler_map.window[1] - 1e-4
        f = lambda p: abs(flux_sensitivity_analytic(self.coupling, self.coupler_map, p)) - sens
        if f(lo) * f(hi) > 0:
            raise DomainError(f"sensitivity {sens} MHz/mPhi0 not reachable in the window")
        return brentq(f, lo, hi, xtol=1e-15, rtol=1e-14)

    def q1_bias_for_detuning(self, detuning_ghz: float = 0.0) -> float:
        """Q1 flux (positive branch) where omega_1 = omega_2 + detuning."""
        return self.q1_map.solve(self.params.omega2 + detuning_ghz, (0.0, self.q1_map.window[1]))

    def q1_sensitivity(self, detuning_ghz: float = 0.0) -> float:
        """|d omega_1 / d phi_1| in MHz per mPhi0 at the given detuning from Q2."""
        return abs(self.q1_map.derivative(self.q1_bias_for_detuning(detuning_ghz)))

    def anchor_report(self, tol_ghz: float = 1e-6) -> list[str]:
        """Warnings where the maps disagree with the configured anchors."""
        out = []
        wc_idle = float(self.coupler_map._raw(self.params.phic_idle))
        if abs(wc_idle - self.omega_c_idle) > tol_ghz:
            out.append(f"coupler map gives {wc_idle:.6f} GHz at phic_idle, anchor is "
                       f"{self.omega_c_idle} GHz; the map scale must be anchor-calibrated")
        w0 = float(self.coupler_map._raw(self.coupler_map.offset)) if self.coupler_map.kind == "analytic" else None
        if w0 is not None and abs(w0 - self.params.omegac_max) > tol_ghz:
            out.append(f"coupler map maximum {w0:.6f} GHz differs from omegac_max {self.params.omegac_max}")
        g_idle = net_coupling(self.coupling, self.omega_c_idle)
        if abs(g_idle) > tol_ghz:
            out.append(f"net coupling at the idle coupler frequency is {g_idle * 1e3:.4f} MHz, not 0; "
                       "the coupling product must be anchor-calibrated")
        return out


def omega_window_scan(device: Device, phis: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    phis = np.asarray(phis, dtype=float)
    return device.swap_rate(phis), device.sensitivity(phis)
