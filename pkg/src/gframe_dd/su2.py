"""Two-level propagators in the g-frame.

Basis ``e1 = (|10> + |01>)/sqrt2``, ``e2 = (|10> - |01>)/sqrt2``; the swap
coupling Omega drives sigma_z and the detuning Delta drives sigma_x, with
``H = pi (Omega sigma_z + Delta sigma_x)`` for rates in Hz.  In this basis
``|01> = (e1 - e2)/sqrt2`` is the -x eigenstate, so ``P01 = (1 - <sigma_x>)/2``.

SU(2) elements are stored as ``(a, b)`` with ``U = [[a, -b*], [b, a*]]``.
"""
from __future__ import annotations

import numpy as np

TWO_PI = 2 * np.pi
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
ID = np.eye(2, dtype=complex)

KET_01 = np.array([1, -1], dtype=complex) / np.sqrt(2)
KET_10 = np.array([1, 1], dtype=complex) / np.sqrt(2)


def step_ab(phi_z, phi_x):
    """(a, b) of exp(-i (phi_z sigma_z + phi_x sigma_x) / 2), elementwise."""
    phi_z = np.asarray(phi_z, dtype=float)
    phi_x = np.asarray(phi_x, dtype=float)
    theta = np.hypot(phi_z, phi_x)
    c = np.cos(0.5 * theta)
    # sin(theta/2)/theta, finite at theta = 0
    k = 0.5 * np.sinc(theta / TWO_PI)
    return c - 1j * k * phi_z, -1j * k * phi_x


def compose(a1, b1, a2, b2):
    """(a, b) of U1 @ U2 (U2 acts first)."""
    return a1 * a2 - np.conj(b1) * b2, b1 * a2 + np.conj(a1) * b2


def ab_to_matrix(a, b) -> np.ndarray:
    return np.array([[a, -np.conj(b)], [b, np.conj(a)]], dtype=complex)


def rotation(angle: float, axis: str) -> np.ndarray:
    """exp(-i angle sigma_axis / 2)."""
    s = {"x": SX, "y": SY, "z": SZ}[axis.lower()]
    return np.cos(angle / 2) * ID - 1j * np.sin(angle / 2) * s


def segments_unitary(segments) -> np.ndarray:
    """Propagator of piecewise-constant segments ``(duration_s, omega_mhz, delta_mhz)``."""
    a, b = 1.0 + 0j, 0j
    for dur, om, de in segments:
        a2, b2 = step_ab(TWO_PI * om * 1e6 * dur, TWO_PI * de * 1e6 * dur)
        a, b = compose(complex(a2), complex(b2), a, b)
    return ab_to_matrix(a, b)


def unitary_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Trace distance between the pure-state channels of u and v, ignoring global phase."""
    ov = abs(np.trace(u.conj().T @ v)) / 2
    return float(np.sqrt(max(0.0, 1.0 - min(1.0, ov) ** 2)))


def p01(psi: np.ndarray) -> np.ndarray:
    """Population of |01> for g-frame state vectors (last axis of length 2)."""
    amp = (psi[..., 0] - psi[..., 1]) / np.sqrt(2)
    return np.abs(amp) ** 2


def bloch(psi: np.ndarray) -> np.ndarray:
    """Bloch vector(s) (x, y, z) of g-frame state vectors; x is the Delta axis."""
    c1, c2 = psi[..., 0], psi[..., 1]
    rho01 = c1 * np.conj(c2)
    return np.stack([2 * rho01.real, -2 * rho01.imag, np.abs(c1) ** 2 - np.abs(c2) ** 2], axis=-1)
