"""Beamformers, the normalized gain metric, DFT codebooks and beampatterns.

Beamformers are plain complex numpy vectors of unit l2 norm. Gain is always
reported relative to the perfect-CSI matched filter::

    G(w, h) = |w^H h|^2 / ||h||^2      with ||w|| = 1

so the matched filter scores exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, as_cvec, l2_norm
from .sitechannel import ArrayConfig, steering_matrix

_ZERO = 1e-300


def project_unit(w) -> np.ndarray:
    """Scale w to unit norm (the total-power feasibility projection)."""
    w = np.asarray(w, dtype=np.complex128)
    n = np.linalg.norm(w)
    if not n > 0 or not np.isfinite(n):
        raise ValueError("cannot project a zero or non-finite vector to unit norm")
    return w / n


def mrt_beamformer(h) -> np.ndarray:
    h = as_cvec(h)
    if l2_norm(h) <= _ZERO:
        raise ValueError("zero channel has no matched-filter beamformer")
    return h / l2_norm(h)


def normalized_gain(w, h) -> float:
    w = as_cvec(w)
    h = as_cvec(h)
    if w.shape != h.shape:
        raise ValueError(f"dimension mismatch: {w.size} vs {h.size}")
    hh = float(np.vdot(h, h).real)
    if hh <= _ZERO:
        raise ValueError("normalized gain undefined for a zero channel")
    return float(abs(np.vdot(w, h)) ** 2 / hh)


def batch_gain(w: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Row-wise normalized gain for stacks of beamformers and channels, shape (S,)."""
    hh = np.einsum("ij,ij->i", h.conj(), h).real
    if np.any(hh <= _ZERO):
        raise ValueError("normalized gain undefined for a zero channel")
    return np.abs(np.einsum("ij,ij->i", w.conj(), h)) ** 2 / hh


def dft_codebook(num_antennas: int) -> np.ndarray:
    """N x N matrix; row m is the beam exp(j 2 pi n m / N) / sqrt(N)."""
    if num_antennas < 2:
        raise ValueError("DFT codebook needs N >= 2")
    n = np.arange(num_antennas)
    return np.exp(2j * np.pi * np.outer(n, n) / num_antennas) / math.sqrt(num_antennas)


def dft_grid_sine(m: int, num_antennas: int, element_spacing: float = 0.5) -> float:
    """sin(theta) at which DFT row m is a matched steering beam, wrapped to [-1, 1)."""
    u = m / (num_antennas * element_spacing)
    period = 1.0 / element_spacing
    return (u + period / 2) % period - period / 2


def best_codebook_beam(codebook: np.ndarray, h) -> tuple[int, np.ndarray]:
    """Exhaustive sweep; the lowest index wins ties."""
    h = as_cvec(h)
    if l2_norm(h) <= _ZERO:
        raise ValueError("cannot select a beam for a zero channel")
    power = np.abs(codebook.conj() @ h) ** 2
    idx = int(np.argmax(power))
    return idx, codebook[idx]


@dataclass
class Beampattern:
    angles: np.ndarray  # radians
    power: np.ndarray


def beampattern(w, num_points: int, element_spacing: float = 0.5) -> Beampattern:
    """|a(angle)^H w|^2 / N on a uniform grid over [-pi/2, pi/2]."""
    if num_points < 2:
        raise ValueError("beampattern needs at least two angles")
    w = as_cvec(w)
    angles = np.linspace(-np.pi / 2, np.pi / 2, num_points)
    a = steering_matrix(ArrayConfig(w.size, element_spacing), angles)
    return Beampattern(angles, np.abs(a.conj() @ w) ** 2 / w.size)


def apply_phase_error(w, sigma_deg: float, rng: RngStream) -> np.ndarray:
    """Rotate each antenna weight by an independent N(0, sigma) phase."""
    if sigma_deg < 0:
        raise ValueError("sigma_deg must be >= 0")
    w = as_cvec(w)
    if sigma_deg == 0:
        return w.copy()
    delta = rng.gen.normal(0.0, math.radians(sigma_deg), w.size)
    return project_unit(w * np.exp(1j * delta))
