"""Stage-one channel sensing: probing codebooks, RSRP and the wireless prompt."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .beamcore import dft_codebook
from .numerics import RngStream, as_cvec
from .sitechannel import ArrayConfig


class ProbeKind(str, enum.Enum):
    dft_subset = "dft_subset"
    full_dft = "full_dft"


@dataclass(frozen=True)
class ProbingCodebook:
    beams: np.ndarray  # (M, N), unit-norm rows
    kind: ProbeKind
    indices: tuple[int, ...]

    @property
    def size(self) -> int:
        return self.beams.shape[0]


@dataclass
class WirelessPrompt:
    rsrp: np.ndarray  # (M,), max-normalized linear power
    noise_db: Optional[float] = None
    zero: bool = False

    @property
    def probe_count(self) -> int:
        return self.rsrp.size


def subset_indices(num_antennas: int, m: int) -> list[int]:
    # Python's round() is half-to-even; the rule here is half-up.
    return [int(np.floor(i * num_antennas / m + 0.5)) for i in range(m)]


def probing_codebook(array: ArrayConfig, m: int, kind="dft_subset") -> ProbingCodebook:
    kind = ProbeKind(kind)
    n = array.num_antennas
    if not 1 <= m <= n:
        raise ValueError(f"probe count M={m} outside [1, {n}]")
    if kind is ProbeKind.full_dft:
        if m != n:
            raise ValueError(f"full_dft requires M == N ({n}), got {m}")
        idx = list(range(n))
    else:
        idx = subset_indices(n, m)
    return ProbingCodebook(dft_codebook(n)[idx], kind, tuple(idx))


def raw_rsrp(codebook: ProbingCodebook, h: np.ndarray) -> np.ndarray:
    """|f_m^H h|^2 for one channel (N,) or a stack (S, N)."""
    return np.abs(np.asarray(h) @ codebook.beams.conj().T) ** 2


def _perturb(raw: np.ndarray, noise_db: float, rng: RngStream) -> np.ndarray:
    sigma = 10.0 ** (noise_db / 10.0) * raw.max(axis=-1, keepdims=True)
    return np.maximum(raw + sigma * rng.gen.standard_normal(raw.shape), 0.0)


def measure_rsrp(codebook: ProbingCodebook, h, noise_db: Optional[float] = None,
                 rng: Optional[RngStream] = None) -> WirelessPrompt:
    h = as_cvec(h)
    if h.size != codebook.beams.shape[1]:
        raise ValueError(f"channel length {h.size} != codebook width {codebook.beams.shape[1]}")
    raw = raw_rsrp(codebook, h)
    if noise_db is not None:
        if rng is None:
            raise ValueError("noisy measurement needs an rng")
        raw = _perturb(raw, noise_db, rng)
    peak = raw.max()
    if peak <= 0:
        return WirelessPrompt(np.zeros_like(raw), noise_db, zero=True)
    return WirelessPrompt(raw / peak, noise_db)


def prompts(codebook: ProbingCodebook, channels: np.ndarray, noise_db: Optional[float] = None,
            rng: Optional[RngStream] = None) -> np.ndarray:
    """Vectorized prompts for a stack of channels, shape (S, M). Zero rows stay zero."""
    raw = raw_rsrp(codebook, channels)
    if noise_db is not None:
        raw = _perturb(raw, noise_db, rng)
    peak = raw.max(axis=1, keepdims=True)
    return np.divide(raw, peak, out=np.zeros_like(raw), where=peak > 0)


def mask_prompt(prompt: np.ndarray, rng: RngStream) -> np.ndarray:
    """Zero one uniformly chosen probe entry (missing-report model)."""
    out = np.array(prompt, dtype=np.float64, copy=True)
    out[rng.gen.integers(out.size)] = 0.0
    return out
