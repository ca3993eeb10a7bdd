"""Synthetic fixtures shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from genssbf import baselines, diffusion
from genssbf.numerics import RngStream, stack_real, standard_complex_gaussian

SMALL_DIFFUSION = dict(T=100, hidden=128, depth=3, time_embed_dim=16, prompt_embed_dim=16,
                       batch_size=128, log_every=10_000)


def unit_target(rng: RngStream, n: int) -> np.ndarray:
    """A random unit vector in the 2N-real target space."""
    v = rng.gen.standard_normal(2 * n)
    return v / np.linalg.norm(v)


def two_mode_unconditional(n: int, count: int, seed: int):
    """Balanced targets {+u, -u}; returns (u, targets)."""
    u = unit_target(RngStream(seed), n)
    signs = np.where(np.arange(count) % 2 == 0, 1.0, -1.0)
    return u, signs[:, None] * u[None, :]


def separated_prompts(count: int, m: int) -> np.ndarray:
    """Max-normalized prompts spaced evenly along a path through adjacent one-hot corners."""
    t = np.linspace(0.0, float(m - 1), count)
    out = np.zeros((count, m))
    for i, ti in enumerate(t):
        j = min(int(ti), m - 2)
        f = ti - j
        out[i, j] = 1.0 if f <= 0.5 else 2.0 * (1.0 - f)
        out[i, j + 1] = 1.0 if f >= 0.5 else 2.0 * f
    return out


def two_mode_conditional(n: int, m: int, num_prompts: int, per_prompt: int, seed: int):
    """Each prompt maps to +u_i or -u_i with equal counts.

    Returns (prompts (P, M), modes (P, 2N), x (P*per, M), y (P*per, 2N)).
    """
    rng = RngStream(seed)
    prompts = separated_prompts(num_prompts, m)
    modes = np.stack([unit_target(rng.child(1 + i), n) for i in range(num_prompts)])
    idx = np.repeat(np.arange(num_prompts), per_prompt)
    signs = np.where(np.arange(idx.size) % 2 == 0, 1.0, -1.0)
    return prompts, modes, prompts[idx], signs[:, None] * modes[idx]


def single_mode_dataset(n: int, m: int, count: int, seed: int):
    """Random prompts that all map to one fixed canonical beam; returns (beam, h, x, y)."""
    rng = RngStream(seed)
    h = standard_complex_gaussian(rng.child(0), n)
    beam = h / np.linalg.norm(h)
    y = diffusion.canonicalize_phase(beam)
    x = rng.child(1).gen.uniform(0.0, 1.0, (count, m))
    x /= x.max(axis=1, keepdims=True)
    return beam, h, x, np.repeat(y[None, :], count, axis=0)


def signed_alignment(beams: np.ndarray, mode: np.ndarray) -> np.ndarray:
    """<stack(w), mode>^2 with the sign kept; ±mode are distinct in target coordinates."""
    s = np.stack([stack_real(w) for w in beams]) @ mode
    return np.sign(s) * s * s


def coverage(model, prompts, modes, k: int, trials_per_prompt: int, seed: int,
             threshold: float = 0.8) -> float:
    """Fraction of (prompt, trial) pairs whose K candidates reach both +mode and -mode."""
    hits, total = 0, 0
    root = RngStream(seed)
    for i, (p, u) in enumerate(zip(prompts, modes)):
        for j in range(trials_per_prompt):
            c = diffusion.generate_candidates(model, p, k, root.child(i).child(j))
            a = signed_alignment(c, u)
            hits += bool(a.max() >= threshold and (-a).max() >= threshold)
            total += 1
    return hits / total


def fit_small_regressor(x, y, seed: int) -> baselines.RegressionModel:
    cfg = baselines.RegressionConfig(hidden=64, depth=2, max_epochs=150, patience=10)
    return baselines.fit_regressor(x, y, x, y, cfg, RngStream(seed))
