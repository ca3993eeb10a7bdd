"""Comparison methods: MLP weight regression and exhaustive DFT sweeping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import neuralnet as nn
from .beamcore import best_codebook_beam, dft_codebook, mrt_beamformer
from .diffusion import TrainingDivergence, canonical_targets
from .numerics import RngStream, unstack_real
from .sensing import ProbingCodebook, prompts as make_prompts
from .sitechannel import ChannelDataset, SplitTag


class DegeneratePrediction(ValueError):
    pass


@dataclass
class RegressionConfig:
    hidden: int = 256
    depth: int = 3
    activation: str = "relu"
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10


@dataclass
class RegressionModel:
    net: nn.DenseNet
    num_antennas: int
    prompt_dim: int


def fit_regressor(x_train, y_train, x_val, y_val, cfg: RegressionConfig, rng: RngStream,
                  progress: Optional[Callable[[dict], None]] = None) -> RegressionModel:
    """MSE fit of prompts -> stacked targets; keeps the parameters with the best val loss."""
    x_train, y_train = np.asarray(x_train, float), np.asarray(y_train, float)
    x_val, y_val = np.asarray(x_val, float), np.asarray(y_val, float)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("regression needs non-empty train and val splits")
    m, d = x_train.shape[1], y_train.shape[1]
    net = nn.init_net([m] + [cfg.hidden] * cfg.depth + [d], cfg.activation, rng.child(0))
    opt = nn.Adam(lr=cfg.lr)
    params = net.params()
    shuffle = rng.child(1)

    def val_loss(n):
        r = nn.forward(n, x_val) - y_val
        return float(np.mean(r * r))

    best, best_net, stale = val_loss(net), net.copy(), 0
    for epoch in range(cfg.max_epochs):
        order = shuffle.gen.permutation(len(x_train))
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            out, cache = nn.forward_cached(net, x_train[idx])
            diff = out - y_train[idx]
            loss = float(np.mean(diff * diff))
            if not math.isfinite(loss):
                raise TrainingDivergence(f"non-finite regression loss in epoch {epoch}")
            grads, _ = nn.backward_cached(net, cache, 2.0 * diff / diff.size)
            opt.step(params, grads)
        v = val_loss(net)
        if progress:
            progress({"epoch": epoch, "val_loss": v})
        if v < best:
            best, best_net, stale = v, net.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return RegressionModel(best_net, d // 2, m)


def regression_loss_and_grads(model: RegressionModel, x, y) -> tuple[float, list[np.ndarray]]:
    """The regression objective and its exact parameter gradients (for checking)."""
    out, cache = nn.forward_cached(model.net, x)
    diff = out - y
    grads, _ = nn.backward_cached(model.net, cache, 2.0 * diff / diff.size)
    return float(np.mean(diff * diff)), grads


def train_regressor(dataset: ChannelDataset, codebook: ProbingCodebook, cfg: RegressionConfig,
                    rng: RngStream, progress=None) -> RegressionModel:
    h = dataset.channels()
    x = make_prompts(codebook, h)
    y = canonical_targets(h / np.linalg.norm(h, axis=1, keepdims=True))
    tr, va = dataset.indices(SplitTag.train), dataset.indices(SplitTag.val)
    if tr.size == 0 or va.size == 0:
        raise ValueError("dataset has an empty train or val split")
    return fit_regressor(x[tr], y[tr], x[va], y[va], cfg, rng, progress)


def raw_prediction(model: RegressionModel, prompts) -> np.ndarray:
    """Network output before projection, (B, 2N) or (2N,)."""
    return nn.forward(model.net, prompts)


def regress_beams(model: RegressionModel, prompts) -> np.ndarray:
    w = unstack_real(raw_prediction(model, np.atleast_2d(prompts)))
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegeneratePrediction("degenerate prediction: all-zero network output")
    return w / norms


def regress_beam(model: RegressionModel, prompt) -> np.ndarray:
    prompt = np.asarray(prompt, dtype=np.float64)
    if prompt.shape != (model.prompt_dim,):
        raise ValueError(f"prompt shape {prompt.shape} != ({model.prompt_dim},)")
    return regress_beams(model, prompt)[0]


def dft_sweep_beam(h, num_antennas: int) -> np.ndarray:
    return best_codebook_beam(dft_codebook(num_antennas), h)[1]


def dft_sweep_beams(channels: np.ndarray) -> np.ndarray:
    """Vectorized sweep for a stack of channels (S, N)."""
    cb = dft_codebook(channels.shape[1])
    return cb[np.argmax(np.abs(channels @ cb.conj().T), axis=1)]


def optimal_beams(channels: np.ndarray) -> np.ndarray:
    return np.stack([mrt_beamformer(h) for h in channels])
