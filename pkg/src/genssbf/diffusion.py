"""Conditional denoising diffusion over beamforming vectors.

A beamformer ``w`` (complex, unit norm) is gauge-fixed by rotating antenna 0
onto the positive real axis and stacked as ``y = [Re w, Im w]``. The model
learns ``p(y | prompt)`` with noise prediction: a dense denoiser receives the
noisy target, a sinusoidal embedding of the step and a learned embedding of the
RSRP prompt, and returns an estimate of the injected noise.

Internally targets are multiplied by ``target_scale`` (default ``sqrt(2N)``)
so each coordinate has roughly unit spread; sampling divides it back out before
the final unit-norm projection.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass
from typing import BinaryIO, Callable, Optional, Sequence

import numpy as np

from . import neuralnet as nn
from .beamcore import batch_gain
from .numerics import RngStream, stack_real, unstack_real


class TrainingDivergence(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar(self, t) -> np.ndarray:
        """alpha_bar at 1-based step(s) t."""
        return self.alpha_bars[np.asarray(t) - 1]


def linear_schedule(T: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return DiffusionSchedule(np.linspace(beta_start, beta_end, T))


def canonicalize_phase(w) -> np.ndarray:
    """Rotate w so entry 0 is real and non-negative, then stack to 2N reals."""
    w = np.asarray(w, dtype=np.complex128)
    if abs(w[0]) > 1e-6:
        w = w * np.exp(-1j * np.angle(w[0]))
    return stack_real(w)


def canonical_targets(w: np.ndarray) -> np.ndarray:
    """Row-wise :func:`canonicalize_phase` for a stack of beamformers (S, N) -> (S, 2N)."""
    w = np.asarray(w, dtype=np.complex128)
    mag = np.abs(w[:, :1])
    rot = np.where(mag > 1e-6, np.exp(-1j * np.angle(w[:, :1])), 1.0)
    return stack_real(w * rot)


def forward_noising(schedule: DiffusionSchedule, y0, t, eps) -> np.ndarray:
    """y_t = sqrt(alpha_bar_t) y0 + sqrt(1 - alpha_bar_t) eps, with 1-based t."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    ab = schedule.alpha_bar(t_arr)
    if np.ndim(ab):
        ab = ab[:, None]
    return np.sqrt(ab) * np.asarray(y0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def time_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of integer steps; shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.size, 1))], axis=1)
    return emb


@dataclass
class DiffusionModel:
    schedule: DiffusionSchedule
    denoiser: nn.DenseNet
    prompt_net: Optional[nn.DenseNet]
    num_antennas: int
    prompt_dim: int
    time_embed_dim: int
    prompt_embed_dim: int
    target_scale: float

    def __post_init__(self):
        expect = 2 * self.num_antennas + self.time_embed_dim + (
            self.prompt_embed_dim if self.prompt_dim else 0)
        if self.denoiser.in_dim != expect or self.denoiser.out_dim != 2 * self.num_antennas:
            raise ValueError("denoiser dimensions inconsistent with N and embedding sizes")
        if self.prompt_dim:
            if self.prompt_net is None or self.prompt_net.in_dim != self.prompt_dim \
                    or self.prompt_net.out_dim != self.prompt_embed_dim:
                raise ValueError("prompt embedding network dimensions inconsistent")
        elif self.prompt_net is not None:
            raise ValueError("unconditional model must not carry a prompt network")

    def params(self) -> list[np.ndarray]:
        return self.denoiser.params() + (self.prompt_net.params() if self.prompt_net else [])


@dataclass
class DiffusionConfig:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: int = 256
    depth: int = 4
    time_embed_dim: int = 32
    prompt_embed_dim: int = 32
    activation: str = "silu"
    lr: float = 1e-3
    lr_final: float = 1e-4
    batch_size: int = 128
    steps: int = 8000
    ema_decay: float = 0.999
    log_every: int = 200


def build_model(num_antennas: int, prompt_dim: int, cfg: DiffusionConfig, rng: RngStream,
                target_scale: Optional[float] = None) -> DiffusionModel:
    sched = linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    d = 2 * num_antennas
    pe = cfg.prompt_embed_dim if prompt_dim else 0
    prompt_net = None
    if prompt_dim:
        prompt_net = nn.init_net([prompt_dim, pe, pe], cfg.activation, rng.child(1))
    dims = [d + cfg.time_embed_dim + pe] + [cfg.hidden] * cfg.depth + [d]
    denoiser = nn.init_net(dims, cfg.activation, rng.child(0))
    scale = math.sqrt(d) if target_scale is None else float(target_scale)
    return DiffusionModel(sched, denoiser, prompt_net, num_antennas, prompt_dim,
                          cfg.time_embed_dim, cfg.prompt_embed_dim, scale)


def _denoiser_input(model: DiffusionModel, y_t, t, prompts):
    parts = [y_t, time_embedding(t, model.time_embed_dim)]
    cache = None
    if model.prompt_dim:
        pemb, cache = nn.forward_cached(model.prompt_net, prompts)
        parts.append(pemb)
    return np.concatenate(parts, axis=1), cache


def predict_noise(model: DiffusionModel, y_t: np.ndarray, t, prompts: Optional[np.ndarray]):
    """Batched noise estimate; ``t`` is an array of 1-based steps (B,)."""
    x, _ = _denoiser_input(model, y_t, t, prompts)
    return nn.forward(model.denoiser, x)


def _check_prompts(model: DiffusionModel, prompts, batch: int) -> Optional[np.ndarray]:
    if not model.prompt_dim:
        return None
    p = np.asarray(prompts, dtype=np.float64).reshape(batch, -1)
    if p.shape[1] != model.prompt_dim:
        raise ValueError(f"prompt dim {p.shape[1]} != model prompt dim {model.prompt_dim}")
    return p


def loss_and_grads(model: DiffusionModel, prompts, y0, t, eps) -> tuple[float, list[np.ndarray]]:
    """MSE between eps and the denoiser's estimate at (y_t, t, prompt), with exact gradients.

    ``y0`` is in the model's internal (scaled) coordinates.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    b = y0.shape[0]
    prompts = _check_prompts(model, prompts, b)
    y_t = forward_noising(model.schedule, y0, t, eps)
    x, pcache = _denoiser_input(model, y_t, t, prompts)
    out, cache = nn.forward_cached(model.denoiser, x)
    diff = out - eps
    loss = float(np.mean(diff * diff))
    g_out = 2.0 * diff / diff.size
    grads, g_in = nn.backward_cached(model.denoiser, cache, g_out)
    if model.prompt_dim:
        off = 2 * model.num_antennas + model.time_embed_dim
        pgrads, _ = nn.backward_cached(model.prompt_net, pcache, g_in[:, off:])
        grads = grads + pgrads
    return loss, grads


def draw_training_noise(model: DiffusionModel, batch: int, rng: RngStream):
    t = rng.gen.integers(1, model.schedule.T + 1, size=batch)
    eps = rng.gen.standard_normal((batch, 2 * model.num_antennas))
    return t, eps


def training_loss(model: DiffusionModel, prompts, y0, rng: RngStream):
    """Draw (t, eps) per item and return (loss, gradients aligned with ``model.params()``).

    ``y0`` holds unit-norm canonical targets; they are scaled internally.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.ndim != 2 or y0.shape[0] == 0:
        raise ValueError("training batch must be a non-empty (B, 2N) array")
    t, eps = draw_training_noise(model, y0.shape[0], rng)
    return loss_and_grads(model, prompts, model.target_scale * y0, t, eps)


def train(model: DiffusionModel, prompts: Optional[np.ndarray], targets: np.ndarray,
          cfg: DiffusionConfig, rng: RngStream,
          progress: Optional[Callable[[dict], None]] = None) -> list[float]:
    """Minibatch Adam on the noise-prediction loss; returns per-step losses.

    The learning rate decays geometrically from ``cfg.lr`` to ``cfg.lr_final``.
    On return the model holds an exponential moving average of the iterates
    (``cfg.ema_decay``; 0 keeps the raw final weights).
    """
    targets = np.asarray(targets, dtype=np.float64)
    n = targets.shape[0]
    if n == 0:
        raise ValueError("no training targets")
    scaled = model.target_scale * targets
    opt = nn.Adam(lr=cfg.lr)
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.steps - 1, 1))
    params = model.params()
    ema = [p.copy() for p in params]
    losses = []
    order = np.empty(0, dtype=np.int64)
    pos = 0
    start = time.perf_counter()
    for step in range(cfg.steps):
        if pos + cfg.batch_size > order.size:
            order = rng.gen.permutation(n) if n > cfg.batch_size else rng.gen.integers(
                0, n, size=max(cfg.batch_size, n))
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        t, eps = draw_training_noise(model, idx.size, rng)
        p = prompts[idx] if model.prompt_dim else None
        loss, grads = loss_and_grads(model, p, scaled[idx], t, eps)
        if not math.isfinite(loss):
            raise TrainingDivergence(f"non-finite diffusion loss at step {step}")
        opt.lr = cfg.lr * decay ** step
        opt.step(params, grads)
        for e, p in zip(ema, params):
            e *= cfg.ema_decay
            e += (1.0 - cfg.ema_decay) * p
        losses.append(loss)
        if progress and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            progress({"step": step, "loss": loss,
                      "wall_ms": round(1000 * (time.perf_counter() - start), 1)})
    if cfg.ema_decay > 0:
        for e, p in zip(ema, params):
            p[...] = e
    return losses


def sample_batch(model: DiffusionModel, prompts, streams: Sequence[RngStream]) -> np.ndarray:
    """Ancestral reverse pass for len(streams) chains; returns unit-norm beamformers (B, N).

    Each chain takes all of its Gaussian draws from its own stream, so a chain's
    result does not depend on which other chains share the batch.
    """
    b = len(streams)
    if b == 0:
        raise ValueError("need at least one stream")
    prompts = _check_prompts(model, prompts, b)
    T, d = model.schedule.T, 2 * model.num_antennas
    noise = np.stack([s.gen.standard_normal((T, d)) for s in streams], axis=1)
    betas, alphas, abars = model.schedule.betas, model.schedule.alphas, model.schedule.alpha_bars
    y = noise[0]
    for t in range(T, 0, -1):
        eps = predict_noise(model, y, np.full(b, t), prompts)
        mean = (y - betas[t - 1] / math.sqrt(1.0 - abars[t - 1]) * eps) / math.sqrt(alphas[t - 1])
        if t > 1:
            var = betas[t - 1] * (1.0 - abars[t - 2]) / (1.0 - abars[t - 1])
            y = mean + math.sqrt(var) * noise[T - t + 1]
        else:
            y = mean
        if not np.all(np.isfinite(y)):
            raise SamplingError(f"non-finite value in reverse pass at step t={t}")
    w = unstack_real(y / model.target_scale)
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise SamplingError("reverse pass produced a zero vector at step t=1")
    return w / norms


def sample(model: DiffusionModel, prompt, rng: RngStream) -> np.ndarray:
    p = None if not model.prompt_dim else np.asarray(prompt, dtype=np.float64)[None, :]
    return sample_batch(model, p, [rng])[0]


def generate_candidates(model: DiffusionModel, prompt, k: int, rng: RngStream) -> np.ndarray:
    """K draws; candidate i uses stream ``rng.child(i)``, so lists are prefix-nested in K."""
    if k < 1:
        raise ValueError("K must be >= 1")
    p = None
    if model.prompt_dim:
        p = np.repeat(np.asarray(prompt, dtype=np.float64)[None, :], k, axis=0)
    return sample_batch(model, p, [rng.child(i) for i in range(k)])


def select_best(candidates, h) -> tuple[int, np.ndarray, float]:
    """Stage-three feedback: the candidate with the highest gain on h (lowest index on ties)."""
    cands = np.atleast_2d(np.asarray(candidates, dtype=np.complex128))
    if cands.shape[0] == 0:
        raise ValueError("no candidates to select from")
    h = np.asarray(h, dtype=np.complex128)
    g = batch_gain(cands, np.broadcast_to(h, cands.shape))
    i = int(np.argmax(g))
    return i, cands[i], float(g[i])


# ---------------------------------------------------------------------------
# Checkpoint: b"GSDM", u16 version, u32 N, u32 M, u32 time dim, u32 prompt dim,
# f64 target scale, schedule block (u32 T, T x f64 betas), denoiser network
# block, u8 flag, optional prompt network block.

MAGIC = b"GSDM"
VERSION = 1


def write_model(fh: BinaryIO, model: DiffusionModel) -> None:
    fh.write(MAGIC + struct.pack("<HIIIId", VERSION, model.num_antennas, model.prompt_dim,
                                 model.time_embed_dim, model.prompt_embed_dim,
                                 model.target_scale))
    fh.write(struct.pack("<I", model.schedule.T))
    fh.write(np.ascontiguousarray(model.schedule.betas, dtype="<f8").tobytes())
    nn.write_net(fh, model.denoiser)
    fh.write(struct.pack("<B", model.prompt_net is not None))
    if model.prompt_net is not None:
        nn.write_net(fh, model.prompt_net)


def read_model(fh: BinaryIO) -> DiffusionModel:
    if fh.read(4) != MAGIC:
        raise nn.CheckpointError("invalid format: bad diffusion checkpoint magic")
    head = fh.read(26)
    if len(head) != 26:
        raise nn.CheckpointError("diffusion checkpoint truncated in header")
    version, n, m, te, pe, scale = struct.unpack("<HIIIId", head)
    if version != VERSION:
        raise nn.CheckpointError(f"unsupported diffusion checkpoint version {version}")
    (T,) = struct.unpack("<I", fh.read(4))
    raw = fh.read(8 * T)
    if len(raw) != 8 * T:
        raise nn.CheckpointError("diffusion checkpoint truncated in schedule block")
    sched = DiffusionSchedule(np.frombuffer(raw, "<f8").astype(np.float64))
    denoiser = nn.read_net(fh)
    flag = fh.read(1)
    prompt_net = nn.read_net(fh) if flag == b"\x01" else None
    return DiffusionModel(sched, denoiser, prompt_net, n, m, te, pe, scale)


def save_model(path, model: DiffusionModel) -> None:
    with open(path, "wb") as fh:
        write_model(fh, model)


def load_model(path) -> DiffusionModel:
    with open(path, "rb") as fh:
        return read_model(fh)


def progress_writer(fh) -> Callable[[dict], None]:
    """Line-delimited JSON progress records."""
    def emit(rec: dict) -> None:
        fh.write(json.dumps(rec) + "\n")
        fh.flush()
    return emit
