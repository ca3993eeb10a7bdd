"""The case-study protocol: gain versus probing-beam count for every method.

For each probe count M the harness builds the probing codebook, trains one
diffusion model and one regressor on the train split, evaluates every method on
the test split and aggregates per-method gain statistics. Output layout under
``output_dir``::

    run_manifest.json                       resolved config, seed, code version
    gains.csv                               one GainRecord per (method, M)
    beampatterns/<scenario>_<M>.csv         beams for the first test sample
    checkpoints/<scenario>_<M>_<method>.bin trained networks
    logs/<scenario>_<M>_<method>.jsonl      training progress

Every stochastic step draws from a stream derived from (seed, purpose, M) and,
during evaluation, from the test-sample index and candidate index, so results
do not depend on how many worker threads run the probe counts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import baselines, diffusion
from . import neuralnet as nn
from ._io import atomic_write
from .beamcore import apply_phase_error, batch_gain, beampattern, mrt_beamformer
from .config import ExperimentConfig
from .numerics import RngStream, mix64
from .sensing import probing_codebook, prompts as make_prompts
from .sitechannel import ChannelDataset, SplitTag, default_scenario, generate_dataset

GAIN_HEADER = "scenario,method,M,K,mean_gain,std_gain,p5_gain,num_test_samples,seed"
BEAMPATTERN_POINTS = 721
PHASE_DEMO_SIGMAS = (0.0, 10.0, 30.0)
SAMPLING_CHUNK = 2048

# stream purposes
_DIFFUSION, _REGRESSION, _EVALUATION, _PHASE = 1, 2, 3, 4


class ExperimentAborted(RuntimeError):
    """A training run diverged; ``M`` and ``method`` name the offending task."""

    def __init__(self, message: str, M: int, method: str):
        super().__init__(message)
        self.M = M
        self.method = method


@dataclass(frozen=True)
class GainRecord:
    scenario: str
    method: str
    M: int
    K: int
    mean_gain: float
    std_gain: float
    p5_gain: float
    num_test_samples: int
    seed: int


@dataclass
class TrainedModels:
    M: int
    diffusion: Optional[diffusion.DiffusionModel] = None
    regressor: Optional[baselines.RegressionModel] = None


def stream(seed: int, purpose: int, m: int) -> RngStream:
    return RngStream(seed, mix64(purpose, m))


def worker_count() -> int:
    """Worker cap from GSBF_THREADS; defaults to the CPU count."""
    raw = os.environ.get("GSBF_THREADS")
    if raw is None or raw == "":
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"GSBF_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"GSBF_THREADS must be a positive integer, got {raw!r}")
    return n


def code_version() -> dict:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    digest = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        digest.update(p.name.encode())
        digest.update(p.read_bytes())
    return {"package_version": version, "source_sha256": digest.hexdigest()}


def write_manifest(cfg: ExperimentConfig, command: str, outputs: Sequence[str] = (),
                   status: str = "running") -> Path:
    path = Path(cfg.output_dir) / "run_manifest.json"
    doc = {"command": command, "status": status, "seed": cfg.seed, "config": cfg.to_dict(),
           "code_version": code_version(), "outputs": sorted(outputs)}
    with atomic_write(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


def build_dataset(cfg: ExperimentConfig) -> ChannelDataset:
    return generate_dataset(default_scenario(cfg.scenario_id), cfg.array, cfg.num_samples, cfg.seed)


def _artifact(cfg: ExperimentConfig, kind: str, m: int, method: str, ext: str) -> Path:
    return Path(cfg.output_dir) / kind / f"{cfg.scenario_id.name}_{m}_{method}.{ext}"


def _write_log(path: Path, records: list[dict]) -> None:
    with atomic_write(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def _targets(channels: np.ndarray) -> np.ndarray:
    return diffusion.canonical_targets(channels / np.linalg.norm(channels, axis=1, keepdims=True))


def train_models(cfg: ExperimentConfig, dataset: ChannelDataset, m: int, *, want_diffusion: bool,
                 want_regressor: bool, save: bool = True) -> TrainedModels:
    """Train the learned methods for probe count ``m`` on the train split."""
    h = dataset.channels()
    x = make_prompts(probing_codebook(cfg.array, m), h)
    y = _targets(h)
    tr, va = dataset.indices(SplitTag.train), dataset.indices(SplitTag.val)
    out = TrainedModels(m)
    if want_diffusion:
        rng = stream(cfg.seed, _DIFFUSION, m)
        log: list[dict] = []
        model = diffusion.build_model(cfg.array.num_antennas, m, cfg.diffusion, rng.child(0))
        try:
            diffusion.train(model, x[tr], y[tr], cfg.diffusion, rng.child(1), log.append)
        except diffusion.TrainingDivergence as err:
            raise ExperimentAborted(f"training diverged for M={m}, method=genssbf: {err}",
                                    m, "genssbf") from err
        out.diffusion = model
        if save:
            with atomic_write(_artifact(cfg, "checkpoints", m, "genssbf", "bin")) as fh:
                diffusion.write_model(fh, model)
            _write_log(_artifact(cfg, "logs", m, "genssbf", "jsonl"), log)
    if want_regressor:
        log = []
        try:
            reg = baselines.fit_regressor(x[tr], y[tr], x[va], y[va], cfg.regression,
                                          stream(cfg.seed, _REGRESSION, m), log.append)
        except diffusion.TrainingDivergence as err:
            raise ExperimentAborted(f"training diverged for M={m}, method=regression: {err}",
                                    m, "regression") from err
        out.regressor = reg
        if save:
            with atomic_write(_artifact(cfg, "checkpoints", m, "regression", "bin")) as fh:
                nn.write_net(fh, reg.net)
            _write_log(_artifact(cfg, "logs", m, "regression", "jsonl"), log)
    return out


def load_models(cfg: ExperimentConfig, m: int) -> TrainedModels:
    """Read checkpoints written by an earlier training run."""
    out = TrainedModels(m)
    if {"genssbf_multi", "genssbf_single"} & set(cfg.methods):
        out.diffusion = diffusion.load_model(_artifact(cfg, "checkpoints", m, "genssbf", "bin"))
    if "regression" in cfg.methods:
        net = nn.load_net(_artifact(cfg, "checkpoints", m, "regression", "bin"))
        out.regressor = baselines.RegressionModel(net, cfg.array.num_antennas, m)
    return out


def generate_for_test(model: diffusion.DiffusionModel, test_prompts: np.ndarray, k: int,
                      root: RngStream) -> np.ndarray:
    """K candidates per test prompt, shape (S, K, N); sample i, candidate j uses root.child(i).child(j)."""
    s = test_prompts.shape[0]
    streams = [root.child(i).child(j) for i in range(s) for j in range(k)]
    reps = np.repeat(test_prompts, k, axis=0)
    parts = [diffusion.sample_batch(model, reps[a:a + SAMPLING_CHUNK], streams[a:a + SAMPLING_CHUNK])
             for a in range(0, len(streams), SAMPLING_CHUNK)]
    return np.concatenate(parts).reshape(s, k, -1)


def clean_gains(g: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and snap values within 1e-12 of 1 (rounding residue of exact optima)."""
    g = np.clip(np.asarray(g, dtype=np.float64), 0.0, 1.0)
    g[g > 1.0 - 1e-12] = 1.0
    return g


def evaluate_methods(cfg: ExperimentConfig, dataset: ChannelDataset,
                     models: TrainedModels) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Per-method test gains, plus each method's beam for the first test sample."""
    m = models.M
    h = dataset.channels()
    te = dataset.indices(SplitTag.test)
    if te.size == 0:
        raise ValueError("dataset has an empty test split")
    ht = h[te]
    xt = make_prompts(probing_codebook(cfg.array, m), ht)
    gains: dict[str, np.ndarray] = {}
    first: dict[str, np.ndarray] = {}
    methods = set(cfg.methods)
    if "optimal" in methods:
        w = ht / np.linalg.norm(ht, axis=1, keepdims=True)
        gains["optimal"], first["optimal"] = batch_gain(w, ht), w[0]
    if methods & {"genssbf_multi", "genssbf_single"}:
        k = cfg.K if "genssbf_multi" in methods else 1
        cands = generate_for_test(models.diffusion, xt, k, stream(cfg.seed, _EVALUATION, m))
        per = np.stack([batch_gain(cands[:, j], ht) for j in range(k)], axis=1)
        if "genssbf_multi" in methods:
            best = np.argmax(per, axis=1)
            gains["genssbf_multi"] = per[np.arange(len(te)), best]
            first["genssbf_multi"] = cands[0, best[0]]
        if "genssbf_single" in methods:
            gains["genssbf_single"], first["genssbf_single"] = per[:, 0], cands[0, 0]
    if "regression" in methods:
        w = baselines.regress_beams(models.regressor, xt)
        gains["regression"], first["regression"] = batch_gain(w, ht), w[0]
    if "dft_sweep" in methods:
        w = baselines.dft_sweep_beams(ht)
        gains["dft_sweep"], first["dft_sweep"] = batch_gain(w, ht), w[0]
    return {k: clean_gains(v) for k, v in gains.items()}, first


def summarize(scenario: str, method: str, m: int, k: int, gains: np.ndarray, seed: int) -> GainRecord:
    return GainRecord(scenario, method, m, k, float(np.mean(gains)), float(np.std(gains)),
                      float(np.percentile(gains, 5)), int(gains.size), seed)


def method_k(method: str, k: int) -> int:
    """Candidates evaluated per prompt: K for generate-and-select, 1 for single-beam methods."""
    return k if method == "genssbf_multi" else 1


def _probe_task(cfg: ExperimentConfig, dataset: ChannelDataset, m: int):
    methods = set(cfg.methods)
    models = train_models(cfg, dataset, m,
                          want_diffusion=bool(methods & {"genssbf_multi", "genssbf_single"}),
                          want_regressor="regression" in methods)
    return evaluate_methods(cfg, dataset, models)


def run_experiment(cfg: ExperimentConfig, command: str = "evaluate",
                   progress: Optional[Callable[[str], None]] = None) -> list[GainRecord]:
    out = Path(cfg.output_dir)
    write_manifest(cfg, command)
    dataset = build_dataset(cfg)
    say = progress or (lambda s: None)
    say(f"dataset: {len(dataset)} samples, {dataset.indices(SplitTag.test).size} test")
    results = {}
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        futures = {m: pool.submit(_probe_task, cfg, dataset, m) for m in cfg.probe_counts}
        try:
            for m in cfg.probe_counts:
                results[m] = futures[m].result()
                say(f"M={m} done")
        except BaseException:
            for f in futures.values():
                f.cancel()
            raise
    name = cfg.scenario_id.name
    h0 = dataset.channels()[dataset.indices(SplitTag.test)[0]]
    records, outputs = [], ["run_manifest.json", "gains.csv"]
    for m in cfg.probe_counts:
        gains, first = results[m]
        for method in cfg.methods:
            records.append(summarize(name, method, m, method_k(method, cfg.K), gains[method], cfg.seed))
        rel = f"beampatterns/{name}_{m}.csv"
        export_beampatterns(h0, [(k, first[k]) for k in cfg.methods], out / rel,
                            element_spacing=cfg.array.element_spacing)
        outputs.append(rel)
        for method in ("genssbf", "regression"):
            for kind, ext in (("checkpoints", "bin"), ("logs", "jsonl")):
                p = _artifact(cfg, kind, m, method, ext)
                if p.exists():
                    outputs.append(str(p.relative_to(out)))
    export_gain_table(records, out / "gains.csv")
    write_manifest(cfg, command, outputs, status="complete")
    return records


# ---------------------------------------------------------------------------
# Tables and beampatterns


def _row(r: GainRecord) -> list[str]:
    return [r.scenario, r.method, str(r.M), str(r.K), f"{r.mean_gain:.6f}", f"{r.std_gain:.6f}",
            f"{r.p5_gain:.6f}", str(r.num_test_samples), str(r.seed)]


def export_gain_table(records: Iterable[GainRecord], path) -> None:
    records = sorted(records, key=lambda r: (r.scenario, r.method, r.M))
    if not records:
        raise ValueError("no gain records to export")
    for r in records:
        for name in ("mean_gain", "std_gain", "p5_gain"):
            v = getattr(r, name)
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1] for {r.method} at M={r.M}")
    try:
        with atomic_write(path, "w") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GAIN_HEADER.split(","))
            w.writerows(_row(r) for r in records)
    except OSError as err:
        raise OSError(f"cannot write gain table {path}: {err}") from err


def read_gain_table(path) -> list[GainRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [GainRecord(r["scenario"], r["method"], int(r["M"]), int(r["K"]), float(r["mean_gain"]),
                       float(r["std_gain"]), float(r["p5_gain"]), int(r["num_test_samples"]),
                       int(r["seed"])) for r in rows]


def export_beampatterns(h, beams: Sequence[tuple[str, np.ndarray]], path,
                        num_points: int = BEAMPATTERN_POINTS, element_spacing: float = 0.5) -> None:
    """CSV with an angle_deg column and one power column per named beam."""
    n = np.asarray(h).size
    cols = []
    for name, w in beams:
        w = np.asarray(w, dtype=np.complex128)
        if w.shape != (n,):
            raise ValueError(f"beam {name!r} has length {w.size}, channel has {n}")
        cols.append(beampattern(w, num_points, element_spacing).power)
    angles = np.degrees(np.linspace(-np.pi / 2, np.pi / 2, num_points))
    with atomic_write(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["angle_deg"] + [name for name, _ in beams])
        for i, a in enumerate(angles):
            w.writerow([f"{a:.6f}"] + [f"{c[i]:.9g}" for c in cols])


def read_beampatterns(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=np.float64)
    return {name: body[:, i] for i, name in enumerate(head)}


def phase_demo(h, path, rng: RngStream, sigmas: Sequence[float] = PHASE_DEMO_SIGMAS,
               element_spacing: float = 0.5) -> list[tuple[str, np.ndarray]]:
    """Beampatterns of the MRT beam for h under each phase-error level."""
    w = mrt_beamformer(h)
    beams = [("mrt", w)] + [(f"sigma_{s:g}", apply_phase_error(w, s, rng.child(i)))
                            for i, s in enumerate(sigmas)]
    export_beampatterns(h, beams, path, element_spacing=element_spacing)
    return beams


def first_test_channel(dataset: ChannelDataset) -> np.ndarray:
    te = dataset.indices(SplitTag.test)
    if te.size == 0:
        raise ValueError("dataset has an empty test split")
    return dataset.channels()[te[0]]


def write_beampatterns(cfg: ExperimentConfig, dataset: Optional[ChannelDataset] = None) -> list[str]:
    """Beampatterns for the first test sample from saved checkpoints, one CSV per M.

    Candidate draws use the same streams as :func:`evaluate_methods`, so the
    files match those written by a full run.
    """
    dataset = dataset or build_dataset(cfg)
    h0 = first_test_channel(dataset)
    written = []
    for m in cfg.probe_counts:
        models = load_models(cfg, m)
        x0 = make_prompts(probing_codebook(cfg.array, m), h0[None, :])
        beams = {"optimal": mrt_beamformer(h0), "dft_sweep": baselines.dft_sweep_beams(h0[None, :])[0]}
        if models.diffusion is not None:
            k = cfg.K if "genssbf_multi" in cfg.methods else 1
            cands = generate_for_test(models.diffusion, x0, k, stream(cfg.seed, _EVALUATION, m))[0]
            beams["genssbf_single"] = cands[0]
            beams["genssbf_multi"] = diffusion.select_best(cands, h0)[1]
        if models.regressor is not None:
            beams["regression"] = baselines.regress_beams(models.regressor, x0)[0]
        rel = f"beampatterns/{cfg.scenario_id.name}_{m}.csv"
        export_beampatterns(h0, [(k, beams[k]) for k in cfg.methods], Path(cfg.output_dir) / rel,
                            element_spacing=cfg.array.element_spacing)
        written.append(rel)
    return written


def run_phase_demo(cfg: ExperimentConfig, dataset: Optional[ChannelDataset] = None) -> str:
    """Phase-error beampatterns for the MRT beam of the first test sample."""
    dataset = dataset or build_dataset(cfg)
    rel = "phase_demo.csv"
    phase_demo(first_test_channel(dataset), Path(cfg.output_dir) / rel, stream(cfg.seed, _PHASE, 0),
               element_spacing=cfg.array.element_spacing)
    return rel


def train_all(cfg: ExperimentConfig, *, want_diffusion: bool, want_regressor: bool,
              command: str) -> list[str]:
    """Train and checkpoint the requested learned methods for every probe count."""
    out = Path(cfg.output_dir)
    write_manifest(cfg, command)
    dataset = build_dataset(cfg)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        futures = [pool.submit(train_models, cfg, dataset, m, want_diffusion=want_diffusion,
                               want_regressor=want_regressor) for m in cfg.probe_counts]
        for f in futures:
            f.result()
    methods = ["genssbf"] * want_diffusion + ["regression"] * want_regressor
    outputs = ["run_manifest.json"] + [
        str(_artifact(cfg, kind, m, method, ext).relative_to(out))
        for m in cfg.probe_counts for method in methods
        for kind, ext in (("checkpoints", "bin"), ("logs", "jsonl"))]
    write_manifest(cfg, command, outputs, status="complete")
    return outputs
